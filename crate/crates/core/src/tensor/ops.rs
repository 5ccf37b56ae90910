//! Elementwise, shape, reduction and matrix operations on [`Var`].

use std::rc::Rc;

use super::{split_axis, strides_of, Real, Tensor, Var};
use crate::error::{Error, Result};

/// Numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every element of `out`, the linear index of the broadcast source
/// element in `input`. `None` when no broadcasting happens.
pub(crate) fn broadcast_map(out: &[usize], input: &[usize]) -> Option<Vec<usize>> {
    if out == input {
        return None;
    }
    let rank = out.len();
    let in_strides = strides_of(input);
    // stride of each output axis in the input buffer (0 for broadcast axes)
    let mut eff = vec![0usize; rank];
    for i in 0..rank {
        if i + input.len() >= rank {
            let j = i + input.len() - rank;
            if input[j] != 1 {
                eff[i] = in_strides[j];
            }
        }
    }
    let numel: usize = out.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..numel {
        map.push(offset);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            offset += eff[ax];
            if idx[ax] < out[ax] {
                break;
            }
            offset -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    Some(map)
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

impl Binary {
    fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        }
    }

    #[inline]
    fn apply<T: Real>(self, a: T, b: T) -> T {
        match self {
            Binary::Add => a + b,
            Binary::Sub => a - b,
            Binary::Mul => a * b,
            Binary::Div => a / b,
        }
    }

    /// (d out / d a, d out / d b)
    #[inline]
    fn partials<T: Real>(self, a: T, b: T) -> (T, T) {
        match self {
            Binary::Add => (T::one(), T::one()),
            Binary::Sub => (T::one(), -T::one()),
            Binary::Mul => (b, a),
            Binary::Div => (T::one() / b, -a / (b * b)),
        }
    }
}

/// Permutes `data` of `shape` so that output axis `k` is input axis `axes[k]`.
pub(crate) fn permute_data<T: Copy>(data: &[T], shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<T>) {
    let rank = shape.len();
    let in_strides = strides_of(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let eff: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    if rank == 0 {
        return (out_shape, data.to_vec());
    }
    // innermost output axis handled as a strided run
    let inner = out_shape[rank - 1];
    let inner_stride = eff[rank - 1];
    let outer: usize = out_shape[..rank - 1].iter().product();
    let mut idx = vec![0usize; rank - 1];
    let mut offset = 0usize;
    for _ in 0..outer {
        out.extend((0..inner).map(|i| data[offset + i * inner_stride]));
        for ax in (0..rank - 1).rev() {
            idx[ax] += 1;
            offset += eff[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    (out_shape, out)
}

impl<'t, T: Real> Var<'t, T> {
    fn binary(self, rhs: Var<'t, T>, kind: Binary) -> Result<Var<'t, T>> {
        let av = self.value();
        let bv = rhs.value();
        let out_shape = broadcast_shape(av.shape(), bv.shape())
            .ok_or_else(|| Error::shape(kind.name(), av.shape(), bv.shape()))?;
        let am = broadcast_map(&out_shape, av.shape());
        let bm = broadcast_map(&out_shape, bv.shape());
        let numel: usize = out_shape.iter().product();
        let (a, b) = (av.data(), bv.data());
        let data: Vec<T> = match (&am, &bm) {
            (None, None) => a.iter().zip(b).map(|(&x, &y)| kind.apply(x, y)).collect(),
            _ => (0..numel)
                .map(|i| {
                    let ia = am.as_ref().map_or(i, |m| m[i]);
                    let ib = bm.as_ref().map_or(i, |m| m[i]);
                    kind.apply(a[ia], b[ib])
                })
                .collect(),
        };
        let (ia_node, ib_node) = (self.index(), rhs.index());
        self.tape().op(
            kind.name(),
            &[self, rhs],
            Tensor::from_parts(out_shape, data),
            move |g, sink| {
                let (a, b) = (av.data(), bv.data());
                let idx = |m: &Option<Vec<usize>>, i: usize| m.as_ref().map_or(i, |m| m[i]);
                if sink.wants(ia_node) {
                    let ga = sink.slot(ia_node).expect("wanted");
                    for (i, &gi) in g.iter().enumerate() {
                        let (ja, jb) = (idx(&am, i), idx(&bm, i));
                        ga[ja] = ga[ja] + gi * kind.partials(a[ja], b[jb]).0;
                    }
                }
                if sink.wants(ib_node) {
                    let gb = sink.slot(ib_node).expect("wanted");
                    for (i, &gi) in g.iter().enumerate() {
                        let (ja, jb) = (idx(&am, i), idx(&bm, i));
                        gb[jb] = gb[jb] + gi * kind.partials(a[ja], b[jb]).1;
                    }
                }
            },
        )
    }

    pub fn add(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(rhs, Binary::Add)
    }

    pub fn sub(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(rhs, Binary::Sub)
    }

    pub fn mul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(rhs, Binary::Mul)
    }

    pub fn div(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(rhs, Binary::Div)
    }

    /// Elementwise map with derivative `df(x, y)` expressed through input and output.
    pub fn unary(
        self,
        name: &'static str,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + 'static,
    ) -> Result<Var<'t, T>> {
        let xv = self.value();
        let out = xv.map(f);
        let yv = Rc::new(out.clone());
        let id = self.index();
        self.tape().op(name, &[self], out, move |g, sink| {
            if let Some(gx) = sink.slot(id) {
                for (((gx, &gi), &x), &y) in gx.iter_mut().zip(g).zip(xv.data()).zip(yv.data()) {
                    *gx = *gx + gi * df(x, y);
                }
            }
        })
    }

    pub fn neg(self) -> Result<Var<'t, T>> {
        self.unary("neg", |x| -x, |_, _| -T::one())
    }

    pub fn scale(self, s: T) -> Result<Var<'t, T>> {
        self.unary("scale", move |x| x * s, move |_, _| s)
    }

    pub fn add_scalar(self, s: T) -> Result<Var<'t, T>> {
        self.unary("add_scalar", move |x| x + s, |_, _| T::one())
    }

    pub fn exp(self) -> Result<Var<'t, T>> {
        self.unary("exp", |x| x.exp(), |_, y| y)
    }

    pub fn ln(self) -> Result<Var<'t, T>> {
        self.unary("ln", |x| x.ln(), |x, _| T::one() / x)
    }

    pub fn sqrt(self) -> Result<Var<'t, T>> {
        self.unary("sqrt", |x| x.sqrt(), |_, y| T::of(0.5) / y)
    }

    pub fn square(self) -> Result<Var<'t, T>> {
        self.unary("square", |x| x * x, |x, _| x + x)
    }

    pub fn abs(self) -> Result<Var<'t, T>> {
        self.unary(
            "abs",
            |x| x.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn relu(self) -> Result<Var<'t, T>> {
        self.unary(
            "relu",
            |x| x.max(T::zero()),
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn sigmoid(self) -> Result<Var<'t, T>> {
        self.unary("sigmoid", sigmoid, |_, y| y * (T::one() - y))
    }

    pub fn silu(self) -> Result<Var<'t, T>> {
        self.unary(
            "silu",
            |x| x * sigmoid(x),
            |x, _| {
                let s = sigmoid(x);
                s + x * s * (T::one() - s)
            },
        )
    }

    pub fn tanh(self) -> Result<Var<'t, T>> {
        self.unary("tanh", |x| x.tanh(), |_, y| T::one() - y * y)
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(self) -> Result<Var<'t, T>> {
        let xv = self.value();
        let s: T = xv.data().iter().copied().sum();
        let id = self.index();
        self.tape().op("sum", &[self], Tensor::scalar(s), move |g, sink| {
            if let Some(gx) = sink.slot(id) {
                gx.iter_mut().for_each(|v| *v = *v + g[0]);
            }
        })
    }

    pub fn mean(self) -> Result<Var<'t, T>> {
        let n = T::of(self.numel() as f64);
        self.sum()?.scale(T::one() / n)
    }

    /// Sums over `axis`, removing it (a rank-1 input reduces to shape `[1]`).
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t, T>> {
        let xv = self.value();
        let shape = xv.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::contract("sum_axis", format!("axis {axis} out of range for {shape:?}")));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let mut out = vec![T::zero(); outer * inner];
        let x = xv.data();
        for o in 0..outer {
            for k in 0..n {
                let base = (o * n + k) * inner;
                for i in 0..inner {
                    out[o * inner + i] = out[o * inner + i] + x[base + i];
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let id = self.index();
        self.tape().op("sum_axis", &[self], Tensor::from_parts(out_shape, out), move |g, sink| {
            if let Some(gx) = sink.slot(id) {
                for o in 0..outer {
                    for k in 0..n {
                        let base = (o * n + k) * inner;
                        for i in 0..inner {
                            gx[base + i] = gx[base + i] + g[o * inner + i];
                        }
                    }
                }
            }
        })
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let xv = self.value();
        let numel: usize = shape.iter().product();
        if numel != xv.numel() {
            return Err(Error::shape("reshape", xv.shape(), shape));
        }
        let id = self.index();
        self.tape().op(
            "reshape",
            &[self],
            Tensor::from_parts(shape.to_vec(), xv.data().to_vec()),
            move |g, sink| {
                if let Some(gx) = sink.slot(id) {
                    gx.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b);
                }
            },
        )
    }

    /// Output axis `k` is input axis `axes[k]`.
    pub fn permute(self, axes: &[usize]) -> Result<Var<'t, T>> {
        let xv = self.value();
        let rank = xv.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::contract("permute", format!("{axes:?} is not a permutation of rank {rank}")));
        }
        let (out_shape, data) = permute_data(xv.data(), xv.shape(), axes);
        let mut inverse = vec![0; rank];
        for (k, &a) in axes.iter().enumerate() {
            inverse[a] = k;
        }
        let id = self.index();
        let out_shape_bw = out_shape.clone();
        self.tape().op("permute", &[self], Tensor::from_parts(out_shape, data), move |g, sink| {
            if let Some(gx) = sink.slot(id) {
                let (_, back) = permute_data(g, &out_shape_bw, &inverse);
                gx.iter_mut().zip(back).for_each(|(a, b)| *a = *a + b);
            }
        })
    }

    /// Swaps the two trailing axes.
    pub fn transpose(self) -> Result<Var<'t, T>> {
        let rank = self.value().rank();
        if rank < 2 {
            return Err(Error::contract("transpose", "needs rank >= 2"));
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 2, rank - 1);
        self.permute(&axes)
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let xv = self.value();
        let shape = xv.shape().to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::contract(
                "narrow",
                format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let x = xv.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&x[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let id = self.index();
        self.tape().op("narrow", &[self], Tensor::from_parts(out_shape, out), move |g, sink| {
            if let Some(gx) = sink.slot(id) {
                for o in 0..outer {
                    let base = (o * n + start) * inner;
                    let src = &g[o * len * inner..(o + 1) * len * inner];
                    gx[base..base + len * inner]
                        .iter_mut()
                        .zip(src)
                        .for_each(|(a, &b)| *a = *a + b);
                }
            }
        })
    }

    /// Matrix product over the two trailing axes with broadcast batch axes.
    pub fn matmul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        let av = self.value();
        let bv = rhs.value();
        let (ash, bsh) = (av.shape().to_vec(), bv.shape().to_vec());
        if ash.len() < 2 || bsh.len() < 2 || ash[ash.len() - 1] != bsh[bsh.len() - 2] {
            return Err(Error::shape("matmul", &ash, &bsh));
        }
        let (m, k) = (ash[ash.len() - 2], ash[ash.len() - 1]);
        let n = bsh[bsh.len() - 1];
        let (abatch, bbatch) = (&ash[..ash.len() - 2], &bsh[..bsh.len() - 2]);
        let batch = broadcast_shape(abatch, bbatch).ok_or_else(|| Error::shape("matmul", &ash, &bsh))?;
        let nb: usize = batch.iter().product();
        let amap = broadcast_map(&batch, abatch);
        let bmap = broadcast_map(&batch, bbatch);
        // rhs shared by every batch: fold the batch into the row dimension
        let fold = bbatch.iter().product::<usize>() == 1 && amap.is_none();
        let mut out = vec![T::zero(); nb * m * n];
        if fold {
            T::gemm(nb * m, k, n, av.data(), (k as isize, 1), bv.data(), (n as isize, 1), &mut out, false);
        } else {
            for bi in 0..nb {
                let ia = amap.as_ref().map_or(bi, |mp| mp[bi]);
                let ib = bmap.as_ref().map_or(bi, |mp| mp[bi]);
                T::gemm(
                    m,
                    k,
                    n,
                    &av.data()[ia * m * k..],
                    (k as isize, 1),
                    &bv.data()[ib * k * n..],
                    (n as isize, 1),
                    &mut out[bi * m * n..],
                    false,
                );
            }
        }
        let mut out_shape = batch;
        out_shape.extend([m, n]);
        let (ida, idb) = (self.index(), rhs.index());
        self.tape().op("matmul", &[self, rhs], Tensor::from_parts(out_shape, out), move |g, sink| {
            let (a, b) = (av.data(), bv.data());
            if let Some(ga) = sink.slot(ida) {
                // dA = dC * B^T
                if fold {
                    T::gemm(nb * m, n, k, g, (n as isize, 1), b, (1, n as isize), ga, true);
                } else {
                    for bi in 0..nb {
                        let ia = amap.as_ref().map_or(bi, |mp| mp[bi]);
                        let ib = bmap.as_ref().map_or(bi, |mp| mp[bi]);
                        T::gemm(
                            m,
                            n,
                            k,
                            &g[bi * m * n..],
                            (n as isize, 1),
                            &b[ib * k * n..],
                            (1, n as isize),
                            &mut ga[ia * m * k..],
                            true,
                        );
                    }
                }
            }
            if let Some(gb) = sink.slot(idb) {
                // dB = A^T * dC
                if fold {
                    T::gemm(k, nb * m, n, a, (1, k as isize), g, (n as isize, 1), gb, true);
                } else {
                    for bi in 0..nb {
                        let ia = amap.as_ref().map_or(bi, |mp| mp[bi]);
                        let ib = bmap.as_ref().map_or(bi, |mp| mp[bi]);
                        T::gemm(
                            k,
                            m,
                            n,
                            &a[ia * m * k..],
                            (1, k as isize),
                            &g[bi * m * n..],
                            (n as isize, 1),
                            &mut gb[ib * k * n..],
                            true,
                        );
                    }
                }
            }
        })
    }
}

/// Concatenates along `axis`; all other extents must agree.
pub fn concat<'t, T: Real>(vars: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
    let first = vars
        .first()
        .ok_or_else(|| Error::contract("concat", "no inputs"))?;
    let values: Vec<Rc<Tensor<T>>> = vars.iter().map(|v| v.value()).collect();
    let base = values[0].shape().to_vec();
    if axis >= base.len() {
        return Err(Error::contract("concat", format!("axis {axis} out of range for {base:?}")));
    }
    for v in &values[1..] {
        let s = v.shape();
        if s.len() != base.len() || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b) {
            return Err(Error::shape("concat", &base, s));
        }
    }
    let (outer, _, inner) = split_axis(&base, axis);
    let lens: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
    let total: usize = lens.iter().sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (v, &len) in values.iter().zip(&lens) {
            out.extend_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
        }
    }
    let mut out_shape = base;
    out_shape[axis] = total;
    let ids: Vec<usize> = vars.iter().map(|v| v.index()).collect();
    first.tape().op("concat", vars, Tensor::from_parts(out_shape, out), move |g, sink| {
        let mut offset = 0;
        for (&id, &len) in ids.iter().zip(&lens) {
            if let Some(gx) = sink.slot(id) {
                for o in 0..outer {
                    let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                    gx[o * len * inner..(o + 1) * len * inner]
                        .iter_mut()
                        .zip(src)
                        .for_each(|(a, &b)| *a = *a + b);
                }
            }
            offset += len;
        }
    })
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
