//! Normalization, convolution and sampling operations.

use super::{split_axis, Real, Tensor, Var};
use crate::error::{Error, Result};

/// Coordinates this close outside the sampling domain are clamped onto it,
/// so warps that are the identity up to rounding stay fully valid.
pub const SAMPLE_EDGE_TOLERANCE: f64 = 1e-5;

impl<'t, T: Real> Var<'t, T> {
    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(self, axis: usize) -> Result<Var<'t, T>> {
        let xv = self.value();
        if axis >= xv.rank() {
            return Err(Error::contract("softmax", format!("axis {axis} out of range for {:?}", xv.shape())));
        }
        let (outer, n, inner) = split_axis(xv.shape(), axis);
        let x = xv.data();
        let mut y = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let max = (0..n).map(|k| x[at(k)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for k in 0..n {
                    let e = (x[at(k)] - max).exp();
                    y[at(k)] = e;
                    total = total + e;
                }
                for k in 0..n {
                    y[at(k)] = y[at(k)] / total;
                }
            }
        }
        let out = Tensor::from_parts(xv.shape().to_vec(), y);
        let yv = std::rc::Rc::new(out.clone());
        let id = self.index();
        self.tape().op("softmax", &[self], out, move |g, sink| {
            if let Some(gx) = sink.slot(id) {
                let y = yv.data();
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * n + k) * inner + i;
                        let dot: T = (0..n).map(|k| g[at(k)] * y[at(k)]).sum();
                        for k in 0..n {
                            gx[at(k)] = gx[at(k)] + y[at(k)] * (g[at(k)] - dot);
                        }
                    }
                }
            }
        })
    }

    /// Layer normalization over the trailing axis with affine `gamma`, `beta`.
    pub fn layer_norm(self, gamma: Var<'t, T>, beta: Var<'t, T>, eps: T) -> Result<Var<'t, T>> {
        let xv = self.value();
        let (gv, bv) = (gamma.value(), beta.value());
        let c = *xv.shape().last().expect("rank >= 1");
        if gv.shape() != [c] || bv.shape() != [c] {
            return Err(Error::shape("layer_norm", xv.shape(), gv.shape()));
        }
        let rows = xv.numel() / c;
        let x = xv.data();
        let mut xhat = vec![T::zero(); x.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut y = vec![T::zero(); x.len()];
        let cn = T::of(c as f64);
        for r in 0..rows {
            let row = &x[r * c..(r + 1) * c];
            let mean = row.iter().copied().sum::<T>() / cn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / cn;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[r * c + j] = h;
                y[r * c + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let (ix, ig, ib) = (self.index(), gamma.index(), beta.index());
        self.tape().op(
            "layer_norm",
            &[self, gamma, beta],
            Tensor::from_parts(xv.shape().to_vec(), y),
            move |g, sink| {
                let gam = gv.data();
                if let Some(gg) = sink.slot(ig) {
                    for r in 0..rows {
                        for j in 0..c {
                            gg[j] = gg[j] + g[r * c + j] * xhat[r * c + j];
                        }
                    }
                }
                if let Some(gb) = sink.slot(ib) {
                    for r in 0..rows {
                        for j in 0..c {
                            gb[j] = gb[j] + g[r * c + j];
                        }
                    }
                }
                if let Some(gx) = sink.slot(ix) {
                    for r in 0..rows {
                        let (gr, hr) = (&g[r * c..(r + 1) * c], &xhat[r * c..(r + 1) * c]);
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for j in 0..c {
                            let d = gr[j] * gam[j];
                            m1 = m1 + d;
                            m2 = m2 + d * hr[j];
                        }
                        m1 = m1 / cn;
                        m2 = m2 / cn;
                        for j in 0..c {
                            let d = gr[j] * gam[j];
                            gx[r * c + j] = gx[r * c + j] + rstd[r] * (d - m1 - hr[j] * m2);
                        }
                    }
                }
            },
        )
    }

    /// Divides each trailing-axis vector by its L2 norm (floored at `eps`).
    pub fn l2_normalize(self, eps: T) -> Result<Var<'t, T>> {
        let xv = self.value();
        let c = *xv.shape().last().expect("rank >= 1");
        let rows = xv.numel() / c;
        let x = xv.data();
        let mut norms = vec![T::zero(); rows];
        let mut y = vec![T::zero(); x.len()];
        for r in 0..rows {
            let row = &x[r * c..(r + 1) * c];
            let n = row.iter().map(|&v| v * v).sum::<T>().sqrt().max(eps);
            norms[r] = n;
            for j in 0..c {
                y[r * c + j] = row[j] / n;
            }
        }
        let out = Tensor::from_parts(xv.shape().to_vec(), y);
        let yv = std::rc::Rc::new(out.clone());
        let id = self.index();
        self.tape().op("l2_normalize", &[self], out, move |g, sink| {
            if let Some(gx) = sink.slot(id) {
                let y = yv.data();
                for r in 0..rows {
                    let n = norms[r];
                    let (gr, yr) = (&g[r * c..(r + 1) * c], &y[r * c..(r + 1) * c]);
                    // below the floor the map is linear: y = x / eps
                    let dot = if n > eps { (0..c).map(|j| gr[j] * yr[j]).sum() } else { T::zero() };
                    for j in 0..c {
                        gx[r * c + j] = gx[r * c + j] + (gr[j] - yr[j] * dot) / n;
                    }
                }
            }
        })
    }

    /// 2-D convolution over `[N,H,W,Cin]` (or `[H,W,Cin]`) with weight
    /// `[kh,kw,Cin,Cout]`, symmetric zero padding and an optional bias.
    pub fn conv2d(
        self,
        weight: Var<'t, T>,
        bias: Option<Var<'t, T>>,
        stride: usize,
        padding: usize,
    ) -> Result<Var<'t, T>> {
        let xv = self.value();
        let wv = weight.value();
        let xs = xv.shape().to_vec();
        let batched = xs.len() == 4;
        let (n, h, w, cin) = match xs.as_slice() {
            &[n, h, w, c] => (n, h, w, c),
            &[h, w, c] => (1, h, w, c),
            _ => return Err(Error::contract("conv2d", format!("input must be rank 3 or 4, got {xs:?}"))),
        };
        let (kh, kw, wcin, cout) = match wv.shape() {
            &[a, b, c, d] => (a, b, c, d),
            other => return Err(Error::shape("conv2d", &xs, other)),
        };
        if wcin != cin || stride == 0 || h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::shape("conv2d", &xs, wv.shape()));
        }
        if let Some(b) = bias {
            if b.shape() != [cout] {
                return Err(Error::shape("conv2d", wv.shape(), &b.shape()));
            }
        }
        let ho = (h + 2 * padding - kh) / stride + 1;
        let wo = (w + 2 * padding - kw) / stride + 1;
        let kdim = kh * kw * cin;
        let rows = n * ho * wo;
        let geom = ConvGeom { n, h, w, cin, kh, kw, stride, padding, ho, wo };
        let cols = geom.im2col(xv.data());
        let mut out = vec![T::zero(); rows * cout];
        T::gemm(rows, kdim, cout, &cols, (kdim as isize, 1), wv.data(), (cout as isize, 1), &mut out, false);
        if let Some(b) = bias {
            let bv = b.value();
            for r in 0..rows {
                for (o, &bb) in out[r * cout..(r + 1) * cout].iter_mut().zip(bv.data()) {
                    *o = *o + bb;
                }
            }
        }
        let out_shape = if batched { vec![n, ho, wo, cout] } else { vec![ho, wo, cout] };
        let (ix, iw) = (self.index(), weight.index());
        let ib = bias.map(|b| b.index());
        let mut inputs = vec![self, weight];
        inputs.extend(bias);
        self.tape().op("conv2d", &inputs, Tensor::from_parts(out_shape, out), move |g, sink| {
            if let Some(gw) = sink.slot(iw) {
                T::gemm(kdim, rows, cout, &cols, (1, kdim as isize), g, (cout as isize, 1), gw, true);
            }
            if let Some(ib) = ib {
                if let Some(gb) = sink.slot(ib) {
                    for r in 0..rows {
                        for (b, &gg) in gb.iter_mut().zip(&g[r * cout..(r + 1) * cout]) {
                            *b = *b + gg;
                        }
                    }
                }
            }
            if sink.wants(ix) {
                let mut dcols = vec![T::zero(); rows * kdim];
                T::gemm(rows, cout, kdim, g, (cout as isize, 1), wv.data(), (1, cout as isize), &mut dcols, false);
                let gx = sink.slot(ix).expect("wanted");
                geom.col2im(&dcols, gx);
            }
        })
    }

    /// Nearest-neighbour 2x upsampling of `[N,H,W,C]` or `[H,W,C]`.
    pub fn upsample2x(self) -> Result<Var<'t, T>> {
        let xv = self.value();
        let xs = xv.shape().to_vec();
        let (n, h, w, c) = match xs.as_slice() {
            &[n, h, w, c] => (n, h, w, c),
            &[h, w, c] => (1, h, w, c),
            _ => return Err(Error::contract("upsample2x", format!("input must be rank 3 or 4, got {xs:?}"))),
        };
        let x = xv.data();
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); n * h2 * w2 * c];
        for b in 0..n {
            for y in 0..h2 {
                for xx in 0..w2 {
                    let src = ((b * h + y / 2) * w + xx / 2) * c;
                    let dst = ((b * h2 + y) * w2 + xx) * c;
                    out[dst..dst + c].copy_from_slice(&x[src..src + c]);
                }
            }
        }
        let out_shape = if xs.len() == 4 { vec![n, h2, w2, c] } else { vec![h2, w2, c] };
        let id = self.index();
        self.tape().op("upsample2x", &[self], Tensor::from_parts(out_shape, out), move |g, sink| {
            if let Some(gx) = sink.slot(id) {
                for b in 0..n {
                    for y in 0..h2 {
                        for xx in 0..w2 {
                            let src = ((b * h + y / 2) * w + xx / 2) * c;
                            let dst = ((b * h2 + y) * w2 + xx) * c;
                            for k in 0..c {
                                gx[src + k] = gx[src + k] + g[dst + k];
                            }
                        }
                    }
                }
            }
        })
    }

    /// Bilinear lookup into a `[h,w,c]` map at continuous pixel coordinates
    /// `[..,2]` given as (x, y) with (0, 0) the centre of the top-left pixel.
    ///
    /// Returns the samples `[..,c]` and a validity mask `[..]`. Samples whose
    /// four neighbours are not all inside the map are zero with mask 0.
    pub fn bilinear_sample(self, coords: Var<'t, T>) -> Result<(Var<'t, T>, Tensor<T>)> {
        let mv = self.value();
        let cv = coords.value();
        let (h, w, c) = match mv.shape() {
            &[h, w, c] => (h, w, c),
            other => return Err(Error::contract("bilinear_sample", format!("map must be [h,w,c], got {other:?}"))),
        };
        let cs = cv.shape().to_vec();
        if cs.last() != Some(&2) {
            return Err(Error::shape("bilinear_sample", mv.shape(), &cs));
        }
        let npts = cv.numel() / 2;
        let taps: Vec<Option<Taps<T>>> = cv
            .data()
            .chunks_exact(2)
            .map(|p| Taps::new(p[0], p[1], w, h))
            .collect();
        let map = mv.data();
        let mut out = vec![T::zero(); npts * c];
        let mut mask = vec![T::zero(); npts];
        for (i, tap) in taps.iter().enumerate() {
            if let Some(t) = tap {
                mask[i] = T::one();
                for k in 0..c {
                    out[i * c + k] = t.blend(map, c, k);
                }
            }
        }
        let mut out_shape = cs[..cs.len() - 1].to_vec();
        let mask_shape = if out_shape.is_empty() { vec![1] } else { out_shape.clone() };
        out_shape.push(c);
        let (im, ic) = (self.index(), coords.index());
        let var = self.tape().op(
            "bilinear_sample",
            &[self, coords],
            Tensor::from_parts(out_shape, out),
            move |g, sink| {
                if let Some(gm) = sink.slot(im) {
                    for (i, tap) in taps.iter().enumerate() {
                        if let Some(t) = tap {
                            for k in 0..c {
                                t.scatter(gm, c, k, g[i * c + k]);
                            }
                        }
                    }
                }
                if let Some(gc) = sink.slot(ic) {
                    let map = mv.data();
                    for (i, tap) in taps.iter().enumerate() {
                        if let Some(t) = tap {
                            let (mut dx, mut dy) = (T::zero(), T::zero());
                            for k in 0..c {
                                let (sx, sy) = t.slopes(map, c, k);
                                dx = dx + g[i * c + k] * sx;
                                dy = dy + g[i * c + k] * sy;
                            }
                            gc[2 * i] = gc[2 * i] + dx;
                            gc[2 * i + 1] = gc[2 * i + 1] + dy;
                        }
                    }
                }
            },
        )?;
        Ok((var, Tensor::from_parts(mask_shape, mask)))
    }
}

/// Four-neighbour stencil of one bilinear sample.
#[derive(Clone, Copy)]
struct Taps<T> {
    i00: usize,
    i01: usize,
    i10: usize,
    i11: usize,
    fx: T,
    fy: T,
}

impl<T: Real> Taps<T> {
    fn new(x: T, y: T, w: usize, h: usize) -> Option<Self> {
        let (xs, x1d) = Self::axis(x, w)?;
        let (ys, y1d) = Self::axis(y, h)?;
        let (x0, fx) = xs;
        let (y0, fy) = ys;
        let x1 = x0 + x1d;
        let y1 = y0 + y1d;
        Some(Taps {
            i00: y0 * w + x0,
            i01: y0 * w + x1,
            i10: y1 * w + x0,
            i11: y1 * w + x1,
            fx,
            fy,
        })
    }

    /// Returns ((lower index, fraction), step to the upper index).
    fn axis(v: T, extent: usize) -> Option<((usize, T), usize)> {
        let tol = T::of(SAMPLE_EDGE_TOLERANCE);
        let hi = T::of((extent - 1) as f64);
        if !(v >= -tol && v <= hi + tol) {
            return None;
        }
        let v = v.max(T::zero()).min(hi);
        if extent == 1 {
            return Some(((0, T::zero()), 0));
        }
        let i0 = v.floor().to_usize().unwrap_or(0).min(extent - 2);
        Some(((i0, v - T::of(i0 as f64)), 1))
    }

    #[inline]
    fn blend(&self, map: &[T], c: usize, k: usize) -> T {
        let (fx, fy) = (self.fx, self.fy);
        let one = T::one();
        (one - fx) * (one - fy) * map[self.i00 * c + k]
            + fx * (one - fy) * map[self.i01 * c + k]
            + (one - fx) * fy * map[self.i10 * c + k]
            + fx * fy * map[self.i11 * c + k]
    }

    #[inline]
    fn scatter(&self, gm: &mut [T], c: usize, k: usize, g: T) {
        let (fx, fy) = (self.fx, self.fy);
        let one = T::one();
        gm[self.i00 * c + k] = gm[self.i00 * c + k] + g * (one - fx) * (one - fy);
        gm[self.i01 * c + k] = gm[self.i01 * c + k] + g * fx * (one - fy);
        gm[self.i10 * c + k] = gm[self.i10 * c + k] + g * (one - fx) * fy;
        gm[self.i11 * c + k] = gm[self.i11 * c + k] + g * fx * fy;
    }

    /// Partial derivatives of the blend with respect to x and y.
    #[inline]
    fn slopes(&self, map: &[T], c: usize, k: usize) -> (T, T) {
        let (fx, fy) = (self.fx, self.fy);
        let one = T::one();
        let (v00, v01, v10, v11) = (
            map[self.i00 * c + k],
            map[self.i01 * c + k],
            map[self.i10 * c + k],
            map[self.i11 * c + k],
        );
        if self.i01 == self.i00 && self.i10 == self.i00 {
            return (T::zero(), T::zero());
        }
        let sx = if self.i01 == self.i00 { T::zero() } else { (one - fy) * (v01 - v00) + fy * (v11 - v10) };
        let sy = if self.i10 == self.i00 { T::zero() } else { (one - fx) * (v10 - v00) + fx * (v11 - v01) };
        (sx, sy)
    }
}

#[derive(Clone, Copy)]
struct ConvGeom {
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    /// Input pixel feeding output (oy, ox) through kernel tap (ky, kx).
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ky).checked_sub(self.padding)?;
        let x = (ox * self.stride + kx).checked_sub(self.padding)?;
        (y < self.h && x < self.w).then_some((y, x))
    }

    fn im2col<T: Real>(&self, x: &[T]) -> Vec<T> {
        let kdim = self.kh * self.kw * self.cin;
        let mut cols = vec![T::zero(); self.n * self.ho * self.wo * kdim];
        for b in 0..self.n {
            for oy in 0..self.ho {
                for ox in 0..self.wo {
                    let row = ((b * self.ho + oy) * self.wo + ox) * kdim;
                    for ky in 0..self.kh {
                        for kx in 0..self.kw {
                            if let Some((y, xx)) = self.source(oy, ox, ky, kx) {
                                let src = ((b * self.h + y) * self.w + xx) * self.cin;
                                let dst = row + (ky * self.kw + kx) * self.cin;
                                cols[dst..dst + self.cin].copy_from_slice(&x[src..src + self.cin]);
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im<T: Real>(&self, cols: &[T], gx: &mut [T]) {
        let kdim = self.kh * self.kw * self.cin;
        for b in 0..self.n {
            for oy in 0..self.ho {
                for ox in 0..self.wo {
                    let row = ((b * self.ho + oy) * self.wo + ox) * kdim;
                    for ky in 0..self.kh {
                        for kx in 0..self.kw {
                            if let Some((y, xx)) = self.source(oy, ox, ky, kx) {
                                let dst = ((b * self.h + y) * self.w + xx) * self.cin;
                                let src = row + (ky * self.kw + kx) * self.cin;
                                for k in 0..self.cin {
                                    gx[dst + k] = gx[dst + k] + cols[src + k];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use crate::tensor::{Tape, Tensor};

    #[test]
    fn softmax_closed_form_values() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[4]));
        let y = x.softmax(0).unwrap().value();
        assert!(y.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let x = tape.constant(Tensor::from_f64(&[2], &[0.0, 3f64.ln()]).unwrap());
        let y = x.softmax(0).unwrap().value();
        assert!((y.data()[0] - 0.25).abs() < 1e-12 && (y.data()[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let tape = Tape::<f64>::new();
        let base = [0.3, -1.2, 2.5, 0.0];
        let a = tape.constant(Tensor::from_f64(&[4], &base).unwrap()).softmax(0).unwrap().value();
        let shifted: Vec<f64> = base.iter().map(|v| v + 37.0).collect();
        let b = tape.constant(Tensor::from_f64(&[4], &shifted).unwrap()).softmax(0).unwrap().value();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn layer_norm_degenerate_and_normalized_inputs() {
        let tape = Tape::<f64>::new();
        let gamma = tape.constant(Tensor::ones(&[2]));
        let zero = tape.constant(Tensor::zeros(&[2]));
        let five = tape.constant(Tensor::full(&[2], 5.0));
        let constant = tape.constant(Tensor::full(&[2], 3.0));
        let y = constant.layer_norm(gamma, zero, 1e-5).unwrap().value();
        assert_eq!(y.data(), &[0.0, 0.0]);
        let y = constant.layer_norm(gamma, five, 1e-5).unwrap().value();
        assert_eq!(y.data(), &[5.0, 5.0]);
        let x = tape.constant(Tensor::from_f64(&[2], &[-1.0, 1.0]).unwrap());
        let y = x.layer_norm(gamma, zero, 1e-12).unwrap().value();
        assert!((y.data()[0] + 1.0).abs() < 1e-9 && (y.data()[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn bilinear_lattice_midpoint_and_outside() {
        let tape = Tape::<f64>::new();
        // 4 rows x 5 cols, single channel; value = 10 * (col + 1) + 100 * row
        let map = tape.constant(Tensor::from_fn(&[4, 5, 1], |i| (10 * (i % 5 + 1) + 100 * (i / 5)) as f64));
        let coords = tape.constant(Tensor::from_f64(&[3, 2], &[2.0, 3.0, 0.5, 0.0, -1.0, -1.0]).unwrap());
        let (v, mask) = map.bilinear_sample(coords).unwrap();
        let v = v.value();
        assert_eq!(v.data()[0], map.value().data()[3 * 5 + 2]);
        assert_eq!(v.data()[1], 15.0);
        assert_eq!(v.data()[2], 0.0);
        assert_eq!(mask.data(), &[1.0, 1.0, 0.0]);
    }

    #[test]
    fn bilinear_accepts_far_edge() {
        let tape = Tape::<f64>::new();
        let map = tape.constant(Tensor::from_fn(&[2, 3, 1], |i| i as f64));
        let coords = tape.constant(Tensor::from_f64(&[1, 2], &[2.0, 1.0]).unwrap());
        let (v, mask) = map.bilinear_sample(coords).unwrap();
        assert_eq!(v.value().data(), &[5.0]);
        assert_eq!(mask.data(), &[1.0]);
    }

    #[test]
    fn conv_identity_kernel_copies_input() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn(&[4, 4, 2], |i| i as f64));
        let mut w = Tensor::<f64>::zeros(&[3, 3, 2, 2]);
        // centre tap, identity over channels
        w.data_mut()[(4 * 2) * 2] = 1.0;
        w.data_mut()[(4 * 2 + 1) * 2 + 1] = 1.0;
        let w = tape.constant(w);
        let y = x.conv2d(w, None, 1, 1).unwrap();
        assert_eq!(y.value().data(), x.value().data());
        let y2 = x.conv2d(w, None, 2, 1).unwrap();
        assert_eq!(y2.shape(), vec![2, 2, 2]);
    }
}
