use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use super::{ParamId, ParamStore, Real, Tensor};
use crate::error::{Error, Result};

/// Vector-Jacobian product of one recorded operation. Receives the gradient of
/// the operation's output and adds the input gradients into the sink.
pub type BackwardFn<T> = Box<dyn Fn(&[T], &mut GradSink<'_, T>)>;

struct Node<T> {
    value: Rc<Tensor<T>>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

/// Ordered record of executed operations. Nodes are appended in execution
/// order, so the record is already topologically sorted.
pub struct Tape<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
    params: RefCell<HashMap<ParamId, usize>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tape({} nodes)", self.len())
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Real> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Real> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Write access to input gradients during the reverse sweep.
pub struct GradSink<'a, T> {
    grads: &'a mut [Option<Vec<T>>],
    meta: &'a [(bool, usize)],
}

impl<T: Real> GradSink<'_, T> {
    /// Gradient buffer of node `index`, or `None` when that node does not
    /// need a gradient.
    pub fn slot(&mut self, index: usize) -> Option<&mut [T]> {
        let (requires, numel) = self.meta[index];
        if !requires {
            return None;
        }
        Some(
            self.grads[index]
                .get_or_insert_with(|| vec![T::zero(); numel])
                .as_mut_slice(),
        )
    }

    pub fn wants(&self, index: usize) -> bool {
        self.meta[index].0
    }
}

/// Result of a reverse sweep, indexed by tape node.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
    params: Vec<(ParamId, usize)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to a leaf (inputs, parameters). Intermediate
    /// gradients are released during the sweep.
    pub fn get(&self, var: Var<'_, T>) -> Option<Tensor<T>> {
        self.grads[var.id]
            .as_ref()
            .map(|g| Tensor::from_parts(self.shapes[var.id].clone(), g.clone()))
    }

    /// Gradient of `var`, or zeros when nothing reached it.
    pub fn wrt(&self, var: Var<'_, T>) -> Tensor<T> {
        self.get(var)
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.id]))
    }

    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|&(_, node)| self.grads[node].as_deref())
    }

    /// Adds every parameter gradient into the store. Repeated calls accumulate.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) {
        for &(id, node) in &self.params {
            if let Some(g) = &self.grads[node] {
                store.accumulate_grad(id, g);
            }
        }
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_node(&self, value: Tensor<T>, requires_grad: bool, backward: Option<BackwardFn<T>>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            requires_grad,
            backward,
        });
        nodes.len() - 1
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        let id = self.push_node(value, false, None);
        Var { tape: self, id }
    }

    /// A differentiable input that is not backed by a parameter store.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        let id = self.push_node(value, true, None);
        Var { tape: self, id }
    }

    /// Leaf node for a stored parameter. Repeated calls return the same node.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var<'_, T> {
        if let Some(&node) = self.params.borrow().get(&id) {
            return Var { tape: self, id: node };
        }
        let p = store.get(id);
        let node = self.push_node(p.value.clone(), p.trainable, None);
        self.params.borrow_mut().insert(id, node);
        Var { tape: self, id: node }
    }

    /// Records an operation. `backward` is dropped when no input needs a
    /// gradient. Fails when the output holds NaN or infinity.
    pub fn op(
        &self,
        name: &'static str,
        inputs: &[Var<'_, T>],
        value: Tensor<T>,
        backward: impl Fn(&[T], &mut GradSink<'_, T>) + 'static,
    ) -> Result<Var<'_, T>> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| nodes[v.id].requires_grad)
        };
        let backward: Option<BackwardFn<T>> = if requires {
            Some(Box::new(backward))
        } else {
            None
        };
        let id = self.push_node(value, requires, backward);
        Ok(Var { tape: self, id })
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Tensor<T>> {
        self.nodes.borrow()[id].value.clone()
    }

    fn requires_grad_of(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse sweep from a scalar loss. Every node is visited at most once,
    /// in reverse execution order.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.numel() != 1 {
            return Err(Error::contract(
                "backward",
                format!("loss must be scalar, got shape {:?}", nodes[loss.id].value.shape()),
            ));
        }
        let meta: Vec<(bool, usize)> = nodes
            .iter()
            .map(|n| (n.requires_grad, n.value.numel()))
            .collect();
        let mut grads: Vec<Option<Vec<T>>> = vec![None; nodes.len()];
        if nodes[loss.id].requires_grad {
            grads[loss.id] = Some(vec![T::one()]);
        }
        for id in (0..=loss.id).rev() {
            let Some(bw) = &nodes[id].backward else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let mut sink = GradSink {
                grads: &mut grads,
                meta: &meta,
            };
            bw(&g, &mut sink);
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let params = self
            .params
            .borrow()
            .iter()
            .map(|(&p, &n)| (p, n))
            .collect();
        Ok(Gradients {
            grads,
            shapes,
            params,
        })
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    /// Node index, used by custom operations to address [`GradSink::slot`].
    pub fn index(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.value().numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad_of(self.id)
    }

    /// Scalar value of a single-element variable.
    pub fn item(&self) -> T {
        self.value().item()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_leaf_has_unit_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64(&[3], &[1.0, -2.0, 5.0]).unwrap());
        let loss = x.sum().unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_gradient_is_twice_input() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let loss = x.mul(x).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).item(), 6.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(x), Err(Error::Contract { .. })));
    }

    #[test]
    fn param_gradients_accumulate_across_backward_calls() {
        let mut store = ParamStore::<f64>::new();
        let id = store.insert("w", Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap()).unwrap();
        for _ in 0..2 {
            let tape = Tape::new();
            let w = tape.param(&store, id);
            let loss = w.sum().unwrap();
            tape.backward(loss).unwrap().accumulate_into(&mut store);
        }
        assert_eq!(store.get(id).grad.as_ref().unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn frozen_param_receives_no_gradient() {
        let mut store = ParamStore::<f64>::new();
        let id = store.insert("w", Tensor::ones(&[2])).unwrap();
        store.get_mut(id).trainable = false;
        let tape = Tape::new();
        let w = tape.param(&store, id);
        let x = tape.leaf(Tensor::ones(&[2]));
        let loss = w.mul(x).unwrap().sum().unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.param(id).is_none());
        assert!(g.get(x).is_some());
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(-1.0));
        assert!(matches!(x.sqrt(), Err(Error::NonFinite { .. })));
    }
}
