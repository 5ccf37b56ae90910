use std::collections::HashMap;

use rand::Rng;

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    /// Frozen parameters enter tapes as constants and are skipped by the optimizer.
    pub trainable: bool,
}

/// Named learnable tensors. Names are unique and determine checkpoint identity.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::contract("param", format!("duplicate parameter name {name:?}")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            value,
            grad: None,
            trainable: true,
        });
        Ok(id)
    }

    /// Zero-mean uniform init with the given half-width.
    pub fn uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        let value = Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..=bound)));
        self.insert(name, value)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for p in &mut self.params {
            if p.name.starts_with(prefix) {
                p.trainable = trainable;
            }
        }
    }

    /// Adds `grad` into the stored gradient of `id`.
    pub fn accumulate_grad(&mut self, id: ParamId, grad: &[T]) {
        let p = &mut self.params[id.0];
        match &mut p.grad {
            Some(g) => g
                .data_mut()
                .iter_mut()
                .zip(grad)
                .for_each(|(a, &b)| *a = *a + b),
            None => p.grad = Some(Tensor::from_parts(p.value.shape().to_vec(), grad.to_vec())),
        }
    }

    /// Global L2 norm over every populated gradient.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter_map(|p| p.grad.as_ref())
            .map(|g| g.norm_sq_f64())
            .sum::<f64>()
            .sqrt()
    }

    /// Replaces every value with the same-named tensor in `values`.
    pub fn load_values(&mut self, values: &[(String, Tensor<T>)]) -> Result<()> {
        let incoming: HashMap<&str, &Tensor<T>> =
            values.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let missing: Vec<&str> = self
            .names()
            .filter(|n| !incoming.contains_key(n))
            .collect();
        let unexpected: Vec<&str> = incoming
            .keys()
            .copied()
            .filter(|n| !self.by_name.contains_key(*n))
            .collect();
        if !missing.is_empty() || !unexpected.is_empty() {
            let mut unexpected = unexpected;
            unexpected.sort_unstable();
            return Err(Error::Checkpoint(format!(
                "architecture mismatch; missing: {missing:?}; unexpected: {unexpected:?}"
            )));
        }
        for p in &mut self.params {
            let t = incoming[p.name.as_str()];
            if t.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "{}: stored shape {:?} does not match model shape {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(())
    }
}
