use std::collections::HashMap;

use super::{DiffError, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// A trainable tensor with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<F> {
    pub name: String,
    pub value: Tensor<F>,
    pub grad: Tensor<F>,
}

/// Named parameters in registration order. Names follow `<module>.<layer>.<tensor>`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<F> {
    params: Vec<Parameter<F>>,
    index: HashMap<String, usize>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn register(&mut self, name: &str, value: Tensor<F>) -> Result<ParamId, DiffError> {
        if self.index.contains_key(name) {
            return Err(DiffError::DuplicateParam(name.to_string()));
        }
        let id = self.params.len();
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad,
        });
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<F> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<F> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<F>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<F>> {
        self.params.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill_zero();
        }
    }

    /// Adds a gradient table (from one or more tapes) into the stored gradients.
    pub fn accumulate(&mut self, grads: &Gradients<F>) {
        for (p, g) in self.params.iter_mut().zip(&grads.tensors) {
            p.grad.add_assign(g);
        }
    }

    pub fn grads(&self) -> Gradients<F> {
        Gradients {
            tensors: self.params.iter().map(|p| p.grad.clone()).collect(),
        }
    }

    /// Same names and shapes, values converted to another precision.
    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        let mut out = ParamStore::new();
        for p in &self.params {
            out.register(&p.name, p.value.cast()).expect("names are unique");
        }
        out
    }
}

/// Gradient table aligned with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<F> {
    tensors: Vec<Tensor<F>>,
}

impl<F: Real> Gradients<F> {
    pub fn zeros_like(store: &ParamStore<F>) -> Self {
        Self {
            tensors: store
                .params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.tensors[id.0]
    }

    pub(crate) fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor<F>] {
        &self.tensors
    }

    pub fn add(&mut self, other: &Gradients<F>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, k: F) {
        for t in &mut self.tensors {
            t.scale(k);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.all_finite())
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors.iter().map(|t| t.sum_sq()).sum::<f64>().sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`; returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(F::lit(max_norm / norm));
        }
        norm
    }
}
