use serde::{Deserialize, Serialize};

/// Handle to a trainable parameter in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

/// Owns every trainable value together with its gradient accumulator.
///
/// Parameters touched by a backward pass are remembered until
/// [`ParamStore::zero_grad`], so optimizers can update sparsely.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    touched: Vec<bool>,
    touched_list: Vec<ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Vec<f64>) -> ParamId {
        let id = ParamId(self.params.len());
        let grad = vec![0.0; value.len()];
        self.params.push(Param { name: name.into(), value, grad });
        self.touched.push(false);
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].grad
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: &[f64]) {
        let p = &mut self.params[id.0];
        for (acc, x) in p.grad.iter_mut().zip(g) {
            *acc += x;
        }
        if !self.touched[id.0] {
            self.touched[id.0] = true;
            self.touched_list.push(id);
        }
    }

    /// Parameters that received gradient since the last zeroing, in first
    /// touch order.
    pub fn touched(&self) -> &[ParamId] {
        &self.touched_list
    }

    pub fn zero_grad(&mut self) {
        for id in self.touched_list.drain(..) {
            self.params[id.0].grad.iter_mut().for_each(|g| *g = 0.0);
            self.touched[id.0] = false;
        }
    }

    pub fn all_grads_zero(&self) -> bool {
        self.params.iter().all(|p| p.grad.iter().all(|&g| g == 0.0))
    }

    /// Split mutable access to a value and read access to its gradient.
    pub fn value_and_grad_mut(&mut self, id: ParamId) -> (&mut [f64], &[f64]) {
        let p = &mut self.params[id.0];
        (&mut p.value, &p.grad)
    }
}
