use rand::Rng;

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Dense per-parameter gradient accumulators.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradBuffer<T = f32> {
    grads: Vec<Vec<T>>,
}

impl<T: Real> GradBuffer<T> {
    pub fn get(&self, id: ParamId) -> &[T] {
        &self.grads[id.0]
    }

    pub(crate) fn add(&mut self, id: ParamId, g: &[T]) {
        for (d, &s) in self.grads[id.0].iter_mut().zip(g) {
            *d += s;
        }
    }

    /// Adds another buffer element-wise; used to merge per-worker gradients.
    pub fn merge(&mut self, other: &GradBuffer<T>) {
        for (d, s) in self.grads.iter_mut().zip(&other.grads) {
            for (x, &y) in d.iter_mut().zip(s) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, c: T) {
        self.grads.iter_mut().flatten().for_each(|x| *x *= c);
    }

    pub fn zero(&mut self) {
        self.grads.iter_mut().flatten().for_each(|x| *x = T::zero());
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(|x| x.is_finite())
    }

    pub fn l2_norm(&self) -> f64 {
        self.grads.iter().flatten().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt()
    }
}

/// Named parameter tensors with their gradient accumulators.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T = f32> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    grads: GradBuffer<T>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new(), grads: GradBuffer { grads: Vec::new() } }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.grads.grads.push(vec![T::zero(); value.len()]);
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Uniform init in `[-bound, bound]` with `bound = sqrt(6 / (fan_in + fan_out))`.
    pub fn add_xavier(&mut self, name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> ParamId {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| T::of(rng.random_range(-bound..bound))).collect();
        self.add(name, Tensor::new(vec![fan_in, fan_out], data).expect("shape"))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &[T] {
        self.grads.get(id)
    }

    pub fn grads(&self) -> &GradBuffer<T> {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut GradBuffer<T> {
        &mut self.grads
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.grads.zero();
    }

    pub fn new_grad_buffer(&self) -> GradBuffer<T> {
        GradBuffer { grads: self.values.iter().map(|v| vec![T::zero(); v.len()]).collect() }
    }

    /// Adds `buf` into the stored gradients.
    pub fn accumulate(&mut self, buf: &GradBuffer<T>) {
        self.grads.merge(buf);
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(|v| v.cast()).collect(),
            grads: GradBuffer { grads: self.values.iter().map(|v| vec![U::zero(); v.len()]).collect() },
        }
    }

    /// Replaces values from `(name, tensor)` pairs; names and shapes must match exactly.
    pub fn load(&mut self, entries: Vec<(String, Tensor<T>)>) -> Result<()> {
        if entries.len() != self.values.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                self.values.len(),
                entries.len()
            )));
        }
        for (i, (name, t)) in entries.into_iter().enumerate() {
            if name != self.names[i] || t.shape() != self.values[i].shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} mismatch: expected {} {:?}, found {} {:?}",
                    i,
                    self.names[i],
                    self.values[i].shape(),
                    name,
                    t.shape()
                )));
            }
            self.values[i] = t;
        }
        Ok(())
    }

    pub(crate) fn split_mut(&mut self) -> (&mut [Tensor<T>], &GradBuffer<T>) {
        (&mut self.values, &self.grads)
    }
}
