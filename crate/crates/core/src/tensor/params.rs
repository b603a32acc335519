//! Named parameters and the AdamW optimiser.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Result, Scalar, Tensor, TensorError};

#[derive(Clone, Debug, PartialEq)]
struct Entry<F: Scalar> {
    value: Tensor<F>,
    trainable: bool,
}

/// First/second moment estimates for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<F: Scalar> {
    pub m: Vec<F>,
    pub v: Vec<F>,
}

/// Map from dot-separated parameter path to tensor, plus optimiser state.
/// Iteration order is lexicographic by name.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore<F: Scalar = f32> {
    params: BTreeMap<String, Entry<F>>,
    moments: BTreeMap<String, Moments<F>>,
    step: u64,
}

impl<F: Scalar> Default for ParameterStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> ParameterStore<F> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
            moments: BTreeMap::new(),
            step: 0,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<F>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(TensorError::Invalid {
                op: "insert",
                msg: format!("duplicate parameter `{name}`"),
            });
        }
        self.params.insert(name, Entry { value, trainable: true });
        Ok(())
    }

    /// Insert or overwrite.
    pub fn set(&mut self, name: impl Into<String>, value: Tensor<F>) {
        let name = name.into();
        let trainable = self.params.get(&name).is_none_or(|e| e.trainable);
        self.params.insert(name, Entry { value, trainable });
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.params.get(name).map(|e| &e.value)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.params.get(name).is_some_and(|e| e.trainable)
    }

    /// Mark every parameter under `prefix` as frozen.
    pub fn freeze(&mut self, prefix: &str) {
        for (name, e) in self.params.iter_mut() {
            if name.starts_with(prefix) {
                e.trainable = false;
            }
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.params.iter().map(|(k, e)| (k.as_str(), &e.value))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|e| e.value.numel()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, name: &str) -> Option<&Moments<F>> {
        self.moments.get(name)
    }

    /// Copy every parameter of `other` under `prefix`, keeping its
    /// trainable flag.
    pub fn merge_prefixed(&mut self, prefix: &str, other: &ParameterStore<F>) {
        for (name, e) in &other.params {
            self.params.insert(format!("{prefix}{name}"), e.clone());
        }
    }

    /// Parameters under `prefix`, with the prefix stripped.
    pub fn extract_prefixed(&self, prefix: &str) -> ParameterStore<F> {
        let mut out = ParameterStore::new();
        for (name, e) in &self.params {
            if let Some(rest) = name.strip_prefix(prefix) {
                out.params.insert(rest.to_string(), e.clone());
            }
        }
        out
    }

    /// Same parameters in another precision; optimiser state is dropped.
    pub fn cast<G: Scalar>(&self) -> ParameterStore<G> {
        ParameterStore {
            params: self
                .params
                .iter()
                .map(|(k, e)| {
                    (
                        k.clone(),
                        Entry {
                            value: e.value.cast(),
                            trainable: e.trainable,
                        },
                    )
                })
                .collect(),
            moments: BTreeMap::new(),
            step: 0,
        }
    }

    /// Normal init with the given standard deviation.
    pub fn init_normal(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut impl Rng) -> Result<()> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                F::from_f64_lossy(z * std)
            })
            .collect();
        self.insert(name, Tensor::new(shape, data)?)
    }

    /// Weight matrix `[fan_in, fan_out]` with Xavier-uniform init.
    pub fn init_linear_weight(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Result<()> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| F::from_f64_lossy(rng.random_range(-bound..bound)))
            .collect();
        self.insert(name, Tensor::new(&[fan_in, fan_out], data)?)
    }

    pub fn init_const(&mut self, name: &str, shape: &[usize], value: f64) -> Result<()> {
        self.insert(name, Tensor::full(shape, F::from_f64_lossy(value)))
    }
}

/// Decoupled-weight-decay Adam.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamW {
    /// One update of every trainable parameter. `grads` must contain an
    /// entry for each trainable parameter; frozen parameters are skipped.
    pub fn step<F: Scalar>(
        &self,
        store: &mut ParameterStore<F>,
        grads: &BTreeMap<String, Tensor<F>>,
        lr: f64,
    ) -> Result<()> {
        for (name, e) in &store.params {
            if !e.trainable {
                continue;
            }
            match grads.get(name) {
                None => return Err(TensorError::MissingGrad(name.clone())),
                Some(g) if g.shape() != e.value.shape() => {
                    return Err(TensorError::Shape {
                        op: "adamw_step",
                        lhs: e.value.shape().to_vec(),
                        rhs: g.shape().to_vec(),
                    })
                }
                Some(_) => {}
            }
        }
        store.step += 1;
        let t = store.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (F::from_f64_lossy(self.beta1), F::from_f64_lossy(self.beta2));
        let (one_b1, one_b2) = (F::one() - b1, F::one() - b2);
        let step_size = F::from_f64_lossy(lr / bc1);
        let inv_bc2 = F::from_f64_lossy(1.0 / bc2);
        let eps = F::from_f64_lossy(self.eps);
        let decay = F::from_f64_lossy(1.0 - lr * self.weight_decay);
        for (name, e) in store.params.iter_mut() {
            if !e.trainable {
                continue;
            }
            let g = grads[name].data();
            let mom = store.moments.entry(name.clone()).or_insert_with(|| Moments {
                m: vec![F::zero(); g.len()],
                v: vec![F::zero(); g.len()],
            });
            for (((p, &gi), m), v) in e.value.data_mut().iter_mut().zip(g).zip(&mut mom.m).zip(&mut mom.v) {
                *m = b1 * *m + one_b1 * gi;
                *v = b2 * *v + one_b2 * gi * gi;
                let denom = (*v * inv_bc2).sqrt() + eps;
                *p = *p * decay - step_size * *m / denom;
            }
        }
        Ok(())
    }
}
