use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::Gradients;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable tensor with its Adam moment accumulators.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
    first_moment: Tensor,
    second_moment: Tensor,
    step: u64,
}

impl Parameter {
    fn new(name: String, value: Tensor) -> Self {
        let zeros = Tensor::zeros(value.shape());
        Self {
            name,
            value,
            grad: None,
            first_moment: zeros.clone(),
            second_moment: zeros,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&Tensor, &Tensor) {
        (&self.first_moment, &self.second_moment)
    }
}

/// Weight initialisation scheme.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    GlorotUniform,
    Zeros,
}

/// Owns every parameter of a model. Graphs borrow it read-only, so several
/// graphs may share one store across threads.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Parameter::new(name.into(), value));
        ParamId(self.params.len() - 1)
    }

    /// Adds an `[fan_in, fan_out]` weight (or a `[1, n]` bias) drawn per `init`.
    pub fn add_init<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        init: Init,
        rng: &mut R,
    ) -> ParamId {
        let value = match init {
            Init::Zeros => Tensor::zeros(shape),
            Init::GlorotUniform => {
                let fan_out = *shape.last().unwrap();
                let fan_in = shape.iter().product::<usize>() / fan_out;
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let n = shape.iter().product();
                let data = (0..n).map(|_| rng.gen_range(-limit..=limit)).collect();
                Tensor::from_parts(shape.to_vec(), data)
            }
        };
        self.add(name, value)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
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

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of scalar weights.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Adds the parameter gradients of one backward pass into the stored grads.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in grads.params() {
            let p = &mut self.params[id.0];
            match &mut p.grad {
                Some(acc) => acc.add_assign(g),
                None => p.grad = Some(g.clone()),
            }
        }
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for g in self.params.iter_mut().filter_map(|p| p.grad.as_mut()) {
            for x in g.data_mut() {
                *x *= factor;
            }
        }
    }

    /// Snapshot of `(name, value)` pairs, used for checkpoints.
    pub fn export(&self) -> Vec<(String, Tensor)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect()
    }

    /// Overwrites values by name. Every stored parameter must be present with
    /// a matching shape.
    pub fn import(&mut self, values: &[(String, Tensor)]) -> Result<()> {
        for p in &mut self.params {
            let (_, v) = values.iter().find(|(n, _)| *n == p.name).ok_or_else(|| {
                Error::Format {
                    entry: p.name.clone(),
                    reason: "missing from checkpoint".into(),
                }
            })?;
            if v.shape() != p.value.shape() {
                return Err(Error::Dimension {
                    op: "import",
                    left: p.value.shape().to_vec(),
                    right: v.shape().to_vec(),
                });
            }
            p.value = v.clone();
        }
        Ok(())
    }
}

/// Adam with bias-corrected moments.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    /// Applies one update to every parameter holding a gradient. Parameters
    /// without a gradient are left untouched, step count included.
    pub fn step(&self, store: &mut ParamStore) {
        for p in &mut store.params {
            let Some(grad) = p.grad.as_ref() else {
                continue;
            };
            p.step += 1;
            let bc1 = 1.0 - self.beta1.powi(p.step as i32);
            let bc2 = 1.0 - self.beta2.powi(p.step as i32);
            let m = p.first_moment.data_mut();
            let v = p.second_moment.data_mut();
            let w = p.value.data_mut();
            for i in 0..w.len() {
                let g = grad.data()[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                w[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
