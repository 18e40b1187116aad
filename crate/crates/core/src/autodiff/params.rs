//! Named parameter store with seeded initialization and a JSON payload
//! format that round-trips f64 values bit-exactly.

use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Weights are initialized uniformly in `(-INIT_SCALE, INIT_SCALE)`.
pub const INIT_SCALE: f64 = 0.08;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

/// All model parameters, iterated in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params {
    items: Vec<Param>,
    index: BTreeMap<String, usize>,
}

impl Params {
    pub fn new() -> Params {
        Params::default()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], values: Vec<f64>) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::validation(format!("duplicate parameter '{name}'")));
        }
        let len: usize = shape.iter().product();
        if len != values.len() {
            return Err(Error::shape(
                "param",
                format!("{name}: shape {shape:?} vs {} values", values.len()),
            ));
        }
        self.index.insert(name.to_string(), self.items.len());
        self.items.push(Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            grad: vec![0.0; values.len()],
            values,
        });
        Ok(())
    }

    pub fn add_uniform(&mut self, name: &str, shape: &[usize], rng: &mut ChaCha8Rng) -> Result<()> {
        let len: usize = shape.iter().product();
        let values = (0..len)
            .map(|_| rng.gen_range(-INIT_SCALE..INIT_SCALE))
            .collect();
        self.add(name, shape, values)
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        let len: usize = shape.iter().product();
        self.add(name, shape, vec![0.0; len])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index_of(name).map(|i| &self.items[i])
    }

    pub fn item(&self, index: usize) -> &Param {
        &self.items[index]
    }

    pub fn item_mut(&mut self, index: usize) -> &mut Param {
        &mut self.items[index]
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn entry_count(&self) -> usize {
        self.items.iter().map(|p| p.values.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.items.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.items.iter_mut()
    }

    pub(crate) fn accumulate_grad(&mut self, index: usize, grad: &[f64]) {
        for (g, x) in self.items[index].grad.iter_mut().zip(grad) {
            *g += x;
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.items {
            for g in &mut p.grad {
                *g = 0.0;
            }
        }
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for p in &mut self.items {
            for g in &mut p.grad {
                *g *= factor;
            }
        }
    }

    /// Global L2 norm over all gradients.
    pub fn grad_norm(&self) -> f64 {
        self.items
            .iter()
            .flat_map(|p| p.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Scales all gradients down when the global norm exceeds `max_norm`.
    pub fn clip_grads(&mut self, max_norm: f64) {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for p in &mut self.items {
                for g in &mut p.grad {
                    *g *= s;
                }
            }
        }
    }

    pub fn to_payload(&self) -> Vec<ParamPayload> {
        self.items
            .iter()
            .map(|p| ParamPayload {
                name: p.name.clone(),
                shape: p.shape.clone(),
                values: p.values.clone(),
            })
            .collect()
    }

    pub fn from_payload(payload: Vec<ParamPayload>) -> Result<Params> {
        let mut params = Params::new();
        for p in payload {
            params.add(&p.name, &p.shape, p.values)?;
        }
        Ok(params)
    }
}

/// Serialized form of one parameter: name, shape, row-major values.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ParamPayload {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}
