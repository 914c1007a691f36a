use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Graph, Tensor, Var};

use super::{ModelError, Result};

/// Named parameter tensors in creation order.
#[derive(Clone, Debug)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, usize>,
    rng: ChaCha8Rng,
}

impl PartialEq for ParamStore {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names && self.values == other.values
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        ParamStore::seeded(0)
    }
}

impl ParamStore {
    pub fn seeded(seed: u64) -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Append a parameter; panics on a duplicate name.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        let name = name.into();
        let id = self.values.len();
        assert!(self.index.insert(name.clone(), id).is_none(), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        id
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub(crate) fn uniform(&mut self, name: String, shape: &[usize], fan_in: usize) -> usize {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data).expect("consistent shape"))
    }

    pub(crate) fn filled(&mut self, name: String, shape: &[usize], value: f64) -> usize {
        self.insert(name, Tensor::full(shape, value))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Replace the value at position `i`, keeping its shape.
    pub fn set(&mut self, i: usize, value: Tensor) {
        assert_eq!(value.shape(), self.values[i].shape(), "shape change for {}", self.names[i]);
        self.values[i] = value;
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Record every parameter on `g`, trainable or frozen.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.values
            .iter()
            .map(|v| if trainable { g.param(v.clone()) } else { g.constant(v.clone()) })
            .collect()
    }

    /// Same names in the same order with the same shapes.
    pub fn check_compatible(&self, other: &ParamStore) -> Result<()> {
        for (name, value) in self.iter() {
            match other.get(name) {
                None => {
                    return Err(ModelError::Param {
                        name: name.to_string(),
                        detail: "missing from checkpoint".into(),
                    })
                }
                Some(found) if found.shape() != value.shape() => {
                    return Err(ModelError::Param {
                        name: name.to_string(),
                        detail: format!("config expects shape {:?}, checkpoint holds {:?}", value.shape(), found.shape()),
                    })
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = other.names.iter().find(|n| !self.index.contains_key(*n)) {
            return Err(ModelError::Param {
                name: extra.clone(),
                detail: "not part of this config".into(),
            });
        }
        if self.names != other.names {
            return Err(ModelError::Param {
                name: other.names[0].clone(),
                detail: "parameters are stored in a different order".into(),
            });
        }
        Ok(())
    }
}
