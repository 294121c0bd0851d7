use std::collections::HashMap;

use matmodal_core::rng::Xoshiro256;

use crate::error::shape_err;
use crate::{NnError, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Constant(f64),
    /// N(0, 2 / fan_in).
    He {
        fan_in: usize,
    },
    /// U(±√(6 / (fan_in + fan_out))).
    Glorot {
        fan_in: usize,
        fan_out: usize,
    },
    Normal {
        std: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Named parameter tensors in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        init: Init,
        rng: &mut Xoshiro256,
    ) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Constant(c) => vec![c; n],
            Init::He { fan_in } => {
                let std = (2.0 / fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| std * rng.normal()).collect()
            }
            Init::Glorot { fan_in, fan_out } => {
                let r = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
                (0..n).map(|_| rng.uniform(-r, r)).collect()
            }
            Init::Normal { std } => (0..n).map(|_| std * rng.normal()).collect(),
        };
        self.insert(name, Tensor::new(shape, data)?)
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(NnError::DuplicateParam(name.to_string()));
        }
        self.by_name.insert(name.to_string(), self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            value,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .map(|i| ParamId(*i))
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
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

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn n_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Copies values for every parameter of `other` whose name and shape
    /// match one here. Returns how many were copied.
    pub fn copy_matching(&mut self, other: &ParamStore, prefix: &str) -> usize {
        let mut copied = 0;
        for p in &other.params {
            if !p.name.starts_with(prefix) {
                continue;
            }
            if let Some(&i) = self.by_name.get(&p.name) {
                if self.params[i].value.shape() == p.value.shape() {
                    self.params[i].value = p.value.clone();
                    copied += 1;
                }
            }
        }
        copied
    }

    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self.id(name)?;
        let cur = &mut self.params[id.0].value;
        if cur.shape() != value.shape() {
            return Err(shape_err(
                "param_set",
                format!("{name}: {:?} vs {:?}", cur.shape(), value.shape()),
            ));
        }
        *cur = value;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_init_is_seeded() {
        let mut rng = Xoshiro256::seed_from_u64(3);
        let mut s = ParamStore::new();
        let w = s
            .add("w", vec![4, 3], Init::He { fan_in: 4 }, &mut rng)
            .unwrap();
        assert!(s.add("w", vec![1], Init::Zeros, &mut rng).is_err());
        assert_eq!(s.get(w).shape(), &[4, 3]);
        assert_eq!(s.id("w").unwrap(), w);

        let mut rng2 = Xoshiro256::seed_from_u64(3);
        let mut s2 = ParamStore::new();
        s2.add("w", vec![4, 3], Init::He { fan_in: 4 }, &mut rng2)
            .unwrap();
        assert_eq!(s, s2);
    }
}
