use serde::{Deserialize, Serialize};

use crate::error::shape_err;
use crate::Result;

/// Dense row-major buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err(
                "tensor",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// `n × d` matrix of embeddings, one row per record.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    n: usize,
    d: usize,
    values: Vec<f64>,
}

impl EmbeddingBatch {
    pub fn new(n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if n * d != values.len() || d == 0 {
            return Err(shape_err(
                "embedding_batch",
                format!("{n}×{d} needs {} values, got {}", n * d, values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(shape_err("embedding_batch", "non-finite entry"));
        }
        Ok(Self { n, d, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != d) {
            return Err(shape_err("embedding_batch", "ragged rows"));
        }
        Self::new(rows.len(), d, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }
}
