//! Pooled activation matrices: mean pooling, the `GMIA` file format and a
//! generator of synthetic matrices with planted spatial signals.

mod format;
mod synthetic;

pub use format::{read_activations, write_activations, GMIA_MAGIC, GMIA_VERSION};
pub use synthetic::{generate_synthetic, Signal, SyntheticActivations};

use crate::error::{Error, Result};

/// Token-level activations of one prompt at one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenActivations {
    pub layer: u32,
    pub tokens: Vec<Vec<f32>>,
}

/// Averages token activations component-wise, accumulating in f64.
pub fn mean_pool(acts: &TokenActivations) -> Result<Vec<f64>> {
    let first = acts.tokens.first().ok_or(Error::Empty("token list"))?;
    let dim = first.len();
    let mut sum = vec![0.0f64; dim];
    for tok in &acts.tokens {
        if tok.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                got: tok.len(),
            });
        }
        for (s, &v) in sum.iter_mut().zip(tok) {
            *s += f64::from(v);
        }
    }
    let t = acts.tokens.len() as f64;
    sum.iter_mut().for_each(|s| *s /= t);
    Ok(sum)
}

/// `n_rows x n_cols` row-major matrix of pooled activations (or SAE
/// features) for one layer. All values are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    layer: u32,
    n_rows: usize,
    n_cols: usize,
    values: Vec<f32>,
    row_binding: Option<Vec<u64>>,
}

impl ActivationMatrix {
    pub fn new(layer: u32, n_rows: usize, n_cols: usize, values: Vec<f32>) -> Result<Self> {
        let expected = n_rows
            .checked_mul(n_cols)
            .ok_or_else(|| Error::Format(format!("{n_rows} x {n_cols} overflows")))?;
        if values.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(ActivationMatrix {
            layer,
            n_rows,
            n_cols,
            values,
            row_binding: None,
        })
    }

    /// Stacks row vectors (narrowed to f32).
    pub fn from_rows(layer: u32, rows: &[Vec<f64>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * n_cols);
        for row in rows {
            if row.len() != n_cols {
                return Err(Error::Dimension {
                    expected: n_cols,
                    got: row.len(),
                });
            }
            values.extend(row.iter().map(|&v| v as f32));
        }
        Self::new(layer, rows.len(), n_cols, values)
    }

    /// Binds row `i` to place `ids[i]`.
    pub fn with_binding(mut self, ids: Vec<u64>) -> Result<Self> {
        if ids.len() != self.n_rows {
            return Err(Error::Dimension {
                expected: self.n_rows,
                got: ids.len(),
            });
        }
        self.row_binding = Some(ids);
        Ok(self)
    }

    pub fn with_layer(mut self, layer: u32) -> Self {
        self.layer = layer;
        self
    }

    pub fn layer(&self) -> u32 {
        self.layer
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row_binding(&self) -> Option<&[u64]> {
        self.row_binding.as_deref()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        // chunks_exact(0) panics; an empty-column matrix has no meaningful rows
        self.values
            .chunks_exact(self.n_cols.max(1))
            .take(self.n_rows)
    }

    /// Column `j` widened to f64.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows)
            .map(|i| f64::from(self.values[i * self.n_cols + j]))
            .collect()
    }

    /// Copy restricted to the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(rows.len() * self.n_cols);
        for &r in rows {
            if r >= self.n_rows {
                return Err(Error::invalid(format!("row {r} out of range")));
            }
            values.extend_from_slice(self.row(r));
        }
        let mut out = Self::new(self.layer, rows.len(), self.n_cols, values)?;
        if let Some(b) = &self.row_binding {
            out.row_binding = Some(rows.iter().map(|&r| b[r]).collect());
        }
        Ok(out)
    }
}
