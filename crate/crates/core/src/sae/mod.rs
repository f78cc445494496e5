//! TopK sparse autoencoder.
//!
//! A single linear encoder followed by a TopK-ReLU bottleneck and a single
//! linear decoder whose columns (dictionary atoms) are kept at unit norm.
//! Sparsity is structural: there is no L1 term in the loss.

mod checkpoint;
mod train;

pub use checkpoint::{read_model, write_model, GMIS_MAGIC, GMIS_VERSION};
pub use train::{
    dead_feature_stats, encode_matrix, select_best, sweep_and_select, train_sae, SaeGradients,
    TrainReport,
};

use num_traits::Float;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Training configuration. Defaults follow the full-scale setup: 4,096
/// inputs expanded 8x, k = 2,048, 300 epochs of 32-row mini-batches.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeConfig {
    pub input_dim: usize,
    pub expansion: usize,
    pub k: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SaeConfig {
    fn default() -> Self {
        SaeConfig {
            input_dim: 4096,
            expansion: 8,
            k: 2048,
            epochs: 300,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl SaeConfig {
    pub fn latent_dim(&self) -> usize {
        self.input_dim * self.expansion
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.expansion == 0 {
            return Err(Error::invalid("input_dim and expansion must be positive"));
        }
        if self.k == 0 || self.k > self.latent_dim() {
            return Err(Error::invalid(format!(
                "k={} outside 1..={}",
                self.k,
                self.latent_dim()
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        Ok(())
    }
}

/// Indices and values of the at most `k` largest strictly positive entries,
/// ties going to the lower index. Returned in ascending index order.
pub(crate) fn topk_active<T: Float>(v: &[T], k: usize) -> Vec<(usize, T)> {
    let mut pos: Vec<(usize, T)> = v
        .iter()
        .enumerate()
        .filter(|(_, &x)| x > T::zero())
        .map(|(i, &x)| (i, x))
        .collect();
    if pos.len() > k {
        let order = |a: &(usize, T), b: &(usize, T)| {
            b.1.partial_cmp(&a.1).expect("finite").then(a.0.cmp(&b.0))
        };
        pos.select_nth_unstable_by(k - 1, order);
        pos.truncate(k);
    }
    pos.sort_unstable_by_key(|&(i, _)| i);
    pos
}

/// Dot product over eight independent lanes so the loop vectorizes; the
/// summation order is fixed, so results are reproducible.
pub(crate) fn dot<T: Float>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .fold(T::zero(), |s, (&x, &y)| s + x * y);
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Keeps `max(v_j, 0)` at the `k` largest rectified entries, zero elsewhere.
pub fn topk_relu<T: Float>(v: &[T], k: usize) -> Result<Vec<T>> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            index: v.iter().position(|x| !x.is_finite()).unwrap(),
        });
    }
    let mut out = vec![T::zero(); v.len()];
    for (i, x) in topk_active(v, k) {
        out[i] = x;
    }
    Ok(out)
}

/// Autoencoder parameters. The decoder is stored atom-major: atom `j`
/// (decoder column `j`) occupies `decoder[j * input_dim..(j + 1) * input_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sae<T> {
    pub(crate) input_dim: usize,
    pub(crate) latent_dim: usize,
    pub(crate) k: usize,
    pub(crate) encoder: Vec<T>,
    pub(crate) encoder_bias: Vec<T>,
    pub(crate) decoder: Vec<T>,
    pub(crate) pre_bias: Vec<T>,
}

/// Trained models use 32-bit parameters.
pub type SaeModel = Sae<f32>;

impl<T: Float + Send + Sync> Sae<T> {
    /// `encoder` is `latent x input` row-major, `decoder` is `input x latent`
    /// row-major.
    pub fn from_parts(
        k: usize,
        encoder: Vec<T>,
        encoder_bias: Vec<T>,
        decoder: Vec<T>,
        pre_bias: Vec<T>,
    ) -> Result<Self> {
        let input_dim = pre_bias.len();
        let latent_dim = encoder_bias.len();
        if input_dim == 0 || latent_dim == 0 {
            return Err(Error::invalid("empty model"));
        }
        if encoder.len() != latent_dim * input_dim {
            return Err(Error::Dimension {
                expected: latent_dim * input_dim,
                got: encoder.len(),
            });
        }
        if decoder.len() != latent_dim * input_dim {
            return Err(Error::Dimension {
                expected: latent_dim * input_dim,
                got: decoder.len(),
            });
        }
        if k == 0 || k > latent_dim {
            return Err(Error::invalid(format!("k={k} outside 1..={latent_dim}")));
        }
        let all = encoder
            .iter()
            .chain(&encoder_bias)
            .chain(&decoder)
            .chain(&pre_bias);
        if let Some(index) = all.clone().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        let mut atoms = vec![T::zero(); decoder.len()];
        for d in 0..input_dim {
            for j in 0..latent_dim {
                atoms[j * input_dim + d] = decoder[d * latent_dim + j];
            }
        }
        Ok(Sae {
            input_dim,
            latent_dim,
            k,
            encoder,
            encoder_bias,
            decoder: atoms,
            pre_bias,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn pre_bias(&self) -> &[T] {
        &self.pre_bias
    }

    pub fn encoder_bias(&self) -> &[T] {
        &self.encoder_bias
    }

    /// Encoder weights, `latent x input` row-major.
    pub fn encoder_weights(&self) -> &[T] {
        &self.encoder
    }

    /// Decoder column `j`.
    pub fn atom(&self, j: usize) -> &[T] {
        &self.decoder[j * self.input_dim..(j + 1) * self.input_dim]
    }

    /// Decoder weights, `input x latent` row-major.
    pub fn decoder_weights(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.decoder.len()];
        for j in 0..self.latent_dim {
            for d in 0..self.input_dim {
                out[d * self.latent_dim + j] = self.decoder[j * self.input_dim + d];
            }
        }
        out
    }

    pub(crate) fn pre_activations(&self, x: &[T]) -> Vec<T> {
        let xc: Vec<T> = x.iter().zip(&self.pre_bias).map(|(&a, &b)| a - b).collect();
        self.encoder
            .par_chunks(self.input_dim)
            .with_min_len(256)
            .zip(&self.encoder_bias)
            .map(|(row, &b)| b + dot(row, &xc))
            .collect()
    }

    /// Active features of `x` as `(index, value)` pairs.
    pub fn encode_sparse(&self, x: &[T]) -> Result<Vec<(usize, T)>> {
        if x.len() != self.input_dim {
            return Err(Error::Dimension {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        Ok(topk_active(&self.pre_activations(x), self.k))
    }

    pub fn encode(&self, x: &[T]) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); self.latent_dim];
        for (j, v) in self.encode_sparse(x)? {
            out[j] = v;
        }
        Ok(out)
    }

    pub(crate) fn decode_sparse(&self, active: &[(usize, T)]) -> Vec<T> {
        let mut out = self.pre_bias.clone();
        for &(j, f) in active {
            for (o, &a) in out.iter_mut().zip(self.atom(j)) {
                *o = *o + f * a;
            }
        }
        out
    }

    pub fn decode(&self, f: &[T]) -> Result<Vec<T>> {
        if f.len() != self.latent_dim {
            return Err(Error::Dimension {
                expected: self.latent_dim,
                got: f.len(),
            });
        }
        let active: Vec<(usize, T)> = f
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_zero())
            .map(|(j, &v)| (j, v))
            .collect();
        Ok(self.decode_sparse(&active))
    }

    /// Largest deviation of a decoder column norm from 1.
    pub fn max_atom_norm_error(&self) -> f64 {
        (0..self.latent_dim)
            .map(|j| {
                let n2: f64 = self
                    .atom(j)
                    .iter()
                    .map(|v| v.to_f64().unwrap().powi(2))
                    .sum();
                (n2.sqrt() - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    pub(crate) fn normalize_atoms(&mut self) {
        let d = self.input_dim;
        self.decoder.par_chunks_mut(d).for_each(|atom| {
            let n2: f64 = atom.iter().map(|v| v.to_f64().unwrap().powi(2)).sum();
            if n2 > 0.0 {
                let inv = T::from(1.0 / n2.sqrt()).unwrap();
                atom.iter_mut().for_each(|v| *v = *v * inv);
            }
        });
    }
}
