use std::time::Instant;

use num_traits::Float;
use rand::distr::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{dot, topk_active, Sae, SaeConfig, SaeModel};
use crate::error::{Error, Result};
use crate::tensor_io::ActivationMatrix;

const ADAM_BETA1: f32 = 0.9;
const ADAM_BETA2: f32 = 0.999;
const ADAM_EPS: f32 = 1e-8;

/// Gradients of the batch reconstruction loss, laid out like the model
/// (decoder atom-major).
#[derive(Debug, Clone, PartialEq)]
pub struct SaeGradients<T> {
    pub encoder: Vec<T>,
    pub encoder_bias: Vec<T>,
    pub decoder: Vec<T>,
    pub pre_bias: Vec<T>,
}

impl<T: Float> SaeGradients<T> {
    fn zeros(m: &Sae<T>) -> Self {
        SaeGradients {
            encoder: vec![T::zero(); m.encoder.len()],
            encoder_bias: vec![T::zero(); m.latent_dim],
            decoder: vec![T::zero(); m.decoder.len()],
            pre_bias: vec![T::zero(); m.input_dim],
        }
    }

    fn clear(&mut self) {
        for v in [
            &mut self.encoder,
            &mut self.encoder_bias,
            &mut self.decoder,
            &mut self.pre_bias,
        ] {
            v.iter_mut().for_each(|x| *x = T::zero());
        }
    }
}

/// Forward/backward quantities of one sample.
struct SampleTrace<T> {
    active: Vec<(usize, T)>,
    /// dL/d(pre-activation) for each active feature
    dpre: Vec<T>,
    centered: Vec<T>,
    /// dL/d(reconstruction)
    grad_out: Vec<T>,
    sq_err: f64,
}

impl<T: Float + Send + Sync> Sae<T> {
    /// `fixed` pins the active set (used for finite-difference checks); the
    /// features then take their raw pre-activation values.
    fn trace(&self, x: &[T], scale: T, fixed: Option<&[usize]>) -> SampleTrace<T> {
        let centered: Vec<T> = x.iter().zip(&self.pre_bias).map(|(&a, &b)| a - b).collect();
        let active = match fixed {
            None => topk_active(&self.pre_activations(x), self.k),
            Some(idx) => idx
                .iter()
                .map(|&j| {
                    let row = &self.encoder[j * self.input_dim..(j + 1) * self.input_dim];
                    let v = self.encoder_bias[j] + dot(row, &centered);
                    (j, v)
                })
                .collect(),
        };
        let recon = self.decode_sparse(&active);
        let mut sq_err = 0.0f64;
        let grad_out: Vec<T> = recon
            .iter()
            .zip(x)
            .map(|(&r, &xv)| {
                let e = r - xv;
                sq_err += e.to_f64().unwrap().powi(2);
                (e + e) * scale
            })
            .collect();
        let dpre = active
            .iter()
            .map(|&(j, _)| dot(self.atom(j), &grad_out))
            .collect();
        SampleTrace {
            active,
            dpre,
            centered,
            grad_out,
            sq_err,
        }
    }

    fn traces(&self, batch: &[&[T]], fixed: Option<&[Vec<usize>]>) -> Result<Vec<SampleTrace<T>>> {
        if let Some(bad) = batch.iter().find(|x| x.len() != self.input_dim) {
            return Err(Error::Dimension {
                expected: self.input_dim,
                got: bad.len(),
            });
        }
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let scale = T::from(1.0 / (batch.len() * self.input_dim) as f64).unwrap();
        Ok(batch
            .par_iter()
            .enumerate()
            .map(|(s, x)| self.trace(x, scale, fixed.map(|f| f[s].as_slice())))
            .collect())
    }

    /// Accumulates in sample order, so the result does not depend on how
    /// the traces were scheduled.
    fn accumulate(&self, traces: &[SampleTrace<T>], grads: &mut SaeGradients<T>) {
        let d = self.input_dim;
        for t in traces {
            for (p, &g) in grads.pre_bias.iter_mut().zip(&t.grad_out) {
                *p = *p + g;
            }
            for (&(j, f), &dp) in t.active.iter().zip(&t.dpre) {
                let enc_row = &self.encoder[j * d..(j + 1) * d];
                for (p, &w) in grads.pre_bias.iter_mut().zip(enc_row) {
                    *p = *p - dp * w;
                }
                for (p, &g) in grads.decoder[j * d..(j + 1) * d]
                    .iter_mut()
                    .zip(&t.grad_out)
                {
                    *p = *p + f * g;
                }
                for (p, &c) in grads.encoder[j * d..(j + 1) * d]
                    .iter_mut()
                    .zip(&t.centered)
                {
                    *p = *p + dp * c;
                }
                grads.encoder_bias[j] = grads.encoder_bias[j] + dp;
            }
        }
    }

    /// Mean squared reconstruction error over the batch (averaged over rows
    /// and input dimensions), its gradients, and the TopK active sets used.
    pub fn loss_and_gradients(
        &self,
        batch: &[&[T]],
    ) -> Result<(f64, SaeGradients<T>, Vec<Vec<usize>>)> {
        let traces = self.traces(batch, None)?;
        let mut grads = SaeGradients::zeros(self);
        self.accumulate(&traces, &mut grads);
        let loss =
            traces.iter().map(|t| t.sq_err).sum::<f64>() / (batch.len() * self.input_dim) as f64;
        let active = traces
            .iter()
            .map(|t| t.active.iter().map(|&(j, _)| j).collect())
            .collect();
        Ok((loss, grads, active))
    }

    /// Batch loss with the active feature sets held fixed.
    pub fn loss_with_active(&self, batch: &[&[T]], active: &[Vec<usize>]) -> Result<f64> {
        if active.len() != batch.len() {
            return Err(Error::Dimension {
                expected: batch.len(),
                got: active.len(),
            });
        }
        if let Some(&j) = active.iter().flatten().find(|&&j| j >= self.latent_dim) {
            return Err(Error::invalid(format!("feature {j} out of range")));
        }
        let traces = self.traces(batch, Some(active))?;
        Ok(traces.iter().map(|t| t.sq_err).sum::<f64>() / (batch.len() * self.input_dim) as f64)
    }

    /// Mutable views of every parameter group, in gradient order.
    pub fn parameters_mut(&mut self) -> [&mut Vec<T>; 4] {
        [
            &mut self.encoder,
            &mut self.encoder_bias,
            &mut self.decoder,
            &mut self.pre_bias,
        ]
    }
}

impl<T> SaeGradients<T> {
    pub fn groups(&self) -> [&Vec<T>; 4] {
        [
            &self.encoder,
            &self.encoder_bias,
            &self.decoder,
            &self.pre_bias,
        ]
    }
}

struct Adam {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    step: i32,
}

impl Adam {
    fn new(model: &SaeModel) -> Self {
        let sizes = [
            model.encoder.len(),
            model.latent_dim,
            model.decoder.len(),
            model.input_dim,
        ];
        Adam {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    fn update(&mut self, model: &mut SaeModel, grads: &SaeGradients<f32>, lr: f32) {
        self.step += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.step);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.step);
        let params = model.parameters_mut();
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads.groups())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            p.par_iter_mut()
                .zip(g.par_iter())
                .zip(m.par_iter_mut())
                .zip(v.par_iter_mut())
                .with_min_len(4096)
                .for_each(|(((p, &g), m), v)| {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    // moments of unused parameters decay into subnormals, which are very slow
                    if m.abs() < f32::MIN_POSITIVE {
                        *m = 0.0;
                    }
                    if *v < f32::MIN_POSITIVE {
                        *v = 0.0;
                    }
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
                });
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub k: usize,
    /// Mean reconstruction loss of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Last-epoch mean loss.
    pub final_loss: f64,
    pub dead_fraction: f64,
    pub wall_clock_seconds: f64,
}

fn init_model(data: &ActivationMatrix, cfg: &SaeConfig, rng: &mut ChaCha8Rng) -> SaeModel {
    let d = cfg.input_dim;
    let l = cfg.latent_dim();
    let bound = 1.0 / (d as f32).sqrt();
    let uniform = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
    let encoder: Vec<f32> = (0..l * d).map(|_| uniform.sample(rng)).collect();
    let mut mean = vec![0.0f64; d];
    for row in data.rows() {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += f64::from(v);
        }
    }
    let pre_bias = mean
        .iter()
        .map(|m| (m / data.n_rows() as f64) as f32)
        .collect();
    let mut model = Sae {
        input_dim: d,
        latent_dim: l,
        k: cfg.k,
        decoder: encoder.clone(),
        encoder,
        encoder_bias: vec![0.0; l],
        pre_bias,
    };
    model.normalize_atoms();
    model
}

/// Trains on shuffled mini-batches to minimize mean squared reconstruction
/// error. Deterministic for a fixed `cfg.seed`.
pub fn train_sae(data: &ActivationMatrix, cfg: &SaeConfig) -> Result<(SaeModel, TrainReport)> {
    cfg.validate()?;
    if data.n_cols() != cfg.input_dim {
        return Err(Error::Dimension {
            expected: cfg.input_dim,
            got: data.n_cols(),
        });
    }
    if data.n_rows() == 0 {
        return Err(Error::Empty("training data"));
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = init_model(data, cfg, &mut rng);
    let mut adam = Adam::new(&model);
    let mut grads = SaeGradients::zeros(&model);
    let mut order: Vec<usize> = (0..data.n_rows()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let lr = cfg.learning_rate as f32;
    let denom = (data.n_rows() * cfg.input_dim) as f64;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sq_err = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&[f32]> = chunk.iter().map(|&r| data.row(r)).collect();
            let traces = model.traces(&batch, None)?;
            sq_err += traces.iter().map(|t| t.sq_err).sum::<f64>();
            grads.clear();
            model.accumulate(&traces, &mut grads);
            adam.update(&mut model, &grads, lr);
            model.normalize_atoms();
        }
        let loss = sq_err / denom;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "training loss diverged at epoch {epoch}"
            )));
        }
        epoch_losses.push(loss);
    }
    if model
        .encoder
        .iter()
        .chain(&model.decoder)
        .any(|v| !v.is_finite())
    {
        return Err(Error::Numerical(
            "non-finite parameters after training".into(),
        ));
    }
    let dead_fraction = dead_feature_stats(&model, data)?;
    let report = TrainReport {
        k: cfg.k,
        final_loss: epoch_losses.last().copied().unwrap_or(f64::NAN),
        epoch_losses,
        dead_fraction,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}

/// Index of the report with the lowest final loss; ties go to smaller k.
pub fn select_best(reports: &[TrainReport]) -> Option<usize> {
    (0..reports.len()).min_by(|&a, &b| {
        let (ra, rb) = (&reports[a], &reports[b]);
        ra.final_loss
            .total_cmp(&rb.final_loss)
            .then(ra.k.cmp(&rb.k))
    })
}

/// Trains one model per k and keeps the one with the lowest final loss.
pub fn sweep_and_select(
    data: &ActivationMatrix,
    ks: &[usize],
    base_cfg: &SaeConfig,
) -> Result<(SaeModel, Vec<TrainReport>)> {
    if ks.is_empty() {
        return Err(Error::Empty("k sweep"));
    }
    let mut models = Vec::with_capacity(ks.len());
    let mut reports = Vec::with_capacity(ks.len());
    for &k in ks {
        let (m, r) = train_sae(
            data,
            &SaeConfig {
                k,
                ..base_cfg.clone()
            },
        )?;
        models.push(m);
        reports.push(r);
    }
    let best = select_best(&reports).expect("non-empty");
    Ok((models.swap_remove(best), reports))
}

fn check_dims(m: &SaeModel, data: &ActivationMatrix) -> Result<()> {
    if data.n_cols() != m.input_dim {
        return Err(Error::Dimension {
            expected: m.input_dim,
            got: data.n_cols(),
        });
    }
    Ok(())
}

/// Fraction of features that are zero for every row of `data`.
pub fn dead_feature_stats(m: &SaeModel, data: &ActivationMatrix) -> Result<f64> {
    check_dims(m, data)?;
    let active: Vec<Vec<usize>> = data
        .rows()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|row| {
            topk_active(&m.pre_activations(row), m.k)
                .into_iter()
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    let mut alive = vec![false; m.latent_dim];
    for j in active.into_iter().flatten() {
        alive[j] = true;
    }
    let dead = alive.iter().filter(|a| !**a).count();
    Ok(dead as f64 / m.latent_dim as f64)
}

/// Encodes every row into a `n_rows x latent_dim` feature matrix, keeping
/// the layer tag and row binding.
pub fn encode_matrix(m: &SaeModel, data: &ActivationMatrix) -> Result<ActivationMatrix> {
    check_dims(m, data)?;
    let rows: Vec<&[f32]> = data.rows().collect();
    let encoded: Vec<Vec<f32>> = rows
        .par_iter()
        .map(|r| m.encode(r))
        .collect::<Result<_>>()?;
    let values = encoded.into_iter().flatten().collect();
    let out = ActivationMatrix::new(data.layer(), data.n_rows(), m.latent_dim, values)?;
    match data.row_binding() {
        Some(b) => out.with_binding(b.to_vec()),
        None => Ok(out),
    }
}
