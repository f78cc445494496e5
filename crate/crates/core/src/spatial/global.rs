use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SpatialWeights;
use crate::error::{Error, Result};

/// Smallest permutation count accepted for pseudo p-values.
pub const MIN_PERMUTATIONS: usize = 99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Positive,
    Negative,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Positive => "positive",
            Direction::Negative => "negative",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalMoranResult {
    pub i: f64,
    pub expected_i: f64,
    /// One-sided pseudo p-value in `direction`.
    pub p_value: f64,
    pub n_permutations: usize,
    pub direction: Direction,
}

/// Deviations from the mean, rejecting NaN/Inf and (numerically) constant
/// input.
pub(crate) fn centered(x: &[f64]) -> Result<Vec<f64>> {
    if let Some(index) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    if x.is_empty() {
        return Err(Error::Empty("values"));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let z: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let max_dev = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max_dev <= 1e-12 * scale || max_dev == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok(z)
}

pub(crate) fn check_inputs(x: &[f64], w: &SpatialWeights, n_perm: usize) -> Result<()> {
    if x.len() != w.n() {
        return Err(Error::Dimension {
            expected: w.n(),
            got: x.len(),
        });
    }
    if n_perm < MIN_PERMUTATIONS {
        return Err(Error::invalid(format!(
            "at least {MIN_PERMUTATIONS} permutations required, got {n_perm}"
        )));
    }
    Ok(())
}

/// `sum_i z_i * lag_i`
fn cross_product(z: &[f64], w: &SpatialWeights) -> f64 {
    (0..z.len()).map(|i| z[i] * w.lag(z, i)).sum()
}

/// Moran's I statistic without inference.
pub fn moran_i(x: &[f64], w: &SpatialWeights) -> Result<f64> {
    if x.len() != w.n() {
        return Err(Error::Dimension {
            expected: w.n(),
            got: x.len(),
        });
    }
    let z = centered(x)?;
    let ss: f64 = z.iter().map(|v| v * v).sum();
    Ok(z.len() as f64 / w.s0() * cross_product(&z, w) / ss)
}

/// Global Moran's I with a permutation pseudo p-value. The p-value counts
/// full random relabelings of `x` whose statistic deviates from E[I] at
/// least as far as observed, on the observed side.
pub fn global_moran(
    x: &[f64],
    w: &SpatialWeights,
    n_perm: usize,
    seed: u64,
) -> Result<GlobalMoranResult> {
    check_inputs(x, w, n_perm)?;
    let n = x.len();
    let mut z = centered(x)?;
    // sum of squares is invariant under relabeling, so compare numerators
    let ss: f64 = z.iter().map(|v| v * v).sum();
    let scale = n as f64 / w.s0() / ss;
    let observed = cross_product(&z, w);
    let i = scale * observed;
    let expected_i = -1.0 / (n as f64 - 1.0);
    let direction = if i >= expected_i {
        Direction::Positive
    } else {
        Direction::Negative
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut extreme = 0usize;
    for _ in 0..n_perm {
        z.shuffle(&mut rng);
        let stat = cross_product(&z, w);
        let hit = match direction {
            Direction::Positive => stat >= observed,
            Direction::Negative => stat <= observed,
        };
        extreme += usize::from(hit);
    }
    Ok(GlobalMoranResult {
        i,
        expected_i,
        p_value: (extreme + 1) as f64 / (n_perm + 1) as f64,
        n_permutations: n_perm,
        direction,
    })
}
