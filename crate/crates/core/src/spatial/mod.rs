//! Spatial weights and Moran's I (global and local) with permutation
//! inference.

mod global;
mod local;
mod weights;

use std::collections::BTreeSet;

pub use global::{global_moran, moran_i, Direction, GlobalMoranResult, MIN_PERMUTATIONS};
pub use local::{local_moran, Cluster, LocalMoranResult};
pub use weights::{
    haversine_m, jitter_duplicates, knn_weights, SpatialWeights, EARTH_RADIUS_M, JITTER_DEG,
};

use crate::error::{Error, Result};

pub const DEFAULT_KNN_K: usize = 8;
pub const DEFAULT_PERMUTATIONS: usize = 999;

/// A unit is spatially significant when `p < p_threshold` and
/// `I >= i_threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignificanceRule {
    pub p_threshold: f64,
    pub i_threshold: f64,
}

impl Default for SignificanceRule {
    fn default() -> Self {
        SignificanceRule {
            p_threshold: 0.01,
            i_threshold: 0.3,
        }
    }
}

impl SignificanceRule {
    pub fn new(p_threshold: f64, i_threshold: f64) -> Result<Self> {
        if !(p_threshold > 0.0 && p_threshold < 1.0) {
            return Err(Error::invalid(format!(
                "p_threshold {p_threshold} outside (0, 1)"
            )));
        }
        if !i_threshold.is_finite() {
            return Err(Error::invalid("i_threshold must be finite"));
        }
        Ok(SignificanceRule {
            p_threshold,
            i_threshold,
        })
    }

    pub fn passes(&self, i: f64, p_value: f64) -> bool {
        p_value < self.p_threshold && i >= self.i_threshold
    }
}

/// Units with at least one result passing `rule`. Rows may repeat a unit
/// (one per region scope).
pub fn significance_filter<'a, I>(results: I, rule: &SignificanceRule) -> BTreeSet<usize>
where
    I: IntoIterator<Item = (usize, &'a GlobalMoranResult)>,
{
    results
        .into_iter()
        .filter(|(_, r)| rule.passes(r.i, r.p_value))
        .map(|(unit, _)| unit)
        .collect()
}
