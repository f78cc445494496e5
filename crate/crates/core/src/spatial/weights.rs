use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng;

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Offset applied to co-located sites before neighbour search.
pub const JITTER_DEG: f64 = 1e-6;

/// Great-circle distance in metres between `(lat, lon)` points in degrees.
pub fn haversine_m(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Row-standardized neighbour lists: every site has exactly `k` neighbours,
/// none of them itself, with weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialWeights {
    k: usize,
    neighbors: Vec<Vec<usize>>,
    weights: Vec<Vec<f64>>,
}

impl SpatialWeights {
    /// Binary weights over explicit neighbour lists, row-standardized.
    pub fn from_neighbors(neighbors: Vec<Vec<usize>>) -> Result<Self> {
        let n = neighbors.len();
        let k = neighbors.first().map_or(0, Vec::len);
        if k == 0 {
            return Err(Error::invalid("every site needs at least one neighbour"));
        }
        for (i, list) in neighbors.iter().enumerate() {
            if list.len() != k {
                return Err(Error::invalid(format!(
                    "site {i} has {} neighbours, expected {k}",
                    list.len()
                )));
            }
            for (pos, &j) in list.iter().enumerate() {
                if j >= n || j == i || list[..pos].contains(&j) {
                    return Err(Error::invalid(format!("site {i}: invalid neighbour {j}")));
                }
            }
        }
        let w = 1.0 / k as f64;
        let weights = vec![vec![w; k]; n];
        Ok(SpatialWeights {
            k,
            neighbors,
            weights,
        })
    }

    pub fn n(&self) -> usize {
        self.neighbors.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn weights(&self, i: usize) -> &[f64] {
        &self.weights[i]
    }

    /// Sum of all weights (`n` when row-standardized).
    pub fn s0(&self) -> f64 {
        self.weights.iter().flatten().sum()
    }

    /// Spatial lag `sum_j w_ij z_j` of site `i`.
    pub fn lag(&self, z: &[f64], i: usize) -> f64 {
        self.neighbors[i]
            .iter()
            .zip(&self.weights[i])
            .map(|(&j, &w)| w * z[j])
            .sum()
    }
}

fn coord_key(c: (f64, f64)) -> (u64, u64) {
    // +0.0 and -0.0 are the same location
    ((c.0 + 0.0).to_bits(), (c.1 + 0.0).to_bits())
}

/// k nearest neighbours by haversine distance, ties broken by lower index.
pub fn knn_weights(coords: &[(f64, f64)], k: usize) -> Result<SpatialWeights> {
    let n = coords.len();
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if n <= k {
        return Err(Error::invalid(format!(
            "need more than k={k} sites, got {n}"
        )));
    }
    let mut seen: HashMap<(u64, u64), usize> = HashMap::with_capacity(n);
    for (i, &c) in coords.iter().enumerate() {
        if !(c.0.is_finite() && c.1.is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
        if let Some(first) = seen.insert(coord_key(c), i) {
            return Err(Error::invalid(format!(
                "sites {first} and {i} share coordinates {c:?}; jitter duplicates first"
            )));
        }
    }
    let neighbors: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (haversine_m(coords[i], coords[j]), j))
                .collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            cand.select_nth_unstable_by(k - 1, cmp);
            cand.truncate(k);
            cand.sort_unstable_by(cmp);
            cand.into_iter().map(|(_, j)| j).collect()
        })
        .collect();
    SpatialWeights::from_neighbors(neighbors)
}

/// Separates co-located sites. Within each group of identical coordinates
/// the site with the smallest geoname id stays put; the others move by
/// multiples of [`JITTER_DEG`] in a direction derived from their id.
/// Fails if a moved site still collides with another site.
pub fn jitter_duplicates(coords: &[(f64, f64)], ids: &[u64]) -> Result<Vec<(f64, f64)>> {
    if coords.len() != ids.len() {
        return Err(Error::Dimension {
            expected: coords.len(),
            got: ids.len(),
        });
    }
    let mut groups: HashMap<(u64, u64), Vec<usize>> = HashMap::new();
    for (i, &c) in coords.iter().enumerate() {
        groups.entry(coord_key(c)).or_default().push(i);
    }
    let mut out = coords.to_vec();
    let mut moved = false;
    for members in groups.values_mut().filter(|m| m.len() > 1) {
        members.sort_by_key(|&i| (ids[i], i));
        for (rank, &i) in members.iter().enumerate().skip(1) {
            let h = rng::mix(ids[i]);
            let dlat = if h & 1 == 0 { 1.0 } else { -1.0 };
            let dlon = if h & 2 == 0 { 1.0 } else { -1.0 };
            let step = JITTER_DEG * rank as f64;
            let lat = (coords[i].0 + dlat * step).clamp(-90.0, 90.0);
            let mut lon = coords[i].1 + dlon * step;
            if lon > 180.0 {
                lon -= 360.0;
            } else if lon < -180.0 {
                lon += 360.0;
            }
            out[i] = (lat, lon);
            moved = true;
        }
    }
    if moved {
        let mut seen = HashMap::with_capacity(out.len());
        for (i, &c) in out.iter().enumerate() {
            if let Some(j) = seen.insert(coord_key(c), i) {
                return Err(Error::invalid(format!(
                    "sites {j} and {i} still coincide after jitter"
                )));
            }
        }
    }
    Ok(out)
}
