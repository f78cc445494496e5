use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::global::{centered, check_inputs};
use super::SpatialWeights;
use crate::error::{Error, Result};
use crate::rng;

/// LISA quadrant of a site, or `NotSignificant`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cluster {
    HH,
    LL,
    HL,
    LH,
    NotSignificant,
}

impl Cluster {
    pub fn as_str(self) -> &'static str {
        match self {
            Cluster::HH => "HH",
            Cluster::LL => "LL",
            Cluster::HL => "HL",
            Cluster::LH => "LH",
            Cluster::NotSignificant => "ns",
        }
    }

    fn from_quadrant(z: f64, lag: f64) -> Cluster {
        match (z >= 0.0, lag >= 0.0) {
            (true, true) => Cluster::HH,
            (false, false) => Cluster::LL,
            (true, false) => Cluster::HL,
            (false, true) => Cluster::LH,
        }
    }
}

impl fmt::Display for Cluster {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Cluster {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "HH" => Ok(Cluster::HH),
            "LL" => Ok(Cluster::LL),
            "HL" => Ok(Cluster::HL),
            "LH" => Ok(Cluster::LH),
            "ns" => Ok(Cluster::NotSignificant),
            _ => Err(Error::Format(format!("unknown cluster label {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalMoranResult {
    pub local_i: Vec<f64>,
    pub p_values: Vec<f64>,
    pub clusters: Vec<Cluster>,
    /// Spatial lag of the centered values.
    pub lag: Vec<f64>,
    pub p_threshold: f64,
    pub n_permutations: usize,
}

impl LocalMoranResult {
    pub fn mean_local_i(&self) -> f64 {
        self.local_i.iter().sum::<f64>() / self.local_i.len() as f64
    }
}

/// Draws `k` distinct indices from `0..m` in random order (Floyd's
/// algorithm, then a shuffle so slot assignment is uniform too).
fn draw_distinct<R: Rng>(rng: &mut R, m: usize, k: usize, out: &mut Vec<usize>) {
    out.clear();
    for j in (m - k)..m {
        let t = rng.random_range(0..=j);
        if out.contains(&t) {
            out.push(j);
        } else {
            out.push(t);
        }
    }
    out.shuffle(rng);
}

/// Local Moran's I with conditional-permutation pseudo p-values. For each
/// site the focal value stays fixed while the other `n - 1` values are
/// redrawn into its neighbour slots. Site `i` uses the stream
/// `seed ^ i`, so results are independent of thread scheduling.
pub fn local_moran(
    x: &[f64],
    w: &SpatialWeights,
    n_perm: usize,
    seed: u64,
    p_threshold: f64,
) -> Result<LocalMoranResult> {
    check_inputs(x, w, n_perm)?;
    if !(p_threshold > 0.0 && p_threshold < 1.0) {
        return Err(Error::invalid(format!(
            "p_threshold {p_threshold} outside (0, 1)"
        )));
    }
    let z = centered(x)?;
    let n = z.len();
    let m2 = z.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let total: f64 = z.iter().sum();

    let per_site: Vec<(f64, f64, f64, Cluster)> = (0..n)
        .into_par_iter()
        .map_init(Vec::new, |draw, i| {
            let zi = z[i];
            let lag = w.lag(&z, i);
            let li = zi / m2 * lag;
            let wi = w.weights(i);
            let k = wi.len();
            // conditional expectation of I_i given z_i
            let mean_others = (total - zi) / (n as f64 - 1.0);
            let expected = zi / m2 * wi.iter().sum::<f64>() * mean_others;
            let upper = li >= expected;

            let mut stream = rng::stream(seed, i as u64);
            let mut extreme = 0usize;
            for _ in 0..n_perm {
                draw_distinct(&mut stream, n - 1, k, draw);
                let perm_lag: f64 = draw
                    .iter()
                    .zip(wi)
                    .map(|(&j, &wt)| {
                        let j = if j >= i { j + 1 } else { j };
                        wt * z[j]
                    })
                    .sum();
                let stat = zi / m2 * perm_lag;
                extreme += usize::from(if upper { stat >= li } else { stat <= li });
            }
            let p = (extreme + 1) as f64 / (n_perm + 1) as f64;
            let cluster = if p < p_threshold {
                Cluster::from_quadrant(zi, lag)
            } else {
                Cluster::NotSignificant
            };
            (li, p, lag, cluster)
        })
        .collect();

    let mut out = LocalMoranResult {
        local_i: Vec::with_capacity(n),
        p_values: Vec::with_capacity(n),
        clusters: Vec::with_capacity(n),
        lag: Vec::with_capacity(n),
        p_threshold,
        n_permutations: n_perm,
    };
    for (li, p, lag, c) in per_site {
        out.local_i.push(li);
        out.p_values.push(p);
        out.lag.push(lag);
        out.clusters.push(c);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::global::moran_i;
    use rand::SeedableRng;

    fn ring(n: usize) -> SpatialWeights {
        SpatialWeights::from_neighbors((0..n).map(|i| vec![(i + n - 1) % n, (i + 1) % n]).collect())
            .unwrap()
    }

    #[test]
    fn ring4_checkerboard_local_values() {
        let r = local_moran(&[1.0, -1.0, 1.0, -1.0], &ring(4), 99, 3, 0.5).unwrap();
        for (i, li) in r.local_i.iter().enumerate() {
            assert!((li + 1.0).abs() < 1e-12, "site {i}: {li}");
        }
        assert_eq!(r.lag, vec![-1.0, 1.0, -1.0, 1.0]);
        for (i, c) in r.clusters.iter().enumerate() {
            match c {
                Cluster::NotSignificant => {}
                Cluster::HL => assert_eq!(i % 2, 0),
                Cluster::LH => assert_eq!(i % 2, 1),
                other => panic!("site {i} labelled {other}"),
            }
        }
    }

    #[test]
    fn block_interior_is_high_high() {
        // ten high sites on a ring of 100: drawing two highs out of the other
        // 99 sites has probability 9/99 * 8/98, so interior p ~ 0.008
        let x: Vec<f64> = (0..100).map(|i| if i < 10 { 1.0 } else { 0.0 }).collect();
        let r = local_moran(&x, &ring(100), 999, 11, 0.05).unwrap();
        for i in 1..9 {
            assert_eq!(r.clusters[i], Cluster::HH, "site {i} p={}", r.p_values[i]);
        }
        // inside the large low area most random draws look the same
        assert_eq!(r.clusters[50], Cluster::NotSignificant);
    }

    #[test]
    fn mean_local_equals_global() {
        let mut g = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let x: Vec<f64> = (0..40).map(|_| g.random::<f64>() * 3.0 - 1.0).collect();
        let w = ring(40);
        let r = local_moran(&x, &w, 99, 0, 0.01).unwrap();
        assert!((r.mean_local_i() - moran_i(&x, &w).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn draws_are_distinct_and_in_range() {
        let mut g = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut buf = Vec::new();
        for _ in 0..200 {
            draw_distinct(&mut g, 10, 4, &mut buf);
            assert_eq!(buf.len(), 4);
            assert!(buf.iter().all(|&j| j < 10));
            let mut s = buf.clone();
            s.sort_unstable();
            s.dedup();
            assert_eq!(s.len(), 4);
        }
    }

    #[test]
    fn cluster_labels_roundtrip() {
        for c in [
            Cluster::HH,
            Cluster::LL,
            Cluster::HL,
            Cluster::LH,
            Cluster::NotSignificant,
        ] {
            assert_eq!(c.as_str().parse::<Cluster>().unwrap(), c);
        }
        assert!("XX".parse::<Cluster>().is_err());
    }

    #[test]
    fn errors_mirror_global() {
        assert!(matches!(
            local_moran(&[2.0; 4], &ring(4), 99, 0, 0.01),
            Err(Error::ZeroVariance)
        ));
        assert!(local_moran(&[1.0, 2.0, 3.0, 4.0], &ring(4), 99, 0, 1.5).is_err());
    }
}
