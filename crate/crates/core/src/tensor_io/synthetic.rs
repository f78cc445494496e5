use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use super::ActivationMatrix;
use crate::error::{Error, Result};
use crate::gazetteer::PlaceRow;
use crate::rng;

/// Planted signal for synthetic activations.
#[derive(Debug, Clone, PartialEq)]
pub enum Signal {
    /// Standardized latitude plus noise.
    LatGradient,
    /// 1 for places whose prompt qualifier equals `qualifier`
    /// (e.g. `"Scotland"`), 0 elsewhere, plus noise.
    RegionBlock {
        qualifier: String,
    },
    IidNoise,
    /// `round(fraction * n_units)` lat-gradient units, the rest pure noise.
    Mixture {
        fraction: f64,
    },
}

#[derive(Debug, Clone)]
pub struct SyntheticActivations {
    pub matrix: ActivationMatrix,
    /// Units that carry a planted signal, ascending.
    pub signal_units: Vec<usize>,
}

fn standardized_latitude(places: &[PlaceRow]) -> Result<Vec<f64>> {
    let n = places.len() as f64;
    let mean = places.iter().map(|p| p.latitude).sum::<f64>() / n;
    let var = places
        .iter()
        .map(|p| (p.latitude - mean).powi(2))
        .sum::<f64>()
        / n;
    if var <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    let sd = var.sqrt();
    Ok(places.iter().map(|p| (p.latitude - mean) / sd).collect())
}

/// Generates an `n_places x n_units` matrix bound to the places' geoname ids.
/// Each unit draws its noise from its own stream, so the output depends only
/// on `seed`.
pub fn generate_synthetic(
    places: &[PlaceRow],
    signal: &Signal,
    n_units: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<SyntheticActivations> {
    if places.is_empty() {
        return Err(Error::Empty("places"));
    }
    if n_units == 0 {
        return Err(Error::invalid("n_units must be at least 1"));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::invalid(format!(
            "noise_sd must be non-negative, got {noise_sd}"
        )));
    }
    let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::invalid(e.to_string()))?;

    let (pattern, signal_units): (Vec<f64>, Vec<usize>) = match signal {
        Signal::LatGradient => (standardized_latitude(places)?, (0..n_units).collect()),
        Signal::RegionBlock { qualifier } => {
            let block: Vec<f64> = places
                .iter()
                .map(|p| if p.qualifier() == qualifier { 1.0 } else { 0.0 })
                .collect();
            if !block.contains(&1.0) {
                return Err(Error::invalid(format!(
                    "no place lies in block {qualifier:?}"
                )));
            }
            (block, (0..n_units).collect())
        }
        Signal::IidNoise => (vec![0.0; places.len()], Vec::new()),
        Signal::Mixture { fraction } => {
            if !(0.0..=1.0).contains(fraction) {
                return Err(Error::invalid(format!(
                    "mixture fraction {fraction} outside [0, 1]"
                )));
            }
            let n_signal = (fraction * n_units as f64).round() as usize;
            let mut order: Vec<usize> = (0..n_units).collect();
            order.shuffle(&mut rng::stream(rng::mix(seed), u64::MAX));
            let mut chosen = order[..n_signal].to_vec();
            chosen.sort_unstable();
            (standardized_latitude(places)?, chosen)
        }
    };

    let n = places.len();
    let mut values = vec![0.0f32; n * n_units];
    for unit in 0..n_units {
        let mut stream = rng::stream(seed, unit as u64);
        let carries = signal_units.binary_search(&unit).is_ok();
        for (i, &base) in pattern.iter().enumerate() {
            let s = if carries { base } else { 0.0 };
            values[i * n_units + unit] = (s + noise.sample(&mut stream)) as f32;
        }
    }
    let matrix = ActivationMatrix::new(0, n, n_units, values)?
        .with_binding(places.iter().map(|p| p.geoname_id).collect())?;
    Ok(SyntheticActivations {
        matrix,
        signal_units,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gazetteer::Region;

    fn places() -> Vec<PlaceRow> {
        [
            (50.0, "England"),
            (52.0, "England"),
            (56.0, "Scotland"),
            (57.5, "Scotland"),
        ]
        .iter()
        .enumerate()
        .map(|(i, &(lat, q))| PlaceRow {
            row_index: i,
            geoname_id: 100 + i as u64,
            name: format!("P{i}"),
            latitude: lat,
            longitude: -2.0,
            region: Region::Uk,
            prompt: format!("P{i}, {q}"),
        })
        .collect()
    }

    #[test]
    fn noiseless_lat_gradient_is_standardized_latitude() {
        let p = places();
        let out = generate_synthetic(&p, &Signal::LatGradient, 3, 0.0, 1).unwrap();
        let z = standardized_latitude(&p).unwrap();
        for unit in 0..3 {
            let col = out.matrix.column(unit);
            for (a, b) in col.iter().zip(&z) {
                assert_eq!(*a, *b as f32 as f64);
            }
        }
        assert_eq!(out.matrix.row_binding().unwrap(), &[100, 101, 102, 103]);
    }

    #[test]
    fn iid_noise_is_deterministic() {
        let p = places();
        let a = generate_synthetic(&p, &Signal::IidNoise, 5, 1.0, 42).unwrap();
        let b = generate_synthetic(&p, &Signal::IidNoise, 5, 1.0, 42).unwrap();
        let c = generate_synthetic(&p, &Signal::IidNoise, 5, 1.0, 43).unwrap();
        assert_eq!(a.matrix, b.matrix);
        assert_ne!(a.matrix, c.matrix);
        assert!(a.signal_units.is_empty());
    }

    #[test]
    fn mixture_plants_exact_count() {
        let p = places();
        let out = generate_synthetic(&p, &Signal::Mixture { fraction: 0.1 }, 100, 0.0, 9).unwrap();
        assert_eq!(out.signal_units.len(), 10);
        for unit in 0..100 {
            let nonzero = out.matrix.column(unit).iter().any(|v| *v != 0.0);
            assert_eq!(nonzero, out.signal_units.contains(&unit));
        }
    }

    #[test]
    fn region_block_marks_qualifier() {
        let p = places();
        let sig = Signal::RegionBlock {
            qualifier: "Scotland".into(),
        };
        let out = generate_synthetic(&p, &sig, 1, 0.0, 0).unwrap();
        assert_eq!(out.matrix.column(0), vec![0.0, 0.0, 1.0, 1.0]);
        let missing = Signal::RegionBlock {
            qualifier: "Wales".into(),
        };
        assert!(generate_synthetic(&p, &missing, 1, 0.0, 0).is_err());
    }

    #[test]
    fn empty_places_rejected() {
        assert!(matches!(
            generate_synthetic(&[], &Signal::IidNoise, 1, 1.0, 0),
            Err(Error::Empty(_))
        ));
    }
}
