use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{Error, Result};

const MAX_MEAN_DRAWS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticParams {
    pub classes: usize,
    pub features: usize,
    pub per_class: usize,
    pub spread: f64,
    pub seed: u64,
}

impl SyntheticParams {
    pub fn generate(&self) -> Result<Dataset> {
        make_synthetic(self.classes, self.features, self.per_class, self.spread, self.seed)
    }
}

/// Isotropic Gaussian blobs, one per class.
///
/// Class means are uniform in `[-1, 1]^features`, redrawn until every pair is
/// at least `4 * spread` apart. Rows are grouped by class.
pub fn make_synthetic(classes: usize, features: usize, per_class: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if classes < 2 || features < 2 || per_class < 1 || !(spread > 0.0) || !spread.is_finite() {
        return Err(Error::invalid(format!(
            "synthetic blobs need classes >= 2, features >= 2, per_class >= 1, spread > 0 \
             (got {classes}, {features}, {per_class}, {spread})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let min_dist = 4.0 * spread;

    let mut means: Vec<Vec<f64>> = Vec::with_capacity(classes);
    let mut draws = 0;
    while means.len() < classes {
        if draws == MAX_MEAN_DRAWS {
            return Err(Error::invalid(format!(
                "could not place {classes} class means {min_dist} apart after {MAX_MEAN_DRAWS} draws; \
                 spread {spread} is too large"
            )));
        }
        draws += 1;
        let candidate: Vec<f64> = (0..features).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let far_enough = means.iter().all(|m| {
            m.iter()
                .zip(&candidate)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
                >= min_dist
        });
        if far_enough {
            means.push(candidate);
        }
    }

    let noise = Normal::new(0.0, spread).expect("spread validated");
    let mut rows = Vec::with_capacity(classes * per_class * features);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            rows.extend(mean.iter().map(|m| m + noise.sample(&mut rng)));
            labels.push(c);
        }
    }
    Dataset::new(rows, features, labels, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_and_determinism() {
        let d = make_synthetic(10, 3, 1, 0.05, 1).unwrap();
        assert_eq!(d.len(), 10);
        let a = make_synthetic(4, 5, 7, 0.2, 99).unwrap();
        let b = make_synthetic(4, 5, 7, 0.2, 99).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, make_synthetic(4, 5, 7, 0.2, 100).unwrap());
    }

    #[test]
    fn impossible_spread_is_rejected() {
        // means live in a cube of diameter 2*sqrt(2); 4*spread = 40 cannot fit
        assert!(make_synthetic(3, 2, 5, 10.0, 0).is_err());
    }

    #[test]
    fn rejects_degenerate_parameters() {
        assert!(make_synthetic(1, 3, 5, 0.1, 0).is_err());
        assert!(make_synthetic(3, 1, 5, 0.1, 0).is_err());
        assert!(make_synthetic(3, 3, 0, 0.1, 0).is_err());
        assert!(make_synthetic(3, 3, 5, 0.0, 0).is_err());
    }
}
