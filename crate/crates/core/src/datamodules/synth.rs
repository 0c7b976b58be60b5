use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{DataError, LabeledDataset, Result};

const CENTER_RADIUS: f64 = 1.0;
const DIRECTION_SEED: u64 = 0x0b10_b5ee_d000_0000;

/// Cluster centres on the sphere of radius 1.
///
/// While `num_classes <= 2 * num_features` the centres are the signed axis
/// vertices `+e0, -e0, +e1, -e1, ...`; beyond that every centre is a fixed
/// pseudo-random direction. Centres never depend on a dataset seed, so a
/// train and a test set drawn with different seeds share them.
pub fn blob_centers(num_classes: usize, num_features: usize) -> Array2<f64> {
    let mut centers = Array2::zeros((num_classes, num_features));
    if num_classes <= 2 * num_features {
        for c in 0..num_classes {
            let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
            centers[[c, c / 2]] = sign * CENTER_RADIUS;
        }
    } else {
        for c in 0..num_classes {
            let mut rng = ChaCha8Rng::seed_from_u64(DIRECTION_SEED ^ c as u64);
            let dir: Vec<f64> = (0..num_features)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let norm = dir
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
                .max(f64::MIN_POSITIVE);
            for (j, v) in dir.iter().enumerate() {
                centers[[c, j]] = CENTER_RADIUS * v / norm;
            }
        }
    }
    centers
}

/// Class-balanced isotropic Gaussian clusters. Sample `i` has label `i % num_classes`.
pub fn synth_blobs(
    num_samples: usize,
    num_classes: usize,
    num_features: usize,
    cluster_spread: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if num_classes == 0 || num_features == 0 {
        return Err(DataError::Invalid(
            "synthetic blobs need at least one class and one feature".into(),
        ));
    }
    if num_samples < num_classes {
        return Err(DataError::Invalid(format!(
            "{num_samples} samples cannot cover {num_classes} classes"
        )));
    }
    if !(cluster_spread.is_finite() && cluster_spread >= 0.0) {
        return Err(DataError::Invalid(format!(
            "cluster spread must be finite and non-negative, got {cluster_spread}"
        )));
    }
    let noise = Normal::new(0.0, cluster_spread)
        .map_err(|e| DataError::Invalid(format!("cluster spread {cluster_spread}: {e}")))?;
    let centers = blob_centers(num_classes, num_features);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..num_samples).map(|i| i % num_classes).collect();
    let mut features = Array2::zeros((num_samples, num_features));
    for (i, &label) in labels.iter().enumerate() {
        for j in 0..num_features {
            features[[i, j]] = centers[[label, j]] + noise.sample(&mut rng);
        }
    }
    LabeledDataset::new(features, labels, num_classes)
}
