use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Dataset, Split};

/// Class centres drawn uniformly from `[-1, 1]^dim`.
pub fn blob_centers(seed: u64, num_classes: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..num_classes)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

/// Isotropic Gaussian clusters around [`blob_centers`]`(seed, ..)`.
pub fn make_blobs(
    seed: u64,
    n_per_class: usize,
    num_classes: usize,
    dim: usize,
    spread: f64,
) -> Result<Dataset> {
    make_blobs_split(seed, seed, n_per_class, num_classes, dim, spread, Split::Train)
}

/// Like [`make_blobs`], but the per-sample noise comes from `sample_seed` so
/// that several splits can share one set of centres. Samples are interleaved
/// by class (`label = i % num_classes`).
pub fn make_blobs_split(
    center_seed: u64,
    sample_seed: u64,
    n_per_class: usize,
    num_classes: usize,
    dim: usize,
    spread: f64,
    split: Split,
) -> Result<Dataset> {
    if n_per_class == 0 || num_classes == 0 || dim == 0 {
        return Err(Error::Config(
            "blobs: n_per_class, num_classes and dim must be positive".into(),
        ));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::Config(format!("blobs: spread must be non-negative, got {spread}")));
    }
    let centers = blob_centers(center_seed, num_classes, dim);
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    rng.set_stream(1);
    let n = n_per_class * num_classes;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % num_classes;
        for &c in &centers[class] {
            let noise: f64 = rng.sample(StandardNormal);
            data.push(c + spread * noise);
        }
        labels.push(class);
    }
    Dataset::new(Tensor::new(vec![n, dim], data)?, labels, num_classes, split)
}
