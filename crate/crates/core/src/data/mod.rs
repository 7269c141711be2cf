//! Datasets: IDX image/label files, seeded Gaussian blobs, batching.

mod blobs;
mod idx;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use blobs::{blob_centers, make_blobs, make_blobs_split};
pub use idx::{
    dataset_from_idx, encode_idx_labels, load_idx, parse_idx_images, parse_idx_labels, write_idx,
    IdxImages, IMAGES_MAGIC, LABELS_MAGIC,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Entropy,
}

/// Global mean / standard deviation applied as `(x - mean) / std`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `[n, ..sample_shape]`.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
    pub normalization: Option<Normalization>,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        if images.shape().len() < 2 {
            return Err(Error::Shape(format!(
                "dataset images need a leading sample dimension, got {:?}",
                images.shape()
            )));
        }
        if images.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} samples but {} labels",
                images.rows(),
                labels.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::Shape("num_classes must be positive".into()));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label: l,
                num_classes,
            });
        }
        Ok(Self {
            images,
            labels,
            num_classes,
            split,
            normalization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    /// Mean and (population) standard deviation over every value.
    pub fn normalization_stats(&self) -> Normalization {
        let data = self.images.data();
        let n = data.len().max(1) as f64;
        let mean = data.iter().sum::<f64>() / n;
        let var = data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        Normalization { mean, std }
    }

    /// Applies `norm` and records it; a dataset is normalised at most once.
    pub fn normalize(&mut self, norm: Normalization) -> Result<()> {
        if self.normalization.is_some() {
            return Err(Error::Config("dataset is already normalized".into()));
        }
        for v in self.images.data_mut() {
            *v = (*v - norm.mean) / norm.std;
        }
        self.normalization = Some(norm);
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: self.images.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            split: self.split,
            normalization: self.normalization,
        }
    }

    pub fn with_split(mut self, split: Split) -> Dataset {
        self.split = split;
        self
    }
}

/// Mini-batches of `(images, labels)`; the final partial batch is kept.
pub struct Batches<'a> {
    data: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

/// Iterates `data` in batches of `batch_size`. With `shuffle`, the order is a
/// permutation drawn from `(seed, epoch)`; otherwise it is the stored order.
pub fn batches(data: &Dataset, batch_size: usize, seed: u64, epoch: u64, shuffle: bool) -> Batches<'_> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch);
        order.shuffle(&mut rng);
    }
    Batches {
        data,
        order,
        batch_size: batch_size.max(1),
        pos: 0,
    }
}

impl Batches<'_> {
    /// Sample indices in iteration order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl Iterator for Batches<'_> {
    type Item = (Tensor, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        let images = self.data.images.select_rows(idx);
        let labels = idx.iter().map(|&i| self.data.labels[i]).collect();
        Some((images, labels))
    }
}
