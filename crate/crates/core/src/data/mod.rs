//! Datasets, IDX ingestion and client partitioning.

mod idx;
mod partition;
mod shard;
mod synthetic;

use crate::error::{Error, Result};
use crate::nn::Batch;

pub use idx::{load_idx, load_idx_limited};
pub use partition::{
    dirichlet_allocation, largest_remainder, partition_dirichlet, partition_iid,
    partition_pathological, sample_dirichlet, ClassAllocation, PartitionScheme, PartitionSpec,
};
pub use shard::ClientShard;
pub use synthetic::gaussian_blobs;

/// Row-major feature matrix with one class label per row.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        dim: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("feature dimension must be positive"));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::config(format!(
                "{} feature values do not form {} rows of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::config(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Dataset {
            features,
            labels,
            dim,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// The first `n` examples (or all of them, if fewer).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            features: self.features[..n * self.dim].to_vec(),
            labels: self.labels[..n].to_vec(),
            dim: self.dim,
            num_classes: self.num_classes,
        }
    }

    /// Splits into the first `n` examples and the rest.
    pub fn split_at(&self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.len());
        let part = |r: std::ops::Range<usize>| Dataset {
            features: self.features[r.start * self.dim..r.end * self.dim].to_vec(),
            labels: self.labels[r].to_vec(),
            dim: self.dim,
            num_classes: self.num_classes,
        };
        (part(0..n), part(n..self.len()))
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch<'_>> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::internal(format!(
                "index {bad} out of range for dataset of {}",
                self.len()
            )));
        }
        Batch::new(
            indices.iter().map(|&i| self.row(i)).collect(),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// Per-class counts over the given indices.
    pub fn label_histogram(&self, indices: &[usize]) -> Vec<usize> {
        let mut hist = vec![0; self.num_classes];
        for &i in indices {
            hist[self.labels[i]] += 1;
        }
        hist
    }
}
