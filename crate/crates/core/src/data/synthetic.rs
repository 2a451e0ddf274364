use rand_distr::{Distribution, Normal, StandardNormal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::seed;

/// Isotropic Gaussian clusters, one per class, with unit noise around
/// centers drawn at scale `separation`. Labels cycle through the classes.
pub fn gaussian_blobs(
    n: usize,
    dim: usize,
    num_classes: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 || dim == 0 || num_classes < 2 {
        return Err(Error::config(format!(
            "blobs need n > 0, dim > 0 and at least 2 classes (got {n}, {dim}, {num_classes})"
        )));
    }
    let spread = Normal::new(0.0, separation)
        .map_err(|e| Error::config(format!("invalid separation {separation}: {e}")))?;
    let mut rng = seed::rng_from(seed);
    let centers: Vec<f64> = (0..num_classes * dim).map(|_| spread.sample(&mut rng)).collect();
    let labels: Vec<usize> = (0..n).map(|i| i % num_classes).collect();
    let mut features = Vec::with_capacity(n * dim);
    for &y in &labels {
        for d in 0..dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            features.push(centers[y * dim + d] + z);
        }
    }
    Dataset::new(features, labels, dim, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_determinism() {
        let a = gaussian_blobs(9, 4, 3, 2.0, 1).unwrap();
        assert_eq!((a.len(), a.dim(), a.num_classes()), (9, 4, 3));
        assert_eq!(a.label_histogram(&(0..9).collect::<Vec<_>>()), [3, 3, 3]);
        let b = gaussian_blobs(9, 4, 3, 2.0, 1).unwrap();
        assert_eq!(a.row(5), b.row(5));
        assert!(gaussian_blobs(9, 4, 1, 2.0, 1).is_err());
    }
}
