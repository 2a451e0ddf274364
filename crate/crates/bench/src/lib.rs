//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ringfed_core::{ClientUpdate, Dataset, ParamVector};

pub fn random_params(k: usize, len: usize, seed: u64) -> Vec<ParamVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k)
        .map(|_| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>().into())
        .collect()
}

pub fn updates(params: Vec<ParamVector>) -> Vec<ClientUpdate> {
    params
        .into_iter()
        .enumerate()
        .map(|(client_id, params)| ClientUpdate {
            client_id,
            params,
            num_examples: 600,
            steps: 300,
            control_delta: None,
        })
        .collect()
}

/// MNIST-shaped data: 784 features, about 20% nonzero, 10 classes.
pub fn mnist_like(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features = (0..n * 784)
        .map(|_| if rng.random_bool(0.2) { rng.random::<f64>() } else { 0.0 })
        .collect();
    let labels = (0..n).map(|i| i % 10).collect();
    Dataset::new(features, labels, 784, 10).expect("valid shape")
}
