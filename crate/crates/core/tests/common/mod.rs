#![allow(dead_code)]

use ringfed_core::{
    gaussian_blobs, Algorithm, Dataset, ModelKind, OptimizerConfig, PartitionScheme, RunConfig,
};

/// Train/test split of one blob draw, so both share cluster centers.
pub fn blobs(n_train: usize, n_test: usize, seed: u64) -> (Dataset, Dataset) {
    gaussian_blobs(n_train + n_test, 6, 2, 1.5, seed)
        .unwrap()
        .split_at(n_train)
}

/// Small synthetic setup: 10 clients, half selected, logistic model.
pub fn toy_config(algorithm: Algorithm) -> RunConfig {
    RunConfig {
        algorithm,
        model: ModelKind::Logistic,
        total_clients: 10,
        select_frac: 0.5,
        rounds: 5,
        epochs: 1,
        periods: 1,
        gamma: 0.0,
        batch_size: 4,
        optimizer: OptimizerConfig {
            lr: 0.05,
            momentum: 0.9,
            lr_decay: 0.98,
        },
        partition: PartitionScheme::Iid,
        seed: 11,
        ..RunConfig::default()
    }
}
