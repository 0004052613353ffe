//! Shared fixtures for the criterion benches under `benches/`.

use dpsynth_core::eval::two_gaussian_benchmark;
use dpsynth_core::pipeline::{fit, FitOutput};
use dpsynth_core::rng::seeded;
use dpsynth_core::{DatasetTable, HyperParams, PrivacySpec, TrainConfig, VarianceMode};

/// Two-Gaussian rows with `d` features.
pub fn table(d: usize, n: usize, seed: u64) -> DatasetTable {
    two_gaussian_benchmark(d, n, &mut seeded(seed)).expect("valid benchmark size")
}

/// Small model settings that fit in well under a second.
pub fn small_hyper(d_prime: usize) -> HyperParams {
    HyperParams {
        d_prime,
        components: 2,
        em_iterations: 5,
        hidden: 32,
        train: TrainConfig {
            batch_size: 100,
            epochs: 1,
            ..TrainConfig::default()
        },
        variance_mode: VarianceMode::Frozen,
        ..HyperParams::default()
    }
}

/// A fitted model over `table(d, n, seed)` at ε = 2.
pub fn fitted(d: usize, n: usize, seed: u64) -> FitOutput {
    let data = table(d, n, seed);
    fit(&data, &PrivacySpec::new(2.0, 1e-5), &small_hyper(d.min(5)), seed).expect("fit succeeds")
}
