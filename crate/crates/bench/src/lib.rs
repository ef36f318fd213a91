//! Fixtures for the planning and training benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use splt_core::data::windows::WindowIndex;
use splt_core::data::{collect_toy_dataset, sample_windows, Batch, Dataset, IdmDistribution};
use splt_core::env::ToyConfig;
use splt_core::models::splt::SpltConfig;
use splt_core::models::SpltModel;
use splt_core::planner::History;

/// A small toy dataset.
pub fn toy_dataset(steps: usize) -> Dataset {
    collect_toy_dataset(steps, &IdmDistribution::default(), &ToyConfig::default(), 0.99, 0).expect("toy data")
}

/// An untrained toy SPLT model with 8 policy codes and 4 world codes.
pub fn toy_model(dataset: &Dataset) -> SpltModel {
    SpltModel::new(SpltConfig::toy(4, 1), dataset.stats.clone(), &mut ChaCha8Rng::seed_from_u64(1)).expect("model")
}

/// The first eight steps of the first logged episode.
pub fn toy_history(dataset: &Dataset) -> History {
    let ep = &dataset.episodes[0];
    let mut h = History::new(ep.state(0).to_vec());
    for t in 0..7 {
        h.push(ep.action(t).to_vec(), ep.state(t + 1).to_vec());
    }
    h
}

/// One training batch of `size` windows.
pub fn toy_batch(dataset: &Dataset, k: usize, size: usize) -> Batch {
    let index = WindowIndex::new(dataset);
    sample_windows(dataset, &index, k, size, &mut ChaCha8Rng::seed_from_u64(2))
}
