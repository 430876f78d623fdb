//! Shared fixtures for the benchmarks.

use pgnkit_core::environments::EnvKind;
use pgnkit_core::numerics::seeded_rng;
use pgnkit_core::pgn::{PgnConfig, PgnModel};
use pgnkit_core::{PgnVariant, QNetwork};

/// Untrained victim with the default DQN layout for `env`.
pub fn victim(env: EnvKind) -> QNetwork {
    let d = env.descriptor();
    QNetwork::xavier(d.observation_len(), &[128, 128], d.action_count, &mut seeded_rng(0)).unwrap()
}

/// First frames of `n` seeded episodes.
pub fn states(env: EnvKind, n: usize) -> Vec<Vec<f64>> {
    let mut game = env.make();
    (0..n as u64).map(|s| game.reset(s).into_pixels()).collect()
}

/// Untrained generator with the default architecture.
pub fn pgn(env: EnvKind, variant: PgnVariant) -> PgnModel {
    let cfg = PgnConfig {
        variant,
        ..PgnConfig::default()
    };
    PgnModel::new(env.descriptor().observation_len(), &cfg, &mut seeded_rng(1)).unwrap()
}
