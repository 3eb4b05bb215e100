#![allow(dead_code)]

use crd_core::{AgentSpec, BlockMask, LatentConfig, ReplayBuffer, RunConfig, SacConfig, Transition};
use crd_vision::InterventionConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_latent() -> LatentConfig {
    LatentConfig {
        n1: 2,
        n2: 2,
        n3: 4,
        channels: [2, 4, 4, 4],
        feature_dim: 8,
        ..LatentConfig::default()
    }
}

pub fn tiny_spec(batch: usize) -> AgentSpec {
    AgentSpec {
        height: 16,
        width: 16,
        max_range: 20.0,
        latent: tiny_latent(),
        sac: SacConfig {
            batch_size: batch,
            hidden: vec![16, 16],
            ..SacConfig::default()
        },
        mask: BlockMask::causal(),
        intervention: Some(InterventionConfig::default()),
    }
}

pub fn random_transition(rng: &mut ChaCha8Rng, pixels: usize) -> Transition {
    let v3 = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)];
    Transition {
        depth: (0..pixels).map(|_| rng.random_range(0.5f32..20.0)).collect(),
        goal: v3(rng, -10.0, 10.0),
        velocity: v3(rng, -1.0, 1.0),
        action: [rng.random_range(0.0..2.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
        reward: rng.random_range(-1.0..1.0),
        next_depth: (0..pixels).map(|_| rng.random_range(0.5f32..20.0)).collect(),
        next_goal: v3(rng, -10.0, 10.0),
        next_velocity: v3(rng, -1.0, 1.0),
        done: rng.random_bool(0.1),
    }
}

pub fn random_buffer(seed: u64, n: usize) -> ReplayBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = ReplayBuffer::new(1000, 256).unwrap();
    for _ in 0..n {
        b.push(random_transition(&mut rng, 256)).unwrap();
    }
    b
}

/// Small 16x16 trainer config for fast runs.
pub fn smoke_config(dir: &std::path::Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.output_dir = dir.to_path_buf();
    cfg.train.num_uavs = 2;
    cfg.train.max_episodes = 2;
    cfg.train.updates_per_episode = 4;
    cfg.train.warmup_transitions = 8;
    cfg.train.checkpoint_interval = 0;
    cfg.train.eval_interval = 0;
    cfg.episode.max_steps = 20;
    cfg.episode.sensor.height = 16;
    cfg.episode.sensor.width = 16;
    cfg.latent = tiny_latent();
    cfg.sac.batch_size = 8;
    cfg.sac.hidden = vec![16, 16];
    cfg
}
