//! Disentangled latent encoder, soft actor-critic, the multi-UAV training
//! loop, checkpoints and evaluation metrics.

pub mod agent;
pub mod checkpoint;
pub mod config;
mod error;
pub mod evalkit;
pub mod latent;
pub mod nn;
pub mod policy;
pub mod replay;
pub mod trainer;

pub use agent::{Agent, AgentSpec, Batch, UpdateStats};
pub use checkpoint::{Container, EntryKind, Inspection};
pub use config::{EpisodeSection, RunConfig, TrainConfig};
pub use error::{CoreError, Result};
pub use evalkit::{
    average_speed, extra_distance, run_suite, spl, success_rate, AgentController, Controller, EpisodeRecord,
    GoToGoal, MeanStd, MetricsReport, ScenarioSource, SuiteConfig, SuiteReport,
};
pub use latent::{
    AlignTarget, Block, BlockMask, Decoder, Encoder, EncoderOutput, LatentConfig, LatentLayout, LossBundle,
};
pub use policy::{ActionMode, Actor, Critic, SacConfig};
pub use replay::{ReplayBuffer, Transition};
pub use trainer::{run_ablation, AblationRow, TrainLog, TrainRecord, Trainer};
