//! Deterministic multi-UAV world: procedural scenarios, first-order
//! kinematics, ray-cast depth cameras and the navigation reward.

mod error;
pub mod geometry;
pub mod raycast;
pub mod reward;
pub mod scenario;
pub mod sim;
pub mod trajectory;

pub use error::{Result, WorldError};
pub use geometry::{body_to_world, relative_goal_body, world_to_body, wrap_angle, Aabb, Vec3};
pub use raycast::{render_depth, Scene, SensorConfig};
pub use reward::{reward, reward_terms, RewardConfig, RewardTerms};
pub use scenario::{generate_scenario, Domain, Heightfield, Obstacle, ScenarioSpec, TextureProfile};
pub use sim::{
    min_obstacle_distance, ActionCommand, DminSource, EpisodeConfig, Event, InitPattern, Observation,
    StepInfo, StepOutcome, UavState, World,
};
pub use trajectory::{TrajectoryRow, TrajectoryWriter};
