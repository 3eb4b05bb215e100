//! Episode lifecycle: placement, first-order kinematics, collision and
//! arrival checks, rewards and observations.

use std::f64::consts::PI;
use std::sync::Arc;

use crd_vision::DepthImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WorldError};
use crate::geometry::{relative_goal_body, wrap_angle, Vec3};
use crate::raycast::{render_depth, SensorConfig};
use crate::reward::{reward_terms, RewardConfig, RewardTerms};
use crate::scenario::ScenarioSpec;

/// Side of the square start/goal box for random placement, meters.
pub const RANDOM_BOX_SIDE: f64 = 16.0;
/// Altitude band of the random placement box, meters.
pub const RANDOM_BOX_Z: [f64; 2] = [1.0, 5.0];
pub const CIRCLE_RADIUS: f64 = 12.0;
pub const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitPattern {
    Random,
    Circle,
}

/// Where the avoidance reward takes `d_min` from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DminSource {
    /// Exact geometry of the world.
    #[default]
    GroundTruth,
    /// Smallest reading of the UAV's own depth image.
    Sensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    pub num_uavs: usize,
    pub init_pattern: InitPattern,
    pub max_steps: usize,
    /// Seconds.
    pub dt: f64,
    /// Meters.
    pub uav_radius: f64,
    pub sensor: SensorConfig,
    pub reward: RewardConfig,
    pub d_min_source: DminSource,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            num_uavs: 1,
            init_pattern: InitPattern::Random,
            max_steps: 400,
            dt: 0.1,
            uav_radius: 0.3,
            sensor: SensorConfig::default(),
            reward: RewardConfig::default(),
            d_min_source: DminSource::GroundTruth,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_uavs == 0 {
            return Err(WorldError::Config("num_uavs must be >= 1".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(WorldError::Config(format!("dt {} must be > 0", self.dt)));
        }
        if self.max_steps == 0 {
            return Err(WorldError::Config("max_steps must be > 0".into()));
        }
        if !(self.uav_radius > 0.0) {
            return Err(WorldError::Config("uav_radius must be > 0".into()));
        }
        self.sensor.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ActionCommand {
    /// Forward speed, m/s.
    pub vx: f64,
    /// Climb speed, m/s.
    pub vz: f64,
    /// Yaw rate, rad/s.
    pub vw: f64,
}

impl ActionCommand {
    pub const LOW: [f64; 3] = [0.0, -1.0, -1.0];
    pub const HIGH: [f64; 3] = [2.0, 1.0, 1.0];

    pub const fn new(vx: f64, vz: f64, vw: f64) -> Self {
        ActionCommand { vx, vz, vw }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        ActionCommand::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.vx, self.vz, self.vw]
    }

    pub fn clamped(self) -> Self {
        let a = self.to_array();
        ActionCommand::from_array(std::array::from_fn(|i| {
            let v = if a[i].is_nan() { 0.0 } else { a[i] };
            v.clamp(Self::LOW[i], Self::HIGH[i])
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UavState {
    pub position: Vec3,
    /// Radians, in (-pi, pi].
    pub yaw: f64,
    /// Last applied command `[vx, vz, vw]`.
    pub velocity: [f64; 3],
    pub goal: Vec3,
    /// False once crashed.
    pub alive: bool,
    pub arrived: bool,
    /// Meters flown.
    pub path_length: f64,
}

impl UavState {
    pub fn terminal(&self) -> bool {
        !self.alive || self.arrived
    }

    pub fn distance_to_goal(&self) -> f64 {
        self.position.distance(self.goal)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub depth: DepthImage,
    /// Last applied command `[vx, vz, vw]`.
    pub velocity: [f64; 3],
    /// Goal in the body frame (forward, left, up), meters.
    pub relative_goal: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Event {
    /// Moved this step; still flying.
    Flying,
    Arrived,
    Crashed,
    /// Still flying when the step budget ran out.
    Timeout,
    /// Was already terminal; nothing happened.
    Frozen,
}

impl Event {
    pub fn name(self) -> &'static str {
        match self {
            Event::Flying => "",
            Event::Arrived => "arrived",
            Event::Crashed => "crashed",
            Event::Timeout => "timeout",
            Event::Frozen => "frozen",
        }
    }
}

/// Per-UAV diagnostics of one step; enough to recompute the reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub active: bool,
    pub d_min: f64,
    pub d_t: f64,
    pub d_prev: f64,
    pub path_increment: f64,
    pub crashed: bool,
    pub arrived: bool,
    pub event: Event,
    pub terms: RewardTerms,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observations: Vec<Observation>,
    pub rewards: Vec<f64>,
    /// Per UAV: arrived or crashed. Running out of steps is not a done.
    pub dones: Vec<bool>,
    pub episode_done: bool,
    pub info: Vec<StepInfo>,
}

/// Distance from `p` to the nearest obstacle surface, terrain, bounds face or
/// other UAV surface (spheres of `uav_radius` at `others`). `+inf` when the
/// world is empty.
pub fn min_obstacle_distance(spec: &ScenarioSpec, p: Vec3, others: &[Vec3], uav_radius: f64) -> f64 {
    let mut d = static_clearance(spec, p);
    for q in others {
        d = d.min((p.distance(*q) - uav_radius).max(0.0));
    }
    d
}

fn static_clearance(spec: &ScenarioSpec, p: Vec3) -> f64 {
    let mut d = f64::INFINITY;
    for o in &spec.obstacles {
        d = d.min(o.signed_distance(p).max(0.0));
    }
    if let Some(t) = &spec.terrain {
        d = d.min(t.distance(p));
    }
    if let Some(b) = &spec.bounds {
        d = d.min(b.interior_clearance(p));
    }
    d
}

fn collides(spec: &ScenarioSpec, p: Vec3, uav_radius: f64) -> bool {
    let outside = spec.bounds.as_ref().is_some_and(|b| !b.contains(p));
    outside || static_clearance(spec, p) < uav_radius
}

#[derive(Debug, Clone)]
pub struct World {
    spec: Arc<ScenarioSpec>,
    cfg: EpisodeConfig,
    uavs: Vec<UavState>,
    starts: Vec<Vec3>,
    observations: Vec<Observation>,
    steps: usize,
    done: bool,
}

impl World {
    /// Places the UAVs and renders their first observations.
    pub fn reset<R: Rng + ?Sized>(
        spec: Arc<ScenarioSpec>,
        cfg: EpisodeConfig,
        rng: &mut R,
    ) -> Result<(World, Vec<Observation>)> {
        cfg.validate()?;
        let pairs = match cfg.init_pattern {
            InitPattern::Random => place_random(&spec, &cfg, rng)?,
            InitPattern::Circle => place_circle(&spec, &cfg),
        };
        let uavs = pairs
            .iter()
            .map(|&(start, goal)| UavState {
                position: start,
                yaw: wrap_angle((goal.y - start.y).atan2(goal.x - start.x)),
                velocity: [0.0; 3],
                goal,
                alive: true,
                arrived: false,
                path_length: 0.0,
            })
            .collect();
        World::from_states(spec, cfg, uavs)
    }

    /// Starts an episode from explicit UAV states, e.g. a hand-built test
    /// configuration. Current positions are taken as the start points.
    pub fn from_states(
        spec: Arc<ScenarioSpec>,
        cfg: EpisodeConfig,
        uavs: Vec<UavState>,
    ) -> Result<(World, Vec<Observation>)> {
        cfg.validate()?;
        if uavs.len() != cfg.num_uavs {
            return Err(WorldError::Config(format!(
                "num_uavs is {} but {} states were given",
                cfg.num_uavs,
                uavs.len()
            )));
        }
        let mut world = World {
            spec,
            starts: uavs.iter().map(|u| u.position).collect(),
            cfg,
            uavs,
            observations: Vec::new(),
            steps: 0,
            done: false,
        };
        world.observations = (0..world.uavs.len())
            .map(|i| world.observe(i))
            .collect::<Result<_>>()?;
        let obs = world.observations.clone();
        Ok((world, obs))
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.cfg
    }

    pub fn uavs(&self) -> &[UavState] {
        &self.uavs
    }

    pub fn starts(&self) -> &[Vec3] {
        &self.starts
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    fn others(&self, i: usize) -> Vec<Vec3> {
        self.uavs
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, u)| u.position)
            .collect()
    }

    pub fn render_depth(&self, i: usize) -> Result<DepthImage> {
        let u = &self.uavs[i];
        render_depth(
            &self.spec,
            &self.cfg.sensor,
            u.position,
            u.yaw,
            &self.others(i),
            self.cfg.uav_radius,
        )
    }

    pub fn min_obstacle_distance(&self, i: usize) -> f64 {
        min_obstacle_distance(&self.spec, self.uavs[i].position, &self.others(i), self.cfg.uav_radius)
    }

    fn observe(&self, i: usize) -> Result<Observation> {
        let u = &self.uavs[i];
        Ok(Observation {
            depth: self.render_depth(i)?,
            velocity: u.velocity,
            relative_goal: relative_goal_body(u.position, u.yaw, u.goal),
        })
    }

    /// Advances every non-terminal UAV by one `dt`. `actions` holds one
    /// command per UAV; entries for terminal UAVs are ignored.
    pub fn step(&mut self, actions: &[ActionCommand]) -> Result<StepOutcome> {
        if self.done {
            return Err(WorldError::Lifecycle("step called on a finished episode".into()));
        }
        let n = self.uavs.len();
        if actions.len() != n {
            return Err(WorldError::Config(format!("expected {n} actions, got {}", actions.len())));
        }
        let dt = self.cfg.dt;
        let active: Vec<bool> = self.uavs.iter().map(|u| !u.terminal()).collect();
        let d_prev: Vec<f64> = self.uavs.iter().map(UavState::distance_to_goal).collect();
        let mut increments = vec![0.0; n];
        for (i, u) in self.uavs.iter_mut().enumerate() {
            if !active[i] {
                continue;
            }
            let a = actions[i].clamped();
            u.yaw = wrap_angle(u.yaw + a.vw * dt);
            let before = u.position;
            u.position = Vec3::new(
                before.x + a.vx * u.yaw.cos() * dt,
                before.y + a.vx * u.yaw.sin() * dt,
                before.z + a.vz * dt,
            );
            increments[i] = u.position.distance(before);
            u.path_length += increments[i];
            u.velocity = a.to_array();
        }

        // collisions are judged on the post-move configuration
        let r = self.cfg.uav_radius;
        let mut crashed = vec![false; n];
        for i in (0..n).filter(|&i| active[i]) {
            let p = self.uavs[i].position;
            let hit_uav = (0..n).any(|j| j != i && p.distance(self.uavs[j].position) < 2.0 * r);
            crashed[i] = hit_uav || collides(&self.spec, p, r);
        }
        let threshold = self.cfg.reward.arrival_threshold;
        for i in (0..n).filter(|&i| active[i]) {
            let u = &mut self.uavs[i];
            if crashed[i] {
                u.alive = false;
            } else if u.distance_to_goal() < threshold {
                u.arrived = true;
            }
        }
        self.steps += 1;
        self.done = self.uavs.iter().all(UavState::terminal) || self.steps >= self.cfg.max_steps;

        let mut rewards = vec![0.0; n];
        let mut info = Vec::with_capacity(n);
        for i in 0..n {
            let u = &self.uavs[i];
            let d_t = u.distance_to_goal();
            if !active[i] {
                info.push(StepInfo {
                    active: false,
                    d_min: f64::INFINITY,
                    d_t,
                    d_prev: d_prev[i],
                    path_increment: 0.0,
                    crashed: !u.alive,
                    arrived: u.arrived,
                    event: Event::Frozen,
                    terms: RewardTerms { goal: 0.0, collision: 0.0 },
                });
                continue;
            }
            self.observations[i] = self.observe(i)?;
            let d_min = match self.cfg.d_min_source {
                DminSource::GroundTruth => self.min_obstacle_distance(i),
                DminSource::Sensor => self.observations[i]
                    .depth
                    .data()
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min),
            };
            let terms = reward_terms(d_t, d_prev[i], d_min, !u.alive, u.arrived, &self.cfg.reward);
            rewards[i] = terms.total();
            let event = if !u.alive {
                Event::Crashed
            } else if u.arrived {
                Event::Arrived
            } else if self.done {
                Event::Timeout
            } else {
                Event::Flying
            };
            info.push(StepInfo {
                active: true,
                d_min,
                d_t,
                d_prev: d_prev[i],
                path_increment: increments[i],
                crashed: !u.alive,
                arrived: u.arrived,
                event,
                terms,
            });
        }
        Ok(StepOutcome {
            observations: self.observations.clone(),
            rewards,
            dones: self.uavs.iter().map(UavState::terminal).collect(),
            episode_done: self.done,
            info,
        })
    }
}

fn place_circle(spec: &ScenarioSpec, cfg: &EpisodeConfig) -> Vec<(Vec3, Vec3)> {
    let ring_top = spec.terrain.as_ref().map_or(0.0, |t| {
        (0..720)
            .map(|k| {
                let a = k as f64 * PI / 360.0;
                t.height_at(CIRCLE_RADIUS * a.cos(), CIRCLE_RADIUS * a.sin())
            })
            .fold(0.0, f64::max)
    });
    let z = (ring_top + 1.0).max(3.0);
    let n = cfg.num_uavs;
    (0..n)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / n as f64;
            let at = |a: f64| Vec3::new(CIRCLE_RADIUS * a.cos(), CIRCLE_RADIUS * a.sin(), z);
            (at(a), at(a + PI))
        })
        .collect()
}

fn place_random<R: Rng + ?Sized>(
    spec: &ScenarioSpec,
    cfg: &EpisodeConfig,
    rng: &mut R,
) -> Result<Vec<(Vec3, Vec3)>> {
    let r = cfg.uav_radius;
    let half = RANDOM_BOX_SIDE / 2.0;
    let mut attempts = 0usize;
    let mut draw = |taken: &[Vec3], extra: &dyn Fn(Vec3) -> bool| -> Result<Vec3> {
        loop {
            if attempts >= MAX_PLACEMENT_ATTEMPTS {
                return Err(WorldError::TooDense(attempts));
            }
            attempts += 1;
            let p = Vec3::new(
                rng.random_range(-half..half),
                rng.random_range(-half..half),
                rng.random_range(RANDOM_BOX_Z[0]..RANDOM_BOX_Z[1]),
            );
            let clear = static_clearance(spec, p) >= 2.0 * r
                && taken.iter().all(|q| p.distance(*q) >= 2.0 * r)
                && extra(p);
            if clear {
                return Ok(p);
            }
        }
    };
    let mut starts = Vec::with_capacity(cfg.num_uavs);
    for _ in 0..cfg.num_uavs {
        let p = draw(&starts, &|_| true)?;
        starts.push(p);
    }
    let min_gap = 2.0 * cfg.reward.arrival_threshold;
    let mut goals: Vec<Vec3> = Vec::with_capacity(cfg.num_uavs);
    for s in &starts {
        let s = *s;
        let g = draw(&goals, &|p: Vec3| p.distance(s) >= min_gap)?;
        goals.push(g);
    }
    Ok(starts.into_iter().zip(goals).collect())
}
