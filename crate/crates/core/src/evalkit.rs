//! Navigation metrics (success rate, SPL, extra distance, average speed) and
//! the scenario x initialisation x swarm-size evaluation grid.

use std::io::Write;
use std::sync::Arc;

use crd_world::{
    generate_scenario, ActionCommand, EpisodeConfig, InitPattern, Observation, ScenarioSpec, TrajectoryWriter,
    World,
};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::Agent;
use crate::error::{CoreError, Result};
use crate::policy::ActionMode;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Outcome of one UAV in one episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub success: bool,
    /// Straight-line distance from the start to the arrival sphere, meters.
    pub shortest_path: f64,
    pub actual_path: f64,
    pub steps: usize,
    /// Path length over flight time, m/s.
    pub mean_speed: f64,
    pub collided: bool,
}

impl EpisodeRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.shortest_path > 0.0 && self.shortest_path.is_finite()) {
            return Err(CoreError::MalformedRecord(format!(
                "shortest path {} must be positive",
                self.shortest_path
            )));
        }
        if !(self.actual_path >= 0.0 && self.actual_path.is_finite()) {
            return Err(CoreError::MalformedRecord(format!(
                "actual path {} must be >= 0",
                self.actual_path
            )));
        }
        if self.success && self.collided {
            return Err(CoreError::MalformedRecord("a collided UAV cannot succeed".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> MeanStd {
        if values.is_empty() {
            return MeanStd::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }
}

fn checked(records: &[EpisodeRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(CoreError::EmptySuite);
    }
    records.iter().try_for_each(EpisodeRecord::validate)
}

/// Success weighted by path length, percent.
pub fn spl(records: &[EpisodeRecord]) -> Result<f64> {
    checked(records)?;
    let total: f64 = records
        .iter()
        .map(|r| {
            if r.success {
                r.shortest_path / r.shortest_path.max(r.actual_path)
            } else {
                0.0
            }
        })
        .sum();
    Ok(100.0 * total / records.len() as f64)
}

pub fn success_rate(records: &[EpisodeRecord]) -> Result<f64> {
    checked(records)?;
    let n = records.iter().filter(|r| r.success).count();
    Ok(100.0 * n as f64 / records.len() as f64)
}

/// `p - l` over successful UAVs only; zero when nobody succeeded.
pub fn extra_distance(records: &[EpisodeRecord]) -> Result<MeanStd> {
    checked(records)?;
    let d: Vec<f64> = records
        .iter()
        .filter(|r| r.success)
        .map(|r| r.actual_path - r.shortest_path)
        .collect();
    Ok(MeanStd::of(&d))
}

/// Per-UAV mean speeds over all UAVs.
pub fn average_speed(records: &[EpisodeRecord]) -> Result<MeanStd> {
    checked(records)?;
    let v: Vec<f64> = records.iter().map(|r| r.mean_speed).collect();
    Ok(MeanStd::of(&v))
}

/// Decentralized controller: one command from one UAV's own observation.
pub trait Controller {
    fn act(&mut self, obs: &Observation, rng: &mut dyn RngCore) -> Result<ActionCommand>;
}

/// Scripted oracle: flies the straight line to the goal at the largest
/// feasible speed. Relies on the UAV facing its goal at reset.
#[derive(Debug, Clone, Copy, Default)]
pub struct GoToGoal;

impl Controller for GoToGoal {
    fn act(&mut self, obs: &Observation, _rng: &mut dyn RngCore) -> Result<ActionCommand> {
        let g = obs.relative_goal;
        let heading = g.y.atan2(g.x);
        if g.x <= 0.0 || heading.abs() > 1e-6 {
            // turn in place, one 0.1 s step's worth at a time
            return Ok(ActionCommand::new(0.0, 0.0, heading / 0.1).clamped());
        }
        let hi = ActionCommand::HIGH;
        let mut k = hi[0] / g.x;
        if g.z != 0.0 {
            k = k.min(hi[1] / g.z.abs());
        }
        Ok(ActionCommand::new(k * g.x, k * g.z, 0.0))
    }
}

/// The learned policy as a controller.
pub struct AgentController<'a> {
    pub agent: &'a Agent,
    pub mode: ActionMode,
}

impl Controller for AgentController<'_> {
    fn act(&mut self, obs: &Observation, rng: &mut dyn RngCore) -> Result<ActionCommand> {
        self.agent.select_action(obs, self.mode, rng)
    }
}

/// Runs one episode to completion and returns one record per UAV.
pub fn run_episode<C, W>(
    controller: &mut C,
    spec: Arc<ScenarioSpec>,
    cfg: &EpisodeConfig,
    rng: &mut ChaCha8Rng,
    mut trajectory: Option<(&mut TrajectoryWriter<W>, usize)>,
) -> Result<Vec<EpisodeRecord>>
where
    C: Controller + ?Sized,
    W: Write,
{
    let (mut world, mut obs) = World::reset(spec, cfg.clone(), rng)?;
    if let Some((w, ep)) = trajectory.as_mut() {
        w.record_reset(*ep, &world)?;
    }
    let n = cfg.num_uavs;
    let mut flight_steps = vec![0usize; n];
    while !world.is_done() {
        let mut actions = Vec::with_capacity(n);
        for (i, o) in obs.iter().enumerate() {
            if world.uavs()[i].terminal() {
                actions.push(ActionCommand::new(0.0, 0.0, 0.0));
            } else {
                actions.push(controller.act(o, rng)?);
            }
        }
        let out = world.step(&actions)?;
        for (i, info) in out.info.iter().enumerate() {
            if info.active {
                flight_steps[i] += 1;
            }
        }
        if let Some((w, ep)) = trajectory.as_mut() {
            w.record_step(*ep, &world, &out)?;
        }
        obs = out.observations;
    }
    let thr = cfg.reward.arrival_threshold;
    Ok(world
        .uavs()
        .iter()
        .zip(world.starts())
        .zip(&flight_steps)
        .map(|((u, s), &steps)| EpisodeRecord {
            success: u.arrived && u.alive,
            shortest_path: s.distance(u.goal) - thr,
            actual_path: u.path_length,
            steps,
            mean_speed: if steps > 0 { u.path_length / (steps as f64 * cfg.dt) } else { 0.0 },
            collided: !u.alive,
        })
        .collect())
}

/// Where an evaluation cell takes its world from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioSource {
    /// Regenerated from the named domain for every episode.
    Named { domain: String, obstacles: bool },
    Fixed(ScenarioSpec),
}

impl ScenarioSource {
    pub fn named(domain: &str) -> Self {
        ScenarioSource::Named {
            domain: domain.to_string(),
            obstacles: true,
        }
    }

    pub fn label(&self) -> String {
        match self {
            ScenarioSource::Named { domain, obstacles: true } => domain.clone(),
            ScenarioSource::Named { domain, obstacles: false } => format!("{domain}_open"),
            ScenarioSource::Fixed(s) => s.domain_name.clone(),
        }
    }

    pub fn build(&self, seed: u64) -> Result<Arc<ScenarioSpec>> {
        match self {
            ScenarioSource::Named { domain, obstacles } => {
                let mut s = generate_scenario(domain, seed)?;
                if !obstacles {
                    s.obstacles.clear();
                }
                Ok(Arc::new(s))
            }
            ScenarioSource::Fixed(s) => Ok(Arc::new(s.clone())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub scenarios: Vec<ScenarioSource>,
    pub init_patterns: Vec<InitPattern>,
    pub uav_counts: Vec<usize>,
    pub episodes_random: usize,
    pub episodes_circle: usize,
    /// Swarm size and pattern are overridden per cell.
    pub episode: EpisodeConfig,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            scenarios: ["grassland", "snow_mountain", "forest"]
                .iter()
                .map(|d| ScenarioSource::named(d))
                .collect(),
            init_patterns: vec![InitPattern::Random, InitPattern::Circle],
            uav_counts: vec![6, 8, 10, 12],
            episodes_random: 100,
            episodes_circle: 20,
            episode: EpisodeConfig::default(),
        }
    }
}

impl SuiteConfig {
    pub fn episodes_for(&self, pattern: InitPattern) -> usize {
        match pattern {
            InitPattern::Random => self.episodes_random,
            InitPattern::Circle => self.episodes_circle,
        }
    }

    pub fn cell_count(&self) -> usize {
        self.scenarios.len() * self.init_patterns.len() * self.uav_counts.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub init_pattern: InitPattern,
    pub num_uavs: usize,
    pub episodes: usize,
    pub records: usize,
    pub success_rate: f64,
    pub spl: f64,
    pub extra_distance: MeanStd,
    pub average_speed: MeanStd,
    pub collision_rate: f64,
}

impl MetricsReport {
    pub fn from_records(
        scenario: String,
        init_pattern: InitPattern,
        num_uavs: usize,
        episodes: usize,
        records: &[EpisodeRecord],
    ) -> Result<Self> {
        let collisions = records.iter().filter(|r| r.collided).count();
        Ok(MetricsReport {
            scenario,
            init_pattern,
            num_uavs,
            episodes,
            records: records.len(),
            success_rate: success_rate(records)?,
            spl: spl(records)?,
            extra_distance: extra_distance(records)?,
            average_speed: average_speed(records)?,
            collision_rate: 100.0 * collisions as f64 / records.len() as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEpisode {
    pub cell: usize,
    pub episode: usize,
    pub uav: usize,
    #[serde(flatten)]
    pub record: EpisodeRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub schema_version: u32,
    pub seed: u64,
    pub config: SuiteConfig,
    pub cells: Vec<MetricsReport>,
    #[serde(skip)]
    pub episodes: Vec<CellEpisode>,
}

/// Random stream of one episode: `(cell << 32) | episode` on the suite seed.
pub fn episode_rng(seed: u64, cell: usize, episode: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((cell as u64) << 32) | episode as u64);
    rng
}

/// Evaluates `controller` over every cell of the grid. Each episode
/// regenerates its scenario from its own random stream, so results do not
/// depend on execution order.
pub fn run_suite<C: Controller + ?Sized>(controller: &mut C, suite: &SuiteConfig, seed: u64) -> Result<SuiteReport> {
    if suite.cell_count() == 0 {
        return Err(CoreError::EmptySuite);
    }
    let mut cells = Vec::new();
    let mut episodes = Vec::new();
    let mut cell = 0;
    for source in &suite.scenarios {
        for &pattern in &suite.init_patterns {
            for &count in &suite.uav_counts {
                let n_ep = suite.episodes_for(pattern);
                if n_ep == 0 {
                    return Err(CoreError::EmptySuite);
                }
                let cfg = EpisodeConfig {
                    num_uavs: count,
                    init_pattern: pattern,
                    ..suite.episode.clone()
                };
                let mut records = Vec::new();
                for ep in 0..n_ep {
                    let mut rng = episode_rng(seed, cell, ep);
                    let spec = source.build(rng.random())?;
                    let recs = run_episode::<C, std::io::Sink>(controller, spec, &cfg, &mut rng, None)?;
                    for (uav, r) in recs.iter().enumerate() {
                        episodes.push(CellEpisode {
                            cell,
                            episode: ep,
                            uav,
                            record: *r,
                        });
                    }
                    records.extend(recs);
                }
                cells.push(MetricsReport::from_records(source.label(), pattern, count, n_ep, &records)?);
                cell += 1;
            }
        }
    }
    Ok(SuiteReport {
        schema_version: REPORT_SCHEMA_VERSION,
        seed,
        config: suite.clone(),
        cells,
        episodes,
    })
}

impl SuiteReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per cell.
    pub fn write_cells_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "scenario",
            "init_pattern",
            "num_uavs",
            "episodes",
            "success_rate",
            "spl",
            "extra_distance_mean",
            "extra_distance_std",
            "average_speed_mean",
            "average_speed_std",
            "collision_rate",
        ])?;
        for c in &self.cells {
            let pattern = match c.init_pattern {
                InitPattern::Random => "random",
                InitPattern::Circle => "circle",
            };
            w.write_record([
                c.scenario.clone(),
                pattern.to_string(),
                c.num_uavs.to_string(),
                c.episodes.to_string(),
                c.success_rate.to_string(),
                c.spl.to_string(),
                c.extra_distance.mean.to_string(),
                c.extra_distance.std.to_string(),
                c.average_speed.mean.to_string(),
                c.average_speed.std.to_string(),
                c.collision_rate.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// One row per UAV-episode.
    pub fn write_episodes_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "cell",
            "episode",
            "uav",
            "success",
            "shortest_path",
            "actual_path",
            "steps",
            "mean_speed",
            "collided",
        ])?;
        for e in &self.episodes {
            let r = &e.record;
            w.write_record([
                e.cell.to_string(),
                e.episode.to_string(),
                e.uav.to_string(),
                (r.success as u8).to_string(),
                r.shortest_path.to_string(),
                r.actual_path.to_string(),
                r.steps.to_string(),
                r.mean_speed.to_string(),
                (r.collided as u8).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
