//! Episode loop: shared-policy rollouts of every UAV into one buffer,
//! scheduled updates, evaluation, checkpoints and the block-mask ablation.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::sync::Arc;

use crd_diffcore::Tensor;
use crd_world::{generate_scenario, ActionCommand, InitPattern, ScenarioSpec, World};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{Agent, AgentSpec, UpdateStats};
use crate::checkpoint::{decode_rng, encode_rng, Container, EntryKind, Reader, Writer};
use crate::config::RunConfig;
use crate::error::{CoreError, Result};
use crate::evalkit::{run_episode, AgentController, EpisodeRecord, MetricsReport, ScenarioSource};
use crate::latent::{policy_width, BlockMask};
use crate::policy::{mean, ActionMode};
use crate::replay::{ReplayBuffer, Transition};

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub episode: usize,
    pub steps: usize,
    pub return_mean: f64,
    pub return_std: f64,
    pub successes: usize,
    pub collisions: usize,
    pub buffer_size: usize,
    pub updates: usize,
    pub l_vae: Option<f64>,
    pub l_rec: Option<f64>,
    pub l_align: Option<f64>,
    pub l_q: Option<f64>,
    pub l_pi: Option<f64>,
    pub alpha: Option<f64>,
    /// Deterministic-mode success rate, percent, on evaluation episodes.
    pub eval_success: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn total_updates(&self) -> usize {
        self.records.iter().map(|r| r.updates).sum()
    }
}

const STREAM_ENV: u64 = 1;
const STREAM_ACTION: u64 = 2;
const STREAM_UPDATE: u64 = 3;
const STREAM_EVAL: u64 = 4;

fn stream(seed: u64, s: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(s);
    r
}

/// Complete learner state: everything a checkpoint must restore.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: RunConfig,
    pub agent: Agent,
    pub buffer: ReplayBuffer,
    pub scenario: Arc<ScenarioSpec>,
    pub log: TrainLog,
    /// Episodes completed.
    pub episode: usize,
    pub rng_env: ChaCha8Rng,
    pub rng_action: ChaCha8Rng,
    pub rng_update: ChaCha8Rng,
    pub rng_eval: ChaCha8Rng,
}

pub fn agent_spec(cfg: &RunConfig) -> AgentSpec {
    let s = &cfg.episode.sensor;
    AgentSpec {
        height: s.height,
        width: s.width,
        max_range: s.max_range,
        latent: cfg.latent.clone(),
        sac: cfg.sac.clone(),
        mask: cfg.train.ablation_mask,
        intervention: cfg.train.interventions.then(|| cfg.intervention.clone()),
    }
}

/// The fixed training world of a run.
pub fn training_scenario(cfg: &RunConfig) -> Result<ScenarioSpec> {
    let mut s = generate_scenario(&cfg.train.scenario, cfg.seed)?;
    if !cfg.train.obstacles {
        s.obstacles.clear();
    }
    Ok(s)
}

fn depth_f32(d: &crd_vision::DepthImage) -> Vec<f32> {
    d.data().iter().map(|v| *v as f32).collect()
}

fn uniform_command<R: Rng + ?Sized>(rng: &mut R) -> ActionCommand {
    let (lo, hi) = (ActionCommand::LOW, ActionCommand::HIGH);
    ActionCommand::new(
        rng.random_range(lo[0]..=hi[0]),
        rng.random_range(lo[1]..=hi[1]),
        rng.random_range(lo[2]..=hi[2]),
    )
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let agent = Agent::new(agent_spec(&cfg), cfg.seed)?;
        let s = &cfg.episode.sensor;
        let buffer = ReplayBuffer::new(cfg.sac.buffer_capacity, s.height * s.width)?;
        let scenario = Arc::new(training_scenario(&cfg)?);
        let seed = cfg.seed;
        Ok(Trainer {
            agent,
            buffer,
            scenario,
            log: TrainLog::default(),
            episode: 0,
            rng_env: stream(seed, STREAM_ENV),
            rng_action: stream(seed, STREAM_ACTION),
            rng_update: stream(seed, STREAM_UPDATE),
            rng_eval: stream(seed, STREAM_EVAL),
            cfg,
        })
    }

    fn ready(&self) -> bool {
        self.buffer.len() >= self.cfg.train.warmup_transitions.max(self.cfg.sac.batch_size)
    }

    /// Rolls out one episode with the shared policy; every UAV acts on its
    /// own observation only. Returns per-UAV returns and outcome counts.
    pub fn collect_episode(&mut self) -> Result<(Vec<f64>, usize, usize, usize)> {
        let cfg = self.cfg.episode_config();
        let (mut world, mut obs) = World::reset(self.scenario.clone(), cfg, &mut self.rng_env)?;
        let n = self.cfg.train.num_uavs;
        let mut returns = vec![0.0; n];
        while !world.is_done() {
            let warm = self.buffer.len() < self.cfg.train.warmup_transitions;
            let mut actions = Vec::with_capacity(n);
            for (i, o) in obs.iter().enumerate() {
                let a = if world.uavs()[i].terminal() {
                    ActionCommand::new(0.0, 0.0, 0.0)
                } else if warm {
                    uniform_command(&mut self.rng_action)
                } else {
                    self.agent.select_action(o, ActionMode::Stochastic, &mut self.rng_action)?
                };
                actions.push(a);
            }
            let out = world.step(&actions)?;
            for i in 0..n {
                if !out.info[i].active {
                    continue;
                }
                returns[i] += out.rewards[i];
                let (o, o2) = (&obs[i], &out.observations[i]);
                self.buffer.push(Transition {
                    depth: depth_f32(&o.depth),
                    goal: o.relative_goal.to_array(),
                    velocity: o.velocity,
                    action: actions[i].clamped().to_array(),
                    reward: out.rewards[i],
                    next_depth: depth_f32(&o2.depth),
                    next_goal: o2.relative_goal.to_array(),
                    next_velocity: o2.velocity,
                    done: out.dones[i],
                })?;
            }
            obs = out.observations;
        }
        let successes = world.uavs().iter().filter(|u| u.arrived).count();
        let collisions = world.uavs().iter().filter(|u| !u.alive).count();
        Ok((returns, successes, collisions, world.steps()))
    }

    /// One gradient update; on a non-finite loss an abort snapshot is
    /// written to the output directory before the error is returned.
    pub fn update(&mut self) -> Result<UpdateStats> {
        let before = self.rng_update.clone();
        match self.agent.update(&self.buffer, &mut self.rng_update) {
            Err(CoreError::Numeric(m)) => {
                let snapshot = self.cfg.output_dir.join("abort.ckpt");
                self.rng_update = before;
                let batch = self.agent.sample_batch(&self.buffer, &mut self.rng_update.clone());
                let mut c = self.to_container()?;
                if let Ok(b) = batch {
                    let idx: Vec<f64> = b.indices.iter().map(|&i| i as f64).collect();
                    c.push_tensor("abort/batch_indices", &Tensor::from_vec(idx));
                    c.push_tensor("abort/batch_images", &b.images);
                }
                fs::create_dir_all(&self.cfg.output_dir)?;
                c.save(&snapshot)?;
                Err(CoreError::Numeric(format!("{m}; snapshot written to {}", snapshot.display())))
            }
            other => other,
        }
    }

    /// Collection, then `updates_per_episode` updates once the buffer is warm.
    pub fn run_episode(&mut self) -> Result<TrainRecord> {
        let (returns, successes, collisions, steps) = self.collect_episode()?;
        let mut stats = Vec::new();
        if self.ready() {
            for _ in 0..self.cfg.train.updates_per_episode {
                stats.push(self.update()?);
            }
        }
        self.episode += 1;
        let avg = |f: &dyn Fn(&UpdateStats) -> Option<f64>| -> Option<f64> {
            let v: Vec<f64> = stats.iter().filter_map(f).collect();
            (!v.is_empty()).then(|| mean(&v))
        };
        let eval_success = if self.cfg.train.eval_interval > 0 && self.episode % self.cfg.train.eval_interval == 0 {
            Some(self.evaluate(self.cfg.train.eval_episodes)?.success_rate)
        } else {
            None
        };
        let m = mean(&returns);
        let sd = (returns.iter().map(|r| (r - m).powi(2)).sum::<f64>() / returns.len() as f64).sqrt();
        let record = TrainRecord {
            episode: self.episode - 1,
            steps,
            return_mean: m,
            return_std: sd,
            successes,
            collisions,
            buffer_size: self.buffer.len(),
            updates: stats.len(),
            l_vae: avg(&|s| Some(s.l_vae)),
            l_rec: avg(&|s| Some(s.l_rec)),
            l_align: avg(&|s| Some(s.l_align)),
            l_q: avg(&|s| Some(s.l_q)),
            l_pi: avg(&|s| s.l_pi),
            alpha: stats.last().map(|s| s.alpha),
            eval_success,
        };
        self.log.records.push(record.clone());
        Ok(record)
    }

    /// Deterministic-mode episodes in the training scenario.
    pub fn evaluate(&mut self, episodes: usize) -> Result<MetricsReport> {
        let cfg = self.cfg.episode_config();
        let mut records: Vec<EpisodeRecord> = Vec::new();
        let mut ctl = AgentController {
            agent: &self.agent,
            mode: ActionMode::Deterministic,
        };
        for _ in 0..episodes {
            records.extend(run_episode::<_, std::io::Sink>(
                &mut ctl,
                self.scenario.clone(),
                &cfg,
                &mut self.rng_eval,
                None,
            )?);
        }
        MetricsReport::from_records(
            self.scenario.domain_name.clone(),
            cfg.init_pattern,
            cfg.num_uavs,
            episodes,
            &records,
        )
    }

    /// Trains up to `max_episodes`, writing periodic checkpoints, the final
    /// checkpoint, the log CSV and the config echo into the output directory.
    pub fn train(&mut self) -> Result<TrainLog> {
        let dir = self.cfg.output_dir.clone();
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("config.toml"), self.cfg.to_toml()?)?;
        while self.episode < self.cfg.train.max_episodes {
            self.run_episode()?;
            let every = self.cfg.train.checkpoint_interval;
            if every > 0 && self.episode % every == 0 {
                self.save(dir.join("checkpoint.ckpt"))?;
            }
        }
        self.save(dir.join("final.ckpt"))?;
        self.log.write_csv(dir.join("train_log.csv"))?;
        Ok(self.log.clone())
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new(self.cfg.to_toml()?);
        let store = &self.agent.store;
        for id in store.ids() {
            c.push_tensor(format!("param/{}", store.name(id)), store.value(id));
        }
        for (name, opt) in [
            ("main", &self.agent.opt_main),
            ("actor", &self.agent.opt_actor),
            ("alpha", &self.agent.opt_alpha),
        ] {
            c.push(format!("adam/{name}/t"), EntryKind::Bytes, opt.steps().to_le_bytes().to_vec());
            for (i, (m, v)) in opt.moments().iter().enumerate() {
                c.push_tensor(format!("adam/{name}/m/{i}"), m);
                c.push_tensor(format!("adam/{name}/v/{i}"), v);
            }
        }
        for (name, r) in [
            ("env", &self.rng_env),
            ("action", &self.rng_action),
            ("update", &self.rng_update),
            ("eval", &self.rng_eval),
        ] {
            c.push(format!("rng/{name}"), EntryKind::Bytes, encode_rng(r));
        }
        c.push("replay", EntryKind::Bytes, encode_buffer(&self.buffer));
        let mut meta = Writer::default();
        meta.u64(self.episode as u64);
        meta.u64(self.agent.updates);
        c.push("meta/counters", EntryKind::Bytes, meta.buf);
        c.push("meta/log", EntryKind::Text, serde_json::to_vec(&self.log)?);
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container()?.save(path)
    }

    /// Restores a trainer from its own config echo.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::load(path)?, None)
    }

    /// Restores a trainer, refusing checkpoints whose latent layout or policy
    /// mask differs from `expected`.
    pub fn load_expecting(path: impl AsRef<Path>, expected: &RunConfig) -> Result<Self> {
        Self::from_container(&Container::load(path)?, Some(expected))
    }

    pub fn from_container(c: &Container, expected: Option<&RunConfig>) -> Result<Self> {
        let cfg = RunConfig::from_toml(&c.config)?;
        if let Some(e) = expected {
            check_layout(&cfg, e)?;
        }
        let mut t = Trainer::new(cfg)?;
        let store = &mut t.agent.store;
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = format!("param/{}", store.name(id));
            let v = c.tensor(&name)?;
            if v.shape() != store.value(id).shape() {
                return Err(CoreError::Layout {
                    found: format!("{name} {:?}", v.shape()),
                    expected: format!("{:?}", store.value(id).shape()),
                });
            }
            store.set_value(id, v)?;
        }
        for (name, opt) in [
            ("main", &mut t.agent.opt_main),
            ("actor", &mut t.agent.opt_actor),
            ("alpha", &mut t.agent.opt_alpha),
        ] {
            let mut r = Reader::new(&c.get(&format!("adam/{name}/t"))?.data);
            let steps = r.u64()?;
            let mut moments = Vec::with_capacity(opt.moments().len());
            for i in 0..opt.moments().len() {
                moments.push((
                    c.tensor(&format!("adam/{name}/m/{i}"))?,
                    c.tensor(&format!("adam/{name}/v/{i}"))?,
                ));
            }
            opt.restore(steps, moments)?;
        }
        t.rng_env = decode_rng(&c.get("rng/env")?.data)?;
        t.rng_action = decode_rng(&c.get("rng/action")?.data)?;
        t.rng_update = decode_rng(&c.get("rng/update")?.data)?;
        t.rng_eval = decode_rng(&c.get("rng/eval")?.data)?;
        t.buffer = decode_buffer(&c.get("replay")?.data)?;
        let mut r = Reader::new(&c.get("meta/counters")?.data);
        t.episode = r.u64()? as usize;
        t.agent.updates = r.u64()?;
        t.log = serde_json::from_slice(&c.get("meta/log")?.data)?;
        Ok(t)
    }
}

/// Layout and policy input must match for a checkpoint to be usable.
pub fn check_layout(found: &RunConfig, expected: &RunConfig) -> Result<()> {
    let (a, b) = (found.latent.layout(), expected.latent.layout());
    if a != b {
        return Err(CoreError::Layout {
            found: a.to_string(),
            expected: b.to_string(),
        });
    }
    if found.train.ablation_mask != expected.train.ablation_mask {
        return Err(CoreError::Layout {
            found: format!("mask {}", found.train.ablation_mask),
            expected: format!("mask {}", expected.train.ablation_mask),
        });
    }
    Ok(())
}

fn put_vec3(w: &mut Writer, v: &[f64; 3]) {
    for x in v {
        w.f64(*x);
    }
}

fn get_vec3(r: &mut Reader) -> Result<[f64; 3]> {
    Ok([r.f64()?, r.f64()?, r.f64()?])
}

pub fn encode_buffer(b: &ReplayBuffer) -> Vec<u8> {
    let mut w = Writer::default();
    let (items, cursor) = b.raw_parts();
    w.u64(b.capacity() as u64);
    w.u64(b.pixels() as u64);
    w.u64(cursor as u64);
    w.u64(items.len() as u64);
    for t in items {
        for v in &t.depth {
            w.f32(*v);
        }
        put_vec3(&mut w, &t.goal);
        put_vec3(&mut w, &t.velocity);
        put_vec3(&mut w, &t.action);
        w.f64(t.reward);
        for v in &t.next_depth {
            w.f32(*v);
        }
        put_vec3(&mut w, &t.next_goal);
        put_vec3(&mut w, &t.next_velocity);
        w.u8(t.done as u8);
    }
    w.buf
}

pub fn decode_buffer(data: &[u8]) -> Result<ReplayBuffer> {
    let mut r = Reader::new(data);
    let capacity = r.len()?;
    let pixels = r.len()?;
    let cursor = r.len()?;
    let count = r.len()?;
    let mut items = Vec::with_capacity(count.min(capacity));
    for _ in 0..count {
        let depth = (0..pixels).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        let goal = get_vec3(&mut r)?;
        let velocity = get_vec3(&mut r)?;
        let action = get_vec3(&mut r)?;
        let reward = r.f64()?;
        let next_depth = (0..pixels).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        let next_goal = get_vec3(&mut r)?;
        let next_velocity = get_vec3(&mut r)?;
        let done = r.u8()? != 0;
        items.push(Transition {
            depth,
            goal,
            velocity,
            action,
            reward,
            next_depth,
            next_goal,
            next_velocity,
            done,
        });
    }
    if !r.is_done() {
        return Err(CoreError::Integrity("trailing bytes after replay buffer".into()));
    }
    ReplayBuffer::from_parts(capacity, pixels, items, cursor)
}

/// One row of the block-mask ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mask: BlockMask,
    pub policy_input_width: usize,
    pub log: TrainLog,
    pub report: MetricsReport,
}

/// Trains one model per mask from the same seed and evaluates each on
/// `episodes` random-init episodes of `test_scenario`.
pub fn run_ablation(
    cfg: &RunConfig,
    masks: &[BlockMask],
    test_scenario: &ScenarioSource,
    episodes: usize,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(masks.len());
    for (k, mask) in masks.iter().enumerate() {
        let mut c = cfg.clone();
        c.train.ablation_mask = *mask;
        c.output_dir = cfg.output_dir.join(format!("mask_{k}"));
        let mut t = Trainer::new(c.clone())?;
        let log = t.train()?;
        let ep_cfg = crd_world::EpisodeConfig {
            init_pattern: InitPattern::Random,
            ..c.episode_config()
        };
        let mut records = Vec::new();
        let mut ctl = AgentController {
            agent: &t.agent,
            mode: ActionMode::Deterministic,
        };
        for ep in 0..episodes {
            let mut rng = crate::evalkit::episode_rng(cfg.seed, 0, ep);
            let spec = test_scenario.build(rng.random())?;
            records.extend(run_episode::<_, std::io::Sink>(&mut ctl, spec, &ep_cfg, &mut rng, None)?);
        }
        let report = MetricsReport::from_records(
            test_scenario.label(),
            InitPattern::Random,
            ep_cfg.num_uavs,
            episodes,
            &records,
        )?;
        rows.push(AblationRow {
            mask: *mask,
            policy_input_width: policy_width(&c.latent.layout(), mask),
            log,
            report,
        });
    }
    Ok(rows)
}

/// Writes ablation rows as CSV: mask, width, success rate, SPL.
pub fn write_ablation_csv(rows: &[AblationRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["mask", "policy_input_width", "success_rate", "spl"])?;
    for r in rows {
        w.write_record([
            r.mask.to_string(),
            r.policy_input_width.to_string(),
            r.report.success_rate.to_string(),
            r.report.spl.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
