//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. The multi-hour generalization experiment runs
//! only with `UAVCRD_ACCEPTANCE_LONG=1`.
//!
//! A substring argument restricts the run to matching criteria, e.g.
//! `cargo test --test acceptance -- fourier`.

mod common;

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use crd_core::evalkit::{ScenarioSource, SuiteConfig};
use crd_core::latent::{block, loss_align, loss_rec, loss_vae, policy_view, policy_width};
use crd_core::nn::Bind;
use crd_core::policy::{actor_loss, critic_loss};
use crd_core::trainer::run_ablation;
use crd_core::{
    extra_distance, run_suite, spl, success_rate, ActionMode, Actor, Agent, AgentController, Block, BlockMask,
    Container, Critic, Decoder, Encoder, EpisodeRecord, LatentConfig, RunConfig, SacConfig, Trainer,
};
use crd_diffcore::{Graph, ParamId, ParamStore, Tensor, Var};
use crd_vision::{amplitude_perturb, amplitude_perturb_raw, fft2_grid, ifft2, intervene_set, DepthImage};
use crd_vision::InterventionConfig;
use crd_world::{reward_terms, ActionCommand, InitPattern, RewardConfig, World};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Verdict {
    Pass(String),
    Fail(String),
    Skipped(String),
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Verdict,
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria = [
        Criterion { name: "gradient_oracle", budget: Duration::from_secs(120), run: gradient_oracle },
        Criterion { name: "fourier_invariants", budget: Duration::from_secs(10), run: fourier_invariants },
        Criterion { name: "reward_table", budget: Duration::from_secs(5), run: reward_table },
        Criterion { name: "metric_table", budget: Duration::from_secs(10), run: metric_table },
        Criterion { name: "causal_filtering", budget: Duration::from_secs(60), run: causal_filtering },
        Criterion { name: "determinism", budget: Duration::from_secs(600), run: determinism },
        Criterion { name: "learning_sanity", budget: Duration::from_secs(3600), run: learning_sanity },
        Criterion { name: "generalization_direction", budget: Duration::from_secs(12 * 3600), run: generalization },
        Criterion { name: "ablation_shape", budget: Duration::from_secs(1200), run: ablation_shape },
        Criterion { name: "checkpoint_round_trip", budget: Duration::from_secs(300), run: checkpoint_round_trip },
    ];
    let mut failed = 0;
    for c in &criteria {
        if !filters.is_empty() && !filters.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::Fail(format!("panicked: {msg}"))
        });
        let secs = start.elapsed();
        let v = match v {
            Verdict::Pass(d) if secs > c.budget => Verdict::Fail(format!("{d}; over the {:?} budget", c.budget)),
            v => v,
        };
        let (tag, detail) = match v {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Verdict::Skipped(d) => ("SKIPPED", d),
        };
        println!("{tag} {} ({:.1}s): {detail}", c.name, secs.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------------------
// Gradient oracle

const FD_STEP: f64 = 1e-4;
/// Every ReLU input, clamp input and Q-head gap must sit this far from its
/// kink so the stencil never straddles one.
const KINK_CLEARANCE: f64 = 2e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
enum LossKind {
    Vae,
    Rec,
    Align,
    Critic,
    Actor,
}

struct Oracle {
    enc: Encoder,
    dec: Decoder,
    actor: Actor,
    critic: Critic,
    cfg: LatentConfig,
    mask: BlockMask,
    x: Tensor,
    augmented: Tensor,
    augment_count: usize,
    eps: Tensor,
    eps_all: Tensor,
    eps_action: Tensor,
    goal: Tensor,
    vel: Tensor,
    action: Tensor,
    y: Tensor,
    obs: Tensor,
}

fn uniform_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    crd_core::policy::normal_tensor(rng, shape)
}

impl Oracle {
    fn new(seed: u64) -> (Self, ParamStore) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = LatentConfig {
            n1: 4,
            n2: 4,
            n3: 8,
            channels: [2, 2, 2, 2],
            feature_dim: 8,
            ..LatentConfig::default()
        };
        let mut store = ParamStore::new();
        let enc = Encoder::new(&mut store, "enc", 16, 16, &cfg, &mut rng).unwrap();
        let dec = Decoder::new(&mut store, "dec", 16, 16, &cfg, &mut rng).unwrap();
        let mask = BlockMask::causal();
        let width = policy_width(&cfg.layout(), &mask);
        let bounds = SacConfig::default().log_std_bounds;
        let actor = Actor::new(&mut store, "actor", width, &[8, 8], bounds, &mut rng);
        let critic = Critic::new(&mut store, "critic", width, &[8, 8], true, &mut rng);

        let b = 2;
        let n = cfg.layout().total();
        let x = uniform_tensor(&mut rng, &[b, 16, 16, 1], 0.05, 0.95);
        let iv = InterventionConfig::default();
        let mut aug = Vec::new();
        for i in 0..b {
            let img = DepthImage::new(16, 16, 20.0, x.data()[i * 256..(i + 1) * 256].iter().map(|v| v * 20.0).collect())
                .unwrap();
            aug.push(intervene_set(&img, &iv, &mut rng).unwrap());
        }
        let c = iv.count();
        // rows: originals, then augmentation k of every sample
        let mut all = x.data().to_vec();
        for k in 0..c {
            for per_sample in &aug {
                all.extend(per_sample[k].data().iter().map(|v| (v / 20.0).clamp(0.0, 1.0)));
            }
        }
        let augmented = Tensor::new(vec![b * (c + 1), 16, 16, 1], all).unwrap();
        let o = Oracle {
            eps: normal(&mut rng, &[b, n]),
            eps_all: normal(&mut rng, &[b * (c + 1), n]),
            eps_action: normal(&mut rng, &[b, 3]),
            goal: uniform_tensor(&mut rng, &[b, 3], -1.0, 1.0),
            vel: uniform_tensor(&mut rng, &[b, 3], -1.0, 1.0),
            action: uniform_tensor(&mut rng, &[b, 3], -0.9, 0.9),
            y: uniform_tensor(&mut rng, &[b, 1], -1.0, 1.0),
            obs: uniform_tensor(&mut rng, &[b, width], -1.0, 1.0),
            enc,
            dec,
            actor,
            critic,
            cfg,
            mask,
            x,
            augmented,
            augment_count: c,
        };
        (o, store)
    }

    fn params(&self, kind: LossKind) -> Vec<ParamId> {
        let inverse = self.enc.inverse.params();
        let enc: Vec<ParamId> = self.enc.params().into_iter().filter(|p| !inverse.contains(p)).collect();
        match kind {
            LossKind::Vae => enc.into_iter().chain(self.dec.params()).collect(),
            LossKind::Rec => self.enc.params(),
            LossKind::Align => enc,
            LossKind::Critic => self.critic.params().into_iter().chain(enc).collect(),
            LossKind::Actor => self.actor.params(),
        }
    }

    fn build(&self, kind: LossKind, g: &mut Graph, store: &ParamStore) -> Var {
        let p = Bind::train(store);
        let layout = self.cfg.layout();
        let b = self.x.shape()[0];
        match kind {
            LossKind::Vae => {
                let x = g.constant(self.x.clone());
                let out = self.enc.encode(g, p, x, &self.eps).unwrap();
                let xh = self.dec.decode(g, p, out.z).unwrap();
                loss_vae(g, x, xh, out.mu, out.log_std, 0.01).unwrap().total
            }
            LossKind::Rec => {
                let x = g.constant(self.x.clone());
                let out = self.enc.encode(g, p, x, &self.eps).unwrap();
                loss_rec(g, out.h, out.h_rec).unwrap()
            }
            LossKind::Align => {
                let x = g.constant(self.augmented.clone());
                let out = self.enc.encode(g, p, x, &self.eps_all).unwrap();
                let z3 = block(g, out.z, &layout, Block::Z3).unwrap();
                let base = g.slice(z3, 0, 0, b).unwrap();
                let augs: Vec<Var> = (1..=self.augment_count).map(|k| g.slice(z3, 0, k * b, b).unwrap()).collect();
                loss_align(g, base, &augs).unwrap()
            }
            LossKind::Critic => {
                let x = g.constant(self.x.clone());
                let out = self.enc.encode(g, p, x, &self.eps).unwrap();
                let goal = g.constant(self.goal.clone());
                let vel = g.constant(self.vel.clone());
                let obs = policy_view(g, out.z, goal, vel, &layout, &self.mask).unwrap();
                let a = g.constant(self.action.clone());
                let qs = self.critic.q_values(g, p, obs, a).unwrap();
                critic_loss(g, &qs, &self.y).unwrap()
            }
            LossKind::Actor => {
                let obs = g.constant(self.obs.clone());
                let s = self.actor.sample(g, p, obs, &self.eps_action).unwrap();
                let q = self.critic.min_q(g, Bind::frozen(store), obs, s.action).unwrap();
                actor_loss(g, s.log_prob, q, 0.1).unwrap()
            }
        }
    }

    /// Rejects points where a whole ReLU layer is dead, which would make the
    /// features, or the reconstructions, identical across inputs.
    fn alive(&self, store: &ParamStore) -> bool {
        let mut g = Graph::new();
        let x = g.constant(self.augmented.clone());
        let h = self.enc.features(&mut g, Bind::frozen(store), x).unwrap();
        let eps = Tensor::zeros(&[self.augmented.shape()[0], self.cfg.layout().total()]);
        let out = self.enc.encode(&mut g, Bind::frozen(store), x, &eps).unwrap();
        let xh = self.dec.decode(&mut g, Bind::frozen(store), out.z).unwrap();
        let distinct = |t: &Tensor| {
            let rows: Vec<&[f64]> = t.data().chunks(t.numel() / t.shape()[0]).collect();
            rows.iter().enumerate().all(|(i, a)| rows[i + 1..].iter().all(|b| a != b))
        };
        distinct(g.value(h)) && distinct(g.value(xh))
    }

    fn eval(&self, kind: LossKind, store: &ParamStore) -> (f64, f64) {
        let mut g = Graph::new();
        let v = self.build(kind, &mut g, store);
        (g.value(v).item(), g.kink_margin())
    }
}

const KINDS: [LossKind; 5] = [LossKind::Vae, LossKind::Rec, LossKind::Align, LossKind::Critic, LossKind::Actor];

/// Max relative error between backprop and a five-point central difference,
/// plus the smallest kink margin seen at any stencil point.
fn fd_check(o: &Oracle, store: &mut ParamStore, kind: LossKind) -> (f64, f64, usize) {
    store.zero_all_grads();
    let mut g = Graph::new();
    let loss = o.build(kind, &mut g, store);
    g.backward(loss, store).unwrap();
    // gradients scale with the loss, so the near-zero floor does too
    let scale = g.value(loss).item().abs().max(1.0);
    let mut worst = 0.0f64;
    let mut margin = f64::INFINITY;
    let mut count = 0;
    for id in o.params(kind) {
        let analytic = store.grad(id).data().to_vec();
        for (k, &a) in analytic.iter().enumerate() {
            let orig = store.value(id).data()[k];
            let mut at = |offset: f64| {
                store.value_mut(id).data_mut()[k] = orig + offset;
                let (v, m) = o.eval(kind, store);
                margin = margin.min(m);
                v
            };
            let h = FD_STEP;
            // differences first, so a flat direction gives exactly zero
            let (f2, f1, b1, b2) = (at(2.0 * h), at(h), at(-h), at(-2.0 * h));
            let numeric = ((b2 - f2) + 8.0 * (f1 - b1)) / (12.0 * h);
            store.value_mut(id).data_mut()[k] = orig;
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8 * scale);
            worst = worst.max(rel);
            count += 1;
        }
    }
    (worst, margin, count)
}

fn gradient_oracle() -> Verdict {
    let chosen = (0..500u64).find(|&seed| {
        let (o, store) = Oracle::new(seed);
        o.alive(&store) && KINDS.iter().all(|&k| o.eval(k, &store).1 > KINK_CLEARANCE)
    });
    let Some(seed) = chosen else {
        return Verdict::Fail("no evaluation point clear of every kink".into());
    };
    let (o, mut store) = Oracle::new(seed);
    let mut ok = true;
    let mut parts = vec![format!("seed {seed}")];
    for kind in KINDS {
        let (err, margin, n) = fd_check(&o, &mut store, kind);
        ok &= err < 1e-4 && margin > 0.0;
        parts.push(format!("{kind:?} {n} coords max rel {err:.2e}"));
    }
    verdict(ok, parts.join(", "))
}

// ---------------------------------------------------------------------------
// Fourier

/// Textbook O(N^2) 2-D DFT, `(re, im)` per bin.
fn naive_dft(h: usize, w: usize, x: &[f64]) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(h * w);
    for u in 0..h {
        for v in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for r in 0..h {
                for c in 0..w {
                    let t = -2.0 * PI * ((u * r) as f64 / h as f64 + (v * c) as f64 / w as f64);
                    re += x[r * w + c] * t.cos();
                    im += x[r * w + c] * t.sin();
                }
            }
            out.push((re, im));
        }
    }
    out
}

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

fn fourier_invariants() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut dft_err, mut round_trip, mut drift, mut identity) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for &(h, w) in &[(8usize, 8usize), (16, 16)] {
        for _ in 0..4 {
            let x: Vec<f64> = (0..h * w).map(|_| rng.random_range(0.5..20.0)).collect();
            let reference = naive_dft(h, w, &x);
            let spec = fft2_grid(h, w, &x).unwrap();
            let scale = (h * w) as f64 * 20.0;
            for (i, &(re, im)) in reference.iter().enumerate() {
                let (a, p) = (spec.amplitude[i], spec.phase[i]);
                dft_err = dft_err.max(((a * p.cos() - re).abs() + (a * p.sin() - im).abs()) / scale);
            }

            let (back, residue) = ifft2(&spec).unwrap();
            round_trip = round_trip.max(residue);
            for (a, b) in back.iter().zip(&x) {
                round_trip = round_trip.max((a - b).abs());
            }

            for &lambda in &[0.5, 0.8, 1.2, 1.5] {
                let p = amplitude_perturb_raw(h, w, &x, lambda).unwrap();
                let after = naive_dft(h, w, &p.raw);
                for (&(r0, i0), &(r1, i1)) in reference.iter().zip(&after) {
                    if (r0 * r0 + i0 * i0).sqrt() > 1e-6 * scale {
                        drift = drift.max(angle_gap(i0.atan2(r0), i1.atan2(r1)));
                    }
                }
            }

            let one = amplitude_perturb_raw(h, w, &x, 1.0).unwrap();
            for (a, b) in one.raw.iter().zip(&x) {
                identity = identity.max((a - b).abs());
            }
            let img = DepthImage::new(h, w, 20.0, x.clone()).unwrap();
            let clamped = amplitude_perturb(&img, 1.0).unwrap();
            for (a, b) in clamped.data().iter().zip(&x) {
                identity = identity.max((a - b).abs());
            }
        }
    }
    let ok = dft_err < 1e-9 && round_trip < 1e-9 && drift < 1e-6 && identity < 1e-9;
    verdict(
        ok,
        format!("dft {dft_err:.1e}, round trip {round_trip:.1e}, phase drift {drift:.1e}, identity {identity:.1e}"),
    )
}

// ---------------------------------------------------------------------------
// Reward and metric tables

fn reward_table() -> Verdict {
    let cfg = RewardConfig::default();
    let constants = [
        cfg.r_arrival == 50.0,
        cfg.r_collision == -10.0,
        cfg.alpha_avoid == -0.05,
        cfg.d_safe == 5.0,
        cfg.arrival_threshold == 0.5,
    ];
    let g = cfg.alpha_goal;
    // (label, d_t, d_prev, d_min, crashed, expected goal, expected collision)
    let cases = [
        ("arrival inside 0.5 m", 0.4, 0.6, 9.0, false, 50.0, 0.0),
        ("boundary 0.5 m is progress", 0.5, 0.75, 9.0, false, g * 0.25, 0.0),
        ("approach", 2.25, 2.5, 9.0, false, g * 0.25, 0.0),
        ("retreat", 2.5, 2.25, 9.0, false, -g * 0.25, 0.0),
        ("crash", 4.0, 4.0, 0.0, true, 0.0, -10.0),
        ("crash inside the sphere", 0.25, 0.5, 0.0, true, g * 0.25, -10.0),
        ("clearance at d_safe", 3.0, 3.0, 5.0, false, 0.0, 0.0),
        ("clearance 3 m", 3.0, 3.0, 3.0, false, 0.0, -0.1),
        ("clearance 7 m", 3.0, 3.0, 7.0, false, 0.0, 0.0),
    ];
    let mut bad = Vec::new();
    for (label, d_t, d_prev, d_min, crashed, goal, collision) in cases {
        let t = reward_terms(d_t, d_prev, d_min, crashed, false, &cfg);
        if t.goal != goal || t.collision != collision || t.total() != goal + collision {
            bad.push(format!("{label}: got ({}, {})", t.goal, t.collision));
        }
    }
    if constants.iter().any(|c| !c) {
        bad.push("reward constants differ from the defaults".into());
    }
    verdict(bad.is_empty(), if bad.is_empty() { "9 cases exact".into() } else { bad.join("; ") })
}

fn record(success: bool, l: f64, p: f64) -> EpisodeRecord {
    EpisodeRecord {
        success,
        shortest_path: l,
        actual_path: p,
        steps: 10,
        mean_speed: 1.0,
        collided: false,
    }
}

fn metric_table() -> Verdict {
    let mut bad = Vec::new();
    let mut expect = |label: &str, got: f64, want: f64| {
        if got != want {
            bad.push(format!("{label}: {got} != {want}"));
        }
    };
    expect("spl straight", spl(&[record(true, 10.0, 10.0)]).unwrap(), 100.0);
    expect("spl failure", spl(&[record(false, 10.0, 10.0)]).unwrap(), 0.0);
    expect("spl detour", spl(&[record(true, 8.0, 10.0)]).unwrap(), 80.0);
    let set = [record(true, 5.0, 5.0), record(true, 5.0, 6.0), record(false, 5.0, 1.0), record(true, 5.0, 8.0)];
    expect("success rate", success_rate(&set).unwrap(), 75.0);
    let e = extra_distance(&[record(true, 4.0, 5.0), record(true, 4.0, 7.0), record(false, 4.0, 0.5)]).unwrap();
    expect("extra mean", e.mean, 2.0);
    expect("extra std", e.std, 1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut violations = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..50);
        let set: Vec<_> = (0..n)
            .map(|_| record(rng.random_bool(0.6), rng.random_range(0.1..40.0), rng.random_range(0.0..80.0)))
            .collect();
        if spl(&set).unwrap() > success_rate(&set).unwrap() + 1e-9 {
            violations += 1;
        }
    }
    if violations > 0 {
        bad.push(format!("{violations} random sets with SPL above success rate"));
    }
    verdict(bad.is_empty(), if bad.is_empty() { "table exact, 1000 random sets".into() } else { bad.join("; ") })
}

// ---------------------------------------------------------------------------
// Causal filtering

fn causal_filtering() -> Verdict {
    let spec = common::tiny_spec(8);
    let mut agent = Agent::new(spec, 4).unwrap();
    let layout = agent.layout();
    let z1 = layout.offset(Block::Z1)..layout.offset(Block::Z1) + layout.size(Block::Z1);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0;

    // latent route
    for trial in 0..200 {
        let z: Vec<f64> = (0..layout.total()).map(|_| rng.random_range(-3.0..3.0)).collect();
        let goal = [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-3.0..3.0)];
        let vel = [rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let mut perturbed = z.clone();
        for i in z1.clone() {
            perturbed[i] = if trial % 2 == 0 { rng.random_range(-1e6..1e6) } else { f64::from(trial as u32) };
        }
        let (oa, ob) = (
            agent.policy_obs_from_latent(&z, goal, vel).unwrap(),
            agent.policy_obs_from_latent(&perturbed, goal, vel).unwrap(),
        );
        for mode in [ActionMode::Deterministic, ActionMode::Stochastic] {
            let seed = rng.random::<u64>();
            let a = agent.actor.act(&agent.store, &oa, mode, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let b = agent.actor.act(&agent.store, &ob, mode, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let probe = ActionCommand { vx: 1.0, vz: 0.2, vw: -0.3 };
            if a != b || agent.q_value(&oa, a).unwrap() != agent.q_value(&ob, b).unwrap()
                || agent.q_value(&oa, probe).unwrap() != agent.q_value(&ob, probe).unwrap()
            {
                mismatches += 1;
            }
        }
    }

    // image route: rewrite the encoder rows that produce z1
    let scenario = std::sync::Arc::new(crd_world::generate_scenario("forest", 2).unwrap());
    let ecfg = crd_world::EpisodeConfig {
        num_uavs: 1,
        sensor: crd_world::SensorConfig { height: 16, width: 16, ..Default::default() },
        ..Default::default()
    };
    let (_, obs) = World::reset(scenario, ecfg, &mut rng).unwrap();
    let before_z = agent.latent_mean(&obs[0].depth).unwrap();
    let before = agent.select_action(&obs[0], ActionMode::Deterministic, &mut rng).unwrap();
    let before_q = agent.q_value(&agent.policy_obs(&obs[0]).unwrap(), before).unwrap();
    let (w, bias) = (agent.encoder.mu.weight, agent.encoder.mu.bias);
    let cols = agent.store.value(w).shape()[1];
    for i in z1.clone() {
        agent.store.value_mut(bias).data_mut()[i] = 1e3;
        for r in 0..agent.store.value(w).shape()[0] {
            agent.store.value_mut(w).data_mut()[r * cols + i] = rng.random_range(-50.0..50.0);
        }
    }
    let after_z = agent.latent_mean(&obs[0].depth).unwrap();
    let after = agent.select_action(&obs[0], ActionMode::Deterministic, &mut rng).unwrap();
    let after_q = agent.q_value(&agent.policy_obs(&obs[0]).unwrap(), after).unwrap();
    let z1_moved = z1.clone().all(|i| before_z[i] != after_z[i]);
    if before != after || before_q != after_q {
        mismatches += 1;
    }

    // alignment gradient
    let b = 4;
    let mut g = Graph::new();
    let mut store = ParamStore::new();
    let z = g.leaf(uniform_tensor(&mut rng, &[b, layout.total()], -2.0, 2.0));
    let augs: Vec<Var> = (0..3).map(|_| g.leaf(uniform_tensor(&mut rng, &[b, layout.total()], -2.0, 2.0))).collect();
    let z3 = block(&mut g, z, &layout, Block::Z3).unwrap();
    let aug3: Vec<Var> = augs.iter().map(|&a| block(&mut g, a, &layout, Block::Z3).unwrap()).collect();
    let loss = loss_align(&mut g, z3, &aug3).unwrap();
    g.backward(loss, &mut store).unwrap();
    let (mut leak, mut z3_norm) = (0usize, 0.0f64);
    let z3_start = layout.offset(Block::Z3);
    for v in std::iter::once(z).chain(augs.iter().copied()) {
        let grad = g.grad(v).unwrap();
        for row in grad.chunks(layout.total()) {
            leak += row[..z3_start].iter().filter(|x| **x != 0.0).count();
            z3_norm += row[z3_start..].iter().map(|x| x.abs()).sum::<f64>();
        }
    }
    let ok = mismatches == 0 && leak == 0 && z3_norm > 0.0 && z1_moved;
    verdict(
        ok,
        format!("{mismatches} action/value mismatches, {leak} nonzero z1/z2 alignment grads, z1 rewired {z1_moved}"),
    )
}

// ---------------------------------------------------------------------------
// Training runs

fn determinism_config(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = 21;
    cfg.output_dir = dir.to_path_buf();
    cfg.train.num_uavs = 2;
    cfg.train.max_episodes = 5;
    cfg.train.updates_per_episode = 50;
    cfg.train.warmup_transitions = 64;
    cfg.train.checkpoint_interval = 0;
    cfg.train.eval_interval = 0;
    cfg.episode.sensor.height = 32;
    cfg.episode.sensor.width = 32;
    cfg.latent.channels = [4, 8, 8, 8];
    cfg.latent.feature_dim = 32;
    cfg.sac.batch_size = 32;
    cfg.sac.hidden = vec![64, 64];
    cfg
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let run = || {
        let mut t = Trainer::new(determinism_config(dir.path())).unwrap();
        let log = t.train().unwrap();
        let ckpt = std::fs::read(dir.path().join("final.ckpt")).unwrap();
        let csv = std::fs::read(dir.path().join("train_log.csv")).unwrap();
        (log, ckpt, csv)
    };
    let (la, ca, sa) = run();
    let (lb, cb, sb) = run();
    let updates = la.total_updates();
    let ok = la == lb && ca == cb && sa == sb && la.records.len() == 5 && updates > 0;
    verdict(
        ok,
        format!(
            "logs equal {}, checkpoints equal {} ({} bytes), {} updates",
            la == lb,
            ca == cb,
            ca.len(),
            updates
        ),
    )
}

/// Single UAV in the obstacle-free playground.
fn learning_config(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = 0;
    cfg.output_dir = dir.to_path_buf();
    cfg.train.num_uavs = 1;
    cfg.train.obstacles = false;
    cfg.train.init_pattern = InitPattern::Random;
    cfg.train.max_episodes = 150;
    cfg.train.updates_per_episode = 200;
    cfg.train.warmup_transitions = 1000;
    cfg.train.checkpoint_interval = 0;
    cfg.train.eval_interval = 0;
    cfg.episode.sensor.height = 16;
    cfg.episode.sensor.width = 16;
    cfg.latent.n1 = 4;
    cfg.latent.n2 = 4;
    cfg.latent.n3 = 8;
    cfg.latent.channels = [4, 8, 8, 8];
    cfg.latent.feature_dim = 32;
    cfg.sac.hidden = vec![64, 64];
    cfg.sac.batch_size = 64;
    cfg.sac.actor_lr = 1e-3;
    cfg.sac.critic_lr = 1e-3;
    cfg.sac.encoder_lr = 1e-3;
    cfg.sac.alpha_lr = 1e-3;
    cfg.sac.goal_scale = 0.5;
    cfg
}

fn learning_sanity() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let cfg = learning_config(dir.path());
    let episode = cfg.episode_config();
    let mut t = Trainer::new(cfg).unwrap();
    let log = t.train().unwrap();
    let suite = SuiteConfig {
        scenarios: vec![ScenarioSource::Named { domain: "playground".into(), obstacles: false }],
        init_patterns: vec![InitPattern::Random],
        uav_counts: vec![1],
        episodes_random: 100,
        episodes_circle: 0,
        episode,
    };
    let mut ctl = AgentController { agent: &t.agent, mode: ActionMode::Deterministic };
    let report = run_suite(&mut ctl, &suite, 1234).unwrap();
    let sr = report.cells[0].success_rate;
    verdict(
        sr >= 90.0,
        format!("deterministic success {sr:.1}% over 100 episodes after {} episodes", log.records.len()),
    )
}

fn generalization() -> Verdict {
    if std::env::var("UAVCRD_ACCEPTANCE_LONG").as_deref() != Ok("1") {
        return Verdict::Skipped("set UAVCRD_ACCEPTANCE_LONG=1 to run the 5-seed, 300-episode experiment".into());
    }
    let dir = tempfile::tempdir().unwrap();
    let mut means = [0.0; 2];
    for seed in 0..5u64 {
        for (v, full) in [true, false].into_iter().enumerate() {
            let mut cfg = RunConfig::default();
            cfg.seed = seed;
            cfg.output_dir = dir.path().join(format!("s{seed}_{v}"));
            cfg.train.num_uavs = 4;
            cfg.train.max_episodes = 300;
            cfg.train.scenario = "playground".into();
            cfg.train.checkpoint_interval = 0;
            cfg.train.eval_interval = 0;
            cfg.train.ablation_mask = if full { BlockMask::causal() } else { BlockMask::all() };
            cfg.train.interventions = full;
            let episode = cfg.episode_config();
            let mut t = Trainer::new(cfg).unwrap();
            t.train().unwrap();
            let suite = SuiteConfig {
                scenarios: vec![ScenarioSource::named("forest")],
                init_patterns: vec![InitPattern::Random],
                uav_counts: vec![4],
                episodes_random: 100,
                episodes_circle: 0,
                episode,
            };
            let mut ctl = AgentController { agent: &t.agent, mode: ActionMode::Deterministic };
            means[v] += run_suite(&mut ctl, &suite, 1000 + seed).unwrap().cells[0].success_rate / 5.0;
        }
    }
    verdict(
        means[0] >= means[1],
        format!("forest success: full pipeline {:.1}%, baseline {:.1}%", means[0], means[1]),
    )
}

fn ablation_shape() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::smoke_config(dir.path());
    let masks = BlockMask::ablation_set();
    let rows = run_ablation(&cfg, &masks, &ScenarioSource::named("forest"), 2).unwrap();
    let l = &cfg.latent;
    let expected = [l.n1 + l.n3 + 6, l.n2 + 6, l.n3 + 6, l.n1 + l.n2 + l.n3 + 6];
    let widths: Vec<usize> = rows.iter().map(|r| r.policy_input_width).collect();
    let masks_ok = rows.iter().zip(&masks).all(|(r, m)| r.mask == *m);
    let ok = rows.len() == 4 && widths == expected && masks_ok;
    verdict(ok, format!("{} rows, widths {widths:?}", rows.len()))
}

fn checkpoint_round_trip() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::smoke_config(dir.path());
    cfg.train.max_episodes = 1;
    let mut a = Trainer::new(cfg).unwrap();
    a.train().unwrap();
    let path = dir.path().join("round.ckpt");
    a.save(&path).unwrap();
    let mut b = Trainer::load(&path).unwrap();
    let sa: Vec<_> = (0..5).map(|_| a.update().unwrap()).collect();
    let sb: Vec<_> = (0..5).map(|_| b.update().unwrap()).collect();
    let bytes_a = a.to_container().unwrap().to_bytes();
    let bytes_b = b.to_container().unwrap().to_bytes();
    let reread = Container::from_bytes(&bytes_b).is_ok();
    verdict(
        sa == sb && bytes_a == bytes_b && reread,
        format!("stats equal {}, state bytes equal {} ({} bytes)", sa == sb, bytes_a == bytes_b, bytes_a.len()),
    )
}
