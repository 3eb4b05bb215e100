//! Soft actor-critic pieces: squashed-normal actor, (twin) critics, learned
//! temperature and the per-loss update steps.

use std::f64::consts::{LN_2, PI};

use crd_diffcore::{Adam, Graph, ParamId, ParamStore, Tensor, Var};
use crd_world::ActionCommand;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::nn::{check_finite, Bind, Mlp};

pub const ACTION_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub gamma: f64,
    pub batch_size: usize,
    pub critic_lr: f64,
    pub actor_lr: f64,
    pub encoder_lr: f64,
    /// Learning rate of `log alpha`.
    pub alpha_lr: f64,
    pub tau_q: f64,
    pub tau_enc: f64,
    pub critic_target_update_frequency: usize,
    pub actor_update_frequency: usize,
    pub log_std_bounds: [f64; 2],
    pub init_temperature: f64,
    pub learn_temperature: bool,
    pub target_entropy: f64,
    pub twin_critics: bool,
    /// Hidden widths shared by actor and critic MLPs.
    pub hidden: Vec<usize>,
    pub buffer_capacity: usize,
    /// Multiplier applied to the relative goal before it enters the networks.
    pub goal_scale: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            gamma: 0.99,
            batch_size: 128,
            critic_lr: 1e-4,
            actor_lr: 1e-4,
            encoder_lr: 1e-4,
            alpha_lr: 1e-4,
            tau_q: 0.01,
            tau_enc: 0.05,
            critic_target_update_frequency: 2,
            actor_update_frequency: 2,
            log_std_bounds: [-10.0, 2.0],
            init_temperature: 0.1,
            learn_temperature: true,
            target_entropy: -3.0,
            twin_critics: true,
            hidden: vec![256, 256],
            buffer_capacity: 20_000,
            goal_scale: 0.5,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(CoreError::Config(format!("{name} = {v} must lie in (0, 1]")))
            }
        };
        unit("critic_lr", self.critic_lr)?;
        unit("actor_lr", self.actor_lr)?;
        unit("encoder_lr", self.encoder_lr)?;
        unit("alpha_lr", self.alpha_lr)?;
        unit("tau_q", self.tau_q)?;
        unit("tau_enc", self.tau_enc)?;
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(CoreError::Config(format!("gamma = {} must lie in [0, 1]", self.gamma)));
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 {
            return Err(CoreError::Config("batch_size and buffer_capacity must be >= 1".into()));
        }
        if self.critic_target_update_frequency == 0 || self.actor_update_frequency == 0 {
            return Err(CoreError::Config("update frequencies must be >= 1".into()));
        }
        let [lo, hi] = self.log_std_bounds;
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(CoreError::Config(format!("log_std_bounds [{lo}, {hi}] are not an interval")));
        }
        if !(self.init_temperature > 0.0 && self.init_temperature.is_finite()) {
            return Err(CoreError::Config("init_temperature must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(CoreError::Config("hidden widths must be positive".into()));
        }
        if !(self.goal_scale > 0.0 && self.goal_scale.is_finite()) {
            return Err(CoreError::Config("goal_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Half-width of the action box per dimension.
pub fn action_scale() -> [f64; 3] {
    let (lo, hi) = (ActionCommand::LOW, ActionCommand::HIGH);
    [0.5 * (hi[0] - lo[0]), 0.5 * (hi[1] - lo[1]), 0.5 * (hi[2] - lo[2])]
}

/// Maps a squashed action in `[-1, 1]^3` onto the command box.
pub fn to_command(a: [f64; 3]) -> ActionCommand {
    let s = action_scale();
    let lo = ActionCommand::LOW;
    ActionCommand::from_array([
        lo[0] + (a[0] + 1.0) * s[0],
        lo[1] + (a[1] + 1.0) * s[1],
        lo[2] + (a[2] + 1.0) * s[2],
    ])
    .clamped()
}

/// Inverse of [`to_command`].
pub fn normalize_command(c: ActionCommand) -> [f64; 3] {
    let s = action_scale();
    let lo = ActionCommand::LOW;
    let a = c.to_array();
    [
        (a[0] - lo[0]) / s[0] - 1.0,
        (a[1] - lo[1]) / s[1] - 1.0,
        (a[2] - lo[2]) / s[2] - 1.0,
    ]
}

/// `log(1 - tanh(u)^2)` in the overflow-free form `2 (ln 2 - u - softplus(-2u))`.
pub fn log_tanh_jacobian(u: f64) -> f64 {
    let x = -2.0 * u;
    let softplus = if x > 0.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() };
    2.0 * (LN_2 - u - softplus)
}

/// Log-density of one squashed coordinate in command units, given the
/// pre-squash sample `u = mean + exp(log_std) * eps`.
pub fn squashed_log_density(eps: f64, log_std: f64, u: f64, scale: f64) -> f64 {
    -0.5 * eps * eps - log_std - 0.5 * (2.0 * PI).ln() - log_tanh_jacobian(u) - scale.ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    Stochastic,
    Deterministic,
}

/// Graph outputs of a reparameterized actor sample.
#[derive(Debug, Clone, Copy)]
pub struct ActorSample {
    /// `tanh(u)` in `[-1, 1]`, `[batch, 3]`.
    pub action: Var,
    /// `[batch, 1]`
    pub log_prob: Var,
    pub mean: Var,
    pub log_std: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    pub net: Mlp,
    pub input: usize,
    pub log_std_bounds: [f64; 2],
}

impl Actor {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: &[usize],
        log_std_bounds: [f64; 2],
        rng: &mut R,
    ) -> Self {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(2 * ACTION_DIM);
        Actor {
            net: Mlp::new(store, name, &widths, rng),
            input,
            log_std_bounds,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.net.params()
    }

    fn check_input(&self, g: &Graph, obs: Var) -> Result<()> {
        let s = g.shape(obs);
        if s.len() != 2 || s[1] != self.input {
            return Err(CoreError::Dimension(format!(
                "actor expects [B, {}], got {s:?}",
                self.input
            )));
        }
        Ok(())
    }

    /// `(mean, clamped log_std)`, each `[batch, 3]`.
    pub fn forward(&self, g: &mut Graph, p: Bind, obs: Var) -> Result<(Var, Var)> {
        self.check_input(g, obs)?;
        let out = self.net.forward(g, p, obs)?;
        check_finite(g, out, "actor")?;
        let mean = g.slice(out, 1, 0, ACTION_DIM)?;
        let raw = g.slice(out, 1, ACTION_DIM, ACTION_DIM)?;
        let [lo, hi] = self.log_std_bounds;
        let log_std = g.clamp(raw, lo, hi);
        Ok((mean, log_std))
    }

    /// Reparameterized squashed sample with noise `eps` (`[batch, 3]`).
    pub fn sample(&self, g: &mut Graph, p: Bind, obs: Var, eps: &Tensor) -> Result<ActorSample> {
        let (mean, log_std) = self.forward(g, p, obs)?;
        if eps.shape() != g.shape(mean) {
            return Err(CoreError::Dimension(format!(
                "actor noise {:?} does not match {:?}",
                eps.shape(),
                g.shape(mean)
            )));
        }
        let e = g.constant(eps.clone());
        let std = g.exp(log_std);
        let noise = g.mul(std, e)?;
        let u = g.add(mean, noise)?;
        let action = g.tanh(u);

        // Gaussian part: -eps^2/2 - log_std - ln(2 pi)/2
        let e2 = g.square(e);
        let e2 = g.scale(e2, -0.5);
        let gauss = g.sub(e2, log_std)?;
        let gauss = g.add_scalar(gauss, -0.5 * (2.0 * PI).ln());
        // tanh Jacobian: 2 (ln 2 - u - softplus(-2u))
        let m2u = g.scale(u, -2.0);
        let sp = g.softplus(m2u);
        let jac = g.add(u, sp)?;
        let jac = g.neg(jac);
        let jac = g.add_scalar(jac, LN_2);
        let jac = g.scale(jac, 2.0);
        let per_dim = g.sub(gauss, jac)?;
        let log_scale: f64 = action_scale().iter().map(|s| s.ln()).sum();
        let lp = g.sum_axis(per_dim, 1)?;
        let batch = g.shape(lp)[0];
        let lp = g.reshape(lp, &[batch, 1])?;
        let log_prob = g.add_scalar(lp, -log_scale);
        check_finite(g, log_prob, "actor log-probability")?;
        Ok(ActorSample {
            action,
            log_prob,
            mean,
            log_std,
        })
    }

    /// One action for one observation vector, outside any training graph.
    pub fn act<R: Rng + ?Sized>(
        &self,
        store: &ParamStore,
        obs: &[f64],
        mode: ActionMode,
        rng: &mut R,
    ) -> Result<ActionCommand> {
        if obs.len() != self.input {
            return Err(CoreError::Dimension(format!(
                "policy observation has length {}, actor expects {}",
                obs.len(),
                self.input
            )));
        }
        let mut g = Graph::new();
        let o = g.constant(Tensor::new(vec![1, self.input], obs.to_vec())?);
        let (mean, log_std) = self.forward(&mut g, Bind::frozen(store), o)?;
        let mean = g.value(mean).data().to_vec();
        let log_std = g.value(log_std).data().to_vec();
        let mut a = [0.0; 3];
        for k in 0..ACTION_DIM {
            let u = match mode {
                ActionMode::Deterministic => mean[k],
                ActionMode::Stochastic => {
                    let e: f64 = rng.sample(StandardNormal);
                    mean[k] + log_std[k].exp() * e
                }
            };
            a[k] = u.tanh();
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Numeric("actor action".into()));
        }
        Ok(to_command(a))
    }
}

/// One or two Q heads over `[policy observation, normalized action]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub heads: Vec<Mlp>,
    pub input: usize,
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: &[usize],
        twin: bool,
        rng: &mut R,
    ) -> Self {
        let mut widths = vec![input + ACTION_DIM];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let n = if twin { 2 } else { 1 };
        let heads = (0..n)
            .map(|i| Mlp::new(store, &format!("{name}.q{}", i + 1), &widths, rng))
            .collect();
        Critic { heads, input }
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.heads.iter().flat_map(Mlp::params).collect()
    }

    /// Every head's `[batch, 1]` value.
    pub fn q_values(&self, g: &mut Graph, p: Bind, obs: Var, action: Var) -> Result<Vec<Var>> {
        let s = g.shape(obs);
        if s.len() != 2 || s[1] != self.input {
            return Err(CoreError::Dimension(format!(
                "critic expects [B, {}], got {s:?}",
                self.input
            )));
        }
        let x = g.concat(&[obs, action], 1)?;
        let mut out = Vec::with_capacity(self.heads.len());
        for (i, head) in self.heads.iter().enumerate() {
            let q = head.forward(g, p, x)?;
            check_finite(g, q, &format!("critic q{}", i + 1))?;
            out.push(q);
        }
        Ok(out)
    }

    /// Elementwise minimum over heads.
    pub fn min_q(&self, g: &mut Graph, p: Bind, obs: Var, action: Var) -> Result<Var> {
        let qs = self.q_values(g, p, obs, action)?;
        let mut m = qs[0];
        for &q in &qs[1..] {
            m = g.minimum(m, q)?;
        }
        Ok(m)
    }
}

/// `y = r + gamma (1 - done) (min_q_next - alpha log_pi_next)`.
pub fn soft_target(reward: f64, done: bool, gamma: f64, min_q_next: f64, log_pi_next: f64, alpha: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * (min_q_next - alpha * log_pi_next)
    }
}

/// Mean over heads of the mean squared error against fixed targets `y`.
pub fn critic_loss(g: &mut Graph, qs: &[Var], y: &Tensor) -> Result<Var> {
    let yv = g.constant(y.clone());
    let mut total: Option<Var> = None;
    for &q in qs {
        if g.shape(q) != y.shape() {
            return Err(CoreError::Dimension(format!(
                "q values {:?} and targets {:?}",
                g.shape(q),
                y.shape()
            )));
        }
        let d = g.sub(q, yv)?;
        let d2 = g.square(d);
        let m = g.mean(d2);
        total = Some(match total {
            None => m,
            Some(t) => g.add(t, m)?,
        });
    }
    let total = total.ok_or_else(|| CoreError::Config("critic has no heads".into()))?;
    Ok(g.scale(total, 1.0 / qs.len() as f64))
}

/// `mean(alpha log_pi - min_q)`.
pub fn actor_loss(g: &mut Graph, log_prob: Var, min_q: Var, alpha: f64) -> Result<Var> {
    let a = g.scale(log_prob, alpha);
    let d = g.sub(a, min_q)?;
    Ok(g.mean(d))
}

/// `-alpha (mean log_pi + target_entropy)` as a function of `log alpha`.
pub fn temperature_loss(g: &mut Graph, log_alpha: Var, mean_log_prob: f64, target_entropy: f64) -> Var {
    let alpha = g.exp(log_alpha);
    let l = g.scale(alpha, -(mean_log_prob + target_entropy));
    g.sum(l)
}

/// One actor step against a critic supplied as a closure
/// `(graph, store, obs, action) -> min Q`. Only actor weights move.
/// Returns `(loss, mean log_pi)`.
pub fn actor_step<F>(
    actor: &Actor,
    store: &mut ParamStore,
    opt: &mut Adam,
    obs: &Tensor,
    eps: &Tensor,
    alpha: f64,
    mut critic: F,
) -> Result<(f64, f64)>
where
    F: FnMut(&mut Graph, &ParamStore, Var, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let o = g.constant(obs.clone());
    let s = actor.sample(&mut g, Bind::train(store), o, eps)?;
    let q = critic(&mut g, store, o, s.action)?;
    let loss = actor_loss(&mut g, s.log_prob, q, alpha)?;
    let lv = g.value(loss).item();
    let mlp = mean(g.value(s.log_prob).data());
    if !lv.is_finite() {
        return Err(CoreError::Numeric("actor loss".into()));
    }
    let params = actor.params();
    store.zero_grad(&params);
    g.backward(loss, store)?;
    opt.step(store)?;
    Ok((lv, mlp))
}

/// One temperature step. Returns the loss value.
pub fn temperature_step(
    store: &mut ParamStore,
    opt: &mut Adam,
    log_alpha: ParamId,
    mean_log_prob: f64,
    target_entropy: f64,
) -> Result<f64> {
    let mut g = Graph::new();
    let la = g.param(store, log_alpha);
    let loss = temperature_loss(&mut g, la, mean_log_prob, target_entropy);
    let lv = g.value(loss).item();
    store.zero_grad(&[log_alpha]);
    g.backward(loss, store)?;
    opt.step(store)?;
    Ok(lv)
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Standard-normal tensor drawn from `rng`.
pub fn normal_tensor<R: Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}
