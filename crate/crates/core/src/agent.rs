//! All networks of one learner in a single parameter store, their
//! optimizers, action selection and the full update step.

use crd_diffcore::{soft_update, Adam, Graph, ParamGroup, ParamId, ParamStore, Tensor};
use crd_vision::{intervene_set, DepthImage, InterventionConfig};
use crd_world::{ActionCommand, Observation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::latent::{
    block, loss_align, loss_rec, loss_vae, policy_view, policy_width, AlignTarget, Block, BlockMask, Decoder,
    Encoder, LatentConfig, LatentLayout, LossBundle,
};
use crate::nn::Bind;
use crate::policy::{
    actor_step, critic_loss, normal_tensor, normalize_command, soft_target, temperature_step, ActionMode,
    Actor, Critic, SacConfig,
};
use crate::replay::{ReplayBuffer, Transition};

/// Static shape of a learner.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub height: usize,
    pub width: usize,
    pub max_range: f64,
    pub latent: LatentConfig,
    pub sac: SacConfig,
    pub mask: BlockMask,
    /// `None` turns off interventions and the alignment loss.
    pub intervention: Option<InterventionConfig>,
}

/// Loss values of one update. `l_pi` is present only on actor steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub l_vae: f64,
    pub l_rec: f64,
    pub l_align: f64,
    pub l_q: f64,
    pub l_pi: Option<f64>,
    pub alpha: f64,
}

/// A sampled, preprocessed training batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub indices: Vec<usize>,
    /// `[B, H, W, 1]` in `[0, 1]`.
    pub images: Tensor,
    /// `[C * B, H, W, 1]`, augmentation-major; empty when `C = 0`.
    pub augmented: Option<Tensor>,
    pub next_images: Tensor,
    /// `[B, 3]` scaled goals and velocities.
    pub goal: Tensor,
    pub velocity: Tensor,
    pub next_goal: Tensor,
    pub next_velocity: Tensor,
    /// `[B, 3]` in `[-1, 1]`.
    pub actions: Tensor,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub spec: AgentSpec,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub encoder_target: Encoder,
    pub actor: Actor,
    pub critic: Critic,
    pub critic_target: Critic,
    pub log_alpha: ParamId,
    /// Encoder, decoder and critic, all moved by the joint loss.
    pub opt_main: Adam,
    pub opt_actor: Adam,
    pub opt_alpha: Adam,
    /// Completed update steps.
    pub updates: u64,
}

impl Agent {
    /// Builds every network from `seed`; targets start as exact copies.
    pub fn new(spec: AgentSpec, seed: u64) -> Result<Self> {
        spec.latent.validate()?;
        spec.sac.validate()?;
        if let Some(iv) = &spec.intervention {
            iv.validate()?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (h, w) = (spec.height, spec.width);
        let encoder = Encoder::new(&mut store, "encoder", h, w, &spec.latent, &mut rng)?;
        let decoder = Decoder::new(&mut store, "decoder", h, w, &spec.latent, &mut rng)?;
        let encoder_target = Encoder::new(&mut store, "encoder_target", h, w, &spec.latent, &mut rng)?;
        let input = policy_width(&spec.latent.layout(), &spec.mask);
        let hidden = spec.sac.hidden.clone();
        let actor = Actor::new(&mut store, "actor", input, &hidden, spec.sac.log_std_bounds, &mut rng);
        let critic = Critic::new(&mut store, "critic", input, &hidden, spec.sac.twin_critics, &mut rng);
        let critic_target = Critic::new(&mut store, "critic_target", input, &hidden, spec.sac.twin_critics, &mut rng);
        let log_alpha = store.add("log_alpha", Tensor::from_vec(vec![spec.sac.init_temperature.ln()]));
        crd_diffcore::hard_update(&mut store, &encoder.params(), &encoder_target.params())?;
        crd_diffcore::hard_update(&mut store, &critic.params(), &critic_target.params())?;

        let opt_main = Adam::with_groups(
            &store,
            vec![
                ParamGroup {
                    params: encoder.params(),
                    lr: spec.sac.encoder_lr,
                },
                ParamGroup {
                    params: decoder.params(),
                    lr: spec.sac.encoder_lr,
                },
                ParamGroup {
                    params: critic.params(),
                    lr: spec.sac.critic_lr,
                },
            ],
        );
        let opt_actor = Adam::new(&store, &actor.params(), spec.sac.actor_lr);
        let opt_alpha = Adam::new(&store, &[log_alpha], spec.sac.alpha_lr);
        Ok(Agent {
            spec,
            store,
            encoder,
            decoder,
            encoder_target,
            actor,
            critic,
            critic_target,
            log_alpha,
            opt_main,
            opt_actor,
            opt_alpha,
            updates: 0,
        })
    }

    pub fn layout(&self) -> LatentLayout {
        self.spec.latent.layout()
    }

    pub fn alpha(&self) -> f64 {
        self.store.value(self.log_alpha).item().exp()
    }

    pub fn policy_input_width(&self) -> usize {
        self.actor.input
    }

    fn check_image(&self, d: &DepthImage) -> Result<()> {
        if d.height() != self.spec.height || d.width() != self.spec.width {
            return Err(CoreError::Dimension(format!(
                "depth image {}x{} but the encoder expects {}x{}",
                d.height(),
                d.width(),
                self.spec.height,
                self.spec.width
            )));
        }
        Ok(())
    }

    fn normalized(&self, depth: impl Iterator<Item = f64>) -> Vec<f64> {
        let r = self.spec.max_range;
        depth.map(|v| (v / r).clamp(0.0, 1.0)).collect()
    }

    /// Posterior mean of one observation's latent code.
    pub fn latent_mean(&self, depth: &DepthImage) -> Result<Vec<f64>> {
        self.check_image(depth)?;
        let x = Tensor::new(
            vec![1, self.spec.height, self.spec.width, 1],
            self.normalized(depth.data().iter().copied()),
        )?;
        let mut g = Graph::new();
        let xv = g.constant(x);
        let h = self.encoder.features(&mut g, Bind::frozen(&self.store), xv)?;
        let mu = self.encoder.mu.forward(&mut g, Bind::frozen(&self.store), h)?;
        Ok(g.value(mu).data().to_vec())
    }

    /// Policy input `[selected blocks of z, scaled goal, velocity]` for a
    /// given latent vector.
    pub fn policy_obs_from_latent(&self, z: &[f64], goal: [f64; 3], velocity: [f64; 3]) -> Result<Vec<f64>> {
        let layout = self.layout();
        if z.len() != layout.total() {
            return Err(CoreError::Dimension(format!(
                "latent has length {}, layout {layout} needs {}",
                z.len(),
                layout.total()
            )));
        }
        let s = self.spec.sac.goal_scale;
        let mut out = Vec::with_capacity(self.actor.input);
        for b in self.spec.mask.blocks() {
            let o = layout.offset(b);
            out.extend_from_slice(&z[o..o + layout.size(b)]);
        }
        out.extend(goal.iter().map(|v| v * s));
        out.extend_from_slice(&velocity);
        Ok(out)
    }

    /// Policy input for one UAV's own observation, built from the posterior mean.
    pub fn policy_obs(&self, obs: &Observation) -> Result<Vec<f64>> {
        let z = self.latent_mean(&obs.depth)?;
        self.policy_obs_from_latent(&z, obs.relative_goal.to_array(), obs.velocity)
    }

    pub fn select_action<R: Rng + ?Sized>(
        &self,
        obs: &Observation,
        mode: ActionMode,
        rng: &mut R,
    ) -> Result<ActionCommand> {
        let o = self.policy_obs(obs)?;
        self.actor.act(&self.store, &o, mode, rng)
    }

    /// Minimum critic value for one policy input and command.
    pub fn q_value(&self, policy_obs: &[f64], action: ActionCommand) -> Result<f64> {
        let mut g = Graph::new();
        let o = g.constant(Tensor::new(vec![1, policy_obs.len()], policy_obs.to_vec())?);
        let a = g.constant(Tensor::new(vec![1, 3], normalize_command(action).to_vec())?);
        let q = self.critic.min_q(&mut g, Bind::frozen(&self.store), o, a)?;
        Ok(g.value(q).item())
    }

    /// Draws and preprocesses a batch, including the interventions.
    pub fn sample_batch<R: Rng + ?Sized>(&self, buffer: &ReplayBuffer, rng: &mut R) -> Result<Batch> {
        let (h, w) = (self.spec.height, self.spec.width);
        if buffer.pixels() != h * w {
            return Err(CoreError::Dimension(format!(
                "buffer images have {} pixels, encoder expects {}",
                buffer.pixels(),
                h * w
            )));
        }
        let b = self.spec.sac.batch_size;
        let indices = buffer.sample_indices(b, rng)?;
        let items: Vec<&Transition> = indices.iter().map(|&i| buffer.get(i)).collect();
        let mut images = Vec::with_capacity(b * h * w);
        let mut next_images = Vec::with_capacity(b * h * w);
        for t in &items {
            images.extend(self.normalized(t.depth.iter().map(|v| *v as f64)));
            next_images.extend(self.normalized(t.next_depth.iter().map(|v| *v as f64)));
        }
        let augmented = match &self.spec.intervention {
            None => None,
            Some(cfg) => {
                let c = cfg.count();
                let mut per_kind: Vec<Vec<f64>> = vec![Vec::with_capacity(b * h * w); c];
                for t in &items {
                    let raw: Vec<f64> = t.depth.iter().map(|v| *v as f64).collect();
                    let img = DepthImage::from_clamped(h, w, self.spec.max_range, &raw)?;
                    let variants = intervene_set(&img, cfg, rng)?;
                    for (k, v) in variants.iter().enumerate() {
                        per_kind[k].extend(self.normalized(v.data().iter().copied()));
                    }
                }
                Some(Tensor::new(vec![c * b, h, w, 1], per_kind.concat())?)
            }
        };
        let s = self.spec.sac.goal_scale;
        let rows = |f: &dyn Fn(&Transition) -> [f64; 3]| -> Result<Tensor> {
            Ok(Tensor::new(vec![b, 3], items.iter().flat_map(|t| f(t)).collect())?)
        };
        Ok(Batch {
            images: Tensor::new(vec![b, h, w, 1], images)?,
            augmented,
            next_images: Tensor::new(vec![b, h, w, 1], next_images)?,
            goal: rows(&|t| t.goal.map(|v| v * s))?,
            velocity: rows(&|t| t.velocity)?,
            next_goal: rows(&|t| t.next_goal.map(|v| v * s))?,
            next_velocity: rows(&|t| t.next_velocity)?,
            actions: rows(&|t| normalize_command(ActionCommand::from_array(t.action)))?,
            rewards: items.iter().map(|t| t.reward).collect(),
            dones: items.iter().map(|t| t.done).collect(),
            indices,
        })
    }

    /// Soft Bellman targets from the target encoder and target critics.
    pub fn critic_targets<R: Rng + ?Sized>(&self, batch: &Batch, rng: &mut R) -> Result<Tensor> {
        let b = batch.rewards.len();
        let n = self.layout().total();
        let eps = normal_tensor(rng, &[b, n]);
        let eps_a = normal_tensor(rng, &[b, 3]);
        let frozen = Bind::frozen(&self.store);
        let mut g = Graph::new();
        let x = g.constant(batch.next_images.clone());
        let out = self.encoder_target.encode(&mut g, frozen, x, &eps)?;
        let goal = g.constant(batch.next_goal.clone());
        let vel = g.constant(batch.next_velocity.clone());
        let obs = policy_view(&mut g, out.z, goal, vel, &self.layout(), &self.spec.mask)?;
        let s = self.actor.sample(&mut g, frozen, obs, &eps_a)?;
        let q = self.critic_target.min_q(&mut g, frozen, obs, s.action)?;
        let alpha = self.alpha();
        let gamma = self.spec.sac.gamma;
        let qd = g.value(q).data();
        let lp = g.value(s.log_prob).data();
        let y = (0..b)
            .map(|i| soft_target(batch.rewards[i], batch.dones[i], gamma, qd[i], lp[i], alpha))
            .collect();
        Ok(Tensor::new(vec![b, 1], y)?)
    }

    /// One full update: representation losses plus critic loss in one
    /// backward pass, then the delayed actor, temperature and target steps.
    pub fn update<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, rng: &mut R) -> Result<UpdateStats> {
        let batch = self.sample_batch(buffer, rng)?;
        self.update_on(&batch, rng)
    }

    pub fn update_on<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<UpdateStats> {
        let b = batch.rewards.len();
        let layout = self.layout();
        let n = layout.total();
        let lat = self.spec.latent.clone();
        let alpha = self.alpha();
        let y = self.critic_targets(batch, rng)?;
        let eps = normal_tensor(rng, &[b, n]);

        let mut g = Graph::new();
        let p = Bind::train(&self.store);
        let c = batch.augmented.as_ref().map_or(0, |a| a.shape()[0] / b);
        let (x_all, eps_all) = match &batch.augmented {
            None => (batch.images.clone(), eps.clone()),
            Some(aug) => {
                let mut data = batch.images.data().to_vec();
                data.extend_from_slice(aug.data());
                let mut shape = batch.images.shape().to_vec();
                shape[0] = (c + 1) * b;
                let tiled: Vec<f64> = eps.data().iter().copied().cycle().take((c + 1) * b * n).collect();
                (Tensor::new(shape, data)?, Tensor::new(vec![(c + 1) * b, n], tiled)?)
            }
        };
        let x = g.constant(x_all);
        let out = self.encoder.encode(&mut g, p, x, &eps_all)?;
        let rows = |g: &mut Graph, v, k: usize| g.slice(v, 0, k * b, b);
        let x_o = rows(&mut g, x, 0)?;
        let z_o = rows(&mut g, out.z, 0)?;
        let mu_o = rows(&mut g, out.mu, 0)?;
        let ls_o = rows(&mut g, out.log_std, 0)?;
        let h_o = rows(&mut g, out.h, 0)?;
        let hr_o = rows(&mut g, out.h_rec, 0)?;

        let x_hat = self.decoder.decode(&mut g, p, z_o)?;
        let vae = loss_vae(&mut g, x_o, x_hat, mu_o, ls_o, lat.kl_weight)?;
        let rec = loss_rec(&mut g, h_o, hr_o)?;
        let align = if c > 0 {
            let source = match lat.align_target {
                AlignTarget::Sample => out.z,
                AlignTarget::Mean => out.mu,
            };
            let base = rows(&mut g, source, 0)?;
            let z3 = block(&mut g, base, &layout, Block::Z3)?;
            let mut augs = Vec::with_capacity(c);
            for k in 1..=c {
                let r = rows(&mut g, source, k)?;
                augs.push(block(&mut g, r, &layout, Block::Z3)?);
            }
            Some(loss_align(&mut g, z3, &augs)?)
        } else {
            None
        };

        let goal = g.constant(batch.goal.clone());
        let vel = g.constant(batch.velocity.clone());
        let obs = policy_view(&mut g, z_o, goal, vel, &layout, &self.spec.mask)?;
        let act = g.constant(batch.actions.clone());
        let qs = self.critic.q_values(&mut g, p, obs, act)?;
        let lq = critic_loss(&mut g, &qs, &y)?;

        let mut total = g.scale(vae.total, lat.w_vae);
        let wr = g.scale(rec, lat.w_rec);
        total = g.add(total, wr)?;
        if let Some(a) = align {
            let wa = g.scale(a, lat.w_align);
            total = g.add(total, wa)?;
        }
        total = g.add(total, lq)?;

        let bundle = LossBundle {
            l_vae: g.value(vae.total).item(),
            l_rec: g.value(rec).item(),
            l_align: align.map_or(0.0, |a| g.value(a).item()),
            w_vae: lat.w_vae,
            w_rec: lat.w_rec,
            w_align: lat.w_align,
        };
        let l_q = g.value(lq).item();
        if !bundle.is_finite() || !l_q.is_finite() {
            return Err(CoreError::Numeric(format!(
                "loss (vae {}, rec {}, align {}, q {l_q})",
                bundle.l_vae, bundle.l_rec, bundle.l_align
            )));
        }
        let obs_value = g.value(obs).clone();

        self.store.zero_all_grads();
        g.backward(total, &mut self.store)?;
        drop(g);
        self.opt_main.step(&mut self.store)?;

        let step = self.updates;
        let mut l_pi = None;
        if step % self.spec.sac.actor_update_frequency as u64 == 0 {
            let eps_pi = normal_tensor(rng, &[b, 3]);
            let critic = &self.critic;
            let (lp, mean_logp) = actor_step(
                &self.actor,
                &mut self.store,
                &mut self.opt_actor,
                &obs_value,
                &eps_pi,
                alpha,
                |g, store, o, a| critic.min_q(g, Bind::frozen(store), o, a),
            )?;
            l_pi = Some(lp);
            if self.spec.sac.learn_temperature {
                temperature_step(
                    &mut self.store,
                    &mut self.opt_alpha,
                    self.log_alpha,
                    mean_logp,
                    self.spec.sac.target_entropy,
                )?;
            }
        }
        if step % self.spec.sac.critic_target_update_frequency as u64 == 0 {
            soft_update(
                &mut self.store,
                &self.critic.params(),
                &self.critic_target.params(),
                self.spec.sac.tau_q,
            )?;
            soft_update(
                &mut self.store,
                &self.encoder.params(),
                &self.encoder_target.params(),
                self.spec.sac.tau_enc,
            )?;
        }
        self.updates += 1;
        Ok(UpdateStats {
            l_vae: bundle.l_vae,
            l_rec: bundle.l_rec,
            l_align: bundle.l_align,
            l_q,
            l_pi,
            alpha: self.alpha(),
        })
    }

    /// Parameter ids grouped by network, in a fixed order.
    pub fn param_groups(&self) -> Vec<(&'static str, Vec<ParamId>)> {
        vec![
            ("encoder", self.encoder.params()),
            ("decoder", self.decoder.params()),
            ("encoder_target", self.encoder_target.params()),
            ("actor", self.actor.params()),
            ("critic", self.critic.params()),
            ("critic_target", self.critic_target.params()),
            ("log_alpha", vec![self.log_alpha]),
        ]
    }
}
