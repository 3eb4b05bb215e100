//! Partitioned variational encoder, convolutional decoder, the three latent
//! losses and the policy view that filters latent blocks.
//!
//! The latent vector is laid out as `z = [z1 | z2 | z3]`. `z1` collects
//! task-irrelevant content and is fed only to the decoder; `z2` and `z3` are
//! task-relevant, and `z3` alone is pulled together across background
//! interventions.

use std::fmt;

use crd_diffcore::{Graph, ParamId, ParamStore, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::nn::{check_finite, Bind, Conv, ConvTranspose, Linear};

pub const LOG_STD_MIN: f64 = -10.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Block {
    #[serde(rename = "z1")]
    Z1,
    #[serde(rename = "z2")]
    Z2,
    #[serde(rename = "z3")]
    Z3,
}

impl Block {
    pub const ALL: [Block; 3] = [Block::Z1, Block::Z2, Block::Z3];

    pub fn name(self) -> &'static str {
        match self {
            Block::Z1 => "z1",
            Block::Z2 => "z2",
            Block::Z3 => "z3",
        }
    }
}

/// Nonempty selection of latent blocks visible to the policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Block>", into = "Vec<Block>")]
pub struct BlockMask {
    selected: [bool; 3],
}

impl BlockMask {
    pub fn new(blocks: &[Block]) -> Result<Self> {
        let mut selected = [false; 3];
        for b in blocks {
            selected[*b as usize] = true;
        }
        if !selected.iter().any(|s| *s) {
            return Err(CoreError::Config("block mask selects no latent block".into()));
        }
        Ok(BlockMask { selected })
    }

    /// `{z2, z3}`: the causal view.
    pub fn causal() -> Self {
        BlockMask {
            selected: [false, true, true],
        }
    }

    pub fn all() -> Self {
        BlockMask { selected: [true; 3] }
    }

    pub fn contains(&self, b: Block) -> bool {
        self.selected[b as usize]
    }

    pub fn blocks(&self) -> Vec<Block> {
        Block::ALL.into_iter().filter(|b| self.contains(*b)).collect()
    }

    /// Width of the latent part of the policy input.
    pub fn latent_width(&self, layout: &LatentLayout) -> usize {
        self.blocks().iter().map(|b| layout.size(*b)).sum()
    }

    /// The four masks of the component ablation, causal view first.
    pub fn ablation_set() -> Vec<BlockMask> {
        vec![
            BlockMask::causal(),
            BlockMask::new(&[Block::Z2]).expect("nonempty"),
            BlockMask::new(&[Block::Z3]).expect("nonempty"),
            BlockMask::all(),
        ]
    }
}

impl Default for BlockMask {
    fn default() -> Self {
        BlockMask::causal()
    }
}

impl TryFrom<Vec<Block>> for BlockMask {
    type Error = CoreError;

    fn try_from(v: Vec<Block>) -> Result<Self> {
        BlockMask::new(&v)
    }
}

impl From<BlockMask> for Vec<Block> {
    fn from(m: BlockMask) -> Self {
        m.blocks()
    }
}

impl fmt::Display for BlockMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.blocks().iter().map(|b| b.name()).collect();
        write!(f, "{{{}}}", names.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentLayout {
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
}

impl LatentLayout {
    pub fn new(n1: usize, n2: usize, n3: usize) -> Result<Self> {
        let l = LatentLayout { n1, n2, n3 };
        l.validate()?;
        Ok(l)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n1 == 0 || self.n2 == 0 || self.n3 == 0 {
            return Err(CoreError::Config(format!("latent blocks must be nonempty, got {self}")));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.n1 + self.n2 + self.n3
    }

    pub fn size(&self, b: Block) -> usize {
        match b {
            Block::Z1 => self.n1,
            Block::Z2 => self.n2,
            Block::Z3 => self.n3,
        }
    }

    pub fn offset(&self, b: Block) -> usize {
        match b {
            Block::Z1 => 0,
            Block::Z2 => self.n1,
            Block::Z3 => self.n1 + self.n2,
        }
    }
}

impl fmt::Display for LatentLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.n1, self.n2, self.n3)
    }
}

/// Which latent statistic the alignment loss compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignTarget {
    /// Reparameterized samples with the noise shared across branches.
    #[default]
    Sample,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatentConfig {
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
    /// Output channels of the four stride-2 encoder convolutions.
    pub channels: [usize; 4],
    /// Width of the pre-latent feature `h`.
    pub feature_dim: usize,
    /// Weight of the KL term inside the VAE loss.
    pub kl_weight: f64,
    pub w_vae: f64,
    pub w_rec: f64,
    pub w_align: f64,
    pub align_target: AlignTarget,
}

impl Default for LatentConfig {
    fn default() -> Self {
        LatentConfig {
            n1: 16,
            n2: 16,
            n3: 32,
            channels: [16, 32, 32, 32],
            feature_dim: 128,
            kl_weight: 1e-3,
            w_vae: 1.0,
            w_rec: 0.1,
            w_align: 1.0,
            align_target: AlignTarget::Sample,
        }
    }
}

impl LatentConfig {
    pub fn layout(&self) -> LatentLayout {
        LatentLayout {
            n1: self.n1,
            n2: self.n2,
            n3: self.n3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.layout().validate()?;
        if self.channels.contains(&0) || self.feature_dim == 0 {
            return Err(CoreError::Config("encoder widths must be positive".into()));
        }
        for (name, w) in [
            ("kl_weight", self.kl_weight),
            ("w_vae", self.w_vae),
            ("w_rec", self.w_rec),
            ("w_align", self.w_align),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(CoreError::Config(format!("{name} = {w} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Symbolic outputs of one encoder pass over a batch.
#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    /// `[batch, feature_dim]`
    pub h: Var,
    /// `[batch, n]`
    pub mu: Var,
    /// `[batch, n]`, clamped to `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub log_std: Var,
    /// `mu + exp(log_std) * eps`
    pub z: Var,
    /// `h` rebuilt from `z` by the inverse bottleneck.
    pub h_rec: Var,
}

/// Four stride-2 convolutions, a feature layer, the `(mu, log_std)`
/// bottleneck and the inverse bottleneck `z -> h_rec`.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub convs: Vec<Conv>,
    pub fc: Linear,
    pub mu: Linear,
    pub log_std: Linear,
    pub inverse: Linear,
    pub height: usize,
    pub width: usize,
    pub layout: LatentLayout,
}

fn check_image_size(height: usize, width: usize) -> Result<()> {
    if height < 16 || width < 16 || !height.is_power_of_two() || !width.is_power_of_two() {
        return Err(CoreError::Config(format!(
            "image {height}x{width} must be a power of two of at least 16"
        )));
    }
    Ok(())
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        height: usize,
        width: usize,
        cfg: &LatentConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        check_image_size(height, width)?;
        let mut cin = 1;
        let mut convs = Vec::with_capacity(4);
        for (i, &cout) in cfg.channels.iter().enumerate() {
            convs.push(Conv::new(store, &format!("{name}.conv{i}"), 3, cin, cout, 2, 1, rng));
            cin = cout;
        }
        let flat = (height / 16) * (width / 16) * cin;
        let n = cfg.layout().total();
        Ok(Encoder {
            convs,
            fc: Linear::new(store, &format!("{name}.fc"), flat, cfg.feature_dim, rng),
            mu: Linear::new(store, &format!("{name}.mu"), cfg.feature_dim, n, rng),
            log_std: Linear::new(store, &format!("{name}.log_std"), cfg.feature_dim, n, rng),
            inverse: Linear::new(store, &format!("{name}.inverse"), n, cfg.feature_dim, rng),
            height,
            width,
            layout: cfg.layout(),
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p: Vec<ParamId> = self.convs.iter().flat_map(Conv::params).collect();
        for l in [&self.fc, &self.mu, &self.log_std, &self.inverse] {
            p.extend(l.params());
        }
        p
    }

    /// `x` is `[batch, height, width, 1]` with readings normalised to `[0, 1]`.
    pub fn features(&self, g: &mut Graph, p: Bind, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != self.height || shape[2] != self.width || shape[3] != 1 {
            return Err(CoreError::Dimension(format!(
                "encoder expects [B, {}, {}, 1], got {shape:?}",
                self.height, self.width
            )));
        }
        let mut a = x;
        for (i, conv) in self.convs.iter().enumerate() {
            a = conv.forward(g, p, a)?;
            a = g.relu(a);
            check_finite(g, a, &format!("encoder conv{i}"))?;
        }
        let flat: usize = g.shape(a)[1..].iter().product();
        let a = g.reshape(a, &[shape[0], flat])?;
        let h = self.fc.forward(g, p, a)?;
        let h = g.tanh(h);
        check_finite(g, h, "encoder fc")?;
        Ok(h)
    }

    /// Full pass with externally drawn standard-normal noise `eps`
    /// (`[batch, n]`).
    pub fn encode(&self, g: &mut Graph, p: Bind, x: Var, eps: &Tensor) -> Result<EncoderOutput> {
        let h = self.features(g, p, x)?;
        let batch = g.shape(x)[0];
        if eps.shape() != [batch, self.layout.total()] {
            return Err(CoreError::Dimension(format!(
                "noise shape {:?} does not match [{batch}, {}]",
                eps.shape(),
                self.layout.total()
            )));
        }
        let mu = self.mu.forward(g, p, h)?;
        check_finite(g, mu, "encoder mu")?;
        let ls = self.log_std.forward(g, p, h)?;
        let log_std = g.clamp(ls, LOG_STD_MIN, LOG_STD_MAX);
        check_finite(g, log_std, "encoder log_std")?;
        let std = g.exp(log_std);
        let e = g.constant(eps.clone());
        let noise = g.mul(std, e)?;
        let z = g.add(mu, noise)?;
        let r = self.inverse.forward(g, p, z)?;
        let h_rec = g.tanh(r);
        check_finite(g, h_rec, "encoder inverse bottleneck")?;
        Ok(EncoderOutput {
            h,
            mu,
            log_std,
            z,
            h_rec,
        })
    }
}

/// Mirror of the encoder: a linear map to a `height/16 x width/16` grid and
/// four stride-2 transposed convolutions ending in a sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub fc: Linear,
    pub deconvs: Vec<ConvTranspose>,
    pub height: usize,
    pub width: usize,
    pub base_channels: usize,
    pub latent: usize,
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        height: usize,
        width: usize,
        cfg: &LatentConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        check_image_size(height, width)?;
        let n = cfg.layout().total();
        let base_channels = cfg.channels[3];
        let fc = Linear::new(store, &format!("{name}.fc"), n, (height / 16) * (width / 16) * base_channels, rng);
        let outs = [cfg.channels[2], cfg.channels[1], cfg.channels[0], 1];
        let mut cin = base_channels;
        let mut deconvs = Vec::with_capacity(4);
        for (i, &cout) in outs.iter().enumerate() {
            deconvs.push(ConvTranspose::new(store, &format!("{name}.deconv{i}"), 4, cin, cout, 2, 1, rng));
            cin = cout;
        }
        Ok(Decoder {
            fc,
            deconvs,
            height,
            width,
            base_channels,
            latent: n,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.fc.params();
        p.extend(self.deconvs.iter().flat_map(ConvTranspose::params));
        p
    }

    /// `z` is `[batch, n]`; the result is `[batch, height, width, 1]` in `(0, 1)`.
    pub fn decode(&self, g: &mut Graph, p: Bind, z: Var) -> Result<Var> {
        let shape = g.shape(z).to_vec();
        if shape.len() != 2 || shape[1] != self.latent {
            return Err(CoreError::Dimension(format!(
                "decoder expects [B, {}], got {shape:?}",
                self.latent
            )));
        }
        let a = self.fc.forward(g, p, z)?;
        let a = g.relu(a);
        let mut a = g.reshape(a, &[shape[0], self.height / 16, self.width / 16, self.base_channels])?;
        for (i, deconv) in self.deconvs.iter().enumerate() {
            a = deconv.forward(g, p, a)?;
            if i + 1 < self.deconvs.len() {
                a = g.relu(a);
            }
            check_finite(g, a, &format!("decoder deconv{i}"))?;
        }
        Ok(g.sigmoid(a))
    }
}

/// Closed-form `KL(N(mu, sigma^2) || N(0, I))`, summed over latent
/// coordinates and averaged over the batch.
pub fn kl_divergence(g: &mut Graph, mu: Var, log_std: Var) -> Result<Var> {
    let mu2 = g.square(mu);
    let two_ls = g.scale(log_std, 2.0);
    let var = g.exp(two_ls);
    let a = g.add(mu2, var)?;
    let a = g.sub(a, two_ls)?;
    let a = g.add_scalar(a, -1.0);
    let per_sample = g.sum_axis(a, 1)?;
    let m = g.mean(per_sample);
    Ok(g.scale(m, 0.5))
}

pub fn mse(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    if g.shape(a) != g.shape(b) {
        return Err(CoreError::Dimension(format!(
            "mse operands {:?} and {:?}",
            g.shape(a),
            g.shape(b)
        )));
    }
    let d = g.sub(a, b)?;
    let d2 = g.square(d);
    Ok(g.mean(d2))
}

#[derive(Debug, Clone, Copy)]
pub struct VaeLoss {
    pub total: Var,
    pub reconstruction: Var,
    pub kl: Var,
}

/// Pixel mean squared error plus `kl_weight` times the KL term.
pub fn loss_vae(g: &mut Graph, x: Var, x_hat: Var, mu: Var, log_std: Var, kl_weight: f64) -> Result<VaeLoss> {
    let reconstruction = mse(g, x_hat, x)?;
    let kl = kl_divergence(g, mu, log_std)?;
    let weighted = g.scale(kl, kl_weight);
    let total = g.add(reconstruction, weighted)?;
    Ok(VaeLoss {
        total,
        reconstruction,
        kl,
    })
}

/// Mean squared error between the feature `h` and its rebuild `h_rec`.
pub fn loss_rec(g: &mut Graph, h: Var, h_rec: Var) -> Result<Var> {
    mse(g, h_rec, h)
}

/// `(1/C) sum_i ||z3 - z3_aug_i||^2`, averaged over the batch. Gradient
/// reaches both branches.
pub fn loss_align(g: &mut Graph, z3: Var, z3_aug: &[Var]) -> Result<Var> {
    if z3_aug.is_empty() {
        return Err(CoreError::Config("alignment needs at least one augmentation".into()));
    }
    let mut terms = Vec::with_capacity(z3_aug.len());
    for &aug in z3_aug {
        if g.shape(aug) != g.shape(z3) || g.shape(z3).len() != 2 {
            return Err(CoreError::Dimension(format!(
                "alignment blocks {:?} and {:?}",
                g.shape(z3),
                g.shape(aug)
            )));
        }
        let d = g.sub(z3, aug)?;
        let d2 = g.square(d);
        let per_sample = g.sum_axis(d2, 1)?;
        terms.push(g.mean(per_sample));
    }
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t)?;
    }
    Ok(g.scale(acc, 1.0 / terms.len() as f64))
}

/// Column slice of `z` (`[batch, n]`) holding one block.
pub fn block(g: &mut Graph, z: Var, layout: &LatentLayout, b: Block) -> Result<Var> {
    if g.shape(z).len() != 2 || g.shape(z)[1] != layout.total() {
        return Err(CoreError::Dimension(format!(
            "latent {:?} does not match layout {layout}",
            g.shape(z)
        )));
    }
    Ok(g.slice(z, 1, layout.offset(b), layout.size(b))?)
}

/// Policy input `[selected blocks of z, goal (3), velocity (3)]`.
pub fn policy_view(
    g: &mut Graph,
    z: Var,
    goal: Var,
    vel: Var,
    layout: &LatentLayout,
    mask: &BlockMask,
) -> Result<Var> {
    let mut parts = Vec::with_capacity(5);
    for b in mask.blocks() {
        parts.push(block(g, z, layout, b)?);
    }
    for (name, v) in [("goal", goal), ("velocity", vel)] {
        let s = g.shape(v);
        if s.len() != 2 || s[1] != 3 || s[0] != g.shape(z)[0] {
            return Err(CoreError::Dimension(format!("{name} must be [B, 3], got {s:?}")));
        }
        parts.push(v);
    }
    Ok(g.concat(&parts, 1)?)
}

/// Width of [`policy_view`] for a layout and mask.
pub fn policy_width(layout: &LatentLayout, mask: &BlockMask) -> usize {
    mask.latent_width(layout) + 6
}

/// The weighted representation objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBundle {
    pub l_vae: f64,
    pub l_rec: f64,
    pub l_align: f64,
    pub w_vae: f64,
    pub w_rec: f64,
    pub w_align: f64,
}

impl LossBundle {
    pub fn total(&self) -> f64 {
        self.w_vae * self.l_vae + self.w_rec * self.l_rec + self.w_align * self.l_align
    }

    pub fn is_finite(&self) -> bool {
        [self.l_vae, self.l_rec, self.l_align].iter().all(|v| v.is_finite())
    }
}
