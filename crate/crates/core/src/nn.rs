//! Small layer library over the parameter store.

use crd_diffcore::{Graph, ParamId, ParamStore, Tensor, Var};
use rand::Rng;

use crate::error::{CoreError, Result};

/// How a forward pass reads weights: as trainable graph parameters, or as
/// constants that never receive gradient (target networks, frozen lookups).
#[derive(Clone, Copy)]
pub struct Bind<'a> {
    pub store: &'a ParamStore,
    pub frozen: bool,
}

impl<'a> Bind<'a> {
    pub fn train(store: &'a ParamStore) -> Self {
        Bind { store, frozen: false }
    }

    pub fn frozen(store: &'a ParamStore) -> Self {
        Bind { store, frozen: true }
    }

    pub fn get(&self, g: &mut Graph, id: ParamId) -> Var {
        if self.frozen {
            g.constant(self.store.value(id).clone())
        } else {
            g.param(self.store, id)
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// Fails with the layer name if any activation is NaN or infinite.
pub fn check_finite(g: &Graph, v: Var, layer: &str) -> Result<()> {
    if g.value(v).is_finite() {
        Ok(())
    } else {
        Err(CoreError::Numeric(layer.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), uniform(rng, &[fan_in, fan_out], bound));
        let bias = store.add(format!("{name}.bias"), uniform(rng, &[fan_out], bound));
        Linear {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: Bind, x: Var) -> Result<Var> {
        let w = p.get(g, self.weight);
        let b = p.get(g, self.bias);
        let y = g.matmul(x, w)?;
        Ok(g.add(y, b)?)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.weight, self.bias]
    }
}

/// Square-kernel convolution with bias over NHWC input.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        size: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / ((cin * size * size) as f64).sqrt();
        let kernel = store.add(format!("{name}.kernel"), uniform(rng, &[size, size, cin, cout], bound));
        let bias = store.add(format!("{name}.bias"), uniform(rng, &[cout], bound));
        Conv {
            kernel,
            bias,
            stride,
            pad,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: Bind, x: Var) -> Result<Var> {
        let k = p.get(g, self.kernel);
        let b = p.get(g, self.bias);
        let y = g.conv2d(x, k, self.stride, self.pad)?;
        Ok(g.add(y, b)?)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.kernel, self.bias]
    }
}

/// Transposed convolution (the adjoint of [`Conv`]) with bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        size: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / ((cin * size * size) as f64 / (stride * stride) as f64).sqrt();
        let kernel = store.add(format!("{name}.kernel"), uniform(rng, &[size, size, cout, cin], bound));
        let bias = store.add(format!("{name}.bias"), uniform(rng, &[cout], bound));
        ConvTranspose {
            kernel,
            bias,
            stride,
            pad,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: Bind, x: Var) -> Result<Var> {
        let k = p.get(g, self.kernel);
        let b = p.get(g, self.bias);
        let y = g.conv_transpose2d(x, k, self.stride, self.pad)?;
        Ok(g.add(y, b)?)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.kernel, self.bias]
    }
}

/// Fully connected stack with ReLU between layers and a linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, widths: &[usize], rng: &mut R) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Mlp { layers }
    }

    pub fn forward(&self, g: &mut Graph, p: Bind, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, p, h)?;
            if i + 1 < self.layers.len() {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(Linear::params).collect()
    }
}
