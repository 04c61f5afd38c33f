//! Parameter initialisation and the small building blocks shared by every
//! module: convolutions, linear maps, time embedding, ResBlocks and
//! cross-attention.

use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, Result};
use crate::{Graph, ParamStore, Scalar, Tensor, Var};

/// Fills a [`ParamStore`] in call order from one seeded generator.
pub(crate) struct Init<'a, T: Scalar> {
    pub store: &'a mut ParamStore<T>,
    pub rng: ChaCha8Rng,
}

impl<T: Scalar> Init<'_, T> {
    fn put(&mut self, name: String, value: Tensor<T>) -> Result<()> {
        self.store.insert(name, value)
    }

    /// Uniform ±1/√fan_in weights and biases.
    pub fn conv(&mut self, name: &str, cout: usize, cin_per_group: usize, k: usize) -> Result<()> {
        let bound = 1.0 / ((cin_per_group * k * k) as f64).sqrt();
        let w = Tensor::uniform(vec![cout, cin_per_group, k, k], bound, &mut self.rng);
        let b = Tensor::uniform(vec![cout], bound, &mut self.rng);
        self.put(format!("{name}.weight"), w)?;
        self.put(format!("{name}.bias"), b)
    }

    pub fn conv_zero(&mut self, name: &str, cout: usize, cin: usize, k: usize) -> Result<()> {
        self.put(format!("{name}.weight"), Tensor::zeros(vec![cout, cin, k, k]))?;
        self.put(format!("{name}.bias"), Tensor::zeros(vec![cout]))
    }

    /// Gaussian weights, zero bias.
    pub fn conv_gauss(&mut self, name: &str, cout: usize, cin: usize, k: usize, std: f64) -> Result<()> {
        let w = Tensor::randn(vec![cout, cin, k, k], std, &mut self.rng);
        self.put(format!("{name}.weight"), w)?;
        self.put(format!("{name}.bias"), Tensor::zeros(vec![cout]))
    }

    /// Weight stored `[in, out]` so that `y = x·W + b`.
    pub fn linear(&mut self, name: &str, din: usize, dout: usize) -> Result<()> {
        let bound = 1.0 / (din as f64).sqrt();
        let w = Tensor::uniform(vec![din, dout], bound, &mut self.rng);
        let b = Tensor::uniform(vec![dout], bound, &mut self.rng);
        self.put(format!("{name}.weight"), w)?;
        self.put(format!("{name}.bias"), b)
    }

    pub fn linear_zero(&mut self, name: &str, din: usize, dout: usize) -> Result<()> {
        self.put(format!("{name}.weight"), Tensor::zeros(vec![din, dout]))?;
        self.put(format!("{name}.bias"), Tensor::zeros(vec![dout]))
    }

    /// Bias-free projection matrix.
    pub fn matrix(&mut self, name: &str, din: usize, dout: usize) -> Result<()> {
        let bound = 1.0 / (din as f64).sqrt();
        let w = Tensor::uniform(vec![din, dout], bound, &mut self.rng);
        self.put(format!("{name}.weight"), w)
    }

    pub fn matrix_zero(&mut self, name: &str, din: usize, dout: usize) -> Result<()> {
        self.put(format!("{name}.weight"), Tensor::zeros(vec![din, dout]))
    }

    pub fn tensor(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        self.put(name.to_string(), value)
    }

    pub fn time_mlp(&mut self, name: &str, dim: usize) -> Result<()> {
        self.linear(&format!("{name}.l1"), dim, dim)?;
        self.linear(&format!("{name}.l2"), dim, dim)
    }

    pub fn resblock(&mut self, name: &str, cin: usize, cout: usize, time_dim: usize) -> Result<()> {
        self.conv(&format!("{name}.conv1"), cout, cin, 3)?;
        self.linear(&format!("{name}.emb"), time_dim, cout)?;
        self.conv(&format!("{name}.conv2"), cout, cout, 3)?;
        if cin != cout {
            self.conv(&format!("{name}.skip"), cout, cin, 1)?;
        }
        Ok(())
    }

    pub fn cross_attention(&mut self, name: &str, channels: usize, ctx_dim: usize) -> Result<()> {
        self.matrix(&format!("{name}.q"), channels, channels)?;
        self.matrix(&format!("{name}.k"), ctx_dim, channels)?;
        self.matrix(&format!("{name}.v"), ctx_dim, channels)?;
        self.linear(&format!("{name}.out"), channels, channels)
    }
}

/// Records forward computations against a parameter store.
pub struct Net<'a, T: Scalar> {
    pub p: &'a ParamStore<T>,
    pub g: &'a mut Graph<T>,
}

pub(crate) const LN_EPS: f64 = 1e-5;

impl<'a, T: Scalar> Net<'a, T> {
    pub fn new(p: &'a ParamStore<T>, g: &'a mut Graph<T>) -> Self {
        Self { p, g }
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        self.p.bind(self.g, name)
    }

    /// Convolution with "same" padding for the stored odd kernel.
    pub fn conv(&mut self, name: &str, x: Var, stride: usize, groups: usize) -> Result<Var> {
        let w = self.param(&format!("{name}.weight"))?;
        let b = self.param(&format!("{name}.bias"))?;
        let k = self.g.shape(w)[2];
        self.g.conv2d(x, w, Some(b), stride, k / 2, groups)
    }

    /// `x·W + b` over the last axis.
    pub fn linear(&mut self, name: &str, x: Var) -> Result<Var> {
        let w = self.param(&format!("{name}.weight"))?;
        let b = self.param(&format!("{name}.bias"))?;
        let y = self.g.matmul(x, w)?;
        self.g.add(y, b)
    }

    pub fn matrix(&mut self, name: &str, x: Var) -> Result<Var> {
        let w = self.param(&format!("{name}.weight"))?;
        self.g.matmul(x, w)
    }

    /// `[N, D] → [N, D, 1, 1]` for broadcasting over feature maps.
    pub fn as_map(&mut self, v: Var) -> Result<Var> {
        let s = self.g.shape(v).to_vec();
        if s.len() != 2 {
            return Err(dim_err!("expected [N, D], got {s:?}"));
        }
        self.g.reshape(v, &[s[0], s[1], 1, 1])
    }

    /// Sinusoidal encoding followed by Linear → SiLU → Linear: `[N, dim]`.
    pub fn time_embed(&mut self, name: &str, t: &[usize], dim: usize) -> Result<Var> {
        let table = sinusoid_table::<T>(t, dim)?;
        let x = self.g.constant(table);
        let h = self.linear(&format!("{name}.l1"), x)?;
        let h = self.g.silu(h);
        self.linear(&format!("{name}.l2"), h)
    }

    /// `skip(x) + conv2(silu(conv1(silu(x)) + W·silu(emb)))`.
    pub fn resblock(&mut self, name: &str, x: Var, emb: Var) -> Result<Var> {
        let a = self.g.silu(x);
        let h = self.conv(&format!("{name}.conv1"), a, 1, 1)?;
        let e = self.g.silu(emb);
        let e = self.linear(&format!("{name}.emb"), e)?;
        let e = self.as_map(e)?;
        let h = self.g.add(h, e)?;
        let h = self.g.silu(h);
        let h = self.conv(&format!("{name}.conv2"), h, 1, 1)?;
        let skip = if self.p.contains(&format!("{name}.skip.weight")) {
            self.conv(&format!("{name}.skip"), x, 1, 1)?
        } else {
            x
        };
        self.g.add(skip, h)
    }

    /// Single-head attention from every position of `x: [N,C,H,W]` to the
    /// tokens of `ctx: [N,L,D]`, added back residually.
    pub fn cross_attention(&mut self, name: &str, x: Var, ctx: Var) -> Result<Var> {
        let s = self.g.shape(x).to_vec();
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        let xn = self.g.layer_norm(x, LN_EPS)?;
        let flat = self.g.reshape(xn, &[n, c, hw])?;
        let tokens = self.g.transpose(flat)?;
        let q = self.matrix(&format!("{name}.q"), tokens)?;
        let k = self.matrix(&format!("{name}.k"), ctx)?;
        let v = self.matrix(&format!("{name}.v"), ctx)?;
        let kt = self.g.transpose(k)?;
        let scores = self.g.matmul(q, kt)?;
        let scores = self.g.scale(scores, 1.0 / (c as f64).sqrt());
        let attn = self.g.softmax(scores, 2)?;
        let o = self.g.matmul(attn, v)?;
        let o = self.linear(&format!("{name}.out"), o)?;
        let o = self.g.transpose(o)?;
        let o = self.g.reshape(o, &s)?;
        self.g.add(x, o)
    }
}

/// `[sin(t·ω_0) … sin(t·ω_{h−1}), cos(t·ω_0) … cos(t·ω_{h−1})]` with
/// `ω_i = 10000^(−i/h)`, `h = dim/2`; one row per timestep.
pub fn sinusoid_table<T: Scalar>(t: &[usize], dim: usize) -> Result<Tensor<T>> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(t.len() * dim);
    for &ti in t {
        let freqs = (0..half).map(|i| (-(10000f64.ln()) * i as f64 / half as f64).exp());
        let args: Vec<f64> = freqs.map(|w| ti as f64 * w).collect();
        data.extend(args.iter().map(|a| T::of(a.sin())));
        data.extend(args.iter().map(|a| T::of(a.cos())));
    }
    Tensor::new(vec![t.len(), dim], data)
}
