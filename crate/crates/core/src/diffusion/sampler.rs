use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::schedule::{q_sample_batch, NoiseSchedule};
use crate::error::{config_err, dim_err, Result};
use crate::{Graph, Scalar, Tensor, Var};

/// Anything that predicts the injected noise from `(z_t, t, x_lq)`.
pub trait EpsilonModel<T: Scalar> {
    /// Record the prediction on `g`. `t` holds one timestep per batch element.
    fn predict_eps_graph(&self, g: &mut Graph<T>, z_t: Var, t: &[usize], x_lq: Var) -> Result<Var>;

    fn predict_eps(&self, z_t: &Tensor<T>, t: &[usize], x_lq: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let z = g.constant(z_t.clone());
        let x = g.constant(x_lq.clone());
        let out = self.predict_eps_graph(&mut g, z, t, x)?;
        Ok(g.value(out).clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub num_steps: usize,
    pub eta: f64,
    pub seed: u64,
    /// Clamp each ẑ₀ estimate to the data range [−1, 1] and re-derive ε̂
    /// from it before stepping.
    pub clip_denoised: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            num_steps: 50,
            eta: 0.0,
            seed: 0,
            clip_denoised: true,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, steps: usize) -> Result<()> {
        if self.num_steps == 0 || self.num_steps > steps {
            return Err(config_err!("sampler steps {} outside 1..={steps}", self.num_steps));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(config_err!("eta {} outside [0, 1]", self.eta));
        }
        Ok(())
    }
}

/// Evenly spaced timesteps `k·T/S`, descending, ending at 0.
pub fn ddim_timesteps(total: usize, num_steps: usize) -> Vec<usize> {
    (0..num_steps).rev().map(|k| k * total / num_steps).collect()
}

/// One DDIM update from ᾱ_t to ᾱ_prev. `noise` is only read when `eta > 0`.
pub fn ddim_step<T: Scalar>(
    z_t: &Tensor<T>,
    eps_hat: &Tensor<T>,
    alpha_bar: f64,
    alpha_bar_prev: f64,
    eta: f64,
    noise: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    if z_t.shape() != eps_hat.shape() {
        return Err(dim_err!("prediction {:?} differs from latent {:?}", eps_hat.shape(), z_t.shape()));
    }
    let sigma = if eta > 0.0 {
        eta * ((1.0 - alpha_bar_prev) / (1.0 - alpha_bar)).sqrt() * (1.0 - alpha_bar / alpha_bar_prev).sqrt()
    } else {
        0.0
    };
    let dir = (1.0 - alpha_bar_prev - sigma * sigma).max(0.0).sqrt();
    let (sa, s1a, sp) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt(), alpha_bar_prev.sqrt());
    let mut out = Vec::with_capacity(z_t.numel());
    for (i, (&z, &e)) in z_t.data().iter().zip(eps_hat.data()).enumerate() {
        let (z, e) = (z.to_f64_lossless(), e.to_f64_lossless());
        let z0 = (z - s1a * e) / sa;
        let mut next = sp * z0 + dir * e;
        if sigma > 0.0 {
            let n = noise.ok_or_else(|| dim_err!("stochastic DDIM step needs noise"))?;
            next += sigma * n.data()[i].to_f64_lossless();
        }
        out.push(T::of(next));
    }
    Tensor::new(z_t.shape().to_vec(), out)
}

/// The ε̂ consistent with `z_t` once the implied ẑ₀ is clamped to [−1, 1].
pub fn clip_prediction<T: Scalar>(z_t: &Tensor<T>, eps_hat: &Tensor<T>, alpha_bar: f64) -> Result<Tensor<T>> {
    if z_t.shape() != eps_hat.shape() {
        return Err(dim_err!("prediction {:?} differs from latent {:?}", eps_hat.shape(), z_t.shape()));
    }
    let (sa, s1a) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    if s1a == 0.0 {
        return Ok(eps_hat.clone());
    }
    let data = z_t
        .data()
        .iter()
        .zip(eps_hat.data())
        .map(|(&z, &e)| {
            let (z, e) = (z.to_f64_lossless(), e.to_f64_lossless());
            let z0 = ((z - s1a * e) / sa).clamp(-1.0, 1.0);
            T::of((z - sa * z0) / s1a)
        })
        .collect();
    Tensor::new(z_t.shape().to_vec(), data)
}

/// Deterministic (η = 0) or stochastic DDIM trajectory from `z_T ~ N(0, I)`
/// seeded by `cfg.seed`. The model is re-run on the current latent at every
/// step, so conditioning is recomputed each time.
pub fn ddim_sample<T: Scalar, M: EpsilonModel<T> + ?Sized>(
    model: &M,
    x_lq: &Tensor<T>,
    latent_shape: &[usize],
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
) -> Result<Tensor<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let z = Tensor::<T>::randn(latent_shape.to_vec(), 1.0, &mut rng);
    ddim_sample_from(model, x_lq, z, sched, cfg)
}

/// [`ddim_sample`] from a given starting latent. Stochastic steps (η > 0)
/// draw from stream 1 of the `cfg.seed` generator.
pub fn ddim_sample_from<T: Scalar, M: EpsilonModel<T> + ?Sized>(
    model: &M,
    x_lq: &Tensor<T>,
    z_init: Tensor<T>,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
) -> Result<Tensor<T>> {
    cfg.validate(sched.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let shape = z_init.shape().to_vec();
    let mut z = z_init;
    let steps = ddim_timesteps(sched.len(), cfg.num_steps);
    let batch = shape[0];
    for (k, &t) in steps.iter().enumerate() {
        let prev = steps.get(k + 1).map_or(Ok(1.0), |&p| sched.alpha_bar(p))?;
        let mut eps_hat = model.predict_eps(&z, &vec![t; batch], x_lq)?;
        if cfg.clip_denoised {
            eps_hat = clip_prediction(&z, &eps_hat, sched.alpha_bar(t)?)?;
        }
        let noise = (cfg.eta > 0.0).then(|| Tensor::<T>::randn(shape.clone(), 1.0, &mut rng));
        z = ddim_step(&z, &eps_hat, sched.alpha_bar(t)?, prev, cfg.eta, noise.as_ref())?;
    }
    Ok(z)
}

/// Mean-square ε-prediction loss on a batch: `z_t` is formed from `z`, `eps`
/// and per-element `t`, then compared against the model's prediction.
pub fn diffusion_loss<T: Scalar, M: EpsilonModel<T> + ?Sized>(
    model: &M,
    g: &mut Graph<T>,
    z: &Tensor<T>,
    x_lq: &Tensor<T>,
    t: &[usize],
    eps: &Tensor<T>,
    sched: &NoiseSchedule,
) -> Result<Var> {
    let z_t = q_sample_batch(z, t, eps, sched)?;
    let z_t = g.constant(z_t);
    let x = g.constant(x_lq.clone());
    let eps_hat = model.predict_eps_graph(g, z_t, t, x)?;
    let target = g.constant(eps.clone());
    g.mse(eps_hat, target)
}
