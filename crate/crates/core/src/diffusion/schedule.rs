use serde::{Deserialize, Serialize};

use crate::error::{config_err, dim_err, usage_err, Result};
use crate::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BetaSchedule {
    Linear { beta_start: f64, beta_end: f64 },
}

impl Default for BetaSchedule {
    fn default() -> Self {
        BetaSchedule::Linear {
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

/// Per-step β, α = 1 − β and cumulative ᾱ, all kept in f64.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Schedule from explicit betas, each in `[0, 1)`.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(config_err!("schedule needs at least one step"));
        }
        if let Some(b) = betas.iter().find(|b| !(**b >= 0.0 && **b < 1.0)) {
            return Err(config_err!("beta {b} outside [0, 1)"));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    /// Number of diffusion steps `T`.
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bars
            .get(t)
            .copied()
            .ok_or_else(|| usage_err!("timestep {t} outside [0, {})", self.len()))
    }
}

pub fn build_schedule(steps: usize, spec: BetaSchedule) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(config_err!("schedule needs at least one step"));
    }
    match spec {
        BetaSchedule::Linear { beta_start, beta_end } => {
            if !(0.0 <= beta_start && beta_start <= beta_end && beta_end < 1.0) {
                return Err(config_err!(
                    "linear betas need 0 <= start <= end < 1, got {beta_start}..{beta_end}"
                ));
            }
            let betas = if steps == 1 {
                vec![beta_start]
            } else {
                let span = (beta_end - beta_start) / (steps - 1) as f64;
                (0..steps).map(|i| beta_start + span * i as f64).collect()
            };
            NoiseSchedule::from_betas(betas)
        }
    }
}

/// `√ᾱ·z + √(1−ᾱ)·ε` for an explicit ᾱ.
pub fn q_mix<T: Scalar>(z: &Tensor<T>, eps: &Tensor<T>, alpha_bar: f64) -> Result<Tensor<T>> {
    if z.shape() != eps.shape() {
        return Err(dim_err!("noise shape {:?} differs from latent {:?}", eps.shape(), z.shape()));
    }
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    let data = z
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&x, &e)| T::of(a * x.to_f64_lossless() + b * e.to_f64_lossless()))
        .collect();
    Tensor::new(z.shape().to_vec(), data)
}

/// Closed-form forward diffusion to step `t`.
pub fn q_sample<T: Scalar>(z: &Tensor<T>, t: usize, eps: &Tensor<T>, sched: &NoiseSchedule) -> Result<Tensor<T>> {
    q_mix(z, eps, sched.alpha_bar(t)?)
}

/// [`q_sample`] with one timestep per leading-axis batch element.
pub fn q_sample_batch<T: Scalar>(
    z: &Tensor<T>,
    t: &[usize],
    eps: &Tensor<T>,
    sched: &NoiseSchedule,
) -> Result<Tensor<T>> {
    if z.shape()[0] != t.len() {
        return Err(dim_err!("{} timesteps for batch of {}", t.len(), z.shape()[0]));
    }
    let parts = t
        .iter()
        .enumerate()
        .map(|(i, &ti)| q_sample(&z.index_first(i)?, ti, &eps.index_first(i)?, sched))
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack(&parts)
}

/// Step-by-step chain `z_i = √α_i·z_{i−1} + √β_i·ε_i` for `i = 0..=t`, with
/// `noise_seq[i]` supplying `ε_i`.
pub fn q_sample_iterative<T: Scalar>(
    z: &Tensor<T>,
    t: usize,
    noise_seq: &Tensor<T>,
    sched: &NoiseSchedule,
) -> Result<Tensor<T>> {
    sched.alpha_bar(t)?;
    if noise_seq.shape()[0] < t + 1 || noise_seq.shape()[1..] != *z.shape() {
        return Err(dim_err!(
            "noise sequence {:?} cannot drive {} steps of {:?}",
            noise_seq.shape(),
            t + 1,
            z.shape()
        ));
    }
    let n = z.numel();
    let mut cur: Vec<f64> = z.data().iter().map(|v| v.to_f64_lossless()).collect();
    for i in 0..=t {
        let (a, b) = (sched.alphas[i].sqrt(), sched.betas[i].sqrt());
        let eps = &noise_seq.data()[i * n..(i + 1) * n];
        cur.iter_mut()
            .zip(eps)
            .for_each(|(c, e)| *c = a * *c + b * e.to_f64_lossless());
    }
    Tensor::new(z.shape().to_vec(), cur.into_iter().map(T::of).collect())
}
