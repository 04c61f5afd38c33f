//! Finite-difference self-check over every differentiable op and the full
//! diffusion training loss on the micro model configuration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::gradcheck::{grad_check, grad_check_params};
use crate::diffusion::{build_schedule, diffusion_loss, BetaSchedule};
use crate::error::Result;
use crate::net::{Ablations, ModelConfig, RestorationModel};
use crate::{Ewise, Graph, Tensor, Var};

/// Pass threshold on the worst relative error.
pub const TOLERANCE: f64 = 1e-3;

const STEP: f64 = 1e-5;
/// The composite loss sums thousands of terms; its roundoff dominates a
/// 1e-5 central difference, while the O(h²) truncation at 1e-4 is negligible.
const LOSS_STEP: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct SuiteReport {
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn worst(&self) -> Option<&CheckResult> {
        self.checks.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    pub fn max_error(&self) -> f64 {
        self.worst().map_or(0.0, |c| c.max_rel_error)
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.max_rel_error < TOLERANCE)
    }

    fn push(&mut self, name: impl Into<String>, max_rel_error: f64) {
        self.checks.push(CheckResult {
            name: name.into(),
            max_rel_error,
        });
    }
}

/// Reduce `y` to a scalar with fixed random weights so that sum-preserving
/// ops still have non-trivial gradients.
fn weighted_sum(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let w = Tensor::randn(g.shape(y).to_vec(), 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn check_op(
    report: &mut SuiteReport,
    name: &str,
    inputs: Vec<Tensor<f64>>,
    f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
) -> Result<()> {
    let err = grad_check(
        |g, v| {
            let y = f(g, v)?;
            weighted_sum(g, y, 99)
        },
        &inputs,
        STEP,
    )?;
    report.push(name, err);
    Ok(())
}

fn op_checks(report: &mut SuiteReport) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut rn = |s: &[usize]| Tensor::<f64>::randn(s.to_vec(), 1.0, &mut rng);

    let (x, w, b) = (rn(&[2, 3, 4, 4]), rn(&[2, 3, 3, 3]), rn(&[2]));
    check_op(report, "conv2d", vec![x, w, b], |g, v| g.conv2d(v[0], v[1], Some(v[2]), 1, 1, 1))?;
    let (x, w, b) = (rn(&[2, 4, 4, 4]), rn(&[4, 2, 3, 3]), rn(&[4]));
    check_op(report, "conv2d grouped strided", vec![x, w, b], |g, v| g.conv2d(v[0], v[1], Some(v[2]), 2, 1, 2))?;
    check_op(report, "layer_norm", vec![rn(&[2, 3, 2, 2])], |g, v| g.layer_norm(v[0], 1e-5))?;
    check_op(report, "matmul", vec![rn(&[2, 3, 4]), rn(&[2, 4, 5])], |g, v| g.matmul(v[0], v[1]))?;
    check_op(report, "softmax", vec![rn(&[2, 3, 4])], |g, v| g.softmax(v[0], 2))?;
    check_op(report, "silu", vec![rn(&[2, 5])], |g, v| Ok(g.silu(v[0])))?;
    check_op(report, "gelu", vec![rn(&[2, 5])], |g, v| Ok(g.gelu(v[0])))?;
    check_op(report, "square", vec![rn(&[2, 5])], |g, v| Ok(g.square(v[0])))?;
    let positive = rn(&[2, 5]).map(|x| x.abs() + 0.5);
    check_op(report, "recip", vec![positive], |g, v| Ok(g.recip(v[0])))?;
    check_op(report, "affine", vec![rn(&[2, 5])], |g, v| Ok(g.affine(v[0], -1.7, 0.3)))?;
    for (label, kind) in [("add", Ewise::Add), ("sub", Ewise::Sub), ("mul", Ewise::Mul)] {
        check_op(report, label, vec![rn(&[2, 3, 2, 2]), rn(&[3, 1, 1])], move |g, v| {
            g.ewise(v[0], v[1], kind)
        })?;
    }
    check_op(report, "reshape", vec![rn(&[2, 3, 4])], |g, v| g.reshape(v[0], &[24]))?;
    check_op(report, "transpose", vec![rn(&[2, 3, 4])], |g, v| g.transpose(v[0]))?;
    check_op(report, "concat", vec![rn(&[2, 3, 2]), rn(&[2, 1, 2])], |g, v| {
        g.concat(&[v[0], v[1]], 1)
    })?;
    check_op(report, "narrow", vec![rn(&[2, 4, 3])], |g, v| g.narrow(v[0], 1, 1, 2))?;
    check_op(report, "upsample2x", vec![rn(&[1, 2, 3, 2])], |g, v| g.upsample2x(v[0]))?;
    check_op(report, "space_to_depth", vec![rn(&[1, 2, 4, 4])], |g, v| g.space_to_depth(v[0], 2))?;
    check_op(report, "sum", vec![rn(&[2, 3])], |g, v| Ok(g.sum(v[0])))?;
    check_op(report, "mean", vec![rn(&[2, 3])], |g, v| Ok(g.mean(v[0])))?;
    check_op(report, "mse", vec![rn(&[2, 3]), rn(&[2, 3])], |g, v| g.mse(v[0], v[1]))?;
    Ok(())
}

/// Every parameter of the micro model, perturbed away from its
/// initialisation (zero-initialised layers would otherwise hide most of the
/// graph) and made trainable.
fn loss_check(report: &mut SuiteReport, samples_per_tensor: usize) -> Result<()> {
    let config = ModelConfig::micro();
    let model = RestorationModel::<f64>::new(config.clone(), Ablations::none(), 3)?;
    let mut store = model.into_params();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (_, p) in store.iter_mut() {
        let noise = Tensor::<f64>::randn(p.value.shape().to_vec(), 0.1, &mut rng);
        for (v, n) in p.value.data_mut().iter_mut().zip(noise.data()) {
            *v += n;
        }
    }
    store.set_trainable(|_| true);

    let sched = build_schedule(config.timesteps, BetaSchedule::default())?;
    let batch = 2;
    let z = Tensor::<f64>::uniform(config.latent_shape(batch), 1.0, &mut rng);
    let size = config.image_size;
    let x_lq = Tensor::<f64>::uniform(vec![batch, 3, size, size], 1.0, &mut rng);
    let eps = Tensor::<f64>::randn(config.latent_shape(batch), 1.0, &mut rng);
    let t = [100, 700];

    let errors = grad_check_params(&mut store, LOSS_STEP, Some(samples_per_tensor), |store, g| {
        let model = RestorationModel::from_params(config.clone(), Ablations::none(), store.clone())?;
        diffusion_loss(&model, g, &z, &x_lq, &t, &eps, &sched)
    })?;
    for (name, err) in errors {
        report.push(format!("loss/{name}"), err);
    }
    Ok(())
}

/// Run every op check and the composite-loss check. `samples_per_tensor`
/// bounds how many elements of each parameter the loss check perturbs.
pub fn run_suite(samples_per_tensor: usize) -> Result<SuiteReport> {
    let mut report = SuiteReport::default();
    op_checks(&mut report)?;
    loss_check(&mut report, samples_per_tensor)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn op_checks_pass() {
        let mut report = SuiteReport::default();
        op_checks(&mut report).unwrap();
        assert!(report.passed(), "{:?}", report.worst());
    }
}
