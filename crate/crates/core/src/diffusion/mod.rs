//! Noise schedule, forward diffusion, the ε-prediction loss and DDIM sampling.

mod sampler;
mod schedule;

pub use sampler::{clip_prediction, ddim_sample, ddim_sample_from, ddim_step, ddim_timesteps, diffusion_loss, EpsilonModel, SamplerConfig};
pub use schedule::{build_schedule, q_mix, q_sample, q_sample_batch, q_sample_iterative, BetaSchedule, NoiseSchedule};
