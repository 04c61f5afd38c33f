//! The restoration network at configurable toy scale: space-to-depth codec,
//! SDRM, MFEM, TTPM and a denoising U-Net, composed into an ε-predictor.

mod codec;
mod config;
mod denoiser;
mod layers;
mod mfem;
mod model;
mod restore;
mod sdrm;
mod transformer;
mod ttpm;

pub use codec::{latent_decode, latent_encode};
pub use config::{trainable, Ablation, Ablations, ModelConfig, Phase};
pub use layers::{sinusoid_table, Net};
pub use mfem::{num_taps, TAP_STD};
pub use model::RestorationModel;
pub use restore::{restore, restore_batch};
