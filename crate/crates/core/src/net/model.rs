use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{trainable, Ablation, Ablations, ModelConfig, Phase};
use super::layers::{Init, Net};
use super::{denoiser, mfem, sdrm, ttpm};
use crate::diffusion::EpsilonModel;
use crate::error::{config_err, dim_err, usage_err, Result};
use crate::{Graph, ParamStore, Scalar, Var};

/// SDRM + MFEM + TTPM + toy denoiser as one named-parameter bundle.
#[derive(Clone, Debug)]
pub struct RestorationModel<T: Scalar> {
    config: ModelConfig,
    ablations: Ablations,
    params: ParamStore<T>,
}

/// Names, shapes and initial values for `config` under `ablations`.
fn initial_params<T: Scalar>(config: &ModelConfig, ablations: &Ablations, seed: u64) -> Result<ParamStore<T>> {
    config.validate()?;
    ablations.validate()?;
    let mut store = ParamStore::new();
    let mut init = Init {
        store: &mut store,
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    sdrm::init(&mut init, config, ablations)?;
    mfem::init(&mut init, config, ablations)?;
    ttpm::init(&mut init, config, ablations)?;
    denoiser::init(&mut init, config)?;
    Ok(store)
}

impl<T: Scalar> RestorationModel<T> {
    /// Freshly initialised model, in phase-1 trainability.
    pub fn new(config: ModelConfig, ablations: Ablations, seed: u64) -> Result<Self> {
        let params = initial_params(&config, &ablations, seed)?;
        let mut model = Self {
            config,
            ablations,
            params,
        };
        model.set_phase(Phase::One);
        Ok(model)
    }

    /// Wrap externally loaded parameters, checking names and shapes.
    pub fn from_params(config: ModelConfig, ablations: Ablations, params: ParamStore<T>) -> Result<Self> {
        let reference = initial_params::<T>(&config, &ablations, 0)?;
        let expected: Vec<(&str, &[usize])> = reference.iter().map(|(n, p)| (n, p.value.shape())).collect();
        let got: Vec<(&str, &[usize])> = params.iter().map(|(n, p)| (n, p.value.shape())).collect();
        if expected != got {
            let missing = expected.iter().find(|e| !got.contains(e));
            let extra = got.iter().find(|g| !expected.contains(g));
            return Err(config_err!(
                "parameters do not match the model config (missing {missing:?}, unexpected {extra:?})"
            ));
        }
        Ok(Self {
            config,
            ablations,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn ablations(&self) -> &Ablations {
        &self.ablations
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    pub fn set_phase(&mut self, phase: Phase) {
        let abl = self.ablations.clone();
        self.params.set_trainable(|name| trainable(name, phase, &abl));
    }

    pub fn cast<U: Scalar>(&self) -> RestorationModel<U> {
        RestorationModel {
            config: self.config.clone(),
            ablations: self.ablations.clone(),
            params: self.params.cast(),
        }
    }

    fn check_inputs(&self, g: &Graph<T>, z_t: Var, t: &[usize], x_lq: Var) -> Result<()> {
        let n = g.shape(z_t)[0];
        if g.shape(z_t) != self.config.latent_shape(n) {
            return Err(dim_err!(
                "noisy latent {:?}, expected {:?}",
                g.shape(z_t),
                self.config.latent_shape(n)
            ));
        }
        let s = self.config.image_size;
        if g.shape(x_lq) != [n, 3, s, s] {
            return Err(dim_err!("LQ batch {:?}, expected {:?}", g.shape(x_lq), [n, 3, s, s]));
        }
        if t.len() != n {
            return Err(dim_err!("{} timesteps for batch of {n}", t.len()));
        }
        if let Some(bad) = t.iter().find(|&&ti| ti >= self.config.timesteps) {
            return Err(usage_err!("timestep {bad} outside [0, {})", self.config.timesteps));
        }
        Ok(())
    }
}

impl<T: Scalar> EpsilonModel<T> for RestorationModel<T> {
    fn predict_eps_graph(&self, g: &mut Graph<T>, z_t: Var, t: &[usize], x_lq: Var) -> Result<Var> {
        self.check_inputs(g, z_t, t, x_lq)?;
        let (cfg, abl) = (&self.config, &self.ablations);
        let mut net = Net::new(&self.params, g);
        let emb = net.time_embed("sdrm.time_embed", t, cfg.time_dim)?;
        let f1 = net.sdrm(cfg, abl, x_lq, z_t, emb)?;
        let features = net.mfem(cfg, abl, f1, emb)?;
        let prompt = net.ttpm(cfg, abl, emb)?;
        let demb = net.time_embed("denoiser.encoder.time_embed", t, cfg.time_dim)?;
        net.denoiser(cfg, z_t, demb, &features, prompt)
    }
}

impl<T: Scalar> RestorationModel<T> {
    pub fn has(&self, flag: Ablation) -> bool {
        self.ablations.has(flag)
    }
}
