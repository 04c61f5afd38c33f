use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adamw::{adamw_step, clip_grad_norm, AdamState};
use super::checkpoint::{save_checkpoint, Checkpoint, CheckpointMeta, ADAM_M_PREFIX, ADAM_V_PREFIX};
use super::{lr_at, TrainConfig};
use crate::degradation::DatasetManifest;
use crate::diffusion::{build_schedule, diffusion_loss, NoiseSchedule};
use crate::error::{config_err, usage_err, Error, Result};
use crate::net::{latent_encode, ModelConfig, Phase, RestorationModel};
use crate::{Graph, Image8, Tensor};

pub const LOSS_CSV_HEADER: &str = "iter,phase,lr,loss";

/// HQ latents and LQ images held in memory.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub latents: Vec<Tensor<f32>>,
    pub lq: Vec<Tensor<f32>>,
}

impl TrainData {
    pub fn from_pairs(pairs: &[(Image8, Image8)], cfg: &ModelConfig) -> Result<Self> {
        if pairs.is_empty() {
            return Err(usage_err!("training set is empty"));
        }
        let mut latents = Vec::with_capacity(pairs.len());
        let mut lq = Vec::with_capacity(pairs.len());
        for (hq, lo) in pairs {
            for img in [hq, lo] {
                if img.width() != cfg.image_size || img.height() != cfg.image_size {
                    return Err(usage_err!(
                        "training image is {}x{}, model expects {}x{}",
                        img.width(),
                        img.height(),
                        cfg.image_size,
                        cfg.image_size
                    ));
                }
            }
            latents.push(latent_encode(&hq.to_tensor(), cfg.latent_factor)?);
            lq.push(lo.to_tensor());
        }
        Ok(Self { latents, lq })
    }

    pub fn from_manifest(manifest: &DatasetManifest, cfg: &ModelConfig) -> Result<Self> {
        let pairs = manifest
            .entries
            .iter()
            .map(|e| {
                Ok((
                    Image8::load(&e.hq_path(&manifest.base_dir))?,
                    Image8::load(&e.lq_path(&manifest.base_dir))?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_pairs(&pairs, cfg)
    }

    pub fn len(&self) -> usize {
        self.latents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub iter: usize,
    pub phase: Phase,
    pub lr: f64,
    pub loss: f32,
}

impl StepRecord {
    pub fn csv_row(&self) -> String {
        format!("{},{},{:e},{:e}", self.iter, self.phase, self.lr, self.loss)
    }
}

/// Single-threaded, seed-deterministic training loop.
pub struct Trainer {
    model: RestorationModel<f32>,
    sched: NoiseSchedule,
    cfg: TrainConfig,
    data: TrainData,
    adam: AdamState<f32>,
    rng: ChaCha8Rng,
    iter: usize,
    history: Vec<StepRecord>,
}

impl Trainer {
    pub fn new(model: RestorationModel<f32>, data: TrainData, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(usage_err!("training set is empty"));
        }
        if model.ablations() != &cfg.ablation {
            return Err(config_err!("model ablations differ from the training config"));
        }
        let sched = build_schedule(model.config().timesteps, cfg.beta_schedule)?;
        let mut t = Self {
            model,
            sched,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            data,
            adam: AdamState::default(),
            iter: 0,
            history: Vec::new(),
        };
        t.model.set_phase(t.cfg.phase_at(0));
        Ok(t)
    }

    /// Continue exactly where `ckpt` left off.
    pub fn resume(ckpt: &Checkpoint, data: TrainData) -> Result<Self> {
        let meta = &ckpt.meta;
        let mut adam = AdamState::default();
        for (name, t) in &ckpt.tensors {
            if let Some(p) = name.strip_prefix(ADAM_M_PREFIX) {
                adam.m.insert(p.to_string(), t.clone());
            } else if let Some(p) = name.strip_prefix(ADAM_V_PREFIX) {
                adam.v.insert(p.to_string(), t.clone());
            }
        }
        adam.steps = meta.adam_steps.clone();
        let model = ckpt.model()?;
        let mut t = Self::new(model, data, meta.train.clone())?;
        let pos: u128 = meta
            .rng_word_pos
            .parse()
            .map_err(|_| config_err!("bad generator position {:?}", meta.rng_word_pos))?;
        t.rng.set_word_pos(pos);
        t.adam = adam;
        t.iter = meta.iter;
        t.model.set_phase(t.cfg.phase_at(t.iter.min(t.cfg.total_iters().saturating_sub(1))));
        Ok(t)
    }

    pub fn model(&self) -> &RestorationModel<f32> {
        &self.model
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.sched
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn iter(&self) -> usize {
        self.iter
    }

    pub fn is_done(&self) -> bool {
        self.iter >= self.cfg.total_iters()
    }

    pub fn history(&self) -> &[StepRecord] {
        &self.history
    }

    /// Sample a batch, take one optimizer step, and record the loss.
    pub fn step(&mut self) -> Result<StepRecord> {
        let iter = self.iter;
        let phase = self.cfg.phase_at(iter);
        self.model.set_phase(phase);
        let lr = lr_at(iter, &self.cfg);

        let n = self.cfg.batch_size;
        let mut idx = Vec::with_capacity(n);
        let mut t = Vec::with_capacity(n);
        for _ in 0..n {
            idx.push(self.rng.random_range(0..self.data.len()));
            t.push(self.rng.random_range(0..self.sched.len()));
        }
        let z = Tensor::stack(&idx.iter().map(|&i| self.data.latents[i].clone()).collect::<Vec<_>>())?;
        let x = Tensor::stack(&idx.iter().map(|&i| self.data.lq[i].clone()).collect::<Vec<_>>())?;
        let eps = Tensor::<f32>::randn(z.shape().to_vec(), 1.0, &mut self.rng);

        let mut g = Graph::new();
        let loss_var = diffusion_loss(&self.model, &mut g, &z, &x, &t, &eps, &self.sched)?;
        let loss = g.value(loss_var).item()?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iter });
        }
        let grads = g.backward(loss_var)?;
        let params = self.model.params_mut();
        params.zero_grads();
        params.accumulate_grads(&g, &grads);
        if let Some(max) = self.cfg.grad_clip {
            clip_grad_norm(params, max);
        }
        adamw_step(params, &mut self.adam, lr, &self.cfg.adamw)?;
        params.zero_grads();

        self.iter += 1;
        let rec = StepRecord { iter, phase, lr, loss };
        self.history.push(rec);
        Ok(rec)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        self.checkpoint_with(None)
    }

    fn checkpoint_with(&self, diagnostic: Option<String>) -> Checkpoint {
        let mut tensors: BTreeMap<String, Tensor<f32>> = self
            .model
            .params()
            .iter()
            .map(|(n, p)| (n.to_string(), p.value.clone()))
            .collect();
        for (n, m) in &self.adam.m {
            tensors.insert(format!("{ADAM_M_PREFIX}{n}"), m.clone());
        }
        for (n, v) in &self.adam.v {
            tensors.insert(format!("{ADAM_V_PREFIX}{n}"), v.clone());
        }
        let phase = self.cfg.phase_at(self.iter.min(self.cfg.total_iters().saturating_sub(1)));
        Checkpoint {
            tensors,
            meta: CheckpointMeta {
                iter: self.iter,
                phase,
                seed: self.cfg.seed,
                rng_word_pos: self.rng.get_word_pos().to_string(),
                adam_steps: self.adam.steps.clone(),
                model: self.model.config().clone(),
                train: self.cfg.clone(),
                diagnostic,
            },
        }
    }

    /// `iter,phase,lr,loss` rows for every step taken by this trainer.
    pub fn loss_csv(&self) -> String {
        let mut s = format!("{LOSS_CSV_HEADER}\n");
        for r in &self.history {
            let _ = writeln!(s, "{}", r.csv_row());
        }
        s
    }

    /// Run to completion. With `out_dir`, writes `loss.csv`, periodic
    /// `ckpt_<iter>.bin` files and `final.bin`; a non-finite loss writes
    /// `diagnostic.bin` and aborts.
    pub fn run(&mut self, out_dir: Option<&Path>) -> Result<Checkpoint> {
        if let Some(dir) = out_dir {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        while !self.is_done() {
            match self.step() {
                Ok(rec) => {
                    log::debug!("iter {} phase {} lr {:e} loss {}", rec.iter, rec.phase, rec.lr, rec.loss);
                }
                Err(Error::NonFiniteLoss { iter }) => {
                    if let Some(dir) = out_dir {
                        let ckpt = self.checkpoint_with(Some(format!("non-finite loss at iteration {iter}")));
                        save_checkpoint(&dir.join("diagnostic.bin"), &ckpt)?;
                        self.write_loss_csv(dir)?;
                    }
                    return Err(Error::NonFiniteLoss { iter });
                }
                Err(e) => return Err(e),
            }
            let every = self.cfg.checkpoint_every;
            if let Some(dir) = out_dir {
                if every > 0 && self.iter % every == 0 && !self.is_done() {
                    save_checkpoint(&checkpoint_path(dir, self.iter), &self.checkpoint())?;
                }
            }
        }
        let ckpt = self.checkpoint();
        if let Some(dir) = out_dir {
            save_checkpoint(&dir.join("final.bin"), &ckpt)?;
            self.write_loss_csv(dir)?;
        }
        Ok(ckpt)
    }

    fn write_loss_csv(&self, dir: &Path) -> Result<()> {
        let path = dir.join("loss.csv");
        fs::write(&path, self.loss_csv()).map_err(|e| Error::io(path, e))
    }
}

pub fn checkpoint_path(dir: &Path, iter: usize) -> PathBuf {
    dir.join(format!("ckpt_{iter:07}.bin"))
}

/// Train a fresh model on `dataset` and return the final checkpoint.
pub fn train(
    model: RestorationModel<f32>,
    dataset: &DatasetManifest,
    cfg: TrainConfig,
    out_dir: Option<&Path>,
) -> Result<Checkpoint> {
    let data = TrainData::from_manifest(dataset, model.config())?;
    Trainer::new(model, data, cfg)?.run(out_dir)
}
