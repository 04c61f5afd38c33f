use std::fs;
use std::path::{Path, PathBuf};

use bfr_core::degradation::{list_pngs, synthesize_dataset, DatasetManifest, MANIFEST_FILE};
use bfr_core::diffusion::build_schedule;
use bfr_core::gradsuite::{run_suite, SuiteReport};
use bfr_core::metrics::{laplacian_sharpness, psnr, ssim, ImageMetrics, MetricReport};
use bfr_core::net::{restore_batch, RestorationModel};
use bfr_core::training::{load_checkpoint, train, Checkpoint};
use bfr_core::{Error, Image8, Result};

use crate::config::RunConfig;

/// Images restored per sampler batch.
pub const RESTORE_BATCH: usize = 8;

pub const METRICS_FILE: &str = "metrics.csv";

fn required(flag: Option<PathBuf>, from_config: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.or_else(|| from_config.clone())
        .ok_or_else(|| Error::Usage(format!("no {what} given (flag or config paths)")))
}

fn require_dir(dir: &Path) -> Result<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "not a readable directory"),
        ))
    }
}

/// Degrade every PNG in the HQ directory into `out/lq/` plus `out/manifest.jsonl`.
pub fn cmd_degrade(mut cfg: RunConfig, hq_dir: Option<PathBuf>, out_dir: Option<PathBuf>) -> Result<DatasetManifest> {
    let hq = required(hq_dir, &cfg.paths.data, "HQ directory")?;
    let out = required(out_dir, &cfg.paths.out, "output directory")?;
    cfg.paths.data = Some(hq.clone());
    cfg.paths.out = Some(out.clone());
    cfg.validate()?;
    require_dir(&hq)?;
    cfg.echo(&out)?;
    let d = &cfg.degrade;
    synthesize_dataset(&hq, &out, d.seed, d.parallelism, &d.ranges)
}

/// Train from scratch on a degraded dataset; writes checkpoints, `loss.csv`
/// and `final.bin` under the output directory.
pub fn cmd_train(mut cfg: RunConfig, data: Option<PathBuf>, out_dir: Option<PathBuf>) -> Result<Checkpoint> {
    let data = required(data, &cfg.paths.data, "dataset")?;
    let out = required(out_dir, &cfg.paths.out, "output directory")?;
    cfg.paths.data = Some(data.clone());
    cfg.paths.out = Some(out.clone());
    cfg.validate()?;
    let manifest_path = if data.is_dir() { data.join(MANIFEST_FILE) } else { data };
    let manifest = DatasetManifest::read(&manifest_path)?;
    if manifest.is_empty() {
        return Err(Error::Usage(format!("{} lists no images", manifest_path.display())));
    }
    cfg.echo(&out)?;
    let model = RestorationModel::new(cfg.model.clone(), cfg.train.ablation.clone(), cfg.train.seed)?;
    train(model, &manifest, cfg.train.clone(), Some(&out))
}

/// Restore every PNG in the input directory into the output directory under
/// the same file name. Model and training configs come from the checkpoint.
pub fn cmd_restore(
    mut cfg: RunConfig,
    checkpoint: Option<PathBuf>,
    input_dir: Option<PathBuf>,
    out_dir: Option<PathBuf>,
) -> Result<Vec<PathBuf>> {
    let ckpt_path = required(checkpoint, &cfg.paths.checkpoint, "checkpoint")?;
    let input = required(input_dir, &cfg.paths.data, "input directory")?;
    let out = required(out_dir, &cfg.paths.out, "output directory")?;
    let ckpt = load_checkpoint(&ckpt_path)?;
    cfg.model = ckpt.meta.model.clone();
    cfg.train = ckpt.meta.train.clone();
    cfg.paths.checkpoint = Some(ckpt_path);
    cfg.paths.data = Some(input.clone());
    cfg.paths.out = Some(out.clone());
    cfg.validate()?;
    require_dir(&input)?;
    let model = ckpt.model()?;
    let sched = build_schedule(cfg.model.timesteps, cfg.train.beta_schedule)?;

    let names = list_pngs(&input)?;
    if names.is_empty() {
        return Err(Error::Usage(format!("no PNG images in {}", input.display())));
    }
    cfg.echo(&out)?;
    let mut written = Vec::with_capacity(names.len());
    for chunk in names.chunks(RESTORE_BATCH) {
        let images = chunk
            .iter()
            .map(|n| Image8::load(&input.join(n)))
            .collect::<Result<Vec<_>>>()?;
        let restored = restore_batch(&model, &images, &sched, &cfg.sample)?;
        for (name, img) in chunk.iter().zip(&restored) {
            let path = out.join(name);
            img.save_png(&path)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Score every PNG of `restored_dir` against the same-named file in `hq_dir`;
/// writes `metrics.csv` when an output directory is known.
pub fn cmd_eval(mut cfg: RunConfig, restored_dir: &Path, hq_dir: &Path, out_dir: Option<PathBuf>) -> Result<MetricReport> {
    require_dir(restored_dir)?;
    require_dir(hq_dir)?;
    let names = list_pngs(restored_dir)?;
    if names.is_empty() {
        return Err(Error::Usage(format!("no PNG images in {}", restored_dir.display())));
    }
    let mut rows = Vec::with_capacity(names.len());
    for name in names {
        let restored = Image8::load(&restored_dir.join(&name))?;
        let reference = Image8::load(&hq_dir.join(&name))?;
        rows.push(ImageMetrics {
            psnr: psnr(&restored, &reference)?,
            ssim: ssim(&restored, &reference)?,
            sharpness: laplacian_sharpness(&restored),
            image: name,
        });
    }
    let report = MetricReport::new(rows);
    if let Some(out) = out_dir.or_else(|| cfg.paths.out.clone()) {
        cfg.paths.out = Some(out.clone());
        cfg.echo(&out)?;
        let path = out.join(METRICS_FILE);
        fs::write(&path, report.to_csv()).map_err(|e| Error::io(path, e))?;
    }
    Ok(report)
}

pub fn cmd_gradcheck(samples_per_tensor: usize) -> Result<SuiteReport> {
    run_suite(samples_per_tensor.max(1))
}
