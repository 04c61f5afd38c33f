use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{degrade, image_seed, sample_params_in, DegradationParams, DegradationRanges};
use crate::error::{usage_err, Error, Result};
use crate::image::Image8;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
const LQ_DIR: &str = "lq";

/// One HQ/LQ pair. `lq` is relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub hq: String,
    pub lq: String,
    #[serde(flatten)]
    pub params: DegradationParams,
}

impl ManifestEntry {
    pub fn hq_path(&self, base: &Path) -> PathBuf {
        base.join(&self.hq)
    }

    pub fn lq_path(&self, base: &Path) -> PathBuf {
        base.join(&self.lq)
    }
}

/// Pairs in file-name order, plus the directory relative paths resolve against.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub base_dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("manifest entries serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        let mut offset = 0u64;
        for line in text.split_inclusive('\n') {
            let trimmed = line.trim();
            if !trimmed.is_empty() {
                let e: ManifestEntry = serde_json::from_str(trimmed).map_err(|e| Error::Format {
                    offset,
                    message: format!("{}: {e}", path.display()),
                })?;
                entries.push(e);
            }
            offset += line.len() as u64;
        }
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { base_dir, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// PNG file names directly inside `dir`, sorted.
pub fn list_pngs(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let is_png = Path::new(&name)
            .extension()
            .is_some_and(|x| x.eq_ignore_ascii_case("png"));
        if is_png && entry.path().is_file() {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

/// Degrade every PNG in `hq_dir` into `out_dir/lq/` and write
/// `out_dir/manifest.jsonl`. Each image's parameters and noise derive from
/// [`image_seed`]`(master_seed, file name)`, so the output does not depend
/// on `parallelism`.
pub fn synthesize_dataset(
    hq_dir: &Path,
    out_dir: &Path,
    master_seed: u64,
    parallelism: usize,
    ranges: &DegradationRanges,
) -> Result<DatasetManifest> {
    ranges.validate()?;
    let hq_dir = &fs::canonicalize(hq_dir).map_err(|e| Error::io(hq_dir, e))?;
    let names = list_pngs(hq_dir)?;
    if names.is_empty() {
        return Err(usage_err!("no PNG images in {}", hq_dir.display()));
    }
    let lq_dir = out_dir.join(LQ_DIR);
    fs::create_dir_all(&lq_dir).map_err(|e| Error::io(&lq_dir, e))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| usage_err!("thread pool: {e}"))?;
    let results: Vec<Result<(ManifestEntry, (usize, usize))>> = pool.install(|| {
        names
            .par_iter()
            .map(|name| {
                let hq_path = hq_dir.join(name);
                let hq = Image8::load(&hq_path)?;
                let params = sample_params_in(image_seed(master_seed, name), ranges);
                let lq = degrade(&hq, &params)?;
                lq.save_png(&lq_dir.join(name))?;
                let entry = ManifestEntry {
                    hq: hq_path.to_string_lossy().into_owned(),
                    lq: format!("{LQ_DIR}/{name}"),
                    params,
                };
                Ok((entry, (hq.width(), hq.height())))
            })
            .collect()
    });

    let mut entries = Vec::with_capacity(results.len());
    let mut size = None;
    for r in results {
        let (entry, dims) = r?;
        match size {
            None => size = Some(dims),
            Some(s) if s != dims => {
                return Err(usage_err!(
                    "{} is {}x{}, expected {}x{}",
                    entry.hq,
                    dims.0,
                    dims.1,
                    s.0,
                    s.1
                ))
            }
            _ => {}
        }
        entries.push(entry);
    }
    let manifest = DatasetManifest {
        base_dir: out_dir.to_path_buf(),
        entries,
    };
    manifest.write(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
