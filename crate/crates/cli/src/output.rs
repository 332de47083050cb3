//! Output artifacts: CSV schemas, PGM images and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use dae_pgd::{Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const RESULTS_SCHEMA: u32 = 1;
pub const THEORY_SCHEMA: u32 = 1;
pub const THEORY_IMAGES_SCHEMA: u32 = 1;
pub const TRAIN_LOSS_SCHEMA: u32 = 1;

pub const RESULTS_CSV: &str = "results.csv";
pub const THEORY_CSV: &str = "theory.csv";
pub const THEORY_IMAGES_CSV: &str = "theory_images.csv";
pub const TRAIN_LOSS_CSV: &str = "train_loss.csv";
pub const MANIFEST: &str = "manifest.json";

/// One row of `results.csv`: a solver run on one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub problem: String,
    pub param: usize,
    pub seed: u64,
    pub image: usize,
    pub solver: String,
    pub iters: usize,
    /// `‖x − x̂‖²`.
    pub error: f64,
    pub seconds: f64,
    /// `ok` or the error message of a failed run.
    pub status: String,
}

/// One row of `theory.csv`: the constants and verdicts of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryRow {
    pub experiment: String,
    pub m: usize,
    pub delta: f64,
    pub m_hat: f64,
    pub gamma: f64,
    pub two_gamma: f64,
    pub alpha: f64,
    /// Mean over images of the error bound at `T`.
    pub bound: f64,
    /// Mean over images of `‖x_T − x‖`.
    pub observed: f64,
    /// Fraction of recorded steps satisfying the per-step contraction.
    pub contraction_fraction: f64,
    /// Fraction of images whose bound dominates the observed final error.
    pub bound_fraction: f64,
    /// `2γ ≥ 1`: the bound is valid but does not shrink.
    pub vacuous: bool,
}

/// One row of `theory_images.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryImageRow {
    pub experiment: String,
    pub m: usize,
    pub image: usize,
    /// `‖x_0 − x‖`.
    pub e0: f64,
    pub bound: f64,
    pub observed: f64,
    pub contraction_fraction: f64,
    /// Largest violation of the per-step inequality (0 if none).
    pub worst_excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub epoch: usize,
    pub loss: f64,
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))
}

/// Writes `rows` with a header; column order follows the struct fields.
pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

pub fn read_csv<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<R>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(CliError::from)).collect()
}

/// `[0, 1]` → `0..=255`, clamped, rounding half up.
pub fn quantize(v: f64) -> u8 {
    if !v.is_finite() {
        return 0;
    }
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Binary greyscale PGM (P5, maxval 255) bytes of an `[H, W]` or `[H, W, 1]` image.
pub fn pgm_bytes<T: Real>(img: &Tensor<T>) -> Result<Vec<u8>> {
    let (h, w) = match *img.shape() {
        [h, w] | [h, w, 1] => (h, w),
        _ => return Err(CliError::Runtime(format!("PGM needs a greyscale image, got shape {:?}", img.shape()))),
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(img.data().iter().map(|v| quantize(v.f64())));
    Ok(out)
}

pub fn write_pgm<T: Real>(path: &Path, img: &Tensor<T>) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, pgm_bytes(img)?).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

/// What one command wrote and from which inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub config_sha256: String,
    pub seed: u64,
    pub recover_seeds: Vec<u64>,
    pub files: Vec<String>,
}

/// `manifest.json`: one record per command run in the directory. No
/// timestamps, so identical runs give identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub schemas: BTreeMap<String, u32>,
    pub commands: BTreeMap<String, CommandRecord>,
}

impl Default for Manifest {
    fn default() -> Self {
        let schemas = [
            (RESULTS_CSV, RESULTS_SCHEMA),
            (THEORY_CSV, THEORY_SCHEMA),
            (THEORY_IMAGES_CSV, THEORY_IMAGES_SCHEMA),
            (TRAIN_LOSS_CSV, TRAIN_LOSS_SCHEMA),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Self { tool: "dae-pgd".into(), version: env!("CARGO_PKG_VERSION").into(), schemas, commands: BTreeMap::new() }
    }
}

/// Adds or replaces the record of `command` in `<dir>/manifest.json`.
pub fn record_command(dir: &Path, command: &str, record: CommandRecord) -> Result<PathBuf> {
    let path = dir.join(MANIFEST);
    let mut manifest = match fs::read(&path) {
        Ok(bytes) => serde_json::from_slice(&bytes).unwrap_or_default(),
        Err(_) => Manifest::default(),
    };
    let fresh = Manifest::default();
    manifest.tool = fresh.tool;
    manifest.version = fresh.version;
    manifest.schemas = fresh.schemas;
    manifest.commands.insert(command.to_string(), record);
    create_dir(dir)?;
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text + "\n").map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
    Ok(path)
}

/// `path` relative to `base` for manifest listings.
pub fn relative(path: &Path, base: &Path) -> String {
    path.strip_prefix(base).unwrap_or(path).display().to_string()
}
