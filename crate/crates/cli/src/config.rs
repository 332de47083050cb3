//! Experiment configuration: one TOML file, optional `key=value` overrides.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "DAE_PGD_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Problem {
    Cs,
    CsNoise,
    Inpaint,
    Superres,
}

impl Problem {
    pub fn name(self) -> &'static str {
        match self {
            Self::Cs => "cs",
            Self::CsNoise => "cs-noise",
            Self::Inpaint => "inpaint",
            Self::Superres => "superres",
        }
    }

    /// Name of the problem-specific parameter.
    pub fn param_name(self) -> &'static str {
        match self {
            Self::Cs | Self::CsNoise => "m",
            Self::Inpaint => "mask_size",
            Self::Superres => "f",
        }
    }
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    DaePgd,
    Csgm,
    LassoDct,
    /// The measurements lifted back to image space by `Aᵀ`; a do-nothing baseline.
    Observed,
}

impl Solver {
    pub fn name(self) -> &'static str {
        match self {
            Self::DaePgd => "dae-pgd",
            Self::Csgm => "csgm",
            Self::LassoDct => "lasso-dct",
            Self::Observed => "observed",
        }
    }
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    Idx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskPlacement {
    Center,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DataSource,
    /// IDX image file of the training split.
    pub train_images: Option<PathBuf>,
    /// IDX image file of the test split.
    pub test_images: Option<PathBuf>,
    /// Training images to use; 0 means all (IDX) and is invalid for synthetic data.
    pub n_train: usize,
    /// Test images per recovery run.
    pub n_test: usize,
    /// Side length of synthetic images.
    pub size: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            train_images: None,
            test_images: None,
            n_train: 2000,
            n_test: 50,
            size: 28,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub widths: [usize; 4],
    pub latent_dim: usize,
    /// Checkpoint stem; defaults to `<output_dir>/model`.
    pub checkpoint: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { widths: [32, 64, 128, 128], latent_dim: 64, checkpoint: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Noise standard deviations, one per training subset.
    pub sigmas: Vec<f64>,
    /// Samples per parallel gradient chunk.
    pub chunk: usize,
    /// Start the output layer at the mean training pixel value.
    pub init_output_bias: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch: 128,
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            sigmas: dae_pgd::dae::DEFAULT_SIGMAS.to_vec(),
            chunk: 16,
            init_output_bias: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoverSection {
    pub problem: Problem,
    /// `m` for cs/cs-noise, `mask_size` for inpaint, `f` for superres.
    pub params: Vec<usize>,
    pub solvers: Vec<Solver>,
    pub eta: f64,
    pub iters: usize,
    pub seeds: Vec<u64>,
    /// Variance of the measurement noise for cs-noise.
    pub noise_var: f64,
    pub mask_placement: MaskPlacement,
    /// Explicit `[row, col]` of the mask's top-left corner; overrides `mask_placement`.
    pub mask_at: Option<[usize; 2]>,
    pub write_images: bool,
    /// Store every DAE-PGD trace as a TNSR file.
    pub save_traces: bool,
}

impl Default for RecoverSection {
    fn default() -> Self {
        Self {
            problem: Problem::Cs,
            params: vec![50, 100, 200, 400],
            solvers: vec![Solver::DaePgd, Solver::Csgm, Solver::LassoDct],
            eta: 1.0,
            iters: 30,
            seeds: vec![0],
            noise_var: 0.25,
            mask_placement: MaskPlacement::Center,
            mask_at: None,
            write_images: true,
            save_traces: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsgmSection {
    pub lambda: f64,
    pub steps: usize,
    pub restarts: usize,
    pub z_lr: f64,
    pub z_init_std: f64,
}

impl Default for CsgmSection {
    fn default() -> Self {
        let c = dae_pgd::recovery::CsgmConfig::default();
        Self { lambda: c.lambda, steps: c.steps, restarts: c.restarts, z_lr: c.z_lr, z_init_std: c.z_init_std }
    }
}

impl CsgmSection {
    pub fn core(&self) -> dae_pgd::recovery::CsgmConfig {
        dae_pgd::recovery::CsgmConfig {
            lambda: self.lambda,
            steps: self.steps,
            restarts: self.restarts,
            z_lr: self.z_lr,
            z_init_std: self.z_init_std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LassoSection {
    pub lambda: f64,
    pub steps: usize,
}

impl Default for LassoSection {
    fn default() -> Self {
        Self { lambda: 0.01, steps: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheorySection {
    /// Measurement counts to analyse (noise-free compressive sensing).
    pub m: Vec<usize>,
    /// Pairs sampled for the RIP estimate; all pairs are used if this covers them.
    pub rip_pairs: usize,
    pub norm_iters: usize,
    pub norm_tol: f64,
}

impl Default for TheorySection {
    fn default() -> Self {
        Self { m: vec![200], rip_pairs: 5000, norm_iters: 1000, norm_tol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub recover: RecoverSection,
    pub csgm: CsgmSection,
    pub lasso: LassoSection,
    pub theory: TheorySection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            train: TrainSection::default(),
            recover: RecoverSection::default(),
            csgm: CsgmSection::default(),
            lasso: LassoSection::default(),
            theory: TheorySection::default(),
        }
    }
}

/// A parsed, validated configuration plus the directory its relative paths
/// are resolved against.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: Config,
    pub base_dir: PathBuf,
    /// SHA-256 of the effective configuration (after overrides).
    pub sha256: String,
}

impl Loaded {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }

    pub fn checkpoint_stem(&self) -> PathBuf {
        match &self.config.model.checkpoint {
            Some(p) => self.resolve(p),
            None => self.output_dir().join("model"),
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key just written"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets `a.b.c = value` inside `table`, creating intermediate tables.
fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::config(key, "empty path component in override"));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(CliError::config(key, format!("`{part}` is not a section"))),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Parses TOML text, applies the output-dir environment variable and then
/// `key=value` overrides, deserializes and validates.
pub fn parse(text: &str, overrides: &[String], base_dir: &Path) -> Result<Loaded> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::config("config", e.message()))?;
    if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
        if !dir.is_empty() {
            table.insert("output_dir".into(), toml::Value::String(dir));
        }
    }
    for ov in overrides {
        let (k, v) =
            ov.split_once('=').ok_or_else(|| CliError::config(ov.as_str(), "override must look like key=value"))?;
        set_path(&mut table, k.trim(), parse_value(v.trim()))?;
    }
    let config: Config = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        let field = if path.is_empty() || path == "." { "config".to_string() } else { path };
        CliError::config(field, e.into_inner().to_string())
    })?;
    validate(&config)?;
    let canonical = toml::to_string(&config).map_err(|e| CliError::Runtime(format!("serialising config: {e}")))?;
    let sha256 = hex(&Sha256::digest(canonical.as_bytes()));
    Ok(Loaded { config, base_dir: base_dir.to_path_buf(), sha256 })
}

/// Reads the config file at `path`; relative paths inside it resolve against its directory.
pub fn load(path: &Path, overrides: &[String]) -> Result<Loaded> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config("config", format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
    parse(&text, overrides, &base)
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn check(ok: bool, field: &str, message: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::config(field, message()))
    }
}

/// Field-level checks that do not touch the file system.
pub fn validate(c: &Config) -> Result<()> {
    check(!c.output_dir.as_os_str().is_empty(), "output_dir", || "must not be empty".into())?;

    let d = &c.dataset;
    check(d.n_test >= 1, "dataset.n_test", || "must be >= 1".into())?;
    match d.source {
        DataSource::Synthetic => {
            check(d.size >= 8, "dataset.size", || format!("must be >= 8, got {}", d.size))?;
            check(d.n_train >= 5, "dataset.n_train", || {
                format!("synthetic data needs >= 5 training images (one per noise level), got {}", d.n_train)
            })?;
        }
        DataSource::Idx => {
            check(d.train_images.is_some(), "dataset.train_images", || "required when source = \"idx\"".into())?;
            check(d.test_images.is_some(), "dataset.test_images", || "required when source = \"idx\"".into())?;
        }
    }

    let m = &c.model;
    check(m.widths.iter().all(|&w| w >= 1), "model.widths", || "every width must be >= 1".into())?;
    check(m.latent_dim >= 1, "model.latent_dim", || "must be >= 1".into())?;

    let t = &c.train;
    check(t.batch >= 1, "train.batch", || "must be >= 1".into())?;
    check(t.chunk >= 1, "train.chunk", || "must be >= 1".into())?;
    check(t.lr > 0.0 && t.lr.is_finite(), "train.lr", || format!("must be positive, got {}", t.lr))?;
    check((0.0..1.0).contains(&t.beta1), "train.beta1", || "must lie in [0, 1)".into())?;
    check((0.0..1.0).contains(&t.beta2), "train.beta2", || "must lie in [0, 1)".into())?;
    check(t.eps > 0.0, "train.eps", || "must be positive".into())?;
    check(!t.sigmas.is_empty(), "train.sigmas", || "need at least one noise level".into())?;
    check(t.sigmas.iter().all(|s| *s >= 0.0 && s.is_finite()), "train.sigmas", || {
        "noise levels must be finite and >= 0".into()
    })?;

    let r = &c.recover;
    check(!r.params.is_empty(), "recover.params", || {
        format!("problem {} needs at least one `{}` value", r.problem, r.problem.param_name())
    })?;
    match r.problem {
        Problem::Cs | Problem::CsNoise => {
            check(r.params.iter().all(|&m| m >= 1), "recover.params", || "m must be >= 1".into())?
        }
        Problem::Superres => check(r.params.iter().all(|&f| f >= 1), "recover.params", || "f must be >= 1".into())?,
        Problem::Inpaint => {}
    }
    check(!r.solvers.is_empty(), "recover.solvers", || "need at least one solver".into())?;
    check(!r.seeds.is_empty(), "recover.seeds", || "need at least one seed".into())?;
    check(r.eta.is_finite(), "recover.eta", || "must be finite".into())?;
    check(r.iters >= 1, "recover.iters", || "must be >= 1".into())?;
    check(r.noise_var >= 0.0 && r.noise_var.is_finite(), "recover.noise_var", || "must be finite and >= 0".into())?;

    let g = &c.csgm;
    check(g.steps >= 1, "csgm.steps", || "must be >= 1".into())?;
    check(g.restarts >= 1, "csgm.restarts", || "must be >= 1".into())?;
    check(g.lambda >= 0.0, "csgm.lambda", || "must be >= 0".into())?;
    check(g.z_lr > 0.0, "csgm.z_lr", || "must be positive".into())?;

    check(c.lasso.lambda >= 0.0, "lasso.lambda", || "must be >= 0".into())?;
    check(c.lasso.steps >= 1, "lasso.steps", || "must be >= 1".into())?;

    let th = &c.theory;
    check(th.m.iter().all(|&m| m >= 1), "theory.m", || "m must be >= 1".into())?;
    check(th.rip_pairs >= 1, "theory.rip_pairs", || "must be >= 1".into())?;
    check(th.norm_iters >= 1, "theory.norm_iters", || "must be >= 1".into())?;
    Ok(())
}

/// Fails with a config error naming `field` if `path` does not exist.
pub fn require_file(field: &str, path: &Path) -> Result<()> {
    check(path.is_file(), field, || format!("no such file: {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field_of(err: CliError) -> String {
        match err {
            CliError::Config { field, .. } => field,
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn empty_file_gives_defaults() {
        let l = parse("", &[], Path::new(".")).unwrap();
        assert_eq!(l.config, Config::default());
    }

    #[test]
    fn overrides_take_precedence() {
        let text = "seed = 3\n[train]\nepochs = 5\n";
        let ov = vec!["train.epochs=7".to_string(), "recover.problem=inpaint".into(), "recover.params=[5, 10]".into()];
        let l = parse(text, &ov, Path::new(".")).unwrap();
        assert_eq!(l.config.seed, 3);
        assert_eq!(l.config.train.epochs, 7);
        assert_eq!(l.config.recover.problem, Problem::Inpaint);
        assert_eq!(l.config.recover.params, vec![5, 10]);
    }

    #[test]
    fn type_errors_name_the_field() {
        let err = parse("[train]\nepochs = \"many\"\n", &[], Path::new(".")).unwrap_err();
        assert_eq!(field_of(err), "train.epochs");
        let err = parse("[recover]\nsolvers = [\"magic\"]\n", &[], Path::new(".")).unwrap_err();
        assert!(field_of(err).starts_with("recover.solvers"));
        let err = parse("[train]\nlearning_rate = 1\n", &[], Path::new(".")).unwrap_err();
        assert_eq!(field_of(err), "train.learning_rate");
    }

    #[test]
    fn validation_errors_name_the_field() {
        let err = parse("[dataset]\nsource = \"idx\"\n", &[], Path::new(".")).unwrap_err();
        assert_eq!(field_of(err), "dataset.train_images");
        let err = parse("[recover]\nparams = []\n", &[], Path::new(".")).unwrap_err();
        assert_eq!(field_of(err), "recover.params");
        let err = parse("", &["train.lr=0".into()], Path::new(".")).unwrap_err();
        assert_eq!(field_of(err), "train.lr");
    }

    #[test]
    fn hash_tracks_effective_config() {
        let a = parse("seed = 1\n", &[], Path::new(".")).unwrap();
        let b = parse("seed = 1\n", &[], Path::new("/elsewhere")).unwrap();
        let c = parse("seed = 1\n", &["seed=2".into()], Path::new(".")).unwrap();
        assert_eq!(a.sha256, b.sha256);
        assert_ne!(a.sha256, c.sha256);
        assert_eq!(a.sha256.len(), 64);
    }

    #[test]
    fn relative_paths_resolve_against_the_config_dir() {
        let l = parse("output_dir = \"out\"\n", &[], Path::new("/cfg")).unwrap();
        assert_eq!(l.output_dir(), PathBuf::from("/cfg/out"));
        assert_eq!(l.checkpoint_stem(), PathBuf::from("/cfg/out/model"));
        let l = parse("[model]\ncheckpoint = \"/abs/m\"\n", &[], Path::new("/cfg")).unwrap();
        assert_eq!(l.checkpoint_stem(), PathBuf::from("/abs/m"));
    }
}
