use std::fmt::Write as _;

use dae_pgd::dae::DaeModel;

use crate::config::Loaded;
use crate::error::{CliError, Result};
use crate::output::{Manifest, MANIFEST};

/// Human-readable summary of the effective config, checkpoint and outputs.
pub fn run(l: &Loaded) -> Result<String> {
    let c = &l.config;
    let mut s = String::new();
    let toml = toml::to_string(c).map_err(|e| CliError::Runtime(format!("serialising config: {e}")))?;
    let _ = writeln!(s, "config sha256: {}", l.sha256);
    let _ = writeln!(s, "output dir:    {}", l.output_dir().display());
    let stem = l.checkpoint_stem();
    let _ = writeln!(s, "checkpoint:    {}", stem.display());
    match DaeModel::<f32>::load(&stem) {
        Ok((model, manifest)) => {
            let _ = writeln!(
                s,
                "  {} parameters, latent {}, trained {} epochs (seed {})",
                model.num_params(),
                model.latent_dim(),
                manifest.epoch,
                manifest.seed
            );
        }
        Err(_) => {
            let _ = writeln!(s, "  (not present)");
        }
    }
    let manifest_path = l.output_dir().join(MANIFEST);
    if let Ok(bytes) = std::fs::read(&manifest_path) {
        let m: Manifest = serde_json::from_slice(&bytes)?;
        for (cmd, rec) in &m.commands {
            let _ = writeln!(
                s,
                "ran {cmd}: config {} files {}",
                &rec.config_sha256[..12.min(rec.config_sha256.len())],
                rec.files.join(", ")
            );
        }
        for (file, v) in &m.schemas {
            let _ = writeln!(s, "schema {file} v{v}");
        }
    }
    let _ = writeln!(s, "\n{toml}");
    Ok(s)
}
