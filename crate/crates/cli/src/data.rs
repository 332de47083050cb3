//! Dataset loading and the seed streams shared by all commands.

use dae_pgd::datasets::{load_idx, normalize, subset_indices, synth_generate, test_subset, Dataset, Split};
use dae_pgd::SeededRng;

use crate::config::{require_file, DataSource, Loaded, Problem};
use crate::error::{CliError, Result};

/// Stream ids under the config seed. Fixed forever: changing one changes outputs.
pub mod stream {
    pub const TRAIN_DATA: u64 = 1;
    pub const TEST_DATA: u64 = 2;
    pub const BUCKETS: u64 = 3;
    pub const MODEL_INIT: u64 = 4;
    pub const TRAIN_LOOP: u64 = 5;
    pub const TRAIN_SUBSET: u64 = 6;

    /// Operator construction, keyed by recovery seed.
    pub const OPERATOR: u64 = 10;
    pub const NOISE: u64 = 11;
    pub const CSGM: u64 = 12;
    pub const RIP: u64 = 13;
    pub const NORM: u64 = 14;
}

/// Operator family code: cs and cs-noise share sensing matrices so that
/// their results compare like for like.
fn family(p: Problem) -> u64 {
    match p {
        Problem::Cs | Problem::CsNoise => 0,
        Problem::Inpaint => 1,
        Problem::Superres => 2,
    }
}

/// Stream for the operator of `(problem, param)` under a recovery seed.
pub fn operator_stream(problem: Problem, param: usize) -> u64 {
    (stream::OPERATOR << 56) | (family(problem) << 48) | param as u64
}

/// Stream for a per-image draw (noise, latent restarts) of `(problem, param, image)`.
pub fn image_stream(kind: u64, problem: Problem, param: usize, image: usize) -> u64 {
    let code = match problem {
        Problem::Cs => 0,
        Problem::CsNoise => 1,
        Problem::Inpaint => 2,
        Problem::Superres => 3,
    };
    (kind << 56) | (code << 48) | ((param as u64) << 20) | image as u64
}

pub fn dataset_label(l: &Loaded) -> &'static str {
    match l.config.dataset.source {
        DataSource::Synthetic => "synthetic",
        DataSource::Idx => "mnist",
    }
}

fn load_split(l: &Loaded, field: &str, split: Split) -> Result<Dataset> {
    let d = &l.config.dataset;
    let rel = match split {
        Split::Train => d.train_images.as_ref(),
        Split::Test => d.test_images.as_ref(),
    }
    .ok_or_else(|| CliError::config(field, "required when source = \"idx\""))?;
    let path = l.resolve(rel);
    require_file(field, &path)?;
    Ok(normalize(&load_idx(&path, split)?))
}

pub fn train_set(l: &Loaded) -> Result<Dataset> {
    let c = &l.config;
    let d = &c.dataset;
    match d.source {
        DataSource::Synthetic => {
            Ok(synth_generate(&mut SeededRng::derive(c.seed, stream::TRAIN_DATA), d.n_train, d.size)?)
        }
        DataSource::Idx => {
            let full = load_split(l, "dataset.train_images", Split::Train)?;
            if d.n_train == 0 || d.n_train >= full.len() {
                Ok(full)
            } else {
                let idx = subset_indices(full.len(), d.n_train, c.seed ^ stream::TRAIN_SUBSET);
                Ok(full.select(&idx)?)
            }
        }
    }
}

pub fn test_set(l: &Loaded) -> Result<Dataset> {
    let c = &l.config;
    let d = &c.dataset;
    match d.source {
        DataSource::Synthetic => {
            Ok(synth_generate(&mut SeededRng::derive(c.seed, stream::TEST_DATA), d.n_test, d.size)?)
        }
        DataSource::Idx => {
            let full = load_split(l, "dataset.test_images", Split::Test)?;
            Ok(test_subset(&full, d.n_test.min(full.len()))?)
        }
    }
}
