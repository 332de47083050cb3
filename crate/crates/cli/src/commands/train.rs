use std::path::PathBuf;

use dae_pgd::dae::{train, ArchSpec, DaeModel, NoiseSchedule, TrainConfig};
use dae_pgd::datasets::split_and_bucket;
use dae_pgd::SeededRng;

use crate::config::Loaded;
use crate::data::{stream, train_set};
use crate::error::{CliError, Result};
use crate::output::{self, CommandRecord, LossRow, TRAIN_LOSS_CSV};

/// Files written by [`run`].
#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    pub losses: Vec<LossRow>,
}

/// Trains the DAE and writes the loss CSV, the latest per-epoch checkpoint
/// and the final checkpoint.
pub fn run(l: &Loaded, log: &mut dyn FnMut(&str)) -> Result<TrainOutputs> {
    let c = &l.config;
    let t = &c.train;
    let ds = train_set(l)?;
    let shape = ds.image_shape().to_vec();
    let size = match shape.as_slice() {
        [h, w, 1] if h == w => *h,
        other => {
            return Err(CliError::config("dataset", format!("the DAE needs square greyscale images, got {other:?}")))
        }
    };
    let schedule =
        split_and_bucket(&ds, &NoiseSchedule::new(t.sigmas.clone()), &mut SeededRng::derive(c.seed, stream::BUCKETS))?;
    let arch = ArchSpec::square(size, c.model.widths, c.model.latent_dim);
    let mut model: DaeModel<f32> = arch
        .build(&mut SeededRng::derive(c.seed, stream::MODEL_INIT))
        .map_err(|e| CliError::config("model", e.to_string()))?;
    if t.init_output_bias {
        let mean = ds.mean_pixel().clamp(1e-3, 1.0 - 1e-3);
        model.init_output_bias(mean)?;
    }

    let out = l.output_dir();
    output::create_dir(&out)?;
    let stem = l.checkpoint_stem();
    if let Some(parent) = stem.parent() {
        output::create_dir(parent)?;
    }
    let latest = out.join("checkpoints").join("latest");
    output::create_dir(latest.parent().expect("has parent"))?;

    let cfg = TrainConfig {
        epochs: t.epochs,
        batch: t.batch,
        lr: t.lr,
        beta1: t.beta1,
        beta2: t.beta2,
        eps: t.eps,
        chunk: t.chunk,
    };
    log(&format!(
        "training on {} images of {size}x{size}, {} parameters, {} epochs",
        ds.len(),
        model.num_params(),
        t.epochs
    ));
    let stats = train(
        &mut model,
        &ds.samples(),
        &schedule,
        &cfg,
        &mut SeededRng::derive(c.seed, stream::TRAIN_LOOP),
        |s, m| {
            log(&format!("epoch {:>3}  loss {:.6}", s.epoch, s.loss));
            m.save(&latest, c.seed, s.epoch)
        },
    )?;

    model.save(&stem, c.seed, t.epochs)?;
    let losses: Vec<LossRow> = stats.iter().map(|s| LossRow { epoch: s.epoch, loss: s.loss }).collect();
    let loss_csv = out.join(TRAIN_LOSS_CSV);
    output::write_csv(&loss_csv, &losses)?;

    let mut files = vec![
        output::relative(&loss_csv, &out),
        output::relative(&stem.with_extension("json"), &out),
        output::relative(&stem.with_extension("tnsr"), &out),
    ];
    if t.epochs > 0 {
        files.push(output::relative(&latest.with_extension("tnsr"), &out));
    }
    output::record_command(
        &out,
        "train",
        CommandRecord { config_sha256: l.sha256.clone(), seed: c.seed, recover_seeds: vec![], files },
    )?;
    Ok(TrainOutputs { checkpoint: stem, loss_csv, losses })
}
