use std::path::PathBuf;

use dae_pgd::dae::DaeModel;
use dae_pgd::datasets::Dataset;
use dae_pgd::operators::{estimate_rip_delta, operator_norm_sq};
use dae_pgd::recovery::{dae_pgd, RecoveryConfig, RecoveryTrace};
use dae_pgd::theory::{check_contraction, trace_alpha, Horizon, TheoryEstimates};
use dae_pgd::{Error, SeededRng, Tensor};
use rayon::prelude::*;

use super::recover::{build_operator, load_model};
use crate::config::{Loaded, Problem};
use crate::data::{stream, test_set};
use crate::error::{CliError, Result};
use crate::output::{self, CommandRecord, TheoryImageRow, TheoryRow, THEORY_CSV, THEORY_IMAGES_CSV};

#[derive(Debug, Clone)]
pub struct TheoryOutputs {
    pub theory_csv: PathBuf,
    pub images_csv: PathBuf,
    pub rows: Vec<TheoryRow>,
    pub image_rows: Vec<TheoryImageRow>,
}

/// Estimates the constants of one noise-free compressive-sensing experiment
/// and checks the per-step inequality and the final bound on every image.
pub fn analyse(
    l: &Loaded,
    model: &DaeModel<f32>,
    test: &Dataset,
    m: usize,
    seed: u64,
) -> Result<(TheoryRow, Vec<TheoryImageRow>)> {
    let c = &l.config;
    let th = &c.theory;
    let shape = test.image_shape().to_vec();
    let experiment = format!("cs-m{m}-s{seed}");
    let op = build_operator(Problem::Cs, m, seed, &shape, &c.recover)?;
    let samples: Vec<Tensor<f32>> = test.samples();
    let cfg = RecoveryConfig { eta: c.recover.eta, iters: c.recover.iters };

    let traces: Vec<RecoveryTrace<f32>> = samples
        .par_iter()
        .map(|x| {
            let y = op.apply(x)?;
            dae_pgd(&y, &op, model, &cfg, Some(x))
        })
        .collect::<Result<_, Error>>()?;

    // S is the DAE's range on the test images.
    let range: Vec<Tensor<f32>> = samples.par_iter().map(|x| model.forward(x)).collect::<Result<_, Error>>()?;
    let delta = estimate_rip_delta(&op, &range, &mut SeededRng::derive(seed, stream::RIP), th.rip_pairs)?;
    let m_hat = operator_norm_sq(&op, th.norm_iters, th.norm_tol, &mut SeededRng::derive(seed, stream::NORM))?.value;

    let mut alpha: Option<f64> = None;
    for (t, x) in traces.iter().zip(&samples) {
        if let Some(a) = trace_alpha(t, x)? {
            alpha = Some(alpha.map_or(a, |b| b.max(a)));
        }
    }
    let alpha = alpha.ok_or_else(|| CliError::Runtime(format!("{experiment}: every alpha probe was degenerate")))?;
    let mut est = TheoryEstimates::new(cfg.eta, delta, alpha, m_hat)?;

    let mut image_rows = Vec::with_capacity(traces.len());
    let (mut satisfied, mut steps, mut dominated) = (0usize, 0usize, 0usize);
    for (i, trace) in traces.iter().enumerate() {
        let errors = trace.errors().expect("traces carry ground truth");
        let e0 = errors[0];
        let observed = *errors.last().expect("non-empty trace");
        let bound = est.bound(Horizon::Finite(trace.iters()), e0)?.value;
        let report = check_contraction(trace, est.gamma, est.alpha)?;
        satisfied += report.satisfied;
        steps += report.steps;
        if bound >= observed {
            dominated += 1;
        }
        image_rows.push(TheoryImageRow {
            experiment: experiment.clone(),
            m,
            image: i,
            e0,
            bound,
            observed,
            contraction_fraction: report.fraction,
            worst_excess: report.worst_excess.max(0.0),
        });
    }
    est.contraction_fraction = if steps == 0 { 1.0 } else { satisfied as f64 / steps as f64 };
    let n = image_rows.len() as f64;
    let row = TheoryRow {
        experiment,
        m,
        delta: est.delta,
        m_hat: est.m_hat,
        gamma: est.gamma,
        two_gamma: est.two_gamma(),
        alpha: est.alpha,
        bound: image_rows.iter().map(|r| r.bound).sum::<f64>() / n,
        observed: image_rows.iter().map(|r| r.observed).sum::<f64>() / n,
        contraction_fraction: est.contraction_fraction,
        bound_fraction: dominated as f64 / n,
        vacuous: est.two_gamma() >= 1.0,
    };
    Ok((row, image_rows))
}

/// Writes `theory.csv` (one row per m and seed) and `theory_images.csv`.
pub fn run(l: &Loaded, log: &mut dyn FnMut(&str)) -> Result<TheoryOutputs> {
    let c = &l.config;
    if c.theory.m.is_empty() {
        return Err(CliError::config("theory.m", "need at least one measurement count"));
    }
    let model = load_model(l)?;
    let test = test_set(l)?;
    let mut rows = Vec::new();
    let mut image_rows = Vec::new();
    for &seed in &c.recover.seeds {
        for &m in &c.theory.m {
            let (row, imgs) = analyse(l, &model, &test, m, seed)?;
            log(&format!(
                "{}: delta {:.4} M {:.4} gamma {:.4} alpha {:.4} contraction {:.3} bound {:.3}{}",
                row.experiment,
                row.delta,
                row.m_hat,
                row.gamma,
                row.alpha,
                row.contraction_fraction,
                row.bound_fraction,
                if row.vacuous { " (2γ >= 1: bound does not contract)" } else { "" }
            ));
            rows.push(row);
            image_rows.extend(imgs);
        }
    }
    let out = l.output_dir();
    let theory_csv = out.join(THEORY_CSV);
    let images_csv = out.join(THEORY_IMAGES_CSV);
    output::write_csv(&theory_csv, &rows)?;
    output::write_csv(&images_csv, &image_rows)?;
    output::record_command(
        &out,
        "theory",
        CommandRecord {
            config_sha256: l.sha256.clone(),
            seed: c.seed,
            recover_seeds: c.recover.seeds.clone(),
            files: vec![output::relative(&theory_csv, &out), output::relative(&images_csv, &out)],
        },
    )?;
    Ok(TheoryOutputs { theory_csv, images_csv, rows, image_rows })
}
