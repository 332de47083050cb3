use std::path::{Path, PathBuf};
use std::time::Instant;

use dae_pgd::dae::DaeModel;
use dae_pgd::datasets::Dataset;
use dae_pgd::operators::{centered_top_left, make_downsample, make_gaussian, make_inpaint, random_top_left, LinearOp};
use dae_pgd::recovery::{csgm_recover, dae_pgd, ista_dct, recovery_error, RecoveryConfig};
use dae_pgd::tensor::tnsr;
use dae_pgd::{SeededRng, Tensor};
use rayon::prelude::*;

use crate::config::{require_file, Loaded, MaskPlacement, Problem, RecoverSection, Solver};
use crate::data::{dataset_label, image_stream, operator_stream, stream, test_set};
use crate::error::{CliError, Result};
use crate::output::{self, CommandRecord, ResultRow, RESULTS_CSV};

#[derive(Debug, Clone)]
pub struct RecoverOutputs {
    pub results_csv: PathBuf,
    pub rows: Vec<ResultRow>,
}

/// Loads the checkpoint named by the config.
pub fn load_model(l: &Loaded) -> Result<DaeModel<f32>> {
    let stem = l.checkpoint_stem();
    require_file("model.checkpoint", &stem.with_extension("json"))?;
    require_file("model.checkpoint", &stem.with_extension("tnsr"))?;
    Ok(DaeModel::load(&stem)?.0)
}

/// The operator of `(problem, param)` under recovery seed `seed`; shared by
/// every image of that run.
pub fn build_operator(
    problem: Problem,
    param: usize,
    seed: u64,
    shape: &[usize],
    r: &RecoverSection,
) -> Result<LinearOp<f32>> {
    let mut rng = SeededRng::derive(seed, operator_stream(problem, param));
    let n: usize = shape.iter().product();
    let op = match problem {
        Problem::Cs | Problem::CsNoise => make_gaussian(&mut rng, param, n)?.with_in_shape(shape)?,
        Problem::Inpaint => {
            let tl = match (r.mask_at, r.mask_placement) {
                (Some([row, col]), _) => (row, col),
                (None, MaskPlacement::Center) => centered_top_left(shape, param)?,
                (None, MaskPlacement::Random) => random_top_left(shape, param, &mut rng)?,
            };
            make_inpaint(shape, param, tl)?
        }
        Problem::Superres => make_downsample(shape, param)?,
    };
    Ok(op)
}

/// `y = A x`, plus `N(0, noise_var)` noise for cs-noise.
pub fn measure(
    op: &LinearOp<f32>,
    x: &Tensor<f32>,
    problem: Problem,
    param: usize,
    seed: u64,
    image: usize,
    noise_var: f64,
) -> Result<Tensor<f32>> {
    let y = op.apply(x)?;
    if problem != Problem::CsNoise || noise_var == 0.0 {
        return Ok(y);
    }
    let mut rng = SeededRng::derive(seed, image_stream(stream::NOISE, problem, param, image));
    let e = rng.gaussian::<f32>(op.out_shape(), 0.0, noise_var.sqrt())?;
    Ok(y.add(&e)?)
}

/// Image shown as "observed" next to the reconstructions, if there is one.
fn observed_image(op: &LinearOp<f32>, y: &Tensor<f32>, problem: Problem) -> Result<Option<Tensor<f32>>> {
    Ok(match problem {
        Problem::Inpaint => Some(op.adjoint(y)?),
        Problem::Superres => Some(y.clone()),
        Problem::Cs | Problem::CsNoise => None,
    })
}

fn base_row(l: &Loaded, problem: Problem, param: usize, seed: u64, image: usize, solver: Solver) -> ResultRow {
    ResultRow {
        dataset: dataset_label(l).into(),
        problem: problem.name().into(),
        param,
        seed,
        image,
        solver: solver.name().into(),
        iters: 0,
        error: f64::NAN,
        seconds: 0.0,
        status: "ok".into(),
    }
}

struct Run<'a> {
    l: &'a Loaded,
    model: &'a DaeModel<f32>,
    op: &'a LinearOp<f32>,
    problem: Problem,
    param: usize,
    seed: u64,
    image_dir: Option<PathBuf>,
    trace_dir: Option<PathBuf>,
}

impl Run<'_> {
    fn row(&self, image: usize, solver: Solver) -> ResultRow {
        base_row(self.l, self.problem, self.param, self.seed, image, solver)
    }

    fn solve(
        &self,
        solver: Solver,
        image: usize,
        y: &Tensor<f32>,
        x: &Tensor<f32>,
    ) -> Result<(Tensor<f32>, usize, f64)> {
        let c = &self.l.config;
        match solver {
            Solver::DaePgd => {
                let cfg = RecoveryConfig { eta: c.recover.eta, iters: c.recover.iters };
                let trace = dae_pgd(y, self.op, self.model, &cfg, Some(x))?;
                if let Some(dir) = &self.trace_dir {
                    let iterates: Vec<&Tensor<f32>> = trace.records.iter().map(|r| &r.x).collect();
                    tnsr::write_file(&dir.join(format!("{image:03}.tnsr")), &iterates)?;
                }
                Ok((trace.final_estimate().clone(), cfg.iters, trace.duration.as_secs_f64()))
            }
            Solver::Csgm => {
                let cfg = c.csgm.core();
                let mut rng = SeededRng::derive(self.seed, image_stream(stream::CSGM, self.problem, self.param, image));
                let out = csgm_recover(y, self.op, self.model, &cfg, &mut rng)?;
                Ok((out.estimate, cfg.steps * cfg.restarts, out.duration.as_secs_f64()))
            }
            Solver::LassoDct => {
                let start = Instant::now();
                let est = ista_dct(y, self.op, c.lasso.lambda, c.lasso.steps)?;
                Ok((est, c.lasso.steps, start.elapsed().as_secs_f64()))
            }
            Solver::Observed => {
                let start = Instant::now();
                let est = self.op.adjoint(y)?;
                Ok((est, 0, start.elapsed().as_secs_f64()))
            }
        }
    }

    fn write_image(&self, name: String, img: &Tensor<f32>) -> Result<()> {
        match &self.image_dir {
            Some(dir) => output::write_pgm(&dir.join(name), img),
            None => Ok(()),
        }
    }

    /// All solver rows for one image. Failures become rows, not errors.
    fn image(&self, image: usize, x: &Tensor<f32>) -> Result<Vec<ResultRow>> {
        let c = &self.l.config;
        let solvers = &c.recover.solvers;
        let y = match measure(self.op, x, self.problem, self.param, self.seed, image, c.recover.noise_var) {
            Ok(y) => y,
            Err(e) => {
                return Ok(solvers
                    .iter()
                    .map(|&s| ResultRow { status: format!("error: {e}"), ..self.row(image, s) })
                    .collect())
            }
        };
        self.write_image(format!("{image:03}_original.pgm"), x)?;
        if let Some(obs) = observed_image(self.op, &y, self.problem)? {
            self.write_image(format!("{image:03}_observed.pgm"), &obs)?;
        }
        let mut rows = Vec::with_capacity(solvers.len());
        for &s in solvers {
            let mut row = self.row(image, s);
            match self.solve(s, image, &y, x).and_then(|(est, iters, secs)| {
                let err = recovery_error(x, &est)?;
                Ok((est, iters, secs, err))
            }) {
                Ok((est, iters, secs, err)) => {
                    self.write_image(format!("{image:03}_{}.pgm", s.name()), &est)?;
                    row.iters = iters;
                    row.seconds = secs;
                    row.error = err;
                }
                Err(e) => row.status = format!("error: {e}"),
            }
            rows.push(row);
        }
        Ok(rows)
    }
}

fn run_dir(out: &Path, kind: &str, problem: Problem, param: usize, seed: u64) -> PathBuf {
    out.join(kind).join(format!("{}_{param}_s{seed}", problem.name()))
}

/// Rows for every (seed, param, image, solver), in that order.
pub fn recover_rows(
    l: &Loaded,
    model: &DaeModel<f32>,
    test: &Dataset,
    log: &mut dyn FnMut(&str),
) -> Result<Vec<ResultRow>> {
    let c = &l.config;
    let r = &c.recover;
    let shape = test.image_shape().to_vec();
    if model.in_shape() != shape.as_slice() {
        return Err(CliError::config(
            "model.checkpoint",
            format!("model takes {:?} images, dataset has {:?}", model.in_shape(), shape),
        ));
    }
    let samples: Vec<Tensor<f32>> = test.samples();
    let out = l.output_dir();
    let mut rows = Vec::new();
    for &seed in &r.seeds {
        for &param in &r.params {
            let run_rows: Vec<ResultRow> = match build_operator(r.problem, param, seed, &shape, r) {
                Err(e) => {
                    log(&format!("{} {}={param} seed {seed}: operator failed: {e}", r.problem, r.problem.param_name()));
                    let status = format!("error: {e}");
                    let mut failed = Vec::new();
                    for i in 0..samples.len() {
                        for &s in &r.solvers {
                            failed.push(ResultRow {
                                status: status.clone(),
                                ..base_row(l, r.problem, param, seed, i, s)
                            });
                        }
                    }
                    failed
                }
                Ok(op) => {
                    let image_dir = r.write_images.then(|| run_dir(&out, "images", r.problem, param, seed));
                    let trace_dir = r.save_traces.then(|| run_dir(&out, "traces", r.problem, param, seed));
                    if let Some(d) = &trace_dir {
                        output::create_dir(d)?;
                    }
                    let job = Run { l, model, op: &op, problem: r.problem, param, seed, image_dir, trace_dir };
                    let per_image: Vec<Result<Vec<ResultRow>>> =
                        samples.par_iter().enumerate().map(|(i, x)| job.image(i, x)).collect();
                    let mut flat = Vec::new();
                    for p in per_image {
                        flat.extend(p?);
                    }
                    flat
                }
            };
            for &s in &r.solvers {
                let errs: Vec<f64> = run_rows
                    .iter()
                    .filter(|row| row.solver == s.name() && row.status == "ok")
                    .map(|row| row.error)
                    .collect();
                if !errs.is_empty() {
                    log(&format!(
                        "{} {}={param} seed {seed} {s}: mean error {:.4} over {} images",
                        r.problem,
                        r.problem.param_name(),
                        errs.iter().sum::<f64>() / errs.len() as f64,
                        errs.len()
                    ));
                }
            }
            rows.extend(run_rows);
        }
    }
    Ok(rows)
}

/// Runs every configured solver on the test images and writes `results.csv`.
pub fn run(l: &Loaded, log: &mut dyn FnMut(&str)) -> Result<RecoverOutputs> {
    let model = load_model(l)?;
    let test = test_set(l)?;
    let rows = recover_rows(l, &model, &test, log)?;
    let out = l.output_dir();
    let results_csv = out.join(RESULTS_CSV);
    output::write_csv(&results_csv, &rows)?;
    output::record_command(
        &out,
        "recover",
        CommandRecord {
            config_sha256: l.sha256.clone(),
            seed: l.config.seed,
            recover_seeds: l.config.recover.seeds.clone(),
            files: vec![output::relative(&results_csv, &out)],
        },
    )?;
    Ok(RecoverOutputs { results_csv, rows })
}
