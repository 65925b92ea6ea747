//! Seeded, parallel experiment sweeps.
//!
//! An [`ExperimentConfig`] names a model template, a grid of cells and a
//! number of trials. Every `(cell, trial)` task draws its own model, sample
//! and perturbation from seeds derived from `base_seed`, so the output table
//! does not depend on the thread count or on scheduling order.

mod report;
mod results;

use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{correlation_matrix, glasso, neighborhood_fit_cov, CombineRule};
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::evalmetrics::{
    estimation_errors_against, fit_line, fit_loglog_slope, rank_recovered, signed_support_metrics, LineFit,
    RecoveryReport, DEFAULT_RANK_REL_TOL, DEFAULT_TOL_ZERO,
};
use crate::lvsolver::{solve_lvglasso, Estimate, RegParams, SolverConfig};
use crate::modelgen::{
    empirical_covariance, generate_ground_truth, perturb_sparse_lowrank, sample_gaussian, GroundTruth, ModelSpec,
    SampleSet,
};
use crate::rng::{derive_seed, MODEL_STREAM, PERTURB_STREAM};
use crate::symkernel::{inverse_pd, logdet_pd, SymMatrix};

pub use report::{markdown_report, summarize, CellSummary};
pub use results::{
    emit_results, merge_results, parse_results_csv, read_results, results_to_csv, results_to_json, sort_rows,
    OutputFormat, ResultRow, CSV_HEADER,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Error versus `n`; reports the log-log slope of the median operator-norm error.
    Scaling,
    /// Success probability over an `(n, p)` grid.
    Phase,
    /// Success probability over an `(n, s_min)` grid.
    Minsignal,
    /// Estimation from a perturbed model over a grid of `delta`.
    Perturbation,
    /// Several estimators on the same draws.
    BaselineCompare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lvglasso,
    Glasso,
    Neighborhood,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Lvglasso => "lvglasso",
            Method::Glasso => "glasso",
            Method::Neighborhood => "neighborhood",
        }
    }
}

/// Rule producing `(λₙ, γ)` for a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum RegRule {
    Fixed { lambda: f64, gamma: f64 },
    /// `λₙ = c·√(p / n)`.
    TheoryScaled { c: f64, gamma: f64 },
    /// Picks the grid value with the best held-out Gaussian log-likelihood.
    /// With `scaled`, grid values are multipliers of `√(p / n)`.
    Holdout {
        grid: Vec<f64>,
        #[serde(default = "default_holdout_fraction")]
        fraction: f64,
        gamma: f64,
        #[serde(default)]
        scaled: bool,
    },
}

fn default_holdout_fraction() -> f64 {
    0.25
}

impl Default for RegRule {
    fn default() -> Self {
        RegRule::TheoryScaled { c: 1.0, gamma: 1.0 }
    }
}

impl RegRule {
    pub fn gamma(&self) -> f64 {
        match self {
            RegRule::Fixed { gamma, .. } | RegRule::TheoryScaled { gamma, .. } | RegRule::Holdout { gamma, .. } => *gamma,
        }
    }
}

/// Axes of the sweep. Empty axes fall back to the model template.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Grid {
    pub n: Vec<usize>,
    pub p: Vec<usize>,
    pub h: Vec<usize>,
    pub s_min: Vec<f64>,
    pub delta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Value of the `experiment` column.
    pub id: String,
    pub kind: ExperimentKind,
    /// Template; `p`, `h` and `edge_magnitude[0]` are overridden by the grid
    /// and the seed is derived per trial.
    pub model: ModelSpec,
    pub grid: Grid,
    pub trials: u32,
    pub base_seed: u64,
    pub reg_rule: RegRule,
    pub solver: SolverConfig,
    /// Estimators for `baseline_compare`; other kinds use `lvglasso` only.
    pub methods: Vec<Method>,
    /// Perturbation experiments: feed the exact perturbed covariance instead of samples.
    pub population: bool,
    /// Number of nonzero entries in the perturbation direction.
    pub perturb_k: usize,
    /// Largest `delta` included in the linear fit of the perturbation summary.
    pub perturb_fit_max: f64,
    /// Neighborhood selection runs on the sample correlation matrix with
    /// `λ = neighborhood_c·√(ln p / n)`.
    pub neighborhood_c: f64,
    pub combine: CombineRule,
    pub tol_zero: f64,
    pub rank_rel_tol: f64,
    /// Record wall-clock time per fit. Off by default so tables are reproducible byte for byte.
    pub timing: bool,
    pub output_path: Option<PathBuf>,
    pub format: OutputFormat,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            id: "experiment".into(),
            kind: ExperimentKind::Scaling,
            model: ModelSpec::default(),
            grid: Grid::default(),
            trials: 10,
            base_seed: 0,
            reg_rule: RegRule::default(),
            solver: SolverConfig::default(),
            methods: vec![Method::Lvglasso, Method::Glasso, Method::Neighborhood],
            population: false,
            perturb_k: 3,
            perturb_fit_max: 0.1,
            neighborhood_c: 2.0,
            combine: CombineRule::And,
            tol_zero: DEFAULT_TOL_ZERO,
            rank_rel_tol: DEFAULT_RANK_REL_TOL,
            timing: false,
            output_path: None,
            format: OutputFormat::Csv,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::param("trials", "must be at least 1"));
        }
        self.solver.validate()?;
        let mut template = self.model.clone();
        for &p in &self.grid.p {
            template.p = p;
            template.validate()?;
        }
        if self.grid.p.is_empty() {
            template.validate()?;
        }
        for &s in &self.grid.s_min {
            if !(s > 0.0 && s <= self.model.edge_magnitude[1]) {
                return Err(Error::param(
                    "grid.s_min",
                    format!("{s} must lie in (0, {}]", self.model.edge_magnitude[1]),
                ));
            }
        }
        if let Some(&d) = self.grid.delta.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
            return Err(Error::param("grid.delta", format!("must be finite and non-negative, got {d}")));
        }
        if !(self.tol_zero >= 0.0) {
            return Err(Error::param("tol_zero", "must be non-negative"));
        }
        if !(self.rank_rel_tol > 0.0 && self.rank_rel_tol < 1.0) {
            return Err(Error::param("rank_rel_tol", "must lie in (0, 1)"));
        }
        if !(self.neighborhood_c > 0.0 && self.neighborhood_c.is_finite()) {
            return Err(Error::param("neighborhood_c", "must be positive"));
        }
        match &self.reg_rule {
            RegRule::Fixed { lambda, gamma } => RegParams::new(*lambda, *gamma).map(|_| ())?,
            RegRule::TheoryScaled { c, gamma } => RegParams::new(*c, *gamma).map(|_| ())?,
            RegRule::Holdout { grid, fraction, gamma, .. } => {
                if grid.is_empty() {
                    return Err(Error::param("reg_rule.grid", "must not be empty"));
                }
                for &l in grid {
                    RegParams::new(l, *gamma)?;
                }
                if !(*fraction > 0.0 && *fraction < 1.0) {
                    return Err(Error::param("reg_rule.fraction", "must lie in (0, 1)"));
                }
            }
        }
        let population = self.population && self.kind == ExperimentKind::Perturbation;
        if population {
            if !matches!(self.reg_rule, RegRule::Fixed { .. }) {
                return Err(Error::param("reg_rule", "population mode needs a fixed λ"));
            }
        } else if self.grid.n.is_empty() {
            return Err(Error::param("grid.n", "sample sizes are required"));
        }
        if self.grid.n.iter().any(|&n| n < 2) {
            return Err(Error::param("grid.n", "every n must be at least 2"));
        }
        match self.kind {
            ExperimentKind::Perturbation if self.grid.delta.is_empty() => {
                Err(Error::param("grid.delta", "perturbation experiments need a delta grid"))
            }
            ExperimentKind::Perturbation if self.perturb_k == 0 => {
                Err(Error::param("perturb_k", "must be at least 1"))
            }
            ExperimentKind::BaselineCompare if self.methods.is_empty() => {
                Err(Error::param("methods", "must name at least one estimator"))
            }
            _ => Ok(()),
        }
    }

    fn methods(&self) -> Vec<Method> {
        if self.kind == ExperimentKind::BaselineCompare {
            let mut m = self.methods.clone();
            m.sort();
            m.dedup();
            m
        } else {
            vec![Method::Lvglasso]
        }
    }

    fn population_mode(&self) -> bool {
        self.population && self.kind == ExperimentKind::Perturbation
    }

    /// Expands the grid into cells in a fixed order.
    pub fn cells(&self) -> Vec<Cell> {
        fn axis<T: Copy>(v: &[T], fallback: T) -> Vec<T> {
            if v.is_empty() {
                vec![fallback]
            } else {
                v.to_vec()
            }
        }
        let ns = if self.population_mode() { vec![0] } else { self.grid.n.clone() };
        let ps = axis(&self.grid.p, self.model.p);
        let hs = axis(&self.grid.h, self.model.h);
        let ss = axis(&self.grid.s_min, self.model.edge_magnitude[0]);
        let ds = if self.kind == ExperimentKind::Perturbation { self.grid.delta.clone() } else { vec![0.0] };
        let mut cells = Vec::new();
        for &p in &ps {
            for &h in &hs {
                for &s_min in &ss {
                    for &delta in &ds {
                        for &n in &ns {
                            cells.push(Cell {
                                index: cells.len() as u32,
                                p,
                                h,
                                n,
                                s_min,
                                delta,
                            });
                        }
                    }
                }
            }
        }
        cells
    }

    fn model_for(&self, cell: &Cell, trial: u32) -> ModelSpec {
        let mut spec = self.model.clone();
        spec.p = cell.p;
        spec.h = cell.h;
        spec.edge_magnitude[0] = cell.s_min;
        // one model per (p, h, s_min, trial), shared across n and delta
        spec.seed = derive_seed(
            self.base_seed ^ model_key(cell.p, cell.h, cell.s_min),
            MODEL_STREAM,
            trial,
        );
        spec
    }
}

fn model_key(p: usize, h: usize, s_min: f64) -> u64 {
    crate::rng::splitmix64(((p as u64) << 40) ^ ((h as u64) << 32) ^ s_min.to_bits().rotate_left(17))
}

/// One point of the sweep; `n = 0` means population input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub index: u32,
    pub p: usize,
    pub h: usize,
    pub n: usize,
    pub s_min: f64,
    pub delta: f64,
}

/// Everything an estimator sees for one `(cell, trial)`.
pub struct TrialInput<'a> {
    pub cell: &'a Cell,
    pub trial: u32,
    pub truth: &'a GroundTruth,
    /// Covariance fed to the estimator: empirical, or exact in population mode.
    pub sigma_input: &'a SymMatrix,
    pub samples: Option<&'a SampleSet>,
    /// Regularization chosen for this cell.
    pub reg: RegParams,
}

/// Result of one fit, before it is flattened into a [`ResultRow`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub report: RecoveryReport,
    pub lambda: f64,
    pub gamma: f64,
    pub iterations: usize,
}

/// An estimator that can be run inside a sweep. Implemented by the built-in
/// methods and by test stubs.
pub trait TrialEstimator: Sync {
    fn name(&self) -> &str;
    fn run(&self, input: &TrialInput<'_>, cfg: &ExperimentConfig) -> Result<TrialOutcome>;
}

/// Scores an estimate against the unperturbed truth.
pub fn score_estimate(est: &Estimate, truth: &GroundTruth, tol_zero: f64, rank_rel_tol: f64) -> Result<RecoveryReport> {
    let support = signed_support_metrics(&est.s_hat, &truth.s_star, tol_zero)?;
    let rank = rank_recovered(&est.l_hat, truth.h, rank_rel_tol)?;
    let errors = estimation_errors_against(est, &truth.s_star, &truth.l_star)?;
    Ok(RecoveryReport::assemble(support, rank, errors))
}

pub struct LvglassoEstimator;

impl TrialEstimator for LvglassoEstimator {
    fn name(&self) -> &str {
        Method::Lvglasso.name()
    }

    fn run(&self, input: &TrialInput<'_>, cfg: &ExperimentConfig) -> Result<TrialOutcome> {
        let (est, rep) = solve_lvglasso(input.sigma_input, input.reg, &cfg.solver)?;
        Ok(TrialOutcome {
            report: score_estimate(&est, input.truth, cfg.tol_zero, cfg.rank_rel_tol)?,
            lambda: input.reg.lambda_n,
            gamma: input.reg.gamma,
            iterations: rep.iterations,
        })
    }
}

/// Graphical lasso with `λ = λₙγ`; its low-rank estimate is zero.
pub struct GlassoEstimator;

impl TrialEstimator for GlassoEstimator {
    fn name(&self) -> &str {
        Method::Glasso.name()
    }

    fn run(&self, input: &TrialInput<'_>, cfg: &ExperimentConfig) -> Result<TrialOutcome> {
        let lambda = input.reg.sparse_penalty();
        let (k_hat, rep) = glasso(input.sigma_input, lambda, cfg.solver.penalize_diagonal, &cfg.solver)?;
        let p = k_hat.dim();
        let est = Estimate {
            s_hat: k_hat.clone(),
            l_hat: SymMatrix::zeros(p),
            r_hat: k_hat,
        };
        Ok(TrialOutcome {
            report: score_estimate(&est, input.truth, cfg.tol_zero, cfg.rank_rel_tol)?,
            lambda,
            gamma: f64::NAN,
            iterations: rep.iterations,
        })
    }
}

/// Neighborhood selection scored on its signed pattern. Norm errors are
/// undefined because it produces no precision estimate.
pub struct NeighborhoodEstimator;

impl TrialEstimator for NeighborhoodEstimator {
    fn name(&self) -> &str {
        Method::Neighborhood.name()
    }

    fn run(&self, input: &TrialInput<'_>, cfg: &ExperimentConfig) -> Result<TrialOutcome> {
        let p = input.cell.p as f64;
        let n = input.samples.map(|s| s.n).ok_or_else(|| {
            Error::InvalidInput("neighborhood selection needs samples, not a population covariance".into())
        })?;
        let lambda = cfg.neighborhood_c * (p.ln() / n as f64).sqrt();
        let fit = neighborhood_fit_cov(&correlation_matrix(input.sigma_input)?, lambda, cfg.combine)?;
        let pattern = fit.signed_pattern();
        let support = signed_support_metrics(&pattern, &input.truth.s_star, cfg.tol_zero)?;
        let rank = rank_recovered(&SymMatrix::zeros(input.cell.p), input.truth.h, cfg.rank_rel_tol)?;
        let mut report = RecoveryReport::assemble(
            support,
            rank,
            crate::evalmetrics::ErrorMetrics {
                op_norm_error: f64::NAN,
                frob_error_s: f64::NAN,
                frob_error_l: f64::NAN,
            },
        );
        report.effective_rank = 0;
        Ok(TrialOutcome {
            report,
            lambda,
            gamma: f64::NAN,
            iterations: 0,
        })
    }
}

fn builtin(method: Method) -> Box<dyn TrialEstimator> {
    match method {
        Method::Lvglasso => Box::new(LvglassoEstimator),
        Method::Glasso => Box::new(GlassoEstimator),
        Method::Neighborhood => Box::new(NeighborhoodEstimator),
    }
}

/// Chooses `(λₙ, γ)`. Holdout needs the raw samples.
pub fn choose_lambda(
    rule: &RegRule,
    p: usize,
    n: usize,
    samples: Option<&DenseMatrix>,
    solver: &SolverConfig,
) -> Result<RegParams> {
    match rule {
        RegRule::Fixed { lambda, gamma } => RegParams::new(*lambda, *gamma),
        RegRule::TheoryScaled { c, gamma } => {
            if n == 0 {
                return Err(Error::param("reg_rule", "theory_scaled needs a finite sample size"));
            }
            RegParams::new(c * (p as f64 / n as f64).sqrt(), *gamma)
        }
        RegRule::Holdout {
            grid,
            fraction,
            gamma,
            scaled,
        } => {
            let data = samples.ok_or_else(|| Error::param("reg_rule", "holdout needs samples"))?;
            let grid: Vec<f64> = if *scaled {
                let unit = (p as f64 / data.rows() as f64).sqrt();
                grid.iter().map(|g| g * unit).collect()
            } else {
                grid.clone()
            };
            let scores = holdout_scores(data, &grid, *fraction, *gamma, solver)?;
            let mut best = 0;
            for (i, s) in scores.iter().enumerate() {
                if s > &scores[best] {
                    best = i;
                }
            }
            if !scores[best].is_finite() {
                return Err(Error::InvalidInput("no grid value produced a finite held-out likelihood".into()));
            }
            RegParams::new(grid[best], *gamma)
        }
    }
}

/// Held-out log-likelihood `logdet R̂ − tr(Σ̂_test R̂)` for each grid value,
/// fitting on the leading rows and testing on the trailing `fraction`.
/// Failed fits score `−∞`.
pub fn holdout_scores(
    data: &DenseMatrix,
    grid: &[f64],
    fraction: f64,
    gamma: f64,
    solver: &SolverConfig,
) -> Result<Vec<f64>> {
    let n = data.rows();
    let n_test = ((fraction * n as f64).round() as usize).max(1);
    if n_test + 2 > n {
        return Err(Error::InvalidInput(format!("holdout split of {n} rows leaves too few for training")));
    }
    let train = empirical_covariance(&data.select_rows(0..n - n_test), true)?;
    let test = empirical_covariance(&data.select_rows(n - n_test..n), true)?;
    grid.iter()
        .map(|&lambda| {
            let reg = RegParams::new(lambda, gamma)?;
            Ok(match solve_lvglasso(&train, reg, solver) {
                Ok((est, _)) => logdet_pd(&est.r_hat).map_or(f64::NEG_INFINITY, |ld| ld - test.dot(&est.r_hat)),
                Err(_) => f64::NEG_INFINITY,
            })
        })
        .collect()
}

/// Rows plus a kind-specific digest.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Summary {
    Scaling(ScalingSummary),
    Success(SuccessSummary),
    Perturbation(PerturbationSummary),
    Compare(SuccessSummary),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingSummary {
    /// `(n, median operator-norm error)` in increasing `n`.
    pub median_error: Vec<(usize, f64)>,
    /// Log-log fit; `None` with fewer than two usable points.
    pub fit: Option<LineFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuccessSummary {
    pub cells: Vec<CellSummary>,
}

impl SuccessSummary {
    /// Success fraction of the first cell matching `(method, n)`.
    pub fn fraction(&self, method: &str, n: usize) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.n == n)
            .map(|c| c.success_fraction)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationSummary {
    /// `(delta, median ‖Ŝ − S*‖_F, median ‖L̂ − L*‖_F)` in increasing delta.
    pub median_error: Vec<(f64, f64, f64)>,
    /// Median `‖Ŝ − S*‖_F` is non-decreasing in delta.
    pub monotone_s: bool,
    /// Linear fit of the median `‖Ŝ − S*‖_F` over `delta ≤ perturb_fit_max`.
    pub small_delta_fit: Option<LineFit>,
}

/// Runs the sweep with the built-in estimators on `jobs` threads.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<ExperimentOutput> {
    let estimators: Vec<Box<dyn TrialEstimator>> = cfg.methods().into_iter().map(builtin).collect();
    let refs: Vec<&dyn TrialEstimator> = estimators.iter().map(|b| b.as_ref()).collect();
    run_experiment_with(cfg, jobs, &refs)
}

/// Runs the sweep with caller-supplied estimators.
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    jobs: usize,
    estimators: &[&dyn TrialEstimator],
) -> Result<ExperimentOutput> {
    cfg.validate()?;
    if estimators.is_empty() {
        return Err(Error::param("methods", "no estimators supplied"));
    }
    let cells = cfg.cells();
    let tasks: Vec<(Cell, u32)> = cells
        .iter()
        .flat_map(|c| (0..cfg.trials).map(move |t| (*c, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::ThreadPool(e.to_string()))?;
    let per_task: Vec<Vec<ResultRow>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|(cell, trial)| run_task(cfg, cell, *trial, estimators))
            .collect()
    });
    let mut rows: Vec<ResultRow> = per_task.into_iter().flatten().collect();
    sort_rows(&mut rows);
    let summary = summarize_kind(cfg, &rows);
    Ok(ExperimentOutput { rows, summary })
}

fn run_task(cfg: &ExperimentConfig, cell: &Cell, trial: u32, estimators: &[&dyn TrialEstimator]) -> Vec<ResultRow> {
    let spec = cfg.model_for(cell, trial);
    let sample_seed = derive_seed(cfg.base_seed, cell.index, trial);
    let d = spec.graph.nominal_degree();
    let row_for = |method: &str, outcome: Option<(TrialOutcome, f64)>| {
        let (o, wall) = outcome.unwrap_or_else(|| {
            (
                TrialOutcome {
                    report: RecoveryReport::failed(),
                    lambda: f64::NAN,
                    gamma: f64::NAN,
                    iterations: 0,
                },
                0.0,
            )
        });
        let r = o.report;
        ResultRow {
            experiment: cfg.id.clone(),
            p: cell.p,
            h: cell.h,
            n: cell.n,
            d,
            s_min: cell.s_min,
            delta: cell.delta,
            trial,
            seed: sample_seed,
            method: method.to_string(),
            lambda: o.lambda,
            gamma: o.gamma,
            exact_signed_support: r.exact_signed_support,
            support_precision: r.support_precision,
            support_recall: r.support_recall,
            sign_errors: r.sign_errors,
            rank_recovered: r.rank_recovered,
            effective_rank: r.effective_rank,
            op_norm_error: r.op_norm_error,
            frob_error_s: r.frob_error_s,
            frob_error_l: r.frob_error_l,
            iterations: o.iterations,
            wall_ms: wall,
        }
    };
    let prepared = prepare_trial(cfg, cell, trial, &spec, sample_seed);
    let (truth, sigma_input, samples, reg) = match prepared {
        Ok(p) => p,
        Err(_) => return estimators.iter().map(|e| row_for(e.name(), None)).collect(),
    };
    estimators
        .iter()
        .map(|e| {
            let input = TrialInput {
                cell,
                trial,
                truth: &truth,
                sigma_input: &sigma_input,
                samples: samples.as_ref(),
                reg,
            };
            let start = Instant::now();
            let outcome = e.run(&input, cfg).ok();
            let wall = if cfg.timing { start.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
            row_for(e.name(), outcome.map(|o| (o, wall)))
        })
        .collect()
}

type Prepared = (GroundTruth, SymMatrix, Option<SampleSet>, RegParams);

fn prepare_trial(cfg: &ExperimentConfig, cell: &Cell, trial: u32, spec: &ModelSpec, sample_seed: u64) -> Result<Prepared> {
    let truth = generate_ground_truth(spec)?;
    let sigma = if cfg.kind == ExperimentKind::Perturbation && cell.delta > 0.0 {
        let seed = derive_seed(cfg.base_seed, PERTURB_STREAM, trial);
        let pert = perturb_sparse_lowrank(&truth.k_marg, cell.delta, cfg.perturb_k, seed)?;
        inverse_pd(&pert.k_tilde)?
    } else {
        truth.sigma.clone()
    };
    if cfg.population_mode() {
        let reg = choose_lambda(&cfg.reg_rule, cell.p, 0, None, &cfg.solver)?;
        return Ok((truth, sigma, None, reg));
    }
    let samples = sample_gaussian(&sigma, cell.n, sample_seed)?;
    let reg = choose_lambda(&cfg.reg_rule, cell.p, cell.n, Some(&samples.data), &cfg.solver)?;
    let sigma_hat = samples.sigma_hat.clone();
    Ok((truth, sigma_hat, Some(samples), reg))
}

fn median(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.into_iter().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn summarize_kind(cfg: &ExperimentConfig, rows: &[ResultRow]) -> Summary {
    match cfg.kind {
        ExperimentKind::Scaling => Summary::Scaling(scaling_summary(rows)),
        ExperimentKind::Phase | ExperimentKind::Minsignal => Summary::Success(SuccessSummary { cells: summarize(rows) }),
        ExperimentKind::BaselineCompare => Summary::Compare(SuccessSummary { cells: summarize(rows) }),
        ExperimentKind::Perturbation => Summary::Perturbation(perturbation_summary(rows, cfg.perturb_fit_max)),
    }
}

/// Median operator-norm error per `n`, pooled over all other axes, and its
/// log-log slope.
pub fn scaling_summary(rows: &[ResultRow]) -> ScalingSummary {
    let mut ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    let median_error: Vec<(usize, f64)> = ns
        .iter()
        .map(|&n| (n, median(rows.iter().filter(|r| r.n == n).map(|r| r.op_norm_error))))
        .collect();
    let pts: Vec<(f64, f64)> = median_error
        .iter()
        .filter(|(n, e)| *n > 0 && *e > 0.0 && e.is_finite())
        .map(|&(n, e)| (n as f64, e))
        .collect();
    ScalingSummary {
        fit: fit_loglog_slope(&pts).ok(),
        median_error,
    }
}

pub fn perturbation_summary(rows: &[ResultRow], fit_max: f64) -> PerturbationSummary {
    let mut deltas: Vec<f64> = rows.iter().map(|r| r.delta).collect();
    deltas.sort_by(f64::total_cmp);
    deltas.dedup();
    let median_error: Vec<(f64, f64, f64)> = deltas
        .iter()
        .map(|&d| {
            let sel = || rows.iter().filter(move |r| r.delta == d);
            (d, median(sel().map(|r| r.frob_error_s)), median(sel().map(|r| r.frob_error_l)))
        })
        .collect();
    let monotone_s = median_error.windows(2).all(|w| w[1].1 >= w[0].1);
    let pts: Vec<(f64, f64)> = median_error
        .iter()
        .filter(|(d, e, _)| *d <= fit_max && e.is_finite())
        .map(|&(d, e, _)| (d, e))
        .collect();
    PerturbationSummary {
        median_error,
        monotone_s,
        small_delta_fit: fit_line(&pts).ok(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modelgen::GraphKind;

    /// Reports `op_norm_error = n^{-1/2}` and full success.
    struct Stub;

    impl TrialEstimator for Stub {
        fn name(&self) -> &str {
            "stub"
        }

        fn run(&self, input: &TrialInput<'_>, _cfg: &ExperimentConfig) -> Result<TrialOutcome> {
            let mut report = RecoveryReport::failed();
            report.exact_signed_support = true;
            report.rank_recovered = true;
            report.op_norm_error = 3.0 / (input.cell.n as f64).sqrt();
            Ok(TrialOutcome {
                report,
                lambda: input.reg.lambda_n,
                gamma: input.reg.gamma,
                iterations: 1,
            })
        }
    }

    struct Failing;

    impl TrialEstimator for Failing {
        fn name(&self) -> &str {
            "failing"
        }

        fn run(&self, _: &TrialInput<'_>, _: &ExperimentConfig) -> Result<TrialOutcome> {
            Err(Error::InvalidInput("always".into()))
        }
    }

    fn small(kind: ExperimentKind) -> ExperimentConfig {
        ExperimentConfig {
            id: "t".into(),
            kind,
            model: ModelSpec {
                p: 8,
                h: 1,
                ..ModelSpec::default()
            },
            grid: Grid {
                n: vec![50],
                ..Grid::default()
            },
            trials: 2,
            base_seed: 7,
            solver: SolverConfig {
                tol_primal: 1e-5,
                tol_dual: 1e-5,
                ..SolverConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn stub_scaling_slope_is_minus_half() {
        let mut cfg = small(ExperimentKind::Scaling);
        cfg.grid.n = vec![100, 400, 1600];
        let out = run_experiment_with(&cfg, 2, &[&Stub]).unwrap();
        let Summary::Scaling(s) = out.summary else { panic!() };
        assert!((s.fit.unwrap().slope + 0.5).abs() < 1e-12);
    }

    #[test]
    fn stub_phase_success_fraction_is_one() {
        let mut cfg = small(ExperimentKind::Phase);
        cfg.trials = 4;
        let out = run_experiment_with(&cfg, 1, &[&Stub]).unwrap();
        let Summary::Success(s) = out.summary else { panic!() };
        assert_eq!(s.fraction("stub", 50), Some(1.0));
        assert_eq!(s.cells[0].trials, 4);
    }

    #[test]
    fn single_cell_single_trial_gives_one_row() {
        let mut cfg = small(ExperimentKind::Phase);
        cfg.trials = 1;
        let out = run_experiment(&cfg, 1).unwrap();
        assert_eq!(out.rows.len(), 1);
        assert_eq!(out.rows[0].method, "lvglasso");
        assert!(out.rows[0].op_norm_error.is_finite());
    }

    #[test]
    fn failures_become_nan_rows() {
        let cfg = small(ExperimentKind::Phase);
        let out = run_experiment_with(&cfg, 1, &[&Failing, &Stub]).unwrap();
        assert_eq!(out.rows.len(), 4);
        let failed: Vec<_> = out.rows.iter().filter(|r| r.method == "failing").collect();
        assert!(failed.iter().all(|r| r.op_norm_error.is_nan() && !r.success()));
    }

    #[test]
    fn rows_do_not_depend_on_thread_count() {
        let mut cfg = small(ExperimentKind::BaselineCompare);
        cfg.grid.n = vec![40, 80];
        cfg.trials = 3;
        let a = results_to_csv(&run_experiment(&cfg, 1).unwrap().rows).unwrap();
        let b = results_to_csv(&run_experiment(&cfg, 4).unwrap().rows).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().filter(|&&c| c == b'\n').count(), 1 + 2 * 3 * 3);
    }

    #[test]
    fn zero_delta_population_matches_unperturbed_solve() {
        let mut cfg = small(ExperimentKind::Perturbation);
        cfg.population = true;
        cfg.grid.delta = vec![0.0];
        cfg.trials = 1;
        cfg.reg_rule = RegRule::Fixed { lambda: 0.05, gamma: 1.0 };
        let out = run_experiment(&cfg, 1).unwrap();
        let cell = cfg.cells()[0];
        let truth = generate_ground_truth(&cfg.model_for(&cell, 0)).unwrap();
        let (est, _) = solve_lvglasso(&truth.sigma, RegParams::new(0.05, 1.0).unwrap(), &cfg.solver).unwrap();
        let direct = score_estimate(&est, &truth, cfg.tol_zero, cfg.rank_rel_tol).unwrap();
        assert_eq!(out.rows[0].recovery(), direct);
        assert_eq!(out.rows[0].n, 0);
    }

    #[test]
    fn model_shared_across_n_and_delta() {
        let mut cfg = small(ExperimentKind::Perturbation);
        cfg.grid.n = vec![20, 40];
        cfg.grid.delta = vec![0.0, 0.1];
        let cells = cfg.cells();
        assert_eq!(cells.len(), 4);
        let seeds: Vec<u64> = cells.iter().map(|c| cfg.model_for(c, 1).seed).collect();
        assert!(seeds.iter().all(|&s| s == seeds[0]));
        assert_ne!(cfg.model_for(&cells[0], 0).seed, seeds[0]);
    }

    #[test]
    fn holdout_picks_best_held_out_likelihood() {
        let spec = ModelSpec {
            p: 10,
            h: 1,
            graph: GraphKind::Chain,
            seed: 3,
            ..ModelSpec::default()
        };
        let truth = generate_ground_truth(&spec).unwrap();
        let samples = sample_gaussian(&truth.sigma, 400, 11).unwrap();
        let solver = SolverConfig::default();
        let grid = [0.1, 0.5];
        let scores = holdout_scores(&samples.data, &grid, 0.25, 1.0, &solver).unwrap();
        // direct evaluation of the held-out likelihood
        let train = empirical_covariance(&samples.data.select_rows(0..300), true).unwrap();
        let test = empirical_covariance(&samples.data.select_rows(300..400), true).unwrap();
        for (i, &l) in grid.iter().enumerate() {
            let (est, _) = solve_lvglasso(&train, RegParams::new(l, 1.0).unwrap(), &solver).unwrap();
            let direct = logdet_pd(&est.r_hat).unwrap() - test.dot(&est.r_hat);
            assert!((direct - scores[i]).abs() < 1e-12);
        }
        assert!(scores[0] > scores[1]);
        let rule = RegRule::Holdout {
            grid: grid.to_vec(),
            fraction: 0.25,
            gamma: 1.0,
            scaled: false,
        };
        let reg = choose_lambda(&rule, 10, 400, Some(&samples.data), &solver).unwrap();
        assert_eq!(reg.lambda_n, 0.1);
        // the same candidates expressed as multiples of √(p/n) = 1/√40
        let unit = (10.0f64 / 400.0).sqrt();
        let rule = RegRule::Holdout {
            grid: vec![0.1 / unit, 0.5 / unit],
            fraction: 0.25,
            gamma: 1.0,
            scaled: true,
        };
        let reg = choose_lambda(&rule, 10, 400, Some(&samples.data), &solver).unwrap();
        assert!((reg.lambda_n - 0.1).abs() < 1e-15);
        assert!(choose_lambda(&rule, 10, 400, None, &solver).is_err());
    }

    #[test]
    fn theory_scaled_lambda() {
        let reg = choose_lambda(&RegRule::TheoryScaled { c: 2.0, gamma: 0.5 }, 16, 100, None, &SolverConfig::default())
            .unwrap();
        assert!((reg.lambda_n - 0.8).abs() < 1e-15);
        assert_eq!(reg.gamma, 0.5);
    }

    #[test]
    fn config_validation() {
        let mut cfg = small(ExperimentKind::Scaling);
        cfg.grid.n.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = small(ExperimentKind::Perturbation);
        assert!(cfg.validate().is_err());
        cfg.grid.delta = vec![0.0, 0.1];
        cfg.population = true;
        assert!(cfg.validate().is_err());
        cfg.reg_rule = RegRule::Fixed { lambda: 0.1, gamma: 1.0 };
        cfg.grid.n.clear();
        cfg.validate().unwrap();
        let mut cfg = small(ExperimentKind::Phase);
        cfg.trials = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = small(ExperimentKind::Minsignal);
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
        let minimal = r#"{"kind": "phase", "grid": {"n": [100]}, "reg_rule": {"rule": "fixed", "lambda": 0.1, "gamma": 1.0}}"#;
        let parsed = ExperimentConfig::from_json(minimal).unwrap();
        assert_eq!(parsed.trials, 10);
        parsed.validate().unwrap();
    }
}
