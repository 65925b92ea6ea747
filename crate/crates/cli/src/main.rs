use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lvgm::experiment::{
    markdown_report, read_results, results_to_csv, results_to_json, run_experiment, score_estimate,
    ExperimentConfig, ExperimentKind, Grid, OutputFormat, RegRule,
};
use lvgm::matio::{read_matrix, write_matrix};
use lvgm::modelgen::{generate_ground_truth, read_ground_truth, sample_gaussian, write_ground_truth};
use lvgm::{solve_lvglasso, ModelSpec, RegParams, SolverConfig};

#[derive(Parser)]
#[command(name = "lvgm", version, about = "Latent-variable Gaussian graphical model experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a ground-truth model and write it to a directory.
    Generate(GenerateArgs),
    /// Fit the sparse plus low-rank estimator to a covariance matrix file.
    Solve(SolveArgs),
    /// Operator-norm error versus sample size.
    Scaling(SweepArgs),
    /// Success probability over sample size and dimension.
    Phase(SweepArgs),
    /// Success probability over sample size and minimum edge magnitude.
    Minsignal(SweepArgs),
    /// Estimation error under a sparse low-rank perturbation of the model.
    Perturb(SweepArgs),
    /// Latent-variable estimator against the graphical lasso and neighborhood selection.
    Compare(SweepArgs),
    /// Render a markdown summary of a results CSV.
    Report(ReportArgs),
}

#[derive(Args)]
struct SweepArgs {
    /// JSON experiment config; built-in defaults are used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    jobs: Option<usize>,
    /// Results file; stdout when absent and the config names none.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = ["csv", "json"])]
    format: Option<String>,
    /// Overrides `base_seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GenerateArgs {
    /// JSON model spec; defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    h: Option<usize>,
    /// Also draw this many samples and write their covariance to `Sigma_hat.txt`.
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Args)]
struct SolveArgs {
    /// Covariance matrix file.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// JSON solver config; defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for `S_hat.txt`, `L_hat.txt`, `R_hat.txt` and `report.json`.
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth directory; adds recovery metrics to the report.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Results CSV.
    #[arg(long)]
    input: PathBuf,
    /// Markdown file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Generate(a) => generate(a),
        Command::Solve(a) => solve(a),
        Command::Scaling(a) => sweep(ExperimentKind::Scaling, a),
        Command::Phase(a) => sweep(ExperimentKind::Phase, a),
        Command::Minsignal(a) => sweep(ExperimentKind::Minsignal, a),
        Command::Perturb(a) => sweep(ExperimentKind::Perturbation, a),
        Command::Compare(a) => sweep(ExperimentKind::BaselineCompare, a),
        Command::Report(a) => report(a),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
        }
        None => Ok(std::io::stdout().write_all(bytes)?),
    }
}

fn generate(a: GenerateArgs) -> Result<()> {
    let mut spec: ModelSpec = match &a.config {
        Some(path) => read_json(path)?,
        None => ModelSpec::default(),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    if let Some(p) = a.p {
        spec.p = p;
    }
    if let Some(h) = a.h {
        spec.h = h;
    }
    let truth = generate_ground_truth(&spec)?;
    write_ground_truth(&truth, &a.out)?;
    if let Some(n) = a.samples {
        let samples = sample_gaussian(&truth.sigma, n, spec.seed)?;
        write_matrix(a.out.join("Sigma_hat.txt"), &samples.sigma_hat)?;
    }
    eprintln!("wrote p = {}, h = {} model to {}", truth.p(), truth.h, a.out.display());
    Ok(())
}

fn solve(a: SolveArgs) -> Result<()> {
    let cfg: SolverConfig = match &a.config {
        Some(path) => read_json(path)?,
        None => SolverConfig::default(),
    };
    let sigma = read_matrix(&a.input)?;
    let reg = RegParams::new(a.lambda, a.gamma)?;
    let (est, rep) = solve_lvglasso(&sigma, reg, &cfg)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_matrix(a.out.join("S_hat.txt"), &est.s_hat)?;
    write_matrix(a.out.join("L_hat.txt"), &est.l_hat)?;
    write_matrix(a.out.join("R_hat.txt"), &est.r_hat)?;
    let mut doc = serde_json::json!({
        "lambda": a.lambda,
        "gamma": a.gamma,
        "solver": cfg,
        "report": rep,
    });
    if let Some(dir) = &a.truth {
        let truth = read_ground_truth(dir)?;
        if truth.p() != sigma.dim() {
            bail!("ground truth has p = {} but the input is {}x{}", truth.p(), sigma.dim(), sigma.dim());
        }
        let defaults = ExperimentConfig::default();
        doc["recovery"] = serde_json::to_value(score_estimate(&est, &truth, defaults.tol_zero, defaults.rank_rel_tol)?)?;
    }
    let text = serde_json::to_string_pretty(&doc)? + "\n";
    std::fs::write(a.out.join("report.json"), &text)?;
    eprintln!(
        "{:?} after {} iterations, kkt residual {:.3e}",
        rep.status, rep.iterations, rep.kkt_residual
    );
    Ok(())
}

/// Desk-scale configuration used when no config file is given.
fn default_config(kind: ExperimentKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        kind,
        solver: SolverConfig {
            penalize_diagonal: false,
            ..SolverConfig::default()
        },
        ..ExperimentConfig::default()
    };
    match kind {
        ExperimentKind::Scaling => {
            cfg.id = "scaling".into();
            cfg.model.p = 40;
            cfg.model.h = 2;
            cfg.grid.n = vec![200, 800, 3200];
            cfg.reg_rule = RegRule::Holdout {
                grid: vec![0.25, 0.5, 1.0, 2.0, 4.0],
                fraction: 0.25,
                gamma: 0.2,
                scaled: true,
            };
        }
        ExperimentKind::Phase => {
            cfg.id = "phase".into();
            cfg.grid = Grid {
                n: vec![15, 600, 2400, 9600],
                ..Grid::default()
            };
            cfg.reg_rule = RegRule::TheoryScaled { c: 5.0, gamma: 0.2 };
        }
        ExperimentKind::Minsignal => {
            cfg.id = "minsignal".into();
            cfg.model.edge_magnitude = [0.3, 0.5];
            cfg.grid = Grid {
                n: vec![2400, 9600],
                s_min: vec![0.2, 0.3, 0.4, 0.5],
                ..Grid::default()
            };
            cfg.reg_rule = RegRule::TheoryScaled { c: 5.0, gamma: 0.2 };
        }
        ExperimentKind::Perturbation => {
            cfg.id = "perturbation".into();
            cfg.population = true;
            cfg.grid.delta = vec![0.0, 0.02, 0.05, 0.1, 0.2];
            cfg.reg_rule = RegRule::Fixed {
                lambda: 1e-3,
                gamma: 0.2,
            };
        }
        ExperimentKind::BaselineCompare => {
            cfg.id = "compare".into();
            cfg.grid = Grid {
                n: vec![60, 600],
                h: vec![0, 1],
                ..Grid::default()
            };
            cfg.reg_rule = RegRule::TheoryScaled { c: 5.0, gamma: 0.2 };
        }
    }
    cfg
}

fn sweep(kind: ExperimentKind, a: SweepArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => default_config(kind),
    };
    let compatible = cfg.kind == kind
        || matches!((cfg.kind, kind), (ExperimentKind::Phase, ExperimentKind::Minsignal) | (ExperimentKind::Minsignal, ExperimentKind::Phase));
    if !compatible {
        bail!("config describes a {:?} experiment, not {:?}", cfg.kind, kind);
    }
    cfg.kind = kind;
    if let Some(seed) = a.seed {
        cfg.base_seed = seed;
    }
    if let Some(format) = &a.format {
        cfg.format = format.parse()?;
    }
    if let Some(out) = a.out {
        cfg.output_path = Some(out);
    }
    let jobs = a
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let out = run_experiment(&cfg, jobs)?;
    let bytes = match cfg.format {
        OutputFormat::Csv => results_to_csv(&out.rows)?,
        OutputFormat::Json => results_to_json(&out.rows)?,
    };
    write_output(cfg.output_path.as_deref(), &bytes)?;
    eprintln!("{}", serde_json::to_string(&out.summary)?);
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let rows = read_results(&a.input)?;
    write_output(a.out.as_deref(), markdown_report(&rows).as_bytes())
}
