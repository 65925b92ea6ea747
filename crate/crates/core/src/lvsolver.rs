//! Operator-splitting solvers for the sparse-plus-low-rank estimators.
//!
//! Both problems are handled by one three-block scheme on the variables
//! `(R, S, L)` with the consensus constraint `R = S − L`:
//!
//! ```text
//! R ← prox of the data-fit term at  S − L − U
//! S ← soft_threshold(R + L + U, λγ/ρ)
//! L ← prox_trace_psd(S − R − U, λ/ρ)
//! U ← U + R − S + L
//! ```
//!
//! For the log-determinant program the data-fit term is
//! `−logdet R + tr(Σ̂ R)`, which keeps every `R` iterate positive definite.
//! The returned estimate takes `R̂` from the `R` block and reconciles
//! `Ŝ := R̂ + L̂`, so `R̂ = Ŝ − L̂` holds exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prox::{prox_neglogdet, prox_trace_psd, soft_threshold, soft_threshold_scalar};
use crate::symkernel::{eig_sym, inverse_pd, is_pd, logdet_pd, SymMatrix, PD_TOL};

/// Regularization level `λₙ` and sparse/low-rank trade-off `γ`. The
/// penalty is `λₙ (γ‖S‖₁ + tr L)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegParams {
    pub lambda_n: f64,
    pub gamma: f64,
}

impl RegParams {
    pub fn new(lambda_n: f64, gamma: f64) -> Result<Self> {
        let reg = Self { lambda_n, gamma };
        reg.validate()?;
        Ok(reg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_n > 0.0 && self.lambda_n.is_finite()) {
            return Err(Error::param("lambda_n", format!("must be positive and finite, got {}", self.lambda_n)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::param("gamma", format!("must be positive and finite, got {}", self.gamma)));
        }
        Ok(())
    }

    pub fn sparse_penalty(&self) -> f64 {
        self.lambda_n * self.gamma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub rho: f64,
    pub max_iter: usize,
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub penalize_diagonal: bool,
    pub adaptive_rho: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            max_iter: 5000,
            tol_primal: 1e-7,
            tol_dual: 1e-7,
            penalize_diagonal: true,
            adaptive_rho: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::param("rho", format!("must be positive, got {}", self.rho)));
        }
        if self.max_iter == 0 {
            return Err(Error::param("max_iter", "must be at least 1"));
        }
        if !(self.tol_primal > 0.0) || !(self.tol_dual > 0.0) {
            return Err(Error::param("tol", "tolerances must be positive"));
        }
        Ok(())
    }
}

/// Solver output `(Ŝ, L̂)` with `R̂ = Ŝ − L̂`.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub s_hat: SymMatrix,
    pub l_hat: SymMatrix,
    pub r_hat: SymMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverStatus {
    Converged,
    MaxIterReached,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverReport {
    pub objective: f64,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub kkt_residual: f64,
    pub status: SolverStatus,
    /// Penalty parameter in effect at exit (differs from the configured
    /// value only with `adaptive_rho`).
    pub final_rho: f64,
    /// `‖R − S + L‖_F` after each iteration.
    #[serde(skip)]
    pub primal_history: Vec<f64>,
}

#[derive(Clone, Copy)]
pub(crate) enum DataFit<'a> {
    /// `−logdet R + tr(Σ̂ R)`.
    Gaussian(&'a SymMatrix),
    /// `½‖Y − R‖²_F`.
    Quadratic(&'a SymMatrix),
}

impl DataFit<'_> {
    fn target(&self) -> &SymMatrix {
        match self {
            DataFit::Gaussian(m) | DataFit::Quadratic(m) => m,
        }
    }

    fn prox(&self, a: &SymMatrix, rho: f64) -> Result<SymMatrix> {
        match self {
            DataFit::Gaussian(sigma) => prox_neglogdet(a, rho, Some(sigma)),
            DataFit::Quadratic(y) => Ok((*y + &a.scaled(rho)).scaled(1.0 / (1.0 + rho))),
        }
    }

    /// Gradient with respect to `R`.
    fn gradient(&self, r: &SymMatrix) -> Result<SymMatrix> {
        match self {
            DataFit::Gaussian(sigma) => Ok(*sigma - &inverse_pd(r)?),
            DataFit::Quadratic(y) => Ok(r - *y),
        }
    }

    fn value(&self, r: &SymMatrix) -> f64 {
        match self {
            DataFit::Gaussian(sigma) => match logdet_pd(r) {
                Ok(ld) => -ld + sigma.dot(r),
                Err(_) => f64::INFINITY,
            },
            DataFit::Quadratic(y) => 0.5 * (*y - r).frobenius_norm().powi(2),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Penalty {
    pub sparse: f64,
    /// `None` disables the low-rank block (plain graphical lasso).
    pub trace: Option<f64>,
    pub penalize_diagonal: bool,
}

impl Penalty {
    fn value(&self, s: &SymMatrix, l: &SymMatrix) -> f64 {
        self.sparse * s.l1_norm(self.penalize_diagonal) + self.trace.map_or(0.0, |t| t * l.trace())
    }
}

fn validate_input(m: &SymMatrix, what: &str) -> Result<()> {
    if !m.is_finite() {
        return Err(Error::InvalidInput(format!("{what} contains non-finite values")));
    }
    Ok(())
}

/// Solves
/// `min −logdet(S − L) + tr(Σ̂(S − L)) + λₙ(γ‖S‖₁ + tr L)` over `S − L ≻ 0, L ⪰ 0`.
///
/// Running out of iterations is reported through [`SolverStatus`], not as an
/// error.
pub fn solve_lvglasso(
    sigma_hat: &SymMatrix,
    reg: RegParams,
    cfg: &SolverConfig,
) -> Result<(Estimate, SolverReport)> {
    reg.validate()?;
    cfg.validate()?;
    validate_input(sigma_hat, "sample covariance")?;
    let pen = Penalty {
        sparse: reg.sparse_penalty(),
        trace: Some(reg.lambda_n),
        penalize_diagonal: cfg.penalize_diagonal,
    };
    let s0 = diagonal_start(sigma_hat, reg.lambda_n);
    split_solve(DataFit::Gaussian(sigma_hat), pen, s0, cfg)
}

/// Solves the identity-operator noisy decomposition
/// `min ½‖Y − (S − L)‖²_F + λ_s‖S‖₁ + λ_l tr L` over `L ⪰ 0`.
///
/// Here `R̂ = Ŝ − L̂` need not be positive definite.
pub fn solve_noisy_decomposition(
    y: &SymMatrix,
    lambda_s: f64,
    lambda_l: f64,
    cfg: &SolverConfig,
) -> Result<(Estimate, SolverReport)> {
    cfg.validate()?;
    validate_input(y, "observation")?;
    if !(lambda_s > 0.0 && lambda_s.is_finite()) {
        return Err(Error::param("lambda_s", format!("must be positive, got {lambda_s}")));
    }
    if !(lambda_l > 0.0 && lambda_l.is_finite()) {
        return Err(Error::param("lambda_l", format!("must be positive, got {lambda_l}")));
    }
    let pen = Penalty {
        sparse: lambda_s,
        trace: Some(lambda_l),
        penalize_diagonal: cfg.penalize_diagonal,
    };
    split_solve(DataFit::Quadratic(y), pen, SymMatrix::zeros(y.dim()), cfg)
}

/// Graphical lasso through the same splitting with the low-rank block disabled.
pub(crate) fn solve_glasso_split(
    sigma_hat: &SymMatrix,
    lambda: f64,
    cfg: &SolverConfig,
) -> Result<(Estimate, SolverReport)> {
    cfg.validate()?;
    validate_input(sigma_hat, "sample covariance")?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::param("lambda", format!("must be positive, got {lambda}")));
    }
    let pen = Penalty {
        sparse: lambda,
        trace: None,
        penalize_diagonal: cfg.penalize_diagonal,
    };
    let s0 = diagonal_start(sigma_hat, lambda);
    split_solve(DataFit::Gaussian(sigma_hat), pen, s0, cfg)
}

fn diagonal_start(sigma_hat: &SymMatrix, lambda: f64) -> SymMatrix {
    SymMatrix::from_diag(
        &sigma_hat
            .diagonal()
            .iter()
            .map(|&d| 1.0 / (d.max(0.0) + lambda))
            .collect::<Vec<_>>(),
    )
}

/// Objective of the log-determinant program; `+∞` outside the domain.
pub fn lvglasso_objective(
    sigma_hat: &SymMatrix,
    s: &SymMatrix,
    l: &SymMatrix,
    reg: RegParams,
    penalize_diagonal: bool,
) -> f64 {
    let pen = Penalty {
        sparse: reg.sparse_penalty(),
        trace: Some(reg.lambda_n),
        penalize_diagonal,
    };
    DataFit::Gaussian(sigma_hat).value(&(s - l)) + pen.value(s, l)
}

/// Objective of the noisy decomposition program (no domain restriction
/// beyond `L ⪰ 0`, which the caller must ensure).
pub fn noisy_decomposition_objective(
    y: &SymMatrix,
    s: &SymMatrix,
    l: &SymMatrix,
    lambda_s: f64,
    lambda_l: f64,
    penalize_diagonal: bool,
) -> f64 {
    let pen = Penalty {
        sparse: lambda_s,
        trace: Some(lambda_l),
        penalize_diagonal,
    };
    DataFit::Quadratic(y).value(&(s - l)) + pen.value(s, l)
}

/// Largest violation of the first-order optimality conditions of the
/// log-determinant program at `est`.
///
/// With `G = Σ̂ − R̂⁻¹` (the gradient of the data-fit term) the optimum
/// satisfies `G_ij ∈ −λγ·∂|Ŝ_ij|`, `M = λI − G ⪰ 0` with `M L̂ = 0`, and
/// feasibility. Each condition is measured through its proximal fixed-point
/// residual:
///
/// * sparse block: `maxᵢⱼ |Ŝᵢⱼ − soft(Ŝᵢⱼ − Gᵢⱼ, λγ)|` (threshold 0 on an
///   unpenalized diagonal),
/// * low-rank block: `‖L̂ − Π_{⪰0}(L̂ − M)‖₂`,
/// * feasibility: `max|R̂ − (Ŝ − L̂)|` and the negative part of `λ_min(L̂)`.
///
/// All three vanish exactly at an optimum. Fails if `R̂` is not positive
/// definite.
pub fn kkt_residual(
    sigma_hat: &SymMatrix,
    est: &Estimate,
    reg: RegParams,
    penalize_diagonal: bool,
) -> Result<f64> {
    let pen = Penalty {
        sparse: reg.sparse_penalty(),
        trace: Some(reg.lambda_n),
        penalize_diagonal,
    };
    kkt_generic(DataFit::Gaussian(sigma_hat), est, pen)
}

/// [`kkt_residual`] for the noisy decomposition program, where the
/// data-fit gradient is `R̂ − Y`.
pub fn noisy_kkt_residual(
    y: &SymMatrix,
    est: &Estimate,
    lambda_s: f64,
    lambda_l: f64,
    penalize_diagonal: bool,
) -> Result<f64> {
    let pen = Penalty {
        sparse: lambda_s,
        trace: Some(lambda_l),
        penalize_diagonal,
    };
    kkt_generic(DataFit::Quadratic(y), est, pen)
}

pub(crate) fn kkt_generic(fit: DataFit<'_>, est: &Estimate, pen: Penalty) -> Result<f64> {
    let p = fit.target().dim();
    for m in [&est.s_hat, &est.l_hat, &est.r_hat] {
        if m.dim() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: m.dim(),
            });
        }
    }
    let g = fit.gradient(&est.r_hat)?;
    let s = &est.s_hat;
    let mut sparse_res: f64 = 0.0;
    for i in 0..p {
        for j in i..p {
            let tau = if i == j && !pen.penalize_diagonal { 0.0 } else { pen.sparse };
            let sij = s.get(i, j);
            let fixed = soft_threshold_scalar(sij - g.get(i, j), tau);
            sparse_res = sparse_res.max((sij - fixed).abs());
        }
    }
    let l = &est.l_hat;
    let (lowrank_res, l_neg) = match pen.trace {
        Some(lam) => {
            let m = g.scaled(-1.0).add_diag(lam);
            let proj = prox_trace_psd(&(l - &m), 0.0)?;
            let diff = eig_sym(&(l - &proj))?;
            let op = diff.max_value().abs().max(diff.min_value().abs());
            (op, (-eig_sym(l)?.min_value()).max(0.0))
        }
        None => (l.max_abs(), 0.0),
    };
    let consistency = (&est.r_hat - &(s - l)).max_abs();
    Ok(sparse_res.max(lowrank_res).max(l_neg).max(consistency))
}

pub(crate) fn split_solve(
    fit: DataFit<'_>,
    pen: Penalty,
    s0: SymMatrix,
    cfg: &SolverConfig,
) -> Result<(Estimate, SolverReport)> {
    let p = fit.target().dim();
    let sqrt_p = (p as f64).sqrt();
    let mut rho = cfg.rho;
    let mut s = s0;
    let mut l = SymMatrix::zeros(p);
    let mut u = SymMatrix::zeros(p);
    let mut r = SymMatrix::zeros(p);
    let mut history = Vec::new();
    let mut primal = f64::INFINITY;
    let mut dual = f64::INFINITY;
    let mut kkt = f64::INFINITY;
    let mut status = SolverStatus::MaxIterReached;
    let mut iterations = 0;
    let kkt_target = cfg.tol_primal.max(cfg.tol_dual);

    for it in 1..=cfg.max_iter {
        iterations = it;
        r = fit.prox(&(&(&s - &l) - &u), rho)?;

        let s_new = soft_threshold(&(&(&r + &l) + &u), pen.sparse / rho, pen.penalize_diagonal);
        let l_new = match pen.trace {
            Some(t) => prox_trace_psd(&(&(&s_new - &r) - &u), t / rho)?,
            None => SymMatrix::zeros(p),
        };
        let gap = &(&r - &s_new) + &l_new;
        u = &u + &gap;

        primal = gap.frobenius_norm();
        let ds = (&s_new - &s).frobenius_norm();
        let dl = (&l_new - &l).frobenius_norm();
        dual = rho * ds.hypot(dl);
        s = s_new;
        l = l_new;
        history.push(primal);

        if !primal.is_finite() || !dual.is_finite() {
            return Err(Error::InvalidInput(format!(
                "splitting iterates diverged at iteration {it}"
            )));
        }

        if primal <= cfg.tol_primal * sqrt_p && dual <= cfg.tol_dual * sqrt_p {
            let est = extract(&fit, &r, &s, &l);
            kkt = kkt_generic(fit, &est, pen)?;
            if kkt <= kkt_target {
                status = SolverStatus::Converged;
                break;
            }
        }

        if cfg.adaptive_rho && it % 10 == 0 {
            let scale = if primal > 10.0 * dual {
                2.0
            } else if dual > 10.0 * primal {
                0.5
            } else {
                1.0
            };
            if scale != 1.0 {
                rho *= scale;
                u = u.scaled(1.0 / scale);
            }
        }
    }

    let est = extract(&fit, &r, &s, &l);
    if status != SolverStatus::Converged {
        kkt = kkt_generic(fit, &est, pen).unwrap_or(f64::INFINITY);
    }
    let objective = fit.value(&est.r_hat) + pen.value(&est.s_hat, &est.l_hat);
    Ok((
        est,
        SolverReport {
            objective,
            iterations,
            primal_residual: primal,
            dual_residual: dual,
            kkt_residual: kkt,
            status,
            final_rho: rho,
            primal_history: history,
        },
    ))
}

fn extract(fit: &DataFit<'_>, r: &SymMatrix, s: &SymMatrix, l: &SymMatrix) -> Estimate {
    match fit {
        DataFit::Gaussian(_) => {
            // the sparse iterate carries exact zeros; keep it when S − L is
            // positive definite, otherwise rebuild Ŝ around the PD iterate R
            let diff = s - l;
            if is_pd(&diff, PD_TOL).unwrap_or(false) {
                Estimate {
                    s_hat: s.clone(),
                    l_hat: l.clone(),
                    r_hat: diff,
                }
            } else {
                Estimate {
                    s_hat: r + l,
                    l_hat: l.clone(),
                    r_hat: r.clone(),
                }
            }
        }
        DataFit::Quadratic(_) => Estimate {
            s_hat: s.clone(),
            l_hat: l.clone(),
            r_hat: s - l,
        },
    }
}
