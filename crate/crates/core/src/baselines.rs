//! Comparison estimators without latent variables: node-wise Lasso
//! neighborhood selection and the ℓ1-penalized Gaussian MLE.
//!
//! Lasso convention used throughout: `(1/(2n))‖y − Xβ‖² + λ‖β‖₁`, so the
//! all-zero solution is optimal exactly when `λ ≥ ‖Xᵀy/n‖∞`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::graph::EdgeSet;
use crate::lvsolver::{solve_glasso_split, SolverConfig, SolverReport};
use crate::modelgen::SampleSet;
use crate::prox::soft_threshold_scalar;
use crate::symkernel::SymMatrix;

#[derive(Debug, Clone)]
pub struct LassoProblem {
    pub design: DenseMatrix,
    pub response: Vec<f64>,
    pub lambda: f64,
}

impl LassoProblem {
    pub fn validate(&self) -> Result<()> {
        if self.design.rows() != self.response.len() {
            return Err(Error::DimensionMismatch {
                expected: self.design.rows(),
                found: self.response.len(),
            });
        }
        if self.design.rows() == 0 {
            return Err(Error::InvalidInput("lasso problem has no observations".into()));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::param("lambda", format!("must be non-negative, got {}", self.lambda)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub coef: Vec<f64>,
    /// Coordinate sweeps performed.
    pub iterations: usize,
    /// Whether the KKT conditions hold within `tol` at exit.
    pub converged: bool,
}

/// Cyclic coordinate descent with an active-set inner loop. Exhausting
/// `max_iter` sweeps is reported in [`LassoFit::converged`].
pub fn lasso_cd(prob: &LassoProblem, tol: f64, max_iter: usize) -> Result<LassoFit> {
    prob.validate()?;
    let n = prob.design.rows() as f64;
    let gram = prob.design.scaled_gram(n);
    let xt = prob.design.transpose();
    let xty: Vec<f64> = xt.matvec(&prob.response).iter().map(|v| v / n).collect();
    Ok(lasso_cd_gram(&gram, &xty, prob.lambda, tol, max_iter))
}

/// Lasso in covariance form: `gram = XᵀX/n`, `xty = Xᵀy/n`.
pub fn lasso_cd_gram(gram: &SymMatrix, xty: &[f64], lambda: f64, tol: f64, max_iter: usize) -> LassoFit {
    let q = xty.len();
    let mut beta = vec![0.0; q];
    // grad = Xᵀ(y − Xβ)/n
    let mut grad = xty.to_vec();
    let mut sweeps = 0;

    let update = |k: usize, beta: &mut [f64], grad: &mut [f64]| -> f64 {
        let gkk = gram.get(k, k);
        if gkk <= 0.0 {
            return 0.0;
        }
        let old = beta[k];
        let new = soft_threshold_scalar(grad[k] + gkk * old, lambda) / gkk;
        let delta = new - old;
        if delta != 0.0 {
            beta[k] = new;
            for (l, g) in grad.iter_mut().enumerate() {
                *g -= gram.get(l, k) * delta;
            }
        }
        delta.abs() * gkk.sqrt()
    };

    let kkt_ok = |beta: &[f64], grad: &[f64]| {
        (0..q).all(|k| {
            if gram.get(k, k) <= 0.0 {
                true
            } else if beta[k] == 0.0 {
                grad[k].abs() <= lambda + tol
            } else {
                (grad[k] - lambda * beta[k].signum()).abs() <= tol
            }
        })
    };

    while sweeps < max_iter {
        sweeps += 1;
        let mut max_change: f64 = 0.0;
        for k in 0..q {
            max_change = max_change.max(update(k, &mut beta, &mut grad));
        }
        if max_change <= tol * 0.1 && kkt_ok(&beta, &grad) {
            return LassoFit {
                coef: beta,
                iterations: sweeps,
                converged: true,
            };
        }
        // Cycle on the active set until it settles, then re-check everything.
        let active: Vec<usize> = (0..q).filter(|&k| beta[k] != 0.0).collect();
        while sweeps < max_iter && !active.is_empty() {
            sweeps += 1;
            let mut change: f64 = 0.0;
            for &k in &active {
                change = change.max(update(k, &mut beta, &mut grad));
            }
            if change <= tol * 0.1 {
                break;
            }
        }
    }
    let converged = kkt_ok(&beta, &grad);
    LassoFit {
        coef: beta,
        iterations: sweeps,
        converged,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CombineRule {
    /// Keep `(j, k)` only if both directional regressions select it.
    #[default]
    And,
    Or,
}

pub const NEIGHBORHOOD_TOL: f64 = 1e-8;
pub const NEIGHBORHOOD_MAX_SWEEPS: usize = 10_000;

/// Node-wise regression coefficients and the combined graph.
#[derive(Debug, Clone)]
pub struct NeighborhoodFit {
    pub edges: EdgeSet,
    /// Row `j` holds the coefficients of node `j` regressed on all others
    /// (zero on the diagonal).
    pub coefficients: DenseMatrix,
    pub all_converged: bool,
}

impl NeighborhoodFit {
    /// Signed precision pattern implied by the regressions: regression
    /// coefficients satisfy `β_jk = −K_jk / K_jj`, so selected edges get
    /// `−(β_jk + β_kj)/2`; the diagonal is 1.
    pub fn signed_pattern(&self) -> SymMatrix {
        let p = self.edges.p();
        let mut m = SymMatrix::identity(p);
        for (j, k) in self.edges.iter() {
            let v = -0.5 * (self.coefficients[(j, k)] + self.coefficients[(k, j)]);
            m.set(j, k, v);
        }
        m
    }
}

/// Neighborhood selection from a sample set.
pub fn neighborhood_select(samples: &SampleSet, lambda: f64, rule: CombineRule) -> Result<EdgeSet> {
    Ok(neighborhood_fit(samples, lambda, rule)?.edges)
}

pub fn neighborhood_fit(samples: &SampleSet, lambda: f64, rule: CombineRule) -> Result<NeighborhoodFit> {
    if samples.n < 2 {
        return Err(Error::param("n", "neighborhood selection needs at least 2 samples"));
    }
    neighborhood_fit_cov(&samples.sigma_hat, lambda, rule)
}

/// Neighborhood selection on an uncentered second-moment matrix `XᵀX/n`.
pub fn neighborhood_fit_cov(sigma_hat: &SymMatrix, lambda: f64, rule: CombineRule) -> Result<NeighborhoodFit> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::param("lambda", format!("must be non-negative, got {lambda}")));
    }
    let p = sigma_hat.dim();
    let rows: Vec<(Vec<f64>, bool)> = (0..p)
        .into_par_iter()
        .map(|j| {
            let others: Vec<usize> = (0..p).filter(|&k| k != j).collect();
            let gram = sigma_hat.submatrix(&others);
            let xty: Vec<f64> = others.iter().map(|&k| sigma_hat.get(k, j)).collect();
            let fit = lasso_cd_gram(&gram, &xty, lambda, NEIGHBORHOOD_TOL, NEIGHBORHOOD_MAX_SWEEPS);
            let mut row = vec![0.0; p];
            for (&k, b) in others.iter().zip(&fit.coef) {
                row[k] = *b;
            }
            (row, fit.converged)
        })
        .collect();

    let all_converged = rows.iter().all(|(_, c)| *c);
    let mut coefficients = DenseMatrix::zeros(p, p);
    for (j, (row, _)) in rows.into_iter().enumerate() {
        coefficients.row_mut(j).copy_from_slice(&row);
    }
    let mut edges = EdgeSet::new(p);
    for j in 0..p {
        for k in (j + 1)..p {
            let a = coefficients[(j, k)] != 0.0;
            let b = coefficients[(k, j)] != 0.0;
            let keep = match rule {
                CombineRule::And => a && b,
                CombineRule::Or => a || b,
            };
            if keep {
                edges.insert(j, k)?;
            }
        }
    }
    Ok(NeighborhoodFit {
        edges,
        coefficients,
        all_converged,
    })
}

/// `D^{-1/2} Σ D^{-1/2}`. Standardizing leaves every signed pattern unchanged
/// and makes neighborhood-selection penalties scale free.
pub fn correlation_matrix(sigma: &SymMatrix) -> Result<SymMatrix> {
    let d = sigma.diagonal();
    if let Some(bad) = d.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::InvalidInput(format!("covariance has non-positive variance {bad}")));
    }
    let s: Vec<f64> = d.iter().map(|v| 1.0 / v.sqrt()).collect();
    Ok(sigma.map(|i, j, v| if i == j { 1.0 } else { v * s[i] * s[j] }))
}

/// `min −logdet K + tr(Σ̂K) + λ‖K‖₁` (diagonal penalized per flag), solved by
/// the shared splitting solver with the low-rank block switched off.
pub fn glasso(
    sigma_hat: &SymMatrix,
    lambda: f64,
    penalize_diagonal: bool,
    cfg: &SolverConfig,
) -> Result<(SymMatrix, SolverReport)> {
    let cfg = SolverConfig {
        penalize_diagonal,
        ..*cfg
    };
    let (est, report) = solve_glasso_split(sigma_hat, lambda, &cfg)?;
    Ok((est.r_hat, report))
}
