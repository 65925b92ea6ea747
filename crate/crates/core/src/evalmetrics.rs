//! Recovery metrics: signed support of the sparse part, rank of the
//! low-rank part, norm errors, and log-log slope fits for rate checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lvsolver::Estimate;
use crate::modelgen::GroundTruth;
use crate::symkernel::{eig_sym, operator_norm, SymMatrix};

/// Default magnitude below which an estimated off-diagonal entry counts as zero.
pub const DEFAULT_TOL_ZERO: f64 = 1e-6;
/// Default relative eigenvalue threshold for the effective rank.
pub const DEFAULT_RANK_REL_TOL: f64 = 1e-3;

/// Field names and order are part of the output format.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub exact_signed_support: bool,
    pub support_precision: f64,
    pub support_recall: f64,
    pub sign_errors: usize,
    pub rank_recovered: bool,
    pub effective_rank: usize,
    pub op_norm_error: f64,
    #[serde(rename = "frob_error_S")]
    pub frob_error_s: f64,
    #[serde(rename = "frob_error_L")]
    pub frob_error_l: f64,
}

impl RecoveryReport {
    pub fn assemble(support: SupportMetrics, rank: (bool, usize), errors: ErrorMetrics) -> Self {
        Self {
            exact_signed_support: support.exact_signed_support,
            support_precision: support.precision,
            support_recall: support.recall,
            sign_errors: support.sign_errors,
            rank_recovered: rank.0,
            effective_rank: rank.1,
            op_norm_error: errors.op_norm_error,
            frob_error_s: errors.frob_error_s,
            frob_error_l: errors.frob_error_l,
        }
    }

    /// Record for a failed fit: nothing recovered, errors undefined.
    pub fn failed() -> Self {
        Self {
            exact_signed_support: false,
            support_precision: f64::NAN,
            support_recall: f64::NAN,
            sign_errors: 0,
            rank_recovered: false,
            effective_rank: 0,
            op_norm_error: f64::NAN,
            frob_error_s: f64::NAN,
            frob_error_l: f64::NAN,
        }
    }

    /// Support and rank both recovered.
    pub fn success(&self) -> bool {
        self.exact_signed_support && self.rank_recovered
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportMetrics {
    pub exact_signed_support: bool,
    /// Fraction of estimated edges that are true edges (1 if none estimated).
    pub precision: f64,
    /// Fraction of true edges that are estimated as nonzero, regardless of
    /// sign (1 if there are no true edges).
    pub recall: f64,
    /// True edges detected with the wrong sign.
    pub sign_errors: usize,
}

/// Compares off-diagonal sign patterns; the diagonal is ignored and entries
/// with magnitude at most `tol_zero` count as zero on both sides.
pub fn signed_support_metrics(s_hat: &SymMatrix, s_star: &SymMatrix, tol_zero: f64) -> Result<SupportMetrics> {
    if s_hat.dim() != s_star.dim() {
        return Err(Error::DimensionMismatch {
            expected: s_star.dim(),
            found: s_hat.dim(),
        });
    }
    let sign = |v: f64| {
        if v.abs() <= tol_zero {
            0
        } else if v > 0.0 {
            1
        } else {
            -1
        }
    };
    let p = s_star.dim();
    let (mut true_edges, mut predicted, mut detected, mut sign_errors, mut false_pos) = (0, 0, 0, 0, 0);
    for i in 0..p {
        for j in (i + 1)..p {
            let est = sign(s_hat.get(i, j));
            let truth = sign(s_star.get(i, j));
            if truth != 0 {
                true_edges += 1;
            }
            if est != 0 {
                predicted += 1;
                if truth != 0 {
                    detected += 1;
                    if est != truth {
                        sign_errors += 1;
                    }
                } else {
                    false_pos += 1;
                }
            }
        }
    }
    let precision = if predicted == 0 { 1.0 } else { detected as f64 / predicted as f64 };
    let recall = if true_edges == 0 { 1.0 } else { detected as f64 / true_edges as f64 };
    Ok(SupportMetrics {
        exact_signed_support: false_pos == 0 && detected == true_edges && sign_errors == 0,
        precision,
        recall,
        sign_errors,
    })
}

/// Effective rank = number of eigenvalues above `rel_tol · λ_max` (zero when
/// `λ_max ≤ 0`); recovered iff it equals `h`.
pub fn rank_recovered(l_hat: &SymMatrix, h: usize, rel_tol: f64) -> Result<(bool, usize)> {
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(Error::param("rel_tol", format!("must lie in (0, 1), got {rel_tol}")));
    }
    let eig = eig_sym(l_hat)?;
    let top = eig.max_value();
    let rank = if top <= 0.0 {
        0
    } else {
        eig.values.iter().filter(|&&v| v > rel_tol * top).count()
    };
    Ok((rank == h, rank))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorMetrics {
    /// `‖(Ŝ − L̂) − K_marg‖₂`.
    pub op_norm_error: f64,
    pub frob_error_s: f64,
    pub frob_error_l: f64,
}

pub fn estimation_errors(est: &Estimate, truth: &GroundTruth) -> Result<ErrorMetrics> {
    estimation_errors_against(est, &truth.s_star, &truth.l_star)
}

/// Errors against an explicit `(S*, L*)` pair, with `K = S* − L*`.
pub fn estimation_errors_against(est: &Estimate, s_star: &SymMatrix, l_star: &SymMatrix) -> Result<ErrorMetrics> {
    let p = s_star.dim();
    for m in [&est.s_hat, &est.l_hat, l_star] {
        if m.dim() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: m.dim(),
            });
        }
    }
    let k_est = &est.s_hat - &est.l_hat;
    let k_true = s_star - l_star;
    Ok(ErrorMetrics {
        op_norm_error: operator_norm(&(&k_est - &k_true))?,
        frob_error_s: (&est.s_hat - s_star).frobenius_norm(),
        frob_error_l: (&est.l_hat - l_star).frobenius_norm(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn fit_line(points: &[(f64, f64)]) -> Result<LineFit> {
    if points.len() < 2 {
        return Err(Error::InvalidInput("line fit needs at least 2 points".into()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidInput("line fit needs distinct x values".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(LineFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Least-squares line through `(ln x, ln y)`.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<LineFit> {
    if let Some(bad) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(Error::InvalidInput(format!(
            "log-log fit needs positive coordinates, got ({}, {})",
            bad.0, bad.1
        )));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    fit_line(&logs)
}
