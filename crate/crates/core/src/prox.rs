//! Proximal maps of the three terms the splitting solvers are assembled from:
//! the elementwise ℓ1 penalty, the Gaussian negative log-likelihood, and the
//! trace penalty restricted to the PSD cone.

use crate::error::{Error, Result};
use crate::symkernel::{eig_sym, SymMatrix};

/// A proximal output together with a check of its per-eigenvalue
/// stationarity conditions.
#[derive(Debug, Clone)]
pub struct ProxResult {
    pub value: SymMatrix,
    pub objective_decrease_certified: bool,
}

#[inline]
pub fn soft_threshold_scalar(a: f64, tau: f64) -> f64 {
    if a > tau {
        a - tau
    } else if a < -tau {
        a + tau
    } else {
        0.0
    }
}

/// Entrywise `sign(a)·max(|a| − τ, 0)`; the diagonal is left untouched when
/// `penalize_diagonal` is false.
pub fn soft_threshold(a: &SymMatrix, tau: f64, penalize_diagonal: bool) -> SymMatrix {
    debug_assert!(tau >= 0.0);
    a.map(|i, j, v| {
        if i == j && !penalize_diagonal {
            v
        } else {
            soft_threshold_scalar(v, tau)
        }
    })
}

/// Positive root of `r² − b r − 1/ρ = 0`, evaluated without cancellation.
#[inline]
fn neglogdet_root(b: f64, rho: f64) -> f64 {
    let disc = (b * b + 4.0 / rho).sqrt();
    if b >= 0.0 {
        0.5 * (b + disc)
    } else {
        (2.0 / rho) / (disc - b)
    }
}

/// `argmin_R −logdet R + tr(Σ̂ R) + (ρ/2)‖R − A‖²_F`; the trace term is
/// dropped when `sigma_hat` is `None`.
///
/// Eigenvalues of `B = A − Σ̂/ρ` map to `(b + √(b² + 4/ρ))/2`, so the output
/// is positive definite for every input.
pub fn prox_neglogdet(a: &SymMatrix, rho: f64, sigma_hat: Option<&SymMatrix>) -> Result<SymMatrix> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::param("rho", format!("must be positive and finite, got {rho}")));
    }
    let b = shifted_input(a, rho, sigma_hat)?;
    let eig = eig_sym(&b)?;
    Ok(eig.reconstruct_with(|d| neglogdet_root(d, rho)))
}

fn shifted_input(a: &SymMatrix, rho: f64, sigma_hat: Option<&SymMatrix>) -> Result<SymMatrix> {
    match sigma_hat {
        Some(s) => {
            if s.dim() != a.dim() {
                return Err(Error::DimensionMismatch {
                    expected: a.dim(),
                    found: s.dim(),
                });
            }
            Ok(a - &s.scaled(1.0 / rho))
        }
        None => Ok(a.clone()),
    }
}

/// [`prox_neglogdet`] plus a stationarity certificate: for every eigenpair
/// `(b, u)` of the shifted input, the mapped value `r` satisfies
/// `r − b = 1/(ρ r)` to within `1e-10` relative to the largest term, and the
/// output satisfies `‖R u − r u‖ ≤ 1e-10·max(1, ‖R‖)`.
pub fn prox_neglogdet_certified(
    a: &SymMatrix,
    rho: f64,
    sigma_hat: Option<&SymMatrix>,
) -> Result<ProxResult> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::param("rho", format!("must be positive and finite, got {rho}")));
    }
    let b = shifted_input(a, rho, sigma_hat)?;
    let eb = eig_sym(&b)?;
    let roots: Vec<f64> = eb.values.iter().map(|&d| neglogdet_root(d, rho)).collect();
    let value = eb.reconstruct_with(|d| neglogdet_root(d, rho));
    let stationary = eb.values.iter().zip(&roots).all(|(&bi, &ri)| {
        let inv = 1.0 / (rho * ri);
        ri > 0.0 && ((ri - bi) - inv).abs() <= 1e-10 * ri.abs().max(bi.abs()).max(inv).max(1.0)
    });
    Ok(ProxResult {
        objective_decrease_certified: stationary && spectrum_matches(&value, &eb, &roots),
        value,
    })
}

/// `‖V u_k − λ_k u_k‖ ≤ 1e-10·max(1, max|λ|)` for every column `u_k`.
fn spectrum_matches(v: &SymMatrix, eig: &crate::symkernel::EigDecomp, lambdas: &[f64]) -> bool {
    let p = v.dim();
    let scale = lambdas.iter().fold(1.0f64, |m, l| m.max(l.abs()));
    (0..p).all(|k| {
        let u = eig.vectors.column(k);
        let vu = v.matvec(&u);
        let res: f64 = vu.iter().zip(&u).map(|(x, y)| (x - lambdas[k] * y).powi(2)).sum::<f64>().sqrt();
        res <= 1e-10 * scale
    })
}

/// `argmin_{L ⪰ 0} τ·tr(L) + ½‖L − A‖²_F = U max(D − τ, 0) Uᵀ`.
pub fn prox_trace_psd(a: &SymMatrix, tau: f64) -> Result<SymMatrix> {
    debug_assert!(tau >= 0.0);
    let eig = eig_sym(a)?;
    Ok(eig.reconstruct_with(|d| (d - tau).max(0.0)))
}

/// [`prox_trace_psd`] plus a check that the output spectrum equals the
/// clipped, shifted input spectrum.
pub fn prox_trace_psd_certified(a: &SymMatrix, tau: f64) -> Result<ProxResult> {
    let value = prox_trace_psd(a, tau)?;
    let ea = eig_sym(a)?;
    let ev = eig_sym(&value)?;
    let scale = a.max_abs().max(1.0);
    let ok = ea
        .values
        .iter()
        .zip(&ev.values)
        .all(|(&d, &v)| ((d - tau).max(0.0) - v).abs() <= 1e-10 * scale);
    Ok(ProxResult {
        value,
        objective_decrease_certified: ok,
    })
}
