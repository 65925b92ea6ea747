//! Dense symmetric matrices and the linear algebra the estimators are built on:
//! eigendecomposition, norms, Cholesky, and Schur-complement marginalization.

use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};

/// Default tolerance for strict positive-definiteness checks.
pub const PD_TOL: f64 = 1e-10;

/// Dense symmetric `p × p` matrix in full row-major storage.
///
/// Every constructor symmetrizes its input, so `get(i, j) == get(j, i)` holds
/// bit-for-bit and downstream code may rely on it.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diag(&vec![1.0; dim])
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = d;
        }
        m
    }

    /// Builds `(f(i,j) + f(j,i)) / 2` for every pair.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = f(i, i);
            for j in (i + 1)..dim {
                let v = 0.5 * (f(i, j) + f(j, i));
                data[i * dim + j] = v;
                data[j * dim + i] = v;
            }
        }
        Self { dim, data }
    }

    /// Validating constructor: requires `dim ≥ 1`, `p²` finite values, and
    /// symmetrizes with `(A + Aᵀ)/2`.
    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("matrix dimension must be at least 1".into()));
        }
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite entry at ({}, {})",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self::from_fn(dim, |i, j| data[i * dim + j]))
    }

    /// Caller guarantees exact symmetry.
    pub(crate) fn from_symmetric_unchecked(dim: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), dim * dim);
        Self { dim, data }
    }

    /// `v vᵀ`.
    pub fn outer(v: &[f64]) -> Self {
        let n = v.len();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let x = v[i] * v[j];
                data[i * n + j] = x;
                data[j * n + i] = x;
            }
        }
        Self { dim: n, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
        self.data[j * self.dim + i] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    /// Elementwise map; `f` is applied to the upper triangle and mirrored.
    pub fn map(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Self {
        let n = self.dim;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = f(i, j, self.get(i, j));
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        Self { dim: n, data }
    }

    fn zip_with(&self, other: &SymMatrix, f: impl Fn(f64, f64) -> f64) -> SymMatrix {
        assert_eq!(self.dim, other.dim, "symmetric matrix dimension mismatch");
        SymMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> SymMatrix {
        SymMatrix {
            dim: self.dim,
            data: self.data.iter().map(|v| c * v).collect(),
        }
    }

    pub fn add_diag(&self, c: f64) -> SymMatrix {
        let mut out = self.clone();
        for i in 0..self.dim {
            out.data[i * self.dim + i] += c;
        }
        out
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// Frobenius inner product `tr(A B)`.
    pub fn dot(&self, other: &SymMatrix) -> f64 {
        assert_eq!(self.dim, other.dim, "symmetric matrix dimension mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Sum of absolute entries, optionally skipping the diagonal.
    pub fn l1_norm(&self, include_diagonal: bool) -> f64 {
        let n = self.dim;
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j || include_diagonal {
                    s += self.get(i, j).abs();
                }
            }
        }
        s
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.dim);
        (0..self.dim)
            .map(|i| {
                self.data[i * self.dim..(i + 1) * self.dim]
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    pub fn to_dense(&self) -> DenseMatrix {
        DenseMatrix::from_row_major(self.dim, self.dim, self.data.clone())
            .expect("square storage")
    }

    /// Principal submatrix on `indices` (in the given order).
    pub fn submatrix(&self, indices: &[usize]) -> SymMatrix {
        let k = indices.len();
        let mut data = vec![0.0; k * k];
        for (a, &i) in indices.iter().enumerate() {
            for (b, &j) in indices.iter().enumerate() {
                data[a * k + b] = self.get(i, j);
            }
        }
        SymMatrix { dim: k, data }
    }

    /// Rectangular block `rows × cols`.
    pub fn block(&self, rows: &[usize], cols: &[usize]) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(rows.len(), cols.len());
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in cols.iter().enumerate() {
                out[(a, b)] = self.get(i, j);
            }
        }
        out
    }

    /// Symmetric part of a square dense matrix.
    pub fn symmetrize(m: &DenseMatrix) -> Result<SymMatrix> {
        if m.rows() != m.cols() {
            return Err(Error::DimensionMismatch {
                expected: m.rows(),
                found: m.cols(),
            });
        }
        Ok(SymMatrix::from_fn(m.rows(), |i, j| m[(i, j)]))
    }
}

impl std::ops::Add for &SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        self.zip_with(rhs, |a, b| a + b)
    }
}

impl std::ops::Sub for &SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        self.zip_with(rhs, |a, b| a - b)
    }
}

impl std::ops::Mul<f64> for &SymMatrix {
    type Output = SymMatrix;
    fn mul(self, rhs: f64) -> SymMatrix {
        self.scaled(rhs)
    }
}

/// Eigendecomposition `A = U diag(d) Uᵀ` with `d` sorted descending.
#[derive(Debug, Clone)]
pub struct EigDecomp {
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors stored as columns.
    pub vectors: DenseMatrix,
}

impl EigDecomp {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn min_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(f64::NAN)
    }

    pub fn max_value(&self) -> f64 {
        self.values.first().copied().unwrap_or(f64::NAN)
    }

    /// `U diag(f(d)) Uᵀ`, exactly symmetric.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let n = self.dim();
        let mapped: Vec<f64> = self.values.iter().map(|&d| f(d)).collect();
        let active: Vec<usize> = (0..n).filter(|&k| mapped[k] != 0.0).collect();
        let u = &self.vectors;
        // Gather active columns of U (scaled and unscaled) row-wise for contiguous dots.
        let m = active.len();
        let mut w = vec![0.0; n * m];
        let mut v = vec![0.0; n * m];
        for i in 0..n {
            for (a, &k) in active.iter().enumerate() {
                v[i * m + a] = u[(i, k)];
                w[i * m + a] = u[(i, k)] * mapped[k];
            }
        }
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            let wi = &w[i * m..(i + 1) * m];
            for j in i..n {
                let vj = &v[j * m..(j + 1) * m];
                let s: f64 = wi.iter().zip(vj).map(|(a, b)| a * b).sum();
                data[i * n + j] = s;
                data[j * n + i] = s;
            }
        }
        SymMatrix::from_symmetric_unchecked(n, data)
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.reconstruct_with(|d| d)
    }
}

/// Symmetric eigendecomposition by Householder tridiagonalization followed by
/// implicit-shift QL iteration.
///
/// The QL phase is capped at `30·p` total iterations; exceeding the cap is an
/// error rather than a partially converged result.
pub fn eig_sym(a: &SymMatrix) -> Result<EigDecomp> {
    let n = a.dim();
    if !a.is_finite() {
        return Err(Error::InvalidInput("eigendecomposition of non-finite matrix".into()));
    }
    if n == 0 {
        return Ok(EigDecomp {
            values: vec![],
            vectors: DenseMatrix::zeros(0, 0),
        });
    }
    let mut v = a.as_slice().to_vec();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalize(n, &mut v, &mut d, &mut e);
    tridiagonal_ql(n, &mut v, &mut d, &mut e)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| d[y].total_cmp(&d[x]));
    let values = order.iter().map(|&k| d[k]).collect();
    let mut vectors = DenseMatrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        for row in 0..n {
            vectors[(row, col)] = v[row * n + k];
        }
    }
    Ok(EigDecomp { values, vectors })
}

/// Householder reduction to tridiagonal form, accumulating the transform in `v`.
fn tridiagonalize(n: usize, v: &mut [f64], d: &mut [f64], e: &mut [f64]) {
    let idx = |i: usize, j: usize| i * n + j;
    for j in 0..n {
        d[j] = v[idx(n - 1, j)];
    }
    for i in (1..n).rev() {
        let scale: f64 = d[..i].iter().map(|x| x.abs()).sum();
        let mut h = 0.0;
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[idx(i - 1, j)];
                v[idx(i, j)] = 0.0;
                v[idx(j, i)] = 0.0;
            }
        } else {
            for dk in &mut d[..i] {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[idx(j, i)] = f;
                g = e[j] + v[idx(j, j)] * f;
                for k in (j + 1)..i {
                    g += v[idx(k, j)] * d[k];
                    e[k] += v[idx(k, j)] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[idx(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[idx(i - 1, j)];
                v[idx(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }
    for i in 0..n.saturating_sub(1) {
        v[idx(n - 1, i)] = v[idx(i, i)];
        v[idx(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[idx(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[idx(k, i + 1)] * v[idx(k, j)];
                }
                for k in 0..=i {
                    v[idx(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[idx(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[idx(n - 1, j)];
        v[idx(n - 1, j)] = 0.0;
    }
    v[idx(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

/// Implicit QL on the tridiagonal `(d, e)`, rotating the basis in `v`.
fn tridiagonal_ql(n: usize, v: &mut [f64], d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let idx = |i: usize, j: usize| i * n + j;
    let cap = 30 * n.max(1);
    let mut total_iter = 0usize;
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            loop {
                total_iter += 1;
                if total_iter > cap {
                    return Err(Error::EigenNoConvergence { iterations: cap });
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        let vk1 = v[idx(k, i + 1)];
                        let vk = v[idx(k, i)];
                        v[idx(k, i + 1)] = s * vk + c * vk1;
                        v[idx(k, i)] = c * vk - s * vk1;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatrixNorms {
    pub frobenius: f64,
    /// Largest absolute eigenvalue.
    pub operator: f64,
    pub elementwise_max_abs: f64,
    pub elementwise_l1: f64,
}

pub fn matrix_norms(a: &SymMatrix) -> Result<MatrixNorms> {
    Ok(MatrixNorms {
        frobenius: a.frobenius_norm(),
        operator: operator_norm(a)?,
        elementwise_max_abs: a.max_abs(),
        elementwise_l1: a.l1_norm(true),
    })
}

pub fn operator_norm(a: &SymMatrix) -> Result<f64> {
    let eig = eig_sym(a)?;
    Ok(eig.max_value().abs().max(eig.min_value().abs()))
}

/// `true` iff the smallest eigenvalue exceeds `tol`.
pub fn is_pd(a: &SymMatrix, tol: f64) -> Result<bool> {
    Ok(eig_sym(a)?.min_value() > tol)
}

pub fn min_eigenvalue(a: &SymMatrix) -> Result<f64> {
    Ok(eig_sym(a)?.min_value())
}

/// Lower Cholesky factor `G` with `A = G Gᵀ`.
pub fn cholesky(a: &SymMatrix) -> Result<DenseMatrix> {
    let n = a.dim();
    let mut g = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut diag = a.get(j, j);
        for k in 0..j {
            diag -= g[(j, k)] * g[(j, k)];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::NotPositiveDefinite { min_eig: diag });
        }
        let djj = diag.sqrt();
        g[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= g[(i, k)] * g[(j, k)];
            }
            g[(i, j)] = s / djj;
        }
    }
    Ok(g)
}

/// Solves `G Gᵀ x = b` in place given the lower Cholesky factor.
pub(crate) fn cholesky_solve(g: &DenseMatrix, b: &mut [f64]) {
    let n = g.rows();
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= g[(i, k)] * b[k];
        }
        b[i] = s / g[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= g[(k, i)] * b[k];
        }
        b[i] = s / g[(i, i)];
    }
}

/// Inverse of a positive-definite matrix via Cholesky.
pub fn inverse_pd(a: &SymMatrix) -> Result<SymMatrix> {
    let n = a.dim();
    let g = cholesky(a)?;
    let mut inv = DenseMatrix::zeros(n, n);
    let mut col = vec![0.0; n];
    for j in 0..n {
        col.iter_mut().for_each(|c| *c = 0.0);
        col[j] = 1.0;
        cholesky_solve(&g, &mut col);
        for i in 0..n {
            inv[(i, j)] = col[i];
        }
    }
    SymMatrix::symmetrize(&inv)
}

pub fn logdet_pd(a: &SymMatrix) -> Result<f64> {
    let g = cholesky(a)?;
    Ok((0..a.dim()).map(|i| 2.0 * g[(i, i)].ln()).sum())
}

/// Components of a marginal precision matrix after eliminating hidden coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SchurParts {
    /// `K_OO`.
    pub s_star: SymMatrix,
    /// `K_OH K_HH⁻¹ K_HO`.
    pub l_star: SymMatrix,
    /// `s_star − l_star`.
    pub k_marg: SymMatrix,
}

/// Marginal precision of the `observed` coordinates of a joint precision matrix.
pub fn schur_marginal(k_full: &SymMatrix, observed: &[usize]) -> Result<SchurParts> {
    let n = k_full.dim();
    if observed.is_empty() {
        return Err(Error::InvalidInput("observed index set is empty".into()));
    }
    let mut seen = vec![false; n];
    for &i in observed {
        if i >= n {
            return Err(Error::InvalidInput(format!(
                "observed index {i} out of range for dimension {n}"
            )));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::InvalidInput(format!("duplicate observed index {i}")));
        }
    }
    cholesky(k_full)?;
    let hidden: Vec<usize> = (0..n).filter(|&i| !seen[i]).collect();
    let s_star = k_full.submatrix(observed);
    let p = observed.len();
    if hidden.is_empty() {
        return Ok(SchurParts {
            k_marg: s_star.clone(),
            s_star,
            l_star: SymMatrix::zeros(p),
        });
    }
    let k_hh = k_full.submatrix(&hidden);
    let g = cholesky(&k_hh)?;
    let k_ho = k_full.block(&hidden, observed);
    // X = K_HH⁻¹ K_HO, column by column.
    let h = hidden.len();
    let mut x = DenseMatrix::zeros(h, p);
    let mut col = vec![0.0; h];
    for j in 0..p {
        for i in 0..h {
            col[i] = k_ho[(i, j)];
        }
        cholesky_solve(&g, &mut col);
        for i in 0..h {
            x[(i, j)] = col[i];
        }
    }
    let l_dense = k_ho.transpose().matmul(&x)?;
    let l_star = SymMatrix::symmetrize(&l_dense)?;
    let k_marg = &s_star - &l_star;
    Ok(SchurParts {
        s_star,
        l_star,
        k_marg,
    })
}

/// Spikiness ratio `p · ‖L‖_max / ‖L‖_F`, which lies in `[1, p]`.
pub fn spikiness(l: &SymMatrix) -> Result<f64> {
    let fro = l.frobenius_norm();
    if fro == 0.0 {
        return Err(Error::UndefinedRatio("spikiness of the zero matrix"));
    }
    Ok(l.dim() as f64 * l.max_abs() / fro)
}
