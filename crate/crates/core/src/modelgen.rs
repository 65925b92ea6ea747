//! Synthetic latent-variable Gaussian models with known ground truth.
//!
//! A joint precision matrix over `p` observed and `h` hidden coordinates is
//! built from a sparse observed graph plus broad latent couplings, made
//! positive definite by diagonal dominance, and marginalized onto the
//! observed block: `K_marg = S* − L*` with `S* = K_OO` sparse and
//! `L* = K_OH K_HH⁻¹ K_HO` of rank `h`.

use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::graph::EdgeSet;
use crate::matio::{read_matrix, write_matrix};
use crate::rng::rng_from_seed;
use crate::symkernel::{cholesky, inverse_pd, min_eigenvalue, schur_marginal, SymMatrix};

/// Fraction of observed nodes each latent variable couples to.
pub const LATENT_FANOUT: f64 = 0.8;
const MAX_BOOST_ESCALATIONS: usize = 20;
/// Redraws of the latent coupling pattern before giving up on full rank.
const MAX_COUPLING_DRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphKind {
    Chain,
    /// 4-neighbour lattice with `⌈√p⌉` columns.
    Grid,
    /// Random graph with expected degree `max_degree`, capped at `max_degree`.
    ErdosRenyi { max_degree: usize },
}

impl GraphKind {
    /// Degree bound implied by the graph family.
    pub fn nominal_degree(&self) -> usize {
        match self {
            GraphKind::Chain => 2,
            GraphKind::Grid => 4,
            GraphKind::ErdosRenyi { max_degree } => *max_degree,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub p: usize,
    pub h: usize,
    pub graph: GraphKind,
    /// `[s_min, s_max]`; edge weights are uniform on this interval with random sign.
    pub edge_magnitude: [f64; 2],
    /// Magnitude of each nonzero latent-observed entry of the joint precision.
    pub latent_coupling: f64,
    /// Added to the off-diagonal row sums to form the diagonal.
    pub diagonal_boost: f64,
    pub seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            p: 30,
            h: 1,
            graph: GraphKind::Chain,
            edge_magnitude: [0.3, 0.4],
            latent_coupling: 1.0,
            diagonal_boost: 0.3,
            seed: 0,
        }
    }
}

impl ModelSpec {
    pub fn s_min(&self) -> f64 {
        self.edge_magnitude[0]
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.edge_magnitude;
        if self.p < 2 {
            return Err(Error::param("p", format!("need at least 2 observed nodes, got {}", self.p)));
        }
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::param(
                "edge_magnitude",
                format!("need 0 < s_min <= s_max, got [{lo}, {hi}]"),
            ));
        }
        if !self.latent_coupling.is_finite() || !self.diagonal_boost.is_finite() {
            return Err(Error::param("latent_coupling", "coupling and boost must be finite"));
        }
        if self.latent_coupling != 0.0 && self.h > self.p {
            return Err(Error::param(
                "h",
                format!("rank of L* is at most p = {}, got h = {}", self.p, self.h),
            ));
        }
        if let GraphKind::ErdosRenyi { max_degree: 0 } = self.graph {
            return Err(Error::param("graph", "erdos_renyi needs max_degree >= 1"));
        }
        Ok(())
    }
}

/// A generated model and everything derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub k_full: SymMatrix,
    pub s_star: SymMatrix,
    pub l_star: SymMatrix,
    pub k_marg: SymMatrix,
    pub sigma: SymMatrix,
    pub edges: EdgeSet,
    pub h: usize,
    pub spec: ModelSpec,
}

impl GroundTruth {
    pub fn p(&self) -> usize {
        self.s_star.dim()
    }
}

fn build_edges(spec: &ModelSpec, rng: &mut crate::rng::Rng) -> Result<EdgeSet> {
    let p = spec.p;
    let mut edges = EdgeSet::new(p);
    match spec.graph {
        GraphKind::Chain => {
            for i in 0..p - 1 {
                edges.insert(i, i + 1)?;
            }
        }
        GraphKind::Grid => {
            let side = (p as f64).sqrt().ceil() as usize;
            for i in 0..p {
                if (i + 1) % side != 0 && i + 1 < p {
                    edges.insert(i, i + 1)?;
                }
                if i + side < p {
                    edges.insert(i, i + side)?;
                }
            }
        }
        GraphKind::ErdosRenyi { max_degree } => {
            let prob = (max_degree as f64 / (p - 1) as f64).min(1.0);
            let mut pairs: Vec<(usize, usize)> =
                (0..p).flat_map(|i| ((i + 1)..p).map(move |j| (i, j))).collect();
            pairs.shuffle(rng);
            let mut deg = vec![0usize; p];
            for (i, j) in pairs {
                let keep = rng.random_bool(prob);
                if keep && deg[i] < max_degree && deg[j] < max_degree {
                    edges.insert(i, j)?;
                    deg[i] += 1;
                    deg[j] += 1;
                }
            }
        }
    }
    Ok(edges)
}

/// Draws a model from `spec`. The result is a deterministic function of
/// `spec` (including its seed).
pub fn generate_ground_truth(spec: &ModelSpec) -> Result<GroundTruth> {
    spec.validate()?;
    let p = spec.p;
    let h = spec.h;
    let total = p + h;
    let mut rng = rng_from_seed(spec.seed);
    let edges = build_edges(spec, &mut rng)?;

    let [lo, hi] = spec.edge_magnitude;
    let mut k = SymMatrix::zeros(total);
    for (i, j) in edges.iter() {
        let mag = if lo == hi { lo } else { rng.random_range(lo..=hi) };
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        k.set(i, j, sign * mag);
    }
    if spec.latent_coupling != 0.0 && h > 0 {
        let fanout = ((LATENT_FANOUT * p as f64).ceil() as usize).clamp(1, p);
        // rank(L*) = rank(K_OH), so redraw until the coupling columns are independent.
        let mut attempt = 0;
        loop {
            let mut coupling = vec![vec![0.0; p]; h];
            for col in coupling.iter_mut() {
                let mut targets = sample_indices(&mut rng, p, fanout).into_vec();
                targets.sort_unstable();
                for i in targets {
                    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    col[i] = sign * spec.latent_coupling;
                }
            }
            let gram = SymMatrix::from_fn(h, |a, b| coupling[a].iter().zip(&coupling[b]).map(|(x, y)| x * y).sum());
            let scale = spec.latent_coupling * spec.latent_coupling * fanout as f64;
            if min_eigenvalue(&gram)? > 1e-8 * scale {
                for (latent, col) in coupling.iter().enumerate() {
                    for (i, &v) in col.iter().enumerate().filter(|(_, v)| **v != 0.0) {
                        k.set(i, p + latent, v);
                    }
                }
                break;
            }
            attempt += 1;
            if attempt >= MAX_COUPLING_DRAWS {
                return Err(Error::Generation(format!(
                    "no full-rank latent coupling pattern for p = {p}, h = {h} after {MAX_COUPLING_DRAWS} draws"
                )));
            }
        }
    }

    let row_sums: Vec<f64> = (0..total)
        .map(|i| (0..total).filter(|&j| j != i).map(|j| k.get(i, j).abs()).sum())
        .collect();
    let mut boost = spec.diagonal_boost;
    let mut attempt = 0;
    let k_full = loop {
        let mut candidate = k.clone();
        for (i, rs) in row_sums.iter().enumerate() {
            candidate.set(i, i, rs + boost);
        }
        if cholesky(&candidate).is_ok() {
            break candidate;
        }
        attempt += 1;
        if attempt > MAX_BOOST_ESCALATIONS {
            let min_eig = min_eigenvalue(&candidate).unwrap_or(f64::NAN);
            return Err(Error::Generation(format!(
                "joint precision not positive definite after {MAX_BOOST_ESCALATIONS} diagonal \
                 boost escalations (last boost {boost:e}, smallest eigenvalue {min_eig:e})"
            )));
        }
        boost = (2.0 * boost).max(1e-3);
    };

    let observed: Vec<usize> = (0..p).collect();
    let parts = schur_marginal(&k_full, &observed)?;
    let sigma = inverse_pd(&parts.k_marg)?;
    Ok(GroundTruth {
        k_full,
        s_star: parts.s_star,
        l_star: parts.l_star,
        k_marg: parts.k_marg,
        sigma,
        edges,
        h,
        spec: spec.clone(),
    })
}

/// `n` i.i.d. draws from `N(0, Σ)` and their empirical covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub n: usize,
    /// `n × p`, one sample per row.
    pub data: DenseMatrix,
    pub sigma_hat: SymMatrix,
    pub seed: u64,
}

/// Rows are `G z` with `Σ = G Gᵀ` (Cholesky) and `z` standard normal from the
/// seeded generator; identical seeds give identical bits.
pub fn sample_gaussian(sigma: &SymMatrix, n: usize, seed: u64) -> Result<SampleSet> {
    if n == 0 {
        return Err(Error::param("n", "need at least one sample"));
    }
    let g = cholesky(sigma)?;
    let p = sigma.dim();
    let mut rng = rng_from_seed(seed);
    let mut data = DenseMatrix::zeros(n, p);
    let mut z = vec![0.0; p];
    for r in 0..n {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        let row = data.row_mut(r);
        for i in 0..p {
            row[i] = (0..=i).map(|k| g[(i, k)] * z[k]).sum();
        }
    }
    let sigma_hat = empirical_covariance(&data, false)?;
    Ok(SampleSet {
        n,
        data,
        sigma_hat,
        seed,
    })
}

/// `(1/n) XᵀX`, after column-centering when `center` is set.
pub fn empirical_covariance(data: &DenseMatrix, center: bool) -> Result<SymMatrix> {
    let n = data.rows();
    if n == 0 || (center && n < 2) {
        return Err(Error::param(
            "n",
            format!("{n} samples is too few{}", if center { " for centering" } else { "" }),
        ));
    }
    if data.cols() == 0 {
        return Err(Error::InvalidInput("data has no columns".into()));
    }
    if center {
        let p = data.cols();
        let mut means = vec![0.0; p];
        for r in 0..n {
            for (m, x) in means.iter_mut().zip(data.row(r)) {
                *m += x;
            }
        }
        means.iter_mut().for_each(|m| *m /= n as f64);
        let mut centered = data.clone();
        for r in 0..n {
            for (x, m) in centered.row_mut(r).iter_mut().zip(&means) {
                *x -= m;
            }
        }
        Ok(centered.scaled_gram(n as f64))
    } else {
        Ok(data.scaled_gram(n as f64))
    }
}

/// Result of adding a sparse rank-one term `δ z zᵀ` to a precision matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub k_tilde: SymMatrix,
    /// Unit-norm direction with exactly `k` nonzero entries.
    pub z: Vec<f64>,
    pub e: SymMatrix,
}

/// Draws a unit `z` supported on `k` random coordinates and returns
/// `K̃ = K + δ z zᵀ`.
pub fn perturb_sparse_lowrank(k_mat: &SymMatrix, delta: f64, k: usize, seed: u64) -> Result<Perturbation> {
    let p = k_mat.dim();
    if k == 0 || k > p {
        return Err(Error::param("k", format!("support size must be in 1..={p}, got {k}")));
    }
    let mut rng = rng_from_seed(seed);
    let support = sample_indices(&mut rng, p, k).into_vec();
    let mut z = vec![0.0; p];
    for &i in &support {
        // Bounded away from zero so the support has exactly k entries.
        let mag: f64 = rng.random_range(0.5..1.5);
        z[i] = if rng.random_bool(0.5) { mag } else { -mag };
    }
    let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    z.iter_mut().for_each(|v| *v /= norm);
    perturb_with_direction(k_mat, delta, &z)
}

/// `K̃ = K + δ z zᵀ` for a caller-supplied direction.
pub fn perturb_with_direction(k_mat: &SymMatrix, delta: f64, z: &[f64]) -> Result<Perturbation> {
    if z.len() != k_mat.dim() {
        return Err(Error::DimensionMismatch {
            expected: k_mat.dim(),
            found: z.len(),
        });
    }
    if !delta.is_finite() {
        return Err(Error::param("delta", "must be finite"));
    }
    cholesky(k_mat)?;
    let e = SymMatrix::outer(z);
    let k_tilde = k_mat + &e.scaled(delta);
    if delta < 0.0 {
        let min_eig = min_eigenvalue(&k_tilde)?;
        if min_eig <= 0.0 {
            return Err(Error::NotPositiveDefinite { min_eig });
        }
    }
    Ok(Perturbation {
        k_tilde,
        z: z.to_vec(),
        e,
    })
}

const MANIFEST: &str = "manifest.json";
const FORMAT_TAG: &str = "lvgm-ground-truth/1";

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    p: usize,
    h: usize,
    spec: ModelSpec,
    edges: Vec<(usize, usize)>,
    files: ManifestFiles,
}

#[derive(Serialize, Deserialize)]
struct ManifestFiles {
    k_full: String,
    s_star: String,
    l_star: String,
    sigma: String,
}

impl Default for ManifestFiles {
    fn default() -> Self {
        Self {
            k_full: "K_full.txt".into(),
            s_star: "S_star.txt".into(),
            l_star: "L_star.txt".into(),
            sigma: "Sigma.txt".into(),
        }
    }
}

/// Writes `K_full.txt`, `S_star.txt`, `L_star.txt`, `Sigma.txt` and
/// `manifest.json` into `dir` (created if missing).
pub fn write_ground_truth(truth: &GroundTruth, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = ManifestFiles::default();
    write_matrix(dir.join(&files.k_full), &truth.k_full)?;
    write_matrix(dir.join(&files.s_star), &truth.s_star)?;
    write_matrix(dir.join(&files.l_star), &truth.l_star)?;
    write_matrix(dir.join(&files.sigma), &truth.sigma)?;
    let manifest = Manifest {
        format: FORMAT_TAG.into(),
        p: truth.p(),
        h: truth.h,
        spec: truth.spec.clone(),
        edges: truth.edges.iter().collect(),
        files,
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

pub fn read_ground_truth(dir: impl AsRef<Path>) -> Result<GroundTruth> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != FORMAT_TAG {
        return Err(Error::Parse {
            context: path.display().to_string(),
            reason: format!("unsupported format `{}`", manifest.format),
        });
    }
    let k_full = read_matrix(dir.join(&manifest.files.k_full))?;
    let s_star = read_matrix(dir.join(&manifest.files.s_star))?;
    let l_star = read_matrix(dir.join(&manifest.files.l_star))?;
    let sigma = read_matrix(dir.join(&manifest.files.sigma))?;
    let p = manifest.p;
    for (m, expected) in [(&k_full, p + manifest.h), (&s_star, p), (&l_star, p), (&sigma, p)] {
        if m.dim() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: m.dim(),
            });
        }
    }
    let edges = EdgeSet::from_pairs(p, manifest.edges)?;
    Ok(GroundTruth {
        k_marg: &s_star - &l_star,
        k_full,
        s_star,
        l_star,
        sigma,
        edges,
        h: manifest.h,
        spec: manifest.spec,
    })
}
