//! Dense linear algebra and information-theory primitives.
//!
//! Everything here works on small matrices (a few dozen rows at most), so the
//! routines favour simplicity over asymptotic speed.

use crate::error::{Error, Result};

/// Entry-wise symmetry tolerance.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Eigenvalues in `[-PSD_TOL, 0)` are treated as round-off and set to zero.
pub const PSD_TOL: f64 = 1e-9;
/// Off-diagonal Frobenius norm at which the Jacobi iteration stops.
pub const JACOBI_TOL: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Divisor offset used for sample covariance (`T - COVARIANCE_DDOF`).
pub const COVARIANCE_DDOF: usize = 1;

const JITTER_START: f64 = 1e-12;
const JITTER_MAX: f64 = 1e-6;

/// Dense symmetric matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl SymMatrix {
    /// Builds a matrix from row-major entries, checking shape, finiteness and symmetry.
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("matrix dimension must be >= 1".into()));
        }
        if entries.len() != dim * dim {
            return Err(Error::Shape(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                entries.len()
            )));
        }
        if let Some(pos) = entries.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite entry at ({}, {})",
                pos / dim,
                pos % dim
            )));
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                let deviation = (entries[i * dim + j] - entries[j * dim + i]).abs();
                if deviation > SYMMETRY_TOL {
                    return Err(Error::SymmetryViolation {
                        row: i,
                        col: j,
                        deviation,
                    });
                }
            }
        }
        Ok(Self { dim, entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("rows must form a square matrix".into()));
        }
        Self::new(dim, rows.concat())
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.entries[i * dim + i] = 1.0;
        }
        m
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "matrix dimension must be >= 1");
        Self {
            dim,
            entries: vec![0.0; dim * dim],
        }
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        assert!(dim >= 1, "matrix dimension must be >= 1");
        Self {
            dim,
            entries: vec![value; dim * dim],
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    /// Writes `value` at `(i, j)` and `(j, i)`.
    #[inline]
    pub fn set_sym(&mut self, i: usize, j: usize, value: f64) {
        self.entries[i * self.dim + j] = value;
        self.entries[j * self.dim + i] = value;
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            dim: self.dim,
            entries: self.entries.iter().map(|v| v * factor).collect(),
        }
    }

    /// Simultaneous row/column permutation: `out[i][j] = self[perm[i]][perm[j]]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.dim);
        let mut out = Self::zeros(self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                out.entries[i * self.dim + j] = self.get(perm[i], perm[j]);
            }
        }
        out
    }
}

/// Eigenvalues in descending order, optionally with the matching eigenvectors.
#[derive(Debug, Clone)]
pub struct EigenResult {
    pub eigenvalues: Vec<f64>,
    /// Column `k` (row-major `dim x dim`) is the eigenvector of `eigenvalues[k]`.
    pub eigenvectors: Option<Vec<f64>>,
}

/// Eigenvalues of a symmetric matrix, sorted descending.
pub fn sym_eigenvalues(m: &SymMatrix) -> Result<EigenResult> {
    jacobi(m, false)
}

/// Eigenvalues and orthonormal eigenvectors of a symmetric matrix.
pub fn sym_eigen(m: &SymMatrix) -> Result<EigenResult> {
    jacobi(m, true)
}

fn off_diagonal_norm(a: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[i * n + j] * a[i * n + j];
            }
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi rotations.
fn jacobi(m: &SymMatrix, keep_vectors: bool) -> Result<EigenResult> {
    let n = m.dim;
    let mut a = m.entries.clone();
    let mut v = if keep_vectors {
        SymMatrix::identity(n).entries
    } else {
        Vec::new()
    };

    let mut converged = off_diagonal_norm(&a, n) <= JACOBI_TOL;
    let mut sweeps = 0;
    while !converged && sweeps < JACOBI_MAX_SWEEPS {
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                // tan of the rotation angle, smaller root for stability
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;

                if keep_vectors {
                    for k in 0..n {
                        let vkp = v[k * n + p];
                        let vkq = v[k * n + q];
                        v[k * n + p] = c * vkp - s * vkq;
                        v[k * n + q] = s * vkp + c * vkq;
                    }
                }
            }
        }
        sweeps += 1;
        converged = off_diagonal_norm(&a, n) <= JACOBI_TOL;
    }
    if !converged {
        return Err(Error::NumericalFailure(format!(
            "Jacobi iteration did not converge in {JACOBI_MAX_SWEEPS} sweeps"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let eigenvalues = order.iter().map(|&i| a[i * n + i]).collect();
    let eigenvectors = keep_vectors.then(|| {
        let mut sorted = vec![0.0; n * n];
        for (col, &src) in order.iter().enumerate() {
            for row in 0..n {
                sorted[row * n + col] = v[row * n + src];
            }
        }
        sorted
    });
    Ok(EigenResult {
        eigenvalues,
        eigenvectors,
    })
}

/// Shannon entropy (natural log) of a probability vector, with `0 log 0 = 0`.
///
/// Entries down to `-1e-9` are clamped to zero; the clamped vector must sum to
/// one within `1e-6` and is renormalized before the entropy is taken.
pub fn shannon_entropy(p: &[f64]) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::EmptyInput("probability vector"));
    }
    let mut clamped = Vec::with_capacity(p.len());
    for &v in p {
        if !v.is_finite() {
            return Err(Error::InvalidInput("non-finite probability".into()));
        }
        if v < -PSD_TOL {
            return Err(Error::InvalidInput(format!("negative probability {v:e}")));
        }
        clamped.push(v.max(0.0));
    }
    let sum: f64 = clamped.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Normalization { sum });
    }
    Ok(clamped
        .iter()
        .map(|&v| v / sum)
        .filter(|&v| v > 0.0)
        .map(|v| -v * v.ln())
        .sum())
}

/// Lower-triangular Cholesky factor, or `None` if a pivot is not positive.
fn cholesky_factor(m: &[f64], n: usize, jitter: f64) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = m[j * n + j] + jitter;
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > 0.0) {
            return None;
        }
        let ljj = d.sqrt();
        l[j * n + j] = ljj;
        for i in (j + 1)..n {
            let mut s = m[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / ljj;
        }
    }
    Some(l)
}

/// `log det(m)` via `m = L Lᵀ`, i.e. `2 Σ log l_ii`.
///
/// If the plain factorization fails, `ε I` is added with `ε` stepping by
/// decades from `1e-12` up to `1e-6`.
pub fn cholesky_logdet(m: &SymMatrix) -> Result<f64> {
    let n = m.dim;
    let mut jitter = 0.0;
    loop {
        if let Some(l) = cholesky_factor(&m.entries, n, jitter) {
            return Ok(2.0 * (0..n).map(|i| l[i * n + i].ln()).sum::<f64>());
        }
        jitter = if jitter == 0.0 {
            JITTER_START
        } else {
            jitter * 10.0
        };
        if jitter > JITTER_MAX * (1.0 + 1e-9) {
            return Err(Error::NotPositiveDefinite { jitter: JITTER_MAX });
        }
    }
}

/// Componentwise mean over the rows of `points` (each row one observation).
pub fn trajectory_mean(points: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = points.first().ok_or(Error::EmptyInput("trajectory"))?;
    let mut mean = vec![0.0; first.len()];
    for p in points {
        if p.len() != mean.len() {
            return Err(Error::Shape("observations differ in dimension".into()));
        }
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    let count = points.len() as f64;
    mean.iter_mut().for_each(|m| *m /= count);
    Ok(mean)
}

/// Unbiased sample covariance (divisor `T - 1`).
pub fn trajectory_covariance(points: &[Vec<f64>]) -> Result<SymMatrix> {
    if points.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: points.len(),
        });
    }
    let mean = trajectory_mean(points)?;
    let d = mean.len();
    if d == 0 {
        return Err(Error::InvalidInput("zero-dimensional observations".into()));
    }
    let mut cov = vec![0.0; d * d];
    for p in points {
        for i in 0..d {
            let di = p[i] - mean[i];
            for j in i..d {
                cov[i * d + j] += di * (p[j] - mean[j]);
            }
        }
    }
    let divisor = (points.len() - COVARIANCE_DDOF) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / divisor;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    SymMatrix::new(d, cov)
}
