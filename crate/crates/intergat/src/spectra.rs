//! Spectral interpretability tools: a cyclic Jacobi eigensolver for symmetric
//! matrices plus the summary statistics computed from learned interaction
//! matrices (Dirichlet energy, inverse participation ratio, sparsity fraction,
//! numeric rank).

use serde::{Deserialize, Serialize};

use crate::numkern::Mat;

#[derive(Debug, thiserror::Error)]
pub enum SpectraError {
    #[error("matrix must be square, got {0}x{1}")]
    NotSquare(usize, usize),
    #[error("matrix must be symmetric; max asymmetry {0}")]
    NotSymmetric(f64),
    #[error("Jacobi iteration failed to converge in {0} sweeps")]
    NoConvergence(usize),
    #[error("vector length {0} does not match matrix size {1}")]
    LengthMismatch(usize, usize),
}

/// Eigendecomposition of a symmetric matrix: M = V diag(λ) Vᵀ with
/// eigenvalues ascending and columns of `vectors` the matching orthonormal
/// eigenvectors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EigenDecomp {
    pub values: Vec<f64>,
    pub vectors: Mat,
}

impl EigenDecomp {
    /// V diag(λ) Vᵀ, for reconstruction checks.
    pub fn reconstruct(&self) -> Mat {
        let n = self.values.len();
        Mat::from_fn(n, n, |i, j| {
            (0..n)
                .map(|k| self.vectors[(i, k)] * self.values[k] * self.vectors[(j, k)])
                .sum()
        })
    }
}

fn off_diagonal_norm(a: &Mat) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi eigensolver for symmetric matrices. Deterministic: sweeps
/// the strict upper triangle in row-major order, rotating every pivot whose
/// magnitude exceeds a scale-relative threshold, until the off-diagonal
/// Frobenius norm is negligible.
pub fn sym_eig(m: &Mat, tol: f64) -> Result<EigenDecomp, SpectraError> {
    let n = m.rows();
    if n != m.cols() {
        return Err(SpectraError::NotSquare(m.rows(), m.cols()));
    }
    let mut asym: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            asym = asym.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if asym > 1e-9 * (1.0 + m.max_abs()) {
        return Err(SpectraError::NotSymmetric(asym));
    }

    let mut a = m.clone();
    let mut v = Mat::identity(n);
    if n <= 1 {
        return Ok(EigenDecomp {
            values: (0..n).map(|i| a[(i, i)]).collect(),
            vectors: v,
        });
    }

    let scale = m.frobenius_norm().max(1e-300);
    let max_sweeps = 100;
    let mut converged = false;
    for _sweep in 0..max_sweeps {
        if off_diagonal_norm(&a) <= tol * scale {
            converged = true;
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() <= 1e-2 * tol * scale / (n * n) as f64 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                // classical Jacobi rotation (Golub & Van Loan 8.4)
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                // re-symmetrize the pivot pair against rounding drift
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged && off_diagonal_norm(&a) > tol * scale {
        return Err(SpectraError::NoConvergence(max_sweeps));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].partial_cmp(&a[(j, j)]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Mat::from_fn(n, n, |i, j| v[(i, order[j])]);
    // sign convention: largest-magnitude entry of each eigenvector positive
    for j in 0..n {
        let mut best = 0usize;
        for i in 1..n {
            if vectors[(i, j)].abs() > vectors[(best, j)].abs() {
                best = i;
            }
        }
        if vectors[(best, j)] < 0.0 {
            for i in 0..n {
                vectors[(i, j)] = -vectors[(i, j)];
            }
        }
    }
    Ok(EigenDecomp { values, vectors })
}

/// Dirichlet energy of `v` under the graph Laplacian of `m`:
/// vᵀ(D − M)v with D = diag(row sums). Equals ½ Σ_ij m_ij (v_i − v_j)² when
/// `m` is symmetric.
pub fn dirichlet_energy(m: &Mat, v: &[f64]) -> Result<f64, SpectraError> {
    let n = m.rows();
    if n != m.cols() {
        return Err(SpectraError::NotSquare(m.rows(), m.cols()));
    }
    if v.len() != n {
        return Err(SpectraError::LengthMismatch(v.len(), n));
    }
    let mut e = 0.0;
    for i in 0..n {
        let mut degree = 0.0;
        for j in 0..n {
            degree += m[(i, j)];
            e -= m[(i, j)] * v[i] * v[j];
        }
        e += degree * v[i] * v[i];
    }
    Ok(e)
}

/// Inverse participation ratio Σ v_i⁴ / (Σ v_i²)². 1/N for a uniform vector,
/// 1 for a one-hot vector. `strict` requires a non-zero vector.
pub fn ipr(v: &[f64], strict: bool) -> f64 {
    let sq: f64 = v.iter().map(|x| x * x).sum();
    if sq == 0.0 {
        if strict {
            panic!("ipr of the zero vector is undefined");
        }
        return 0.0;
    }
    let quart: f64 = v.iter().map(|x| x.powi(4)).sum();
    quart / (sq * sq)
}

/// Fraction of entries with |x| < threshold.
pub fn sparsity_fraction(m: &Mat, threshold: f64) -> f64 {
    let total = m.data().len();
    if total == 0 {
        return 0.0;
    }
    let small = m.data().iter().filter(|x| x.abs() < threshold).count();
    small as f64 / total as f64
}

/// Numeric rank: eigenvalues of the symmetric matrix with |λ| above
/// `rel_tol · max|λ|`.
pub fn numeric_rank(m: &Mat, rel_tol: f64) -> Result<usize, SpectraError> {
    let eig = sym_eig(m, 1e-12)?;
    let max = eig.values.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if max == 0.0 {
        return Ok(0);
    }
    Ok(eig.values.iter().filter(|x| x.abs() > rel_tol * max).count())
}

/// Spectral summary of one interaction head.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectralReport {
    pub head: usize,
    pub eigenvalues: Vec<f64>,
    pub ipr_per_mode: Vec<f64>,
    pub dirichlet_per_mode: Vec<f64>,
    pub sparsity: f64,
    pub rank: usize,
    pub frobenius: f64,
}

/// Full spectral report for a symmetric interaction matrix.
pub fn spectral_report(head: usize, m: &Mat, sparsity_threshold: f64) -> Result<SpectralReport, SpectraError> {
    let eig = sym_eig(m, 1e-12)?;
    let n = m.rows();
    let mut ipr_per_mode = Vec::with_capacity(n);
    let mut dirichlet_per_mode = Vec::with_capacity(n);
    for j in 0..n {
        let v: Vec<f64> = (0..n).map(|i| eig.vectors[(i, j)]).collect();
        ipr_per_mode.push(ipr(&v, false));
        dirichlet_per_mode.push(dirichlet_energy(m, &v)?);
    }
    Ok(SpectralReport {
        head,
        eigenvalues: eig.values,
        ipr_per_mode,
        dirichlet_per_mode,
        sparsity: sparsity_fraction(m, sparsity_threshold),
        rank: numeric_rank(m, 1e-8)?,
        frobenius: m.frobenius_norm(),
    })
}
