//! Dense linear algebra helpers on top of `nalgebra`.
//!
//! Symmetric eigendecompositions use cyclic Jacobi rotations. The matrices in
//! this crate are at most a few hundred rows, where Jacobi's robustness and
//! accuracy on clustered spectra matter more than its cubic-per-sweep cost.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;

/// Off-diagonal Frobenius norm at which Jacobi sweeps stop, relative to the
/// Frobenius norm of the input.
pub const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigenpairs of a symmetric matrix, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub values: Vec<f64>,
    /// Column `i` is the unit eigenvector of `values[i]`.
    pub vectors: Mat,
}

impl SymEigen {
    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        *self.values.last().expect("non-empty spectrum")
    }

    /// Rebuilds `V diag(f(λ)) Vᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for (j, &lam) in self.values.iter().enumerate() {
            let fj = f(lam);
            for i in 0..n {
                scaled[(i, j)] *= fj;
            }
        }
        &scaled * self.vectors.transpose()
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Only the symmetric part of `a` is used.
pub fn sym_eigen(a: &Mat) -> Result<SymEigen> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Shape {
            expected: "square matrix".into(),
            got: format!("{}x{}", a.nrows(), a.ncols()),
        });
    }
    if n == 0 {
        return Err(Error::invalid("empty matrix"));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite matrix entry"));
    }
    let mut w = (a + a.transpose()) * 0.5;
    let mut v = Mat::identity(n, n);
    let scale = w.norm().max(f64::MIN_POSITIVE);

    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_diagonal_norm(&w) <= JACOBI_TOL * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = w[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let tau = (w[(q, q)] - w[(p, p)]) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = w[(k, p)];
                    let akq = w[(k, q)];
                    w[(k, p)] = c * akp - s * akq;
                    w[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = w[(p, k)];
                    let aqk = w[(q, k)];
                    w[(p, k)] = c * apk - s * aqk;
                    w[(q, k)] = s * apk + c * aqk;
                }
                w[(p, q)] = 0.0;
                w[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| w[(i, i)].total_cmp(&w[(j, j)]));
    let values = order.iter().map(|&i| w[(i, i)]).collect();
    let vectors = Mat::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(SymEigen { values, vectors })
}

fn off_diagonal_norm(a: &Mat) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += a[(i, j)] * a[(i, j)];
            }
        }
    }
    acc.sqrt()
}

pub fn eigenvalues(a: &Mat) -> Result<Vec<f64>> {
    Ok(sym_eigen(a)?.values)
}

pub fn lambda_min(a: &Mat) -> Result<f64> {
    Ok(sym_eigen(a)?.min())
}

pub fn lambda_max(a: &Mat) -> Result<f64> {
    Ok(sym_eigen(a)?.max())
}

/// Largest absolute entry of `a − aᵀ`.
pub fn asymmetry(a: &Mat) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

pub fn is_symmetric(a: &Mat, tol: f64) -> bool {
    a.is_square() && asymmetry(a) <= tol
}

/// Principal square root of a positive semidefinite matrix. Eigenvalues in
/// `[-tol, 0)` are clamped to zero; anything more negative is an error.
pub fn psd_sqrt(a: &Mat, tol: f64) -> Result<Mat> {
    let eig = sym_eigen(a)?;
    if eig.min() < -tol {
        return Err(Error::Spectral(format!(
            "matrix is not positive semidefinite (lambda_min = {:e})",
            eig.min()
        )));
    }
    Ok(eig.map(|l| l.max(0.0).sqrt()))
}

/// `a^{-1/2}` for a positive definite matrix.
pub fn inv_sqrt(a: &Mat) -> Result<Mat> {
    let eig = sym_eigen(a)?;
    if eig.min() <= 0.0 {
        return Err(Error::Singular(format!(
            "inverse square root needs a positive definite matrix (lambda_min = {:e})",
            eig.min()
        )));
    }
    Ok(eig.map(|l| 1.0 / l.sqrt()))
}

/// `a^k` by repeated squaring, `k ≥ 0`.
pub fn mat_pow(a: &Mat, mut k: usize) -> Mat {
    let n = a.nrows();
    let mut result = Mat::identity(n, n);
    let mut base = a.clone();
    while k > 0 {
        if k & 1 == 1 {
            result = &result * &base;
        }
        k >>= 1;
        if k > 0 {
            base = &base * &base;
        }
    }
    result
}

/// The averaging matrix `J = 11ᵀ/m`.
pub fn consensus_projector(m: usize) -> Mat {
    Mat::from_element(m, m, 1.0 / m as f64)
}

/// `‖X‖_G² = tr(Xᵀ G X)`.
pub fn weighted_sq_norm(x: &Mat, g: &Mat) -> f64 {
    (g * x).dot(x)
}

/// Row sums of `a`.
pub fn row_sums(a: &Mat) -> Vec<f64> {
    a.row_iter().map(|r| r.sum()).collect()
}

/// Second-smallest eigenvalue, i.e. the smallest eigenvalue once the
/// consensus direction has been accounted for.
pub fn lambda_2(a: &Mat) -> Result<f64> {
    let vals = eigenvalues(a)?;
    Ok(if vals.len() > 1 { vals[1] } else { vals[0] })
}

/// Spectral radius of a symmetric matrix.
pub fn spectral_radius(a: &Mat) -> Result<f64> {
    let eig = sym_eigen(a)?;
    Ok(eig.min().abs().max(eig.max().abs()))
}
