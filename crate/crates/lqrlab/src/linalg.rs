//! Small dense linear-algebra helpers shared by the Riccati and regret code.
//!
//! Everything here assumes desk-scale matrices (n ≤ ~10), so symmetric
//! eigendecomposition is used freely instead of structured factorizations.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::config::Tolerances;
use crate::error::{Error, Result};

/// `(X + X')/2`.
pub fn symmetrize(x: &DMatrix<f64>) -> DMatrix<f64> {
    (x + x.transpose()) * 0.5
}

/// Max absolute entry of `X − X'`.
pub fn asymmetry(x: &DMatrix<f64>) -> f64 {
    (x - x.transpose()).abs().max()
}

/// Spectral (L2) norm via the symmetric eigenvalues of `M'M`. Entries are
/// scaled by the largest magnitude first so the Gram matrix cannot overflow.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let scale = m.amax();
    if scale == 0.0 {
        return 0.0;
    }
    if !scale.is_finite() {
        return f64::INFINITY;
    }
    let scaled = m / scale;
    let gram = symmetrize(&(scaled.transpose() * &scaled));
    let eig = SymmetricEigen::new(gram);
    let lam = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v.max(0.0)));
    scale * lam.sqrt()
}

pub fn eigenvalues_sym(m: &DMatrix<f64>) -> DVector<f64> {
    SymmetricEigen::new(symmetrize(m)).eigenvalues
}

pub fn lambda_min(m: &DMatrix<f64>) -> f64 {
    eigenvalues_sym(m).min()
}

pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    eigenvalues_sym(m).max()
}

/// Check symmetry within `tol.symmetry`, naming `field` in the error.
pub fn require_symmetric(m: &DMatrix<f64>, field: &'static str, tol: &Tolerances) -> Result<()> {
    let asym = asymmetry(m);
    if asym > tol.symmetry {
        return Err(Error::NotSymmetric {
            field,
            asym,
            tol: tol.symmetry,
        });
    }
    Ok(())
}

/// Check symmetry and strict positive definiteness.
pub fn require_spd(m: &DMatrix<f64>, field: &'static str, tol: &Tolerances) -> Result<()> {
    require_symmetric(m, field, tol)?;
    let min_eig = lambda_min(m);
    if min_eig <= 0.0 {
        return Err(Error::NotPositiveDefinite { field, min_eig });
    }
    Ok(())
}

/// Solve `S X = B` for symmetric positive definite `S` through its
/// eigendecomposition, rejecting condition numbers above the ledger limit.
pub fn solve_spd(s: &DMatrix<f64>, b: &DMatrix<f64>, tol: &Tolerances) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrize(s));
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min <= 0.0 {
        return Err(Error::NotPositiveDefinite {
            field: "solve_spd",
            min_eig: min,
        });
    }
    let cond = max / min;
    if cond > tol.condition_limit {
        return Err(Error::IllConditioned {
            cond,
            threshold: tol.condition_limit,
        });
    }
    // X = V Λ⁻¹ V' B
    let vt_b = eig.eigenvectors.transpose() * b;
    let mut scaled = vt_b;
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row /= eig.eigenvalues[i];
    }
    Ok(&eig.eigenvectors * scaled)
}

/// [`solve_spd`] for a single right-hand-side vector.
pub fn solve_spd_vec(s: &DMatrix<f64>, b: &DVector<f64>, tol: &Tolerances) -> Result<DVector<f64>> {
    let rhs = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    let x = solve_spd(s, &rhs, tol)?;
    Ok(DVector::from_column_slice(x.as_slice()))
}

/// Symmetric matrix power through eigendecomposition. Eigenvalues are floored
/// at `tol.eig_floor` for negative exponents; a non-positive eigenvalue under
/// a fractional or negative power is a domain error.
pub fn sym_power(m: &DMatrix<f64>, exponent: f64, tol: &Tolerances) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let n = m.nrows();
    let mut lam = DVector::zeros(n);
    for i in 0..n {
        let v = eig.eigenvalues[i];
        if exponent.fract() != 0.0 || exponent < 0.0 {
            if v <= 0.0 {
                return Err(Error::NotPositiveDefinite {
                    field: "sym_power",
                    min_eig: v,
                });
            }
            lam[i] = v.max(tol.eig_floor).powf(exponent);
        } else {
            lam[i] = v.powf(exponent);
        }
    }
    let mut scaled = eig.eigenvectors.clone();
    for (i, mut col) in scaled.column_iter_mut().enumerate() {
        col *= lam[i];
    }
    Ok(scaled * eig.eigenvectors.transpose())
}

/// Eigenvalues of `P^{-1/2} Q P^{-1/2}` for symmetric positive definite `P`.
/// These are the generalized eigenvalues of the pencil `(Q, P)`.
pub fn whitened_eigenvalues(p: &DMatrix<f64>, q: &DMatrix<f64>, tol: &Tolerances) -> Result<DVector<f64>> {
    let p_inv_sqrt = sym_power(p, -0.5, tol)?;
    let m = symmetrize(&(&p_inv_sqrt * q * &p_inv_sqrt));
    Ok(SymmetricEigen::new(m).eigenvalues)
}

/// `true` when `a ⪯ b` up to the ledger's ordering slack.
pub fn loewner_leq(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: &Tolerances) -> bool {
    lambda_min(&(b - a)) >= -tol.order_slack
}
