use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SVD_MAX_ITER: usize = 10_000;

fn default_rtol(rows: usize, cols: usize) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON
}

fn svd(m: &DMatrix<f64>) -> Result<nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("matrix has non-finite entries".into()));
    }
    m.clone()
        .try_svd(true, true, f64::EPSILON, SVD_MAX_ITER)
        .ok_or_else(|| Error::Numeric("SVD did not converge".into()))
}

/// Moore–Penrose pseudoinverse with its numerical rank. Singular values at
/// or below `rtol·σ_max` are dropped; `None` uses `max(p, q)·ε`.
pub fn pseudoinverse_rank(m: &DMatrix<f64>, rtol: Option<f64>) -> Result<(DMatrix<f64>, usize)> {
    let (p, q) = m.shape();
    if p == 0 || q == 0 {
        return Ok((DMatrix::zeros(q, p), 0));
    }
    let dec = svd(m)?;
    let smax = dec.singular_values.max();
    let cut = rtol.unwrap_or_else(|| default_rtol(p, q)) * smax;
    let u = dec.u.as_ref().expect("requested U");
    let vt = dec.v_t.as_ref().expect("requested Vᵀ");
    let mut out = DMatrix::zeros(q, p);
    let mut rank = 0;
    for (i, s) in dec.singular_values.iter().enumerate() {
        if *s > cut && *s > 0.0 {
            rank += 1;
            out += vt.row(i).transpose() * u.column(i).transpose() / *s;
        }
    }
    Ok((out, rank))
}

pub fn pseudoinverse(m: &DMatrix<f64>, rtol: Option<f64>) -> Result<DMatrix<f64>> {
    pseudoinverse_rank(m, rtol).map(|(p, _)| p)
}

/// Column `t` is `gamma[:, t]·u[t]`.
pub fn khatri_rao_row(gamma: &DMatrix<f64>, u: &[f64]) -> Result<DMatrix<f64>> {
    if gamma.ncols() != u.len() {
        return Err(Error::input(format!(
            "Γ has {} columns but U has {} entries",
            gamma.ncols(),
            u.len()
        )));
    }
    let mut out = gamma.clone();
    for (mut col, ut) in out.column_iter_mut().zip(u) {
        col *= *ut;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PinvOptions {
    pub rtol: Option<f64>,
    /// Scale each regressor row to unit norm before truncating.
    pub equilibrate: bool,
}

impl Default for PinvOptions {
    fn default() -> Self {
        PinvOptions {
            rtol: None,
            equilibrate: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RowSolve {
    pub coeffs: DVector<f64>,
    pub rank: usize,
}

/// Minimum-norm `s` with `sᵀR ≈ yᵀ`, i.e. `sᵀ = yᵀR^†` for a regressor
/// `R` whose rows are features and columns samples.
pub fn row_solve(y: &DVector<f64>, r: &DMatrix<f64>, opts: PinvOptions) -> Result<RowSolve> {
    if y.len() != r.ncols() {
        return Err(Error::input(format!(
            "target has {} samples, regressor has {}",
            y.len(),
            r.ncols()
        )));
    }
    let scale: Vec<f64> = if opts.equilibrate {
        r.row_iter()
            .map(|row| {
                let n = row.norm();
                if n > 0.0 && n.is_finite() {
                    n
                } else {
                    1.0
                }
            })
            .collect()
    } else {
        vec![1.0; r.nrows()]
    };
    let scaled = DMatrix::from_fn(r.nrows(), r.ncols(), |i, j| r[(i, j)] / scale[i]);
    let (pinv, rank) = pseudoinverse_rank(&scaled, opts.rtol)?;
    let s = pinv.transpose() * y;
    let coeffs = DVector::from_fn(s.len(), |i, _| s[i] / scale[i]);
    Ok(RowSolve { coeffs, rank })
}

/// Orthonormal basis of the column space of `m` (rank by `rtol`).
pub fn range_basis(m: &DMatrix<f64>, rtol: Option<f64>) -> Result<DMatrix<f64>> {
    let (p, q) = m.shape();
    if p == 0 || q == 0 {
        return Ok(DMatrix::zeros(p, 0));
    }
    let dec = svd(m)?;
    let smax = dec.singular_values.max();
    let cut = rtol.unwrap_or_else(|| default_rtol(p, q)) * smax;
    let u = dec.u.as_ref().expect("requested U");
    let cols: Vec<_> = dec
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, s)| **s > cut && **s > 0.0)
        .map(|(i, _)| u.column(i).into_owned())
        .collect();
    if cols.is_empty() {
        return Ok(DMatrix::zeros(p, 0));
    }
    Ok(DMatrix::from_columns(&cols))
}

/// Unit right singular vector for the smallest singular value, and that
/// value.
pub fn smallest_right_singular(m: &DMatrix<f64>) -> Result<(DVector<f64>, f64)> {
    let (rows, cols) = m.shape();
    if cols == 0 {
        return Err(Error::input("matrix has no columns"));
    }
    // Pad short matrices so the thin SVD exposes the full right space.
    let padded;
    let mat = if rows < cols {
        padded = m.clone().resize_vertically(cols, 0.0);
        &padded
    } else {
        m
    };
    let dec = svd(mat)?;
    let vt = dec.v_t.as_ref().expect("requested Vᵀ");
    let (i, s) = dec
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty");
    Ok((vt.row(i).transpose(), *s))
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix.
pub fn lambda_max(sym: &DMatrix<f64>) -> f64 {
    if sym.is_empty() {
        return 0.0;
    }
    sym.clone().symmetric_eigenvalues().max().max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn pinv_small_cases() {
        let i3 = DMatrix::<f64>::identity(3, 3);
        assert_eq!(pseudoinverse(&i3, None).unwrap(), i3);
        let d = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        let p = pseudoinverse(&d, None).unwrap();
        assert!((p - DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.0])).amax() < 1e-15);
    }

    #[test]
    fn pinv_matches_normal_equations() {
        let m = random(20, 7, 3);
        let p = pseudoinverse(&m, None).unwrap();
        assert!((&p * &m - DMatrix::identity(7, 7)).amax() < 1e-10);
        let normal = (m.transpose() * &m).try_inverse().unwrap() * m.transpose();
        assert!((p - normal).amax() < 1e-8);
    }

    #[test]
    fn khatri_rao_scaling() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let out = khatri_rao_row(&g, &[10.0, 100.0]).unwrap();
        assert_eq!(out, DMatrix::from_row_slice(2, 2, &[10.0, 200.0, 30.0, 400.0]));
        assert_eq!(khatri_rao_row(&g, &[1.0, 1.0]).unwrap(), g);
        assert!(khatri_rao_row(&g, &[1.0]).is_err());
    }

    #[test]
    fn row_solve_equilibration_is_transparent_at_full_rank() {
        let mut r = random(5, 40, 9);
        for j in 0..40 {
            r[(2, j)] *= 1e4;
        }
        let truth = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0, 0.25]);
        let y = r.transpose() * &truth;
        for eq in [false, true] {
            let s = row_solve(&y, &r, PinvOptions { rtol: None, equilibrate: eq }).unwrap();
            assert_eq!(s.rank, 5);
            assert!((s.coeffs - &truth).amax() < 1e-9);
        }
    }

    #[test]
    fn zero_rows_give_minimum_norm_zero() {
        let mut r = random(4, 30, 1);
        r.row_mut(3).fill(0.0);
        let y = DVector::from_fn(30, |j, _| r[(0, j)]);
        let s = row_solve(&y, &r, PinvOptions::default()).unwrap();
        assert_eq!(s.rank, 3);
        assert_eq!(s.coeffs[3], 0.0);
        assert!((s.coeffs[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn smallest_singular_direction() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        let (v, s) = smallest_right_singular(&m).unwrap();
        assert!(s < 1e-12);
        assert!((v[0] + v[1]).abs() < 1e-12);
        let short = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        let (v, s) = smallest_right_singular(&short).unwrap();
        assert!(s.abs() < 1e-15 && v[0].abs() < 1e-12);
    }
}
