use nalgebra::{DMatrix, DVector};

use super::linalg::{row_solve, PinvOptions};
use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::systems::Trajectory;

/// Lifted model `φ̇ ≈ A φ + B u` without any control transformation.
#[derive(Clone, Debug)]
pub struct LinearPredictor {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Root-mean-square residual of the fit.
    pub residual: f64,
    pub warnings: Vec<String>,
}

/// Least-squares fit over the trajectory intervals: the forward difference
/// of φ against the interval averages `(φ_t + φ_{t+1})/2` and `u_t`.
pub fn linear_predictor_baseline(traj: &Trajectory, dict: &Dictionary, opts: PinvOptions) -> Result<LinearPredictor> {
    traj.validate()?;
    let n = traj.inputs.len();
    if n == 0 {
        return Err(Error::input("trajectory has no intervals"));
    }
    let phi = dict.eval_matrix(&traj.states)?;
    let m = phi.nrows();
    let mut reg = DMatrix::zeros(m + 1, n);
    let mut target = DMatrix::zeros(m, n);
    for t in 0..n {
        let avg = (phi.column(t) + phi.column(t + 1)) * 0.5;
        reg.view_mut((0, t), (m, 1)).copy_from(&avg);
        reg[(m, t)] = traj.inputs[t];
        target.set_column(t, &((phi.column(t + 1) - phi.column(t)) / traj.tau));
    }
    let mut a = DMatrix::zeros(m, m);
    let mut b = DVector::zeros(m);
    let mut warnings = Vec::new();
    let mut sq = 0.0;
    for i in 0..m {
        let y = target.row(i).transpose();
        let sol = row_solve(&y, &reg, opts)?;
        if sol.rank < m + 1 && warnings.is_empty() {
            warnings.push(format!("regressor rank {} < {}; minimum-norm solution", sol.rank, m + 1));
        }
        a.row_mut(i).copy_from(&sol.coeffs.rows(0, m).transpose());
        b[i] = sol.coeffs[m];
        sq += (reg.transpose() * &sol.coeffs - y).norm_squared();
    }
    Ok(LinearPredictor {
        a,
        b,
        residual: (sq / (m * n) as f64).sqrt(),
        warnings,
    })
}
