use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::BrunovskyPair;
use crate::dictionary::{build_stacked_data, output_derivative_stack, Dictionary, Scheme, StencilPlan};
use crate::error::{Error, Result};
use crate::systems::Trajectory;

/// How θ and γu are paired with the differenced stack at a retained sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    /// Weight the samples by the Peano kernel of the top derivative
    /// stencil, so that each regressor matches what the stencil actually
    /// measures when the input is held over each interval.
    #[default]
    Peano,
    /// `θ(x_t)` and `γ(x_t)u_t` at the sample itself.
    Sample,
}

/// Aligned arrays over the retained samples. In output mode `M = 1`, the
/// stack rows hold the output derivatives and `K = [1]`.
#[derive(Clone, Debug)]
pub struct FitDataset {
    pub r: usize,
    pub d: Vec<DMatrix<f64>>,
    pub d_dot: Vec<DMatrix<f64>>,
    /// `k_θ × N'`.
    pub theta: DMatrix<f64>,
    /// `k_γ × N'`, the aligned products `γ·u`.
    pub gamma_u: DMatrix<f64>,
    pub u: Vec<f64>,
    pub retained: Range<usize>,
}

fn aligned_regressors(
    theta: &Dictionary,
    gamma: &Dictionary,
    traj: &Trajectory,
    plan: &StencilPlan,
    retained: &Range<usize>,
    alignment: Alignment,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let th = theta.eval_matrix(&traj.states)?;
    let ga = gamma.eval_matrix(&traj.states)?;
    let n = retained.len();
    let mut out_th = DMatrix::zeros(th.nrows(), n);
    let mut out_gu = DMatrix::zeros(ga.nrows(), n);
    match alignment {
        Alignment::Sample => {
            for (k, t) in retained.clone().enumerate() {
                out_th.set_column(k, &th.column(t));
                out_gu.set_column(k, &(ga.column(t) * traj.inputs[t]));
            }
        }
        Alignment::Peano => {
            let weights = plan.top().peano_weights();
            for (k, t) in retained.clone().enumerate() {
                let mut acc_th = DVector::zeros(th.nrows());
                let mut acc_gu = DVector::zeros(ga.nrows());
                for (a, w0, w1) in &weights {
                    let i = (t as i64 + a) as usize;
                    let u = traj.inputs[i];
                    acc_th += th.column(i) * *w0 + th.column(i + 1) * *w1;
                    acc_gu += (ga.column(i) * *w0 + ga.column(i + 1) * *w1) * u;
                }
                out_th.set_column(k, &acc_th);
                out_gu.set_column(k, &acc_gu);
            }
        }
    }
    Ok((out_th, out_gu))
}

impl FitDataset {
    pub fn new(
        r: usize,
        d: Vec<DMatrix<f64>>,
        d_dot: Vec<DMatrix<f64>>,
        theta: DMatrix<f64>,
        gamma_u: DMatrix<f64>,
        u: Vec<f64>,
        retained: Range<usize>,
    ) -> Result<Self> {
        let n = d.len();
        if r == 0 {
            return Err(Error::input("relative degree must be at least 1"));
        }
        if n == 0 {
            return Err(Error::input("dataset has no samples"));
        }
        let m = d[0].ncols();
        let shapes_ok = d_dot.len() == n
            && d.iter().chain(&d_dot).all(|x| x.shape() == (r, m))
            && theta.ncols() == n
            && gamma_u.ncols() == n
            && u.len() == n
            && retained.len() == n;
        if !shapes_ok {
            return Err(Error::input("inconsistent dataset shapes"));
        }
        let finite = d.iter().chain(&d_dot).all(|x| x.iter().all(|v| v.is_finite()))
            && theta.iter().chain(gamma_u.iter()).chain(&u).all(|v| v.is_finite());
        if !finite {
            return Err(Error::input("dataset contains non-finite values"));
        }
        Ok(FitDataset {
            r,
            d,
            d_dot,
            theta,
            gamma_u,
            u,
            retained,
        })
    }

    /// Full-state dataset: the φ stack with row stencils of `scheme`.
    pub fn full_state(
        phi: &Dictionary,
        theta: &Dictionary,
        gamma: &Dictionary,
        traj: &Trajectory,
        r: usize,
        scheme: Scheme,
        alignment: Alignment,
    ) -> Result<Self> {
        traj.validate()?;
        let stack = build_stacked_data(phi, traj, r, scheme)?;
        let plan = StencilPlan::new(r, scheme)?;
        let (th, gu) = aligned_regressors(theta, gamma, traj, &plan, &stack.retained, alignment)?;
        Self::new(r, stack.d, stack.d_dot, th, gu, stack.inputs, stack.retained)
    }

    /// Output dataset for a measured `y` (one value per state sample).
    pub fn output(
        y: &[f64],
        theta: &Dictionary,
        gamma: &Dictionary,
        traj: &Trajectory,
        r: usize,
        scheme: Scheme,
        alignment: Alignment,
    ) -> Result<Self> {
        traj.validate()?;
        if y.len() != traj.states.ncols() {
            return Err(Error::input("output length must equal the number of states"));
        }
        let st = output_derivative_stack(y, traj.tau, r, scheme)?;
        let plan = StencilPlan::new(r, scheme)?;
        let (th, gu) = aligned_regressors(theta, gamma, traj, &plan, &st.retained, alignment)?;
        let d = st.z.column_iter().map(|c| DMatrix::from_iterator(r, 1, c.iter().copied())).collect();
        let d_dot = st.z_dot.column_iter().map(|c| DMatrix::from_iterator(r, 1, c.iter().copied())).collect();
        let u = traj.inputs[st.retained.clone()].to_vec();
        Self::new(r, d, d_dot, th, gu, u, st.retained)
    }

    /// Plain regression `target_t ≈ Gᵀθ_t + Jᵀ(γu)_t` posed as a depth-`r`
    /// output dataset with `y^{(r)} = target` and zero lower rows.
    pub fn from_regression(r: usize, target: &[f64], theta: DMatrix<f64>, gamma_u: DMatrix<f64>) -> Result<Self> {
        let n = target.len();
        let d = vec![DMatrix::zeros(r, 1); n];
        let d_dot = target
            .iter()
            .map(|v| {
                let mut m = DMatrix::zeros(r, 1);
                m[(r - 1, 0)] = *v;
                m
            })
            .collect();
        Self::new(r, d, d_dot, theta, gamma_u, vec![0.0; n], 0..n)
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    /// Dictionary size `M` of the stack.
    pub fn m(&self) -> usize {
        self.d[0].ncols()
    }

    pub fn k_theta(&self) -> usize {
        self.theta.nrows()
    }

    pub fn k_gamma(&self) -> usize {
        self.gamma_u.nrows()
    }

    /// `M_t = Ḋ_t − A·D_t`.
    pub fn residual_operators(&self, pair: &BrunovskyPair) -> Vec<DMatrix<f64>> {
        self.d
            .iter()
            .zip(&self.d_dot)
            .map(|(d, dd)| dd - &pair.a * d)
            .collect()
    }

    /// `N' × M` matrix whose row `t` is `BᵀM_t`.
    pub fn top_rows(&self, pair: &BrunovskyPair) -> DMatrix<f64> {
        let ops = self.residual_operators(pair);
        DMatrix::from_fn(ops.len(), self.m(), |t, i| (pair.b.transpose() * &ops[t].column(i))[0])
    }

    /// `[Θ; Γ⊗U]`, features by samples.
    pub fn regressor(&self) -> DMatrix<f64> {
        let (kt, kg, n) = (self.k_theta(), self.k_gamma(), self.len());
        let mut out = DMatrix::zeros(kt + kg, n);
        out.rows_mut(0, kt).copy_from(&self.theta);
        out.rows_mut(kt, kg).copy_from(&self.gamma_u);
        out
    }
}
