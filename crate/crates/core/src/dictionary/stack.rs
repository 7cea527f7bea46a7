use std::ops::Range;

use nalgebra::DMatrix;

use super::stencil::{Scheme, StencilPlan};
use super::Dictionary;
use crate::error::{Error, Result};
use crate::systems::Trajectory;

/// Per-sample derivative stacks of a dictionary along a trajectory.
///
/// Row `j` of `d[k]` approximates `φ^{(j)}` at sample `retained.start + k`;
/// `d_dot[k]` is the forward difference of each row.
#[derive(Clone, Debug)]
pub struct StackedDictionaryData {
    pub r: usize,
    pub scheme: Scheme,
    pub d: Vec<DMatrix<f64>>,
    pub d_dot: Vec<DMatrix<f64>>,
    pub retained: Range<usize>,
    pub inputs: Vec<f64>,
}

fn stack_rows(
    values: &DMatrix<f64>,
    plan: &StencilPlan,
    tau: f64,
    retained: &Range<usize>,
) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let r = plan.r();
    let m = values.nrows();
    let mut d = Vec::with_capacity(retained.len());
    let mut d_dot = Vec::with_capacity(retained.len());
    for t in retained.clone() {
        let mut dt = DMatrix::zeros(r, m);
        let mut ddt = DMatrix::zeros(r, m);
        for j in 0..r {
            dt.set_row(j, &plan.rows[j].apply_columns(values, t, tau).transpose());
            ddt.set_row(j, &plan.outer[j].apply_columns(values, t, tau).transpose());
        }
        d.push(dt);
        d_dot.push(ddt);
    }
    (d, d_dot)
}

pub fn build_stacked_data(
    dict: &Dictionary,
    traj: &Trajectory,
    r: usize,
    scheme: Scheme,
) -> Result<StackedDictionaryData> {
    let plan = StencilPlan::new(r, scheme)?;
    let retained = plan.retained(traj.states.ncols())?;
    let values = dict.eval_matrix(&traj.states)?;
    let (d, d_dot) = stack_rows(&values, &plan, traj.tau, &retained);
    Ok(StackedDictionaryData {
        r,
        scheme,
        d,
        d_dot,
        inputs: traj.inputs[retained.clone()].to_vec(),
        retained,
    })
}

/// Derivative stack of a scalar output: `z` is `r × N'` and `z_dot` its
/// forward difference.
#[derive(Clone, Debug)]
pub struct OutputStack {
    pub z: DMatrix<f64>,
    pub z_dot: DMatrix<f64>,
    pub retained: Range<usize>,
}

pub fn output_derivative_stack(y: &[f64], tau: f64, r: usize, scheme: Scheme) -> Result<OutputStack> {
    if !(tau > 0.0) {
        return Err(Error::input("tau must be positive"));
    }
    let plan = StencilPlan::new(r, scheme)?;
    let retained = plan.retained(y.len())?;
    let values = DMatrix::from_row_slice(1, y.len(), y);
    let (d, d_dot) = stack_rows(&values, &plan, tau, &retained);
    let z = DMatrix::from_fn(r, d.len(), |j, k| d[k][(j, 0)]);
    let z_dot = DMatrix::from_fn(r, d.len(), |j, k| d_dot[k][(j, 0)]);
    Ok(OutputStack { z, z_dot, retained })
}
