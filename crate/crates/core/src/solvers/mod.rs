//! Fits of the linearizing transformation `(K, G, J)`: single-step
//! pseudoinverse formulas, the gradient method, variable projection, and
//! a lifted linear predictor for comparison.

mod baseline;
mod dataset;
mod fit;
mod linalg;
mod params;

pub use baseline::{linear_predictor_baseline, LinearPredictor};
pub use dataset::{Alignment, FitDataset};
pub use fit::{
    als_fit, kgfl_cost, kgfl_fit, kgfl_gradients, kgfl_run, single_step_fullstate, single_step_io,
    CostQuadratic, FitResult, KgflInit, KgflOptions, SingleStep, StepRule,
};
pub use linalg::{khatri_rao_row, pseudoinverse, pseudoinverse_rank, row_solve, PinvOptions, RowSolve};
pub use params::{DictRefs, Diagnostics, OutputMap, Transform, TransformParams};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Integrator chain `ż = Az + Bv` of length `r`.
#[derive(Clone, Debug, PartialEq)]
pub struct BrunovskyPair {
    pub r: usize,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl BrunovskyPair {
    pub fn new(r: usize) -> Result<Self> {
        if r == 0 {
            return Err(Error::input("relative degree must be at least 1"));
        }
        let a = DMatrix::from_fn(r, r, |i, j| if j == i + 1 { 1.0 } else { 0.0 });
        let mut b = DVector::zeros(r);
        b[r - 1] = 1.0;
        Ok(BrunovskyPair { r, a, b })
    }
}

pub fn brunovsky(r: usize) -> Result<BrunovskyPair> {
    BrunovskyPair::new(r)
}
