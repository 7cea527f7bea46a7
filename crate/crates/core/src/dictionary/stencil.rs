//! Finite-difference stencils, their compositions and Peano kernels.

use std::collections::BTreeMap;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Forward,
    #[default]
    Central,
}

/// `Σ c_i s_{t+i} / τ^order` approximates the `order`-th derivative at `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Stencil {
    pub order: usize,
    pub terms: Vec<(i64, f64)>,
}

impl Stencil {
    pub fn identity() -> Self {
        Stencil {
            order: 0,
            terms: vec![(0, 1.0)],
        }
    }

    pub fn forward() -> Self {
        Stencil {
            order: 1,
            terms: vec![(0, -1.0), (1, 1.0)],
        }
    }

    pub fn central() -> Self {
        Stencil {
            order: 1,
            terms: vec![(-1, -0.5), (1, 0.5)],
        }
    }

    pub fn first(scheme: Scheme) -> Self {
        match scheme {
            Scheme::Forward => Self::forward(),
            Scheme::Central => Self::central(),
        }
    }

    /// Stencil of the `order`-th derivative built by repeating `scheme`.
    pub fn derivative(order: usize, scheme: Scheme) -> Self {
        let base = Self::first(scheme);
        (0..order).fold(Self::identity(), |acc, _| acc.compose(&base))
    }

    pub fn compose(&self, other: &Stencil) -> Stencil {
        let mut acc: BTreeMap<i64, f64> = BTreeMap::new();
        for (i, a) in &self.terms {
            for (j, b) in &other.terms {
                *acc.entry(i + j).or_insert(0.0) += a * b;
            }
        }
        Stencil {
            order: self.order + other.order,
            terms: acc.into_iter().filter(|(_, c)| *c != 0.0).collect(),
        }
    }

    pub fn min_offset(&self) -> i64 {
        self.terms.iter().map(|t| t.0).min().unwrap_or(0)
    }

    pub fn max_offset(&self) -> i64 {
        self.terms.iter().map(|t| t.0).max().unwrap_or(0)
    }

    /// Applies the stencil to scalar samples at index `t`.
    pub fn apply(&self, samples: &[f64], t: usize, tau: f64) -> f64 {
        let s: f64 = self
            .terms
            .iter()
            .map(|(i, c)| c * samples[(t as i64 + i) as usize])
            .sum();
        s / tau.powi(self.order as i32)
    }

    /// Applies the stencil to the columns of `samples` at column `t`.
    pub fn apply_columns(&self, samples: &DMatrix<f64>, t: usize, tau: f64) -> DVector<f64> {
        let mut out = DVector::zeros(samples.nrows());
        for (i, c) in &self.terms {
            out.axpy(*c, &samples.column((t as i64 + i) as usize), 1.0);
        }
        out / tau.powi(self.order as i32)
    }

    /// Interval weights of the Peano kernel: the stencil of a function
    /// equals `Σ_a ∫_0^1 K(a+λ) s^{(order)}(t+a+λ) dλ` (in units of τ), and
    /// linear interpolation of the integrand on each interval `[a, a+1]`
    /// gives the returned `(a, w_left, w_right)`.
    pub fn peano_weights(&self) -> Vec<(i64, f64, f64)> {
        assert!(self.order >= 1, "Peano kernel needs a derivative stencil");
        let p = self.order as i32 - 1;
        let fact: f64 = (1..=self.order as u64 - 1).product::<u64>() as f64;
        let kernel = |s: f64| -> f64 {
            self.terms
                .iter()
                .map(|(i, c)| {
                    let d = *i as f64 - s;
                    if d <= 0.0 {
                        0.0
                    } else if p == 0 {
                        *c
                    } else {
                        c * d.powi(p)
                    }
                })
                .sum::<f64>()
                / fact
        };
        (self.min_offset()..self.max_offset())
            .map(|a| {
                let (mut w0, mut w1) = (0.0, 0.0);
                for (x, w) in GAUSS_LEGENDRE_8 {
                    let lam = 0.5 * (x + 1.0);
                    let k = kernel(a as f64 + lam) * 0.5 * w;
                    w0 += k * (1.0 - lam);
                    w1 += k * lam;
                }
                (a, w0, w1)
            })
            .collect()
    }
}

const GAUSS_LEGENDRE_8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (-0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
];

/// First-order finite difference of the columns of `series`.
pub fn finite_difference(
    series: &DMatrix<f64>,
    tau: f64,
    scheme: Scheme,
) -> Result<(DMatrix<f64>, Range<usize>)> {
    let l = series.ncols();
    let (min_len, range) = match scheme {
        Scheme::Forward => (2, 0..l.saturating_sub(1)),
        Scheme::Central => (3, 1..l.saturating_sub(1)),
    };
    if l < min_len {
        return Err(Error::input(format!(
            "series of length {l} is too short for a {scheme:?} difference (need {min_len})"
        )));
    }
    let s = Stencil::first(scheme);
    let mut out = DMatrix::zeros(series.nrows(), range.len());
    for (k, t) in range.clone().enumerate() {
        out.set_column(k, &s.apply_columns(series, t, tau));
    }
    Ok((out, range))
}

/// The row stencils of a depth-`r` derivative stack and their outer
/// forward differences.
#[derive(Clone, Debug)]
pub struct StencilPlan {
    pub rows: Vec<Stencil>,
    pub outer: Vec<Stencil>,
    /// Samples needed before and after a retained index.
    pub before: usize,
    pub after: usize,
}

impl StencilPlan {
    pub fn new(r: usize, scheme: Scheme) -> Result<Self> {
        if r == 0 {
            return Err(Error::input("stack depth r must be at least 1"));
        }
        let rows: Vec<Stencil> = (0..r).map(|j| Stencil::derivative(j, scheme)).collect();
        let outer: Vec<Stencil> = rows.iter().map(|s| Stencil::forward().compose(s)).collect();
        let all = rows.iter().chain(outer.iter());
        let before = all.clone().map(|s| -s.min_offset()).max().unwrap_or(0).max(0) as usize;
        let after = all.map(|s| s.max_offset()).max().unwrap_or(0).max(0) as usize;
        Ok(StencilPlan {
            rows,
            outer,
            before,
            after,
        })
    }

    pub fn r(&self) -> usize {
        self.rows.len()
    }

    /// Outer derivative of the deepest row; its Peano kernel aligns the
    /// regressors.
    pub fn top(&self) -> &Stencil {
        self.outer.last().expect("r >= 1")
    }

    /// Retained sample indices for a record with `states` samples.
    pub fn retained(&self, states: usize) -> Result<Range<usize>> {
        let need = self.before + self.after + 1;
        if states < need {
            return Err(Error::input(format!(
                "insufficient samples: depth {} needs at least {need} states, got {states}",
                self.r()
            )));
        }
        Ok(self.before..states - self.after)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn differences_of_small_series() {
        let s = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 4.0]);
        let (f, rf) = finite_difference(&s, 1.0, Scheme::Forward).unwrap();
        assert_eq!(f.as_slice(), &[1.0, 3.0]);
        assert_eq!(rf, 0..2);
        let (c, rc) = finite_difference(&s, 1.0, Scheme::Central).unwrap();
        assert_eq!(c.as_slice(), &[2.0]);
        assert_eq!(rc, 1..2);
        let short = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        assert!(finite_difference(&short, 1.0, Scheme::Central).is_err());
    }

    #[test]
    fn central_difference_of_sine() {
        let tau = 1e-3;
        let s = DMatrix::from_fn(1, 2000, |_, j| (j as f64 * tau).sin());
        let (d, range) = finite_difference(&s, tau, Scheme::Central).unwrap();
        let err = range
            .enumerate()
            .map(|(k, t)| (d[(0, k)] - (t as f64 * tau).cos()).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn composition_orders_and_offsets() {
        let c2 = Stencil::derivative(2, Scheme::Central);
        assert_eq!(c2.terms, vec![(-2, 0.25), (0, -0.5), (2, 0.25)]);
        let f3 = Stencil::derivative(3, Scheme::Forward);
        assert_eq!(f3.terms, vec![(0, -1.0), (1, 3.0), (2, -3.0), (3, 1.0)]);
    }

    #[test]
    fn peano_weights_integrate_to_one_and_reproduce_polynomials() {
        for scheme in [Scheme::Forward, Scheme::Central] {
            for order in 1..=6 {
                let s = Stencil::forward().compose(&Stencil::derivative(order - 1, scheme));
                let w = s.peano_weights();
                let total: f64 = w.iter().map(|(_, a, b)| a + b).sum();
                assert!((total - 1.0).abs() < 1e-12, "{scheme:?} {order}: {total}");
                // f = t^(order+1)/(order+1)!  has f^(order) = t, linear, so
                // interpolation is exact.
                let fact: f64 = (1..=order as u64 + 1).product::<u64>() as f64;
                let f = |t: f64| t.powi(order as i32 + 1) / fact;
                let t0 = 10i64;
                let samples: Vec<f64> = (0..30).map(|i| f(i as f64)).collect();
                let lhs = s.apply(&samples, t0 as usize, 1.0);
                let rhs: f64 = w
                    .iter()
                    .map(|(a, w0, w1)| w0 * (t0 + a) as f64 + w1 * (t0 + a + 1) as f64)
                    .sum();
                assert!((lhs - rhs).abs() < 1e-9, "{scheme:?} {order}: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn plan_retained_ranges() {
        let p = StencilPlan::new(1, Scheme::Forward).unwrap();
        assert_eq!(p.retained(301).unwrap(), 0..300);
        let p = StencilPlan::new(2, Scheme::Central).unwrap();
        assert_eq!((p.before, p.after), (1, 2));
        assert_eq!(p.retained(301).unwrap(), 1..299);
        assert!(p.retained(3).is_err());
    }
}
