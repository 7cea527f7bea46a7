//! Observable dictionaries: tensor products of probabilist Hermite
//! polynomials plus unary augmentations, and their derivative stacks.

mod stack;
mod stencil;

pub use stack::{build_stacked_data, output_derivative_stack, OutputStack, StackedDictionaryData};
pub use stencil::{finite_difference, Scheme, Stencil, StencilPlan};

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilist Hermite polynomial `He_n(x)` by the three-term recurrence.
pub fn hermite(n: u32, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if n == 0 {
        return prev;
    }
    for k in 1..n {
        let next = x * cur - k as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// `He_0(x) .. He_p(x)`.
pub fn hermite_table(p: u32, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(p as usize + 1);
    out.push(1.0);
    if p >= 1 {
        out.push(x);
    }
    for k in 1..p as usize {
        out.push(x * out[k] - k as f64 * out[k - 1]);
    }
    out
}

/// Monomial coefficients `c_0..c_n` of `He_n`.
pub fn hermite_monomial_coeffs(n: u32) -> Vec<f64> {
    let mut prev = vec![1.0];
    if n == 0 {
        return prev;
    }
    let mut cur = vec![0.0, 1.0];
    for k in 1..n as usize {
        let mut next = vec![0.0; k + 2];
        for (i, c) in cur.iter().enumerate() {
            next[i + 1] += c;
        }
        for (i, c) in prev.iter().enumerate() {
            next[i] -= k as f64 * c;
        }
        prev = cur;
        cur = next;
    }
    cur
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugFn {
    Sin,
    Cos,
    Exp,
}

impl AugFn {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            AugFn::Sin => x.sin(),
            AugFn::Cos => x.cos(),
            AugFn::Exp => x.exp(),
        }
    }
}

/// A named unary function of one (zero-based) coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Augmentation {
    #[serde(rename = "fn")]
    pub func: AugFn,
    pub coord: usize,
}

fn default_true() -> bool {
    true
}

/// Dictionary descriptor `{dim, max_order, augmentations}`; the optional
/// fields cap the total degree and drop the constant entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DictSpec {
    pub dim: usize,
    pub max_order: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_total_degree: Option<u32>,
    #[serde(default = "default_true")]
    pub include_constant: bool,
    #[serde(default)]
    pub augmentations: Vec<Augmentation>,
}

impl DictSpec {
    pub fn tensor(dim: usize, max_order: u32) -> Self {
        DictSpec {
            dim,
            max_order,
            max_total_degree: None,
            include_constant: true,
            augmentations: Vec::new(),
        }
    }

    pub fn without_constant(mut self) -> Self {
        self.include_constant = false;
        self
    }

    pub fn total_degree(mut self, cap: u32) -> Self {
        self.max_total_degree = Some(cap);
        self
    }

    pub fn augment(mut self, func: AugFn, coord: usize) -> Self {
        self.augmentations.push(Augmentation { func, coord });
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Entry {
    /// `Π_i He_{n_i}(x_i)`.
    Hermite(Vec<u32>),
    Aug(Augmentation),
}

impl Entry {
    pub fn degree(&self) -> Option<u32> {
        match self {
            Entry::Hermite(m) => Some(m.iter().sum()),
            Entry::Aug(_) => None,
        }
    }
}

impl fmt::Display for Entry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Entry::Hermite(m) if m.iter().all(|n| *n == 0) => write!(f, "1"),
            Entry::Hermite(m) => {
                let parts: Vec<String> = m
                    .iter()
                    .enumerate()
                    .filter(|(_, n)| **n > 0)
                    .map(|(i, n)| format!("H{n}(x{})", i + 1))
                    .collect();
                write!(f, "{}", parts.join("*"))
            }
            Entry::Aug(a) => {
                let name = match a.func {
                    AugFn::Sin => "sin",
                    AugFn::Cos => "cos",
                    AugFn::Exp => "exp",
                };
                write!(f, "{name}(x{})", a.coord + 1)
            }
        }
    }
}

/// Ordered basis of scalar observables. Hermite entries come first in
/// lexicographic multi-index order (first coordinate most significant),
/// then augmentations in the order given.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary {
    pub spec: DictSpec,
    pub entries: Vec<Entry>,
}

impl Dictionary {
    pub fn new(spec: DictSpec) -> Result<Self> {
        if spec.dim == 0 {
            return Err(Error::input("dictionary dimension must be positive"));
        }
        let mut entries = Vec::new();
        let d = spec.dim;
        let p = spec.max_order;
        let total = (p as u64 + 1).checked_pow(d as u32).unwrap_or(u64::MAX);
        if total > 2_000_000 {
            return Err(Error::input(format!(
                "per-coordinate grid (max_order {p}, dim {d}) is too large"
            )));
        }
        let mut idx = vec![0u32; d];
        'grid: loop {
            let deg: u32 = idx.iter().sum();
            let keep = (spec.include_constant || deg > 0)
                && spec.max_total_degree.is_none_or(|cap| deg <= cap);
            if keep {
                entries.push(Entry::Hermite(idx.clone()));
            }
            // odometer, last coordinate fastest
            for k in (0..d).rev() {
                if idx[k] < p {
                    idx[k] += 1;
                    continue 'grid;
                }
                idx[k] = 0;
            }
            break;
        }
        for (i, a) in spec.augmentations.iter().enumerate() {
            if a.coord >= d {
                return Err(Error::input(format!(
                    "augmentation coordinate {} out of range for dimension {d}",
                    a.coord
                )));
            }
            if spec.augmentations[..i].contains(a) {
                return Err(Error::input(format!("duplicate augmentation {a:?}")));
            }
            entries.push(Entry::Aug(*a));
        }
        if entries.is_empty() {
            return Err(Error::input("dictionary has no entries"));
        }
        Ok(Dictionary { spec, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn constant_index(&self) -> Option<usize> {
        self.entries
            .iter()
            .position(|e| matches!(e, Entry::Hermite(m) if m.iter().all(|n| *n == 0)))
    }

    /// Index of `He_1(x_coord)`.
    pub fn linear_index(&self, coord: usize) -> Option<usize> {
        self.entries.iter().position(|e| match e {
            Entry::Hermite(m) => m.iter().enumerate().all(|(i, n)| *n == u32::from(i == coord)),
            Entry::Aug(_) => false,
        })
    }

    /// Indices of the degree-one Hermite entries, by coordinate.
    pub fn first_order_indices(&self) -> Vec<usize> {
        (0..self.dim()).filter_map(|c| self.linear_index(c)).collect()
    }

    pub fn index_of(&self, entry: &Entry) -> Option<usize> {
        self.entries.iter().position(|e| e == entry)
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::input(format!(
                "point has dimension {len}, dictionary expects {}",
                self.dim()
            )));
        }
        Ok(())
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let tables: Vec<Vec<f64>> = x.iter().map(|v| hermite_table(self.spec.max_order, *v)).collect();
        for (o, e) in out.iter_mut().zip(&self.entries) {
            *o = match e {
                Entry::Hermite(m) => m.iter().zip(&tables).map(|(n, t)| t[*n as usize]).product(),
                Entry::Aug(a) => a.func.eval(x[a.coord]),
            };
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x.len())?;
        let mut out = DVector::zeros(self.len());
        self.eval_into(x.as_slice(), out.as_mut_slice());
        Ok(out)
    }

    /// Column `t` is the dictionary evaluated at column `t` of `points`.
    pub fn eval_matrix(&self, points: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(points.nrows())?;
        let mut out = DMatrix::zeros(self.len(), points.ncols());
        for j in 0..points.ncols() {
            let x: Vec<f64> = points.column(j).iter().copied().collect();
            let mut col = vec![0.0; self.len()];
            self.eval_into(&x, &mut col);
            out.set_column(j, &DVector::from_vec(col));
        }
        Ok(out)
    }

    /// Expands `Σ c_i entry_i` into monomials `x^m`. Fails when an
    /// augmentation carries a nonzero coefficient.
    pub fn to_monomials(&self, coeffs: &[f64]) -> Result<BTreeMap<Vec<u32>, f64>> {
        if coeffs.len() != self.len() {
            return Err(Error::input("coefficient length does not match dictionary"));
        }
        let polys: Vec<Vec<f64>> = (0..=self.spec.max_order).map(hermite_monomial_coeffs).collect();
        let mut out: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        for (c, e) in coeffs.iter().zip(&self.entries) {
            if *c == 0.0 {
                continue;
            }
            let m = match e {
                Entry::Hermite(m) => m,
                Entry::Aug(_) => {
                    return Err(Error::input("augmentations have no monomial expansion"));
                }
            };
            // product of the per-coordinate polynomials
            let mut terms: Vec<(Vec<u32>, f64)> = vec![(vec![0; self.dim()], *c)];
            for (i, n) in m.iter().enumerate() {
                let poly = &polys[*n as usize];
                let mut next = Vec::new();
                for (mono, v) in &terms {
                    for (pow, pc) in poly.iter().enumerate() {
                        if *pc != 0.0 {
                            let mut mm = mono.clone();
                            mm[i] = pow as u32;
                            next.push((mm, v * pc));
                        }
                    }
                }
                terms = next;
            }
            for (mono, v) in terms {
                *out.entry(mono).or_insert(0.0) += v;
            }
        }
        out.retain(|_, v| *v != 0.0);
        Ok(out)
    }

    /// Hermite coefficients of a polynomial given as monomials, using
    /// `x^n = Σ_j n!/(j! 2^j (n−2j)!) He_{n−2j}(x)`. Fails when a needed
    /// entry is absent from the dictionary.
    pub fn from_monomials(&self, terms: &BTreeMap<Vec<u32>, f64>) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.len()];
        for (mono, c) in terms {
            if mono.len() != self.dim() {
                return Err(Error::input("monomial dimension does not match dictionary"));
            }
            let mut parts: Vec<(Vec<u32>, f64)> = vec![(Vec::with_capacity(self.dim()), *c)];
            for &n in mono {
                let mut next = Vec::new();
                for (idx, v) in &parts {
                    for (k, w) in power_in_hermite(n) {
                        let mut m = idx.clone();
                        m.push(k);
                        next.push((m, v * w));
                    }
                }
                parts = next;
            }
            for (m, v) in parts {
                let i = self.index_of(&Entry::Hermite(m.clone())).ok_or_else(|| {
                    Error::input(format!("dictionary lacks entry {}", Entry::Hermite(m)))
                })?;
                out[i] += v;
            }
        }
        Ok(out)
    }
}

fn power_in_hermite(n: u32) -> Vec<(u32, f64)> {
    let fact = |k: u32| (1..=k as u64).map(|v| v as f64).product::<f64>();
    (0..=n / 2)
        .map(|j| (n - 2 * j, fact(n) / (fact(j) * 2f64.powi(j as i32) * fact(n - 2 * j))))
        .collect()
}

/// Evaluates a monomial expansion at `x`.
pub fn eval_monomials(terms: &BTreeMap<Vec<u32>, f64>, x: &[f64]) -> f64 {
    terms
        .iter()
        .map(|(m, c)| c * m.iter().zip(x).map(|(p, v)| v.powi(*p as i32)).product::<f64>())
        .sum()
}
