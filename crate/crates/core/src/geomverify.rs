//! Numeric differential geometry: Jacobians, Lie derivatives and brackets,
//! adjoint chains, distribution rank, involutivity, relative degree and
//! closed-loop nilpotency.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::systems::ControlAffineSystem;

pub type VField<'a> = dyn Fn(&DVector<f64>) -> DVector<f64> + Sync + 'a;
pub type SField<'a> = dyn Fn(&DVector<f64>) -> f64 + Sync + 'a;

/// Margin around declared singular sets inside which points are skipped.
pub const SINGULAR_MARGIN: f64 = 0.1;

/// Step for differentiating a function that is itself the result of
/// `depth` nested numeric differentiations: `ε^{1/(depth+3)}`, so the
/// outermost plain case uses the cube root of machine epsilon.
pub fn nested_step(depth: usize) -> f64 {
    f64::EPSILON.powf(1.0 / (depth as f64 + 3.0))
}

fn check_finite(v: &DVector<f64>) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain("non-finite field evaluation".into()))
    }
}

/// Central-difference Jacobian; column `j` uses step `h·(1+|x_j|)`.
pub fn numeric_jacobian(field: &VField, x: &DVector<f64>, h: f64) -> Result<DMatrix<f64>> {
    if !(h > 0.0) {
        return Err(Error::input("step must be positive"));
    }
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let hj = h * (1.0 + x[j].abs());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += hj;
        xm[j] -= hj;
        let fp = field(&xp);
        let fm = field(&xm);
        check_finite(&fp)?;
        check_finite(&fm)?;
        cols.push((fp - fm) / (2.0 * hj));
    }
    Ok(DMatrix::from_columns(&cols))
}

pub fn numeric_gradient(phi: &SField, x: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
    let wrapped = |y: &DVector<f64>| DVector::from_element(1, phi(y));
    Ok(numeric_jacobian(&wrapped, x, h)?.row(0).transpose())
}

/// `∇φ(x)·field(x)`.
pub fn lie_derivative(phi: &SField, field: &VField, x: &DVector<f64>, h: f64) -> Result<f64> {
    let fx = field(x);
    check_finite(&fx)?;
    Ok(numeric_gradient(phi, x, h)?.dot(&fx))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BracketConvention {
    /// `ad_f g = J_g f − J_f g`.
    #[default]
    JgfMinusJfg,
    /// The opposite sign.
    JfgMinusJgf,
}

pub fn lie_bracket_with(
    f: &VField,
    g: &VField,
    x: &DVector<f64>,
    h: f64,
    conv: BracketConvention,
) -> Result<DVector<f64>> {
    let jf = numeric_jacobian(f, x, h)?;
    let jg = numeric_jacobian(g, x, h)?;
    let fx = f(x);
    let gx = g(x);
    check_finite(&fx)?;
    check_finite(&gx)?;
    let v = &jg * fx - &jf * gx;
    Ok(match conv {
        BracketConvention::JgfMinusJfg => v,
        BracketConvention::JfgMinusJgf => -v,
    })
}

pub fn lie_bracket(f: &VField, g: &VField, x: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
    lie_bracket_with(f, g, x, h, BracketConvention::JgfMinusJfg)
}

/// `ad_f^k g` at `x`; the level-`k` field is differentiated with
/// [`nested_step`]`(k−1)` scaled by `scale`.
fn ad_power(f: &VField, g: &VField, k: usize, x: &DVector<f64>, scale: f64) -> Result<DVector<f64>> {
    if k == 0 {
        let gx = g(x);
        check_finite(&gx)?;
        return Ok(gx);
    }
    let prev = |y: &DVector<f64>| ad_power(f, g, k - 1, y, scale).unwrap_or_else(|_| DVector::from_element(y.len(), f64::NAN));
    let j_prev = numeric_jacobian(&prev, x, scale * nested_step(k - 1))?;
    let jf = numeric_jacobian(f, x, scale * nested_step(0))?;
    let fx = f(x);
    let prev_x = prev(x);
    check_finite(&prev_x)?;
    Ok(j_prev * fx - jf * prev_x)
}

/// `(g, ad_f g, …, ad_f^k g)` at `x`.
#[derive(Clone, Debug)]
pub struct AdjointChain {
    pub fields: Vec<DVector<f64>>,
    /// Estimated relative error per level (step-doubling comparison).
    pub rel_error: Vec<f64>,
    /// Set when some level's estimated relative error exceeds 10%.
    pub noisy: bool,
}

pub fn adjoint_chain(f: &VField, g: &VField, k: usize, x: &DVector<f64>) -> Result<AdjointChain> {
    let mut fields = Vec::with_capacity(k + 1);
    let mut rel_error = Vec::with_capacity(k + 1);
    let gnorm = g(x).norm();
    for level in 0..=k {
        let v = ad_power(f, g, level, x, 1.0)?;
        let err = if level == 0 {
            0.0
        } else {
            let v2 = ad_power(f, g, level, x, 2.0)?;
            (&v - v2).norm() / v.norm().max(gnorm).max(f64::MIN_POSITIVE)
        };
        fields.push(v);
        rel_error.push(err);
    }
    let noisy = rel_error.iter().any(|e| *e > 0.1);
    Ok(AdjointChain {
        fields,
        rel_error,
        noisy,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub x: Vec<f64>,
    pub values: Vec<f64>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcludedPoint {
    pub x: Vec<f64>,
    pub note: String,
}

/// Per-point outcomes of a geometric property; the verdict passes only if
/// every evaluated point passes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub property: String,
    pub tolerance: f64,
    pub points: Vec<PointRecord>,
    #[serde(default)]
    pub excluded: Vec<ExcludedPoint>,
    pub verdict: bool,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl GeometryReport {
    fn new(property: &str, tolerance: f64) -> Self {
        GeometryReport {
            property: property.to_string(),
            tolerance,
            points: Vec::new(),
            excluded: Vec::new(),
            verdict: true,
            notes: Vec::new(),
        }
    }

    fn push(&mut self, x: &DVector<f64>, values: Vec<f64>, pass: bool) {
        self.verdict &= pass;
        self.points.push(PointRecord {
            x: x.iter().copied().collect(),
            values,
            pass,
        });
    }

    fn exclude(&mut self, x: &DVector<f64>, note: impl Into<String>) {
        self.excluded.push(ExcludedPoint {
            x: x.iter().copied().collect(),
            note: note.into(),
        });
    }

    fn finish(mut self) -> Self {
        if self.points.is_empty() {
            self.verdict = false;
            self.notes.push("no evaluable points".into());
        }
        self
    }
}

fn singular_values(cols: &[DVector<f64>]) -> Vec<f64> {
    let m = DMatrix::from_columns(cols);
    let mut s: Vec<f64> = m.svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

fn numeric_rank(sv: &[f64], tol: f64) -> usize {
    let smax = sv.first().copied().unwrap_or(0.0);
    sv.iter().filter(|s| **s > tol * smax && **s > 0.0).count()
}

/// Rank of `[g, ad_f g, …, ad_f^{depth−1} g]` at each point. Values hold
/// the rank followed by the singular values; a point passes when the rank
/// equals `expected` (or always, when `expected` is `None`).
pub fn distribution_rank(
    sys: &ControlAffineSystem,
    depth: usize,
    points: &[DVector<f64>],
    tol: f64,
    expected: Option<usize>,
) -> Result<GeometryReport> {
    if depth == 0 {
        return Err(Error::input("span depth must be at least 1"));
    }
    let f = sys.drift_field();
    let g = sys.control_vector_field();
    let mut rep = GeometryReport::new(&format!("distribution_rank(depth={depth})"), tol);
    for x in points {
        if sys.near_singular(x, SINGULAR_MARGIN) {
            rep.exclude(x, "within singular-set margin");
            continue;
        }
        let chain = adjoint_chain(&*f, &*g, depth - 1, x)?;
        let sv = singular_values(&chain.fields);
        let rank = numeric_rank(&sv, tol);
        let pass = expected.is_none_or(|e| e == rank);
        let mut values = vec![rank as f64];
        values.extend(sv);
        rep.push(x, values, pass);
    }
    Ok(rep.finish())
}

/// Brackets every pair of spanning fields and checks membership in their
/// span by least-squares projection. Values hold the worst relative
/// residual at the point.
pub fn involutivity_check(
    sys: &ControlAffineSystem,
    depth: usize,
    points: &[DVector<f64>],
    tol: f64,
) -> Result<GeometryReport> {
    if depth == 0 {
        return Err(Error::input("span depth must be at least 1"));
    }
    let f = sys.drift_field();
    let g = sys.control_vector_field();
    let mut rep = GeometryReport::new(&format!("involutivity(depth={depth})"), tol);
    if depth == 1 {
        rep.notes.push("a single field is always involutive".into());
    }
    for x in points {
        if sys.near_singular(x, SINGULAR_MARGIN) {
            rep.exclude(x, "within singular-set margin");
            continue;
        }
        let span: Vec<DVector<f64>> = adjoint_chain(&*f, &*g, depth - 1, x)?.fields;
        let sv = singular_values(&span);
        let rank = numeric_rank(&sv, 1e-8);
        if rank < span.len() {
            rep.exclude(x, format!("rank-deficient span (rank {rank} of {})", span.len()));
            continue;
        }
        let basis = DMatrix::from_columns(&span);
        let pinv = basis
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::Numeric(e.to_string()))?;
        let mut worst: f64 = 0.0;
        for i in 0..depth {
            for j in (i + 1)..depth {
                let fi = |y: &DVector<f64>| ad_power(&*f, &*g, i, y, 1.0).unwrap_or_else(|_| DVector::from_element(y.len(), f64::NAN));
                let fj = |y: &DVector<f64>| ad_power(&*f, &*g, j, y, 1.0).unwrap_or_else(|_| DVector::from_element(y.len(), f64::NAN));
                let b = lie_bracket(&fi, &fj, x, nested_step(j))?;
                let resid = &b - &basis * (&pinv * &b);
                let scale = b.norm().max(basis.norm()).max(f64::MIN_POSITIVE);
                worst = worst.max(resid.norm() / scale);
            }
        }
        rep.push(x, vec![worst], worst <= tol);
    }
    Ok(rep.finish())
}

/// `L_field^k φ` at `x` by nested numeric gradients.
pub fn iterated_lie_derivative(phi: &SField, field: &VField, k: usize, x: &DVector<f64>) -> Result<f64> {
    fn go(phi: &SField, field: &VField, k: usize, x: &DVector<f64>) -> f64 {
        if k == 0 {
            return phi(x);
        }
        let inner = |y: &DVector<f64>| go(phi, field, k - 1, y);
        lie_derivative(&inner, field, x, nested_step(k - 1)).unwrap_or(f64::NAN)
    }
    let v = go(phi, field, k, x);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Domain("non-finite iterated Lie derivative".into()))
    }
}

/// Smallest `r ≤ kmax` with `|L_g L_f^{r−1} h(x)| > tol`.
pub fn relative_degree(
    sys: &ControlAffineSystem,
    h: &SField,
    x: &DVector<f64>,
    kmax: usize,
    tol: f64,
) -> Result<usize> {
    if kmax == 0 {
        return Err(Error::input("kmax must be at least 1"));
    }
    let f = sys.drift_field();
    let g = sys.control_vector_field();
    for r in 1..=kmax {
        let inner = |y: &DVector<f64>| iterated_lie_derivative(h, &*f, r - 1, y).unwrap_or(f64::NAN);
        let lg = lie_derivative(&inner, &*g, x, nested_step(r - 1))?;
        if !lg.is_finite() {
            return Err(Error::Domain("non-finite Lie derivative".into()));
        }
        if lg.abs() > tol {
            return Ok(r);
        }
    }
    Err(Error::Numeric(format!("relative degree not found up to {kmax}")))
}

/// Checks `|L_{f+gα}^r h| ≤ tol` at each point. Values hold
/// `L^0 h, …, L^r h`; the lower orders are reported for inspection and a
/// note records points where one of them vanishes within `tol`.
pub fn check_nilpotency(
    sys: &ControlAffineSystem,
    h: &SField,
    alpha: &(dyn Fn(&DVector<f64>) -> Option<f64> + Sync),
    r: usize,
    points: &[DVector<f64>],
    tol: f64,
) -> Result<GeometryReport> {
    let mut rep = GeometryReport::new(&format!("nilpotency(r={r})"), tol);
    rep.notes.push("stable-subspace (Gateaux derivative) condition not checked".into());
    let closed = |y: &DVector<f64>| match alpha(y) {
        Some(a) if a.is_finite() => sys.drift(y) + sys.control_field(y) * a,
        _ => DVector::from_element(y.len(), f64::NAN),
    };
    let mut degenerate = 0;
    for x in points {
        if sys.near_singular(x, SINGULAR_MARGIN) {
            rep.exclude(x, "within singular-set margin");
            continue;
        }
        if !alpha(x).is_some_and(f64::is_finite) {
            rep.exclude(x, "feedback undefined");
            continue;
        }
        let mut values = Vec::with_capacity(r + 1);
        let mut failed = false;
        for k in 0..=r {
            match iterated_lie_derivative(h, &closed, k, x) {
                Ok(v) => values.push(v),
                Err(_) => {
                    failed = true;
                    break;
                }
            }
        }
        if failed {
            rep.exclude(x, "feedback singular near point");
            continue;
        }
        if values[..r].iter().any(|v| v.abs() <= tol) {
            degenerate += 1;
        }
        let pass = values[r].abs() <= tol;
        rep.push(x, values, pass);
    }
    if degenerate > 0 {
        rep.notes.push(format!("{degenerate} points with a vanishing lower-order derivative"));
    }
    Ok(rep.finish())
}
