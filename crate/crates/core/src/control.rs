//! Closed-loop use of a transform: pole placement for the integrator
//! chain, control inversion, simulation, analytic oracles and the
//! trajectory loss.

use std::collections::BTreeMap;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dictionary::{AugFn, Augmentation, DictSpec, Dictionary, Entry, Scheme, Stencil};
use crate::error::{Error, Result};
use crate::geomverify::iterated_lie_derivative;
use crate::solvers::{DictRefs, Diagnostics, LinearPredictor, OutputMap, Transform, TransformParams};
use crate::systems::{rk4_sample, simulate_substeps, ControlAffineSystem, Trajectory, DIVERGENCE_LIMIT};

pub const ETA_MIN: f64 = 1e-6;

/// `v = F·z` for the integrator chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackGain {
    pub f: Vec<f64>,
    /// Target poles as `[re, im]`.
    pub poles: Vec<[f64; 2]>,
}

impl FeedbackGain {
    pub fn r(&self) -> usize {
        self.f.len()
    }

    pub fn apply(&self, z: &DVector<f64>) -> f64 {
        self.f.iter().zip(z.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn poles_complex(&self) -> Vec<Complex<f64>> {
        self.poles.iter().map(|p| Complex::new(p[0], p[1])).collect()
    }
}

fn check_conjugate_closed(poles: &[Complex<f64>]) -> Result<()> {
    let tol = 1e-9;
    let mut used = vec![false; poles.len()];
    for i in 0..poles.len() {
        if used[i] {
            continue;
        }
        used[i] = true;
        let p = poles[i];
        if !p.re.is_finite() || !p.im.is_finite() {
            return Err(Error::input("poles must be finite"));
        }
        if p.im.abs() <= tol * p.norm().max(1.0) {
            continue;
        }
        let partner = (0..poles.len()).find(|&j| !used[j] && (poles[j] - p.conj()).norm() <= tol * p.norm().max(1.0));
        match partner {
            Some(j) => used[j] = true,
            None => return Err(Error::input(format!("pole {p} has no conjugate partner"))),
        }
    }
    Ok(())
}

/// Real coefficients `a_0..a_{r−1}` of the monic polynomial with the given
/// roots.
pub fn monic_coefficients(poles: &[Complex<f64>]) -> Result<Vec<f64>> {
    check_conjugate_closed(poles)?;
    let mut c = vec![Complex::new(1.0, 0.0)];
    for p in poles {
        let mut next = vec![Complex::new(0.0, 0.0); c.len() + 1];
        for (i, ci) in c.iter().enumerate() {
            next[i + 1] += ci;
            next[i] -= ci * p;
        }
        c = next;
    }
    Ok(c[..poles.len()].iter().map(|z| z.re).collect())
}

/// `F = −(a_0, …, a_{r−1})` for the companion-form chain.
pub fn pole_place(r: usize, poles: &[Complex<f64>]) -> Result<FeedbackGain> {
    if r == 0 || poles.len() != r {
        return Err(Error::input(format!("need exactly {r} poles, got {}", poles.len())));
    }
    let a = monic_coefficients(poles)?;
    Ok(FeedbackGain {
        f: a.iter().map(|v| -v).collect(),
        poles: poles.iter().map(|p| [p.re, p.im]).collect(),
    })
}

/// State feedback `u = f·x` placing the eigenvalues of `A + b fᵀ`
/// (Ackermann's formula).
pub fn ackermann(a: &DMatrix<f64>, b: &DVector<f64>, poles: &[Complex<f64>]) -> Result<DVector<f64>> {
    let n = b.len();
    if a.shape() != (n, n) || poles.len() != n {
        return Err(Error::input("Ackermann needs a square A, matching b and n poles"));
    }
    let coeffs = monic_coefficients(poles)?;
    let mut ctrb = DMatrix::zeros(n, n);
    let mut col = b.clone();
    for i in 0..n {
        ctrb.set_column(i, &col);
        col = a * col;
    }
    let inv = ctrb
        .try_inverse()
        .ok_or_else(|| Error::Numeric("pair (A, b) is not controllable".into()))?;
    // p(A) = A^n + Σ a_i A^i
    let mut pa = DMatrix::zeros(n, n);
    let mut pow = DMatrix::identity(n, n);
    for c in &coeffs {
        pa += &pow * *c;
        pow = &pow * a;
    }
    pa += pow;
    Ok(-(inv.row(n - 1) * pa).transpose())
}

/// `z` from a trailing history of `ĥ` samples by central differences,
/// centered `r − 1` samples back.
pub fn state_transform_history(h: &[f64], tau: f64, r: usize) -> Result<DVector<f64>> {
    let need = 2 * (r.max(1) - 1) + 1;
    if r == 0 {
        return Err(Error::input("r must be at least 1"));
    }
    if h.len() < need {
        return Err(Error::input(format!("need {need} history samples, have {}", h.len())));
    }
    let c = h.len() - r;
    Ok(DVector::from_fn(r, |j, _| Stencil::derivative(j, Scheme::Central).apply(h, c, tau)))
}

/// `z_j = L_f^j ĥ(x)` along the drift.
pub fn state_transform_lie(t: &Transform, sys: &ControlAffineSystem, x: &DVector<f64>) -> Result<DVector<f64>> {
    let f = sys.drift_field();
    let h = |y: &DVector<f64>| t.h(y).unwrap_or(f64::NAN);
    let mut z = DVector::zeros(t.r());
    for j in 0..t.r() {
        z[j] = iterated_lie_derivative(&h, &*f, j, x)?;
    }
    Ok(z)
}

/// `u = (v − ζ̂(x))/η̂(x)`.
pub fn control_from_v(t: &Transform, x: &DVector<f64>, v: f64, eta_min: f64) -> Result<f64> {
    let eta = t.eta(x)?;
    if !(eta.abs() >= eta_min) {
        return Err(Error::SingularControl {
            step: 0,
            eta,
            x: x.iter().copied().collect(),
        });
    }
    Ok((v - t.zeta(x)?) / eta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClosedLoopOptions {
    pub tau: f64,
    pub t_end: f64,
    pub substeps: usize,
    pub eta_min: f64,
    /// Regulate `z` to the transform of the origin rather than to zero.
    pub z_ref: bool,
}

impl Default for ClosedLoopOptions {
    fn default() -> Self {
        ClosedLoopOptions {
            tau: 0.01,
            t_end: 10.0,
            substeps: 1,
            eta_min: ETA_MIN,
            z_ref: true,
        }
    }
}

impl ClosedLoopOptions {
    pub fn steps(&self) -> usize {
        (self.t_end / self.tau).round() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LoopStatus {
    Ok,
    SingularControl { step: usize },
    Diverged { step: usize },
}

impl LoopStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, LoopStatus::Ok)
    }

    pub fn label(&self) -> &'static str {
        match self {
            LoopStatus::Ok => "ok",
            LoopStatus::SingularControl { .. } => "singular",
            LoopStatus::Diverged { .. } => "diverged",
        }
    }
}

#[derive(Clone, Debug)]
pub struct ClosedLoopRun {
    pub traj: Trajectory,
    /// Per applied input; `None` during warm-up.
    pub z: Vec<Option<DVector<f64>>>,
    pub v: Vec<Option<f64>>,
    pub status: LoopStatus,
}

impl ClosedLoopRun {
    /// `z1..zr, v` columns for the trajectory CSV.
    pub fn extra_columns(&self, r: usize) -> Vec<(String, Vec<Option<f64>>)> {
        let mut cols: Vec<(String, Vec<Option<f64>>)> = (0..r)
            .map(|j| (format!("z{}", j + 1), self.z.iter().map(|z| z.as_ref().map(|z| z[j])).collect()))
            .collect();
        cols.push(("v".into(), self.v.clone()));
        cols
    }
}

fn finish(sys: &ControlAffineSystem, tau: f64, cols: Vec<DVector<f64>>, inputs: Vec<f64>) -> Trajectory {
    let n = sys.n;
    Trajectory {
        tau,
        states: DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]),
        inputs,
        exact_derivs: None,
        seed: None,
    }
}

/// Runs `u = (F(z − z_ref) − ζ̂)/η̂` with `z` from the trailing history of
/// `ĥ` (central differences, `r − 1` samples of delay). The input is zero
/// until the history window is full.
pub fn closed_loop_simulate(
    sys: &ControlAffineSystem,
    t: &Transform,
    gain: &FeedbackGain,
    x0: &DVector<f64>,
    opts: &ClosedLoopOptions,
) -> Result<ClosedLoopRun> {
    let r = t.r();
    if gain.r() != r {
        return Err(Error::input(format!("gain has length {}, transform has r = {r}", gain.r())));
    }
    if x0.len() != sys.n || t.dim() != sys.n {
        return Err(Error::input("state dimension mismatch"));
    }
    if !(opts.tau > 0.0) || !(opts.t_end > 0.0) {
        return Err(Error::input("tau and t_end must be positive"));
    }
    let steps = opts.steps();
    let h_ref = if opts.z_ref { t.h(&DVector::zeros(sys.n))? } else { 0.0 };
    let mut hist = Vec::with_capacity(steps + 1);
    let mut cols = vec![x0.clone()];
    let mut inputs = Vec::with_capacity(steps);
    let mut zs = Vec::with_capacity(steps);
    let mut vs = Vec::with_capacity(steps);
    let window = 2 * (r - 1) + 1;
    let mut status = LoopStatus::Ok;
    for step in 0..steps {
        let x = cols[step].clone();
        hist.push(t.h(&x)?);
        let (u, z, v) = if hist.len() < window {
            (0.0, None, None)
        } else {
            let mut z = state_transform_history(&hist[hist.len() - window..], opts.tau, r)?;
            z[0] -= h_ref;
            let v = gain.apply(&z);
            match control_from_v(t, &x, v, opts.eta_min) {
                Ok(u) => (u, Some(z), Some(v)),
                Err(Error::SingularControl { .. }) => {
                    status = LoopStatus::SingularControl { step };
                    break;
                }
                Err(e) => return Err(e),
            }
        };
        match rk4_sample(sys, &x, u, opts.tau, opts.substeps) {
            Ok(y) if y.iter().all(|v| v.is_finite() && v.abs() <= DIVERGENCE_LIMIT) => {
                cols.push(y);
                inputs.push(u);
                zs.push(z);
                vs.push(v);
            }
            _ => {
                status = LoopStatus::Diverged { step };
                break;
            }
        }
    }
    Ok(ClosedLoopRun {
        traj: finish(sys, opts.tau, cols, inputs),
        z: zs,
        v: vs,
        status,
    })
}

/// Open-loop (`u ≡ 0`) or state-feedback (`u = f·x`) run with the same
/// status reporting.
pub fn state_feedback_simulate(
    sys: &ControlAffineSystem,
    f: Option<&DVector<f64>>,
    x0: &DVector<f64>,
    opts: &ClosedLoopOptions,
) -> Result<ClosedLoopRun> {
    let policy = |_: usize, x: &DVector<f64>| f.map_or(0.0, |f| f.dot(x));
    let (traj, status) = match simulate_substeps(sys, x0, policy, opts.tau, opts.steps(), opts.substeps) {
        Ok(tr) => (tr, LoopStatus::Ok),
        Err(Error::Diverged { step, partial }) => (*partial, LoopStatus::Diverged { step }),
        Err(e) => return Err(e),
    };
    let n = traj.inputs.len();
    Ok(ClosedLoopRun {
        traj,
        z: vec![None; n],
        v: vec![None; n],
        status,
    })
}

/// State feedback for the lifted linear predictor: the rows and columns
/// of the first-order entries give a linear model of `x`, placed by
/// Ackermann's formula.
pub fn baseline_feedback(lp: &LinearPredictor, dict: &Dictionary, poles: &[Complex<f64>]) -> Result<DVector<f64>> {
    let idx: Vec<usize> = (0..dict.dim())
        .map(|c| {
            dict.linear_index(c)
                .ok_or_else(|| Error::input("baseline dictionary needs every first-order entry"))
        })
        .collect::<Result<_>>()?;
    let n = idx.len();
    let a = DMatrix::from_fn(n, n, |i, j| lp.a[(idx[i], idx[j])]);
    let b = DVector::from_fn(n, |i, _| lp.b[idx[i]]);
    ackermann(&a, &b, poles)
}

/// Sum of squared state differences over the samples in `[0, T]`;
/// infinite when either run stops before `T`.
pub fn loss_qt(model: &Trajectory, dd: &Trajectory, horizon: f64) -> Result<f64> {
    if (model.tau - dd.tau).abs() > 1e-12 * model.tau.max(dd.tau) {
        return Err(Error::input("trajectories use different sampling intervals"));
    }
    if model.n() != dd.n() || model.states.ncols() == 0 || dd.states.ncols() == 0 {
        return Err(Error::input("trajectories have different state dimensions"));
    }
    if (model.states.column(0) - dd.states.column(0)).amax() > 1e-12 {
        return Err(Error::input("trajectories start from different states"));
    }
    let samples = (horizon / model.tau + 1e-9).floor() as usize;
    if model.states.ncols() <= samples || dd.states.ncols() <= samples {
        return Ok(f64::INFINITY);
    }
    Ok((0..=samples)
        .map(|t| (model.states.column(t) - dd.states.column(t)).norm_squared())
        .sum())
}

fn poly(terms: &[(&[u32], f64)]) -> BTreeMap<Vec<u32>, f64> {
    let mut out = BTreeMap::new();
    for (m, c) in terms {
        *out.entry(m.to_vec()).or_insert(0.0) += c;
    }
    out
}

fn model_diag(note: &str) -> Diagnostics {
    Diagnostics {
        solver: "model".into(),
        final_cost: None,
        sweeps: 0,
        cost_trace_path: None,
        warnings: vec![note.into()],
    }
}

/// `x₁ − 0.5(1−x₁²)x₂` as printed for the oscillator.
pub fn alpha_printed(x: &[f64]) -> f64 {
    x[0] - 0.5 * (1.0 - x[0] * x[0]) * x[1]
}

/// Linearizing pair for `h = x₁`: `ζ = f₂ = −x₁ + 0.5(1−x₁²)x₂`.
pub fn vdp_zeta(x: &[f64]) -> f64 {
    -alpha_printed(x)
}

pub fn vdp_eta(x: &[f64]) -> f64 {
    1.0 - x[1] * x[1]
}

/// `α = −ζ/η`, the feedback that makes `L²h` vanish.
pub fn alpha_eff(x: &[f64]) -> Option<f64> {
    let eta = vdp_eta(x);
    (eta.abs() >= ETA_MIN).then(|| -vdp_zeta(x) / eta)
}

/// The oscillator's model-based transform (`h = x₁`) packaged like a fit.
pub fn vdp_model_oracle() -> Result<TransformParams> {
    let phi_spec = DictSpec::tensor(2, 1).without_constant();
    let phi = Dictionary::new(phi_spec.clone())?;
    let spec = DictSpec::tensor(2, 2);
    let dict = Dictionary::new(spec.clone())?;
    let mut k = vec![0.0; phi.len()];
    k[phi.linear_index(0).expect("first-order entry")] = 1.0;
    let g = dict.from_monomials(&poly(&[(&[1, 0], -1.0), (&[0, 1], 0.5), (&[2, 1], -0.5)]))?;
    let j = dict.from_monomials(&poly(&[(&[0, 0], 1.0), (&[0, 2], -1.0)]))?;
    Ok(TransformParams {
        r: 2,
        k,
        g,
        j,
        dict_refs: DictRefs {
            phi: Some(phi_spec),
            theta: spec.clone(),
            gamma: spec,
        },
        output: None,
        diagnostics: model_diag("analytic transform h = x1"),
    })
}

/// Model-based transform for the output `y = ½x₁²`:
/// `ζ = x₂² − x₁² + 0.5x₁x₂ − 0.5x₁³x₂`, `η = x₁(1 − x₂²)`.
pub fn vdp_io_oracle() -> Result<TransformParams> {
    let spec = DictSpec::tensor(2, 3);
    let dict = Dictionary::new(spec.clone())?;
    let g = dict.from_monomials(&poly(&[
        (&[0, 2], 1.0),
        (&[2, 0], -1.0),
        (&[1, 1], 0.5),
        (&[3, 1], -0.5),
    ]))?;
    let j = dict.from_monomials(&poly(&[(&[1, 0], 1.0), (&[1, 2], -1.0)]))?;
    Ok(TransformParams {
        r: 2,
        k: vec![1.0],
        g,
        j,
        dict_refs: DictRefs {
            phi: None,
            theta: spec.clone(),
            gamma: spec,
        },
        output: Some(OutputMap::HalfSquare { coord: 0 }),
        diagnostics: model_diag("analytic transform y = x1^2/2"),
    })
}

/// Model-based transform of the six-state chain for `h = x₁`:
/// `ζ = P(a₆x₁² − a₇ sin x₂ + a₈x₃² + a₉x₄²)`, `η = P a₁₀(1 − x₁²)` with
/// `P = a₁⋯a₅`. `theta` must contain the needed monomials and `sin(x₂)`.
pub fn sixdim_oracle(a: &[f64; 10], phi: DictSpec, theta: DictSpec) -> Result<TransformParams> {
    let p: f64 = a[..5].iter().product();
    let e = |i: usize| {
        let mut m = vec![0u32; 6];
        m[i] = 2;
        m
    };
    let mut zeta = BTreeMap::new();
    for (i, c) in [(0, a[5]), (2, a[7]), (3, a[8])] {
        *zeta.entry(e(i)).or_insert(0.0) += p * c;
    }
    let dict = Dictionary::new(theta.clone())?;
    let mut g = dict.from_monomials(&zeta)?;
    let sin2 = dict
        .index_of(&Entry::Aug(Augmentation {
            func: AugFn::Sin,
            coord: 1,
        }))
        .ok_or_else(|| Error::input("theta dictionary needs sin(x2)"))?;
    g[sin2] -= p * a[6];
    let eta = BTreeMap::from([(vec![0u32; 6], p * a[9]), (e(0), -p * a[9])]);
    let j = dict.from_monomials(&eta)?;
    let phid = Dictionary::new(phi.clone())?;
    let mut k = vec![0.0; phid.len()];
    k[phid.linear_index(0).ok_or_else(|| Error::input("phi dictionary needs H1(x1)"))?] = 1.0;
    Ok(TransformParams {
        r: 6,
        k,
        g,
        j,
        dict_refs: DictRefs {
            phi: Some(phi),
            theta: theta.clone(),
            gamma: theta,
        },
        output: None,
        diagnostics: model_diag("analytic transform h = x1"),
    })
}
