//! Control-affine systems `ẋ = f(x) + g(x)u`, fixed-step integration and
//! excitation data collection.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::util::write_atomic;

/// A vector field on `R^n`.
pub type Field = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// States with `|x_i| > DIVERGENCE_LIMIT` count as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e9;

/// Hypersurfaces `x[coord] = v` on which a model's control map degenerates.
#[derive(Clone, Debug, PartialEq)]
pub struct SingularSet {
    pub coord: usize,
    pub values: Vec<f64>,
}

impl SingularSet {
    pub fn distance(&self, x: &DVector<f64>) -> f64 {
        self.values
            .iter()
            .map(|v| (x[self.coord] - v).abs())
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone)]
pub struct ControlAffineSystem {
    pub name: String,
    pub n: usize,
    f: Field,
    g: Field,
    pub domain_box: Vec<(f64, f64)>,
    pub singular: Vec<SingularSet>,
}

impl fmt::Debug for ControlAffineSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlAffineSystem")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("domain_box", &self.domain_box)
            .field("singular", &self.singular)
            .finish()
    }
}

impl ControlAffineSystem {
    pub fn new(
        name: impl Into<String>,
        n: usize,
        f: Field,
        g: Field,
        domain_box: Vec<(f64, f64)>,
    ) -> Self {
        assert!(n >= 1 && domain_box.len() == n);
        ControlAffineSystem {
            name: name.into(),
            n,
            f,
            g,
            domain_box,
            singular: Vec::new(),
        }
    }

    pub fn with_singular_set(mut self, set: SingularSet) -> Self {
        self.singular.push(set);
        self
    }

    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.f)(x)
    }

    pub fn control_field(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.g)(x)
    }

    pub fn drift_field(&self) -> Field {
        self.f.clone()
    }

    pub fn control_vector_field(&self) -> Field {
        self.g.clone()
    }

    /// `f(x) + g(x)u`.
    pub fn eval_dynamics(&self, x: &DVector<f64>, u: f64) -> Result<DVector<f64>> {
        if x.len() != self.n {
            return Err(Error::input(format!(
                "{}: state has length {}, expected {}",
                self.name,
                x.len(),
                self.n
            )));
        }
        if !u.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("non-finite state or input"));
        }
        let dx = self.drift(x) + self.control_field(x) * u;
        if dx.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("{}: non-finite field value", self.name)));
        }
        Ok(dx)
    }

    pub fn in_domain(&self, x: &DVector<f64>) -> bool {
        x.iter()
            .zip(&self.domain_box)
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// True when `x` lies within `margin` of a declared singular set.
    pub fn near_singular(&self, x: &DVector<f64>, margin: f64) -> bool {
        self.singular.iter().any(|s| s.distance(x) < margin)
    }
}

/// Van der Pol oscillator with the input entering through `1 − x₂²`.
pub fn vanderpol() -> ControlAffineSystem {
    let f: Field = Arc::new(|x| {
        DVector::from_vec(vec![x[1], -x[0] + 0.5 * (1.0 - x[0] * x[0]) * x[1]])
    });
    let g: Field = Arc::new(|x| DVector::from_vec(vec![0.0, 1.0 - x[1] * x[1]]));
    ControlAffineSystem::new("vanderpol", 2, f, g, vec![(-3.0, 3.0); 2]).with_singular_set(
        SingularSet {
            coord: 1,
            values: vec![-1.0, 1.0],
        },
    )
}

/// Six-state integrator chain with quadratic and trigonometric drift in the
/// last state; `a` holds `a₁..a₁₀`.
pub fn sixdim(a: [f64; 10]) -> Result<ControlAffineSystem> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("sixdim coefficients must be finite"));
    }
    for i in [0, 1, 2, 3, 4, 9] {
        if a[i] == 0.0 {
            return Err(Error::input(format!(
                "sixdim coefficient a{} is zero; the chain loses controllability",
                i + 1
            )));
        }
    }
    let f: Field = Arc::new(move |x| {
        let mut d = DVector::zeros(6);
        for i in 0..5 {
            d[i] = a[i] * x[i + 1];
        }
        d[5] = a[5] * x[0] * x[0] - a[6] * x[1].sin() + a[7] * x[2] * x[2] + a[8] * x[3] * x[3];
        d
    });
    let g: Field = Arc::new(move |x| {
        let mut d = DVector::zeros(6);
        d[5] = a[9] * (1.0 - x[0] * x[0]);
        d
    });
    Ok(
        ControlAffineSystem::new("sixdim", 6, f, g, vec![(-10.0, 10.0); 6]).with_singular_set(
            SingularSet {
                coord: 0,
                values: vec![-1.0, 1.0],
            },
        ),
    )
}

/// Standard-normal coefficients for [`sixdim`], resampling `a₁..a₅, a₁₀`
/// while their magnitude is below 0.1.
pub fn sixdim_coefficients(seed: u64) -> [f64; 10] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = [0.0; 10];
    for (i, ai) in a.iter_mut().enumerate() {
        loop {
            let v: f64 = StandardNormal.sample(&mut rng);
            let guarded = i < 5 || i == 9;
            if !guarded || v.abs() >= 0.1 {
                *ai = v;
                break;
            }
        }
    }
    a
}

pub fn sixdim_seeded(seed: u64) -> ControlAffineSystem {
    sixdim(sixdim_coefficients(seed)).expect("guarded coefficients are nonzero")
}

/// Three-state system that is input-output but not full-state linearizable.
pub fn example_io_system() -> ControlAffineSystem {
    let f: Field = Arc::new(|x| DVector::from_vec(vec![2.0 * x[2] * x[2], -1.0, 0.0]));
    let g: Field = Arc::new(|x| DVector::from_vec(vec![-x[0], -2.0 * x[1], 0.5 * x[2]]));
    ControlAffineSystem::new("example_io", 3, f, g, vec![(-5.0, 5.0); 3])
}

/// `ẋ = Ax + bu`.
pub fn linear_system(a: DMatrix<f64>, b: DVector<f64>) -> ControlAffineSystem {
    let n = b.len();
    assert_eq!(a.shape(), (n, n));
    let f: Field = Arc::new(move |x| &a * x);
    let g: Field = Arc::new(move |_| b.clone());
    ControlAffineSystem::new("linear", n, f, g, vec![(-1e6, 1e6); n])
}

/// Sampled trajectory: `states` is `n × (N+1)`, `inputs[i]` is held on
/// `[iτ, (i+1)τ)`, and `exact_derivs` column `i` is `f(x_i) + g(x_i)u_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub tau: f64,
    pub states: DMatrix<f64>,
    pub inputs: Vec<f64>,
    pub exact_derivs: Option<DMatrix<f64>>,
    pub seed: Option<u64>,
}

impl Trajectory {
    pub fn n(&self) -> usize {
        self.states.nrows()
    }

    /// Number of input samples `N`.
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn state(&self, i: usize) -> DVector<f64> {
        self.states.column(i).into_owned()
    }

    pub fn final_state(&self) -> DVector<f64> {
        self.state(self.states.ncols() - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::input("tau must be positive"));
        }
        if self.states.ncols() != self.inputs.len() + 1 {
            return Err(Error::input("states must have one more column than inputs"));
        }
        if let Some(d) = &self.exact_derivs {
            if d.shape() != (self.n(), self.inputs.len()) {
                return Err(Error::input("exact_derivs must be n x N"));
            }
        }
        if self.states.iter().chain(self.inputs.iter()).any(|v| !v.is_finite()) {
            return Err(Error::input("trajectory contains non-finite values"));
        }
        Ok(())
    }
}

/// One classical RK4 step with `u` held constant.
pub fn rk4_step(sys: &ControlAffineSystem, x: &DVector<f64>, u: f64, tau: f64) -> Result<DVector<f64>> {
    if !(tau > 0.0) {
        return Err(Error::input("tau must be positive"));
    }
    let k1 = sys.eval_dynamics(x, u)?;
    let k2 = sys.eval_dynamics(&(x + &k1 * (0.5 * tau)), u)?;
    let k3 = sys.eval_dynamics(&(x + &k2 * (0.5 * tau)), u)?;
    let k4 = sys.eval_dynamics(&(x + &k3 * tau), u)?;
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (tau / 6.0);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite RK4 stage".into()));
    }
    Ok(next)
}

/// Advances one sample interval with `substeps` equal RK4 steps.
pub fn rk4_sample(
    sys: &ControlAffineSystem,
    x: &DVector<f64>,
    u: f64,
    tau: f64,
    substeps: usize,
) -> Result<DVector<f64>> {
    let m = substeps.max(1);
    let h = tau / m as f64;
    let mut y = x.clone();
    for _ in 0..m {
        y = rk4_step(sys, &y, u, h)?;
    }
    Ok(y)
}

fn diverged(x: &DVector<f64>) -> bool {
    x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT)
}

fn assemble(
    sys: &ControlAffineSystem,
    tau: f64,
    cols: Vec<DVector<f64>>,
    inputs: Vec<f64>,
    seed: Option<u64>,
) -> Trajectory {
    let n = sys.n;
    let states = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    let mut d = DMatrix::zeros(n, inputs.len());
    for (j, u) in inputs.iter().enumerate() {
        if let Ok(dx) = sys.eval_dynamics(&cols[j], *u) {
            d.set_column(j, &dx);
        } else {
            d.column_mut(j).fill(f64::NAN);
        }
    }
    Trajectory {
        tau,
        states,
        inputs,
        exact_derivs: Some(d),
        seed,
    }
}

/// Simulates `steps` sample intervals under `policy(i, x_i)`.
pub fn simulate<P>(
    sys: &ControlAffineSystem,
    x0: &DVector<f64>,
    policy: P,
    tau: f64,
    steps: usize,
) -> Result<Trajectory>
where
    P: FnMut(usize, &DVector<f64>) -> f64,
{
    simulate_substeps(sys, x0, policy, tau, steps, 1)
}

pub fn simulate_substeps<P>(
    sys: &ControlAffineSystem,
    x0: &DVector<f64>,
    mut policy: P,
    tau: f64,
    steps: usize,
    substeps: usize,
) -> Result<Trajectory>
where
    P: FnMut(usize, &DVector<f64>) -> f64,
{
    if steps == 0 {
        return Err(Error::input("steps must be at least 1"));
    }
    if x0.len() != sys.n {
        return Err(Error::input("x0 has the wrong dimension"));
    }
    let mut cols = vec![x0.clone()];
    let mut inputs = Vec::with_capacity(steps);
    for i in 0..steps {
        let x = &cols[i];
        let u = policy(i, x);
        let next = rk4_sample(sys, x, u, tau, substeps);
        match next {
            Ok(y) if !diverged(&y) => {
                inputs.push(u);
                cols.push(y);
            }
            _ => {
                let partial = assemble(sys, tau, cols, inputs, None);
                return Err(Error::Diverged {
                    step: i,
                    partial: Box::new(partial),
                });
            }
        }
    }
    Ok(assemble(sys, tau, cols, inputs, None))
}

/// Expands a master seed into the seed of run `index` (counter-based, so any
/// run can be reproduced without replaying the others).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index.wrapping_add(1));
    rng.next_u64()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollectOptions {
    pub sigma: f64,
    pub seed: u64,
    /// Retries with a fresh input stream after a failed attempt.
    pub retry_cap: usize,
    /// Treat leaving `domain_box` as a failed attempt.
    pub enforce_domain: bool,
    pub substeps: usize,
}

impl CollectOptions {
    pub fn new(sigma: f64, seed: u64) -> Self {
        CollectOptions {
            sigma,
            seed,
            retry_cap: 5,
            enforce_domain: true,
            substeps: 1,
        }
    }
}

/// Excites the system with i.i.d. Gaussian inputs held per sample.
pub fn collect_excitation(
    sys: &ControlAffineSystem,
    x0: &DVector<f64>,
    n: usize,
    tau: f64,
    sigma: f64,
    seed: u64,
) -> Result<Trajectory> {
    collect_excitation_with(sys, x0, n, tau, &CollectOptions::new(sigma, seed))
}

pub fn collect_excitation_with(
    sys: &ControlAffineSystem,
    x0: &DVector<f64>,
    n: usize,
    tau: f64,
    opts: &CollectOptions,
) -> Result<Trajectory> {
    if !(opts.sigma > 0.0) {
        return Err(Error::input("sigma must be positive"));
    }
    let normal = Normal::new(0.0, opts.sigma).map_err(|e| Error::input(e.to_string()))?;
    let mut last_err = None;
    for attempt in 0..=opts.retry_cap {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(attempt as u64);
        let inputs: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let mut left_domain = false;
        let run = simulate_substeps(
            sys,
            x0,
            |i, x| {
                if opts.enforce_domain && !sys.in_domain(x) {
                    left_domain = true;
                }
                if left_domain {
                    f64::NAN
                } else {
                    inputs[i]
                }
            },
            tau,
            n,
            opts.substeps,
        );
        match run {
            Ok(mut traj) if !(opts.enforce_domain && !sys.in_domain(&traj.final_state())) => {
                traj.seed = Some(opts.seed);
                return Ok(traj);
            }
            Ok(traj) => {
                last_err = Some(Error::Diverged {
                    step: n,
                    partial: Box::new(traj),
                })
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::Numeric("collection failed".into())))
}

/// Writes the trajectory CSV `t,x1..xn,u[,dx1..dxn]`.
pub fn save_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    write_atomic(path, &trajectory_csv(traj, &[])?)
}

/// Trajectory CSV with extra per-row columns appended (empty cells for
/// missing values).
pub fn trajectory_csv(traj: &Trajectory, extra: &[(String, Vec<Option<f64>>)]) -> Result<Vec<u8>> {
    let n = traj.n();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.push("u".into());
    if traj.exact_derivs.is_some() {
        header.extend((1..=n).map(|i| format!("dx{i}")));
    }
    header.extend(extra.iter().map(|(name, _)| name.clone()));
    w.write_record(&header)?;
    let rows = traj.states.ncols();
    for i in 0..rows {
        let mut rec = vec![format!("{}", i as f64 * traj.tau)];
        rec.extend((0..n).map(|k| format!("{}", traj.states[(k, i)])));
        rec.push(traj.inputs.get(i).map(|u| format!("{u}")).unwrap_or_default());
        if let Some(d) = &traj.exact_derivs {
            for k in 0..n {
                rec.push(if i < d.ncols() {
                    format!("{}", d[(k, i)])
                } else {
                    String::new()
                });
            }
        }
        for (_, col) in extra {
            rec.push(col.get(i).copied().flatten().map(|v| format!("{v}")).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    let text = std::fs::read_to_string(path)?;
    parse_trajectory(&text)
}

pub fn parse_trajectory(text: &str) -> Result<Trajectory> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let perr = |line: usize, msg: &str| Error::Parse {
        line,
        msg: msg.to_string(),
    };
    let col = |name: &str| header.iter().position(|h| h == name);
    let t_col = col("t").ok_or_else(|| perr(1, "missing t column"))?;
    let u_col = col("u").ok_or_else(|| perr(1, "missing u column"))?;
    let mut x_cols = Vec::new();
    while let Some(c) = col(&format!("x{}", x_cols.len() + 1)) {
        x_cols.push(c);
    }
    let n = x_cols.len();
    if n == 0 {
        return Err(perr(1, "no state columns"));
    }
    let dx_cols: Vec<usize> = (1..=n).filter_map(|i| col(&format!("dx{i}"))).collect();
    if !dx_cols.is_empty() && dx_cols.len() != n {
        return Err(perr(1, "derivative columns must cover every state"));
    }

    let mut times = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut inputs = Vec::new();
    let mut derivs: Vec<Vec<f64>> = Vec::new();
    let mut blank_u_line = None;
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let num = |c: usize| -> Result<f64> {
            rec.get(c)
                .ok_or_else(|| perr(line, "short row"))?
                .trim()
                .parse::<f64>()
                .map_err(|_| perr(line, &format!("bad number in column {}", header[c])))
        };
        if let Some(prev) = blank_u_line {
            return Err(perr(prev, "empty u before the final row"));
        }
        times.push(num(t_col)?);
        cols.push(x_cols.iter().map(|&c| num(c)).collect::<Result<_>>()?);
        let u_text = rec.get(u_col).unwrap_or("").trim();
        if u_text.is_empty() {
            blank_u_line = Some(line);
        } else {
            inputs.push(num(u_col)?);
            if !dx_cols.is_empty() {
                derivs.push(dx_cols.iter().map(|&c| num(c)).collect::<Result<_>>()?);
            }
        }
    }
    if cols.len() < 2 {
        return Err(perr(1, "need at least two rows"));
    }
    if inputs.len() + 1 != cols.len() {
        return Err(perr(cols.len() + 1, "final row must have an empty u and all others a value"));
    }
    let tau = times[1] - times[0];
    if !(tau > 0.0) {
        return Err(perr(3, "time column must increase"));
    }
    let states = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    let exact_derivs = if dx_cols.is_empty() {
        None
    } else {
        Some(DMatrix::from_fn(n, derivs.len(), |i, j| derivs[j][i]))
    };
    let traj = Trajectory {
        tau,
        states,
        inputs,
        exact_derivs,
        seed: None,
    };
    traj.validate()?;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    #[test]
    fn vanderpol_values() {
        let s = vanderpol();
        assert_eq!(s.eval_dynamics(&v(&[0.0, 0.0]), 0.0).unwrap(), v(&[0.0, 0.0]));
        assert_eq!(s.eval_dynamics(&v(&[1.0, 2.0]), 0.0).unwrap(), v(&[2.0, -1.0]));
        assert_eq!(s.eval_dynamics(&v(&[0.0, 2.0]), 1.0).unwrap(), v(&[2.0, -2.0]));
        assert_eq!(s.control_field(&v(&[0.0, 0.0])), v(&[0.0, 1.0]));
        assert_eq!(s.control_field(&v(&[0.0, 1.0])), v(&[0.0, 0.0]));
        assert!(s.eval_dynamics(&v(&[0.0]), 0.0).is_err());
    }

    #[test]
    fn sixdim_values() {
        let s = sixdim([1.0; 10]).unwrap();
        let z = DVector::zeros(6);
        assert_eq!(s.eval_dynamics(&z, 0.0).unwrap(), DVector::zeros(6));
        let mut x = DVector::zeros(6);
        x[1] = std::f64::consts::FRAC_PI_2;
        assert_relative_eq!(s.eval_dynamics(&x, 0.0).unwrap()[5], -1.0, epsilon = 1e-15);
        assert_eq!(s.eval_dynamics(&z, 3.0).unwrap()[5], 3.0);
        let mut a = [1.0; 10];
        a[2] = 0.0;
        assert!(matches!(sixdim(a), Err(Error::Input(_))));
    }

    #[test]
    fn sixdim_seeded_guards_coefficients() {
        for seed in 0..50 {
            let a = sixdim_coefficients(seed);
            for i in [0, 1, 2, 3, 4, 9] {
                assert!(a[i].abs() >= 0.1);
            }
            assert_eq!(a, sixdim_coefficients(seed));
        }
    }

    #[test]
    fn example_io_values() {
        let s = example_io_system();
        assert_eq!(s.drift(&v(&[0.0, 0.0, 1.0])), v(&[2.0, -1.0, 0.0]));
        assert_eq!(s.control_field(&v(&[1.0, 1.0, 2.0])), v(&[-1.0, -2.0, 1.0]));
        assert_eq!(s.drift(&v(&[0.0, 0.0, 0.0])), v(&[0.0, -1.0, 0.0]));
    }

    #[test]
    fn rk4_on_decay() {
        let s = linear_system(DMatrix::from_element(1, 1, -1.0), DVector::zeros(1));
        let y = rk4_step(&s, &v(&[1.0]), 0.0, 0.1).unwrap();
        assert!((y[0] - (-0.1f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn rk4_fixed_point_and_order() {
        let s = vanderpol();
        let x = v(&[0.0, 0.0]);
        assert_eq!(rk4_step(&s, &x, 0.0, 0.3).unwrap(), x);
        // one-step error against a fine reference shrinks ~2^5 when tau halves
        let x0 = v(&[1.0, 1.0]);
        let reference = |t: f64| rk4_sample(&s, &x0, 0.0, t, 2000).unwrap();
        let e1 = (rk4_step(&s, &x0, 0.0, 0.2).unwrap() - reference(0.2)).norm();
        let e2 = (rk4_step(&s, &x0, 0.0, 0.1).unwrap() - reference(0.1)).norm();
        assert!(e1 / e2 > 16.0, "ratio {}", e1 / e2);
    }

    #[test]
    fn simulate_equilibrium_and_shapes() {
        let s = vanderpol();
        let tr = simulate(&s, &v(&[0.0, 0.0]), |_, _| 0.0, 0.01, 100).unwrap();
        assert_eq!(tr.states.ncols(), 101);
        assert!(tr.states.iter().all(|v| *v == 0.0));
        let tr = simulate(&s, &v(&[1.0, 1.0]), |_, _| 0.0, 0.01, 2000).unwrap();
        assert!(tr.states.amax() < 5.0);
        let d = tr.exact_derivs.as_ref().unwrap();
        assert_eq!(d.column(7).into_owned(), s.eval_dynamics(&tr.state(7), 0.0).unwrap());
    }

    #[test]
    fn simulate_reports_divergence_with_partial_data() {
        let s = linear_system(DMatrix::from_element(1, 1, 50.0), DVector::zeros(1));
        match simulate(&s, &v(&[1.0]), |_, _| 0.0, 0.1, 100) {
            Err(Error::Diverged { step, partial }) => {
                assert!(step > 0);
                assert_eq!(partial.states.ncols(), step + 1);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn collection_is_deterministic_with_expected_shapes() {
        let s = vanderpol();
        let x0 = v(&[1.0, 1.0]);
        let a = collect_excitation(&s, &x0, 300, 0.01, 5.0, 7).unwrap();
        let b = collect_excitation(&s, &x0, 300, 0.01, 5.0, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.states.shape(), (2, 301));
        assert_eq!(a.inputs.len(), 300);
        assert!((0..301).all(|i| s.in_domain(&a.state(i))));
    }

    #[test]
    fn input_std_matches_sigma() {
        let s = linear_system(DMatrix::from_element(1, 1, -1.0), DVector::from_element(1, 1e-9));
        let tr = collect_excitation(&s, &v(&[0.0]), 100_000, 0.01, 5.0, 3).unwrap();
        let n = tr.inputs.len() as f64;
        let mean = tr.inputs.iter().sum::<f64>() / n;
        let var = tr.inputs.iter().map(|u| (u - mean).powi(2)).sum::<f64>() / n;
        assert!((var.sqrt() - 5.0).abs() < 0.1);
    }

    #[test]
    fn csv_round_trip() {
        let s = vanderpol();
        let tr = collect_excitation(&s, &v(&[1.0, 1.0]), 50, 0.01, 5.0, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("traj.csv");
        save_trajectory(&tr, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("t,x1,x2,u,dx1,dx2\n"));
        assert_eq!(text.lines().count(), 52);
        let back = load_trajectory(&p).unwrap();
        assert!((back.tau - tr.tau).abs() < 1e-15);
        assert!((&back.states - &tr.states).amax() < 1e-12);
        assert_eq!(back.inputs, tr.inputs);
        assert!((back.exact_derivs.unwrap() - tr.exact_derivs.unwrap()).amax() < 1e-12);
    }

    #[test]
    fn csv_errors() {
        let e = parse_trajectory("t,x1\n0,1\n0.1,2\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }));
        let e = parse_trajectory("t,x1,u\n0,1,0.5\n0.1,abc,\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e:?}");
        let ok = parse_trajectory("t,x1,u\n0,1,0.5\n0.1,2,\n").unwrap();
        assert_eq!(ok.inputs, vec![0.5]);
    }
}
