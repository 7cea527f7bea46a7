use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::FitDataset;
use super::linalg::{lambda_max, range_basis, row_solve, smallest_right_singular, PinvOptions};
use super::BrunovskyPair;
use crate::dictionary::Dictionary;
use crate::error::{Error, Result};

fn check_shapes(k: &DVector<f64>, g: &DVector<f64>, j: &DVector<f64>, data: &FitDataset, pair: &BrunovskyPair) -> Result<()> {
    if k.len() != data.m() || g.len() != data.k_theta() || j.len() != data.k_gamma() || pair.r != data.r {
        return Err(Error::input(format!(
            "parameter shapes (K {}, G {}, J {}, r {}) do not match dataset (M {}, k_θ {}, k_γ {}, r {})",
            k.len(),
            g.len(),
            j.len(),
            pair.r,
            data.m(),
            data.k_theta(),
            data.k_gamma(),
            data.r
        )));
    }
    Ok(())
}

/// Residuals `E_t = M_t K − B v_t`, one `r`-vector per sample.
fn residuals(k: &DVector<f64>, g: &DVector<f64>, j: &DVector<f64>, data: &FitDataset, pair: &BrunovskyPair) -> Vec<DVector<f64>> {
    let v = data.theta.transpose() * g + data.gamma_u.transpose() * j;
    data.residual_operators(pair)
        .iter()
        .enumerate()
        .map(|(t, m)| m * k - &pair.b * v[t])
        .collect()
}

/// `Σ_t ‖M_t K − B v_t‖²` with `v_t = Gᵀθ_t + Jᵀ(γu)_t`.
pub fn kgfl_cost(k: &DVector<f64>, g: &DVector<f64>, j: &DVector<f64>, data: &FitDataset, pair: &BrunovskyPair) -> Result<f64> {
    check_shapes(k, g, j, data, pair)?;
    Ok(residuals(k, g, j, data, pair).iter().map(|e| e.norm_squared()).sum())
}

/// Exact gradients of [`kgfl_cost`]:
/// `∇K = 2ΣM_tᵀE_t`, `∇G = −2Σθ_t BᵀE_t`, `∇J = −2Σ(γu)_t BᵀE_t`.
pub fn kgfl_gradients(
    k: &DVector<f64>,
    g: &DVector<f64>,
    j: &DVector<f64>,
    data: &FitDataset,
    pair: &BrunovskyPair,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    check_shapes(k, g, j, data, pair)?;
    let ops = data.residual_operators(pair);
    let res = residuals(k, g, j, data, pair);
    let mut gk = DVector::zeros(k.len());
    let mut gg = DVector::zeros(g.len());
    let mut gj = DVector::zeros(j.len());
    for (t, (m, e)) in ops.iter().zip(&res).enumerate() {
        gk += m.transpose() * e * 2.0;
        let be = pair.b.dot(e);
        gg -= data.theta.column(t) * (2.0 * be);
        gj -= data.gamma_u.column(t) * (2.0 * be);
    }
    Ok((gk, gg, gj))
}

/// The cost as a quadratic form `wᵀQw` in `w = (K, G, J)`.
#[derive(Clone, Debug)]
pub struct CostQuadratic {
    pub q: DMatrix<f64>,
    pub m: usize,
    pub kt: usize,
    pub kg: usize,
}

impl CostQuadratic {
    pub fn new(data: &FitDataset, pair: &BrunovskyPair) -> Self {
        let (m, kt, kg, r) = (data.m(), data.k_theta(), data.k_gamma(), data.r);
        let p = m + kt + kg;
        let mut l = DMatrix::zeros(r * data.len(), p);
        for (t, op) in data.residual_operators(pair).iter().enumerate() {
            l.view_mut((t * r, 0), (r, m)).copy_from(op);
            for i in 0..r {
                let b = pair.b[i];
                if b != 0.0 {
                    for a in 0..kt {
                        l[(t * r + i, m + a)] = -b * data.theta[(a, t)];
                    }
                    for a in 0..kg {
                        l[(t * r + i, m + kt + a)] = -b * data.gamma_u[(a, t)];
                    }
                }
            }
        }
        CostQuadratic {
            q: l.transpose() * l,
            m,
            kt,
            kg,
        }
    }

    pub fn stack(&self, k: &DVector<f64>, g: &DVector<f64>, j: &DVector<f64>) -> DVector<f64> {
        let mut w = DVector::zeros(self.m + self.kt + self.kg);
        w.rows_mut(0, self.m).copy_from(k);
        w.rows_mut(self.m, self.kt).copy_from(g);
        w.rows_mut(self.m + self.kt, self.kg).copy_from(j);
        w
    }

    pub fn cost(&self, w: &DVector<f64>) -> f64 {
        w.dot(&(&self.q * w)).max(0.0)
    }

    fn block(&self, which: usize) -> (usize, usize) {
        match which {
            0 => (0, self.m),
            1 => (self.m, self.kt),
            _ => (self.m + self.kt, self.kg),
        }
    }

    /// Gradient of one block (0 = K, 1 = G, 2 = J).
    pub fn block_gradient(&self, w: &DVector<f64>, which: usize) -> DVector<f64> {
        let (start, len) = self.block(which);
        self.q.rows(start, len) * w * 2.0
    }

    /// Lipschitz constant of a block's gradient.
    pub fn block_lipschitz(&self, which: usize) -> f64 {
        let (start, len) = self.block(which);
        2.0 * lambda_max(&self.q.view((start, start), (len, len)).into_owned())
    }
}

#[derive(Clone, Debug)]
pub struct SingleStep {
    pub g: DVector<f64>,
    pub j: DVector<f64>,
    pub rank: usize,
    pub warnings: Vec<String>,
}

fn solve_gj(target: &DVector<f64>, theta: &DMatrix<f64>, gamma_u: &DMatrix<f64>, opts: PinvOptions) -> Result<SingleStep> {
    let kt = theta.nrows();
    let kg = gamma_u.nrows();
    if theta.ncols() != target.len() || gamma_u.ncols() != target.len() {
        return Err(Error::input("regressor and target sample counts differ"));
    }
    let mut reg = DMatrix::zeros(kt + kg, target.len());
    reg.rows_mut(0, kt).copy_from(theta);
    reg.rows_mut(kt, kg).copy_from(gamma_u);
    let sol = row_solve(target, &reg, opts)?;
    let mut warnings = Vec::new();
    if sol.rank < kt + kg {
        warnings.push(format!(
            "regressor rank {} < {} ({} samples); minimum-norm solution",
            sol.rank,
            kt + kg,
            target.len()
        ));
    }
    let j = sol.coeffs.rows(kt, kg).into_owned();
    if j.iter().all(|v| *v == 0.0) {
        warnings.push("J is identically zero; the control map is not invertible".into());
    }
    Ok(SingleStep {
        g: sol.coeffs.rows(0, kt).into_owned(),
        j,
        rank: sol.rank,
        warnings,
    })
}

/// `[Gᵀ Jᵀ] = Bᵀ(Ż − AZ)[Θ; Γ⊗U]^†` for an `r × N'` output stack.
pub fn single_step_io(
    z: &DMatrix<f64>,
    z_dot: &DMatrix<f64>,
    theta: &DMatrix<f64>,
    gamma_u: &DMatrix<f64>,
    r: usize,
    opts: PinvOptions,
) -> Result<SingleStep> {
    let pair = BrunovskyPair::new(r)?;
    if z.shape() != z_dot.shape() || z.nrows() != r {
        return Err(Error::input(format!("Z and Ż must both be {r} × N'")));
    }
    let target = (pair.b.transpose() * (z_dot - &pair.a * z)).transpose();
    solve_gj(&target, theta, gamma_u, opts)
}

/// `[Gᵀ Jᵀ] = Bᵀ(Ḋ − AD)K[Θ; Γ⊗U]^†` for a fixed `K`.
pub fn single_step_fullstate(data: &FitDataset, k: &DVector<f64>, opts: PinvOptions) -> Result<SingleStep> {
    if k.len() != data.m() {
        return Err(Error::input("K length does not match the dictionary"));
    }
    if k.norm() == 0.0 {
        return Err(Error::input("K must be nonzero"));
    }
    let pair = BrunovskyPair::new(data.r)?;
    let target = data.top_rows(&pair) * k;
    solve_gj(&target, &data.theta, &data.gamma_u, opts)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "epsilon")]
pub enum StepRule {
    /// Each block moves by `ε/L` with `L` the Lipschitz constant of its
    /// gradient.
    BlockLipschitz(f64),
    /// Every block moves by `ε` times its gradient.
    Fixed(f64),
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::BlockLipschitz(1.0)
    }
}

impl StepRule {
    fn epsilon(self) -> f64 {
        match self {
            StepRule::BlockLipschitz(e) | StepRule::Fixed(e) => e,
        }
    }

    fn halved(self) -> Self {
        match self {
            StepRule::BlockLipschitz(e) => StepRule::BlockLipschitz(e / 2.0),
            StepRule::Fixed(e) => StepRule::Fixed(e / 2.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KgflOptions {
    pub step: StepRule,
    pub sweeps: usize,
    pub seed: u64,
    pub normalize: bool,
    /// Extra starts from the other first-order entries; `None` tries all.
    pub restarts: Option<usize>,
    pub max_halvings: usize,
}

impl Default for KgflOptions {
    fn default() -> Self {
        KgflOptions {
            step: StepRule::default(),
            sweeps: 5000,
            seed: 0,
            normalize: true,
            restarts: None,
            max_halvings: 10,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub k: DVector<f64>,
    pub g: DVector<f64>,
    pub j: DVector<f64>,
    /// Cost before the first sweep (gradient runs only) and after each
    /// sweep.
    pub cost_trace: Vec<f64>,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub sweeps: usize,
    pub warnings: Vec<String>,
}

impl FitResult {
    /// Flips `(K, G, J)` so that the largest-magnitude entry of `K` is
    /// positive; cost and closed loop are unchanged.
    fn normalize_sign(&mut self) {
        let imax = self.k.iamax();
        if self.k.len() > 0 && self.k[imax] < 0.0 {
            self.k.neg_mut();
            self.g.neg_mut();
            self.j.neg_mut();
        }
    }
}

/// Starting point of a gradient run.
#[derive(Clone, Debug)]
pub struct KgflInit {
    pub k: DVector<f64>,
    pub g: DVector<f64>,
    pub j: DVector<f64>,
}

impl KgflInit {
    /// `K` = indicator of entry `k_index`, `G = 0`, `J` = indicator of
    /// the constant entry of γ (its first entry when there is none).
    pub fn indicator(m: usize, k_index: usize, gamma: &Dictionary, kt: usize) -> Self {
        let mut k = DVector::zeros(m);
        k[k_index] = 1.0;
        let mut j = DVector::zeros(gamma.len());
        j[gamma.constant_index().unwrap_or(0)] = 1.0;
        KgflInit {
            k,
            g: DVector::zeros(kt),
            j,
        }
    }
}

/// One gradient run of the K → G → J sweeps from `init`, with step halving
/// when the cost grows more than tenfold over ten sweeps.
pub fn kgfl_run(data: &FitDataset, init: &KgflInit, opts: &KgflOptions) -> Result<FitResult> {
    let pair = BrunovskyPair::new(data.r)?;
    check_shapes(&init.k, &init.g, &init.j, data, &pair)?;
    if opts.step.epsilon() < 0.0 || !opts.step.epsilon().is_finite() {
        return Err(Error::input("step size must be finite and non-negative"));
    }
    let quad = CostQuadratic::new(data, &pair);
    let lips = [0, 1, 2].map(|b| quad.block_lipschitz(b));
    let mut step = opts.step;
    let mut warnings = Vec::new();
    for attempt in 0..=opts.max_halvings {
        let mut k = init.k.clone();
        if opts.normalize && k.norm() > 0.0 {
            k.normalize_mut();
        }
        let mut w = quad.stack(&k, &init.g, &init.j);
        let mut trace = Vec::with_capacity(opts.sweeps + 1);
        trace.push(quad.cost(&w));
        let mut diverged = false;
        for sweep in 0..opts.sweeps {
            for block in 0..3 {
                let grad = quad.block_gradient(&w, block);
                let eta = match step {
                    StepRule::Fixed(e) => e,
                    StepRule::BlockLipschitz(e) if lips[block] > 0.0 => e / lips[block],
                    StepRule::BlockLipschitz(_) => 0.0,
                };
                let (start, len) = quad.block(block);
                let mut part = w.rows(start, len) - grad * eta;
                if block == 0 && opts.normalize {
                    let n = part.norm();
                    if n > 0.0 {
                        part /= n;
                    }
                }
                w.rows_mut(start, len).copy_from(&part);
            }
            let c = quad.cost(&w);
            trace.push(c);
            let grew = sweep >= 10 && c > 10.0 * trace[sweep - 9];
            if !c.is_finite() || grew {
                diverged = true;
                break;
            }
        }
        if diverged {
            warnings.push(format!("cost diverged with step {:?}; halving", step));
            step = step.halved();
            if attempt == opts.max_halvings {
                let tail: Vec<String> = warnings.iter().rev().take(3).cloned().collect();
                return Err(Error::Numeric(format!(
                    "KGFL diverged after {} step halvings ({})",
                    opts.max_halvings,
                    tail.join("; ")
                )));
            }
            continue;
        }
        let (m, kt, kg) = (quad.m, quad.kt, quad.kg);
        let k = w.rows(0, m).into_owned();
        let g = w.rows(m, kt).into_owned();
        let j = w.rows(m + kt, kg).into_owned();
        let final_cost = kgfl_cost(&k, &g, &j, data, &pair)?;
        let initial_cost = trace[0];
        if j.iter().all(|v| *v == 0.0) {
            warnings.push("J is identically zero".into());
        }
        return Ok(FitResult {
            k,
            g,
            j,
            cost_trace: trace,
            initial_cost,
            final_cost,
            sweeps: opts.sweeps,
            warnings,
        });
    }
    unreachable!("loop returns on the last attempt")
}

/// Gradient fit with seeded initialization: `K` starts at a random
/// first-order entry of φ, further starts cycle the remaining first-order
/// entries, and the lowest final cost wins.
pub fn kgfl_fit(data: &FitDataset, phi: &Dictionary, gamma: &Dictionary, opts: &KgflOptions) -> Result<FitResult> {
    if phi.len() != data.m() || gamma.len() != data.k_gamma() {
        return Err(Error::input("dictionaries do not match the dataset"));
    }
    let mut candidates = phi.first_order_indices();
    if candidates.is_empty() {
        candidates = vec![0];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let first = rng.random_range(0..candidates.len());
    candidates.rotate_left(first);
    let starts = 1 + opts.restarts.unwrap_or(usize::MAX).min(candidates.len() - 1);
    let mut best: Option<(usize, FitResult)> = None;
    let mut errors = Vec::new();
    for (n, idx) in candidates.iter().take(starts).enumerate() {
        let init = KgflInit::indicator(data.m(), *idx, gamma, data.k_theta());
        match kgfl_run(data, &init, opts) {
            Ok(fit) => {
                if best.as_ref().is_none_or(|(_, b)| fit.final_cost < b.final_cost) {
                    best = Some((n, fit));
                }
            }
            Err(e) => errors.push(format!("start {}: {e}", phi.entries[*idx])),
        }
    }
    let (n, mut fit) = best.ok_or_else(|| Error::Numeric(errors.join("; ")))?;
    fit.warnings.extend(errors);
    if starts > 1 {
        fit.warnings.push(format!(
            "best of {starts} starts: K initialized at {}",
            phi.entries[candidates[n]]
        ));
    }
    fit.normalize_sign();
    Ok(fit)
}

/// Exact minimization by variable projection: `K` is the unit vector
/// minimizing the cost with `(G, J)` eliminated, i.e. the smallest right
/// singular vector of `[P·BᵀM; lower rows of M]` with `P` projecting out
/// the regressor span, and `(G, J)` then follow from the single-step
/// formula. Later sweeps repeat the same minimization.
pub fn als_fit(data: &FitDataset, sweeps: usize, opts: PinvOptions) -> Result<FitResult> {
    if sweeps == 0 {
        return Err(Error::input("at least one sweep is required"));
    }
    let pair = BrunovskyPair::new(data.r)?;
    let (n, m, r) = (data.len(), data.m(), data.r);
    let top = data.top_rows(&pair);
    let reg_t = data.regressor().transpose();
    let scale: Vec<f64> = reg_t
        .column_iter()
        .map(|c| {
            let v = c.norm();
            if opts.equilibrate && v > 0.0 {
                v
            } else {
                1.0
            }
        })
        .collect();
    let scaled = DMatrix::from_fn(reg_t.nrows(), reg_t.ncols(), |i, j| reg_t[(i, j)] / scale[j]);
    let basis = range_basis(&scaled, opts.rtol)?;
    let projected = &top - &basis * (basis.transpose() * &top);
    let ops = data.residual_operators(&pair);
    let mut stacked = DMatrix::zeros(n + n * (r - 1), m);
    stacked.rows_mut(0, n).copy_from(&projected);
    for (t, op) in ops.iter().enumerate() {
        for i in 0..r - 1 {
            stacked.row_mut(n + t * (r - 1) + i).copy_from(&op.row(i));
        }
    }
    let (k, _) = smallest_right_singular(&stacked)?;
    let ss = single_step_fullstate(data, &k, opts)?;
    let cost = kgfl_cost(&k, &ss.g, &ss.j, data, &pair)?;
    let trace = vec![cost; sweeps];
    let mut fit = FitResult {
        k,
        g: ss.g,
        j: ss.j,
        initial_cost: cost,
        final_cost: cost,
        cost_trace: trace,
        sweeps,
        warnings: ss.warnings,
    };
    fit.normalize_sign();
    Ok(fit)
}
