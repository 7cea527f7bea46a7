//! Experiment steps shared by the subcommands and the test suites.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{default_poles, to_complex, ExperimentConfig, SolverKind, SweepKind, SystemName};
use crate::control::{
    baseline_feedback, closed_loop_simulate, loss_qt, pole_place, sixdim_oracle, state_feedback_simulate,
    vdp_io_oracle, vdp_model_oracle, ClosedLoopRun, LoopStatus,
};
use crate::dictionary::{AugFn, DictSpec, Dictionary};
use crate::error::{Error, Result};
use crate::geomverify::{check_nilpotency, distribution_rank, involutivity_check, relative_degree, GeometryReport};
use crate::solvers::{
    als_fit, kgfl_fit, kgfl_run, linear_predictor_baseline, single_step_fullstate, Diagnostics, DictRefs,
    FitDataset, KgflInit, LinearPredictor, OutputMap, Transform, TransformParams,
};
use crate::systems::{collect_excitation_with, derive_seed, ControlAffineSystem, Trajectory};
use crate::util::quartiles;

/// Seed of run `index` under the master seed of `cfg`.
pub fn run_seed(cfg: &ExperimentConfig, index: u64) -> u64 {
    derive_seed(cfg.seed, index)
}

pub fn collect(cfg: &ExperimentConfig, sys: &ControlAffineSystem, seed: u64) -> Result<Trajectory> {
    let n = cfg.n.ok_or_else(|| Error::Config("n is unresolved".into()))?;
    collect_excitation_with(sys, &cfg.x0_vector(), n, cfg.tau, &cfg.collect_options(seed))
}

fn dict(spec: &Option<DictSpec>, name: &str) -> Result<Dictionary> {
    let spec = spec.clone().ok_or_else(|| Error::Config(format!("{name} dictionary is unresolved")))?;
    Dictionary::new(spec)
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub params: TransformParams,
    pub cost_trace: Vec<f64>,
}

/// Dataset for the configured mode (full-state or output).
pub fn dataset(cfg: &ExperimentConfig, traj: &Trajectory) -> Result<FitDataset> {
    let r = cfg.r.unwrap_or(2);
    let theta = dict(&cfg.dicts.theta, "theta")?;
    let gamma = dict(&cfg.dicts.gamma, "gamma")?;
    match &cfg.output {
        Some(out) => {
            let y: Vec<f64> = traj.states.column_iter().map(|c| out.eval(c.as_slice())).collect();
            FitDataset::output(&y, &theta, &gamma, traj, r, cfg.scheme, cfg.alignment)
        }
        None => {
            let phi = dict(&cfg.dicts.phi, "phi")?;
            FitDataset::full_state(&phi, &theta, &gamma, traj, r, cfg.scheme, cfg.alignment)
        }
    }
}

/// Fits `(K, G, J)` with the configured solver. `seed` drives the solver's
/// own randomness (the KGFL initial pick).
pub fn fit_transform(cfg: &ExperimentConfig, traj: &Trajectory, seed: u64) -> Result<FitOutcome> {
    let data = dataset(cfg, traj)?;
    let gamma = dict(&cfg.dicts.gamma, "gamma")?;
    let mut opts = cfg.kgfl.clone();
    opts.seed = seed;
    let (k, g, j, trace, sweeps, warnings) = match (cfg.solver, &cfg.output) {
        (SolverKind::Baseline, _) => {
            return Err(Error::Config("the baseline solver produces no transform".into()));
        }
        (SolverKind::SingleStep, out) => {
            let k = match out {
                Some(_) => DVector::from_element(1, 1.0),
                None => {
                    let phi = dict(&cfg.dicts.phi, "phi")?;
                    let i = phi
                        .linear_index(0)
                        .ok_or_else(|| Error::Config("single-step fits need the entry H1(x1) in phi".into()))?;
                    let mut k = DVector::zeros(phi.len());
                    k[i] = 1.0;
                    k
                }
            };
            let ss = single_step_fullstate(&data, &k, cfg.pinv)?;
            let pair = crate::solvers::brunovsky(data.r)?;
            let cost = crate::solvers::kgfl_cost(&k, &ss.g, &ss.j, &data, &pair)?;
            (k, ss.g, ss.j, vec![cost], 0, ss.warnings)
        }
        (SolverKind::Kgfl, Some(_)) => {
            let f = kgfl_run(&data, &KgflInit::indicator(1, 0, &gamma, data.k_theta()), &opts)?;
            (f.k, f.g, f.j, f.cost_trace, f.sweeps, f.warnings)
        }
        (SolverKind::Kgfl, None) => {
            let phi = dict(&cfg.dicts.phi, "phi")?;
            let f = kgfl_fit(&data, &phi, &gamma, &opts)?;
            (f.k, f.g, f.j, f.cost_trace, f.sweeps, f.warnings)
        }
        (SolverKind::Als, _) => {
            let f = als_fit(&data, cfg.als_sweeps, cfg.pinv)?;
            (f.k, f.g, f.j, f.cost_trace, f.sweeps, f.warnings)
        }
    };
    let params = TransformParams {
        r: data.r,
        k: k.iter().copied().collect(),
        g: g.iter().copied().collect(),
        j: j.iter().copied().collect(),
        dict_refs: DictRefs {
            phi: if cfg.output.is_some() { None } else { cfg.dicts.phi.clone() },
            theta: cfg.dicts.theta.clone().expect("checked by dict()"),
            gamma: cfg.dicts.gamma.clone().expect("checked by dict()"),
        },
        output: cfg.output,
        diagnostics: Diagnostics {
            solver: cfg.solver.label().into(),
            final_cost: trace.last().copied(),
            sweeps,
            cost_trace_path: None,
            warnings,
        },
    };
    params.realize()?;
    Ok(FitOutcome {
        params,
        cost_trace: trace,
    })
}

pub fn fit_baseline(cfg: &ExperimentConfig, traj: &Trajectory) -> Result<(LinearPredictor, Dictionary)> {
    let theta = dict(&cfg.dicts.theta, "theta")?;
    let lp = linear_predictor_baseline(traj, &theta, cfg.pinv)?;
    Ok((lp, theta))
}

/// Model-based transform for the configured system and output, if one is
/// known.
pub fn oracle_params(cfg: &ExperimentConfig) -> Result<Option<TransformParams>> {
    let r = cfg.r.unwrap_or(2);
    Ok(match (cfg.system.name, cfg.output, r) {
        (SystemName::Vanderpol, None, 2) => Some(vdp_model_oracle()?),
        (SystemName::Vanderpol, Some(OutputMap::Coord { coord: 0 }), 2) => Some(vdp_model_oracle()?),
        (SystemName::Vanderpol, Some(OutputMap::HalfSquare { coord: 0 }), 2) => Some(vdp_io_oracle()?),
        (SystemName::Sixdim, None, 6) => {
            let base = (0..3).fold(DictSpec::tensor(6, 2).total_degree(2), |s, c| s.augment(AugFn::Sin, c));
            Some(sixdim_oracle(
                &cfg.sixdim_coefficients(),
                base.clone().without_constant(),
                base,
            )?)
        }
        _ => None,
    })
}

pub fn closed_loop(cfg: &ExperimentConfig, sys: &ControlAffineSystem, t: &Transform) -> Result<ClosedLoopRun> {
    let poles = cfg.poles.clone().unwrap_or_else(|| default_poles(t.r()));
    let gain = pole_place(t.r(), &to_complex(&poles))?;
    closed_loop_simulate(sys, t, &gain, &cfg.x0_vector(), &cfg.closed_loop_options())
}

pub fn baseline_loop(cfg: &ExperimentConfig, sys: &ControlAffineSystem, traj: &Trajectory) -> Result<ClosedLoopRun> {
    let (lp, theta) = fit_baseline(cfg, traj)?;
    let poles = match &cfg.poles {
        Some(p) if p.len() == sys.n => p.clone(),
        _ => default_poles(sys.n),
    };
    let f = baseline_feedback(&lp, &theta, &to_complex(&poles))?;
    state_feedback_simulate(sys, Some(&f), &cfg.x0_vector(), &cfg.closed_loop_options())
}

pub fn uncontrolled_loop(cfg: &ExperimentConfig, sys: &ControlAffineSystem) -> Result<ClosedLoopRun> {
    state_feedback_simulate(sys, None, &cfg.x0_vector(), &cfg.closed_loop_options())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub status: LoopStatus,
    pub samples: usize,
    pub final_state: Vec<f64>,
    pub final_norm: f64,
    /// Largest state magnitude along the run.
    pub max_abs_state: f64,
}

impl RunSummary {
    pub fn of(run: &ClosedLoopRun) -> Self {
        let xf = run.traj.final_state();
        RunSummary {
            status: run.status,
            samples: run.traj.states.ncols(),
            final_state: xf.iter().copied().collect(),
            final_norm: xf.norm(),
            max_abs_state: run.traj.states.amax(),
        }
    }
}

/// Closed-loop comparison written by the `closedloop` subcommand. Losses
/// are against the model-based run and are `null` when they are infinite
/// (a run stopped before the horizon) or when there is no comparator.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct LoopSummary {
    pub horizon: f64,
    pub learned: Option<RunSummary>,
    pub oracle: Option<RunSummary>,
    pub baseline: Option<RunSummary>,
    pub uncontrolled: Option<RunSummary>,
    pub q_learned: Option<f64>,
    pub q_baseline: Option<f64>,
    pub q_uncontrolled: Option<f64>,
    pub notes: Vec<String>,
}

/// `Some(Q_T)` against the oracle run; `None` without an oracle.
pub fn q_against(cfg: &ExperimentConfig, oracle: Option<&ClosedLoopRun>, run: &ClosedLoopRun) -> Result<Option<f64>> {
    oracle
        .map(|o| loss_qt(&run.traj, &o.traj, cfg.closed_loop.t_end))
        .transpose()
}

fn finite(v: Option<f64>) -> Option<f64> {
    v.filter(|q| q.is_finite())
}

#[derive(Clone, Debug)]
pub struct LoopSet {
    pub learned: Option<ClosedLoopRun>,
    pub oracle: Option<ClosedLoopRun>,
    pub baseline: Option<ClosedLoopRun>,
    pub uncontrolled: Option<ClosedLoopRun>,
    pub summary: LoopSummary,
}

/// Runs the learned transform (when given), the oracle (when known), the
/// uncontrolled system alongside an oracle, and the baseline when asked.
pub fn closed_loop_set(
    cfg: &ExperimentConfig,
    learned: Option<&TransformParams>,
    baseline_data: Option<&Trajectory>,
) -> Result<LoopSet> {
    let sys = cfg.build_system()?;
    let mut summary = LoopSummary {
        horizon: cfg.closed_loop.t_end,
        ..Default::default()
    };
    let learned_run = learned.map(|p| closed_loop(cfg, &sys, &p.realize()?)).transpose()?;
    let oracle_run = oracle_params(cfg)?
        .map(|p| closed_loop(cfg, &sys, &p.realize()?))
        .transpose()?;
    if oracle_run.is_none() {
        summary.notes.push("no model-based transform for this system; losses omitted".into());
    }
    let uncontrolled = oracle_run.as_ref().map(|_| uncontrolled_loop(cfg, &sys)).transpose()?;
    let baseline = baseline_data.map(|tr| baseline_loop(cfg, &sys, tr)).transpose()?;
    let o = oracle_run.as_ref();
    if let Some(run) = &learned_run {
        summary.q_learned = finite(q_against(cfg, o, run)?);
        summary.learned = Some(RunSummary::of(run));
    }
    if let Some(run) = &baseline {
        summary.q_baseline = finite(q_against(cfg, o, run)?);
        summary.baseline = Some(RunSummary::of(run));
    }
    if let Some(run) = &uncontrolled {
        summary.q_uncontrolled = finite(q_against(cfg, o, run)?);
        summary.uncontrolled = Some(RunSummary::of(run));
    }
    summary.oracle = o.map(RunSummary::of);
    Ok(LoopSet {
        learned: learned_run,
        oracle: oracle_run,
        baseline,
        uncontrolled,
        summary,
    })
}

/// One row of a sweep CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub grid_value: f64,
    pub run: u64,
    pub seed: u64,
    pub q_t: f64,
    pub final_cost: Option<f64>,
    pub final_norm: f64,
    pub max_abs_state: f64,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Self {
        let (q25, median, q75) = quartiles(values);
        Quartiles { q25, median, q75 }
    }
}

/// Per-cell statistics; infinite losses count as the largest values and
/// serialize as `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub grid_value: f64,
    pub runs: usize,
    pub ok: usize,
    pub q_t: Quartiles,
    pub final_norm: Quartiles,
}

/// Config of one sweep cell, derived from the unresolved base config.
pub fn sweep_cell_config(base: &ExperimentConfig, kind: SweepKind, value: f64) -> Result<ExperimentConfig> {
    let mut c = base.clone();
    let whole = |v: f64| -> Result<usize> {
        if v >= 1.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(Error::Config(format!("grid value {v} must be a positive integer")))
        }
    };
    match kind {
        SweepKind::DictOrder => {
            c.dicts.p = whole(value)? as u32;
            c.dicts.phi = None;
            c.dicts.theta = None;
            c.dicts.gamma = None;
        }
        SweepKind::DataSize => c.n = Some(whole(value)?),
        SweepKind::Sampling => {
            if !(value > 0.0) {
                return Err(Error::Config("sampling intervals must be positive".into()));
            }
            c.closed_loop.tau.get_or_insert(base.tau);
            c.tau = value;
            c.n = Some((base.sweep.duration / value).round().max(1.0) as usize);
        }
    }
    c.resolve("sweep")
}

fn sweep_job(cfg: &ExperimentConfig, value: f64, run: u64, seed: u64, oracle: Option<&ClosedLoopRun>) -> SweepRow {
    let mut row = SweepRow {
        grid_value: value,
        run,
        seed,
        q_t: f64::INFINITY,
        final_cost: None,
        final_norm: f64::NAN,
        max_abs_state: f64::NAN,
        status: String::new(),
    };
    let sys = match cfg.build_system() {
        Ok(s) => s,
        Err(_) => {
            row.status = "config_error".into();
            return row;
        }
    };
    let traj = match collect(cfg, &sys, seed) {
        Ok(t) => t,
        Err(_) => {
            row.status = "collect_failed".into();
            return row;
        }
    };
    let fit = match fit_transform(cfg, &traj, seed) {
        Ok(f) => f,
        Err(_) => {
            row.status = "fit_failed".into();
            return row;
        }
    };
    row.final_cost = fit.params.diagnostics.final_cost;
    let run = match fit.params.realize().and_then(|t| closed_loop(cfg, &sys, &t)) {
        Ok(r) => r,
        Err(_) => {
            row.status = "loop_failed".into();
            return row;
        }
    };
    let s = RunSummary::of(&run);
    row.final_norm = s.final_norm;
    row.max_abs_state = s.max_abs_state;
    row.status = run.status.label().into();
    if let Some(o) = oracle {
        row.q_t = loss_qt(&run.traj, &o.traj, cfg.closed_loop.t_end).unwrap_or(f64::INFINITY);
    }
    row
}

/// Runs every `(grid value, run)` pair in parallel. Run `i` uses the same
/// derived seed in every cell. Rows are sorted by grid value, then seed.
pub fn run_sweep(base: &ExperimentConfig, kind: SweepKind, grid: &[f64], runs: usize) -> Result<(Vec<SweepRow>, Vec<CellSummary>)> {
    if grid.is_empty() || runs == 0 {
        return Err(Error::Config("a sweep needs a nonempty grid and at least one run".into()));
    }
    let cells: Vec<(f64, ExperimentConfig)> = grid
        .iter()
        .map(|v| sweep_cell_config(base, kind, *v).map(|c| (*v, c)))
        .collect::<Result<_>>()?;
    let oracles: Vec<Option<ClosedLoopRun>> = cells
        .iter()
        .map(|(_, c)| {
            let sys = c.build_system()?;
            oracle_params(c)?
                .map(|p| closed_loop(c, &sys, &p.realize()?))
                .transpose()
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| (0..runs as u64).map(move |r| (c, r)))
        .collect();
    let mut rows: Vec<SweepRow> = jobs
        .par_iter()
        .map(|&(c, r)| {
            let (value, cfg) = &cells[c];
            sweep_job(cfg, *value, r, run_seed(base, r), oracles[c].as_ref())
        })
        .collect();
    rows.sort_by(|a, b| a.grid_value.total_cmp(&b.grid_value).then(a.seed.cmp(&b.seed)));
    let summary = summarize(&rows);
    Ok((rows, summary))
}

/// Per-cell quartiles over the rows (in row order per grid value).
pub fn summarize(rows: &[SweepRow]) -> Vec<CellSummary> {
    let mut out: Vec<CellSummary> = Vec::new();
    let mut i = 0;
    while i < rows.len() {
        let v = rows[i].grid_value;
        let cell: Vec<&SweepRow> = rows[i..].iter().take_while(|r| r.grid_value == v).collect();
        let q: Vec<f64> = cell.iter().map(|r| r.q_t).collect();
        let norms: Vec<f64> = cell.iter().map(|r| if r.final_norm.is_nan() { f64::INFINITY } else { r.final_norm }).collect();
        out.push(CellSummary {
            grid_value: v,
            runs: cell.len(),
            ok: cell.iter().filter(|r| r.status == "ok").count(),
            q_t: Quartiles::of(&q),
            final_norm: Quartiles::of(&norms),
        });
        i += cell.len();
    }
    out
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["grid_value", "run", "seed", "q_t", "final_cost", "final_norm", "max_abs_state", "status"])?;
    for r in rows {
        w.write_record([
            r.grid_value.to_string(),
            r.run.to_string(),
            r.seed.to_string(),
            r.q_t.to_string(),
            r.final_cost.map(|c| c.to_string()).unwrap_or_default(),
            r.final_norm.to_string(),
            r.max_abs_state.to_string(),
            r.status.clone(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let bad = |msg: &str| Error::Parse {
            line: i + 2,
            msg: msg.to_string(),
        };
        let num = |k: usize| -> Result<f64> { rec.get(k).unwrap_or("").parse().map_err(|_| bad("bad number")) };
        let int = |k: usize| -> Result<u64> { rec.get(k).unwrap_or("").parse().map_err(|_| bad("bad integer")) };
        rows.push(SweepRow {
            grid_value: num(0)?,
            run: int(1)?,
            seed: int(2)?,
            q_t: num(3)?,
            final_cost: match rec.get(4) {
                Some("") | None => None,
                Some(s) => Some(s.parse().map_err(|_| bad("bad number"))?),
            },
            final_norm: num(5)?,
            max_abs_state: num(6)?,
            status: rec.get(7).unwrap_or("").to_string(),
        });
    }
    Ok(rows)
}

/// Geometry checks over points drawn from the run seed.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerifyOutcome {
    pub system: String,
    pub reports: Vec<GeometryReport>,
    pub verdict: bool,
}

pub fn verify(cfg: &ExperimentConfig, seed: u64) -> Result<VerifyOutcome> {
    let sys = cfg.build_system()?;
    let n = sys.n;
    let w = cfg.verify.half_width.unwrap_or(1.0);
    let depth = cfg.verify.depth.unwrap_or(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<DVector<f64>> = (0..cfg.verify.points.unwrap_or(100))
        .map(|_| DVector::from_fn(n, |_, _| rng.random_range(-w..=w)))
        .collect();
    let tol = cfg.verify.tol;
    let mut reports = Vec::new();

    let out = cfg.output.unwrap_or(OutputMap::Coord { coord: 0 });
    let h = move |x: &DVector<f64>| out.eval(x.as_slice());
    let r_expected = cfg.r.unwrap_or(2);
    let mut rel = GeometryReport {
        property: format!("relative_degree(expected={r_expected})"),
        tolerance: tol,
        points: Vec::new(),
        excluded: Vec::new(),
        verdict: true,
        notes: Vec::new(),
    };
    for x in &points {
        match relative_degree(&sys, &h, x, n, tol) {
            Ok(r) => {
                let pass = r == r_expected;
                rel.verdict &= pass;
                rel.points.push(crate::geomverify::PointRecord {
                    x: x.iter().copied().collect(),
                    values: vec![r as f64],
                    pass,
                });
            }
            Err(e) => rel.excluded.push(crate::geomverify::ExcludedPoint {
                x: x.iter().copied().collect(),
                note: e.to_string(),
            }),
        }
    }
    if rel.points.is_empty() {
        rel.verdict = false;
    }
    reports.push(rel);
    reports.push(distribution_rank(&sys, depth, &points, tol, Some(depth.min(n)))?);
    let inv_depth = depth.min(n.saturating_sub(1)).max(1);
    reports.push(involutivity_check(&sys, inv_depth, &points, tol.max(1e-4))?);
    if let Some(p) = oracle_params(cfg)? {
        let t = p.realize()?;
        if t.r() <= 3 {
            let th = t.clone();
            let hh = move |x: &DVector<f64>| th.h(x).unwrap_or(f64::NAN);
            let alpha = move |x: &DVector<f64>| t.alpha(x).ok().filter(|a| a.is_finite());
            reports.push(check_nilpotency(&sys, &hh, &alpha, p.r, &points, cfg.verify.nilpotency_tol)?);
        }
    }
    let verdict = reports.iter().all(|r| r.verdict);
    Ok(VerifyOutcome {
        system: sys.name.clone(),
        reports,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vdp() -> ExperimentConfig {
        ExperimentConfig::default().resolve("test").unwrap()
    }

    #[test]
    fn summaries_are_recomputable() {
        let rows: Vec<SweepRow> = [(1.0, 3.0), (1.0, f64::INFINITY), (1.0, 1.0), (2.0, 0.5)]
            .iter()
            .enumerate()
            .map(|(i, (g, q))| SweepRow {
                grid_value: *g,
                run: i as u64,
                seed: i as u64,
                q_t: *q,
                final_cost: if i == 0 { None } else { Some(0.1 * i as f64) },
                final_norm: 0.01,
                max_abs_state: 1.0,
                status: "ok".into(),
            })
            .collect();
        let text = String::from_utf8(sweep_csv(&rows).unwrap()).unwrap();
        let back = parse_sweep_csv(&text).unwrap();
        assert_eq!(back, rows);
        let s = summarize(&back);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].q_t.median, 3.0);
        assert_eq!(s[0].q_t.q75, f64::INFINITY);
        assert_eq!(s[1].runs, 1);
    }

    #[test]
    fn single_step_pipeline() {
        let mut cfg = vdp();
        cfg.solver = SolverKind::SingleStep;
        let sys = cfg.build_system().unwrap();
        let traj = collect(&cfg, &sys, run_seed(&cfg, 0)).unwrap();
        assert_eq!(traj.states.ncols(), 301);
        let fit = fit_transform(&cfg, &traj, 0).unwrap();
        assert_eq!(fit.params.r, 2);
        let set = closed_loop_set(&cfg, Some(&fit.params), Some(&traj)).unwrap();
        assert!(set.summary.q_learned.is_some());
        assert!(set.summary.q_uncontrolled.is_some());
        assert!(set.baseline.is_some());
        assert!(set.oracle.unwrap().status.is_ok());
    }

    #[test]
    fn sampling_cells_keep_duration() {
        let base = ExperimentConfig::default();
        let c = sweep_cell_config(&base, SweepKind::Sampling, 0.001).unwrap();
        assert_eq!(c.n, Some(3000));
        assert_eq!(c.closed_loop.tau, Some(0.01));
        assert!(sweep_cell_config(&base, SweepKind::DataSize, 2.5).is_err());
        let d = sweep_cell_config(&base, SweepKind::DictOrder, 3.0).unwrap();
        assert_eq!(d.dicts.theta.unwrap().max_order, 3);
    }

    #[test]
    fn verify_vanderpol() {
        let mut cfg = vdp();
        cfg.verify.points = Some(20);
        let v = verify(&cfg, 1).unwrap();
        assert_eq!(v.reports.len(), 4);
        assert!(v.reports[0].verdict, "{:?}", v.reports[0]);
        assert!(v.reports[1].verdict);
    }
}
