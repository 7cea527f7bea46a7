use std::path::{Path, PathBuf};

use nalgebra::{Complex, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::control::ClosedLoopOptions;
use crate::dictionary::{AugFn, DictSpec, Scheme};
use crate::error::{Error, Result};
use crate::solvers::{Alignment, KgflOptions, OutputMap, PinvOptions};
use crate::systems::{example_io_system, sixdim, sixdim_coefficients, vanderpol, CollectOptions, ControlAffineSystem};

/// Environment variable naming the root of default output directories.
pub const OUTPUT_ROOT_ENV: &str = "KGFL_OUTPUT_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SystemName {
    #[default]
    Vanderpol,
    Sixdim,
    ExampleIo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub name: SystemName,
    /// Explicit `a₁..a₁₀` for the six-state system; drawn from
    /// `coeff_seed` when absent.
    pub coefficients: Option<[f64; 10]>,
    pub coeff_seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    #[default]
    Kgfl,
    Als,
    SingleStep,
    Baseline,
}

impl SolverKind {
    pub fn label(self) -> &'static str {
        match self {
            SolverKind::Kgfl => "kgfl",
            SolverKind::Als => "als",
            SolverKind::SingleStep => "single_step",
            SolverKind::Baseline => "baseline",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    DictOrder,
    DataSize,
    Sampling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DictConfig {
    /// Per-coordinate Hermite order used for the default dictionaries.
    pub p: u32,
    pub phi: Option<DictSpec>,
    pub theta: Option<DictSpec>,
    pub gamma: Option<DictSpec>,
}

impl Default for DictConfig {
    fn default() -> Self {
        DictConfig {
            p: 2,
            phi: None,
            theta: None,
            gamma: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClosedLoopConfig {
    /// Defaults to the data sampling interval.
    pub tau: Option<f64>,
    pub t_end: f64,
    pub substeps: usize,
    pub eta_min: f64,
    /// Also run the lifted linear predictor with state feedback.
    pub baseline: bool,
}

impl Default for ClosedLoopConfig {
    fn default() -> Self {
        ClosedLoopConfig {
            tau: None,
            t_end: 10.0,
            substeps: 1,
            eta_min: crate::control::ETA_MIN,
            baseline: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// Defaults to 100, or 10 for the six-state system whose depth-6
    /// nested differences are expensive.
    pub points: Option<usize>,
    /// Span depth for the rank check; involutivity uses `min(depth, n−1)`.
    pub depth: Option<usize>,
    /// Points are drawn uniformly from `[−w, w]ⁿ`.
    pub half_width: Option<f64>,
    pub tol: f64,
    pub nilpotency_tol: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            points: None,
            depth: None,
            half_width: None,
            tol: 1e-6,
            nilpotency_tol: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub kind: Option<SweepKind>,
    pub grid: Vec<f64>,
    pub runs: usize,
    /// Experiment duration held fixed by the sampling sweep (seconds).
    pub duration: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            kind: None,
            grid: Vec::new(),
            runs: 10,
            duration: 3.0,
        }
    }
}

/// Everything an experiment needs. `None` fields take system-dependent
/// defaults in [`ExperimentConfig::resolve`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub x0: Option<Vec<f64>>,
    pub tau: f64,
    pub n: Option<usize>,
    pub sigma: f64,
    /// RK4 substeps per sample during data collection.
    pub substeps: Option<usize>,
    pub enforce_domain: bool,
    pub retry_cap: usize,
    pub r: Option<usize>,
    /// Input-output mode when set; `φ` is then unused.
    pub output: Option<OutputMap>,
    pub dicts: DictConfig,
    pub solver: SolverKind,
    pub kgfl: KgflOptions,
    pub als_sweeps: usize,
    pub pinv: PinvOptions,
    pub scheme: Scheme,
    pub alignment: Alignment,
    /// Closed-loop poles as `[re, im]`.
    pub poles: Option<Vec<[f64; 2]>>,
    pub closed_loop: ClosedLoopConfig,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub verify: VerifyConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            system: SystemConfig::default(),
            x0: None,
            tau: 0.01,
            n: None,
            sigma: 5.0,
            substeps: None,
            enforce_domain: true,
            retry_cap: 5,
            r: None,
            output: None,
            dicts: DictConfig::default(),
            solver: SolverKind::default(),
            kgfl: KgflOptions::default(),
            als_sweeps: 1,
            pinv: PinvOptions::default(),
            scheme: Scheme::default(),
            alignment: Alignment::default(),
            poles: None,
            closed_loop: ClosedLoopConfig::default(),
            seed: 0,
            output_dir: None,
            verify: VerifyConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Sets `path` (dot-separated keys) in a JSON tree, creating objects for
/// missing or null intermediate keys. The value is parsed as JSON when
/// possible and taken as a string otherwise.
pub fn apply_override(root: &mut Value, path: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(config_err(format!("malformed override key '{path}'")));
    }
    let mut node = root;
    for key in &keys[..keys.len() - 1] {
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        node = match node {
            Value::Object(map) => map.entry(key.to_string()).or_insert(Value::Null),
            Value::Array(items) => {
                let i: usize = key
                    .parse()
                    .map_err(|_| config_err(format!("'{key}' in '{path}' is not an array index")))?;
                items
                    .get_mut(i)
                    .ok_or_else(|| config_err(format!("index {i} out of range in '{path}'")))?
            }
            _ => return Err(config_err(format!("'{path}' descends into a scalar"))),
        };
    }
    let last = keys[keys.len() - 1];
    if node.is_null() {
        *node = Value::Object(Default::default());
    }
    match node {
        Value::Object(map) => {
            map.insert(last.to_string(), value);
        }
        Value::Array(items) => {
            let i: usize = last
                .parse()
                .map_err(|_| config_err(format!("'{last}' in '{path}' is not an array index")))?;
            *items
                .get_mut(i)
                .ok_or_else(|| config_err(format!("index {i} out of range in '{path}'")))? = value;
        }
        _ => return Err(config_err(format!("'{path}' descends into a scalar"))),
    }
    Ok(())
}

impl ExperimentConfig {
    /// Reads a config file, or the `config` member of a run manifest.
    pub fn from_json_value(v: Value) -> Result<Self> {
        let v = match v {
            Value::Object(mut map) if map.contains_key("manifest_version") => {
                map.remove("config").ok_or_else(|| config_err("manifest has no config"))?
            }
            other => other,
        };
        serde_json::from_value(v).map_err(|e| config_err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let v: Value = serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_json_value(v)
    }

    /// Base config (file or defaults) with `key = value` overrides applied.
    pub fn with_overrides(base: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let cfg = match base {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if overrides.is_empty() {
            return Ok(cfg);
        }
        let mut v = serde_json::to_value(&cfg)?;
        for (k, raw) in overrides {
            apply_override(&mut v, k, raw)?;
        }
        serde_json::from_value(v).map_err(|e| config_err(e.to_string()))
    }

    pub fn state_dim(&self) -> usize {
        match self.system.name {
            SystemName::Vanderpol => 2,
            SystemName::Sixdim => 6,
            SystemName::ExampleIo => 3,
        }
    }

    pub fn sixdim_coefficients(&self) -> [f64; 10] {
        self.system
            .coefficients
            .unwrap_or_else(|| sixdim_coefficients(self.system.coeff_seed))
    }

    pub fn build_system(&self) -> Result<ControlAffineSystem> {
        match self.system.name {
            SystemName::Vanderpol => Ok(vanderpol()),
            SystemName::Sixdim => sixdim(self.sixdim_coefficients()).map_err(|e| config_err(e.to_string())),
            SystemName::ExampleIo => Ok(example_io_system()),
        }
    }

    fn default_dicts(&self) -> (DictSpec, DictSpec) {
        let n = self.state_dim();
        let p = self.dicts.p;
        match self.system.name {
            SystemName::Sixdim => {
                let base = (0..3).fold(DictSpec::tensor(n, p).total_degree(p), |s, c| s.augment(AugFn::Sin, c));
                (base.clone().without_constant(), base)
            }
            _ => (DictSpec::tensor(n, p).without_constant(), DictSpec::tensor(n, p)),
        }
    }

    /// Copy with every system-dependent default filled in, as recorded in
    /// manifests.
    pub fn resolve(&self, command: &str) -> Result<Self> {
        let mut c = self.clone();
        let n = self.state_dim();
        let six = self.system.name == SystemName::Sixdim;
        if six && c.system.coefficients.is_none() {
            c.system.coefficients = Some(self.sixdim_coefficients());
        }
        c.x0.get_or_insert_with(|| match (self.system.name, self.output) {
            (SystemName::Vanderpol, Some(_)) => vec![1.0, 0.0],
            (SystemName::Sixdim, _) => vec![0.5; n],
            _ => vec![1.0; n],
        });
        c.n.get_or_insert(if six { 250 } else { 300 });
        c.substeps.get_or_insert(if six { 4 } else { 1 });
        c.r.get_or_insert(match self.system.name {
            SystemName::Sixdim => 6,
            _ => 2,
        });
        let (phi, theta) = self.default_dicts();
        if c.output.is_none() {
            c.dicts.phi.get_or_insert(phi);
        }
        c.dicts.theta.get_or_insert(theta.clone());
        c.dicts.gamma.get_or_insert(theta);
        let r = c.r.unwrap_or(2);
        c.poles.get_or_insert_with(|| default_poles(r));
        c.closed_loop.tau.get_or_insert(self.tau);
        c.verify.points.get_or_insert(if six { 10 } else { 100 });
        c.verify.depth.get_or_insert(match self.system.name {
            SystemName::ExampleIo => 2,
            _ => n,
        });
        c.verify.half_width.get_or_insert(match self.system.name {
            SystemName::Vanderpol => 3.0,
            SystemName::Sixdim => 1.0,
            SystemName::ExampleIo => 2.0,
        });
        c.output_dir.get_or_insert_with(|| output_root().join(command));
        c.validate()?;
        Ok(c)
    }

    /// Checks a resolved config.
    pub fn validate(&self) -> Result<()> {
        let n = self.state_dim();
        let bad = |m: &str| Err(config_err(m.to_string()));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be positive");
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be positive");
        }
        if self.x0.as_ref().is_some_and(|x| x.len() != n || x.iter().any(|v| !v.is_finite())) {
            return bad("x0 must have one finite entry per state");
        }
        if self.r == Some(0) || self.n == Some(0) || self.substeps == Some(0) {
            return bad("r, n and substeps must be positive");
        }
        for (name, spec) in [("phi", &self.dicts.phi), ("theta", &self.dicts.theta), ("gamma", &self.dicts.gamma)] {
            if let Some(s) = spec {
                if s.dim != n {
                    return bad(&format!("{name} dictionary has dimension {}, system has {n}", s.dim));
                }
                crate::dictionary::Dictionary::new(s.clone())
                    .map_err(|e| config_err(format!("{name} dictionary: {e}")))?;
            }
        }
        if let Some(out) = &self.output {
            if out.coord() >= n {
                return bad("output coordinate out of range");
            }
            if self.solver == SolverKind::Baseline {
                return bad("the baseline solver has no input-output mode");
            }
        }
        if let (Some(p), Some(r)) = (&self.poles, self.r) {
            if p.len() != r {
                return bad(&format!("{} poles given for r = {r}", p.len()));
            }
            crate::control::monic_coefficients(&to_complex(p)).map_err(|e| config_err(e.to_string()))?;
        }
        let cl = &self.closed_loop;
        if cl.tau.is_some_and(|t| !(t > 0.0)) || !(cl.t_end > 0.0) || cl.substeps == 0 {
            return bad("closed-loop tau, t_end and substeps must be positive");
        }
        if self.solver == SolverKind::Als && self.als_sweeps == 0 {
            return bad("als_sweeps must be positive");
        }
        Ok(())
    }

    pub fn x0_vector(&self) -> DVector<f64> {
        DVector::from_vec(self.x0.clone().unwrap_or_else(|| vec![1.0; self.state_dim()]))
    }

    pub fn collect_options(&self, seed: u64) -> CollectOptions {
        CollectOptions {
            sigma: self.sigma,
            seed,
            retry_cap: self.retry_cap,
            enforce_domain: self.enforce_domain,
            substeps: self.substeps.unwrap_or(1),
        }
    }

    pub fn closed_loop_options(&self) -> ClosedLoopOptions {
        ClosedLoopOptions {
            tau: self.closed_loop.tau.unwrap_or(self.tau),
            t_end: self.closed_loop.t_end,
            substeps: self.closed_loop.substeps,
            eta_min: self.closed_loop.eta_min,
            z_ref: true,
        }
    }

    pub fn output_path(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(output_root)
    }
}

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// `{−1±i, −2±i, …}` for even `r`; a real pole at −1 is appended for odd
/// `r`.
pub fn default_poles(r: usize) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(r);
    for k in 0..r / 2 {
        let re = -(k as f64 + 1.0);
        out.push([re, 1.0]);
        out.push([re, -1.0]);
    }
    if r % 2 == 1 {
        out.push([-((r / 2) as f64 + 1.0), 0.0]);
    }
    out
}

pub fn to_complex(poles: &[[f64; 2]]) -> Vec<Complex<f64>> {
    poles.iter().map(|p| Complex::new(p[0], p[1])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_and_defaults() {
        let cfg = ExperimentConfig::with_overrides(
            None,
            &[
                ("tau".into(), "0.001".into()),
                ("system.name".into(), "sixdim".into()),
                ("kgfl.sweeps".into(), "10".into()),
                ("closed_loop.t_end".into(), "20".into()),
            ],
        )
        .unwrap();
        assert_eq!(cfg.tau, 0.001);
        assert_eq!(cfg.system.name, SystemName::Sixdim);
        assert_eq!(cfg.kgfl.sweeps, 10);
        let res = cfg.resolve("fit").unwrap();
        assert_eq!(res.x0, Some(vec![0.5; 6]));
        assert_eq!(res.r, Some(6));
        assert_eq!(res.poles.as_ref().unwrap().len(), 6);
        assert_eq!(res.closed_loop.tau, Some(0.001));
        assert!(res.dicts.phi.is_some() && res.system.coefficients.is_some());
        // resolving is idempotent
        assert_eq!(res.resolve("fit").unwrap(), res);

        assert!(ExperimentConfig::with_overrides(None, &[("nonsense".into(), "1".into())]).is_err());
        let bad = ExperimentConfig::with_overrides(None, &[("dicts.theta".into(), r#"{"dim":3,"max_order":2}"#.into())]);
        assert!(bad.unwrap().resolve("fit").is_err());
    }

    #[test]
    fn pole_defaults() {
        assert_eq!(default_poles(2), vec![[-1.0, 1.0], [-1.0, -1.0]]);
        assert_eq!(default_poles(1), vec![[-1.0, 0.0]]);
        assert_eq!(default_poles(6)[4], [-3.0, 1.0]);
    }

    #[test]
    fn json_paths() {
        let mut v = serde_json::json!({"a": {"b": [1, 2]}, "c": null});
        apply_override(&mut v, "a.b.1", "5").unwrap();
        apply_override(&mut v, "c.d", "text").unwrap();
        assert_eq!(v, serde_json::json!({"a": {"b": [1, 5]}, "c": {"d": "text"}}));
        assert!(apply_override(&mut v, "a.b.7", "1").is_err());
        assert!(apply_override(&mut v, "a..b", "1").is_err());
    }
}
