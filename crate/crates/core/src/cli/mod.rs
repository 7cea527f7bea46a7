//! Command-line experiments: `collect`, `fit`, `closedloop`, `verify` and
//! `sweep`. Every run writes its artifacts and a `manifest.json` holding
//! the fully resolved config, which can be passed back via `--config` to
//! repeat the run.

pub mod config;
pub mod pipeline;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::solvers::TransformParams;
use crate::systems::{save_trajectory, trajectory_csv};
use crate::util::write_atomic;
pub use config::{ExperimentConfig, SolverKind, SweepKind, SystemName};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NUMERIC: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "kgfl", version, about = "Data-driven feedback linearization experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(clap::Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON config file (or a manifest from an earlier run).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides as `--dotted.key value` pairs, e.g. `--tau 0.001`.
    #[arg(allow_hyphen_values = true, trailing_var_arg = true, num_args = 0.., value_name = "--KEY VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Excite the system and save the trajectory.
    Collect(Common),
    /// Collect data and fit the transformation.
    Fit(Common),
    /// Run learned, model-based and baseline controllers in closed loop.
    Closedloop {
        /// TransformParams JSON from `fit`; omitted for model-only runs.
        #[arg(long)]
        params: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Check relative degree, distribution rank, involutivity and
    /// nilpotency at sampled points.
    Verify(Common),
    /// Repeat fit + closed loop over a grid of settings.
    Sweep {
        #[arg(long, value_enum)]
        kind: Option<KindArg>,
        /// Comma-separated grid values.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        #[arg(long)]
        runs: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
pub enum KindArg {
    DictOrder,
    DataSize,
    Sampling,
}

impl From<KindArg> for SweepKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::DictOrder => SweepKind::DictOrder,
            KindArg::DataSize => SweepKind::DataSize,
            KindArg::Sampling => SweepKind::Sampling,
        }
    }
}

/// Pairs `--key value` tokens.
pub fn parse_overrides(tokens: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = tokens.iter();
    while let Some(tok) = it.next() {
        let key = tok
            .strip_prefix("--")
            .ok_or_else(|| Error::Config(format!("expected --key, found '{tok}'")))?;
        if let Some((k, v)) = key.split_once('=') {
            out.push((k.to_string(), v.to_string()));
            continue;
        }
        let value = it
            .next()
            .ok_or_else(|| Error::Config(format!("--{key} needs a value")))?;
        out.push((key.to_string(), value.clone()));
    }
    Ok(out)
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Input(_) | Error::Parse { .. } | Error::Json(_) => EXIT_CONFIG,
        _ => EXIT_NUMERIC,
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    manifest_version: u32,
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    args: serde_json::Value,
    config: &'a ExperimentConfig,
    seeds: serde_json::Value,
    status: &'a str,
    error: Option<String>,
    files: Vec<String>,
}

struct Run<'a> {
    command: &'a str,
    cfg: ExperimentConfig,
    dir: PathBuf,
    args: serde_json::Value,
    seeds: serde_json::Value,
    files: Vec<String>,
}

impl<'a> Run<'a> {
    fn new(command: &'a str, common: &Common, edit: impl FnOnce(&mut ExperimentConfig)) -> Result<Self> {
        let overrides = parse_overrides(&common.overrides)?;
        let mut raw = ExperimentConfig::with_overrides(common.config.as_deref(), &overrides)?;
        edit(&mut raw);
        let cfg = raw.resolve(command)?;
        let dir = cfg.output_path();
        let master = cfg.seed;
        Ok(Run {
            command,
            cfg,
            dir,
            args: json!({}),
            seeds: json!({ "master": master }),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    fn manifest(&self, outcome: &Result<()>) -> Result<()> {
        let m = Manifest {
            manifest_version: 1,
            tool: "kgfl",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            args: self.args.clone(),
            config: &self.cfg,
            seeds: self.seeds.clone(),
            status: if outcome.is_ok() { "ok" } else { "failed" },
            error: outcome.as_ref().err().map(|e| format!("{e}")),
            files: self.files.clone(),
        };
        let mut bytes = serde_json::to_vec_pretty(&m)?;
        bytes.push(b'\n');
        write_atomic(&self.dir.join("manifest.json"), &bytes)
    }

    /// Runs `body`, then records the manifest whatever the outcome.
    fn finish(mut self, body: impl FnOnce(&mut Self) -> Result<()>) -> Result<PathBuf> {
        let outcome = body(&mut self);
        self.manifest(&outcome)?;
        outcome.map(|_| self.dir)
    }
}

fn cmd_collect(common: &Common) -> Result<PathBuf> {
    let mut run = Run::new("collect", common, |_| {})?;
    let seed = pipeline::run_seed(&run.cfg, 0);
    run.seeds["collect"] = json!(seed);
    run.finish(|run| {
        let sys = run.cfg.build_system()?;
        let traj = pipeline::collect(&run.cfg, &sys, seed)?;
        save_trajectory(&traj, &run.dir.join("trajectory.csv"))?;
        run.files.push("trajectory.csv".into());
        Ok(())
    })
}

fn cost_trace_csv(trace: &[f64]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["sweep", "cost"])?;
    for (i, c) in trace.iter().enumerate() {
        w.write_record([i.to_string(), c.to_string()])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn cmd_fit(common: &Common) -> Result<PathBuf> {
    let mut run = Run::new("fit", common, |_| {})?;
    let seed = pipeline::run_seed(&run.cfg, 0);
    run.seeds["collect"] = json!(seed);
    run.seeds["solver"] = json!(seed);
    run.finish(|run| {
        let sys = run.cfg.build_system()?;
        let traj = pipeline::collect(&run.cfg, &sys, seed)?;
        save_trajectory(&traj, &run.dir.join("trajectory.csv"))?;
        run.files.push("trajectory.csv".into());
        if run.cfg.solver == SolverKind::Baseline {
            let (lp, dict) = pipeline::fit_baseline(&run.cfg, &traj)?;
            let body = json!({
                "a": lp.a.row_iter().map(|r| r.iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>(),
                "b": lp.b.iter().copied().collect::<Vec<f64>>(),
                "dictionary": dict.spec,
                "residual": lp.residual,
                "warnings": lp.warnings,
            });
            run.write_json("baseline.json", &body)?;
            return run.write("cost_trace.csv", &cost_trace_csv(&[lp.residual * lp.residual])?);
        }
        let mut fit = pipeline::fit_transform(&run.cfg, &traj, seed)?;
        run.write("cost_trace.csv", &cost_trace_csv(&fit.cost_trace)?)?;
        fit.params.diagnostics.cost_trace_path = Some("cost_trace.csv".into());
        fit.params.save(&run.dir.join("params.json"))?;
        run.files.push("params.json".into());
        Ok(())
    })
}

fn load_params(path: &Path) -> Result<TransformParams> {
    TransformParams::load(path).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("{}: {io}", path.display())),
        other => other,
    })
}

fn cmd_closedloop(params: Option<&Path>, common: &Common) -> Result<PathBuf> {
    let mut run = Run::new("closedloop", common, |_| {})?;
    let learned = params.map(load_params).transpose()?;
    if let Some(p) = params {
        run.args["params"] = json!(p);
    }
    if let Some(p) = &learned {
        if p.dict_refs.theta.dim != run.cfg.state_dim() {
            return Err(Error::Config("params do not match the configured system".into()));
        }
    }
    if learned.is_none() && pipeline::oracle_params(&run.cfg)?.is_none() {
        return Err(Error::Config("no params given and no model-based transform for this system".into()));
    }
    let seed = pipeline::run_seed(&run.cfg, 0);
    if run.cfg.closed_loop.baseline {
        run.seeds["collect"] = json!(seed);
    }
    run.finish(|run| {
        let cfg = run.cfg.clone();
        let data = if cfg.closed_loop.baseline {
            let sys = cfg.build_system()?;
            Some(pipeline::collect(&cfg, &sys, seed)?)
        } else {
            None
        };
        let set = pipeline::closed_loop_set(&cfg, learned.as_ref(), data.as_ref())?;
        let r = cfg.r.unwrap_or(2);
        for (name, lr) in [
            ("closedloop_learned.csv", &set.learned),
            ("closedloop_oracle.csv", &set.oracle),
            ("closedloop_baseline.csv", &set.baseline),
        ] {
            if let Some(lr) = lr {
                let extra = if name.ends_with("baseline.csv") {
                    Vec::new()
                } else {
                    lr.extra_columns(r)
                };
                run.write(name, &trajectory_csv(&lr.traj, &extra)?)?;
            }
        }
        run.write_json("summary.json", &set.summary)
    })
}

fn cmd_verify(common: &Common) -> Result<PathBuf> {
    let mut run = Run::new("verify", common, |_| {})?;
    let seed = pipeline::run_seed(&run.cfg, 0);
    run.seeds["points"] = json!(seed);
    run.finish(|run| {
        let out = pipeline::verify(&run.cfg, seed)?;
        run.write_json("report.json", &out)
    })
}

fn cmd_sweep(kind: Option<KindArg>, grid: Option<Vec<f64>>, runs: Option<usize>, common: &Common) -> Result<PathBuf> {
    let overrides = parse_overrides(&common.overrides)?;
    let mut raw = ExperimentConfig::with_overrides(common.config.as_deref(), &overrides)?;
    if let Some(k) = kind {
        raw.sweep.kind = Some(k.into());
    }
    if let Some(g) = grid {
        raw.sweep.grid = g;
    }
    if let Some(n) = runs {
        raw.sweep.runs = n;
    }
    let kind = raw
        .sweep
        .kind
        .ok_or_else(|| Error::Config("sweep kind is required (--kind)".into()))?;
    let edited = raw.clone();
    let mut run = Run::new("sweep", common, move |c| *c = edited)?;
    // cells are derived from the unresolved base so system defaults follow
    // the swept setting
    let mut base = raw;
    base.output_dir = run.cfg.output_dir.clone();
    let seeds: Vec<u64> = (0..run.cfg.sweep.runs as u64).map(|i| pipeline::run_seed(&run.cfg, i)).collect();
    run.seeds["runs"] = json!(seeds);
    run.finish(|run| {
        let (rows, summary) = pipeline::run_sweep(&base, kind, &run.cfg.sweep.grid, run.cfg.sweep.runs)?;
        run.write("sweep.csv", &pipeline::sweep_csv(&rows)?)?;
        run.write_json("summary.json", &json!({ "kind": kind, "cells": summary }))
    })
}

pub fn execute(cli: &Cli) -> Result<PathBuf> {
    match &cli.command {
        Command::Collect(c) => cmd_collect(c),
        Command::Fit(c) => cmd_fit(c),
        Command::Closedloop { params, common } => cmd_closedloop(params.as_deref(), common),
        Command::Verify(c) => cmd_verify(c),
        Command::Sweep {
            kind,
            grid,
            runs,
            common,
        } => cmd_sweep(*kind, grid.clone(), *runs, common),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_tokens() {
        let toks: Vec<String> = ["--tau", "0.1", "--system.name=sixdim"].iter().map(|s| s.to_string()).collect();
        assert_eq!(
            parse_overrides(&toks).unwrap(),
            vec![("tau".into(), "0.1".into()), ("system.name".into(), "sixdim".into())]
        );
        assert!(parse_overrides(&["tau".to_string()]).is_err());
        assert!(parse_overrides(&["--tau".to_string()]).is_err());
    }

    #[test]
    fn clap_collects_free_overrides() {
        let cli = Cli::try_parse_from(["kgfl", "fit", "--config", "c.json", "--tau", "0.1", "--kgfl.sweeps", "5"]).unwrap();
        match cli.command {
            Command::Fit(c) => {
                assert_eq!(c.config, Some(PathBuf::from("c.json")));
                assert_eq!(c.overrides, vec!["--tau", "0.1", "--kgfl.sweeps", "5"]);
            }
            _ => panic!("wrong subcommand"),
        }
    }
}
