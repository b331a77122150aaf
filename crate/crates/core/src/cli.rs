//! Command implementations and on-disk output formats.
//!
//! A run directory contains:
//!
//! * `metrics.csv`: one row per round (see [`METRICS_COLUMNS`]); floats are
//!   written with 17 significant digits so they parse back bit-exactly.
//! * `metrics.schema.json`: column descriptions for `metrics.csv`.
//! * `result.json`: config echo plus a summary.
//! * `checkpoint.bin`: final parameters (little-endian, length-prefixed).

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ValidatedConfig};
use crate::error::{Error, Result};
use crate::model::write_checkpoint;
use crate::orchestrator::{run_experiment_with, Datasets, ExperimentResult};
use crate::scheduler::Policy;
use crate::verify::{verify_bounds, InstanceOutcome};

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Success = 0,
    /// A bound or assertion failed.
    Failure = 1,
    /// Bad usage, invalid config, or I/O trouble.
    Usage = 2,
}

impl Exit {
    pub fn code(self) -> i32 {
        self as i32
    }

    pub fn for_error(err: &Error) -> Exit {
        match err {
            Error::NonFiniteAtRound { .. } | Error::NonFinite { .. } => Exit::Failure,
            _ => Exit::Usage,
        }
    }
}

pub const METRICS_COLUMNS: [(&str, &str); 8] = [
    ("t", "round index, 0-based"),
    ("test_accuracy", "test-set accuracy after this round's update; empty when not evaluated"),
    ("train_loss", "mean minibatch cross-entropy over all workers at the broadcast parameters"),
    ("scheduled_fraction", "fraction of workers scheduled this round"),
    ("max_cumulative_energy", "max over workers of energy spent through this round, Joules"),
    ("test_loss", "test-set mean cross-entropy; empty when not evaluated"),
    ("mean_gradient_power", "mean over workers of the squared local gradient norm"),
    ("update_skipped", "1 if no worker was scheduled and the parameters were left unchanged"),
];

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Writes the per-round series; with `wide_queues`, one `q_<n>` column per
/// worker holds the pre-decision queue value.
pub fn write_metrics(result: &ExperimentResult, path: &Path, wide_queues: bool) -> Result<()> {
    let ctx = || format!("writing {}", path.display());
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(e, ctx()))?;
    let mut header: Vec<String> = METRICS_COLUMNS.iter().map(|(c, _)| c.to_string()).collect();
    if wide_queues {
        header.extend((0..result.config.num_workers).map(|n| format!("q_{n}")));
    }
    w.write_record(&header).map_err(|e| csv_err(e, ctx()))?;
    for r in &result.records {
        let mut row = vec![
            r.round.to_string(),
            fmt_opt(r.test_accuracy),
            fmt_f64(r.train_loss),
            fmt_f64(r.scheduled_fraction),
            fmt_f64(r.max_cumulative_energy()),
            fmt_opt(r.test_loss),
            fmt_f64(r.mean_gradient_power()),
            u8::from(r.update_skipped).to_string(),
        ];
        if wide_queues {
            row.extend(r.queues.iter().map(|&q| fmt_f64(q)));
        }
        w.write_record(&row).map_err(|e| csv_err(e, ctx()))?;
    }
    w.flush().map_err(|e| Error::io(ctx(), e))
}

fn csv_err(e: csv::Error, context: String) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(context, io),
        other => Error::Metrics(format!("{context}: {other:?}")),
    }
}

/// One parsed row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub t: usize,
    pub test_accuracy: Option<f64>,
    pub train_loss: f64,
    pub scheduled_fraction: f64,
    pub max_cumulative_energy: f64,
    pub test_loss: Option<f64>,
    pub mean_gradient_power: f64,
    pub update_skipped: bool,
    pub queues: Vec<f64>,
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(e, format!("reading {}", path.display())))?;
    let parse = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Metrics(format!("bad number `{s}`"))) };
    let opt = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            parse(s).map(Some)
        }
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(e, format!("reading {}", path.display())))?;
        if rec.len() < METRICS_COLUMNS.len() {
            return Err(Error::Metrics(format!("row has {} fields", rec.len())));
        }
        rows.push(MetricsRow {
            t: rec[0].parse().map_err(|_| Error::Metrics(format!("bad round `{}`", &rec[0])))?,
            test_accuracy: opt(&rec[1])?,
            train_loss: parse(&rec[2])?,
            scheduled_fraction: parse(&rec[3])?,
            max_cumulative_energy: parse(&rec[4])?,
            test_loss: opt(&rec[5])?,
            mean_gradient_power: parse(&rec[6])?,
            update_skipped: &rec[7] == "1",
            queues: rec.iter().skip(METRICS_COLUMNS.len()).map(parse).collect::<Result<_>>()?,
        });
    }
    Ok(rows)
}

fn write_schema(path: &Path, workers: usize, wide_queues: bool) -> Result<()> {
    let mut cols: Vec<serde_json::Value> = METRICS_COLUMNS
        .iter()
        .map(|(name, desc)| serde_json::json!({ "name": name, "description": desc }))
        .collect();
    if wide_queues {
        cols.extend((0..workers).map(|n| {
            serde_json::json!({ "name": format!("q_{n}"), "description": format!("pre-decision virtual queue of worker {n}") })
        }));
    }
    let doc = serde_json::json!({ "file": "metrics.csv", "float_format": "17 significant digits", "columns": cols });
    write_json(path, &doc)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub final_accuracy: Option<f64>,
    pub mean_scheduled_fraction: f64,
    pub total_energy: Vec<f64>,
    pub max_total_energy: f64,
    /// `T·Ē_n` per worker.
    pub energy_allowance: Vec<f64>,
    pub updates_skipped: usize,
    pub wall_clock_secs: f64,
}

impl RunSummary {
    pub fn of(result: &ExperimentResult) -> Self {
        let total = result.total_energy();
        let rounds = result.config.num_rounds as f64;
        RunSummary {
            final_accuracy: result.final_accuracy(),
            mean_scheduled_fraction: result.mean_scheduled_fraction(),
            max_total_energy: total.iter().copied().fold(0.0, f64::max),
            total_energy: total,
            energy_allowance: result
                .config
                .energy_budget
                .resolve(result.config.num_workers)
                .into_iter()
                .map(|b| b * rounds)
                .collect(),
            updates_skipped: result.records.iter().filter(|r| r.update_skipped).count(),
            wall_clock_secs: result.wall_clock.as_secs_f64(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultFile {
    pub config: ExperimentConfig,
    pub summary: RunSummary,
}

/// Writes every output file of one run into `out_dir`.
pub fn write_run_outputs(result: &ExperimentResult, out_dir: &Path, wide_queues: bool) -> Result<RunSummary> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    write_metrics(result, &out_dir.join("metrics.csv"), wide_queues)?;
    write_schema(&out_dir.join("metrics.schema.json"), result.config.num_workers, wide_queues)?;
    let summary = RunSummary::of(result);
    write_json(
        &out_dir.join("result.json"),
        &ResultFile {
            config: result.config.clone(),
            summary: summary.clone(),
        },
    )?;
    let ckpt = out_dir.join("checkpoint.bin");
    let file = File::create(&ckpt).map_err(|e| Error::io(format!("creating {}", ckpt.display()), e))?;
    write_checkpoint(&result.final_params, BufWriter::new(file)).map_err(|e| Error::io("writing checkpoint", e))?;
    Ok(summary)
}

/// Knobs shared by `run` and `sweep`.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub threads: usize,
    pub eval_stride: Option<usize>,
    pub wide_queues: bool,
}

pub fn load_config(path: &Path, opts: &RunOptions) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_file(path)?;
    if let Some(seed) = opts.seed {
        cfg.master_seed = seed;
    }
    if let Some(stride) = opts.eval_stride {
        cfg.eval_stride = stride;
    }
    Ok(cfg)
}

fn run_validated(cfg: &ValidatedConfig, data: &Datasets, out_dir: &Path, opts: &RunOptions) -> Result<RunSummary> {
    let result = run_experiment_with(cfg, data, opts.threads)?;
    write_run_outputs(&result, out_dir, opts.wide_queues)
}

pub fn cmd_run(config_path: &Path, out_dir: &Path, opts: &RunOptions) -> Result<RunSummary> {
    let cfg = load_config(config_path, opts)?.validate()?;
    let data = Datasets::load(&cfg)?;
    run_validated(&cfg, &data, out_dir, opts)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    Redundancy(Vec<usize>),
    Budget(Vec<f64>),
    Policy(Vec<Policy>),
}

impl SweepAxis {
    /// Parses `name` (`redundancy`, `budget` or `policy`) with a
    /// comma-separated value list.
    pub fn parse(name: &str, values: &str) -> std::result::Result<Self, String> {
        let items: Vec<&str> = values.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        if items.is_empty() {
            return Err("sweep axis needs at least one value".into());
        }
        fn all<T: std::str::FromStr>(items: &[&str]) -> std::result::Result<Vec<T>, String> {
            items
                .iter()
                .map(|s| s.parse().map_err(|_| format!("bad sweep value `{s}`")))
                .collect()
        }
        match name {
            "redundancy" | "r" => Ok(SweepAxis::Redundancy(all(&items)?)),
            "budget" | "energy_budget" => Ok(SweepAxis::Budget(all(&items)?)),
            "policy" => Ok(SweepAxis::Policy(all(&items)?)),
            other => Err(format!("unknown sweep axis `{other}`")),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Redundancy(_) => "redundancy",
            SweepAxis::Budget(_) => "budget",
            SweepAxis::Policy(_) => "policy",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SweepAxis::Redundancy(v) => v.len(),
            SweepAxis::Budget(v) => v.len(),
            SweepAxis::Policy(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Label and config for grid point `i`.
    pub fn point(&self, base: &ExperimentConfig, i: usize) -> (String, ExperimentConfig) {
        let mut cfg = base.clone();
        let label = match self {
            SweepAxis::Redundancy(v) => {
                cfg.redundancy = v[i];
                v[i].to_string()
            }
            SweepAxis::Budget(v) => {
                cfg.energy_budget = crate::config::EnergyBudget::Shared(v[i]);
                v[i].to_string()
            }
            SweepAxis::Policy(v) => {
                cfg.policy = v[i];
                v[i].to_string()
            }
        };
        (label, cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: String,
    pub dir: PathBuf,
    pub final_accuracy: Option<f64>,
    pub mean_scheduled_fraction: f64,
    pub max_total_energy: f64,
}

/// Runs every grid point with the base config's seed, so all points share
/// channel realizations, and writes `summary.csv` next to the per-point
/// directories.
pub fn cmd_sweep(config_path: &Path, axis: &SweepAxis, out_dir: &Path, opts: &RunOptions) -> Result<Vec<SweepRow>> {
    if axis.is_empty() {
        return Err(Error::Precondition("sweep axis is empty".into()));
    }
    let base = load_config(config_path, opts)?;
    let points: Vec<(String, ValidatedConfig)> = (0..axis.len())
        .map(|i| {
            let (label, cfg) = axis.point(&base, i);
            cfg.validate().map(|v| (label, v)).map_err(Error::from)
        })
        .collect::<Result<_>>()?;
    let data = Datasets::load(&points[0].1)?;
    let mut rows = Vec::new();
    for (label, cfg) in &points {
        let dir = out_dir.join(format!("{}_{label}", axis.name()));
        let summary = run_validated(cfg, &data, &dir, opts)?;
        rows.push(SweepRow {
            point: label.clone(),
            dir,
            final_accuracy: summary.final_accuracy,
            mean_scheduled_fraction: summary.mean_scheduled_fraction,
            max_total_energy: summary.max_total_energy,
        });
    }
    let path = out_dir.join("summary.csv");
    let ctx = || format!("writing {}", path.display());
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(e, ctx()))?;
    w.write_record([axis.name(), "final_accuracy", "mean_scheduled_fraction", "max_total_energy"])
        .map_err(|e| csv_err(e, ctx()))?;
    for r in &rows {
        w.write_record([
            r.point.clone(),
            fmt_opt(r.final_accuracy),
            fmt_f64(r.mean_scheduled_fraction),
            fmt_f64(r.max_total_energy),
        ])
        .map_err(|e| csv_err(e, ctx()))?;
    }
    w.flush().map_err(|e| Error::io(ctx(), e))?;
    Ok(rows)
}

pub fn format_sweep_table(axis: &str, rows: &[SweepRow]) -> String {
    let mut out = format!("{axis:>12} {:>10} {:>10} {:>12}\n", "accuracy", "sched", "max_energy");
    for r in rows {
        let acc = r.final_accuracy.map_or("-".to_string(), |a| format!("{:.4}", a));
        out.push_str(&format!(
            "{:>12} {:>10} {:>10.4} {:>12.3}\n",
            r.point, acc, r.mean_scheduled_fraction, r.max_total_energy
        ));
    }
    out
}

/// Runs the randomized bound suite; writes `bound_reports.json` when
/// `out_dir` is given. The caller maps "any failed" to exit code 1.
pub fn cmd_verify_bounds(instances: usize, seed: u64, weights: &[f64], out_dir: Option<&Path>) -> Result<Vec<InstanceOutcome>> {
    let outcomes = verify_bounds(instances, seed, weights)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        write_json(&dir.join("bound_reports.json"), &outcomes)?;
    }
    Ok(outcomes)
}

pub fn format_outcome(o: &InstanceOutcome) -> String {
    let (u_ok, e_ok) = o.report.satisfied();
    format!(
        "instance {:>3} V={:<6} N={} T={:>2} u†={:.5} u*={:.5} utility_slack={:.4e} min_energy_slack={:.4e} utility={} energy={} drift={}",
        o.instance,
        o.weight,
        o.num_workers,
        o.num_rounds,
        o.report.u_dagger,
        o.report.u_star,
        o.report.utility_slack,
        o.report.energy_slack.iter().copied().fold(f64::INFINITY, f64::min),
        if u_ok { "ok" } else { "VIOLATED" },
        if e_ok { "ok" } else { "VIOLATED" },
        if o.drift.holds() { "ok" } else { "VIOLATED" },
    )
}

pub fn print_failures(outcomes: &[InstanceOutcome], mut out: impl Write) -> std::io::Result<()> {
    for o in outcomes.iter().filter(|o| !o.passed()) {
        writeln!(out, "violated: {}", format_outcome(o))?;
        writeln!(out, "  budget: {}", o.budget)?;
        for (n, (tr, s)) in o.traces.iter().zip(&o.schedules).enumerate() {
            writeln!(out, "  worker {n} energies: {:?}", tr.energies)?;
            writeln!(out, "  worker {n} gammas:   {:?}", tr.gammas)?;
            writeln!(out, "  worker {n} schedule: {:?}", s)?;
        }
        for v in &o.drift.violations {
            writeln!(out, "  drift violation: {v:?}")?;
        }
    }
    Ok(())
}
