//! Command-line front end.
//!
//! ```text
//! onoff-tomo simulate    --config run.toml            -> <out>/records.csv
//! onoff-tomo reconstruct --config run.toml --records <out>/records.csv
//!                                                      -> <out>/wigner.csv
//! onoff-tomo recover-rho --config run.toml --wigner <out>/wigner.csv
//!                                                      -> <out>/rho.csv
//! onoff-tomo report      --wigner a.csv [--reference b.csv] [--rho rho.csv]
//! onoff-tomo report      --sweep --config run.toml     -> <out>/sweep.csv
//! ```
//!
//! Each command also writes `<out>/<command>.json` with metrics and runtime.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::em::{run_em, EmTrace};
use crate::fock::DiagonalDistribution;
use crate::io::{
    fmt_f64, read_records, read_rho, read_wigner, wigner_estimate_from_rows, write_distributions,
    write_records, write_rho, write_traces, write_wigner, PointRecords, WignerRow,
};
use crate::rho::{compare_states, integrate_rho};
use crate::wigner::{delta_w, point_variance, scan_grid, simulate_point, WignerEstimate};
use crate::{Error, Result};

/// EM iteration and trial counts of the convergence sweep.
pub const SWEEP_ITERATIONS: [usize; 2] = [100, 1000];
pub const SWEEP_RUNS: [u64; 3] = [1_000, 10_000, 100_000];

#[derive(Debug, Parser)]
#[command(
    name = "onoff-tomo",
    version,
    about = "State reconstruction from on/off photodetection"
)]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate click records over the configured grid.
    Simulate(RunArgs),
    /// Reconstruct Wigner values from a records file.
    Reconstruct {
        #[command(flatten)]
        run: RunArgs,
        /// Records file written by `simulate`.
        #[arg(long)]
        records: PathBuf,
        /// Add the analytic Wigner function of the configured state.
        #[arg(long)]
        reference: bool,
        /// Also write the reconstructed distributions to distributions.csv.
        #[arg(long)]
        tables: bool,
        /// Also write per-iteration log-likelihoods to em_trace.csv.
        #[arg(long)]
        trace: bool,
    },
    /// Recover the density matrix from a Wigner file.
    RecoverRho {
        #[command(flatten)]
        run: RunArgs,
        /// Wigner file written by `reconstruct`.
        #[arg(long)]
        wigner: PathBuf,
    },
    /// Summarize artifacts, or run the convergence sweep.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML configuration, or any output file carrying a config header.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use exact probabilities instead of sampled counts.
    #[arg(long)]
    pub exact: bool,
    /// Overrides the configured output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Configuration; defaults to the header of the Wigner file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub wigner: Option<PathBuf>,
    /// Wigner file to compare against instead of the `w_exact` column.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Density-matrix file written by `recover-rho`.
    #[arg(long)]
    pub rho: Option<PathBuf>,
    /// Run the iterations × trials sweep of the configured scan.
    #[arg(long)]
    pub sweep: bool,
    /// Overrides the configured seed for the sweep.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for the report summary.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl RunArgs {
    /// Loads the configuration and applies command-line overrides.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if self.exact {
            cfg.exact_probabilities = true;
        }
        if let Some(out) = &self.out {
            cfg.output.dir = out.to_string_lossy().into_owned();
        }
        Ok(cfg)
    }
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(mut summary) => {
            // The config echo lives in the sidecar and the file headers.
            if let Some(map) = summary.as_object_mut() {
                map.remove("config");
            }
            let text = serde_json::to_string_pretty(&summary).unwrap_or_default();
            let _ = writeln!(std::io::stdout(), "{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<Value> {
    let work = || match &cli.command {
        Command::Simulate(run) => simulate(run),
        Command::Reconstruct {
            run,
            records,
            reference,
            tables,
            trace,
        } => reconstruct(
            run,
            records,
            ReconstructOutputs {
                reference: *reference,
                tables: *tables,
                trace: *trace,
            },
        ),
        Command::RecoverRho { run, wigner } => recover_rho(run, wigner),
        Command::Report(args) => report(args),
    };
    match cli.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    }
}

fn create_out(dir: &str) -> Result<PathBuf> {
    let path = PathBuf::from(dir);
    std::fs::create_dir_all(&path)?;
    Ok(path)
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn open_input(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Input(format!("cannot open {}: {e}", path.display())))
}

fn write_summary(dir: &Path, command: &str, mut summary: Value, start: Instant) -> Result<Value> {
    summary["command"] = json!(command);
    summary["runtime_s"] = json!(start.elapsed().as_secs_f64());
    let file = create_file(&dir.join(format!("{command}.json")))?;
    serde_json::to_writer_pretty(file, &summary).map_err(|e| Error::Io(e.into()))?;
    Ok(summary)
}

fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

pub fn simulate(args: &RunArgs) -> Result<Value> {
    let start = Instant::now();
    let cfg = args.resolve()?;
    let pipeline = cfg.pipeline(false)?;
    let rho = cfg.state.density(&pipeline.trunc)?;
    let points = (0..cfg.grid.len())
        .into_par_iter()
        .map(|i| {
            let gamma = cfg.grid.point(i);
            Ok(PointRecords {
                point_index: i,
                gamma,
                records: simulate_point(&rho, gamma, &pipeline, cfg.seed, i)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let dir = create_out(&cfg.output.dir)?;
    let path = dir.join("records.csv");
    write_records(create_file(&path)?, &cfg.header("simulate"), &points)?;
    write_summary(
        &dir,
        "simulate",
        json!({
            "output": path,
            "seed": cfg.seed,
            "points": points.len(),
            "rows": points.iter().map(|p| p.records.len()).sum::<usize>(),
            "config": cfg.to_toml(),
        }),
        start,
    )
}

/// Optional outputs of `reconstruct`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReconstructOutputs {
    pub reference: bool,
    pub tables: bool,
    pub trace: bool,
}

pub fn reconstruct(args: &RunArgs, records: &Path, outputs: ReconstructOutputs) -> Result<Value> {
    let start = Instant::now();
    let reference = outputs.reference;
    let cfg = args.resolve()?;
    let mut pipeline = cfg.pipeline(false)?;
    pipeline.em.record_trace = outputs.trace;
    let points = read_records(open_input(records)?)?;
    let results: Vec<Result<(DiagonalDistribution, EmTrace)>> = points
        .par_iter()
        .map(|p| run_em(&p.records, &pipeline.em, &pipeline.trunc))
        .collect();
    let variances: Option<Vec<f64>> = if cfg.repetitions >= 2 {
        let rho = cfg.state.density(&pipeline.trunc)?;
        Some(
            points
                .par_iter()
                .map(|p| {
                    point_variance(
                        &rho,
                        p.gamma,
                        &pipeline,
                        cfg.repetitions,
                        cfg.seed,
                        p.point_index,
                    )
                    .unwrap_or(f64::NAN)
                })
                .collect(),
        )
    } else {
        None
    };

    let mut rows = Vec::with_capacity(points.len());
    let mut failures = Vec::new();
    let mut fitted = Vec::new();
    for (k, (point, result)) in points.iter().zip(results).enumerate() {
        let (w_rec, loglik) = match result {
            Ok((dist, trace)) => {
                let value = (dist.wigner(), trace.final_log_likelihood);
                fitted.push((point.point_index, dist, trace));
                value
            }
            Err(e) => {
                failures.push(json!({"point_index": point.point_index, "message": e.to_string()}));
                (f64::NAN, f64::NAN)
            }
        };
        rows.push(WignerRow {
            point_index: point.point_index,
            gamma: point.gamma,
            w_rec,
            w_exact: reference.then(|| cfg.state.analytic_wigner(point.gamma)),
            w_variance: variances.as_ref().map(|v| v[k]),
            em_final_loglik: loglik,
        });
    }
    let delta = reference.then(|| mean_abs_error(&rows));

    let dir = create_out(&cfg.output.dir)?;
    let path = dir.join("wigner.csv");
    let header = cfg.header("reconstruct");
    write_wigner(create_file(&path)?, &header, &rows)?;
    let tables_path = dir.join("distributions.csv");
    if outputs.tables {
        let tables: Vec<_> = fitted.iter().map(|(i, d, _)| (*i, d)).collect();
        write_distributions(create_file(&tables_path)?, &header, &tables)?;
    }
    let trace_path = dir.join("em_trace.csv");
    if outputs.trace {
        let traces: Vec<_> = fitted.iter().map(|(i, _, t)| (*i, t)).collect();
        write_traces(create_file(&trace_path)?, &header, &traces)?;
    }
    write_summary(
        &dir,
        "reconstruct",
        json!({
            "output": path,
            "distributions": outputs.tables.then_some(&tables_path),
            "em_trace": outputs.trace.then_some(&trace_path),
            "points": rows.len(),
            "failed_points": failures.len(),
            "failures": failures,
            "delta_w": delta.map(finite_or_null),
            "config": cfg.to_toml(),
        }),
        start,
    )?;
    if !failures.is_empty() {
        return Err(Error::PointFailures {
            failed: failures.len(),
            total: rows.len(),
        });
    }
    Ok(json!({"output": path, "points": rows.len(), "delta_w": delta.map(finite_or_null)}))
}

/// Mean of `|w_exact - w_rec|` over rows where both are finite.
fn mean_abs_error(rows: &[WignerRow]) -> f64 {
    let diffs: Vec<f64> = rows
        .iter()
        .filter_map(|r| r.w_exact.map(|e| (e - r.w_rec).abs()))
        .filter(|d| d.is_finite())
        .collect();
    if diffs.is_empty() {
        f64::NAN
    } else {
        diffs.iter().sum::<f64>() / diffs.len() as f64
    }
}

pub fn recover_rho(args: &RunArgs, wigner: &Path) -> Result<Value> {
    let start = Instant::now();
    let cfg = args.resolve()?;
    let trunc = cfg.trunc()?;
    let rows = read_wigner(open_input(wigner)?)?;
    let estimate = wigner_estimate_from_rows(&rows, cfg.grid)?;
    let recovered = integrate_rho(&estimate, trunc.n_trunc)?;
    let exact = cfg.state.density(&trunc)?.truncated(trunc.n_trunc);
    let cmp = compare_states(&exact, &recovered.matrix)?;
    if let Some(w) = &recovered.warning {
        eprintln!("warning: {w}");
    }
    let dir = create_out(&cfg.output.dir)?;
    let path = dir.join("rho.csv");
    write_rho(
        create_file(&path)?,
        &cfg.header("recover-rho"),
        &recovered.matrix,
    )?;
    write_summary(
        &dir,
        "recover-rho",
        json!({
            "output": path,
            "dimension": trunc.n_trunc,
            "trace": recovered.trace,
            "hermitization_residual": recovered.hermitization_residual,
            "min_eigenvalue": recovered.min_eigenvalue(),
            "warning": recovered.warning,
            "against_configured_state": cmp,
            "config": cfg.to_toml(),
        }),
        start,
    )
}

pub fn report(args: &ReportArgs) -> Result<Value> {
    let start = Instant::now();
    if args.sweep {
        return sweep(args, start);
    }
    let wigner_path = args
        .wigner
        .as_ref()
        .ok_or_else(|| Error::Config("report needs --wigner or --sweep".into()))?;
    let rows = read_wigner(open_input(wigner_path)?)?;
    let mut summary = json!({ "wigner": wigner_path, "points": rows.len() });

    let delta = match &args.reference {
        Some(reference) => {
            let other = read_wigner(open_input(reference)?)?;
            if other.len() != rows.len()
                || other
                    .iter()
                    .zip(&rows)
                    .any(|(a, b)| a.point_index != b.point_index || a.gamma != b.gamma)
            {
                return Err(Error::DimensionMismatch(
                    "Wigner files cover different points".into(),
                ));
            }
            let paired: Vec<WignerRow> = rows
                .iter()
                .zip(&other)
                .map(|(a, b)| WignerRow {
                    w_exact: Some(b.w_rec),
                    ..a.clone()
                })
                .collect();
            Some(mean_abs_error(&paired))
        }
        None if rows.iter().any(|r| r.w_exact.is_some()) => Some(mean_abs_error(&rows)),
        None => None,
    };
    summary["delta_w"] = json!(delta.map(finite_or_null));
    let failed = rows.iter().filter(|r| !r.w_rec.is_finite()).count();
    summary["failed_points"] = json!(failed);

    let cfg = match &args.config {
        Some(path) => Some(RunConfig::load(path)?),
        None => RunConfig::load(wigner_path).ok(),
    };
    if let Some(path) = &args.rho {
        let rho = read_rho(open_input(path)?)?;
        summary["trace"] = json!(rho.trace().re);
        if let Some(cfg) = &cfg {
            let trunc = cfg.trunc()?;
            let exact = cfg
                .state
                .density(&trunc)?
                .truncated(rho.nrows().min(trunc.n_trunc));
            if exact.nrows() == rho.nrows() {
                summary["comparison"] = json!(compare_states(&exact, &rho)?);
            }
        }
    }
    if let Some(cfg) = &cfg {
        summary["config"] = json!(cfg.to_toml());
    }
    let mut runtimes = serde_json::Map::new();
    if let Some(parent) = wigner_path.parent() {
        for command in ["simulate", "reconstruct", "recover-rho"] {
            let sidecar = parent.join(format!("{command}.json"));
            if let Ok(text) = std::fs::read_to_string(&sidecar) {
                if let Ok(v) = serde_json::from_str::<Value>(&text) {
                    runtimes.insert(command.into(), v["runtime_s"].clone());
                }
            }
        }
    }
    summary["stage_runtime_s"] = Value::Object(runtimes);
    let dir = match &args.out {
        Some(out) => create_out(&out.to_string_lossy())?,
        None => wigner_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default(),
    };
    write_summary(&dir, "report", summary, start)
}

/// One row of the convergence sweep.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SweepRow {
    pub n_iterations: usize,
    pub n_runs: u64,
    pub repetition: usize,
    pub delta_w: f64,
}

/// δW of the configured scan against the analytic Wigner function for
/// every combination of iterations and trials.
pub fn run_sweep(cfg: &RunConfig, iterations: &[usize], runs: &[u64]) -> Result<Vec<SweepRow>> {
    let base = cfg.pipeline(false)?;
    let rho = cfg.state.density(&base.trunc)?;
    let exact = WignerEstimate::from_fn(cfg.grid, |g| cfg.state.analytic_wigner(g));
    let mut rows = Vec::new();
    for &n_iterations in iterations {
        for &n_runs in runs {
            for repetition in 0..cfg.repetitions {
                let mut pipeline = base.clone();
                pipeline.em.n_iterations = n_iterations;
                pipeline.n_runs = n_runs;
                let seed = crate::measurement::repetition_seed(cfg.seed, repetition as u64);
                let est = scan_grid(&rho, &cfg.grid, &pipeline, seed)?;
                rows.push(SweepRow {
                    n_iterations,
                    n_runs,
                    repetition,
                    delta_w: delta_w(&exact, &est)?.delta_w,
                });
            }
        }
    }
    Ok(rows)
}

fn sweep(args: &ReportArgs, start: Instant) -> Result<Value> {
    let path = args
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--sweep needs --config".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output.dir = out.to_string_lossy().into_owned();
    }
    let rows = run_sweep(&cfg, &SWEEP_ITERATIONS, &SWEEP_RUNS)?;
    let dir = create_out(&cfg.output.dir)?;
    let out_path = dir.join("sweep.csv");
    let mut file = create_file(&out_path)?;
    file.write_all(cfg.header("report --sweep").as_bytes())?;
    let mut w = csv::Writer::from_writer(file);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["n_iterations", "n_runs", "repetition", "delta_w"])
        .map_err(csv_err)?;
    for row in &rows {
        w.write_record([
            row.n_iterations.to_string(),
            row.n_runs.to_string(),
            row.repetition.to_string(),
            fmt_f64(row.delta_w),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    write_summary(
        &dir,
        "report",
        json!({ "output": out_path, "sweep": rows, "config": cfg.to_toml() }),
        start,
    )
}
