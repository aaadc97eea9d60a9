//! Command-line runner: `run`, `sweep` and `comm-table`.
//!
//! Exit codes: 0 on success, 1 for usage or config errors, 2 for failures
//! while running. Files written by a failed command are removed.

mod comm;
mod config;
mod metrics;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;

pub use comm::{
    comm_table, distilbert_table, preset_table, render_table, CommLedgerEntry, Mixture,
};
pub use config::{load_config, parse_config, render_config, DEFAULT_PRESET};
pub use metrics::{emit_metrics, write_metrics, COLUMNS};

use crate::error::{Error, Result};
pub use crate::federation::RoundRecord;
use crate::federation::{ExperimentConfig, ExperimentOutcome, Federation};

#[derive(Parser, Debug)]
#[command(
    name = "hetlora",
    version,
    about = "Rank-heterogeneous federated LoRA simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one experiment and write its metrics CSV.
    Run {
        config: PathBuf,
        #[arg(long, short, default_value = "metrics.csv")]
        out: PathBuf,
    },
    /// Print the uplink cost table for a preset model layout.
    CommTable {
        #[arg(default_value = "distilbert-preset")]
        preset: String,
    },
    /// Repeat an experiment over consecutive seeds; writes one metrics file
    /// per seed and a per-round summary.
    Sweep {
        config: PathBuf,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value = "sweep")]
        out_dir: PathBuf,
    },
    /// Print the fully expanded config.
    ShowConfig { config: PathBuf },
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Run { config, out } => cmd_run(&config, &out),
        Command::CommTable { preset } => {
            preset_table(&preset).map(|rows| print!("{}", render_table(&rows)))
        }
        Command::Sweep {
            config,
            seeds,
            out_dir,
        } => cmd_sweep(&config, seeds, &out_dir),
        Command::ShowConfig { config } => {
            load_config(&config).map(|cfg| print!("{}", render_config(&cfg)))
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 1,
        Error::Io { path, .. } if path.extension().is_some_and(|x| x == "toml") => 1,
        _ => 2,
    }
}

/// Comment block at the top of every output file.
pub fn metrics_header(cfg: &ExperimentConfig, outcome: Option<&ExperimentOutcome>) -> String {
    let mut h = format!("hetlora {}\n", env!("CARGO_PKG_VERSION"));
    h.push_str(&render_config(cfg));
    if let Some(o) = outcome {
        let _ = writeln!(h, "[outcome]");
        let _ = writeln!(h, "calibration_uplink_bytes = {}", o.calibration_bytes);
        let _ = writeln!(h, "backbone_fingerprint = {:#018x}", o.backbone_fingerprint);
    }
    h
}

/// Runs `cfg` and writes its metrics to `path`.
pub fn run_to_file(cfg: &ExperimentConfig, path: &Path) -> Result<ExperimentOutcome> {
    let outcome = Federation::new(cfg.clone())?.run()?;
    emit_metrics(&outcome.records, &metrics_header(cfg, Some(&outcome)), path)?;
    Ok(outcome)
}

/// Deletes registered files on drop unless disarmed.
struct Cleanup(Vec<PathBuf>);

impl Cleanup {
    fn disarm(mut self) {
        self.0.clear();
    }
}

impl Drop for Cleanup {
    fn drop(&mut self) {
        for p in &self.0 {
            let _ = std::fs::remove_file(p);
        }
    }
}

fn cmd_run(config: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let guard = Cleanup(vec![out.to_path_buf()]);
    let outcome = run_to_file(&cfg, out)?;
    guard.disarm();
    let last = outcome.records.last().expect("round 0 is always recorded");
    println!(
        "{}: round {} global accuracy {:.4}, {} uplink bytes",
        out.display(),
        last.round,
        last.global_acc,
        last.cumulative_bytes
    );
    Ok(())
}

/// Per-round mean/min/max of global accuracy across seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub round: usize,
    pub mean_acc: f64,
    pub min_acc: f64,
    pub max_acc: f64,
    pub mean_cumulative_bytes: f64,
}

pub fn summarize(runs: &[Vec<RoundRecord>]) -> Vec<SummaryRow> {
    let rounds = runs.iter().map(Vec::len).min().unwrap_or(0);
    (0..rounds)
        .map(|i| {
            let accs: Vec<f64> = runs.iter().map(|r| r[i].global_acc).collect();
            let k = accs.len() as f64;
            SummaryRow {
                round: runs[0][i].round,
                mean_acc: accs.iter().sum::<f64>() / k,
                min_acc: accs.iter().copied().fold(f64::INFINITY, f64::min),
                max_acc: accs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                mean_cumulative_bytes: runs
                    .iter()
                    .map(|r| r[i].cumulative_bytes as f64)
                    .sum::<f64>()
                    / k,
            }
        })
        .collect()
}

pub fn write_summary(rows: &[SummaryRow], header: &str, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut text = String::new();
    for line in header.lines() {
        let _ = writeln!(text, "# {line}");
    }
    text.push_str("round,mean_acc,min_acc,max_acc,mean_cumulative_bytes\n");
    for r in rows {
        let _ = writeln!(
            text,
            "{},{:.6},{:.6},{:.6},{:.1}",
            r.round, r.mean_acc, r.min_acc, r.max_acc, r.mean_cumulative_bytes
        );
    }
    w.write_all(text.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Seeds `cfg.seed .. cfg.seed + seeds`; returns the per-seed paths and the
/// summary path.
pub fn sweep(
    cfg: &ExperimentConfig,
    seeds: u64,
    out_dir: &Path,
) -> Result<(Vec<PathBuf>, PathBuf)> {
    if seeds == 0 {
        return Err(Error::Config("--seeds must be at least 1".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let configs: Vec<ExperimentConfig> = (0..seeds)
        .map(|i| ExperimentConfig {
            seed: cfg.seed + i,
            ..cfg.clone()
        })
        .collect();
    let paths: Vec<PathBuf> = configs
        .iter()
        .map(|c| out_dir.join(format!("seed_{}.csv", c.seed)))
        .collect();
    let summary_path = out_dir.join("summary.csv");
    let mut all = paths.clone();
    all.push(summary_path.clone());
    let guard = Cleanup(all);

    let runs: Vec<Vec<RoundRecord>> = configs
        .par_iter()
        .zip(&paths)
        .map(|(c, p)| run_to_file(c, p).map(|o| o.records))
        .collect::<Result<_>>()?;
    let mut header = metrics_header(cfg, None);
    let _ = writeln!(header, "[sweep]\nseeds = {seeds}");
    write_summary(&summarize(&runs), &header, &summary_path)?;
    guard.disarm();
    Ok((paths, summary_path))
}

fn cmd_sweep(config: &Path, seeds: u64, out_dir: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let (paths, summary) = sweep(&cfg, seeds, out_dir)?;
    println!("{} metric files and {}", paths.len(), summary.display());
    Ok(())
}
