//! `qbp`: parameter sweeps, mean-field checks and image restoration
//! experiments, written as CSV.
//!
//! Every command takes an optional TOML config whose keys match the long
//! flag names (with `_` for `-`). Flags given on the command line win over
//! the file. Each CSV starts with a `#` line holding the resolved config.

pub mod config;
mod meanfield;
mod restore;
mod selftest;
mod sweep;

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use config::{
    BoundaryKind, GraphKind, ImageFormat, MeanFieldConfig, Prior, RestoreConfig, RestoreMode, RestoreSweep,
    SweepConfig, SweepParam,
};

#[derive(Debug, Parser)]
#[command(name = "qbp", version, about = "Quenched loopy belief propagation experiments")]
pub struct Cli {
    /// Worker threads; defaults to one per core
    #[arg(long, global = true, env = "QBP_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// RLBP quenched free energy and magnetization next to Monte Carlo LBP
    /// averages, over a sweep of sigma, J or delta
    SweepQuenched(SweepArgs),
    /// Saddle points of the mean-field model and RLBP on complete graphs
    Meanfield(MeanFieldArgs),
    /// Degrade, restore and score images; analytic and sampled average MSE
    Restore(RestoreArgs),
    /// Quick numerical self-checks
    Selftest,
}

/// How a command finished, when it did not fail outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    /// Some run did not converge and strict mode was on.
    NotConverged,
    SelftestFailed,
}

impl Status {
    pub fn exit_code(self) -> u8 {
        match self {
            Status::Success => 0,
            Status::NotConverged => 2,
            Status::SelftestFailed => 3,
        }
    }
}

/// Result of a command before strict mode is applied.
pub(crate) struct Outcome {
    pub all_converged: bool,
}

impl Outcome {
    fn status(self, strict: bool) -> Status {
        if strict && !self.all_converged {
            Status::NotConverged
        } else {
            Status::Success
        }
    }
}

macro_rules! overlay {
    ($cfg:ident, $args:ident; $($field:ident),* $(,)?) => {
        $(if let Some(v) = $args.$field.clone() {
            $cfg.$field = v;
        })*
    };
}

macro_rules! overlay_opt {
    ($cfg:ident, $args:ident; $($field:ident),* $(,)?) => {
        $(if let Some(v) = $args.$field.clone() {
            $cfg.$field = Some(v);
        })*
    };
}

#[derive(Debug, Args, Default)]
pub struct SweepArgs {
    /// TOML config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub graph: Option<GraphKind>,
    #[arg(long, value_enum)]
    pub boundary: Option<BoundaryKind>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    /// Vertices of a random regular or complete graph
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub degree: Option<usize>,
    #[arg(long)]
    pub graph_seed: Option<u64>,
    /// Edge list for `--graph file`
    #[arg(long)]
    pub graph_file: Option<PathBuf>,
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Swept parameter
    #[arg(long, value_enum)]
    pub sweep: Option<SweepParam>,
    /// Comma-separated sweep points; overrides --from/--to/--step
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<f64>>,
    #[arg(long, allow_negative_numbers = true)]
    pub from: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub to: Option<f64>,
    #[arg(long)]
    pub step: Option<f64>,
    /// Coupling, or the coupling mean when --delta > 0
    #[arg(long, allow_negative_numbers = true)]
    pub j: Option<f64>,
    /// Coupling standard deviation; 0 keeps couplings fixed
    #[arg(long)]
    pub delta: Option<f64>,
    /// Field standard deviation
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub field_samples: Option<usize>,
    #[arg(long)]
    pub coupling_samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Gauss-Hermite nodes for RLBP
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Exit with status 2 if any run fails to converge
    #[arg(long)]
    pub strict: bool,
    /// CSV destination; stdout if absent
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

impl SweepArgs {
    pub fn resolve(&self) -> Result<SweepConfig> {
        let mut cfg: SweepConfig = config::load(self.config.as_deref())?;
        let a = self;
        overlay!(cfg, a; graph, boundary, width, height, n, degree, graph_seed, q, beta, sweep, values,
            from, to, step, j, delta, sigma, field_samples, coupling_samples, seed, nodes, tol, max_iter);
        overlay_opt!(cfg, a; graph_file, output);
        cfg.strict |= a.strict;
        Ok(cfg)
    }
}

#[derive(Debug, Args, Default)]
pub struct MeanFieldArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated inverse temperatures; overrides --from/--to/--step
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<f64>>,
    #[arg(long)]
    pub from: Option<f64>,
    #[arg(long)]
    pub to: Option<f64>,
    #[arg(long)]
    pub step: Option<f64>,
    /// Field standard deviation
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Comma-separated complete-graph sizes for the RLBP comparison
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub strict: bool,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

impl MeanFieldArgs {
    pub fn resolve(&self) -> Result<MeanFieldConfig> {
        let mut cfg: MeanFieldConfig = config::load(self.config.as_deref())?;
        let a = self;
        overlay!(cfg, a; values, from, to, step, sigma, sizes, nodes, tol, max_iter);
        overlay_opt!(cfg, a; output);
        cfg.strict |= a.strict;
        Ok(cfg)
    }
}

#[derive(Debug, Args, Default)]
pub struct RestoreArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<RestoreMode>,
    /// Original image (degrade, dav, mc), degraded text file (restore) or
    /// restored image (score)
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    /// Original image for `score`
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Netpbm flavour written by `restore`
    #[arg(long, value_enum)]
    pub format: Option<ImageFormat>,
    /// Intensity levels
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Noise standard deviation
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, value_enum)]
    pub prior: Option<Prior>,
    #[arg(long, value_enum)]
    pub sweep: Option<RestoreSweep>,
    /// Comma-separated values of the swept parameter
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<f64>>,
    /// Degraded realizations for `mc`
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub damping: Option<f64>,
    #[arg(long)]
    pub strict: bool,
}

impl RestoreArgs {
    pub fn resolve(&self) -> Result<RestoreConfig> {
        let mut cfg: RestoreConfig = config::load(self.config.as_deref())?;
        let a = self;
        overlay!(cfg, a; mode, format, q, alpha, sigma, prior, sweep, values, samples, seed, nodes, tol,
            max_iter, damping);
        overlay_opt!(cfg, a; input, reference, output);
        cfg.strict |= a.strict;
        Ok(cfg)
    }
}

/// Runs a parsed command line inside a pool of the requested size.
pub fn run(cli: Cli) -> Result<Status> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().context("starting worker pool")?;
    pool.install(|| match &cli.command {
        Command::SweepQuenched(a) => {
            let cfg = a.resolve()?;
            Ok(sweep::run(&cfg)?.status(cfg.strict))
        }
        Command::Meanfield(a) => {
            let cfg = a.resolve()?;
            Ok(meanfield::run(&cfg)?.status(cfg.strict))
        }
        Command::Restore(a) => {
            let cfg = a.resolve()?;
            Ok(restore::run(&cfg)?.status(cfg.strict))
        }
        Command::Selftest => selftest::run(&mut std::io::stdout()),
    })
}

/// A CSV table preceded by the config comment.
pub(crate) struct Table {
    comment: String,
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(comment: String, header: Vec<&'static str>) -> Self {
        Table {
            comment,
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        writeln!(out, "{}", self.comment)?;
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        drop(w);
        Ok(out)
    }

    pub fn write(&self, path: Option<&Path>) -> Result<()> {
        write_output(path, &self.to_bytes()?)
    }
}

pub(crate) fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
            Ok(())
        }
    }
}

/// Shortest representation that reads back to the same value.
pub(crate) fn num(v: f64) -> String {
    format!("{v}")
}
