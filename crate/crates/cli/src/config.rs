//! Experiment configurations: TOML files overlaid with command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

/// Reads `path` if given, otherwise starts from the defaults.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

/// The resolved configuration as a single `#` comment line.
pub fn comment<T: Serialize>(kind: &str, cfg: &T) -> Result<String> {
    let text = toml::to_string(cfg)?;
    let body: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    Ok(format!("# {kind}: {}", body.join("; ")))
}

/// `from, from + step, ..., to` with the end point included, or the
/// explicit list if one is given.
pub fn sweep_values(values: &[f64], from: f64, to: f64, step: f64) -> Result<Vec<f64>> {
    if !values.is_empty() {
        return Ok(values.to_vec());
    }
    if !(step > 0.0) || to < from {
        bail!("sweep needs step > 0 and to >= from");
    }
    let n = ((to - from) / step + 1e-9).floor() as usize;
    // round to the step's precision so 0.7 + 3 * 0.01 prints as 0.73
    Ok((0..=n).map(|k| round12(from + k as f64 * step)).collect())
}

fn round12(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum GraphKind {
    Lattice,
    Rrg,
    Complete,
    /// Edge-list file
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryKind {
    Free,
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParam {
    /// Standard deviation of the random fields
    Sigma,
    /// Coupling (the mean coupling when `delta` > 0)
    J,
    /// Standard deviation of the couplings
    Delta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub graph: GraphKind,
    pub boundary: BoundaryKind,
    pub width: usize,
    pub height: usize,
    /// Vertices for `rrg` and `complete`
    pub n: usize,
    pub degree: usize,
    pub graph_seed: u64,
    pub graph_file: Option<PathBuf>,
    pub q: usize,
    pub beta: f64,
    pub sweep: SweepParam,
    /// Explicit sweep points; overrides `from`/`to`/`step`.
    pub values: Vec<f64>,
    pub from: f64,
    pub to: f64,
    pub step: f64,
    pub j: f64,
    pub delta: f64,
    pub sigma: f64,
    pub field_samples: usize,
    pub coupling_samples: usize,
    pub seed: u64,
    pub nodes: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub strict: bool,
    pub output: Option<PathBuf>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            graph: GraphKind::Lattice,
            boundary: BoundaryKind::Free,
            width: 8,
            height: 8,
            n: 200,
            degree: 4,
            graph_seed: 1,
            graph_file: None,
            q: 2,
            beta: 1.0,
            sweep: SweepParam::Sigma,
            values: Vec::new(),
            from: 0.2,
            to: 2.0,
            step: 0.2,
            j: 0.2,
            delta: 0.0,
            sigma: 1.0,
            field_samples: 2000,
            coupling_samples: 1,
            seed: 1,
            nodes: 32,
            tol: 1e-9,
            max_iter: 10_000,
            strict: false,
            output: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeanFieldConfig {
    pub values: Vec<f64>,
    pub from: f64,
    pub to: f64,
    pub step: f64,
    /// Field standard deviation; 0 means no disorder.
    pub sigma: f64,
    /// Complete-graph sizes for the RLBP comparison; empty skips it.
    pub sizes: Vec<usize>,
    pub nodes: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub strict: bool,
    pub output: Option<PathBuf>,
}

impl Default for MeanFieldConfig {
    fn default() -> Self {
        MeanFieldConfig {
            values: Vec::new(),
            from: 0.5,
            to: 2.0,
            step: 0.25,
            sigma: 0.5,
            sizes: Vec::new(),
            nodes: 64,
            tol: 1e-9,
            max_iter: 10_000,
            strict: false,
            output: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum RestoreMode {
    /// Add noise to an image; writes a degraded-image text file
    Degrade,
    /// MPM restoration of a degraded-image text file; writes a PGM/PPM
    Restore,
    /// MSE between `input` and `reference`
    Score,
    /// Analytic average MSE
    Dav,
    /// Analytic average MSE next to the Monte Carlo average
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Prior {
    Quadratic,
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum RestoreSweep {
    None,
    Alpha,
    Sigma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ImageFormat {
    Ascii,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RestoreConfig {
    pub mode: RestoreMode,
    pub input: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub format: ImageFormat,
    pub q: usize,
    pub alpha: f64,
    pub sigma: f64,
    pub prior: Prior,
    pub sweep: RestoreSweep,
    pub values: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    pub nodes: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// LBP damping for the restorations; undamped updates converge on the
    /// free lattice and are about twice as fast.
    pub damping: f64,
    pub strict: bool,
}

impl Default for RestoreConfig {
    fn default() -> Self {
        RestoreConfig {
            mode: RestoreMode::Dav,
            input: None,
            reference: None,
            output: None,
            format: ImageFormat::Ascii,
            q: 8,
            alpha: 0.4,
            sigma: 0.5,
            prior: Prior::Quadratic,
            sweep: RestoreSweep::None,
            values: Vec::new(),
            samples: 2000,
            seed: 1,
            nodes: 32,
            tol: 1e-9,
            max_iter: 10_000,
            damping: 0.0,
            strict: false,
        }
    }
}
