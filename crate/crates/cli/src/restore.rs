use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use quenched_bp::lbp::LbpOptions;
use quenched_bp::restore::pnm::{self, PnmFormat};
use quenched_bp::restore::{dav_analytic, degrade, mse, mse_mc_average, restore_mpm, PriorKind, RestoreParams};
use quenched_bp::rlbp::RlbpOptions;
use quenched_bp::Error;

use crate::config::{self, ImageFormat, Prior, RestoreConfig, RestoreMode, RestoreSweep};
use crate::{num, write_output, Outcome, Table};

fn required<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    path.as_deref().ok_or_else(|| anyhow!("mode needs {what}"))
}

fn params(cfg: &RestoreConfig, alpha: f64, sigma: f64) -> RestoreParams {
    RestoreParams {
        alpha,
        variance: sigma * sigma,
        prior: match cfg.prior {
            Prior::Quadratic => PriorKind::Quadratic,
            Prior::Absolute => PriorKind::Absolute,
        },
        q: cfg.q,
    }
}

fn lbp_options(cfg: &RestoreConfig) -> LbpOptions {
    LbpOptions {
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        damping: Some(cfg.damping),
        seed: cfg.seed,
        ..LbpOptions::default()
    }
}

pub(crate) fn run(cfg: &RestoreConfig) -> Result<Outcome> {
    if !(cfg.sigma > 0.0) {
        bail!("sigma must be positive");
    }
    match cfg.mode {
        RestoreMode::Degrade => {
            let (image, _) = pnm::read_image(required(&cfg.input, "input")?, cfg.q)?;
            let degraded = degrade(&image, cfg.sigma * cfg.sigma, cfg.seed)?;
            write_output(cfg.output.as_deref(), pnm::encode_degraded(&degraded).as_bytes())?;
            Ok(Outcome { all_converged: true })
        }
        RestoreMode::Restore => {
            let path = required(&cfg.input, "input")?;
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let degraded = pnm::decode_degraded(&text)?;
            let r = restore_mpm(&degraded, &params(cfg, cfg.alpha, cfg.sigma), &lbp_options(cfg))?;
            let format = match cfg.format {
                ImageFormat::Ascii => PnmFormat::Ascii,
                ImageFormat::Binary => PnmFormat::Binary,
            };
            write_output(cfg.output.as_deref(), &pnm::encode(&r.image, format))?;
            if !r.converged {
                eprintln!("warning: LBP did not converge on every channel");
            }
            Ok(Outcome {
                all_converged: r.converged,
            })
        }
        RestoreMode::Score => {
            let (restored, _) = pnm::read_image(required(&cfg.input, "input")?, cfg.q)?;
            let (original, _) = pnm::read_image(required(&cfg.reference, "reference")?, cfg.q)?;
            let mut table = Table::new(config::comment("restore", cfg)?, vec!["mse"]);
            table.push(vec![num(mse(&original, &restored)?)]);
            table.write(cfg.output.as_deref())?;
            Ok(Outcome { all_converged: true })
        }
        RestoreMode::Dav | RestoreMode::Mc => average(cfg),
    }
}

/// Average MSE at each sweep point; `mc` adds the sampled average.
fn average(cfg: &RestoreConfig) -> Result<Outcome> {
    let (original, _) = pnm::read_image(required(&cfg.input, "input")?, cfg.q)?;
    let with_mc = cfg.mode == RestoreMode::Mc;
    let points: Vec<(f64, f64)> = match cfg.sweep {
        RestoreSweep::None => vec![(cfg.alpha, cfg.sigma)],
        RestoreSweep::Alpha => cfg.values.iter().map(|&a| (a, cfg.sigma)).collect(),
        RestoreSweep::Sigma => cfg.values.iter().map(|&s| (cfg.alpha, s)).collect(),
    };
    if points.is_empty() {
        bail!("sweep needs values");
    }
    let mut header = vec!["alpha", "sigma", "d_av_analytic"];
    if with_mc {
        header.extend(["d_av_mc_mean", "d_av_mc_std_error", "n_excluded"]);
    }
    let mut table = Table::new(config::comment("restore", cfg)?, header);
    let rlbp_opts = RlbpOptions {
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        n_nodes: cfg.nodes,
        ..RlbpOptions::default()
    };
    let lbp_opts = lbp_options(cfg);
    let mut all_converged = true;
    for (alpha, sigma) in points {
        if !(sigma > 0.0) {
            bail!("sigma must be positive");
        }
        let p = params(cfg, alpha, sigma);
        let analytic = match dav_analytic(&original, &p, &rlbp_opts) {
            Ok(v) => v,
            Err(Error::NotConverged { .. }) => {
                all_converged = false;
                f64::NAN
            }
            Err(e) => return Err(e.into()),
        };
        let mut row = vec![num(alpha), num(sigma), num(analytic)];
        if with_mc {
            match mse_mc_average(&original, &p, cfg.samples, cfg.seed, &lbp_opts) {
                Ok(s) => {
                    all_converged &= s.n_excluded == 0;
                    row.extend([num(s.mean), num(s.std_error), s.n_excluded.to_string()]);
                }
                Err(Error::AllSamplesFailed(k)) => {
                    all_converged = false;
                    row.extend([num(f64::NAN), num(f64::NAN), k.to_string()]);
                }
                Err(e) => return Err(e.into()),
            }
        }
        table.push(row);
    }
    table.write(cfg.output.as_deref())?;
    Ok(Outcome { all_converged })
}
