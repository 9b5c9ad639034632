use anyhow::{bail, Result};
use quenched_bp::meanfield::{complete_graph_model, solve_saddle, MeanFieldModel, SaddleOptions};
use quenched_bp::rlbp::{quenched_magnetization, RlbpOptions, RlbpSolver};
use quenched_bp::FieldDistribution;
use rayon::prelude::*;

use crate::config::{self, MeanFieldConfig};
use crate::{num, Outcome, Table};

pub(crate) fn run(cfg: &MeanFieldConfig) -> Result<Outcome> {
    if cfg.sigma < 0.0 {
        bail!("sigma must be non-negative");
    }
    let betas = config::sweep_values(&cfg.values, cfg.from, cfg.to, cfg.step)?;
    let field = if cfg.sigma > 0.0 {
        FieldDistribution::gaussian(0.0, cfg.sigma * cfg.sigma)?
    } else {
        FieldDistribution::Delta(0.0)
    };
    let saddle_opts = SaddleOptions {
        n_nodes: cfg.nodes,
        ..SaddleOptions::default()
    };
    let rlbp_opts = RlbpOptions {
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        n_nodes: cfg.nodes,
        ..RlbpOptions::default()
    };
    let per_beta: Vec<Result<(Vec<Vec<String>>, bool)>> = betas
        .par_iter()
        .map(|&beta| {
            let model = MeanFieldModel::ising(beta, field)?;
            let saddles = solve_saddle(&model, &saddle_opts)?;
            let f_exact = saddles[0].f;
            let mut rows = Vec::new();
            for s in &saddles {
                rows.push(vec![num(beta), num(cfg.sigma), "saddle".into(), String::new(), num(s.m), num(s.f), String::new()]);
            }
            let mut converged = true;
            for &n in &cfg.sizes {
                let mrf = complete_graph_model(n, &model)?;
                let couplings = vec![0.0; mrf.graph().n_edges()];
                let out = RlbpSolver::new(&mrf, &couplings, cfg.nodes)?.run_lowest(&rlbp_opts, None)?;
                converged &= out.report.converged;
                let f = out.report.quenched_free_energy / n as f64;
                let m = quenched_magnetization(&out.state, mrf.states());
                rows.push(vec![
                    num(beta),
                    num(cfg.sigma),
                    "rlbp".into(),
                    n.to_string(),
                    num(m),
                    num(f),
                    num((f - f_exact).abs()),
                ]);
            }
            Ok((rows, converged))
        })
        .collect();
    let mut table = Table::new(
        config::comment("meanfield", cfg)?,
        vec!["beta", "sigma", "kind", "n", "m", "f", "gap"],
    );
    let mut all_converged = true;
    for r in per_beta {
        let (rows, converged) = r?;
        all_converged &= converged;
        for row in rows {
            table.push(row);
        }
    }
    table.write(cfg.output.as_deref())?;
    Ok(Outcome { all_converged })
}
