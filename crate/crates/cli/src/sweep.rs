use std::sync::Arc;

use anyhow::{bail, Context, Result};
use quenched_bp::graph::{complete_graph, random_regular, square_lattice};
use quenched_bp::lbp::LbpOptions;
use quenched_bp::quench::{coupling_realization, mc_quenched_average, rlbp_coupling_average, QuenchedAverage};
use quenched_bp::rlbp::{RlbpOptions, RlbpSolver, RlbpState};
use quenched_bp::{Boundary, Error, FieldDistribution, Graph, InteractionEnsemble, MrfModel, StateSpace};

use crate::config::{self, BoundaryKind, GraphKind, SweepConfig, SweepParam};
use crate::{num, Outcome, Table};

pub(crate) fn build_graph(cfg: &SweepConfig) -> Result<Graph> {
    Ok(match cfg.graph {
        GraphKind::Lattice => {
            let boundary = match cfg.boundary {
                BoundaryKind::Free => Boundary::Free,
                BoundaryKind::Periodic => Boundary::Periodic,
            };
            square_lattice(cfg.width, cfg.height, boundary)?
        }
        GraphKind::Rrg => random_regular(cfg.n, cfg.degree, cfg.graph_seed)?,
        GraphKind::Complete => complete_graph(cfg.n)?,
        GraphKind::File => {
            let Some(path) = &cfg.graph_file else {
                bail!("graph = \"file\" needs graph_file");
            };
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Graph::parse_edge_list(&text)?
        }
    })
}

struct Point {
    rlbp: Option<(f64, f64)>,
    rlbp_converged: bool,
    mc: Option<QuenchedAverage>,
    n_excluded: usize,
}

pub(crate) fn run(cfg: &SweepConfig) -> Result<Outcome> {
    let graph = Arc::new(build_graph(cfg)?);
    let states = StateSpace::spin(cfg.q)?;
    let points = config::sweep_values(&cfg.values, cfg.from, cfg.to, cfg.step)?;
    if cfg.sigma < 0.0 || cfg.delta < 0.0 {
        bail!("sigma and delta must be non-negative");
    }
    let lbp_opts = LbpOptions {
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        seed: cfg.seed,
        ..LbpOptions::default()
    };
    let rlbp_opts = RlbpOptions {
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        n_nodes: cfg.nodes,
        ..RlbpOptions::default()
    };
    let name = match cfg.sweep {
        SweepParam::Sigma => "sigma",
        SweepParam::J => "j",
        SweepParam::Delta => "delta",
    };
    let mut table = Table::new(
        config::comment("sweep-quenched", cfg)?,
        vec![name, "f_rlbp", "f_mc_mean", "f_mc_std_error", "n_excluded", "m_rlbp", "m_lbp_mean"],
    );
    let mut all_converged = true;
    // the previous point's fixed point seeds the next one, so a branch is
    // followed across the sweep as well as restarted cold
    let mut warm: Option<RlbpState> = None;
    for &x in &points {
        let (mut j, mut delta, mut sigma) = (cfg.j, cfg.delta, cfg.sigma);
        match cfg.sweep {
            SweepParam::Sigma => sigma = x,
            SweepParam::J => j = x,
            SweepParam::Delta => delta = x,
        }
        if sigma < 0.0 || delta < 0.0 {
            bail!("sweep point {x} gives a negative standard deviation");
        }
        let field = if sigma > 0.0 {
            FieldDistribution::gaussian(0.0, sigma * sigma)?
        } else {
            FieldDistribution::Delta(0.0)
        };
        let model = MrfModel::builder(graph.clone(), states.clone())
            .beta(cfg.beta)
            .fields(field)
            .build()?;
        let ensemble = if delta > 0.0 {
            InteractionEnsemble::Gaussian {
                mean: j,
                variance: delta * delta,
            }
        } else {
            InteractionEnsemble::Fixed(j)
        };
        let n_coupling = if ensemble.is_fixed() { 1 } else { cfg.coupling_samples };
        let p = evaluate(&model, &ensemble, n_coupling, cfg, &lbp_opts, &rlbp_opts, &mut warm)?;
        all_converged &= p.rlbp_converged && p.n_excluded == 0;
        let (f_rlbp, m_rlbp) = p.rlbp.unwrap_or((f64::NAN, f64::NAN));
        let (f_mean, f_se, m_mean) = match &p.mc {
            Some(a) => (a.free_energy.mean, a.free_energy.std_error, a.magnetization.mean),
            None => (f64::NAN, f64::NAN, f64::NAN),
        };
        table.push(vec![
            num(x),
            num(f_rlbp),
            num(f_mean),
            num(f_se),
            p.n_excluded.to_string(),
            num(m_rlbp),
            num(m_mean),
        ]);
    }
    table.write(cfg.output.as_deref())?;
    Ok(Outcome { all_converged })
}

fn evaluate(
    model: &MrfModel,
    ensemble: &InteractionEnsemble,
    n_coupling: usize,
    cfg: &SweepConfig,
    lbp_opts: &LbpOptions,
    rlbp_opts: &RlbpOptions,
    warm: &mut Option<RlbpState>,
) -> Result<Point> {
    let n = model.n_vertices() as f64;
    let (rlbp, rlbp_converged) = if ensemble.is_fixed() {
        let couplings = coupling_realization(ensemble, model, cfg.seed, 0)?;
        let out = RlbpSolver::new(model, &couplings, rlbp_opts.n_nodes)?.run_lowest(rlbp_opts, warm.as_ref())?;
        let converged = out.report.converged;
        let value = (out.report.quenched_free_energy / n, out.report.quenched_magnetization);
        if converged {
            *warm = Some(out.state);
        }
        (converged.then_some(value), converged)
    } else {
        match rlbp_coupling_average(model, ensemble, n_coupling, cfg.seed, rlbp_opts) {
            Ok(a) => (
                Some((a.free_energy.mean, a.magnetization.mean)),
                a.free_energy.n_excluded == 0,
            ),
            Err(Error::AllSamplesFailed(_)) => (None, false),
            Err(e) => return Err(e.into()),
        }
    };
    let (mc, n_excluded) = match mc_quenched_average(model, ensemble, cfg.field_samples, n_coupling, cfg.seed, lbp_opts) {
        Ok(a) => {
            let excluded = a.free_energy.n_excluded;
            (Some(a), excluded)
        }
        Err(Error::AllSamplesFailed(k)) => (None, k),
        Err(e) => return Err(e.into()),
    };
    Ok(Point {
        rlbp,
        rlbp_converged,
        mc,
        n_excluded,
    })
}
