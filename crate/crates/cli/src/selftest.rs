use std::io::Write;

use anyhow::Result;
use quenched_bp::exact::enumerate;
use quenched_bp::graph::square_lattice;
use quenched_bp::lbp::{run_lbp, LbpOptions};
use quenched_bp::model::Assignment;
use quenched_bp::quadrature::build_quadrature;
use quenched_bp::restore::{dav_analytic, rounding_error, Image, PriorKind, RestoreParams};
use quenched_bp::rlbp::{run_rlbp, RlbpOptions};
use quenched_bp::{Boundary, FieldDistribution, Graph, MrfModel, StateSpace};

use crate::Status;

type Check = fn() -> Result<f64>;

/// Each check returns an error measure that must stay below its tolerance.
const CHECKS: &[(&str, Check, f64)] = &[
    ("lbp_exact_on_tree", tree_exactness, 1e-10),
    ("rlbp_delta_fields_match_lbp", delta_reduction, 1e-8),
    ("gauss_hermite_second_moment", quadrature_moment, 1e-12),
    ("dav_without_prior_is_rounding_error", rounding, 1e-6),
];

pub(crate) fn run(out: &mut impl Write) -> Result<Status> {
    let mut ok = true;
    for (name, check, tol) in CHECKS {
        match check() {
            Ok(err) if err <= *tol => writeln!(out, "ok    {name} (error {err:.1e})")?,
            Ok(err) => {
                ok = false;
                writeln!(out, "FAIL  {name} (error {err:.1e} > {tol:.0e})")?;
            }
            Err(e) => {
                ok = false;
                writeln!(out, "FAIL  {name}: {e:#}")?;
            }
        }
    }
    Ok(if ok { Status::Success } else { Status::SelftestFailed })
}

fn tree_exactness() -> Result<f64> {
    let g = Graph::from_edges(7, vec![(0, 1), (1, 2), (1, 3), (3, 4), (4, 5), (3, 6)])?;
    let m = MrfModel::builder(g, StateSpace::spin(3)?).beta(0.9).build()?;
    let h = [0.3, -0.7, 0.1, 1.2, -0.4, 0.0, 0.8];
    let j = [0.5, -0.9, 1.1, 0.2, -0.3, 0.7];
    let exact = enumerate(&m, &h, &j)?;
    let bp = run_lbp(&m, &h, &j, &LbpOptions::default())?;
    let mut err = (bp.report.bethe_free_energy - exact.free_energy).abs();
    for i in 0..7 {
        for (a, b) in bp.beliefs.unary(i).iter().zip(exact.unary_marginal(i)) {
            err = err.max((a - b).abs());
        }
    }
    Ok(err)
}

fn delta_reduction() -> Result<f64> {
    let g = square_lattice(3, 3, Boundary::Free)?;
    let h: Vec<f64> = (0..9).map(|i| 0.25 * i as f64 - 1.0).collect();
    let fields: Vec<FieldDistribution> = h.iter().map(|&v| FieldDistribution::Delta(v)).collect();
    let m = MrfModel::builder(g, StateSpace::spin(2)?)
        .fields(Assignment::PerItem(fields))
        .build()?;
    let j = vec![0.4; 12];
    let bp = run_lbp(&m, &h, &j, &LbpOptions::default())?;
    let rs = run_rlbp(&m, &j, &RlbpOptions::default())?;
    let mut err = (bp.report.bethe_free_energy - rs.report.quenched_free_energy).abs();
    for i in 0..9 {
        for (a, b) in bp.beliefs.unary(i).iter().zip(rs.state.marginal(i)) {
            err = err.max((a - b).abs());
        }
    }
    Ok(err)
}

fn quadrature_moment() -> Result<f64> {
    let rule = build_quadrature(&FieldDistribution::gaussian(0.3, 2.0)?, 16)?;
    Ok((rule.expect(|h| h * h) - 2.09).abs())
}

fn rounding() -> Result<f64> {
    let data: Vec<u16> = (0..16).map(|k| (k % 4) as u16).collect();
    let image = Image::new(4, 4, 1, 4, data)?;
    let params = RestoreParams {
        alpha: 0.0,
        variance: 0.36,
        prior: PriorKind::Quadratic,
        q: 4,
    };
    Ok((dav_analytic(&image, &params, &RlbpOptions::default())? - rounding_error(&image, 0.36)).abs())
}
