//! Where RLBP stops being exact, checked against brute-force quadrature on
//! instances small enough to integrate directly.
//!
//! On a single edge with symmetric random fields the RLBP fixed point has
//! uniform messages, so its free energy drops the term
//! `-E ln(1 + tanh h1 tanh h2 tanh J)` of the true average. The same
//! averaging of the cavity field makes the analytic restoration error
//! approximate even on a tree.

use quenched_bp::graph::Graph;
use quenched_bp::restore::{dav_analytic, Image, PriorKind, RestoreParams};
use quenched_bp::rlbp::{run_rlbp, RlbpOptions};
use quenched_bp::{FieldDistribution, MrfModel, StateSpace};

/// Midpoint rule for `E f(h)`, `h ~ N(0, var)`, on `[-10 sd, 10 sd]`.
fn gauss_mean(var: f64, steps: usize, f: impl Fn(f64) -> f64) -> f64 {
    let sd = var.sqrt();
    let dh = 20.0 * sd / steps as f64;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * var).sqrt();
    (0..steps)
        .map(|k| {
            let h = -10.0 * sd + (k as f64 + 0.5) * dh;
            norm * (-h * h / (2.0 * var)).exp() * f(h) * dh
        })
        .sum()
}

#[test]
fn single_edge_rlbp_is_the_uncorrelated_average() {
    let (sigma, j) = (1.0f64, 0.6f64);
    let var = sigma * sigma;
    let model = MrfModel::builder(Graph::from_edges(2, vec![(0, 1)]).unwrap(), StateSpace::spin(2).unwrap())
        .fields(FieldDistribution::gaussian(0.0, var).unwrap())
        .build()
        .unwrap();
    let out = run_rlbp(&model, &[j], &RlbpOptions { n_nodes: 96, ..RlbpOptions::default() }).unwrap();
    assert!(out.report.converged);

    let site = gauss_mean(var, 20_000, |h| (2.0 * h.cosh()).ln());
    let closed = -2.0 * site - j.cosh().ln();
    assert!((out.report.quenched_free_energy - closed).abs() < 1e-9);

    // exact quenched average of -ln Z over both fields
    let exact = gauss_mean(var, 2000, |h1| {
        gauss_mean(var, 2000, |h2| {
            let z: f64 = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)]
                .iter()
                .map(|&(s, t): &(f64, f64)| (h1 * s + h2 * t + j * s * t).exp())
                .sum();
            -z.ln()
        })
    });
    let t2 = gauss_mean(var, 20_000, |h| h.tanh().powi(2));
    let gap = exact - out.report.quenched_free_energy;
    // leading order of -E ln(1 + t1 t2 tanh J)
    let leading = 0.5 * j.tanh().powi(2) * t2 * t2;
    assert!(gap > 0.0);
    assert!((gap - leading).abs() < 0.2 * leading, "gap {gap} vs {leading}");
}

#[test]
fn two_pixel_dav_is_close_but_not_exact() {
    let (i1, i2, q, var, alpha) = (1u16, 3u16, 4usize, 0.25f64, 0.4f64);
    let image = Image::new(2, 1, 1, q, vec![i1, i2]).unwrap();
    let params = RestoreParams {
        alpha,
        variance: var,
        prior: PriorKind::Quadratic,
        q,
    };
    let analytic = dav_analytic(&image, &params, &RlbpOptions { n_nodes: 96, ..RlbpOptions::default() }).unwrap();

    // exact MPM on two pixels, averaged over both noise values
    let argmax = |m: &[f64]| (0..m.len()).fold(0, |b, s| if m[s] > m[b] { s } else { b }) as f64;
    let error = |z1: f64, z2: f64| {
        let (h1, h2) = (i1 as f64 + z1, i2 as f64 + z2);
        let (mut m1, mut m2) = (vec![0.0; q], vec![0.0; q]);
        for s in 0..q {
            for t in 0..q {
                let (x, y) = (s as f64, t as f64);
                let w = (-(x - h1).powi(2) / (2.0 * var) - (y - h2).powi(2) / (2.0 * var) - alpha * (x - y).powi(2) / 2.0)
                    .exp();
                m1[s] += w;
                m2[t] += w;
            }
        }
        ((i1 as f64 - argmax(&m1)).powi(2) + (i2 as f64 - argmax(&m2)).powi(2)) / 2.0
    };
    let exact = gauss_mean(var, 1200, |z1| gauss_mean(var, 1200, |z2| error(z1, z2)));
    let diff = analytic - exact;
    assert!(diff.abs() < 1e-3, "analytic {analytic} exact {exact}");
    assert!(diff > 1e-4, "analytic {analytic} exact {exact}");
}
