//! Exact partition function and marginals by enumerating every configuration.
//!
//! Only usable on small instances, but it is the ground truth the message
//! passing engines are checked against.

use crate::error::{Error, Result};
use crate::model::{MrfModel, PairTables};

/// Default limit on `q^n`.
pub const DEFAULT_CAP: u64 = 20_000_000;

#[derive(Debug, Clone)]
pub struct ExactResult {
    pub log_z: f64,
    /// `-ln Z / beta`
    pub free_energy: f64,
    q: usize,
    unary: Vec<f64>,
    pair: Vec<f64>,
}

impl ExactResult {
    pub fn unary_marginal(&self, i: usize) -> &[f64] {
        &self.unary[i * self.q..(i + 1) * self.q]
    }

    /// Row-major `q x q` marginal of edge `e`, oriented like the graph edge.
    pub fn pair_marginal(&self, e: usize) -> &[f64] {
        let qq = self.q * self.q;
        &self.pair[e * qq..(e + 1) * qq]
    }

    /// `n^-1 sum_i sum_S value(S) p_i(S)`
    pub fn magnetization(&self, values: &[f64]) -> f64 {
        let n = self.unary.len() / self.q;
        let total: f64 = self
            .unary
            .chunks_exact(self.q)
            .map(|p| p.iter().zip(values).map(|(p, v)| p * v).sum::<f64>())
            .sum();
        total / n as f64
    }
}

pub fn enumerate(model: &MrfModel, fields: &[f64], couplings: &[f64]) -> Result<ExactResult> {
    enumerate_with_cap(model, fields, couplings, DEFAULT_CAP)
}

pub fn enumerate_with_cap(
    model: &MrfModel,
    fields: &[f64],
    couplings: &[f64],
    cap: u64,
) -> Result<ExactResult> {
    model.check_fields(fields)?;
    let tables = PairTables::new(model, couplings)?;
    let n = model.n_vertices();
    let q = model.q();
    let configurations = (q as f64).powi(n as i32);
    if configurations > cap as f64 {
        return Err(Error::InstanceTooLarge { configurations, cap });
    }
    let total = configurations as u64;

    let mut unary_log = vec![0.0; n * q];
    for i in 0..n {
        model.beta_unary(i, fields[i], &mut unary_log[i * q..(i + 1) * q]);
    }
    let edges = model.graph().edges();
    let log_weight = |config: &[usize]| -> f64 {
        let mut w: f64 = config.iter().enumerate().map(|(i, &s)| unary_log[i * q + s]).sum();
        for (e, &(u, v)) in edges.iter().enumerate() {
            w += tables.log_table(e)[config[u] * q + config[v]];
        }
        w
    };

    // Two passes: the maximum first, then the shifted sums.
    let mut config = vec![0usize; n];
    let mut max = f64::NEG_INFINITY;
    for _ in 0..total {
        max = max.max(log_weight(&config));
        advance(&mut config, q);
    }

    let mut unary = vec![0.0; n * q];
    let mut pair = vec![0.0; edges.len() * q * q];
    let mut z = 0.0;
    config.iter_mut().for_each(|s| *s = 0);
    for _ in 0..total {
        let w = (log_weight(&config) - max).exp();
        z += w;
        for (i, &s) in config.iter().enumerate() {
            unary[i * q + s] += w;
        }
        for (e, &(u, v)) in edges.iter().enumerate() {
            pair[e * q * q + config[u] * q + config[v]] += w;
        }
        advance(&mut config, q);
    }
    unary.iter_mut().for_each(|p| *p /= z);
    pair.iter_mut().for_each(|p| *p /= z);
    let log_z = max + z.ln();
    Ok(ExactResult {
        log_z,
        free_energy: -log_z / model.beta(),
        q,
        unary,
        pair,
    })
}

// mixed-radix increment, vertex 0 fastest
fn advance(config: &mut [usize], q: usize) {
    for s in config.iter_mut() {
        *s += 1;
        if *s < q {
            return;
        }
        *s = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{square_lattice, Boundary, Graph};
    use crate::model::{StateSpace, UnaryPotential};
    use approx::assert_abs_diff_eq;

    fn spin_model(graph: Graph, beta: f64) -> MrfModel {
        MrfModel::builder(graph, StateSpace::spin(2).unwrap())
            .beta(beta)
            .build()
            .unwrap()
    }

    #[test]
    fn single_free_spin() {
        let m = spin_model(Graph::empty(1), 1.0);
        let r = enumerate(&m, &[0.0], &[]).unwrap();
        assert_abs_diff_eq!(r.log_z, 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(r.unary_marginal(0)[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn two_spin_closed_form() {
        let (beta, j) = (0.7, 0.4);
        let m = spin_model(Graph::from_edges(2, vec![(0, 1)]).unwrap(), beta);
        let r = enumerate(&m, &[0.0, 0.0], &[j]).unwrap();
        let expected = (2.0 * (beta * j).exp() + 2.0 * (-beta * j).exp()).ln();
        assert_abs_diff_eq!(r.log_z, expected, epsilon = 1e-14);
        assert_abs_diff_eq!(r.free_energy, -expected / beta, epsilon = 1e-14);
    }

    #[test]
    fn marginals_are_consistent() {
        let g = square_lattice(3, 2, Boundary::Free).unwrap();
        let m = MrfModel::builder(g, StateSpace::spin(3).unwrap())
            .beta(0.9)
            .build()
            .unwrap();
        let h = [0.3, -0.2, 0.5, 0.0, -0.7, 0.1];
        let j = [0.2, -0.4, 0.6, 0.1, 0.3, -0.2, 0.25];
        let r = enumerate(&m, &h, &j).unwrap();
        for (e, &(u, v)) in m.graph().edges().iter().enumerate() {
            let p = r.pair_marginal(e);
            for s in 0..3 {
                let row: f64 = (0..3).map(|t| p[s * 3 + t]).sum();
                let col: f64 = (0..3).map(|t| p[t * 3 + s]).sum();
                assert_abs_diff_eq!(row, r.unary_marginal(u)[s], epsilon = 1e-14);
                assert_abs_diff_eq!(col, r.unary_marginal(v)[s], epsilon = 1e-14);
            }
        }
        for i in 0..6 {
            assert_abs_diff_eq!(r.unary_marginal(i).iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn relabeling_preserves_log_z() {
        let edges = vec![(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)];
        let h = [0.1, -0.4, 0.8, 0.3];
        let j = [0.5, -0.3, 0.2, 0.7, -0.1];
        let perm = [2, 0, 3, 1];
        let m = spin_model(Graph::from_edges(4, edges.clone()).unwrap(), 1.2);
        let relabeled: Vec<_> = edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let mut h2 = [0.0; 4];
        for i in 0..4 {
            h2[perm[i]] = h[i];
        }
        let m2 = spin_model(Graph::from_edges(4, relabeled).unwrap(), 1.2);
        let a = enumerate(&m, &h, &j).unwrap();
        let b = enumerate(&m2, &h2, &j).unwrap();
        assert_abs_diff_eq!(a.log_z, b.log_z, epsilon = 1e-12);
    }

    #[test]
    fn cap_is_enforced() {
        let g = square_lattice(5, 5, Boundary::Free).unwrap();
        let m = spin_model(g, 1.0);
        let err = enumerate_with_cap(&m, &[0.0; 25], &[0.0; 40], 1000).unwrap_err();
        assert!(matches!(err, Error::InstanceTooLarge { .. }));
    }

    #[test]
    fn large_potentials_do_not_overflow() {
        let m = MrfModel::builder(Graph::empty(2), StateSpace::intensity(3).unwrap())
            .unary(UnaryPotential::GaussianLikelihood { variance: 1e-6 })
            .build()
            .unwrap();
        let r = enumerate(&m, &[2.0, 0.0], &[]).unwrap();
        assert!(r.log_z.is_finite());
        assert_abs_diff_eq!(r.unary_marginal(0)[2], 1.0, epsilon = 1e-12);
    }
}
