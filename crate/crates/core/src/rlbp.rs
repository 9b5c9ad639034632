//! Replica-symmetric message passing for the field-averaged Bethe free
//! energy.
//!
//! The fixed point couples messages `mu`, per-vertex multipliers `Lambda`
//! and quenched marginals `Q`:
//!
//! ```text
//! beta Lambda_i(S) = sum_{k in di} ln mu_{k->i}(S)
//! Q_i(S)           = int dh p_i(h) softmax_S[beta (phi_i(S, h) + Lambda_i(S))]
//! mu_{i->j}(S_j)   ~ sum_{S_i} Q_i(S_i) exp(beta psi_ij) / mu_{j->i}(S_i)
//! Q_ij(S_i, S_j)   ~ Q_i Q_j exp(beta psi_ij) / (mu_{j->i}(S_i) mu_{i->j}(S_j))
//! ```
//!
//! and the free energy at the fixed point is
//!
//! ```text
//! F = sum_i [ sum_S Lambda_i Q_i - 1/beta int dh p_i(h) ln sum_S exp beta(phi_i + Lambda_i) ]
//!     - sum_ij sum_SS' psi_ij Q_ij + 1/beta sum_ij (H2[Q_ij] - H1[Q_i] - H1[Q_j])
//! ```
//!
//! With delta field distributions all of this collapses to ordinary LBP.

use std::collections::HashMap;

use crate::error::Result;
use crate::graph::DirectedAdjacency;
use crate::lbp::{exp_normalize, neg_entropy_of, normalize, MessageInit, MESSAGE_FLOOR};
use crate::model::{MrfModel, PairTables, StateSpace};
use crate::quadrature::build_quadrature;

#[derive(Debug, Clone)]
pub struct RlbpOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    /// Gauss-Hermite nodes per Gaussian field distribution.
    pub n_nodes: usize,
    /// Lower clamp applied to `mu` before it is inverted.
    pub mu_floor: f64,
    pub init: MessageInit,
}

impl Default for RlbpOptions {
    fn default() -> Self {
        RlbpOptions {
            tol: 1e-9,
            max_iter: 10_000,
            damping: 0.5,
            n_nodes: 32,
            mu_floor: 1e-12,
            init: MessageInit::Uniform,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RlbpState {
    q: usize,
    mu: Vec<f64>,
    lambda: Vec<f64>,
    q_vertex: Vec<f64>,
    q_edge: Vec<f64>,
}

impl RlbpState {
    pub fn q(&self) -> usize {
        self.q
    }

    /// Message held in adjacency slot `s` (flowing into the slot's owner).
    pub fn mu(&self, s: usize) -> &[f64] {
        &self.mu[s * self.q..(s + 1) * self.q]
    }

    pub fn mu_mut(&mut self, s: usize) -> &mut [f64] {
        &mut self.mu[s * self.q..(s + 1) * self.q]
    }

    pub fn lambda(&self, i: usize) -> &[f64] {
        &self.lambda[i * self.q..(i + 1) * self.q]
    }

    pub fn marginal(&self, i: usize) -> &[f64] {
        &self.q_vertex[i * self.q..(i + 1) * self.q]
    }

    /// Row-major, rows indexed by the state of the edge's first endpoint.
    pub fn pair_marginal(&self, e: usize) -> &[f64] {
        let qq = self.q * self.q;
        &self.q_edge[e * qq..(e + 1) * qq]
    }

    pub fn n_vertices(&self) -> usize {
        self.lambda.len() / self.q
    }

    pub fn messages(&self) -> &[f64] {
        &self.mu
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlbpReport {
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
    pub quenched_free_energy: f64,
    pub quenched_magnetization: f64,
}

#[derive(Debug, Clone)]
pub struct RlbpOutcome {
    pub state: RlbpState,
    pub report: RlbpReport,
}

pub fn run_rlbp(model: &MrfModel, couplings: &[f64], options: &RlbpOptions) -> Result<RlbpOutcome> {
    RlbpSolver::new(model, couplings, options.n_nodes)?.run(options)
}

/// `n^-1 sum_i sum_S value(S) Q_i(S)`
pub fn quenched_magnetization(state: &RlbpState, states: &StateSpace) -> f64 {
    let n = state.n_vertices();
    if n == 0 {
        return 0.0;
    }
    let total: f64 = (0..n)
        .map(|i| state.marginal(i).iter().zip(states.values()).map(|(p, v)| p * v).sum::<f64>())
        .sum();
    total / n as f64
}

/// `beta * phi_i(S, h_n)` at every quadrature node, shared between vertices
/// with the same potential and field distribution.
struct FieldTable {
    weights: Vec<f64>,
    terms: Vec<f64>,
}

pub struct RlbpSolver<'m> {
    model: &'m MrfModel,
    tables: PairTables,
    adj: DirectedAdjacency,
    fields: Vec<FieldTable>,
    vertex_field: Vec<usize>,
}

struct Scratch {
    blam: Vec<f64>,
    x: Vec<f64>,
    ratio: Vec<f64>,
    out: Vec<f64>,
}

impl<'m> RlbpSolver<'m> {
    pub fn new(model: &'m MrfModel, couplings: &[f64], n_nodes: usize) -> Result<Self> {
        let q = model.q();
        let mut fields: Vec<FieldTable> = Vec::new();
        let mut index: HashMap<(u8, u64, u8, u64, u64), usize> = HashMap::new();
        let mut vertex_field = Vec::with_capacity(model.n_vertices());
        for i in 0..model.n_vertices() {
            let dist = model.field_distribution(i);
            let key = model.unary(i).cache_key().map(|(a, b)| {
                let (c, d, e) = dist.cache_key();
                (a, b, c, d, e)
            });
            if let Some(&k) = key.as_ref().and_then(|k| index.get(k)) {
                vertex_field.push(k);
                continue;
            }
            let rule = build_quadrature(dist, n_nodes)?;
            let mut terms = vec![0.0; rule.len() * q];
            for (n, &h) in rule.nodes.iter().enumerate() {
                model.beta_unary(i, h, &mut terms[n * q..(n + 1) * q]);
            }
            fields.push(FieldTable {
                weights: rule.weights,
                terms,
            });
            if let Some(k) = key {
                index.insert(k, fields.len() - 1);
            }
            vertex_field.push(fields.len() - 1);
        }
        Ok(RlbpSolver {
            model,
            tables: PairTables::new(model, couplings)?,
            adj: model.graph().directed(),
            fields,
            vertex_field,
        })
    }

    pub fn model(&self) -> &MrfModel {
        self.model
    }

    pub fn adjacency(&self) -> &DirectedAdjacency {
        &self.adj
    }

    fn scratch(&self) -> Scratch {
        let q = self.model.q();
        Scratch {
            blam: vec![0.0; q],
            x: vec![0.0; q],
            ratio: vec![0.0; q],
            out: vec![0.0; q * self.model.graph().max_degree().max(1)],
        }
    }

    /// Uniform or ordered messages with the derived quantities filled in.
    pub fn initial_state(&self, init: MessageInit) -> RlbpState {
        let q = self.model.q();
        let mut mu = vec![1.0 / q as f64; q * self.adj.n_slots()];
        if init == MessageInit::Ordered {
            let top = self.model.states().top();
            for s in 0..self.adj.n_slots() {
                let table = self.tables.log_table(self.adj.edge(s));
                let first = self.adj.owner_is_first(s);
                let m = &mut mu[s * q..(s + 1) * q];
                for (x, mx) in m.iter_mut().enumerate() {
                    *mx = if first { table[x * q + top] } else { table[top * q + x] };
                }
                exp_normalize(m);
                m.iter_mut().for_each(|v| *v = v.max(MESSAGE_FLOOR));
            }
        }
        self.state_from_messages(mu, 1e-12)
    }

    pub fn run(&self, options: &RlbpOptions) -> Result<RlbpOutcome> {
        self.run_from(self.initial_state(options.init), options)
    }

    /// Runs from an uninformed start, an ordered start and optionally a warm
    /// start, and keeps the converged branch with the lowest free energy.
    pub fn run_lowest(&self, options: &RlbpOptions, warm: Option<&RlbpState>) -> Result<RlbpOutcome> {
        let mut best: Option<RlbpOutcome> = None;
        let mut starts = vec![self.initial_state(MessageInit::Uniform), self.initial_state(MessageInit::Ordered)];
        if let Some(w) = warm {
            starts.push(w.clone());
        }
        for start in starts {
            let out = self.run_from(start, options)?;
            let better = match &best {
                None => true,
                Some(b) => match (out.report.converged, b.report.converged) {
                    (true, false) => true,
                    (false, true) => false,
                    (true, true) => out.report.quenched_free_energy < b.report.quenched_free_energy,
                    (false, false) => out.report.residual < b.report.residual,
                },
            };
            if better {
                best = Some(out);
            }
        }
        Ok(best.expect("at least one start"))
    }

    /// Iterates from the messages of `start`.
    pub fn run_from(&self, start: RlbpState, options: &RlbpOptions) -> Result<RlbpOutcome> {
        let q = self.model.q();
        let n = self.model.n_vertices();
        let damping = options.damping;
        let mut state = start;
        let mut sc = self.scratch();

        let mut residual = f64::INFINITY;
        let mut iterations = 0;
        let mut converged = false;
        while iterations < options.max_iter {
            iterations += 1;
            residual = 0.0;
            for i in 0..n {
                let slots = self.adj.slots(i);
                if slots.is_empty() {
                    continue;
                }
                self.log_product(&state.mu, i, &mut sc.blam);
                let qi = &mut state.q_vertex[i * q..(i + 1) * q];
                self.vertex_marginal(i, &sc.blam, &mut sc.x, qi);
                for (k, s) in slots.clone().enumerate() {
                    let incoming = &state.mu[s * q..(s + 1) * q];
                    for ((r, &p), &m) in sc.ratio.iter_mut().zip(qi.iter()).zip(incoming) {
                        *r = p / m.max(options.mu_floor);
                    }
                    let out = &mut sc.out[k * q..(k + 1) * q];
                    self.tables
                        .propagate(self.adj.edge(s), self.adj.owner_is_first(s), &sc.ratio, out);
                    normalize(out);
                }
                for (k, s) in slots.enumerate() {
                    let r = self.adj.reverse(s);
                    let new = &sc.out[k * q..(k + 1) * q];
                    for (o, &x) in state.mu[r * q..(r + 1) * q].iter_mut().zip(new) {
                        let damped = ((1.0 - damping) * x + damping * *o).max(MESSAGE_FLOOR);
                        residual = residual.max((damped - *o).abs());
                        *o = damped;
                    }
                }
            }
            if residual <= options.tol {
                converged = true;
                break;
            }
        }

        let state = self.state_from_messages(state.mu, options.mu_floor);
        let report = RlbpReport {
            converged,
            iterations,
            residual,
            quenched_free_energy: self.free_energy(&state),
            quenched_magnetization: quenched_magnetization(&state, self.model.states()),
        };
        Ok(RlbpOutcome { state, report })
    }

    /// `sum_k ln mu_{k->i}` into `out`.
    fn log_product(&self, mu: &[f64], i: usize, out: &mut [f64]) {
        let q = self.model.q();
        out.iter_mut().for_each(|x| *x = 0.0);
        for s in self.adj.slots(i) {
            for (o, &m) in out.iter_mut().zip(&mu[s * q..(s + 1) * q]) {
                *o += m.ln();
            }
        }
    }

    /// Writes `Q_i` given `beta Lambda_i`, returns
    /// `int dh p_i(h) ln sum_S exp beta(phi_i + Lambda_i)`.
    fn vertex_marginal(&self, i: usize, blam: &[f64], x: &mut [f64], out: &mut [f64]) -> f64 {
        let q = blam.len();
        let table = &self.fields[self.vertex_field[i]];
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut lse = 0.0;
        for (n, &w) in table.weights.iter().enumerate() {
            let terms = &table.terms[n * q..(n + 1) * q];
            let mut max = f64::NEG_INFINITY;
            for ((xs, &t), &l) in x.iter_mut().zip(terms).zip(blam) {
                *xs = t + l;
                max = max.max(*xs);
            }
            let mut z = 0.0;
            for xs in x.iter_mut() {
                *xs = (*xs - max).exp();
                z += *xs;
            }
            let scale = w / z;
            for (o, &xs) in out.iter_mut().zip(x.iter()) {
                *o += scale * xs;
            }
            lse += w * (max + z.ln());
        }
        lse
    }

    /// Completes a state from arbitrary positive messages: `Lambda` with the
    /// zero gauge, `Q_i` and `Q_ij`.
    pub fn state_from_messages(&self, mu: Vec<f64>, mu_floor: f64) -> RlbpState {
        let q = self.model.q();
        let n = self.model.n_vertices();
        let beta = self.model.beta();
        let mut lambda = vec![0.0; n * q];
        let mut q_vertex = vec![0.0; n * q];
        let mut x = vec![0.0; q];
        for i in 0..n {
            let l = &mut lambda[i * q..(i + 1) * q];
            self.log_product(&mu, i, l);
            self.vertex_marginal(i, l, &mut x, &mut q_vertex[i * q..(i + 1) * q]);
            l.iter_mut().for_each(|v| *v /= beta);
        }

        let mut q_edge = vec![0.0; self.model.graph().n_edges() * q * q];
        for i in 0..n {
            for s in self.adj.slots(i) {
                if !self.adj.owner_is_first(s) {
                    continue;
                }
                let e = self.adj.edge(s);
                let j = self.adj.neighbor(s);
                let r = self.adj.reverse(s);
                let table = self.tables.log_table(e);
                let out = &mut q_edge[e * q * q..(e + 1) * q * q];
                // mu(s) is j -> i, mu(r) is i -> j
                for a in 0..q {
                    let la = q_vertex[i * q + a].ln() - mu[s * q + a].max(mu_floor).ln();
                    for b in 0..q {
                        let lb = q_vertex[j * q + b].ln() - mu[r * q + b].max(mu_floor).ln();
                        out[a * q + b] = la + lb + table[a * q + b];
                    }
                }
                exp_normalize(out);
            }
        }
        RlbpState {
            q,
            mu,
            lambda,
            q_vertex,
            q_edge,
        }
    }

    /// Replica-symmetric Bethe free energy at `state`.
    pub fn free_energy(&self, state: &RlbpState) -> f64 {
        let q = self.model.q();
        let beta = self.model.beta();
        let graph = self.model.graph();
        let mut blam = vec![0.0; q];
        let mut x = vec![0.0; q];
        let mut qi = vec![0.0; q];
        let mut total = 0.0;
        for i in 0..graph.n_vertices() {
            let lam = state.lambda(i);
            for (b, &l) in blam.iter_mut().zip(lam) {
                *b = beta * l;
            }
            let lse = self.vertex_marginal(i, &blam, &mut x, &mut qi);
            let linear: f64 = lam.iter().zip(state.marginal(i)).map(|(l, p)| l * p).sum();
            total += linear - lse / beta;
        }
        for (e, &(u, v)) in graph.edges().iter().enumerate() {
            let p = state.pair_marginal(e);
            let energy: f64 = p.iter().zip(self.tables.log_table(e)).map(|(p, t)| p * t).sum();
            let entropy = neg_entropy_of(p) - neg_entropy_of(state.marginal(u)) - neg_entropy_of(state.marginal(v));
            total += (entropy - energy) / beta;
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{square_lattice, Boundary, Graph};
    use crate::lbp::{run_lbp, LbpOptions};
    use crate::model::{FieldDistribution, StateSpace};
    use approx::assert_abs_diff_eq;

    #[test]
    fn isolated_gaussian_vertex() {
        let var = 0.8;
        let m = MrfModel::builder(Graph::empty(1), StateSpace::spin(2).unwrap())
            .fields(FieldDistribution::gaussian(0.0, var).unwrap())
            .build()
            .unwrap();
        let opts = RlbpOptions {
            n_nodes: 96,
            ..RlbpOptions::default()
        };
        let out = run_rlbp(&m, &[], &opts).unwrap();
        assert!(out.report.converged);
        assert_abs_diff_eq!(out.state.marginal(0)[0], 0.5, epsilon = 1e-14);
        // trapezoid oracle on a wide grid
        let (a, steps) = (12.0 * var.sqrt(), 200_000);
        let dh = 2.0 * a / steps as f64;
        let mut f = 0.0;
        for k in 0..=steps {
            let h = -a + k as f64 * dh;
            let p = (-h * h / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
            let wt = if k == 0 || k == steps { 0.5 } else { 1.0 };
            f -= wt * dh * p * (2.0 * h.cosh()).ln();
        }
        assert_abs_diff_eq!(out.report.quenched_free_energy, f, epsilon = 1e-9);
    }

    #[test]
    fn independent_vertices_with_delta_fields() {
        let m = MrfModel::builder(Graph::empty(3), StateSpace::spin(3).unwrap())
            .beta(0.7)
            .fields(crate::model::Assignment::PerItem(vec![
                FieldDistribution::Delta(0.2),
                FieldDistribution::Delta(-1.0),
                FieldDistribution::Delta(0.5),
            ]))
            .build()
            .unwrap();
        let out = run_rlbp(&m, &[], &RlbpOptions::default()).unwrap();
        let expected: f64 = [0.2f64, -1.0, 0.5]
            .iter()
            .map(|h| -(1.0 + 2.0 * (0.7 * h).cosh()).ln() / 0.7)
            .sum();
        assert_abs_diff_eq!(out.report.quenched_free_energy, expected, epsilon = 1e-13);
    }

    #[test]
    fn delta_fields_reduce_to_lbp() {
        let g = square_lattice(4, 4, Boundary::Free).unwrap();
        let h: Vec<f64> = (0..16).map(|i| ((i * 5) % 7) as f64 * 0.3 - 0.9).collect();
        let m = MrfModel::builder(g, StateSpace::spin(3).unwrap())
            .fields(crate::model::Assignment::PerItem(
                h.iter().map(|&x| FieldDistribution::Delta(x)).collect(),
            ))
            .build()
            .unwrap();
        let j = vec![0.2; 24];
        let lbp = run_lbp(&m, &h, &j, &LbpOptions::default()).unwrap();
        let r = run_rlbp(&m, &j, &RlbpOptions::default()).unwrap();
        assert!(r.report.converged);
        assert_abs_diff_eq!(r.report.quenched_free_energy, lbp.report.bethe_free_energy, epsilon = 1e-10);
        for i in 0..16 {
            for s in 0..3 {
                assert_abs_diff_eq!(r.state.marginal(i)[s], lbp.beliefs.unary(i)[s], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn gauge_constant_is_irrelevant() {
        let g = square_lattice(3, 3, Boundary::Periodic).unwrap();
        let m = MrfModel::builder(g, StateSpace::spin(2).unwrap())
            .fields(FieldDistribution::gaussian(0.1, 1.0).unwrap())
            .build()
            .unwrap();
        let j = vec![0.3; 18];
        let solver = RlbpSolver::new(&m, &j, 16).unwrap();
        let out = solver.run(&RlbpOptions::default()).unwrap();
        let mut mu = out.state.messages().to_vec();
        for (k, x) in mu.iter_mut().enumerate() {
            *x *= 0.5 + (k / 2) as f64 * 0.1;
        }
        let scaled = solver.state_from_messages(mu, 1e-12);
        assert_abs_diff_eq!(solver.free_energy(&scaled), out.report.quenched_free_energy, epsilon = 1e-10);
        for i in 0..9 {
            for s in 0..2 {
                assert_abs_diff_eq!(scaled.marginal(i)[s], out.state.marginal(i)[s], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn fixed_point_satisfies_constraints() {
        let g = square_lattice(4, 4, Boundary::Free).unwrap();
        let m = MrfModel::builder(g, StateSpace::spin(3).unwrap())
            .fields(FieldDistribution::gaussian(0.2, 0.5).unwrap())
            .build()
            .unwrap();
        let out = run_rlbp(&m, &[0.4; 24], &RlbpOptions::default()).unwrap();
        assert!(out.report.converged);
        let st = &out.state;
        for (e, &(u, v)) in m.graph().edges().iter().enumerate() {
            let p = st.pair_marginal(e);
            for a in 0..3 {
                let row: f64 = (0..3).map(|b| p[a * 3 + b]).sum();
                let col: f64 = (0..3).map(|b| p[b * 3 + a]).sum();
                assert_abs_diff_eq!(row, st.marginal(u)[a], epsilon = 1e-8);
                assert_abs_diff_eq!(col, st.marginal(v)[a], epsilon = 1e-8);
            }
        }
    }
}
