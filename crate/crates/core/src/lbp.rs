//! Loopy belief propagation (sum-product) on a pairwise MRF.
//!
//! Messages are kept normalized in the linear domain. A vertex update
//! multiplies its unary weights by all incoming messages and divides out one
//! message per outgoing edge; when that product underflows the update is
//! redone in the log domain. The Bethe free energy is evaluated by
//! substituting the beliefs into the variational functional
//!
//! ```text
//! F = - sum_i sum_S phi_i b_i - sum_ij sum_SS' psi_ij b_ij
//!     + 1/beta [ sum_i (1 - d_i) H1(b_i) + sum_ij H2(b_ij) ],   H(p) = sum p ln p
//! ```

use rand::seq::SliceRandom;

use crate::error::Result;
use crate::graph::DirectedAdjacency;
use crate::model::{MrfModel, PairTables, StateSpace};
use crate::rng::{self, Domain};

/// Smallest value a stored message entry may take.
pub const MESSAGE_FLOOR: f64 = 1e-300;

// Relative spread beyond which the linear-domain product is not trusted.
const LINEAR_RANGE: f64 = 1e-280;

/// Order in which vertices send their messages within one sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// Vertices in index order, each using the freshest incoming messages.
    Sequential,
    /// As `Sequential` but with a fresh seeded permutation every sweep.
    RandomSequential,
    /// All messages computed from the previous sweep (synchronous).
    Flooding,
}

/// Starting point of the message iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageInit {
    Uniform,
    /// Each message is the one a neighbour pinned to the top state would send.
    Ordered,
}

#[derive(Debug, Clone)]
pub struct LbpOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// `m <- (1 - damping) m_new + damping m_old`. `None` picks 0 on forests
    /// and 0.5 otherwise.
    pub damping: Option<f64>,
    pub schedule: Schedule,
    /// Seed for `Schedule::RandomSequential`.
    pub seed: u64,
    pub init: MessageInit,
}

impl Default for LbpOptions {
    fn default() -> Self {
        LbpOptions {
            tol: 1e-9,
            max_iter: 10_000,
            damping: None,
            schedule: Schedule::Sequential,
            seed: 0,
            init: MessageInit::Uniform,
        }
    }
}

/// Messages indexed by adjacency slot: slot `s` of vertex `i` holds the
/// message `neighbor(s) -> i`, a length-`q` vector summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageState {
    q: usize,
    messages: Vec<f64>,
}

impl MessageState {
    pub fn uniform(q: usize, n_slots: usize) -> Self {
        MessageState {
            q,
            messages: vec![1.0 / q as f64; q * n_slots],
        }
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn slot(&self, s: usize) -> &[f64] {
        &self.messages[s * self.q..(s + 1) * self.q]
    }

    pub fn slot_mut(&mut self, s: usize) -> &mut [f64] {
        &mut self.messages[s * self.q..(s + 1) * self.q]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.messages
    }
}

/// One- and two-vertex beliefs.
#[derive(Debug, Clone)]
pub struct BeliefSet {
    q: usize,
    unary: Vec<f64>,
    pair: Vec<f64>,
}

impl BeliefSet {
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n_vertices(&self) -> usize {
        self.unary.len() / self.q
    }

    pub fn unary(&self, i: usize) -> &[f64] {
        &self.unary[i * self.q..(i + 1) * self.q]
    }

    /// Row-major `q x q`, rows indexed by the state of the edge's first endpoint.
    pub fn pair(&self, e: usize) -> &[f64] {
        let qq = self.q * self.q;
        &self.pair[e * qq..(e + 1) * qq]
    }

    /// Most probable state of vertex `i`; ties go to the smallest index.
    pub fn argmax(&self, i: usize) -> usize {
        argmax_first(self.unary(i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbpReport {
    pub converged: bool,
    pub iterations: usize,
    /// Max-norm of the message change in the last sweep.
    pub residual: f64,
    pub bethe_free_energy: f64,
}

#[derive(Debug, Clone)]
pub struct LbpOutcome {
    pub messages: MessageState,
    pub beliefs: BeliefSet,
    pub report: LbpReport,
}

/// Runs LBP once; see [`LbpSolver`] to reuse the pair tables across many
/// field realizations.
pub fn run_lbp(model: &MrfModel, fields: &[f64], couplings: &[f64], options: &LbpOptions) -> Result<LbpOutcome> {
    LbpSolver::new(model, couplings)?.run(fields, options)
}

/// `n^-1 sum_i sum_S value(S) b_i(S)`
pub fn magnetization(beliefs: &BeliefSet, states: &StateSpace) -> f64 {
    let n = beliefs.n_vertices();
    if n == 0 {
        return 0.0;
    }
    let total: f64 = (0..n)
        .map(|i| beliefs.unary(i).iter().zip(states.values()).map(|(b, v)| b * v).sum::<f64>())
        .sum();
    total / n as f64
}

/// LBP engine for a fixed model and coupling vector.
pub struct LbpSolver<'m> {
    model: &'m MrfModel,
    tables: PairTables,
    adj: DirectedAdjacency,
    forest: bool,
}

struct Scratch {
    prod: Vec<f64>,
    cavity: Vec<f64>,
    out: Vec<f64>,
}

impl Scratch {
    fn new(q: usize, max_degree: usize) -> Self {
        Scratch {
            prod: vec![0.0; q],
            cavity: vec![0.0; q],
            out: vec![0.0; q * max_degree.max(1)],
        }
    }
}

/// `beta * phi_i(S, h_i)` and its max-shifted exponential for every vertex.
struct UnaryTerms {
    log: Vec<f64>,
    weight: Vec<f64>,
}

impl<'m> LbpSolver<'m> {
    pub fn new(model: &'m MrfModel, couplings: &[f64]) -> Result<Self> {
        Ok(LbpSolver {
            model,
            tables: PairTables::new(model, couplings)?,
            adj: model.graph().directed(),
            forest: model.graph().is_forest(),
        })
    }

    pub fn model(&self) -> &MrfModel {
        self.model
    }

    pub fn adjacency(&self) -> &DirectedAdjacency {
        &self.adj
    }

    /// The message `from -> to`, if the two vertices are adjacent.
    pub fn message<'a>(&self, state: &'a MessageState, from: usize, to: usize) -> Option<&'a [f64]> {
        self.adj.slot_of(from, to).map(|s| state.slot(s))
    }

    pub fn initial_messages(&self, init: MessageInit) -> MessageState {
        let q = self.model.q();
        let mut state = MessageState::uniform(q, self.adj.n_slots());
        if init == MessageInit::Ordered {
            let top = self.model.states().top();
            for s in 0..self.adj.n_slots() {
                let table = self.tables.log_table(self.adj.edge(s));
                let first = self.adj.owner_is_first(s);
                let m = state.slot_mut(s);
                for (x, mx) in m.iter_mut().enumerate() {
                    *mx = if first { table[x * q + top] } else { table[top * q + x] };
                }
                exp_normalize(m);
                floor(m);
            }
        }
        state
    }

    fn unary_terms(&self, fields: &[f64]) -> UnaryTerms {
        let q = self.model.q();
        let n = self.model.n_vertices();
        let mut log = vec![0.0; n * q];
        let mut weight = vec![0.0; n * q];
        for i in 0..n {
            let l = &mut log[i * q..(i + 1) * q];
            self.model.beta_unary(i, fields[i], l);
            let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for (w, &x) in weight[i * q..(i + 1) * q].iter_mut().zip(l.iter()) {
                *w = (x - max).exp();
            }
        }
        UnaryTerms { log, weight }
    }

    pub fn run(&self, fields: &[f64], options: &LbpOptions) -> Result<LbpOutcome> {
        let start = self.initial_messages(options.init);
        self.run_from(fields, start, options)
    }

    /// Iterates from the given messages (warm start).
    pub fn run_from(&self, fields: &[f64], start: MessageState, options: &LbpOptions) -> Result<LbpOutcome> {
        self.model.check_fields(fields)?;
        let q = self.model.q();
        let n = self.model.n_vertices();
        let unary = self.unary_terms(fields);
        let damping = options
            .damping
            .unwrap_or(if self.forest { 0.0 } else { 0.5 });
        let mut state = start;
        let mut snapshot = Vec::new();
        let mut scratch = Scratch::new(q, self.model.graph().max_degree());
        let mut order: Vec<usize> = (0..n).collect();
        let mut order_rng = rng::stream(options.seed, Domain::Schedule, 0);

        let mut residual = f64::INFINITY;
        let mut iterations = 0;
        let mut converged = false;
        while iterations < options.max_iter {
            iterations += 1;
            residual = 0.0;
            match options.schedule {
                Schedule::Sequential => {}
                Schedule::RandomSequential => order.shuffle(&mut order_rng),
                Schedule::Flooding => {
                    snapshot.clear();
                    snapshot.extend_from_slice(&state.messages);
                }
            }
            for &i in &order {
                let read = if options.schedule == Schedule::Flooding {
                    &snapshot[..]
                } else {
                    &state.messages[..]
                };
                self.send(i, &unary, read, &mut scratch);
                for (k, s) in self.adj.slots(i).enumerate() {
                    let new = &scratch.out[k * q..(k + 1) * q];
                    let old = state.slot_mut(self.adj.reverse(s));
                    for (o, &x) in old.iter_mut().zip(new) {
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

        let beliefs = self.beliefs_with(&unary, &state);
        let bethe_free_energy = self.bethe_free_energy(fields, &beliefs);
        Ok(LbpOutcome {
            messages: state,
            beliefs,
            report: LbpReport {
                converged,
                iterations,
                residual,
                bethe_free_energy,
            },
        })
    }

    /// Writes the normalized outgoing messages of vertex `i`, one per slot of
    /// `i` in slot order, into `scratch.out`.
    fn send(&self, i: usize, unary: &UnaryTerms, read: &[f64], scratch: &mut Scratch) {
        let q = self.model.q();
        let slots = self.adj.slots(i);
        if slots.is_empty() {
            return;
        }
        let prod = &mut scratch.prod;
        prod.copy_from_slice(&unary.weight[i * q..(i + 1) * q]);
        for s in slots.clone() {
            let m = &read[s * q..(s + 1) * q];
            let mut max = 0.0f64;
            for (p, &x) in prod.iter_mut().zip(m) {
                *p *= x;
                max = max.max(*p);
            }
            if max > 0.0 && max < 1e-200 {
                prod.iter_mut().for_each(|p| *p /= max);
            }
        }
        let max = prod.iter().copied().fold(0.0, f64::max);
        let min = prod.iter().copied().fold(f64::INFINITY, f64::min);

        if max > 0.0 && min > max * LINEAR_RANGE {
            for (k, s) in slots.enumerate() {
                let m = &read[s * q..(s + 1) * q];
                for ((c, &p), &x) in scratch.cavity.iter_mut().zip(prod.iter()).zip(m) {
                    *c = p / x;
                }
                let out = &mut scratch.out[k * q..(k + 1) * q];
                self.tables
                    .propagate(self.adj.edge(s), self.adj.owner_is_first(s), &scratch.cavity, out);
                normalize(out);
                floor(out);
            }
        } else {
            let total = &mut scratch.prod;
            total.copy_from_slice(&unary.log[i * q..(i + 1) * q]);
            for s in slots.clone() {
                for (t, &x) in total.iter_mut().zip(&read[s * q..(s + 1) * q]) {
                    *t += x.ln();
                }
            }
            for (k, s) in slots.enumerate() {
                let m = &read[s * q..(s + 1) * q];
                for ((c, &t), &x) in scratch.cavity.iter_mut().zip(total.iter()).zip(m) {
                    *c = t - x.ln();
                }
                let out = &mut scratch.out[k * q..(k + 1) * q];
                self.tables
                    .propagate_log(self.adj.edge(s), self.adj.owner_is_first(s), &scratch.cavity, out);
                exp_normalize(out);
                floor(out);
            }
        }
    }

    /// Beliefs implied by arbitrary positive messages (they need not be
    /// normalized).
    pub fn beliefs(&self, fields: &[f64], messages: &MessageState) -> Result<BeliefSet> {
        self.model.check_fields(fields)?;
        Ok(self.beliefs_with(&self.unary_terms(fields), messages))
    }

    fn beliefs_with(&self, unary: &UnaryTerms, messages: &MessageState) -> BeliefSet {
        let q = self.model.q();
        let n = self.model.n_vertices();
        let graph = self.model.graph();
        // log of unary weight times all incoming messages
        let mut total = unary.log.clone();
        for i in 0..n {
            for s in self.adj.slots(i) {
                for (t, &x) in total[i * q..(i + 1) * q].iter_mut().zip(messages.slot(s)) {
                    *t += x.ln();
                }
            }
        }
        let mut b_unary = total.clone();
        for b in b_unary.chunks_exact_mut(q) {
            exp_normalize(b);
        }

        let mut b_pair = vec![0.0; graph.n_edges() * q * q];
        let mut cav_u = vec![0.0; q];
        let mut cav_v = vec![0.0; q];
        for i in 0..n {
            for s in self.adj.slots(i) {
                if !self.adj.owner_is_first(s) {
                    continue;
                }
                let e = self.adj.edge(s);
                let j = self.adj.neighbor(s);
                let r = self.adj.reverse(s);
                for x in 0..q {
                    cav_u[x] = total[i * q + x] - messages.slot(s)[x].ln();
                    cav_v[x] = total[j * q + x] - messages.slot(r)[x].ln();
                }
                let table = self.tables.log_table(e);
                let out = &mut b_pair[e * q * q..(e + 1) * q * q];
                for x in 0..q {
                    for y in 0..q {
                        out[x * q + y] = cav_u[x] + cav_v[y] + table[x * q + y];
                    }
                }
                exp_normalize(out);
            }
        }
        BeliefSet {
            q,
            unary: b_unary,
            pair: b_pair,
        }
    }

    /// The variational Bethe free energy evaluated at the given beliefs.
    pub fn bethe_free_energy(&self, fields: &[f64], beliefs: &BeliefSet) -> f64 {
        let q = self.model.q();
        let beta = self.model.beta();
        let graph = self.model.graph();
        let mut phi = vec![0.0; q];
        let mut energy = 0.0;
        let mut neg_entropy = 0.0;
        for i in 0..graph.n_vertices() {
            self.model.beta_unary(i, fields[i], &mut phi);
            let b = beliefs.unary(i);
            energy -= b.iter().zip(&phi).map(|(b, p)| b * p).sum::<f64>() / beta;
            neg_entropy += (1.0 - graph.degree(i) as f64) * neg_entropy_of(b);
        }
        for e in 0..graph.n_edges() {
            let b = beliefs.pair(e);
            let table = self.tables.log_table(e);
            energy -= b.iter().zip(table).map(|(b, p)| b * p).sum::<f64>() / beta;
            neg_entropy += neg_entropy_of(b);
        }
        energy + neg_entropy / beta
    }
}

/// `sum p ln p` with `0 ln 0 = 0`.
pub(crate) fn neg_entropy_of(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum()
}

pub(crate) fn normalize(v: &mut [f64]) {
    let z: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= z);
}

/// In place: `v <- softmax(v)`.
pub(crate) fn exp_normalize(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    v.iter_mut().for_each(|x| *x = (*x - max).exp());
    normalize(v);
}

fn floor(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(MESSAGE_FLOOR));
}

pub(crate) fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact;
    use crate::graph::{path_graph, square_lattice, Boundary, Graph};
    use crate::model::{PairPotential, StateSpace, UnaryPotential};
    use approx::assert_abs_diff_eq;

    #[test]
    fn isolated_vertex() {
        let m = MrfModel::builder(Graph::empty(1), StateSpace::spin(3).unwrap())
            .beta(1.5)
            .build()
            .unwrap();
        let out = run_lbp(&m, &[0.4], &[], &LbpOptions::default()).unwrap();
        assert!(out.report.converged);
        assert_eq!(out.report.iterations, 1);
        let w: Vec<f64> = [-1.0f64, 0.0, 1.0].iter().map(|v| (1.5 * 0.4 * v).exp()).collect();
        let z: f64 = w.iter().sum();
        for s in 0..3 {
            assert_abs_diff_eq!(out.beliefs.unary(0)[s], w[s] / z, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(out.report.bethe_free_energy, -z.ln() / 1.5, epsilon = 1e-14);
    }

    #[test]
    fn path_matches_enumeration() {
        let g = path_graph(8).unwrap();
        let m = MrfModel::builder(g, StateSpace::spin(3).unwrap())
            .beta(1.1)
            .build()
            .unwrap();
        let h = [0.3, -0.5, 0.9, 0.1, -0.2, 0.7, -0.8, 0.05];
        let j = [0.4, -0.6, 0.8, 0.2, -0.3, 0.5, 0.9];
        let out = run_lbp(&m, &h, &j, &LbpOptions::default()).unwrap();
        let ex = exact::enumerate(&m, &h, &j).unwrap();
        assert!(out.report.converged);
        assert!(out.report.iterations <= m.graph().diameter() + 1);
        assert_abs_diff_eq!(out.report.bethe_free_energy, ex.free_energy, epsilon = 1e-10);
        for i in 0..8 {
            for s in 0..3 {
                assert_abs_diff_eq!(out.beliefs.unary(i)[s], ex.unary_marginal(i)[s], epsilon = 1e-10);
            }
        }
        for e in 0..7 {
            for k in 0..9 {
                assert_abs_diff_eq!(out.beliefs.pair(e)[k], ex.pair_marginal(e)[k], epsilon = 1e-10);
            }
        }
        assert_abs_diff_eq!(
            magnetization(&out.beliefs, m.states()),
            ex.magnetization(m.states().values()),
            epsilon = 1e-10
        );
    }

    #[test]
    fn schedules_agree_on_loopy_graph() {
        let g = square_lattice(4, 4, Boundary::Free).unwrap();
        let m = MrfModel::builder(g, StateSpace::spin(2).unwrap()).build().unwrap();
        let h: Vec<f64> = (0..16).map(|i| ((i * 7) % 5) as f64 * 0.2 - 0.4).collect();
        let j = vec![0.3; 24];
        let base = run_lbp(&m, &h, &j, &LbpOptions::default()).unwrap();
        for schedule in [Schedule::Flooding, Schedule::RandomSequential] {
            let o = LbpOptions {
                schedule,
                seed: 3,
                ..LbpOptions::default()
            };
            let other = run_lbp(&m, &h, &j, &o).unwrap();
            assert!(other.report.converged);
            assert_abs_diff_eq!(
                other.report.bethe_free_energy,
                base.report.bethe_free_energy,
                epsilon = 1e-8
            );
        }
    }

    #[test]
    fn zero_field_lattice_is_unmagnetized() {
        let g = square_lattice(3, 3, Boundary::Free).unwrap();
        let m = MrfModel::builder(g, StateSpace::spin(2).unwrap()).build().unwrap();
        let out = run_lbp(&m, &[0.0; 9], &[0.2; 12], &LbpOptions::default()).unwrap();
        assert!(out.report.converged);
        assert_abs_diff_eq!(magnetization(&out.beliefs, m.states()), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn magnetization_extremes() {
        let st = StateSpace::spin(2).unwrap();
        let b = BeliefSet {
            q: 2,
            unary: vec![0.5; 6],
            pair: vec![],
        };
        assert_eq!(magnetization(&b, &st), 0.0);
        let b = BeliefSet {
            q: 2,
            unary: vec![0.0, 1.0, 0.0, 1.0],
            pair: vec![],
        };
        assert_eq!(magnetization(&b, &st), 1.0);
    }

    #[test]
    fn free_energy_ignores_message_scale() {
        let g = square_lattice(3, 3, Boundary::Periodic).unwrap();
        let m = MrfModel::builder(g, StateSpace::spin(3).unwrap()).build().unwrap();
        let h: Vec<f64> = (0..9).map(|i| (i as f64 * 0.37).sin()).collect();
        let j = vec![0.25; 18];
        let solver = LbpSolver::new(&m, &j).unwrap();
        let out = solver.run(&h, &LbpOptions::default()).unwrap();
        let mut scaled = out.messages.clone();
        for s in 0..solver.adjacency().n_slots() {
            let c = 0.1 + s as f64 * 0.73;
            scaled.slot_mut(s).iter_mut().for_each(|x| *x *= c);
        }
        let b = solver.beliefs(&h, &scaled).unwrap();
        assert_abs_diff_eq!(
            solver.bethe_free_energy(&h, &b),
            out.report.bethe_free_energy,
            epsilon = 1e-10
        );
    }

    #[test]
    fn log_domain_fallback_handles_degenerate_likelihood() {
        let g = square_lattice(3, 3, Boundary::Free).unwrap();
        let m = MrfModel::builder(g, StateSpace::intensity(4).unwrap())
            .unary(UnaryPotential::GaussianLikelihood { variance: 1e-12 })
            .pair(PairPotential::Quadratic { alpha: 0.5 })
            .build()
            .unwrap();
        let h: Vec<f64> = (0..9).map(|i| (i % 4) as f64).collect();
        let out = run_lbp(&m, &h, &[0.0; 12], &LbpOptions::default()).unwrap();
        assert!(out.report.converged);
        assert!(out.report.bethe_free_energy.is_finite());
        for i in 0..9 {
            assert_eq!(out.beliefs.argmax(i), i % 4);
        }
    }

    #[test]
    fn ordered_start_breaks_symmetry() {
        let g = square_lattice(6, 6, Boundary::Periodic).unwrap();
        let m = MrfModel::builder(g, StateSpace::spin(2).unwrap()).build().unwrap();
        let j = vec![1.0; 72];
        let cold = run_lbp(&m, &[0.0; 36], &j, &LbpOptions::default()).unwrap();
        let opts = LbpOptions {
            init: MessageInit::Ordered,
            ..LbpOptions::default()
        };
        let hot = run_lbp(&m, &[0.0; 36], &j, &opts).unwrap();
        assert!(magnetization(&cold.beliefs, m.states()).abs() < 1e-9);
        assert!(magnetization(&hot.beliefs, m.states()) > 0.9);
        assert!(hot.report.bethe_free_energy < cold.report.bethe_free_energy);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax_first(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax_first(&[0.5, 0.5]), 0);
    }
}
