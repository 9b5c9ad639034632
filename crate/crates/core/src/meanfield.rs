//! Ferromagnetic mean-field model in random fields.
//!
//! With coupling `g(S_i) g(S_j) / n` between every pair of vertices the
//! free energy per variable in the thermodynamic limit is
//!
//! ```text
//! f(m) = m^2 / 2 - 1/beta int dh p(h) ln sum_S exp beta (phi(S, h) + m g(S))
//! ```
//!
//! evaluated at the stationary points `m = int dh p(h) <g>`, where `<.>` is
//! the single-site average under `beta (phi + m g)`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::complete_graph;
use crate::model::{FieldDistribution, MrfModel, PairPotential, StateSpace, UnaryPotential};
use crate::quadrature::{build_quadrature, QuadratureRule};
use crate::rlbp::{RlbpOptions, RlbpSolver};

#[derive(Debug, Clone)]
pub struct MeanFieldModel {
    pub states: StateSpace,
    pub g: Vec<f64>,
    pub unary: UnaryPotential,
    pub beta: f64,
    pub field: FieldDistribution,
}

impl MeanFieldModel {
    pub fn new(
        states: StateSpace,
        g: Vec<f64>,
        unary: UnaryPotential,
        beta: f64,
        field: FieldDistribution,
    ) -> Result<Self> {
        if g.len() != states.q() {
            return Err(Error::SizeMismatch {
                what: "g",
                got: g.len(),
                expected: states.q(),
            });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("g must be finite"));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::param("beta must be positive"));
        }
        Ok(MeanFieldModel {
            states,
            g,
            unary,
            beta,
            field,
        })
    }

    /// `q` = 2 spins, `g(S) = S`, `phi = h S`.
    pub fn ising(beta: f64, field: FieldDistribution) -> Result<Self> {
        let states = StateSpace::spin(2)?;
        let g = states.values().to_vec();
        MeanFieldModel::new(states, g, UnaryPotential::LinearField, beta, field)
    }

    fn g_range(&self) -> (f64, f64) {
        let lo = self.g.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaddleSolution {
    pub m: f64,
    /// Free energy per variable.
    pub f: f64,
    /// `|m - rhs(m)|`
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct SaddleOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Starting points of the damped iteration.
    pub initial_points: Vec<f64>,
    pub n_nodes: usize,
    /// Number of points in the sign-change scan of `m - rhs(m)`.
    pub grid: usize,
}

impl Default for SaddleOptions {
    fn default() -> Self {
        SaddleOptions {
            tol: 1e-12,
            max_iter: 10_000,
            initial_points: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
            n_nodes: 64,
            grid: 2001,
        }
    }
}

/// Field average tabulated on a quadrature rule.
pub struct MeanField<'a> {
    model: &'a MeanFieldModel,
    rule: QuadratureRule,
    // beta * phi(S, h_n), row per node
    terms: Vec<f64>,
}

impl<'a> MeanField<'a> {
    pub fn new(model: &'a MeanFieldModel, n_nodes: usize) -> Result<Self> {
        let rule = build_quadrature(&model.field, n_nodes)?;
        let q = model.states.q();
        let mut terms = Vec::with_capacity(rule.len() * q);
        for &h in &rule.nodes {
            for s in 0..q {
                terms.push(model.beta * model.unary.eval(&model.states, s, h));
            }
        }
        Ok(MeanField { model, rule, terms })
    }

    /// `(int dh p(h) <g>, int dh p(h) ln sum_S exp beta(phi + m g))`
    fn averages(&self, m: f64) -> (f64, f64) {
        let q = self.model.states.q();
        let beta = self.model.beta;
        let mut x = vec![0.0; q];
        let (mut mean_g, mut log_z) = (0.0, 0.0);
        for (n, &w) in self.rule.weights.iter().enumerate() {
            let t = &self.terms[n * q..(n + 1) * q];
            let mut max = f64::NEG_INFINITY;
            for s in 0..q {
                x[s] = t[s] + beta * m * self.model.g[s];
                max = max.max(x[s]);
            }
            let (mut z, mut zg) = (0.0, 0.0);
            for s in 0..q {
                let e = (x[s] - max).exp();
                z += e;
                zg += e * self.model.g[s];
            }
            mean_g += w * zg / z;
            log_z += w * (max + z.ln());
        }
        (mean_g, log_z)
    }

    pub fn rhs(&self, m: f64) -> f64 {
        self.averages(m).0
    }

    pub fn free_energy(&self, m: f64) -> f64 {
        0.5 * m * m - self.averages(m).1 / self.model.beta
    }

    fn solution(&self, m: f64) -> SaddleSolution {
        let (rhs, log_z) = self.averages(m);
        SaddleSolution {
            m,
            f: 0.5 * m * m - log_z / self.model.beta,
            residual: (m - rhs).abs(),
        }
    }
}

/// All located solutions of the saddle-point equation, lowest `f` first.
pub fn solve_saddle(model: &MeanFieldModel, options: &SaddleOptions) -> Result<Vec<SaddleSolution>> {
    let mf = MeanField::new(model, options.n_nodes)?;
    let (lo, hi) = model.g_range();
    let gap = |m: f64| m - mf.rhs(m);
    let mut roots: Vec<f64> = Vec::new();

    // every fixed point lies in [min g, max g]
    let n = options.grid.max(2);
    let mut prev_m = lo;
    let mut prev_v = gap(lo);
    if prev_v.abs() <= options.tol {
        roots.push(lo);
    }
    for k in 1..n {
        let m = lo + (hi - lo) * k as f64 / (n - 1) as f64;
        let v = gap(m);
        if v.abs() <= options.tol {
            roots.push(m);
        } else if prev_v.abs() > options.tol && prev_v.signum() != v.signum() {
            roots.push(bisect(&gap, prev_m, m, prev_v, options.tol));
        }
        prev_m = m;
        prev_v = v;
    }

    for &start in &options.initial_points {
        let mut m = start.clamp(lo, hi);
        for _ in 0..options.max_iter {
            let next = 0.5 * m + 0.5 * mf.rhs(m);
            let done = (next - m).abs() <= options.tol;
            m = next;
            if done {
                break;
            }
        }
        if gap(m).abs() <= options.tol {
            roots.push(m);
        }
    }

    let mut solutions: Vec<SaddleSolution> = Vec::new();
    for m in roots {
        let s = mf.solution(m);
        if s.residual > options.tol {
            continue;
        }
        if !solutions.iter().any(|t| (t.m - m).abs() < 1e-7) {
            solutions.push(s);
        }
    }
    if solutions.is_empty() {
        return Err(Error::NoFixedPoint);
    }
    solutions.sort_by(|a, b| a.f.total_cmp(&b.f).then(a.m.total_cmp(&b.m)));
    Ok(solutions)
}

fn bisect(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, mut fa: f64, tol: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        let fm = f(mid);
        if fm.abs() <= tol || mid == a || mid == b {
            return mid;
        }
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompleteGraphCheck {
    /// Lowest saddle-point free energy per variable.
    pub f_exact: f64,
    /// RLBP free energy per variable on the `n`-vertex complete graph.
    pub f_rlbp: f64,
    pub gap: f64,
    pub converged: bool,
}

/// The finite-`n` MRF the mean-field model is the limit of.
pub fn complete_graph_model(n: usize, model: &MeanFieldModel) -> Result<MrfModel> {
    let q = model.states.q();
    let mut table = vec![0.0; q * q];
    for s in 0..q {
        for t in 0..q {
            table[s * q + t] = model.g[s] * model.g[t] / n as f64;
        }
    }
    MrfModel::builder(Arc::new(complete_graph(n)?), model.states.clone())
        .beta(model.beta)
        .unary(model.unary.clone())
        .pair(PairPotential::Table(table.into()))
        .fields(model.field)
        .build()
}

/// Runs RLBP on the complete graph from an uninformed and an ordered start
/// and compares the lower free energy per variable with the saddle point.
pub fn verify_rlbp_on_complete_graph(
    n: usize,
    model: &MeanFieldModel,
    options: &RlbpOptions,
) -> Result<CompleteGraphCheck> {
    let saddle = solve_saddle(model, &SaddleOptions::default())?;
    let mrf = complete_graph_model(n, model)?;
    let couplings = vec![0.0; mrf.graph().n_edges()];
    let solver = RlbpSolver::new(&mrf, &couplings, options.n_nodes)?;
    let out = solver.run_lowest(options, None)?;
    let f_rlbp = out.report.quenched_free_energy / n as f64;
    let f_exact = saddle[0].f;
    Ok(CompleteGraphCheck {
        f_exact,
        f_rlbp,
        gap: (f_exact - f_rlbp).abs(),
        converged: out.report.converged,
    })
}
