//! Pairwise Markov random fields with per-vertex random fields.
//!
//! The Gibbs weight of a configuration is
//! `exp(beta * (sum_i phi_i(S_i, h_i) + sum_{ij} psi_ij(S_i, S_j)))`.
//! Field values `h` and edge couplings `J` are supplied separately from the
//! model so that one model can be reused across disorder realizations.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::{self, Domain, Rng};

/// Numeric values attached to the `q` discrete states.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    values: Vec<f64>,
}

impl StateSpace {
    /// `q` evenly spaced values in `[-1, 1]`: `2S/(q-1) - 1`.
    pub fn spin(q: usize) -> Result<Self> {
        if q < 2 {
            return Err(Error::param("a state space needs at least two states"));
        }
        let d = (q - 1) as f64;
        Ok(StateSpace {
            values: (0..q).map(|s| 2.0 * s as f64 / d - 1.0).collect(),
        })
    }

    /// Pixel intensities `0, 1, ..., q-1`.
    pub fn intensity(q: usize) -> Result<Self> {
        if q < 2 {
            return Err(Error::param("a state space needs at least two states"));
        }
        Ok(StateSpace {
            values: (0..q).map(|s| s as f64).collect(),
        })
    }

    pub fn custom(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::param("a state space needs at least two states"));
        }
        if values.iter().any(|v| !v.is_finite()) || values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("state values must be finite and strictly increasing"));
        }
        Ok(StateSpace { values })
    }

    pub fn q(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, s: usize) -> f64 {
        self.values[s]
    }

    /// Index of the largest value, used to seed ordered starts.
    pub fn top(&self) -> usize {
        self.values.len() - 1
    }
}

type UnaryFn = dyn Fn(usize, f64) -> f64 + Send + Sync;

/// Single-site term `phi(S, h)`.
#[derive(Clone)]
pub enum UnaryPotential {
    /// `h * value(S)`
    LinearField,
    /// `-(value(S) - h)^2 / (2 variance)`
    GaussianLikelihood { variance: f64 },
    /// Arbitrary `phi(state_index, h)`.
    Custom(Arc<UnaryFn>),
}

impl UnaryPotential {
    pub fn custom(f: impl Fn(usize, f64) -> f64 + Send + Sync + 'static) -> Self {
        UnaryPotential::Custom(Arc::new(f))
    }

    pub fn eval(&self, states: &StateSpace, s: usize, h: f64) -> f64 {
        match self {
            UnaryPotential::LinearField => h * states.value(s),
            UnaryPotential::GaussianLikelihood { variance } => {
                let d = states.value(s) - h;
                -d * d / (2.0 * variance)
            }
            UnaryPotential::Custom(f) => f(s, h),
        }
    }

    fn validate(&self) -> Result<()> {
        if let UnaryPotential::GaussianLikelihood { variance } = self {
            if !(*variance > 0.0 && variance.is_finite()) {
                return Err(Error::param("likelihood variance must be positive"));
            }
        }
        Ok(())
    }

    /// Identity key for caching tabulations; `None` for closures.
    pub(crate) fn cache_key(&self) -> Option<(u8, u64)> {
        match self {
            UnaryPotential::LinearField => Some((0, 0)),
            UnaryPotential::GaussianLikelihood { variance } => Some((1, variance.to_bits())),
            UnaryPotential::Custom(_) => None,
        }
    }
}

impl fmt::Debug for UnaryPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UnaryPotential::LinearField => write!(f, "LinearField"),
            UnaryPotential::GaussianLikelihood { variance } => {
                write!(f, "GaussianLikelihood {{ variance: {variance} }}")
            }
            UnaryPotential::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Edge term `psi(S, S')`.
#[derive(Debug, Clone, PartialEq)]
pub enum PairPotential {
    /// `J_ij * value(S) * value(S')`, with `J_ij` from the coupling vector.
    Product,
    /// `-alpha * (value(S) - value(S'))^2 / 2`
    Quadratic { alpha: f64 },
    /// `-alpha * |value(S) - value(S')|`
    Absolute { alpha: f64 },
    /// Row-major `q x q` table, `psi(S, S') = table[S * q + S']`, oriented
    /// along the edge as stored in the graph.
    Table(Arc<[f64]>),
}

impl PairPotential {
    pub fn table(values: Vec<f64>) -> Self {
        PairPotential::Table(values.into())
    }

    pub fn eval(&self, states: &StateSpace, s: usize, t: usize, coupling: f64) -> f64 {
        let (a, b) = (states.value(s), states.value(t));
        match self {
            PairPotential::Product => coupling * a * b,
            PairPotential::Quadratic { alpha } => -alpha * (a - b) * (a - b) / 2.0,
            PairPotential::Absolute { alpha } => -alpha * (a - b).abs(),
            PairPotential::Table(table) => table[s * states.q() + t],
        }
    }

    fn validate(&self, q: usize) -> Result<()> {
        match self {
            PairPotential::Table(t) if t.len() != q * q => Err(Error::SizeMismatch {
                what: "pair table",
                got: t.len(),
                expected: q * q,
            }),
            PairPotential::Table(t) if t.iter().any(|v| !v.is_finite()) => {
                Err(Error::param("pair table entries must be finite"))
            }
            PairPotential::Quadratic { alpha } | PairPotential::Absolute { alpha }
                if !alpha.is_finite() =>
            {
                Err(Error::param("pair strength must be finite"))
            }
            _ => Ok(()),
        }
    }
}

/// Distribution `p_i(h)` of the random field on one vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FieldDistribution {
    Delta(f64),
    Gaussian { mean: f64, variance: f64 },
}

impl FieldDistribution {
    pub fn gaussian(mean: f64, variance: f64) -> Result<Self> {
        let d = FieldDistribution::Gaussian { mean, variance };
        d.validate()?;
        Ok(d)
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        match *self {
            FieldDistribution::Delta(h) => h,
            FieldDistribution::Gaussian { mean, variance } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + variance.sqrt() * z
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            FieldDistribution::Delta(h) => h,
            FieldDistribution::Gaussian { mean, .. } => mean,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            FieldDistribution::Delta(h) if !h.is_finite() => {
                Err(Error::param("delta field location must be finite"))
            }
            FieldDistribution::Gaussian { mean, variance }
                if !(mean.is_finite() && variance > 0.0 && variance.is_finite()) =>
            {
                Err(Error::param("gaussian field needs finite mean and positive variance"))
            }
            _ => Ok(()),
        }
    }

    pub(crate) fn cache_key(&self) -> (u8, u64, u64) {
        match *self {
            FieldDistribution::Delta(h) => (0, h.to_bits(), 0),
            FieldDistribution::Gaussian { mean, variance } => (1, mean.to_bits(), variance.to_bits()),
        }
    }
}

/// How the edge couplings `J_ij` are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InteractionEnsemble {
    Fixed(f64),
    Gaussian { mean: f64, variance: f64 },
}

impl InteractionEnsemble {
    pub fn is_fixed(&self) -> bool {
        matches!(self, InteractionEnsemble::Fixed(_))
    }

    fn validate(&self) -> Result<()> {
        match *self {
            InteractionEnsemble::Fixed(j) if !j.is_finite() => {
                Err(Error::param("coupling must be finite"))
            }
            InteractionEnsemble::Gaussian { mean, variance }
                if !(mean.is_finite() && variance >= 0.0 && variance.is_finite()) =>
            {
                Err(Error::param("coupling ensemble needs finite mean and non-negative variance"))
            }
            _ => Ok(()),
        }
    }
}

/// A value shared by every vertex (or edge), or one value per item.
#[derive(Debug, Clone)]
pub enum Assignment<T> {
    Uniform(T),
    PerItem(Vec<T>),
}

impl<T> Assignment<T> {
    pub fn get(&self, i: usize) -> &T {
        match self {
            Assignment::Uniform(t) => t,
            Assignment::PerItem(v) => &v[i],
        }
    }

    fn check_len(&self, what: &'static str, expected: usize) -> Result<()> {
        match self {
            Assignment::PerItem(v) if v.len() != expected => Err(Error::SizeMismatch {
                what,
                got: v.len(),
                expected,
            }),
            _ => Ok(()),
        }
    }

    fn items(&self) -> Box<dyn Iterator<Item = &T> + '_> {
        match self {
            Assignment::Uniform(t) => Box::new(std::iter::once(t)),
            Assignment::PerItem(v) => Box::new(v.iter()),
        }
    }
}

impl<T> From<T> for Assignment<T> {
    fn from(t: T) -> Self {
        Assignment::Uniform(t)
    }
}

/// A pairwise MRF on a graph, immutable once built.
#[derive(Debug, Clone)]
pub struct MrfModel {
    graph: Arc<Graph>,
    states: StateSpace,
    unary: Assignment<UnaryPotential>,
    pair: Assignment<PairPotential>,
    beta: f64,
    fields: Assignment<FieldDistribution>,
}

impl MrfModel {
    /// Starts a builder with `beta = 1`, linear fields, product couplings and
    /// fields fixed at zero.
    pub fn builder(graph: impl Into<Arc<Graph>>, states: StateSpace) -> MrfModelBuilder {
        MrfModelBuilder {
            model: MrfModel {
                graph: graph.into(),
                states,
                unary: UnaryPotential::LinearField.into(),
                pair: PairPotential::Product.into(),
                beta: 1.0,
                fields: FieldDistribution::Delta(0.0).into(),
            },
        }
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn shared_graph(&self) -> Arc<Graph> {
        Arc::clone(&self.graph)
    }

    pub fn states(&self) -> &StateSpace {
        &self.states
    }

    pub fn q(&self) -> usize {
        self.states.q()
    }

    pub fn n_vertices(&self) -> usize {
        self.graph.n_vertices()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn unary(&self, i: usize) -> &UnaryPotential {
        self.unary.get(i)
    }

    pub fn pair(&self, e: usize) -> &PairPotential {
        self.pair.get(e)
    }

    pub fn field_distribution(&self, i: usize) -> &FieldDistribution {
        self.fields.get(i)
    }

    pub fn unary_assignment(&self) -> &Assignment<UnaryPotential> {
        &self.unary
    }

    pub fn pair_assignment(&self) -> &Assignment<PairPotential> {
        &self.pair
    }

    pub fn field_assignment(&self) -> &Assignment<FieldDistribution> {
        &self.fields
    }

    /// Same model with different field distributions.
    pub fn with_fields(&self, fields: impl Into<Assignment<FieldDistribution>>) -> Result<Self> {
        let mut m = self.clone();
        m.fields = fields.into();
        m.validate()?;
        Ok(m)
    }

    /// Same model with different pair potentials.
    pub fn with_pair(&self, pair: impl Into<Assignment<PairPotential>>) -> Result<Self> {
        let mut m = self.clone();
        m.pair = pair.into();
        m.validate()?;
        Ok(m)
    }

    /// Same model with different unary potentials.
    pub fn with_unary(&self, unary: impl Into<Assignment<UnaryPotential>>) -> Result<Self> {
        let mut m = self.clone();
        m.unary = unary.into();
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::param("inverse temperature must be positive"));
        }
        let n = self.graph.n_vertices();
        let m = self.graph.n_edges();
        self.unary.check_len("unary potentials", n)?;
        self.pair.check_len("pair potentials", m)?;
        self.fields.check_len("field distributions", n)?;
        for u in self.unary.items() {
            u.validate()?;
        }
        for p in self.pair.items() {
            p.validate(self.q())?;
        }
        for f in self.fields.items() {
            f.validate()?;
        }
        Ok(())
    }

    pub(crate) fn check_fields(&self, fields: &[f64]) -> Result<()> {
        if fields.len() != self.n_vertices() {
            return Err(Error::SizeMismatch {
                what: "field vector",
                got: fields.len(),
                expected: self.n_vertices(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_couplings(&self, couplings: &[f64]) -> Result<()> {
        if couplings.len() != self.graph.n_edges() {
            return Err(Error::SizeMismatch {
                what: "coupling vector",
                got: couplings.len(),
                expected: self.graph.n_edges(),
            });
        }
        Ok(())
    }

    /// `beta * phi_i(S, h)` for every state, written into `out`.
    pub(crate) fn beta_unary(&self, i: usize, h: f64, out: &mut [f64]) {
        let u = self.unary.get(i);
        for (s, o) in out.iter_mut().enumerate() {
            *o = self.beta * u.eval(&self.states, s, h);
        }
    }
}

pub struct MrfModelBuilder {
    model: MrfModel,
}

impl MrfModelBuilder {
    pub fn beta(mut self, beta: f64) -> Self {
        self.model.beta = beta;
        self
    }

    pub fn unary(mut self, unary: impl Into<Assignment<UnaryPotential>>) -> Self {
        self.model.unary = unary.into();
        self
    }

    pub fn pair(mut self, pair: impl Into<Assignment<PairPotential>>) -> Self {
        self.model.pair = pair.into();
        self
    }

    pub fn fields(mut self, fields: impl Into<Assignment<FieldDistribution>>) -> Self {
        self.model.fields = fields.into();
        self
    }

    pub fn build(self) -> Result<MrfModel> {
        self.model.validate()?;
        Ok(self.model)
    }
}

/// Draws one field realization, `h_i ~ p_i` independently.
pub fn sample_fields(model: &MrfModel, seed: u64) -> Vec<f64> {
    sample_fields_with(model, &mut rng::stream(seed, Domain::Fields, 0))
}

pub fn sample_fields_with(model: &MrfModel, rng: &mut Rng) -> Vec<f64> {
    (0..model.n_vertices())
        .map(|i| model.field_distribution(i).sample(rng))
        .collect()
}

/// Draws one coupling vector, one `J_ij` per edge.
pub fn sample_interactions(ensemble: &InteractionEnsemble, graph: &Graph, seed: u64) -> Result<Vec<f64>> {
    sample_interactions_with(ensemble, graph, &mut rng::stream(seed, Domain::Couplings, 0))
}

pub fn sample_interactions_with(
    ensemble: &InteractionEnsemble,
    graph: &Graph,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    ensemble.validate()?;
    Ok(match *ensemble {
        InteractionEnsemble::Fixed(j) => vec![j; graph.n_edges()],
        InteractionEnsemble::Gaussian { mean, variance } => {
            let sd = variance.sqrt();
            (0..graph.n_edges())
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    mean + sd * z
                })
                .collect()
        }
    })
}

/// Per-edge `beta * psi` and `exp(beta * psi)` tables, deduplicated.
///
/// Table `k` occupies `q * q` consecutive entries, row index is the state of
/// the edge's first endpoint.
#[derive(Debug, Clone)]
pub struct PairTables {
    q: usize,
    log: Vec<f64>,
    exp: Vec<f64>,
    edge_table: Vec<usize>,
}

impl PairTables {
    pub fn new(model: &MrfModel, couplings: &[f64]) -> Result<Self> {
        model.check_couplings(couplings)?;
        let q = model.q();
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut log = Vec::new();
        let mut edge_table = Vec::with_capacity(couplings.len());
        let mut scratch = vec![0.0; q * q];
        for (e, &j) in couplings.iter().enumerate() {
            let p = model.pair(e);
            for s in 0..q {
                for t in 0..q {
                    scratch[s * q + t] = model.beta() * p.eval(model.states(), s, t, j);
                }
            }
            let key: Vec<u64> = scratch.iter().map(|v| v.to_bits()).collect();
            let next = index.len();
            let k = *index.entry(key).or_insert_with(|| {
                log.extend_from_slice(&scratch);
                next
            });
            edge_table.push(k);
        }
        let exp = log.iter().map(|v| v.exp()).collect();
        Ok(PairTables {
            q,
            log,
            exp,
            edge_table,
        })
    }

    pub fn n_distinct(&self) -> usize {
        if self.q == 0 {
            0
        } else {
            self.log.len() / (self.q * self.q)
        }
    }

    /// `beta * psi_e` as a row-major `q x q` slice.
    pub fn log_table(&self, e: usize) -> &[f64] {
        let k = self.edge_table[e];
        &self.log[k * self.q * self.q..(k + 1) * self.q * self.q]
    }

    pub fn exp_table(&self, e: usize) -> &[f64] {
        let k = self.edge_table[e];
        &self.exp[k * self.q * self.q..(k + 1) * self.q * self.q]
    }

    /// `out[t] = sum_s weights[s] * exp(beta psi)`, summing over the state of
    /// the sending vertex. `sender_first` says whether the sender is the
    /// edge's first endpoint.
    #[inline]
    pub(crate) fn propagate(&self, e: usize, sender_first: bool, weights: &[f64], out: &mut [f64]) {
        let q = self.q;
        let table = self.exp_table(e);
        out.iter_mut().for_each(|o| *o = 0.0);
        if sender_first {
            for (s, &w) in weights.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let row = &table[s * q..(s + 1) * q];
                for (o, &x) in out.iter_mut().zip(row) {
                    *o += w * x;
                }
            }
        } else {
            for (t, o) in out.iter_mut().enumerate() {
                let row = &table[t * q..(t + 1) * q];
                *o = row.iter().zip(weights).map(|(x, w)| x * w).sum();
            }
        }
    }

    /// Log-domain counterpart of [`PairTables::propagate`]: `out[t] =
    /// log sum_s exp(log_weights[s] + beta psi)`.
    pub(crate) fn propagate_log(&self, e: usize, sender_first: bool, log_weights: &[f64], out: &mut [f64]) {
        let q = self.q;
        let table = self.log_table(e);
        for (t, o) in out.iter_mut().enumerate() {
            let term = |s: usize| {
                let lp = if sender_first { table[s * q + t] } else { table[t * q + s] };
                log_weights[s] + lp
            };
            let max = (0..q).map(term).fold(f64::NEG_INFINITY, f64::max);
            *o = if max == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                max + (0..q).map(|s| (term(s) - max).exp()).sum::<f64>().ln()
            };
        }
    }
}
