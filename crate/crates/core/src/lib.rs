//! Belief propagation, its replica-averaged (quenched) extension, and exact
//! and Monte Carlo references for pairwise Markov random fields with random
//! fields and couplings.

pub mod error;
pub mod exact;
pub mod graph;
pub mod lbp;
pub mod meanfield;
pub mod model;
pub mod quadrature;
pub mod restore;
pub mod rlbp;
pub mod rng;
pub mod quench;

pub use error::{Error, Result};
pub use graph::{Boundary, Graph};
pub use model::{FieldDistribution, InteractionEnsemble, MrfModel, PairPotential, StateSpace, UnaryPotential};
