//! Monte Carlo disorder averages of LBP results, and the matching average of
//! RLBP over coupling realizations.
//!
//! Realizations draw from counter-based streams of one master seed, so the
//! results do not depend on the number of worker threads.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lbp::{magnetization, LbpOptions, LbpSolver};
use crate::model::{sample_fields_with, sample_interactions_with, InteractionEnsemble, MrfModel};
use crate::rlbp::{RlbpOptions, RlbpSolver};
use crate::rng::{self, Domain};

/// Sample mean with its spread; `std_dev` uses the `n - 1` normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuenchStats {
    pub mean: f64,
    pub std_dev: f64,
    pub std_error: f64,
    pub n_samples: usize,
    /// Realizations dropped because the solver did not converge.
    pub n_excluded: usize,
}

impl QuenchStats {
    pub fn from_samples(values: &[f64], n_excluded: usize) -> Self {
        let n = values.len();
        if n == 0 {
            return QuenchStats {
                mean: f64::NAN,
                std_dev: f64::NAN,
                std_error: f64::NAN,
                n_samples: 0,
                n_excluded,
            };
        }
        let mean = pairwise_sum(values) / n as f64;
        let squares: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        let std_dev = if n > 1 {
            (pairwise_sum(&squares) / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        QuenchStats {
            mean,
            std_dev,
            std_error: std_dev / (n as f64).sqrt(),
            n_samples: n,
            n_excluded,
        }
    }
}

/// Per-variable free energy and magnetization statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuenchedAverage {
    pub free_energy: QuenchStats,
    pub magnetization: QuenchStats,
}

impl QuenchedAverage {
    fn from_pairs(samples: &[Option<(f64, f64)>]) -> Result<Self> {
        let kept: Vec<(f64, f64)> = samples.iter().flatten().copied().collect();
        let excluded = samples.len() - kept.len();
        if kept.is_empty() {
            return Err(Error::AllSamplesFailed(samples.len()));
        }
        let f: Vec<f64> = kept.iter().map(|p| p.0).collect();
        let m: Vec<f64> = kept.iter().map(|p| p.1).collect();
        Ok(QuenchedAverage {
            free_energy: QuenchStats::from_samples(&f, excluded),
            magnetization: QuenchStats::from_samples(&m, excluded),
        })
    }
}

/// Summation by recursive halving, in index order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 8 {
        return values.iter().sum();
    }
    let (a, b) = values.split_at(values.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Couplings for realization `c`.
pub fn coupling_realization(
    ensemble: &InteractionEnsemble,
    model: &MrfModel,
    seed: u64,
    c: usize,
) -> Result<Vec<f64>> {
    let mut r = rng::stream(seed, Domain::Couplings, c as u64);
    sample_interactions_with(ensemble, model.graph(), &mut r)
}

fn check_counts(ensemble: &InteractionEnsemble, n_field: usize, n_coupling: usize) -> Result<()> {
    if n_field == 0 || n_coupling == 0 {
        return Err(Error::param("sample counts must be positive"));
    }
    if ensemble.is_fixed() && n_coupling != 1 {
        return Err(Error::param("fixed couplings take exactly one coupling realization"));
    }
    Ok(())
}

/// Averages `F_bethe / n` and the LBP magnetization over field realizations
/// drawn from the model's field distributions and, for a random ensemble,
/// over coupling realizations. Non-converged runs are excluded and counted.
pub fn mc_quenched_average(
    model: &MrfModel,
    ensemble: &InteractionEnsemble,
    n_field_samples: usize,
    n_coupling_samples: usize,
    seed: u64,
    options: &LbpOptions,
) -> Result<QuenchedAverage> {
    check_counts(ensemble, n_field_samples, n_coupling_samples)?;
    let n = model.n_vertices() as f64;
    let mut samples = Vec::with_capacity(n_field_samples * n_coupling_samples);
    for c in 0..n_coupling_samples {
        let couplings = coupling_realization(ensemble, model, seed, c)?;
        let solver = LbpSolver::new(model, &couplings)?;
        let batch: Vec<Result<Option<(f64, f64)>>> = (0..n_field_samples)
            .into_par_iter()
            .map(|k| {
                let index = (c * n_field_samples + k) as u64;
                let fields = sample_fields_with(model, &mut rng::stream(seed, Domain::Fields, index));
                let out = solver.run(&fields, options)?;
                Ok(out.report.converged.then(|| {
                    (
                        out.report.bethe_free_energy / n,
                        magnetization(&out.beliefs, model.states()),
                    )
                }))
            })
            .collect();
        for s in batch {
            samples.push(s?);
        }
    }
    QuenchedAverage::from_pairs(&samples)
}

/// RLBP free energy per variable and magnetization averaged over the same
/// coupling realizations [`mc_quenched_average`] uses for `seed`.
pub fn rlbp_coupling_average(
    model: &MrfModel,
    ensemble: &InteractionEnsemble,
    n_coupling_samples: usize,
    seed: u64,
    options: &RlbpOptions,
) -> Result<QuenchedAverage> {
    check_counts(ensemble, 1, n_coupling_samples)?;
    let n = model.n_vertices() as f64;
    let samples: Vec<Result<Option<(f64, f64)>>> = (0..n_coupling_samples)
        .into_par_iter()
        .map(|c| {
            let couplings = coupling_realization(ensemble, model, seed, c)?;
            let out = RlbpSolver::new(model, &couplings, options.n_nodes)?.run(options)?;
            Ok(out.report.converged.then(|| {
                (
                    out.report.quenched_free_energy / n,
                    out.report.quenched_magnetization,
                )
            }))
        })
        .collect();
    let samples: Vec<Option<(f64, f64)>> = samples.into_iter().collect::<Result<_>>()?;
    QuenchedAverage::from_pairs(&samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{square_lattice, Boundary, Graph};
    use crate::model::{FieldDistribution, StateSpace};
    use approx::assert_abs_diff_eq;

    #[test]
    fn stats_of_known_sample() {
        let s = QuenchStats::from_samples(&[1.0, 2.0, 3.0, 4.0], 2);
        assert_abs_diff_eq!(s.mean, 2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s.std_dev, (5.0f64 / 3.0).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(s.std_error, s.std_dev / 2.0, epsilon = 1e-15);
        assert_eq!((s.n_samples, s.n_excluded), (4, 2));
        assert_eq!(QuenchStats::from_samples(&[3.0], 0).std_dev, 0.0);
    }

    #[test]
    fn pairwise_sum_is_exact_on_integers() {
        let v: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 500_500.0);
    }

    #[test]
    fn delta_fields_have_no_spread() {
        let g = square_lattice(3, 3, Boundary::Free).unwrap();
        let m = MrfModel::builder(g, StateSpace::spin(2).unwrap())
            .fields(FieldDistribution::Delta(0.3))
            .build()
            .unwrap();
        let avg = mc_quenched_average(&m, &InteractionEnsemble::Fixed(0.2), 5, 1, 1, &LbpOptions::default()).unwrap();
        assert_eq!(avg.free_energy.std_dev, 0.0);
        let single = crate::lbp::run_lbp(&m, &[0.3; 9], &[0.2; 12], &LbpOptions::default()).unwrap();
        assert_abs_diff_eq!(avg.free_energy.mean, single.report.bethe_free_energy / 9.0, epsilon = 1e-14);
    }

    #[test]
    fn reproducible() {
        let g = square_lattice(3, 3, Boundary::Free).unwrap();
        let m = MrfModel::builder(g, StateSpace::spin(3).unwrap())
            .fields(FieldDistribution::gaussian(0.0, 1.0).unwrap())
            .build()
            .unwrap();
        let ens = InteractionEnsemble::Gaussian {
            mean: 0.1,
            variance: 0.04,
        };
        let a = mc_quenched_average(&m, &ens, 7, 3, 42, &LbpOptions::default()).unwrap();
        let b = mc_quenched_average(&m, &ens, 7, 3, 42, &LbpOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.free_energy.n_samples + a.free_energy.n_excluded, 21);
    }

    #[test]
    fn fixed_ensemble_rejects_coupling_resampling() {
        let m = MrfModel::builder(Graph::empty(2), StateSpace::spin(2).unwrap()).build().unwrap();
        assert!(mc_quenched_average(&m, &InteractionEnsemble::Fixed(0.0), 3, 2, 0, &LbpOptions::default()).is_err());
    }

    #[test]
    fn all_failures_are_reported() {
        let g = square_lattice(3, 3, Boundary::Periodic).unwrap();
        let m = MrfModel::builder(g, StateSpace::spin(2).unwrap())
            .fields(FieldDistribution::Delta(0.3))
            .build()
            .unwrap();
        let opts = LbpOptions {
            max_iter: 1,
            ..LbpOptions::default()
        };
        let err = mc_quenched_average(&m, &InteractionEnsemble::Fixed(0.5), 3, 1, 0, &opts).unwrap_err();
        assert!(matches!(err, Error::AllSamplesFailed(3)));
    }
}
