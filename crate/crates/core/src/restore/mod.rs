//! Bayesian image restoration with a pairwise smoothness prior and
//! Gaussian noise, and the RLBP estimate of its average error.
//!
//! The posterior for one channel is the lattice MRF with
//! `phi_i(S, h) = -(S - h_i)^2 / (2 sigma^2)`, `psi = alpha xi(S, S')` and
//! `beta = 1`. Channels are restored independently.

pub mod pnm;

use rayon::prelude::*;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::graph::{square_lattice, Boundary};
use crate::lbp::{LbpOptions, LbpSolver};
use crate::model::{Assignment, FieldDistribution, MrfModel, PairPotential, StateSpace, UnaryPotential};
use crate::quench::QuenchStats;
use crate::rlbp::{RlbpOptions, RlbpSolver};
use crate::rng::{self, Domain, Rng};
use rand_distr::{Distribution, StandardNormal};

/// Integer image with `channels` planes of `width * height` row-major pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    q: usize,
    data: Vec<u16>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, q: usize, data: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::DimensionTooSmall { width, height });
        }
        if channels != 1 && channels != 3 {
            return Err(Error::param("images have 1 or 3 channels"));
        }
        if !(2..=u16::MAX as usize).contains(&q) {
            return Err(Error::param("q must be at least 2"));
        }
        if data.len() != width * height * channels {
            return Err(Error::SizeMismatch {
                what: "image data",
                got: data.len(),
                expected: width * height * channels,
            });
        }
        if data.iter().any(|&v| v as usize >= q) {
            return Err(Error::param("intensity out of range"));
        }
        Ok(Image {
            width,
            height,
            channels,
            q,
            data,
        })
    }

    pub fn constant(width: usize, height: usize, channels: usize, q: usize, level: u16) -> Result<Self> {
        Image::new(width, height, channels, q, vec![level; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn plane(&self, c: usize) -> &[u16] {
        let n = self.n_pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, x: usize, y: usize) -> u16 {
        self.data[c * self.n_pixels() + y * self.width + x]
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }
}

/// Real-valued observation `h = I + noise`, laid out like [`Image`].
#[derive(Debug, Clone, PartialEq)]
pub struct DegradedImage {
    width: usize,
    height: usize,
    channels: usize,
    values: Vec<f64>,
}

impl DegradedImage {
    pub fn new(width: usize, height: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height * channels {
            return Err(Error::SizeMismatch {
                what: "degraded image data",
                got: values.len(),
                expected: width * height * channels,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("degraded values must be finite"));
        }
        Ok(DegradedImage {
            width,
            height,
            channels,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.values[c * n..(c + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Shape of the smoothness term `xi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorKind {
    /// `-(S - S')^2 / 2`
    Quadratic,
    /// `-|S - S'|`
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RestoreParams {
    pub alpha: f64,
    /// Noise variance, assumed known to the restoration.
    pub variance: f64,
    pub prior: PriorKind,
    pub q: usize,
}

impl RestoreParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::param("alpha must be non-negative"));
        }
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(Error::param("noise variance must be positive"));
        }
        if self.q < 2 {
            return Err(Error::param("q must be at least 2"));
        }
        Ok(())
    }

    fn pair(&self) -> PairPotential {
        match self.prior {
            PriorKind::Quadratic => PairPotential::Quadratic { alpha: self.alpha },
            PriorKind::Absolute => PairPotential::Absolute { alpha: self.alpha },
        }
    }
}

/// Posterior MRF for one `width x height` channel.
pub fn posterior_model(
    width: usize,
    height: usize,
    params: &RestoreParams,
    fields: impl Into<Assignment<FieldDistribution>>,
) -> Result<MrfModel> {
    params.validate()?;
    MrfModel::builder(square_lattice(width, height, Boundary::Free)?, StateSpace::intensity(params.q)?)
        .beta(1.0)
        .unary(UnaryPotential::GaussianLikelihood {
            variance: params.variance,
        })
        .pair(params.pair())
        .fields(fields)
        .build()
}

pub fn degrade(image: &Image, variance: f64, seed: u64) -> Result<DegradedImage> {
    degrade_with(image, variance, &mut rng::stream(seed, Domain::Noise, 0))
}

/// Adds i.i.d. `N(0, variance)` noise to every pixel of every channel.
pub fn degrade_with(image: &Image, variance: f64, rng: &mut Rng) -> Result<DegradedImage> {
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(Error::param("noise variance must be positive"));
    }
    let sd = variance.sqrt();
    let values = image
        .data
        .iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(rng);
            v as f64 + sd * z
        })
        .collect();
    DegradedImage::new(image.width, image.height, image.channels, values)
}

#[derive(Debug, Clone)]
pub struct Restoration {
    pub image: Image,
    /// False if LBP failed to converge on any channel.
    pub converged: bool,
}

/// MPM estimate: per-pixel argmax of the LBP beliefs.
pub fn restore_mpm(degraded: &DegradedImage, params: &RestoreParams, options: &LbpOptions) -> Result<Restoration> {
    let model = posterior_model(degraded.width, degraded.height, params, FieldDistribution::Delta(0.0))?;
    let couplings = vec![0.0; model.graph().n_edges()];
    let solver = LbpSolver::new(&model, &couplings)?;
    restore_with(&solver, degraded, params.q, options)
}

fn restore_with(solver: &LbpSolver, degraded: &DegradedImage, q: usize, options: &LbpOptions) -> Result<Restoration> {
    let mut data = Vec::with_capacity(degraded.values.len());
    let mut converged = true;
    for c in 0..degraded.channels {
        let out = solver.run(degraded.plane(c), options)?;
        converged &= out.report.converged;
        data.extend((0..degraded.width * degraded.height).map(|i| out.beliefs.argmax(i) as u16));
    }
    Ok(Restoration {
        image: Image::new(degraded.width, degraded.height, degraded.channels, q, data)?,
        converged,
    })
}

fn check_same_shape(a: &Image, w: usize, h: usize, c: usize) -> Result<()> {
    if (a.width, a.height, a.channels) != (w, h, c) {
        return Err(Error::SizeMismatch {
            what: "image dimensions",
            got: w * h * c,
            expected: a.width * a.height * a.channels,
        });
    }
    Ok(())
}

/// Mean squared difference per pixel, averaged over channels.
pub fn mse(original: &Image, restored: &Image) -> Result<f64> {
    check_same_shape(original, restored.width, restored.height, restored.channels)?;
    let n = original.n_pixels() as f64;
    let total: f64 = (0..original.channels)
        .map(|c| {
            original
                .plane(c)
                .iter()
                .zip(restored.plane(c))
                .map(|(&a, &b)| {
                    let d = a as f64 - b as f64;
                    d * d
                })
                .sum::<f64>()
                / n
        })
        .sum();
    Ok(total / original.channels as f64)
}

/// MSE of the degrade-and-restore pipeline over `n_samples` noise
/// realizations. Samples where LBP did not converge are excluded.
pub fn mse_mc_average(
    original: &Image,
    params: &RestoreParams,
    n_samples: usize,
    seed: u64,
    options: &LbpOptions,
) -> Result<QuenchStats> {
    if n_samples == 0 {
        return Err(Error::param("need at least one sample"));
    }
    if original.q != params.q {
        return Err(Error::param("image q differs from restoration q"));
    }
    let model = posterior_model(original.width, original.height, params, FieldDistribution::Delta(0.0))?;
    let couplings = vec![0.0; model.graph().n_edges()];
    let solver = LbpSolver::new(&model, &couplings)?;
    let samples: Vec<Result<Option<f64>>> = (0..n_samples)
        .into_par_iter()
        .map(|k| {
            let degraded = degrade_with(original, params.variance, &mut rng::stream(seed, Domain::Noise, k as u64))?;
            let r = restore_with(&solver, &degraded, params.q, options)?;
            Ok(if r.converged { Some(mse(original, &r.image)?) } else { None })
        })
        .collect();
    let samples: Vec<Option<f64>> = samples.into_iter().collect::<Result<_>>()?;
    let kept: Vec<f64> = samples.iter().flatten().copied().collect();
    if kept.is_empty() {
        return Err(Error::AllSamplesFailed(n_samples));
    }
    Ok(QuenchStats::from_samples(&kept, n_samples - kept.len()))
}

/// Upper envelope of the scores `-(v_S - h)^2 / (2 variance) + lambda_S` as
/// a function of `h`: the winning states in increasing order of `h` and the
/// `h` values where the winner changes.
pub fn response_intervals(values: &[f64], variance: f64, lambda: &[f64]) -> (Vec<usize>, Vec<f64>) {
    // dropping the common -h^2 / (2 variance) leaves lines in h whose slopes
    // increase with the state value
    let line = |s: usize| (values[s] / variance, lambda[s] - values[s] * values[s] / (2.0 * variance));
    let cross = |a: usize, b: usize| {
        let (sa, ia) = line(a);
        let (sb, ib) = line(b);
        (ia - ib) / (sb - sa)
    };
    let mut hull: Vec<usize> = Vec::with_capacity(values.len());
    for s in 0..values.len() {
        while hull.len() >= 2 {
            let (prev, last) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            // `last` never wins if `s` overtakes `prev` no later than `last` does
            if cross(prev, s) <= cross(prev, last) {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(s);
    }
    let breaks = hull.windows(2).map(|w| cross(w[0], w[1])).collect();
    (hull, breaks)
}

/// `argmax_S` of the same scores at one `h`; ties go to the smallest state.
pub fn response(values: &[f64], variance: f64, lambda: &[f64], h: f64) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (s, (&v, &l)) in values.iter().zip(lambda).enumerate() {
        let score = -(v - h) * (v - h) / (2.0 * variance) + l;
        if score > best_score {
            best = s;
            best_score = score;
        }
    }
    best
}

/// `P(a < h < b)` for `h ~ N(mean, variance)`, accurate in both tails.
fn gaussian_interval(mean: f64, variance: f64, a: f64, b: f64) -> f64 {
    let sd = (2.0 * variance).sqrt();
    let upper = |x: f64| -> f64 {
        // P(h > x)
        if x == f64::INFINITY {
            0.0
        } else if x == f64::NEG_INFINITY {
            1.0
        } else {
            0.5 * erfc((x - mean) / sd)
        }
    };
    let lower = |x: f64| -> f64 {
        // P(h < x)
        if x == f64::INFINITY {
            1.0
        } else if x == f64::NEG_INFINITY {
            0.0
        } else {
            0.5 * erfc((mean - x) / sd)
        }
    };
    if a >= mean {
        (upper(a) - upper(b)).max(0.0)
    } else {
        (lower(b) - lower(a)).max(0.0)
    }
}

/// `E[(truth - v_{r(h)})^2]` for `h ~ N(truth, variance)` where `r` is the
/// argmax response to `lambda`.
pub fn expected_response_error(values: &[f64], variance: f64, lambda: &[f64], truth: f64) -> f64 {
    let (states, breaks) = response_intervals(values, variance, lambda);
    let mut total = 0.0;
    for (k, &s) in states.iter().enumerate() {
        let a = if k == 0 { f64::NEG_INFINITY } else { breaks[k - 1] };
        let b = if k == breaks.len() { f64::INFINITY } else { breaks[k] };
        let d = truth - values[s];
        if d != 0.0 {
            total += d * d * gaussian_interval(truth, variance, a, b);
        }
    }
    total
}

/// RLBP estimate of the average restoration MSE, with the field on pixel `i`
/// distributed as `N(I_i, variance)`.
pub fn dav_analytic(original: &Image, params: &RestoreParams, options: &RlbpOptions) -> Result<f64> {
    if original.q != params.q {
        return Err(Error::param("image q differs from restoration q"));
    }
    let values: Vec<f64> = (0..params.q).map(|s| s as f64).collect();
    let n = original.n_pixels();
    let mut total = 0.0;
    for c in 0..original.channels {
        let plane = original.plane(c);
        let fields: Vec<FieldDistribution> = plane
            .iter()
            .map(|&v| FieldDistribution::gaussian(v as f64, params.variance))
            .collect::<Result<_>>()?;
        let model = posterior_model(original.width, original.height, params, Assignment::PerItem(fields))?;
        let couplings = vec![0.0; model.graph().n_edges()];
        let out = RlbpSolver::new(&model, &couplings, options.n_nodes)?.run(options)?;
        if !out.report.converged {
            return Err(Error::NotConverged {
                iterations: out.report.iterations,
                residual: out.report.residual,
            });
        }
        let sum: f64 = (0..n)
            .map(|i| expected_response_error(&values, params.variance, out.state.lambda(i), plane[i] as f64))
            .sum();
        total += sum / n as f64;
    }
    Ok(total / original.channels as f64)
}

/// `E[(I - round(h))^2]` for `h ~ N(I, variance)` with rounding to the
/// nearest level in `0..q`: the average error of the pipeline without a
/// prior.
pub fn rounding_error(original: &Image, variance: f64) -> f64 {
    let q = original.q;
    let sd = (2.0 * variance).sqrt();
    let cdf = |x: f64, mean: f64| 0.5 * erfc((mean - x) / sd);
    let per_level: Vec<f64> = (0..q)
        .map(|i| {
            (0..q)
                .map(|k| {
                    let lo = if k == 0 { 0.0 } else { cdf(k as f64 - 0.5, i as f64) };
                    let hi = if k == q - 1 { 1.0 } else { cdf(k as f64 + 0.5, i as f64) };
                    let d = i as f64 - k as f64;
                    d * d * (hi - lo)
                })
                .sum()
        })
        .collect();
    let n = original.n_pixels() as f64;
    (0..original.channels)
        .map(|c| original.plane(c).iter().map(|&v| per_level[v as usize]).sum::<f64>() / n)
        .sum::<f64>()
        / original.channels as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_tone(w: usize, h: usize, q: usize) -> Image {
        let data = (0..w * h).map(|i| if (i % w) < w / 2 { 1 } else { (q - 2) as u16 }).collect();
        Image::new(w, h, 1, q, data).unwrap()
    }

    fn params(alpha: f64, variance: f64, prior: PriorKind) -> RestoreParams {
        RestoreParams {
            alpha,
            variance,
            prior,
            q: 8,
        }
    }

    #[test]
    fn image_validation() {
        assert!(Image::new(2, 2, 1, 8, vec![0, 1, 2, 8]).is_err());
        assert!(Image::new(2, 2, 2, 8, vec![0; 8]).is_err());
        assert!(Image::new(2, 2, 1, 8, vec![0; 3]).is_err());
    }

    #[test]
    fn tiny_noise_is_negligible() {
        let img = two_tone(8, 8, 8);
        let d = degrade(&img, 1e-12, 3).unwrap();
        for (h, &i) in d.values().iter().zip(img.data()) {
            assert!((h - i as f64).abs() < 1e-4);
        }
        assert_eq!(d, degrade(&img, 1e-12, 3).unwrap());
    }

    #[test]
    fn noise_variance() {
        let img = Image::constant(400, 250, 1, 8, 3).unwrap();
        let d = degrade(&img, 0.25, 9).unwrap();
        let n = d.values().len() as f64;
        let var = d.values().iter().map(|h| (h - 3.0).powi(2)).sum::<f64>() / n;
        assert!((var - 0.25).abs() < 0.02 * 0.25, "{var}");
    }

    #[test]
    fn no_prior_rounds_to_nearest() {
        let mut values = Vec::new();
        for k in 0..64 {
            values.push(-1.0 + k as f64 * 0.137);
        }
        let d = DegradedImage::new(8, 8, 1, values.clone()).unwrap();
        let r = restore_mpm(&d, &params(0.0, 0.5, PriorKind::Quadratic), &LbpOptions::default()).unwrap();
        for (k, &h) in values.iter().enumerate() {
            let nearest = h.round().clamp(0.0, 7.0) as u16;
            assert_eq!(r.image.data()[k], nearest, "h = {h}");
        }
    }

    #[test]
    fn constant_image_survives() {
        let img = Image::constant(8, 8, 1, 8, 5).unwrap();
        let d = degrade(&img, 0.01, 1).unwrap();
        let r = restore_mpm(&d, &params(0.4, 0.01, PriorKind::Quadratic), &LbpOptions::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.image, img);
    }

    #[test]
    fn restoration_beats_rounding() {
        let img = two_tone(8, 8, 8);
        let p = params(0.4, 0.25, PriorKind::Quadratic);
        let d = degrade(&img, p.variance, 5).unwrap();
        let r = restore_mpm(&d, &p, &LbpOptions::default()).unwrap();
        let rounded: Vec<u16> = d.values().iter().map(|h| h.round().clamp(0.0, 7.0) as u16).collect();
        let rounded = Image::new(8, 8, 1, 8, rounded).unwrap();
        assert!(mse(&img, &r.image).unwrap() <= mse(&img, &rounded).unwrap());
    }

    #[test]
    fn mse_basics() {
        let a = Image::constant(4, 4, 3, 8, 2).unwrap();
        let b = Image::constant(4, 4, 3, 8, 3).unwrap();
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mse(&a, &b).unwrap(), 1.0);
        assert!(mse(&a, &Image::constant(4, 4, 1, 8, 2).unwrap()).is_err());
    }

    #[test]
    fn envelope_matches_pointwise_argmax() {
        let values: Vec<f64> = (0..8).map(|s| s as f64).collect();
        let lambda = [0.3, -1.2, 0.8, 0.0, 2.5, -0.4, 0.1, 0.6];
        let var = 0.3;
        let (states, breaks) = response_intervals(&values, var, &lambda);
        assert!(breaks.windows(2).all(|w| w[0] < w[1]));
        for k in 0..4000 {
            let h = -4.0 + k as f64 * 0.003_1;
            let idx = breaks.partition_point(|&b| b < h);
            if breaks.iter().any(|&b| (b - h).abs() < 1e-9) {
                continue;
            }
            assert_eq!(states[idx], response(&values, var, &lambda, h), "h = {h}");
        }
    }

    #[test]
    fn shifted_multipliers_keep_the_response() {
        let values: Vec<f64> = (0..5).map(|s| s as f64).collect();
        let lambda = [0.1, 0.5, -0.2, 0.0, 0.3];
        let shifted: Vec<f64> = lambda.iter().map(|l| l + 7.25).collect();
        for k in 0..200 {
            let h = -2.0 + k as f64 * 0.04;
            assert_eq!(response(&values, 0.5, &lambda, h), response(&values, 0.5, &shifted, h));
        }
    }

    #[test]
    fn expected_error_against_quadrature() {
        let values: Vec<f64> = (0..8).map(|s| s as f64).collect();
        let lambda = [0.0, 0.4, -0.3, 0.2, 0.9, 0.1, -0.5, 0.3];
        let (var, truth): (f64, f64) = (0.49, 3.0);
        // midpoint rule over +-12 sd
        let sd = var.sqrt();
        let steps = 4_000_000;
        let (a, b) = (truth - 12.0 * sd, truth + 12.0 * sd);
        let dh = (b - a) / steps as f64;
        let mut num = 0.0;
        for k in 0..steps {
            let h = a + (k as f64 + 0.5) * dh;
            let p = (-(h - truth).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
            let r = response(&values, var, &lambda, h) as f64;
            num += dh * p * (truth - r).powi(2);
        }
        let exact = expected_response_error(&values, var, &lambda, truth);
        assert_abs_diff_eq!(exact, num, epsilon = 1e-6);
    }

    #[test]
    fn dav_without_prior_is_rounding_error() {
        let img = two_tone(6, 6, 8);
        let p = params(0.0, 0.36, PriorKind::Quadratic);
        let d = dav_analytic(&img, &p, &RlbpOptions::default()).unwrap();
        assert_abs_diff_eq!(d, rounding_error(&img, 0.36), epsilon = 1e-12);
    }

    #[test]
    fn dav_vanishes_without_noise() {
        let img = two_tone(6, 6, 8);
        let p = params(0.4, 1e-6, PriorKind::Absolute);
        assert!(dav_analytic(&img, &p, &RlbpOptions::default()).unwrap() < 1e-12);
    }

    #[test]
    fn mc_reproducible_and_zero_without_noise() {
        let img = two_tone(6, 6, 8);
        let p = params(0.4, 1e-12, PriorKind::Quadratic);
        let s = mse_mc_average(&img, &p, 4, 2, &LbpOptions::default()).unwrap();
        assert_eq!((s.mean, s.std_dev), (0.0, 0.0));
        let p = params(0.4, 0.5, PriorKind::Quadratic);
        let a = mse_mc_average(&img, &p, 6, 2, &LbpOptions::default()).unwrap();
        let b = mse_mc_average(&img, &p, 6, 2, &LbpOptions::default()).unwrap();
        assert_eq!(a, b);
    }
}
