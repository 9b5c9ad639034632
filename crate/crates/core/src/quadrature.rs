//! Discretization of field distributions for the `dh p(h)` integrals.

use crate::error::{Error, Result};
use crate::model::FieldDistribution;

/// Nodes and weights with `sum w = 1`, so `sum w f(node)` approximates
/// `E[f(h)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&h, &w)| w * f(h)).sum()
    }
}

/// Delta distributions give a single node; Gaussians a Gauss-Hermite rule
/// mapped onto `N(mean, variance)`.
pub fn build_quadrature(dist: &FieldDistribution, n_nodes: usize) -> Result<QuadratureRule> {
    if n_nodes == 0 {
        return Err(Error::param("quadrature needs at least one node"));
    }
    match *dist {
        FieldDistribution::Delta(h) => Ok(QuadratureRule {
            nodes: vec![h],
            weights: vec![1.0],
        }),
        FieldDistribution::Gaussian { mean, variance } => {
            if n_nodes < 2 {
                return Err(Error::param("gaussian quadrature needs at least two nodes"));
            }
            let (x, w) = gauss_hermite(n_nodes)?;
            let scale = (2.0 * variance).sqrt();
            let total: f64 = w.iter().sum();
            Ok(QuadratureRule {
                nodes: x.iter().map(|&x| mean + scale * x).collect(),
                weights: w.iter().map(|&w| w / total).collect(),
            })
        }
    }
}

/// Nodes (ascending) and weights for `int exp(-x^2) f(x) dx`.
pub fn gauss_hermite(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    const PIM4: f64 = 0.751_125_544_464_942_5; // pi^(-1/4)
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-0.166_67),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        let mut done = false;
        for _ in 0..200 {
            // orthonormal Hermite recurrence
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let jf = j as f64;
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let step = p1 / pp;
            z -= step;
            if step.abs() <= 1e-15 * z.abs().max(1.0) {
                done = true;
                break;
            }
        }
        if !done {
            return Err(Error::param(format!("Gauss-Hermite root {i} of {n} did not converge")));
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    x.reverse();
    w.reverse();
    Ok((x, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn delta_is_one_node() {
        let r = build_quadrature(&FieldDistribution::Delta(0.7), 32).unwrap();
        assert_eq!(r.nodes, vec![0.7]);
        assert_eq!(r.weights, vec![1.0]);
    }

    #[test]
    fn two_point_rule() {
        let r = build_quadrature(&FieldDistribution::gaussian(0.0, 1.0).unwrap(), 2).unwrap();
        assert_abs_diff_eq!(r.nodes[0], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(r.nodes[1], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(r.weights[0], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn raw_weights_sum_to_sqrt_pi() {
        for n in [1, 3, 10, 32, 64, 150] {
            let (x, w) = gauss_hermite(n).unwrap();
            assert_abs_diff_eq!(w.iter().sum::<f64>(), std::f64::consts::PI.sqrt(), epsilon = 1e-12);
            assert!(x.windows(2).all(|p| p[0] < p[1]));
        }
    }

    #[test]
    fn gaussian_moments() {
        let (mean, var) = (2.0f64, 4.0f64);
        let r = build_quadrature(&FieldDistribution::gaussian(mean, var).unwrap(), 32).unwrap();
        assert_abs_diff_eq!(r.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.expect(|h| h), mean, epsilon = 1e-10);
        assert_abs_diff_eq!(r.expect(|h| (h - mean).powi(2)), var, epsilon = 1e-8);
        // E[h^4] = mu^4 + 6 mu^2 s^2 + 3 s^4
        let fourth = mean.powi(4) + 6.0 * mean * mean * var + 3.0 * var * var;
        assert_abs_diff_eq!(r.expect(|h| h.powi(4)), fourth, epsilon = 1e-6);
    }

    #[test]
    fn rejects_degenerate_requests() {
        assert!(build_quadrature(&FieldDistribution::Delta(0.0), 0).is_err());
        assert!(build_quadrature(&FieldDistribution::gaussian(0.0, 1.0).unwrap(), 1).is_err());
    }
}
