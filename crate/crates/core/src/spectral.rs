//! Perron-Frobenius eigendata of an irreducible 0/1 adjacency matrix.
//!
//! Power iteration runs on `A + I` rather than `A`. The shifted matrix is
//! primitive for every strongly connected graph, so the iteration also
//! converges on periodic graphs (directed cycles), where iterating `A`
//! itself would oscillate. The shift moves the eigenvalue by exactly one
//! and leaves the eigenvectors alone.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{validate, DirectedGraph, GraphMode};

const SHIFT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerronOptions {
    /// Bound on the eigen-residual in the ∞-norm.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PerronOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 100_000,
        }
    }
}

/// Dominant eigenvalue `lambda` with positive right (`phi`) and left
/// (`phi_hat`) eigenvectors, scaled so `max(phi) = 1` and `<phi, phi_hat> = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerronData {
    pub lambda: f64,
    pub phi: Vec<f64>,
    pub phi_hat: Vec<f64>,
    /// `max(‖Aφ − λφ‖∞, ‖A'φ̂ − λφ̂‖∞)`
    pub residual: f64,
}

impl PerronData {
    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    /// Same eigendata with `phi -> s*phi`, `phi_hat -> phi_hat/s`.
    pub fn rescaled(&self, s: f64) -> Self {
        Self {
            lambda: self.lambda,
            phi: self.phi.iter().map(|x| x * s).collect(),
            phi_hat: self.phi_hat.iter().map(|x| x / s).collect(),
            residual: self.residual,
        }
    }
}

pub fn perron(g: &DirectedGraph, opts: &PerronOptions) -> Result<PerronData> {
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::InvalidArgument(format!(
            "bad power-iteration options {opts:?}"
        )));
    }
    validate(g, GraphMode::DiscreteTime).into_result()?;

    let n = g.node_count();
    let right = |x: &[f64], y: &mut [f64]| {
        for i in 0..n {
            y[i] = g.successors(i).iter().map(|&j| x[j]).sum();
        }
    };
    let left = |x: &[f64], y: &mut [f64]| {
        y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            for &j in g.successors(i) {
                y[j] += x[i];
            }
        }
    };

    // Row sums of the RB generator are (Aφ)_i/φ_i − λ, so the right
    // residual is demanded relative to the smallest entry. The left vector
    // is rescaled afterwards by 1/<φ, x>; demand the residual of the
    // rescaled vector.
    let min_entry = |x: &[f64]| x.iter().cloned().fold(f64::INFINITY, f64::min);
    let (phi, lambda, _) = power_iterate(n, &right, opts, |x| 1.0 / min_entry(x))?;
    let (mut phi_hat, _, _) = power_iterate(n, &left, opts, |x| 1.0 / dot(&phi, x))?;

    let scale = 1.0 / dot(&phi, &phi_hat);
    phi_hat.iter_mut().for_each(|v| *v *= scale);

    let mut buf = vec![0.0; n];
    right(&phi, &mut buf);
    let r_right = residual_inf(&buf, &phi, lambda);
    left(&phi_hat, &mut buf);
    let r_left = residual_inf(&buf, &phi_hat, lambda);

    if phi.iter().chain(&phi_hat).any(|&v| !(v > 0.0)) {
        return Err(Error::NoConvergence {
            iterations: opts.max_iter,
            residual: f64::NAN,
        });
    }
    Ok(PerronData {
        lambda,
        phi,
        phi_hat,
        residual: r_right.max(r_left),
    })
}

/// Power iteration on `M + SHIFT*I` where `apply` computes `y = M x`.
/// Returns the max-normalized eigenvector, the eigenvalue of `M`, and the
/// iteration count. `weight(x)` scales the stopping residual.
fn power_iterate<F, W>(
    n: usize,
    apply: &F,
    opts: &PerronOptions,
    weight: W,
) -> Result<(Vec<f64>, f64, usize)>
where
    F: Fn(&[f64], &mut [f64]),
    W: Fn(&[f64]) -> f64,
{
    let mut x = vec![1.0; n];
    let mut y = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for iter in 0..opts.max_iter {
        apply(&x, &mut y);
        let estimate = dot(&x, &y) / dot(&x, &x);
        residual = residual_inf(&y, &x, estimate) * weight(&x);
        // headroom for re-scaling and for the other vector's eigenvalue estimate
        if residual <= 0.25 * opts.tol {
            return Ok((x, estimate, iter));
        }
        for (yi, xi) in y.iter_mut().zip(&x) {
            *yi += SHIFT * xi;
        }
        let top = y.iter().cloned().fold(0.0, f64::max);
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi / top;
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn residual_inf(mx: &[f64], x: &[f64], lambda: f64) -> f64 {
    mx.iter()
        .zip(x)
        .map(|(m, v)| (m - lambda * v).abs())
        .fold(0.0, f64::max)
}

/// RB stationary law `pi_i = phi_i * phi_hat_i`.
pub fn stationary_rb(p: &PerronData) -> Vec<f64> {
    p.phi.iter().zip(&p.phi_hat).map(|(a, b)| a * b).collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::fixtures;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Real root of x^3 - x - 1 by bisection on [1, 2].
    pub(crate) fn plastic_root() -> f64 {
        let f = |x: f64| x * x * x - x - 1.0;
        let (mut lo, mut hi) = (1.0f64, 2.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn default_perron(g: &DirectedGraph) -> PerronData {
        perron(g, &PerronOptions::default()).unwrap()
    }

    #[test]
    fn complete_triangle() {
        let p = default_perron(&fixtures::complete(3));
        assert_abs_diff_eq!(p.lambda, 2.0, epsilon = 1e-12);
        for (&a, &b) in p.phi.iter().zip(&p.phi_hat) {
            assert_abs_diff_eq!(a, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(a * b, 1.0 / 3.0, epsilon = 1e-12);
        }
        assert!(p.residual <= 1e-12);
    }

    #[test]
    fn two_cycle() {
        let p = default_perron(&fixtures::two_cycle());
        assert_abs_diff_eq!(p.lambda, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.phi[0], p.phi[1], epsilon = 1e-12);
        let pi = stationary_rb(&p);
        assert_abs_diff_eq!(pi[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(pi[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn plastic_graph_against_bisection() {
        let root = plastic_root();
        assert_abs_diff_eq!(root, 1.3247179572, epsilon = 1e-9);
        let p = default_perron(&fixtures::plastic());
        assert_abs_diff_eq!(p.lambda, root, epsilon = 1e-11);

        // A phi = lambda phi: phi_1 = lambda phi_0, phi_2 = phi_0 / lambda.
        // A' phi_hat = lambda phi_hat: phi_hat_0 = (phi_hat_1 + phi_hat_2)/lambda,
        // phi_hat_1 = phi_hat_0 / lambda, phi_hat_2 = phi_hat_1 / lambda.
        let phi = [1.0, root, 1.0 / root];
        let phi_hat = [1.0, 1.0 / root, 1.0 / (root * root)];
        let z: f64 = phi.iter().zip(&phi_hat).map(|(a, b)| a * b).sum();
        let expected: Vec<f64> = phi.iter().zip(&phi_hat).map(|(a, b)| a * b / z).collect();
        let pi = stationary_rb(&p);
        for (a, b) in pi.iter().zip(&expected) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(pi.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn periodic_cycle_converges() {
        for n in 2..=9 {
            let p = default_perron(&fixtures::directed_cycle(n));
            assert_abs_diff_eq!(p.lambda, 1.0, epsilon = 1e-12);
            assert!(p.phi.iter().all(|&v| (v - 1.0).abs() < 1e-10));
        }
    }

    #[test]
    fn rejects_disconnected_graph() {
        let g = DirectedGraph::from_edges(3, &[(0, 1), (1, 0), (1, 2)]).unwrap();
        assert!(matches!(
            perron(&g, &PerronOptions::default()),
            Err(Error::InvalidGraph(_))
        ));
    }

    #[test]
    fn non_convergence_reports_residual() {
        let g = fixtures::random_strongly_connected(8, 0.4, 7);
        let opts = PerronOptions {
            tol: 1e-12,
            max_iter: 2,
        };
        match perron(&g, &opts) {
            Err(Error::NoConvergence {
                iterations,
                residual,
            }) => {
                assert_eq!(iterations, 2);
                assert!(residual > 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn invariants_hold(g in fixtures::strategy::strongly_connected(2..=10, false)) {
            let p = default_perron(&g);
            prop_assert!(p.residual <= 1e-12);
            prop_assert!(p.phi.iter().chain(&p.phi_hat).all(|&v| v > 0.0));
            let inner: f64 = p.phi.iter().zip(&p.phi_hat).map(|(a, b)| a * b).sum();
            prop_assert!((inner - 1.0).abs() < 1e-12);

            let degrees: Vec<usize> = (0..g.node_count()).map(|i| g.out_degree(i)).collect();
            let lo = *degrees.iter().min().unwrap() as f64;
            let hi = *degrees.iter().max().unwrap() as f64;
            prop_assert!(lo - 1e-12 <= p.lambda && p.lambda <= hi + 1e-12);
        }

        #[test]
        fn shift_invariance(g in fixtures::strategy::strongly_connected(2..=7, true)) {
            let n = g.node_count();
            let mut edges: Vec<_> = g.edges().collect();
            edges.extend((0..n).map(|i| (i, i)));
            let shifted = DirectedGraph::from_edges(n, &edges).unwrap();
            let a = default_perron(&g);
            let b = default_perron(&shifted);
            prop_assert!((b.lambda - a.lambda - 1.0).abs() < 1e-9);
            // both phi are max-normalized, so they agree entrywise
            for (x, y) in a.phi.iter().zip(&b.phi) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn stationary_is_scale_free(g in fixtures::strategy::strongly_connected(2..=7, true), s in 0.01f64..100.0) {
            let p = default_perron(&g);
            let a = stationary_rb(&p);
            let b = stationary_rb(&p.rescaled(s));
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-14);
            }
        }
    }
}
