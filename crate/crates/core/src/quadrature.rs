//! Gauss–Legendre rules on the unit interval.
//!
//! Nodes are computed by Newton iteration on the Legendre polynomial `P_s`
//! starting from Chebyshev-type initial guesses, and weights from the
//! derivative formula `w = 2 / ((1 - x^2) P_s'(x)^2)` on `[-1, 1]`. Only the
//! lower half of the nodes is computed; the upper half is mirrored so the
//! rule is exactly symmetric about `1/2`.

use std::f64::consts::PI;

use crate::error::{CpgError, Result};

/// Largest supported node count.
pub const MAX_NODES: usize = 64;

/// An `s`-point Gauss–Legendre rule on `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes in `(0, 1)`, strictly increasing.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Positive weights summing to one.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Nodes mapped affinely onto `[a, b]`.
    pub fn map_nodes(&self, a: f64, b: f64) -> Result<Vec<f64>> {
        check_interval(a, b)?;
        let tau = b - a;
        Ok(self.nodes.iter().map(|x| a + tau * x).collect())
    }

    /// `(b - a) * sum_j w_j * samples_j`, where `samples_j` is the integrand
    /// at the j-th mapped node.
    pub fn apply(&self, a: f64, b: f64, samples: &[f64]) -> Result<f64> {
        check_interval(a, b)?;
        if samples.len() != self.len() {
            return Err(CpgError::ShapeMismatch {
                expected: format!("{} samples", self.len()),
                got: format!("{} samples", samples.len()),
            });
        }
        let sum: f64 = self.weights.iter().zip(samples).map(|(w, g)| w * g).sum();
        Ok((b - a) * sum)
    }

    /// Integrates a closure over `[a, b]`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> Result<f64> {
        let samples: Vec<f64> = self.map_nodes(a, b)?.into_iter().map(&mut f).collect();
        self.apply(a, b, &samples)
    }
}

fn check_interval(a: f64, b: f64) -> Result<()> {
    if !(a.is_finite() && b.is_finite()) || b <= a {
        return Err(CpgError::InvalidArgument(format!(
            "degenerate interval [{a}, {b}]"
        )));
    }
    Ok(())
}

/// Legendre `P_n(x)` and `P_n'(x)` on `[-1, 1]` by the three-term recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 1.0;
    let mut p = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for j in 1..n {
        let jf = j as f64;
        let next = ((2.0 * jf + 1.0) * x * p - jf * p_prev) / (jf + 1.0);
        p_prev = p;
        p = next;
    }
    let nf = n as f64;
    let dp = nf * (x * p - p_prev) / (x * x - 1.0);
    (p, dp)
}

/// The unique `s`-point Gauss–Legendre rule on `[0, 1]`.
pub fn gauss_legendre_unit(s: usize) -> Result<QuadratureRule> {
    if s == 0 || s > MAX_NODES {
        return Err(CpgError::InvalidArgument(format!(
            "Gauss-Legendre node count must lie in 1..={MAX_NODES}, got {s}"
        )));
    }
    let mut nodes = vec![0.0; s];
    let mut weights = vec![0.0; s];
    let sf = s as f64;
    // Roots on [-1, 1] in decreasing order; root i pairs with root s-1-i.
    for i in 0..s.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (sf + 0.5)).cos();
        if s % 2 == 1 && i == s / 2 {
            x = 0.0;
        } else {
            for _ in 0..100 {
                let (p, dp) = legendre_with_derivative(s, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() <= 1e-16 * x.abs().max(1.0) {
                    break;
                }
            }
        }
        let (_, dp) = legendre_with_derivative(s, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // Map to [0, 1]: node = (1 - x)/2 increases with i since x decreases.
        let lo = 0.5 * (1.0 - x);
        nodes[i] = lo;
        nodes[s - 1 - i] = 1.0 - lo;
        weights[i] = 0.5 * w;
        weights[s - 1 - i] = 0.5 * w;
    }
    if s % 2 == 1 {
        nodes[s / 2] = 0.5;
    }
    Ok(QuadratureRule { nodes, weights })
}

/// `rule.map_nodes(a, b)` as a free function.
pub fn map_nodes(rule: &QuadratureRule, a: f64, b: f64) -> Result<Vec<f64>> {
    rule.map_nodes(a, b)
}

/// `rule.apply(a, b, samples)` as a free function.
pub fn apply(rule: &QuadratureRule, a: f64, b: f64, samples: &[f64]) -> Result<f64> {
    rule.apply(a, b, samples)
}
