//! Quadrature-approximated local L2 projection onto polynomials of a fixed
//! degree on one time interval.
//!
//! With samples `f(ζ_l)` at the mapped nodes of a Gauss rule, the
//! coefficient of `L_j` is `tau * sum_l w_l f(ζ_l) L_j(ζ_l)`. This equals the
//! exact projection whenever the rule integrates `f * L_j` exactly.

use nalgebra::{DMatrix, DVector};

use crate::basis::{unit_values, SegmentPoly};
use crate::error::{CpgError, Result};
use crate::quadrature::QuadratureRule;
use crate::system::PortHamiltonian;

/// Projects sampled values (column `l` is `f` at the `l`-th mapped node)
/// onto polynomials of degree `target_degree` on `[a, b]`.
pub fn project_sampled(
    a: f64,
    b: f64,
    target_degree: usize,
    rule: &QuadratureRule,
    samples: &DMatrix<f64>,
) -> Result<SegmentPoly> {
    if samples.ncols() != rule.len() {
        return Err(CpgError::ShapeMismatch {
            expected: format!("{} sample columns", rule.len()),
            got: format!("{} columns", samples.ncols()),
        });
    }
    let tau = b - a;
    if !(tau > 0.0) {
        return Err(CpgError::InvalidArgument(format!(
            "degenerate interval [{a}, {b}]"
        )));
    }
    let s = tau.sqrt();
    let mut weighted = DMatrix::zeros(rule.len(), target_degree + 1);
    for (l, (&x, &w)) in rule.nodes().iter().zip(rule.weights()).enumerate() {
        for (j, v) in unit_values(target_degree, x).into_iter().enumerate() {
            weighted[(l, j)] = s * w * v;
        }
    }
    SegmentPoly::new(a, b, samples * weighted)
}

/// Samples `f` at the mapped nodes of `rule` and projects.
pub fn project_function<F>(
    a: f64,
    b: f64,
    target_degree: usize,
    rule: &QuadratureRule,
    mut f: F,
) -> Result<SegmentPoly>
where
    F: FnMut(f64) -> DVector<f64>,
{
    let ts = rule.map_nodes(a, b)?;
    let cols: Vec<DVector<f64>> = ts.into_iter().map(&mut f).collect();
    let samples = DMatrix::from_columns(&cols);
    project_sampled(a, b, target_degree, rule, &samples)
}

/// `Π̃ η(z)` on the interval of `z_seg`: η sampled at the mapped nodes of
/// `rule_pi`, projected to degree `deg(z_seg) - 1`.
pub fn project_eta_of_segment<S: PortHamiltonian + ?Sized>(
    z_seg: &SegmentPoly,
    system: &S,
    rule_pi: &QuadratureRule,
) -> Result<SegmentPoly> {
    let k = z_seg.degree();
    if k == 0 {
        return Err(CpgError::InvalidArgument(
            "projection of η needs a segment of degree at least 1".into(),
        ));
    }
    let (a, b) = z_seg.interval();
    let mut cols = Vec::with_capacity(rule_pi.len());
    for &x in rule_pi.nodes() {
        let z = z_seg.eval_unit(x);
        let eta = system.eta(&z).map_err(|e| CpgError::DomainAtNode {
            t: a + (b - a) * x,
            message: e.to_string(),
        })?;
        cols.push(eta);
    }
    project_sampled(a, b, k - 1, rule_pi, &DMatrix::from_columns(&cols))
}
