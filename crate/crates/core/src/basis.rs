//! L2-orthonormal shifted Legendre polynomials and vector-valued
//! polynomials on a single time interval.
//!
//! On `[0, 1]` the basis is `L̂_j(x) = sqrt(2j + 1) P_j(2x - 1)`. On an
//! interval `[a, b]` of width `tau` it is `L_j(t) = tau^{-1/2} L̂_j((t - a)/tau)`,
//! so that `∫_a^b L_j L_l dt = δ_jl` and L2 inner products of segments are
//! plain coefficient dot products.

use nalgebra::{DMatrix, DVector};

use crate::error::{CpgError, Result};

/// Values `L̂_0(x), ..., L̂_k(x)` for `x` in `[0, 1]` (not range-checked).
pub(crate) fn unit_values(k: usize, x: f64) -> Vec<f64> {
    let y = 2.0 * x - 1.0;
    let mut p = Vec::with_capacity(k + 1);
    p.push(1.0);
    if k >= 1 {
        p.push(y);
    }
    for j in 1..k {
        let jf = j as f64;
        let next = ((2.0 * jf + 1.0) * y * p[j] - jf * p[j - 1]) / (jf + 1.0);
        p.push(next);
    }
    for (j, v) in p.iter_mut().enumerate() {
        *v *= ((2 * j + 1) as f64).sqrt();
    }
    p
}

/// Values `Â_j(x) = ∫_0^x L̂_j` for `j = 0..=k`.
///
/// Uses `∫ P_j = (P_{j+1} - P_{j-1}) / (2j + 1)` and `∫_{-1}^y P_0 = P_1 + P_0`.
pub(crate) fn unit_antiderivative_values(k: usize, x: f64) -> Vec<f64> {
    let l = unit_values(k + 1, x);
    let mut out = Vec::with_capacity(k + 1);
    out.push(0.5 * (l[1] / 3f64.sqrt() + l[0]));
    for j in 1..=k {
        let up = l[j + 1] / ((2 * j + 3) as f64).sqrt();
        let down = l[j - 1] / ((2 * j - 1) as f64).sqrt();
        out.push((up - down) / (2.0 * ((2 * j + 1) as f64).sqrt()));
    }
    out
}

/// Matrix with entry `(j, l) = L̂_j(points[l])`.
pub fn orthonormal_legendre_values(k: usize, points: &[f64]) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(k + 1, points.len());
    for (l, &x) in points.iter().enumerate() {
        if !(0.0..=1.0).contains(&x) {
            return Err(CpgError::InvalidArgument(format!(
                "point {x} lies outside [0, 1]"
            )));
        }
        for (j, v) in unit_values(k, x).into_iter().enumerate() {
            out[(j, l)] = v;
        }
    }
    Ok(out)
}

/// Clenshaw summation of `sum_j a_j P_j(y)` for Legendre `P_j`.
fn clenshaw_legendre(a: &[f64], y: f64) -> f64 {
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for (j, &aj) in a.iter().enumerate().rev() {
        let jf = j as f64;
        // P_{j+1} = alpha_j P_j + beta_j P_{j-1}
        let alpha = (2.0 * jf + 1.0) / (jf + 1.0) * y;
        let beta_next = -(jf + 1.0) / (jf + 2.0);
        let b0 = aj + alpha * b1 + beta_next * b2;
        b2 = b1;
        b1 = b0;
    }
    b1
}

/// A vector-valued polynomial on `[a, b]`, stored as coefficients in the
/// orthonormal basis `L_j`. Column `j` of `coeffs` multiplies `L_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentPoly {
    a: f64,
    b: f64,
    coeffs: DMatrix<f64>,
}

impl SegmentPoly {
    pub fn new(a: f64, b: f64, coeffs: DMatrix<f64>) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) || b <= a {
            return Err(CpgError::InvalidArgument(format!(
                "degenerate interval [{a}, {b}]"
            )));
        }
        if coeffs.ncols() == 0 {
            return Err(CpgError::InvalidArgument(
                "segment needs at least one coefficient column".into(),
            ));
        }
        Ok(Self { a, b, coeffs })
    }

    pub fn zeros(dim: usize, degree: usize, a: f64, b: f64) -> Result<Self> {
        Self::new(a, b, DMatrix::zeros(dim, degree + 1))
    }

    /// The constant polynomial `value`, stored with the given degree.
    pub fn constant(value: &DVector<f64>, degree: usize, a: f64, b: f64) -> Result<Self> {
        let mut seg = Self::zeros(value.len(), degree, a, b)?;
        let s = seg.tau().sqrt();
        seg.coeffs.column_mut(0).copy_from(&(value * s));
        Ok(seg)
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn tau(&self) -> f64 {
        self.b - self.a
    }

    pub fn degree(&self) -> usize {
        self.coeffs.ncols() - 1
    }

    pub fn dim(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> DMatrix<f64> {
        self.coeffs
    }

    /// Unit coordinate of `t`, tolerating `4 eps * tau` overshoot at the ends.
    pub fn unit_coordinate(&self, t: f64) -> Result<f64> {
        let tau = self.tau();
        let slack = 4.0 * f64::EPSILON * tau;
        if !(t >= self.a - slack && t <= self.b + slack) {
            return Err(CpgError::OutOfRange {
                t,
                a: self.a,
                b: self.b,
            });
        }
        Ok(((t - self.a) / tau).clamp(0.0, 1.0))
    }

    /// Evaluates at the unit coordinate `x` in `[0, 1]`.
    pub fn eval_unit(&self, x: f64) -> DVector<f64> {
        let y = 2.0 * x - 1.0;
        let scale = self.tau().powf(-0.5);
        let norms: Vec<f64> = (0..=self.degree())
            .map(|j| ((2 * j + 1) as f64).sqrt())
            .collect();
        let mut a = vec![0.0; norms.len()];
        DVector::from_iterator(
            self.dim(),
            self.coeffs.row_iter().map(|row| {
                for (j, aj) in a.iter_mut().enumerate() {
                    *aj = row[j] * norms[j];
                }
                scale * clenshaw_legendre(&a, y)
            }),
        )
    }

    pub fn eval(&self, t: f64) -> Result<DVector<f64>> {
        Ok(self.eval_unit(self.unit_coordinate(t)?))
    }

    /// Value at the left endpoint.
    pub fn left_value(&self) -> DVector<f64> {
        self.eval_unit(0.0)
    }

    /// Value at the right endpoint.
    pub fn right_value(&self) -> DVector<f64> {
        self.eval_unit(1.0)
    }

    /// Exact derivative, of degree `max(k - 1, 0)`.
    pub fn derivative(&self) -> SegmentPoly {
        let k = self.degree();
        let dim = self.dim();
        if k == 0 {
            return Self {
                a: self.a,
                b: self.b,
                coeffs: DMatrix::zeros(dim, 1),
            };
        }
        let tau = self.tau();
        let mut out = DMatrix::zeros(dim, k);
        for n in 1..=k {
            let sn = ((2 * n + 1) as f64).sqrt();
            // L_n' = (2 / tau) sqrt(2n+1) sum_{j<n, n-j odd} sqrt(2j+1) L_j
            let mut j = n - 1;
            loop {
                let factor = 2.0 / tau * sn * ((2 * j + 1) as f64).sqrt();
                for a in 0..dim {
                    out[(a, j)] += factor * self.coeffs[(a, n)];
                }
                if j < 2 {
                    break;
                }
                j -= 2;
            }
        }
        Self {
            a: self.a,
            b: self.b,
            coeffs: out,
        }
    }

    /// The unique degree-`k+1` polynomial `q` with `q' = d` and `q(a) = z_left`,
    /// where `d` has degree `k`.
    pub fn antiderivative_from_left(d: &SegmentPoly, z_left: &DVector<f64>) -> Result<SegmentPoly> {
        if z_left.len() != d.dim() {
            return Err(CpgError::ShapeMismatch {
                expected: format!("left value of length {}", d.dim()),
                got: format!("length {}", z_left.len()),
            });
        }
        let km1 = d.degree();
        let tau = d.tau();
        let dim = d.dim();
        let mut out = DMatrix::zeros(dim, km1 + 2);
        out.column_mut(0).copy_from(&(z_left * tau.sqrt()));
        // ∫_a^t L_0 = (tau/2)(L_0 + L_1/sqrt3)
        // ∫_a^t L_j = tau / (2 sqrt(2j+1)) (L_{j+1}/sqrt(2j+3) - L_{j-1}/sqrt(2j-1))
        for j in 0..=km1 {
            let col = d.coeffs.column(j);
            if j == 0 {
                for a in 0..dim {
                    out[(a, 0)] += 0.5 * tau * col[a];
                    out[(a, 1)] += 0.5 * tau / 3f64.sqrt() * col[a];
                }
            } else {
                let c = tau / (2.0 * ((2 * j + 1) as f64).sqrt());
                let up = c / ((2 * j + 3) as f64).sqrt();
                let down = c / ((2 * j - 1) as f64).sqrt();
                for a in 0..dim {
                    out[(a, j + 1)] += up * col[a];
                    out[(a, j - 1)] -= down * col[a];
                }
            }
        }
        SegmentPoly::new(d.a, d.b, out)
    }

    /// Copy with coefficient columns above `degree` dropped (L2 truncation).
    pub fn truncate(&self, degree: usize) -> SegmentPoly {
        let keep = (degree + 1).min(self.coeffs.ncols());
        Self {
            a: self.a,
            b: self.b,
            coeffs: self.coeffs.columns(0, keep).into_owned(),
        }
    }
}

/// Free-function form of [`SegmentPoly::eval`].
pub fn eval_segment(p: &SegmentPoly, t: f64) -> Result<DVector<f64>> {
    p.eval(t)
}

/// Free-function form of [`SegmentPoly::derivative`].
pub fn derivative_segment(p: &SegmentPoly) -> SegmentPoly {
    p.derivative()
}

/// Free-function form of [`SegmentPoly::antiderivative_from_left`].
pub fn antiderivative_from_left(d: &SegmentPoly, z_left: &DVector<f64>) -> Result<SegmentPoly> {
    SegmentPoly::antiderivative_from_left(d, z_left)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::gauss_legendre_unit;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    // Independent monomial-basis oracle for L̂_j: explicit shifted Legendre
    // coefficients sum_i (-1)^{j+i} C(j,i) C(j+i,i) x^i.
    fn shifted_legendre_monomial(j: usize, x: f64) -> f64 {
        let binom = |n: usize, r: usize| -> f64 {
            (0..r).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
        };
        let mut s = 0.0;
        for i in 0..=j {
            let sign = if (j + i) % 2 == 0 { 1.0 } else { -1.0 };
            s += sign * binom(j, i) * binom(j + i, i) * x.powi(i as i32);
        }
        s * ((2 * j + 1) as f64).sqrt()
    }

    #[test]
    fn value_examples() {
        let v = orthonormal_legendre_values(0, &[0.3]).unwrap();
        assert_eq!(v[(0, 0)], 1.0);
        let v = orthonormal_legendre_values(1, &[0.5]).unwrap();
        assert_eq!(v[(1, 0)], 0.0);
        let v = orthonormal_legendre_values(2, &[1.0]).unwrap();
        assert_relative_eq!(v[(2, 0)], 5f64.sqrt(), epsilon = 1e-14);
        assert!(orthonormal_legendre_values(2, &[1.5]).is_err());
        assert!(orthonormal_legendre_values(2, &[-0.1]).is_err());
    }

    #[test]
    fn values_match_monomial_oracle() {
        let pts = [0.0, 0.1, 0.37, 0.5, 0.81, 1.0];
        let v = orthonormal_legendre_values(8, &pts).unwrap();
        for j in 0..=8 {
            for (l, &x) in pts.iter().enumerate() {
                assert_relative_eq!(v[(j, l)], shifted_legendre_monomial(j, x), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn gram_matrix_is_identity() {
        for k in 0..=12 {
            let rule = gauss_legendre_unit(k + 1).unwrap();
            let v = orthonormal_legendre_values(k, rule.nodes()).unwrap();
            for i in 0..=k {
                for j in 0..=k {
                    let g: f64 = (0..rule.len())
                        .map(|l| rule.weights()[l] * v[(i, l)] * v[(j, l)])
                        .sum();
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((g - expect).abs() <= 1e-12, "k={k} ({i},{j}) g={g}");
                }
            }
        }
    }

    fn linear_t_on_unit() -> SegmentPoly {
        // t = 1/2 L̂_0 + 1/(2 sqrt3) L̂_1 on [0, 1]
        let c = DMatrix::from_row_slice(1, 2, &[0.5, 0.5 / 3f64.sqrt()]);
        SegmentPoly::new(0.0, 1.0, c).unwrap()
    }

    #[test]
    fn eval_examples() {
        let c = DMatrix::from_row_slice(2, 1, &[1.0, -2.0]);
        let seg = SegmentPoly::new(1.0, 5.0, c).unwrap();
        let v = seg.eval(2.2).unwrap();
        assert_relative_eq!(v[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(v[1], -1.0, epsilon = 1e-15);

        let ones = DVector::from_element(3, 1.0);
        let seg = SegmentPoly::constant(&ones, 3, 0.2, 0.7).unwrap();
        for t in [0.2, 0.33, 0.7] {
            assert_relative_eq!(seg.eval(t).unwrap(), ones.clone(), epsilon = 1e-14);
        }

        let v = linear_t_on_unit().eval(0.25).unwrap();
        assert_relative_eq!(v[0], 0.25, epsilon = 1e-15);
        assert!(linear_t_on_unit().eval(1.1).is_err());
        assert!(linear_t_on_unit().eval(1.0 + 1e-17).is_ok());
    }

    #[test]
    fn derivative_examples() {
        let c = DVector::from_vec(vec![3.0, 4.0]);
        let seg = SegmentPoly::constant(&c, 0, 0.0, 2.0).unwrap();
        let d = seg.derivative();
        assert_eq!(d.coeffs(), &DMatrix::zeros(2, 1));

        let d = linear_t_on_unit().derivative();
        assert_eq!(d.degree(), 0);
        assert_relative_eq!(d.eval(0.4).unwrap()[0], 1.0, epsilon = 1e-14);

        // t^2 on [0, 2] built from its degree-2 projection (exact with 3 nodes)
        let rule = gauss_legendre_unit(3).unwrap();
        let sq = crate::projection::project_function(0.0, 2.0, 2, &rule, |t| {
            DVector::from_element(1, t * t)
        })
        .unwrap();
        let d = sq.derivative();
        for t in [0.0, 0.3, 1.0, 1.7, 2.0] {
            assert!((d.eval(t).unwrap()[0] - 2.0 * t).abs() <= 1e-13);
        }
    }

    #[test]
    fn antiderivative_examples() {
        let v = DVector::from_vec(vec![1.5, -2.0]);
        let zero = SegmentPoly::zeros(2, 1, 0.0, 1.0).unwrap();
        let q = SegmentPoly::antiderivative_from_left(&zero, &v).unwrap();
        for t in [0.0, 0.5, 1.0] {
            assert_relative_eq!(q.eval(t).unwrap(), v.clone(), epsilon = 1e-15);
        }

        let one = SegmentPoly::constant(&DVector::from_element(1, 1.0), 0, 0.0, 1.0).unwrap();
        let q = SegmentPoly::antiderivative_from_left(&one, &DVector::zeros(1)).unwrap();
        assert_relative_eq!(q.coeffs().clone(), linear_t_on_unit().coeffs().clone(), epsilon = 1e-15);

        let rule = gauss_legendre_unit(3).unwrap();
        let d = crate::projection::project_function(0.0, 1.0, 2, &rule, |t| {
            DVector::from_element(1, 3.0 * t * t)
        })
        .unwrap();
        let q = SegmentPoly::antiderivative_from_left(&d, &DVector::from_element(1, 1.0)).unwrap();
        for t in [0.0, 0.5, 1.0] {
            assert!((q.eval(t).unwrap()[0] - (1.0 + t * t * t)).abs() <= 1e-14);
        }
    }

    #[test]
    fn antiderivative_unit_values_match_quadrature() {
        let rule = gauss_legendre_unit(10).unwrap();
        for x in [0.0, 0.2, 0.5, 0.9, 1.0] {
            let a = unit_antiderivative_values(6, x);
            for (j, aj) in a.iter().enumerate() {
                let exact = if x == 0.0 {
                    0.0
                } else {
                    rule.integrate(0.0, x, |s| unit_values(6, s)[j]).unwrap()
                };
                assert!((aj - exact).abs() <= 1e-14, "j={j} x={x}");
            }
        }
    }

    fn arb_segment() -> impl Strategy<Value = SegmentPoly> {
        (1usize..4, 0usize..8, -3.0f64..3.0, 0.01f64..4.0).prop_flat_map(|(dim, deg, a, w)| {
            proptest::collection::vec(-5.0f64..5.0, dim * (deg + 1)).prop_map(move |v| {
                SegmentPoly::new(a, a + w, DMatrix::from_vec(dim, deg + 1, v)).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn derivative_inverts_antiderivative(d in arb_segment(), z in proptest::collection::vec(-5.0f64..5.0, 3)) {
            let z = DVector::from_iterator(d.dim(), z.into_iter().chain(std::iter::repeat(0.0)).take(d.dim()));
            let q = SegmentPoly::antiderivative_from_left(&d, &z).unwrap();
            let back = q.derivative();
            let scale = d.coeffs().amax().max(1.0);
            prop_assert!((back.coeffs() - d.coeffs()).amax() <= 1e-13 * scale * 8.0);
            let left = q.left_value();
            prop_assert!((left - &z).amax() <= 1e-14 * (1.0 + z.amax() + scale * d.tau()) * 8.0);
        }

        #[test]
        fn clenshaw_matches_direct_sum(seg in arb_segment(), x in 0.0f64..=1.0) {
            let vals = unit_values(seg.degree(), x);
            let direct = seg.coeffs() * DVector::from_vec(vals) / seg.tau().sqrt();
            let v = seg.eval_unit(x);
            prop_assert!((v - direct).amax() <= 1e-12 * (1.0 + seg.coeffs().amax() / seg.tau().sqrt()));
        }
    }
}
