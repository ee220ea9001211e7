//! The continuous Petrov–Galerkin time stepper.
//!
//! On each interval the unknowns are the coefficients `d` (a `dim × k`
//! matrix) of `ż` in the orthonormal degree-`(k-1)` basis. The trial
//! function is recovered as `z(t) = z_left + ∫_a^t ż`, so continuity and the
//! initial condition hold by construction. The step residual is
//!
//! ```text
//! res[a, j] = (M d)[a, j] - Q_i[ L_j · (J(v) - R(v) + B(t, v))_a ],   v = Π̃ η(z)
//! ```
//!
//! whose root is the local scheme on that interval.

use nalgebra::{DMatrix, DVector};

use crate::basis::{unit_antiderivative_values, unit_values, SegmentPoly};
use crate::error::{CpgError, Result};
use crate::projection::project_eta_of_segment;
use crate::quadrature::{gauss_legendre_unit, QuadratureRule};
use crate::system::{apply_mass, rhs, JacobianMode, PortHamiltonian, SolverConfig};

/// Grid points `t_0 < t_1 < ... < t_m`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimePartition {
    points: Vec<f64>,
}

impl TimePartition {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(CpgError::InvalidArgument(
                "a partition needs at least two points".into(),
            ));
        }
        if points.iter().any(|t| !t.is_finite()) || points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CpgError::InvalidArgument(
                "partition points must be finite and strictly increasing".into(),
            ));
        }
        Ok(Self { points })
    }

    /// `m` equal steps on `[t0, t_end]`, with `t_i = t0 + i (t_end - t0) / m`.
    pub fn uniform(t0: f64, t_end: f64, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(CpgError::InvalidArgument("need at least one step".into()));
        }
        let h = (t_end - t0) / m as f64;
        let mut pts: Vec<f64> = (0..m).map(|i| t0 + i as f64 * h).collect();
        pts.push(t_end);
        Self::new(pts)
    }

    /// Uniform partition with step `tau`; `(t_end - t0) / tau` must be an
    /// integer up to rounding.
    pub fn uniform_step(t0: f64, t_end: f64, tau: f64) -> Result<Self> {
        let ratio = (t_end - t0) / tau;
        let m = ratio.round();
        if !(m >= 1.0) || (ratio - m).abs() > 1e-9 * m {
            return Err(CpgError::InvalidArgument(format!(
                "step {tau} does not divide [{t0}, {t_end}]"
            )));
        }
        Self::uniform(t0, t_end, m as usize)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn num_steps(&self) -> usize {
        self.points.len() - 1
    }

    pub fn start(&self) -> f64 {
        self.points[0]
    }

    pub fn end(&self) -> f64 {
        *self.points.last().unwrap()
    }

    /// Interval `I_i = [t_{i-1}, t_i]` for `i` in `1..=m`.
    pub fn interval(&self, i: usize) -> (f64, f64) {
        (self.points[i - 1], self.points[i])
    }

    pub fn widths(&self) -> Vec<f64> {
        self.points.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// `τ = max_i τ_i`.
    pub fn tau(&self) -> f64 {
        self.widths().into_iter().fold(0.0, f64::max)
    }

    /// 1-based index of the interval containing `t`; grid points belong to
    /// the interval on their left, except `t_0`.
    pub fn locate(&self, t: f64) -> Result<usize> {
        let (a, b) = (self.start(), self.end());
        let slack = 4.0 * f64::EPSILON * (b - a);
        if !(t >= a - slack && t <= b + slack) {
            return Err(CpgError::OutOfRange { t, a, b });
        }
        let idx = self.points.partition_point(|&p| p < t);
        Ok(idx.clamp(1, self.num_steps()))
    }
}

/// A continuous piecewise-polynomial trajectory with per-step Newton data.
#[derive(Clone, Debug)]
pub struct CpgSolution {
    pub partition: TimePartition,
    pub segments: Vec<SegmentPoly>,
    pub newton_iters: Vec<usize>,
    pub residual_norms: Vec<f64>,
    /// Degree and node counts the solution was computed with.
    pub k: usize,
    pub s_q: usize,
    pub s_pi: usize,
}

impl CpgSolution {
    pub fn dim(&self) -> usize {
        self.segments.first().map_or(0, |s| s.dim())
    }

    pub fn eval(&self, t: f64) -> Result<DVector<f64>> {
        if self.segments.is_empty() {
            return Err(CpgError::InvalidArgument("empty solution".into()));
        }
        let i = self.partition.locate(t)?;
        if i > self.segments.len() {
            let (a, _) = self.partition.interval(1);
            let (_, b) = self.partition.interval(self.segments.len());
            return Err(CpgError::OutOfRange { t, a, b });
        }
        self.segments[i - 1].eval(t)
    }

    /// Values at `t_0, ..., t_m` (right endpoints of each segment after `t_0`).
    pub fn nodal_values(&self) -> Vec<DVector<f64>> {
        let mut out = Vec::with_capacity(self.segments.len() + 1);
        if let Some(first) = self.segments.first() {
            out.push(first.left_value());
        }
        out.extend(self.segments.iter().map(|s| s.right_value()));
        out
    }

    /// Max relative jump between adjacent segments at interior grid points.
    pub fn continuity_defect(&self) -> f64 {
        self.segments
            .windows(2)
            .map(|w| {
                let l = w[0].right_value();
                let r = w[1].left_value();
                (l.clone() - r).amax() / l.amax().max(1.0)
            })
            .fold(0.0, f64::max)
    }

    /// Relative deviation of the first segment's left value from `z0`.
    pub fn initial_defect(&self, z0: &DVector<f64>) -> f64 {
        self.segments
            .first()
            .map_or(0.0, |s| (s.left_value() - z0).amax() / z0.amax().max(1.0))
    }
}

/// Precomputed unit-interval tables for one `(k, s_q, s_pi)` triple.
///
/// Everything is expressed on `[0, 1]`; the interval width only enters as
/// scalar factors, so one table serves every step.
#[derive(Clone, Debug)]
pub struct LocalScheme {
    k: usize,
    rule_q: QuadratureRule,
    rule_pi: QuadratureRule,
    /// `k × s_pi`: `Â_j = ∫_0^x L̂_j` at the projection nodes.
    anti_pi: DMatrix<f64>,
    /// `s_pi × s_q`: maps η samples at projection nodes to `Π̃η` at Q nodes.
    proj_to_q: DMatrix<f64>,
    /// `s_q × k`: `diag(w_q) · L̂ᵀ` at the Q nodes.
    test_q: DMatrix<f64>,
}

impl LocalScheme {
    pub fn new(k: usize, s_q: usize, s_pi: usize) -> Result<Self> {
        if k == 0 {
            return Err(CpgError::InvalidArgument("k must be at least 1".into()));
        }
        let rule_q = gauss_legendre_unit(s_q)?;
        let rule_pi = gauss_legendre_unit(s_pi)?;
        let km1 = k - 1;
        let mut basis_q = DMatrix::zeros(k, s_q);
        for (q, &y) in rule_q.nodes().iter().enumerate() {
            for (j, v) in unit_values(km1, y).into_iter().enumerate() {
                basis_q[(j, q)] = v;
            }
        }
        let mut basis_pi = DMatrix::zeros(k, s_pi);
        let mut anti_pi = DMatrix::zeros(k, s_pi);
        for (l, &x) in rule_pi.nodes().iter().enumerate() {
            for (j, v) in unit_values(km1, x).into_iter().enumerate() {
                basis_pi[(j, l)] = v;
            }
            for (j, v) in unit_antiderivative_values(km1, x).into_iter().enumerate() {
                anti_pi[(j, l)] = v;
            }
        }
        let w_pi = DMatrix::from_diagonal(&DVector::from_column_slice(rule_pi.weights()));
        let proj_to_q = w_pi * basis_pi.transpose() * &basis_q;
        let w_q = DMatrix::from_diagonal(&DVector::from_column_slice(rule_q.weights()));
        let test_q = w_q * basis_q.transpose();
        Ok(Self {
            k,
            rule_q,
            rule_pi,
            anti_pi,
            proj_to_q,
            test_q,
        })
    }

    pub fn from_config(config: &SolverConfig) -> Result<Self> {
        config.validate()?;
        Self::new(config.k, config.s_q, config.s_pi)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rule_q(&self) -> &QuadratureRule {
        &self.rule_q
    }

    pub fn rule_pi(&self) -> &QuadratureRule {
        &self.rule_pi
    }

    /// `z` at the projection nodes, `dim × s_pi`.
    fn states_at_pi(&self, tau: f64, z_left: &DVector<f64>, d: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = d * &self.anti_pi * tau.sqrt();
        for mut col in z.column_iter_mut() {
            col += z_left;
        }
        z
    }

    fn eta_at_pi<S: PortHamiltonian + ?Sized>(
        &self,
        system: &S,
        a: f64,
        tau: f64,
        z_pi: &DMatrix<f64>,
    ) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(z_pi.nrows(), z_pi.ncols());
        for (l, &x) in self.rule_pi.nodes().iter().enumerate() {
            let eta = system
                .eta(&z_pi.column(l).into_owned())
                .map_err(|e| node_error(a + tau * x, e))?;
            out.set_column(l, &eta);
        }
        Ok(out)
    }

    /// `Π̃η(z)` sampled at the Q nodes, `dim × s_q`.
    pub fn projected_eta_at_q<S: PortHamiltonian + ?Sized>(
        &self,
        system: &S,
        a: f64,
        tau: f64,
        z_left: &DVector<f64>,
        d: &DMatrix<f64>,
    ) -> Result<DMatrix<f64>> {
        let z_pi = self.states_at_pi(tau, z_left, d);
        let eta = self.eta_at_pi(system, a, tau, &z_pi)?;
        Ok(eta * &self.proj_to_q)
    }

    /// The step residual as a `dim × k` matrix.
    pub fn residual<S: PortHamiltonian + ?Sized>(
        &self,
        system: &S,
        a: f64,
        tau: f64,
        z_left: &DVector<f64>,
        d: &DMatrix<f64>,
    ) -> Result<DMatrix<f64>> {
        let v_q = self.projected_eta_at_q(system, a, tau, z_left, d)?;
        let mut f_q = DMatrix::zeros(v_q.nrows(), v_q.ncols());
        for (q, &y) in self.rule_q.nodes().iter().enumerate() {
            let t = a + tau * y;
            let f = rhs(system, t, &v_q.column(q).into_owned()).map_err(|e| node_error(t, e))?;
            f_q.set_column(q, &f);
        }
        let lhs = match system.mass() {
            Some(m) => m * d,
            None => d.clone(),
        };
        Ok(lhs - f_q * &self.test_q * tau.sqrt())
    }

    /// Jacobian of the flattened residual by forward differences.
    fn fd_jacobian<S: PortHamiltonian + ?Sized>(
        &self,
        system: &S,
        a: f64,
        tau: f64,
        z_left: &DVector<f64>,
        d: &DMatrix<f64>,
        res: &DMatrix<f64>,
        rel_step: f64,
    ) -> Result<DMatrix<f64>> {
        let n = d.len();
        let mut jac = DMatrix::zeros(n, n);
        let mut dp = d.clone();
        for c in 0..n {
            let h = rel_step * (1.0 + d[c].abs());
            dp[c] = d[c] + h;
            let rp = self.residual(system, a, tau, z_left, &dp)?;
            dp[c] = d[c];
            let col = (rp - res) / h;
            jac.column_mut(c).copy_from_slice(col.as_slice());
        }
        Ok(jac)
    }

    /// Jacobian of the flattened residual by the chain rule through the
    /// system's closed-form derivatives.
    fn analytic_jacobian<S: PortHamiltonian + ?Sized>(
        &self,
        system: &S,
        a: f64,
        tau: f64,
        z_left: &DVector<f64>,
        d: &DMatrix<f64>,
    ) -> Result<DMatrix<f64>> {
        let dim = d.nrows();
        let k = self.k;
        let s_pi = self.rule_pi.len();
        let s_q = self.rule_q.len();
        let z_pi = self.states_at_pi(tau, z_left, d);
        let mut eta_pi = DMatrix::zeros(dim, s_pi);
        let mut jeta = Vec::with_capacity(s_pi);
        for (l, &x) in self.rule_pi.nodes().iter().enumerate() {
            let z = z_pi.column(l).into_owned();
            let t = a + tau * x;
            eta_pi.set_column(l, &system.eta(&z).map_err(|e| node_error(t, e))?);
            let je = system
                .eta_jacobian(&z)
                .ok_or_else(|| CpgError::MissingJacobian("eta_jacobian".into()))?
                .map_err(|e| node_error(t, e))?;
            jeta.push(je);
        }
        let v_q = &eta_pi * &self.proj_to_q;

        let mut jac = DMatrix::zeros(dim * k, dim * k);
        if let Some(m) = system.mass() {
            for i in 0..k {
                jac.view_mut((i * dim, i * dim), (dim, dim)).copy_from(m);
            }
        } else {
            for i in 0..dim * k {
                jac[(i, i)] = 1.0;
            }
        }
        for (q, &y) in self.rule_q.nodes().iter().enumerate() {
            let t = a + tau * y;
            let jf = system
                .rhs_jacobian(t, &v_q.column(q).into_owned())
                .ok_or_else(|| CpgError::MissingJacobian("rhs_jacobian".into()))?
                .map_err(|e| node_error(t, e))?;
            for j in 0..k {
                // ∂v_q / ∂d_{·,j} = sqrt(tau) Σ_l P_lq Â_j(x_l) Jη_l
                let mut g = DMatrix::zeros(dim, dim);
                for (l, je) in jeta.iter().enumerate() {
                    let c = self.proj_to_q[(l, q)] * self.anti_pi[(j, l)];
                    if c != 0.0 {
                        g += je * c;
                    }
                }
                let h = &jf * g;
                for i in 0..k {
                    let c = tau * self.test_q[(q, i)];
                    if c != 0.0 {
                        let mut block = jac.view_mut((i * dim, j * dim), (dim, dim));
                        block -= &h * c;
                    }
                }
            }
        }
        let _ = s_q;
        Ok(jac)
    }

    fn jacobian<S: PortHamiltonian + ?Sized>(
        &self,
        system: &S,
        a: f64,
        tau: f64,
        z_left: &DVector<f64>,
        d: &DMatrix<f64>,
        res: &DMatrix<f64>,
        config: &SolverConfig,
    ) -> Result<DMatrix<f64>> {
        match config.jacobian_mode {
            JacobianMode::FiniteDifference => {
                self.fd_jacobian(system, a, tau, z_left, d, res, config.fd_rel_step)
            }
            JacobianMode::Analytic => self.analytic_jacobian(system, a, tau, z_left, d),
        }
    }

    /// Newton iteration for the step unknowns from `guess`.
    pub fn solve_step<S: PortHamiltonian + ?Sized>(
        &self,
        system: &S,
        a: f64,
        b: f64,
        z_left: &DVector<f64>,
        guess: DMatrix<f64>,
        config: &SolverConfig,
    ) -> Result<StepResult> {
        let tau = b - a;
        let mut d = guess;
        let mut best = (d.clone(), f64::INFINITY);
        for iter in 0..=config.newton_max_iter {
            let res = self.residual(system, a, tau, z_left, &d)?;
            let norm = res.amax();
            if !norm.is_finite() {
                return Err(CpgError::NonFinite(format!(
                    "step residual on [{a}, {b}] at Newton iteration {iter}"
                )));
            }
            if norm < best.1 {
                best = (d.clone(), norm);
            }
            if norm <= config.newton_tol {
                return Ok(StepResult {
                    d,
                    iters: iter,
                    residual_norm: norm,
                });
            }
            if iter == config.newton_max_iter {
                break;
            }
            let jac = self.jacobian(system, a, tau, z_left, &d, &res, config)?;
            let rhs_vec = DVector::from_column_slice(res.as_slice());
            let delta = jac
                .lu()
                .solve(&rhs_vec)
                .ok_or(CpgError::SingularJacobian { iter })?;
            if delta.iter().any(|x| !x.is_finite()) {
                return Err(CpgError::SingularJacobian { iter });
            }
            for (di, dx) in d.iter_mut().zip(delta.iter()) {
                *di -= dx;
            }
        }
        Err(CpgError::NonConvergence {
            iters: config.newton_max_iter,
            residual: best.1,
            best: best.0.as_slice().to_vec(),
        })
    }

    /// Builds the trial segment from step unknowns.
    pub fn segment(&self, a: f64, b: f64, z_left: &DVector<f64>, d: &DMatrix<f64>) -> Result<SegmentPoly> {
        let dseg = SegmentPoly::new(a, b, d.clone())?;
        SegmentPoly::antiderivative_from_left(&dseg, z_left)
    }
}

fn node_error(t: f64, e: CpgError) -> CpgError {
    match e {
        CpgError::DomainAtNode { .. } => e,
        other => CpgError::DomainAtNode {
            t,
            message: other.to_string(),
        },
    }
}

/// Converged step unknowns and Newton statistics.
#[derive(Clone, Debug)]
pub struct StepResult {
    /// Coefficients of `ż` in the degree-`(k-1)` basis, `dim × k`.
    pub d: DMatrix<f64>,
    pub iters: usize,
    pub residual_norm: f64,
}

/// Reference residual built literally from segment operations:
/// antidifferentiate `d`, project η with the `s_pi` rule, test against
/// each `e_a L_j` with the `s_q` rule. Returns a `dim × k` matrix.
pub fn assemble_local_residual<S: PortHamiltonian + ?Sized>(
    system: &S,
    a: f64,
    b: f64,
    z_left: &DVector<f64>,
    d: &DMatrix<f64>,
    config: &SolverConfig,
) -> Result<DMatrix<f64>> {
    config.validate()?;
    if d.ncols() != config.k || d.nrows() != system.dim() {
        return Err(CpgError::ShapeMismatch {
            expected: format!("{}×{}", system.dim(), config.k),
            got: format!("{}×{}", d.nrows(), d.ncols()),
        });
    }
    let rule_q = gauss_legendre_unit(config.s_q)?;
    let rule_pi = gauss_legendre_unit(config.s_pi)?;
    let dseg = SegmentPoly::new(a, b, d.clone())?;
    let z_seg = SegmentPoly::antiderivative_from_left(&dseg, z_left)?;
    let v_seg = project_eta_of_segment(&z_seg, system, &rule_pi)?;
    let mut res = DMatrix::zeros(system.dim(), config.k);
    for j in 0..config.k {
        let dj = DVector::from_column_slice(d.column(j).as_slice());
        res.set_column(j, &apply_mass(system, &dj));
    }
    let tau = b - a;
    for (q, t) in rule_q.map_nodes(a, b)?.into_iter().enumerate() {
        let v = v_seg.eval(t)?;
        let f = rhs(system, t, &v).map_err(|e| node_error(t, e))?;
        let lj = unit_values(config.k - 1, rule_q.nodes()[q]);
        for j in 0..config.k {
            let w = tau * rule_q.weights()[q] * lj[j] / tau.sqrt();
            for a_ in 0..system.dim() {
                res[(a_, j)] -= w * f[a_];
            }
        }
    }
    Ok(res)
}

/// Solves one step from `d = 0`.
pub fn newton_step_solve<S: PortHamiltonian + ?Sized>(
    system: &S,
    a: f64,
    b: f64,
    z_left: &DVector<f64>,
    config: &SolverConfig,
) -> Result<StepResult> {
    let scheme = LocalScheme::from_config(config)?;
    let guess = DMatrix::zeros(system.dim(), config.k);
    scheme.solve_step(system, a, b, z_left, guess, config)
}

/// Integrates from `z0` over `partition`.
///
/// The first step starts Newton from `d = 0` (the constant trajectory
/// `z ≡ z0`); later steps start from the previous step's `d`.
pub fn integrate<S: PortHamiltonian + ?Sized>(
    system: &S,
    z0: &DVector<f64>,
    partition: &TimePartition,
    config: &SolverConfig,
) -> Result<CpgSolution> {
    let scheme = LocalScheme::from_config(config)?;
    if z0.len() != system.dim() {
        return Err(CpgError::ShapeMismatch {
            expected: format!("initial datum of length {}", system.dim()),
            got: format!("length {}", z0.len()),
        });
    }
    if z0.iter().any(|x| !x.is_finite()) {
        return Err(CpgError::NonFinite("initial datum".into()));
    }
    let m = partition.num_steps();
    let mut sol = CpgSolution {
        partition: partition.clone(),
        segments: Vec::with_capacity(m),
        newton_iters: Vec::with_capacity(m),
        residual_norms: Vec::with_capacity(m),
        k: config.k,
        s_q: config.s_q,
        s_pi: config.s_pi,
    };
    let mut z_left = z0.clone();
    let mut guess = DMatrix::zeros(system.dim(), config.k);
    for i in 1..=m {
        let (a, b) = partition.interval(i);
        let step = match scheme.solve_step(system, a, b, &z_left, guess.clone(), config) {
            Ok(s) => s,
            Err(e) => {
                return Err(CpgError::StepFailed {
                    step: i,
                    source: Box::new(e),
                    partial: Box::new(sol),
                })
            }
        };
        let seg = scheme.segment(a, b, &z_left, &step.d)?;
        // z(b) = z_left + sqrt(tau) d_0, since ∫_0^1 L̂_j = δ_j0
        z_left += step.d.column(0) * (b - a).sqrt();
        sol.segments.push(seg);
        sol.newton_iters.push(step.iters);
        sol.residual_norms.push(step.residual_norm);
        guess = step.d;
    }
    Ok(sol)
}

/// Dense evaluation of a solution.
pub fn eval_solution(sol: &CpgSolution, t: f64) -> Result<DVector<f64>> {
    sol.eval(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// ż = A z with quadratic H = |z|²/2, so η = id and rhs(v) = A v.
    struct Linear {
        a: DMatrix<f64>,
    }

    impl PortHamiltonian for Linear {
        fn dim(&self) -> usize {
            self.a.nrows()
        }
        fn hamiltonian(&self, z: &DVector<f64>) -> Result<f64> {
            Ok(0.5 * z.norm_squared())
        }
        fn eta(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(z.clone())
        }
        fn j_apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
            let skew = (&self.a - self.a.transpose()) * 0.5;
            Ok(skew * v)
        }
        fn r_apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
            let sym = (&self.a + self.a.transpose()) * -0.5;
            Ok(sym * v)
        }
        fn b_apply(&self, _t: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(DVector::zeros(v.len()))
        }
        fn eta_jacobian(&self, z: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
            Some(Ok(DMatrix::identity(z.len(), z.len())))
        }
        fn rhs_jacobian(&self, _t: f64, _v: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
            Some(Ok(self.a.clone()))
        }
    }

    fn decay() -> Linear {
        Linear {
            a: DMatrix::from_element(1, 1, -1.0),
        }
    }

    #[test]
    fn partition_basics() {
        let p = TimePartition::uniform(0.0, 5.0, 20).unwrap();
        assert_eq!(p.num_steps(), 20);
        assert_eq!(p.end(), 5.0);
        assert_relative_eq!(p.tau(), 0.25, epsilon = 1e-15);
        assert_eq!(p.locate(0.0).unwrap(), 1);
        assert_eq!(p.locate(0.25).unwrap(), 1);
        assert_eq!(p.locate(0.26).unwrap(), 2);
        assert_eq!(p.locate(5.0).unwrap(), 20);
        assert!(p.locate(5.1).is_err());
        assert!(TimePartition::new(vec![0.0, 1.0, 1.0]).is_err());
        assert!(TimePartition::uniform_step(0.0, 5.0, 0.3).is_err());
        assert_eq!(TimePartition::uniform_step(0.0, 5.0, 0.125).unwrap().num_steps(), 40);
    }

    #[test]
    fn zero_rhs_residual_vanishes() {
        let sys = Linear {
            a: DMatrix::zeros(2, 2),
        };
        let cfg = SolverConfig::new(3);
        let z = DVector::from_vec(vec![1.0, 2.0]);
        let r = assemble_local_residual(&sys, 0.0, 0.5, &z, &DMatrix::zeros(2, 3), &cfg).unwrap();
        assert_eq!(r.amax(), 0.0);
        let s = newton_step_solve(&sys, 0.0, 0.5, &z, &cfg).unwrap();
        assert!(s.iters <= 1);
        assert_eq!(s.d.amax(), 0.0);
    }

    #[test]
    fn scalar_decay_midpoint_formula() {
        let cfg = SolverConfig::new(1).with_nodes(1, 1);
        let z0 = DVector::from_element(1, 1.3);
        for tau in [0.5, 0.1, 0.01] {
            let s = newton_step_solve(&decay(), 0.0, tau, &z0, &cfg).unwrap();
            let z1 = z0[0] + tau.sqrt() * s.d[(0, 0)];
            let expect = z0[0] * (1.0 - tau / 2.0) / (1.0 + tau / 2.0);
            assert!((z1 - expect).abs() <= 1e-13, "tau={tau}");
        }
    }

    #[test]
    fn fast_residual_matches_reference() {
        let sys = Linear {
            a: DMatrix::from_row_slice(3, 3, &[-0.1, 1.0, 0.2, -1.0, -0.3, 0.5, 0.0, -0.5, -0.2]),
        };
        for (k, sq, spi) in [(1, 1, 1), (2, 3, 2), (3, 2, 4), (4, 4, 5)] {
            let cfg = SolverConfig::new(k).with_nodes(sq, spi);
            let scheme = LocalScheme::from_config(&cfg).unwrap();
            let z = DVector::from_vec(vec![0.3, -0.7, 1.1]);
            let d = DMatrix::from_fn(3, k, |i, j| 0.1 * (i as f64 + 1.0) - 0.05 * j as f64);
            let r1 = assemble_local_residual(&sys, 0.4, 0.65, &z, &d, &cfg).unwrap();
            let r2 = scheme.residual(&sys, 0.4, 0.25, &z, &d).unwrap();
            assert!((r1 - r2).amax() <= 1e-14, "k={k}");
        }
    }

    #[test]
    fn analytic_and_fd_jacobians_agree() {
        let sys = Linear {
            a: DMatrix::from_row_slice(2, 2, &[-0.2, 1.0, -1.0, 0.0]),
        };
        let cfg = SolverConfig::new(3).with_nodes(3, 4);
        let scheme = LocalScheme::from_config(&cfg).unwrap();
        let z = DVector::from_vec(vec![0.3, -0.7]);
        let d = DMatrix::from_fn(2, 3, |i, j| 0.2 * i as f64 - 0.1 * j as f64);
        let res = scheme.residual(&sys, 0.0, 0.3, &z, &d).unwrap();
        let fd = scheme.fd_jacobian(&sys, 0.0, 0.3, &z, &d, &res, 1e-7).unwrap();
        let an = scheme.analytic_jacobian(&sys, 0.0, 0.3, &z, &d).unwrap();
        assert!((fd - an).amax() <= 1e-6);
    }

    #[test]
    fn constant_trajectory() {
        let sys = Linear {
            a: DMatrix::zeros(3, 3),
        };
        let z0 = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let p = TimePartition::uniform(0.0, 1.0, 7).unwrap();
        for k in 1..=4 {
            let sol = integrate(&sys, &z0, &p, &SolverConfig::new(k)).unwrap();
            assert!(sol.newton_iters.iter().all(|&n| n <= 1));
            for t in [0.0, 0.3, 0.5, 1.0] {
                assert_relative_eq!(sol.eval(t).unwrap(), z0.clone(), epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn eval_endpoints() {
        let sys = decay();
        let z0 = DVector::from_element(1, 2.0);
        let p = TimePartition::uniform(0.0, 1.0, 4).unwrap();
        let sol = integrate(&sys, &z0, &p, &SolverConfig::new(2)).unwrap();
        assert_relative_eq!(sol.eval(0.0).unwrap()[0], 2.0, epsilon = 1e-15);
        let last = sol.segments.last().unwrap().right_value();
        assert_eq!(sol.eval(1.0).unwrap(), last);
        assert!(sol.eval(1.5).is_err());
        assert!(sol.eval(-0.1).is_err());
        assert!(sol.continuity_defect() <= 1e-14);
        assert!(sol.initial_defect(&z0) <= 1e-15);
    }

    #[test]
    fn nonconvergence_reports_best_iterate() {
        let sys = decay();
        let mut cfg = SolverConfig::new(2);
        cfg.newton_max_iter = 1;
        cfg.newton_tol = 1e-300;
        let err = newton_step_solve(&sys, 0.0, 0.1, &DVector::from_element(1, 1.0), &cfg).unwrap_err();
        match err {
            CpgError::NonConvergence { iters, best, .. } => {
                assert_eq!(iters, 1);
                assert_eq!(best.len(), 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn step_failure_carries_partial_trajectory() {
        struct Blowup;
        impl PortHamiltonian for Blowup {
            fn dim(&self) -> usize {
                1
            }
            fn hamiltonian(&self, z: &DVector<f64>) -> Result<f64> {
                Ok(0.5 * z[0] * z[0])
            }
            fn eta(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
                if z[0] > 1.5 {
                    Err(CpgError::Domain("state above 1.5".into()))
                } else {
                    Ok(z.clone())
                }
            }
            fn j_apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
                Ok(v * 0.0)
            }
            fn r_apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
                Ok(v * 0.0)
            }
            fn b_apply(&self, _t: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
                Ok(DVector::from_element(v.len(), 1.0))
            }
        }
        let p = TimePartition::uniform(0.0, 2.0, 8).unwrap();
        let err = integrate(&Blowup, &DVector::zeros(1), &p, &SolverConfig::new(1)).unwrap_err();
        match err {
            CpgError::StepFailed { step, partial, source } => {
                assert!(step > 1);
                assert_eq!(partial.segments.len(), step - 1);
                assert!(matches!(*source, CpgError::DomainAtNode { .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
