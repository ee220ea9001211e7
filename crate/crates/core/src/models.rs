//! Experiment systems: damped Toda lattice, spinning rigid body, and a
//! mixed finite element semi-discretization of a damped quasilinear wave
//! equation in one space dimension.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{CpgError, Result};
use crate::quadrature::{gauss_legendre_unit, QuadratureRule};
use crate::system::PortHamiltonian;

/// A scalar function of time (controls, boundary data).
pub type TimeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

pub fn time_fn<F: Fn(f64) -> f64 + Send + Sync + 'static>(f: F) -> TimeFn {
    Arc::new(f)
}

pub fn zero_control() -> TimeFn {
    time_fn(|_| 0.0)
}

fn check_len(v: &DVector<f64>, n: usize) -> Result<()> {
    if v.len() != n {
        return Err(CpgError::ShapeMismatch {
            expected: format!("vector of length {n}"),
            got: format!("length {}", v.len()),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Toda lattice

#[derive(Clone, Debug, PartialEq)]
pub struct TodaParams {
    /// Number of particles.
    pub n: usize,
    /// Per-particle damping, `γ_i >= 0`.
    pub gamma: Vec<f64>,
}

impl TodaParams {
    pub fn uniform(n: usize, gamma: f64) -> Self {
        Self {
            n,
            gamma: vec![gamma; n],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(CpgError::InvalidArgument("Toda lattice needs N >= 1".into()));
        }
        if self.gamma.len() != self.n {
            return Err(CpgError::InvalidArgument(format!(
                "expected {} damping values, got {}",
                self.n,
                self.gamma.len()
            )));
        }
        if self.gamma.iter().any(|g| !(*g >= 0.0)) {
            return Err(CpgError::InvalidArgument("damping must be nonnegative".into()));
        }
        Ok(())
    }
}

/// State `z = (q, p)`, `H = Σ p²/2 + Σ_{k<N} exp(q_k - q_{k+1}) + exp(q_N) - q_1 - N`.
/// Control enters the momentum of the first particle.
#[derive(Clone)]
pub struct Toda {
    params: TodaParams,
    u: TimeFn,
}

impl fmt::Debug for Toda {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Toda").field("params", &self.params).finish()
    }
}

pub fn make_toda(params: TodaParams, u: TimeFn) -> Result<Toda> {
    params.validate()?;
    Ok(Toda { params, u })
}

impl Toda {
    pub fn params(&self) -> &TodaParams {
        &self.params
    }
}

impl PortHamiltonian for Toda {
    fn dim(&self) -> usize {
        2 * self.params.n
    }

    fn hamiltonian(&self, z: &DVector<f64>) -> Result<f64> {
        check_len(z, self.dim())?;
        let n = self.params.n;
        let (q, p) = (z.rows(0, n), z.rows(n, n));
        let kinetic = 0.5 * p.norm_squared();
        let springs: f64 = (0..n - 1).map(|k| (q[k] - q[k + 1]).exp()).sum();
        Ok(kinetic + springs + q[n - 1].exp() - q[0] - n as f64)
    }

    fn eta(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(z, self.dim())?;
        let n = self.params.n;
        let mut out = DVector::zeros(2 * n);
        for k in 0..n - 1 {
            let e = (z[k] - z[k + 1]).exp();
            out[k] += e;
            out[k + 1] -= e;
        }
        out[n - 1] += z[n - 1].exp();
        out[0] -= 1.0;
        for k in 0..n {
            out[n + k] = z[n + k];
        }
        Ok(out)
    }

    fn j_apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(v, self.dim())?;
        let n = self.params.n;
        let mut out = DVector::zeros(2 * n);
        for k in 0..n {
            out[k] = v[n + k];
            out[n + k] = -v[k];
        }
        Ok(out)
    }

    fn r_apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(v, self.dim())?;
        let n = self.params.n;
        let mut out = DVector::zeros(2 * n);
        for k in 0..n {
            out[n + k] = self.params.gamma[k] * v[n + k];
        }
        Ok(out)
    }

    fn b_apply(&self, t: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(v, self.dim())?;
        let mut out = DVector::zeros(self.dim());
        out[self.params.n] = (self.u)(t);
        Ok(out)
    }

    fn eta_jacobian(&self, z: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        if let Err(e) = check_len(z, self.dim()) {
            return Some(Err(e));
        }
        let n = self.params.n;
        let mut h = DMatrix::zeros(2 * n, 2 * n);
        for k in 0..n - 1 {
            let e = (z[k] - z[k + 1]).exp();
            h[(k, k)] += e;
            h[(k + 1, k + 1)] += e;
            h[(k, k + 1)] -= e;
            h[(k + 1, k)] -= e;
        }
        h[(n - 1, n - 1)] += z[n - 1].exp();
        for k in 0..n {
            h[(n + k, n + k)] = 1.0;
        }
        Some(Ok(h))
    }

    fn rhs_jacobian(&self, _t: f64, _v: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        let n = self.params.n;
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        for k in 0..n {
            m[(k, n + k)] = 1.0;
            m[(n + k, k)] = -1.0;
            m[(n + k, n + k)] = -self.params.gamma[k];
        }
        Some(Ok(m))
    }
}

// ---------------------------------------------------------------------------
// Spinning rigid body

#[derive(Clone, Debug, PartialEq)]
pub struct RigidBodyParams {
    /// Principal moments of inertia, all positive.
    pub inertia: [f64; 3],
    /// Torque axis.
    pub axis: [f64; 3],
}

impl Default for RigidBodyParams {
    fn default() -> Self {
        Self {
            inertia: [1.0; 3],
            axis: [1.0; 3],
        }
    }
}

impl RigidBodyParams {
    pub fn validate(&self) -> Result<()> {
        if self.inertia.iter().any(|i| !(*i > 0.0 && i.is_finite())) {
            return Err(CpgError::InvalidArgument(
                "moments of inertia must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Angular momenta `z`, `H = ½ zᵀ Q z` with `Q = diag(1/I)`, conservative
/// part `J(v) = (Q⁻¹ v) × v` and torque `B(t, v) = axis · u(t)`.
#[derive(Clone)]
pub struct RigidBody {
    params: RigidBodyParams,
    u: TimeFn,
}

impl fmt::Debug for RigidBody {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RigidBody").field("params", &self.params).finish()
    }
}

pub fn make_rigid_body(params: RigidBodyParams, u: TimeFn) -> Result<RigidBody> {
    params.validate()?;
    Ok(RigidBody { params, u })
}

fn cross(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_vec(vec![
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ])
}

fn cross_matrix(a: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 3, &[0.0, -a[2], a[1], a[2], 0.0, -a[0], -a[1], a[0], 0.0])
}

impl PortHamiltonian for RigidBody {
    fn dim(&self) -> usize {
        3
    }

    fn hamiltonian(&self, z: &DVector<f64>) -> Result<f64> {
        check_len(z, 3)?;
        Ok(0.5 * (0..3).map(|i| z[i] * z[i] / self.params.inertia[i]).sum::<f64>())
    }

    fn eta(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(z, 3)?;
        Ok(DVector::from_fn(3, |i, _| z[i] / self.params.inertia[i]))
    }

    fn j_apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(v, 3)?;
        let z = DVector::from_fn(3, |i, _| self.params.inertia[i] * v[i]);
        Ok(cross(&z, v))
    }

    fn r_apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(v, 3)?;
        Ok(DVector::zeros(3))
    }

    fn b_apply(&self, t: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(v, 3)?;
        let u = (self.u)(t);
        Ok(DVector::from_fn(3, |i, _| self.params.axis[i] * u))
    }

    fn eta_jacobian(&self, _z: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        Some(Ok(DMatrix::from_fn(3, 3, |i, j| {
            if i == j {
                1.0 / self.params.inertia[i]
            } else {
                0.0
            }
        })))
    }

    fn rhs_jacobian(&self, _t: f64, v: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        // d/dv [(I v) × v] = [I v]_× - [v]_× diag(I)
        let z = DVector::from_fn(3, |i, _| self.params.inertia[i] * v[i]);
        let inertia = DMatrix::from_fn(3, 3, |i, j| if i == j { self.params.inertia[i] } else { 0.0 });
        Some(Ok(cross_matrix(&z) - cross_matrix(v) * inertia))
    }
}

// ---------------------------------------------------------------------------
// Damped quasilinear wave equation

#[derive(Clone, Debug, PartialEq)]
pub struct WaveParams {
    /// Interior grid points.
    pub n: usize,
    /// Domain length.
    pub ell: f64,
    /// Friction coefficient.
    pub gamma: f64,
    /// Viscosity.
    pub nu: f64,
    /// Gauss nodes per space cell for the friction matrix.
    pub rf_quad_nodes: usize,
}

impl Default for WaveParams {
    fn default() -> Self {
        Self {
            n: 10,
            ell: 10.0,
            gamma: 0.1,
            nu: 0.0,
            rf_quad_nodes: 10,
        }
    }
}

impl WaveParams {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(CpgError::InvalidArgument("wave needs N >= 1".into()));
        }
        if !(self.ell > 0.0 && self.ell.is_finite()) {
            return Err(CpgError::InvalidArgument("domain length must be positive".into()));
        }
        if !(self.gamma >= 0.0) || !(self.nu >= 0.0) {
            return Err(CpgError::InvalidArgument(
                "friction and viscosity must be nonnegative".into(),
            ));
        }
        if self.rf_quad_nodes == 0 {
            return Err(CpgError::InvalidArgument(
                "friction quadrature needs at least one node".into(),
            ));
        }
        Ok(())
    }

    /// Mesh width `ell / (N + 1)`.
    pub fn h(&self) -> f64 {
        self.ell / (self.n + 1) as f64
    }

    /// State dimension `2N + 3`.
    pub fn dim(&self) -> usize {
        2 * self.n + 3
    }
}

/// Pressure law `p(ρ) = ρ + ρ³`.
pub fn pressure(rho: f64) -> f64 {
    rho + rho * rho * rho
}

/// Friction weight `ψ(v) = (1 + v²) / sqrt(1 + v²)`, evaluated as `sqrt(1 + v²)`.
pub fn friction_weight(v: f64) -> f64 {
    (1.0 + v * v).sqrt()
}

/// Friction law `F(v) = (v + v³) / sqrt(1 + v²) = ψ(v) v`.
pub fn friction_law(v: f64) -> f64 {
    friction_weight(v) * v
}

fn friction_law_derivative(v: f64) -> f64 {
    (1.0 + 2.0 * v * v) / (1.0 + v * v).sqrt()
}

/// Semi-discrete wave system. State `w = (w₁, w₂)`: `w₁ ∈ R^{N+1}` holds
/// cellwise constant densities, `w₂ ∈ R^{N+2}` nodal P1 velocities.
#[derive(Clone)]
pub struct DampedWave {
    params: WaveParams,
    h: f64,
    /// `C_h = blockdiag(h I, h M)`.
    mass: DMatrix<f64>,
    /// Unit-scaled P1 mass matrix `M`.
    p1_mass: DMatrix<f64>,
    /// P1 stiffness matrix `R_ν`.
    stiffness: DMatrix<f64>,
    /// Forward-difference matrix `D`, `(N+1) × (N+2)`.
    diff: DMatrix<f64>,
    rule: QuadratureRule,
    g0: TimeFn,
    gl: TimeFn,
}

impl fmt::Debug for DampedWave {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DampedWave").field("params", &self.params).finish()
    }
}

pub fn make_damped_wave(params: WaveParams, g0: TimeFn, gl: TimeFn) -> Result<DampedWave> {
    params.validate()?;
    let n = params.n;
    let h = params.h();
    let nr = n + 1;
    let nv = n + 2;
    let mut p1_mass = DMatrix::zeros(nv, nv);
    let mut stiffness = DMatrix::zeros(nv, nv);
    let mut diff = DMatrix::zeros(nr, nv);
    for c in 0..nr {
        let local_mass = [[1.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 3.0]];
        let local_stiff = [[1.0 / h, -1.0 / h], [-1.0 / h, 1.0 / h]];
        for a in 0..2 {
            for b in 0..2 {
                p1_mass[(c + a, c + b)] += local_mass[a][b];
                stiffness[(c + a, c + b)] += local_stiff[a][b];
            }
        }
        diff[(c, c)] = -1.0;
        diff[(c, c + 1)] = 1.0;
    }
    let mut mass = DMatrix::zeros(nr + nv, nr + nv);
    for i in 0..nr {
        mass[(i, i)] = h;
    }
    mass.view_mut((nr, nr), (nv, nv)).copy_from(&(&p1_mass * h));
    let rule = gauss_legendre_unit(params.rf_quad_nodes)?;
    Ok(DampedWave {
        params,
        h,
        mass,
        p1_mass,
        stiffness,
        diff,
        rule,
        g0,
        gl,
    })
}

impl DampedWave {
    pub fn params(&self) -> &WaveParams {
        &self.params
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn p1_mass(&self) -> &DMatrix<f64> {
        &self.p1_mass
    }

    pub fn stiffness(&self) -> &DMatrix<f64> {
        &self.stiffness
    }

    pub fn difference(&self) -> &DMatrix<f64> {
        &self.diff
    }

    /// Cell midpoints `(i + ½) h`, where densities live.
    pub fn cell_midpoints(&self) -> Vec<f64> {
        (0..=self.params.n).map(|i| (i as f64 + 0.5) * self.h).collect()
    }

    /// Grid points `i h`, `i = 0..=N+1`, where velocities live.
    pub fn grid_points(&self) -> Vec<f64> {
        (0..self.params.n + 2).map(|i| i as f64 * self.h).collect()
    }

    /// State built from point values: `rho` at cell midpoints, `v` at grid points.
    pub fn sample_state(&self, rho: impl Fn(f64) -> f64, v: impl Fn(f64) -> f64) -> DVector<f64> {
        let vals: Vec<f64> = self
            .cell_midpoints()
            .into_iter()
            .map(rho)
            .chain(self.grid_points().into_iter().map(v))
            .collect();
        DVector::from_vec(vals)
    }

    fn split<'a>(&self, w: &'a DVector<f64>) -> (nalgebra::DVectorView<'a, f64>, nalgebra::DVectorView<'a, f64>) {
        let nr = self.params.n + 1;
        (w.rows(0, nr), w.rows(nr, nr + 1))
    }

    /// Per-cell quadrature: calls `f(cell, s, weight, v_h(s))` for every
    /// Gauss point `s` in unit cell coordinates.
    fn for_each_cell_point(&self, v: &[f64], mut f: impl FnMut(usize, f64, f64, f64)) {
        for c in 0..=self.params.n {
            for (&s, &w) in self.rule.nodes().iter().zip(self.rule.weights()) {
                let vh = v[c] * (1.0 - s) + v[c + 1] * s;
                f(c, s, w, vh);
            }
        }
    }

    /// Friction matrix `R_F(v)`: P1 mass matrix weighted by `ψ(v_h)`.
    pub fn friction_matrix(&self, v: &[f64]) -> DMatrix<f64> {
        let nv = self.params.n + 2;
        let mut out = DMatrix::zeros(nv, nv);
        let h = self.h;
        self.for_each_cell_point(v, |c, s, w, vh| {
            let phi = [1.0 - s, s];
            let psi = friction_weight(vh);
            for a in 0..2 {
                for b in 0..2 {
                    out[(c + a, c + b)] += h * w * psi * phi[a] * phi[b];
                }
            }
        });
        out
    }

    /// `R_F(v) v`, without assembling the matrix.
    fn friction_action(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        let h = self.h;
        self.for_each_cell_point(v, |c, s, w, vh| {
            let g = h * w * friction_weight(vh) * vh;
            out[c] += g * (1.0 - s);
            out[c + 1] += g * s;
        });
        out
    }

    /// P1 load vector of `F(v_h)` by direct quadrature.
    pub fn friction_load(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        let h = self.h;
        self.for_each_cell_point(v, |c, s, w, vh| {
            let g = h * w * friction_law(vh);
            out[c] += g * (1.0 - s);
            out[c + 1] += g * s;
        });
        out
    }

    fn friction_jacobian(&self, v: &[f64]) -> DMatrix<f64> {
        let nv = v.len();
        let mut out = DMatrix::zeros(nv, nv);
        let h = self.h;
        self.for_each_cell_point(v, |c, s, w, vh| {
            let phi = [1.0 - s, s];
            let dpsi = friction_law_derivative(vh);
            for a in 0..2 {
                for b in 0..2 {
                    out[(c + a, c + b)] += h * w * dpsi * phi[a] * phi[b];
                }
            }
        });
        out
    }
}

impl PortHamiltonian for DampedWave {
    fn dim(&self) -> usize {
        self.params.dim()
    }

    fn hamiltonian(&self, w: &DVector<f64>) -> Result<f64> {
        check_len(w, self.dim())?;
        let (rho, v) = self.split(w);
        let density: f64 = rho.iter().map(|r| 0.5 * r * r + 0.25 * r.powi(4)).sum();
        let kinetic = 0.5 * v.dot(&(&self.p1_mass * v));
        Ok(self.h * (density + kinetic))
    }

    fn eta(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(w, self.dim())?;
        let nr = self.params.n + 1;
        let mut out = w.clone();
        for i in 0..nr {
            out[i] = pressure(w[i]);
        }
        Ok(out)
    }

    fn j_apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(x, self.dim())?;
        let (x1, x2) = self.split(x);
        let top = -(&self.diff * x2);
        let bottom = self.diff.transpose() * x1;
        Ok(DVector::from_iterator(
            self.dim(),
            top.iter().chain(bottom.iter()).copied(),
        ))
    }

    fn r_apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(x, self.dim())?;
        let nr = self.params.n + 1;
        let (_, x2) = self.split(x);
        let mut out = DVector::zeros(self.dim());
        let visc = &self.stiffness * x2 * self.params.nu;
        let fric = self.friction_action(x2.as_slice());
        for i in 0..x2.len() {
            out[nr + i] = self.params.gamma * fric[i] + visc[i];
        }
        Ok(out)
    }

    fn b_apply(&self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(x, self.dim())?;
        let nr = self.params.n + 1;
        let mut out = DVector::zeros(self.dim());
        out[nr] += (self.g0)(t);
        out[self.dim() - 1] -= (self.gl)(t);
        Ok(out)
    }

    fn mass(&self) -> Option<&DMatrix<f64>> {
        Some(&self.mass)
    }

    fn eta_jacobian(&self, w: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        if let Err(e) = check_len(w, self.dim()) {
            return Some(Err(e));
        }
        let nr = self.params.n + 1;
        Some(Ok(DMatrix::from_fn(self.dim(), self.dim(), |i, j| {
            if i != j {
                0.0
            } else if i < nr {
                1.0 + 3.0 * w[i] * w[i]
            } else {
                1.0
            }
        })))
    }

    fn rhs_jacobian(&self, _t: f64, x: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        if let Err(e) = check_len(x, self.dim()) {
            return Some(Err(e));
        }
        let nr = self.params.n + 1;
        let nv = nr + 1;
        let (_, x2) = self.split(x);
        let mut m = DMatrix::zeros(self.dim(), self.dim());
        m.view_mut((0, nr), (nr, nv)).copy_from(&(-&self.diff));
        m.view_mut((nr, 0), (nv, nr)).copy_from(&self.diff.transpose());
        let damp = self.friction_jacobian(x2.as_slice()) * self.params.gamma
            + &self.stiffness * self.params.nu;
        m.view_mut((nr, nr), (nv, nv)).copy_from(&(-damp));
        Some(Ok(m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{check_gradient, rhs};
    use approx::assert_relative_eq;

    fn sin2t() -> TimeFn {
        time_fn(|t| (2.0 * t).sin())
    }

    #[test]
    fn toda_zero_state() {
        let sys = make_toda(TodaParams::uniform(5, 0.1), sin2t()).unwrap();
        let z = DVector::zeros(10);
        assert_eq!(sys.hamiltonian(&z).unwrap(), 0.0);
        assert_eq!(sys.eta(&z).unwrap().amax(), 0.0);
        let f = rhs(&sys, 0.0, &sys.eta(&z).unwrap()).unwrap();
        assert_eq!(f.amax(), 0.0);
        assert!(check_gradient(&sys, &z, 1e-5).unwrap() <= 1e-9);
    }

    #[test]
    fn toda_dissipation_form() {
        let sys = make_toda(TodaParams::uniform(3, 0.1), sin2t()).unwrap();
        let v = DVector::from_vec(vec![0.1, -0.4, 2.0, 1.0, -2.0, 0.5]);
        let r = sys.r_apply(&v).unwrap().dot(&v);
        assert_relative_eq!(r, 0.1 * (1.0 + 4.0 + 0.25), epsilon = 1e-15);
        assert!(sys.j_apply(&v).unwrap().dot(&v).abs() <= 1e-15);
    }

    #[test]
    fn toda_param_validation() {
        assert!(make_toda(TodaParams::uniform(0, 0.1), sin2t()).is_err());
        assert!(make_toda(TodaParams::uniform(2, -0.1), sin2t()).is_err());
        let bad = TodaParams {
            n: 3,
            gamma: vec![0.1; 2],
        };
        assert!(make_toda(bad, sin2t()).is_err());
    }

    #[test]
    fn rigid_self_cross_product_vanishes() {
        let sys = make_rigid_body(RigidBodyParams::default(), zero_control()).unwrap();
        let v = DVector::from_element(3, 1.0);
        assert_eq!(sys.j_apply(&v).unwrap(), DVector::zeros(3));
        let f = rhs(&sys, 0.0, &sys.eta(&v).unwrap()).unwrap();
        assert_eq!(f, DVector::zeros(3));
        let bad = RigidBodyParams {
            inertia: [1.0, 0.0, 1.0],
            axis: [1.0; 3],
        };
        assert!(make_rigid_body(bad, zero_control()).is_err());
    }

    #[test]
    fn wave_dimensions_and_matrices() {
        let sys = make_damped_wave(WaveParams::default(), zero_control(), zero_control()).unwrap();
        assert_relative_eq!(sys.h(), 10.0 / 11.0, epsilon = 1e-15);
        assert_eq!(sys.dim(), 23);
        let m = sys.p1_mass();
        assert_relative_eq!(m[(0, 0)], 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(m[(5, 5)], 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(m[(5, 6)], 1.0 / 6.0, epsilon = 1e-15);
        let k = sys.stiffness();
        let h = sys.h();
        assert_relative_eq!(k[(0, 0)], 1.0 / h, epsilon = 1e-14);
        assert_relative_eq!(k[(4, 4)], 2.0 / h, epsilon = 1e-14);
        assert_relative_eq!(k[(4, 5)], -1.0 / h, epsilon = 1e-14);
        let d = sys.difference();
        assert_eq!((d.nrows(), d.ncols()), (11, 12));
        assert_eq!((d[(3, 3)], d[(3, 4)]), (-1.0, 1.0));
        // stiffness annihilates constants
        let ones = DVector::from_element(12, 1.0);
        assert!((k * ones).amax() <= 1e-13);
    }

    #[test]
    fn wave_boundary_supply() {
        let sys = make_damped_wave(WaveParams::default(), time_fn(|t| 1.0 + t), time_fn(|t| 2.0 * t))
            .unwrap();
        let b = sys.b_apply(1.5, &DVector::zeros(23)).unwrap();
        assert_eq!(b[11], 2.5);
        assert_eq!(b[22], -3.0);
        assert_eq!(b.iter().filter(|x| **x != 0.0).count(), 2);
    }

    #[test]
    fn wave_gradient_blocks() {
        let sys = make_damped_wave(WaveParams::default(), zero_control(), zero_control()).unwrap();
        let w = DVector::from_fn(23, |i, _| ((i as f64) * 0.7).sin());
        let grad = sys.mass().unwrap() * sys.eta(&w).unwrap();
        let h = sys.h();
        for i in 0..11 {
            assert_relative_eq!(grad[i], h * (w[i] + w[i].powi(3)), epsilon = 1e-14);
        }
        assert!(check_gradient(&sys, &w, 1e-5).unwrap() <= 1e-6);
    }

    #[test]
    fn wave_friction_consistency() {
        let sys = make_damped_wave(WaveParams::default(), zero_control(), zero_control()).unwrap();
        for seed in 0..3 {
            let v: Vec<f64> = (0..12).map(|i| 3.0 * ((i * 7 + seed * 13) as f64).sin()).collect();
            let rf = sys.friction_matrix(&v) * DVector::from_column_slice(&v);
            let load = sys.friction_load(&v);
            let act = sys.friction_action(&v);
            for i in 0..12 {
                assert!((rf[i] - load[i]).abs() <= 1e-12 * (1.0 + load[i].abs()));
                assert!((act[i] - load[i]).abs() <= 1e-12 * (1.0 + load[i].abs()));
            }
        }
    }

    #[test]
    fn wave_dissipation_nonnegative() {
        for nu in [0.0, 1.0] {
            let params = WaveParams {
                nu,
                ..WaveParams::default()
            };
            let sys = make_damped_wave(params, zero_control(), zero_control()).unwrap();
            let v: Vec<f64> = (0..12).map(|i| 2.0 * (i as f64 * 1.3).cos()).collect();
            let rf = sys.friction_matrix(&v) * 0.1 + sys.stiffness() * nu;
            let eig = rf.symmetric_eigenvalues();
            assert!(eig.min() >= -1e-12);
        }
    }
}
