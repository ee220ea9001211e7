//! The port-Hamiltonian system contract
//!
//! `M ż = J(η(z)) - R(η(z)) + B(t, η(z))`, with `M` a constant SPD mass
//! matrix (identity when absent) and `η = M⁻¹ ∇H`.

use nalgebra::{DMatrix, DVector};

use crate::error::{CpgError, Result};

/// Behavioral interface of an integrable system.
///
/// Implementations must be immutable after construction so a single
/// instance can serve concurrent solves.
pub trait PortHamiltonian: Send + Sync {
    fn dim(&self) -> usize;

    fn hamiltonian(&self, z: &DVector<f64>) -> Result<f64>;

    /// `M⁻¹ ∇H(z)`; equal to the gradient when there is no mass matrix.
    fn eta(&self, z: &DVector<f64>) -> Result<DVector<f64>>;

    /// Conservative part, `⟨J(v), v⟩ = 0`.
    fn j_apply(&self, v: &DVector<f64>) -> Result<DVector<f64>>;

    /// Dissipative part, `⟨R(v), v⟩ >= 0`.
    fn r_apply(&self, v: &DVector<f64>) -> Result<DVector<f64>>;

    /// Supply/control part. Must be a pure function of `(t, v)`.
    fn b_apply(&self, t: f64, v: &DVector<f64>) -> Result<DVector<f64>>;

    fn mass(&self) -> Option<&DMatrix<f64>> {
        None
    }

    /// Jacobian of `η` at `z`, if available in closed form.
    fn eta_jacobian(&self, _z: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        None
    }

    /// Jacobian of `v ↦ J(v) - R(v) + B(t, v)`, if available in closed form.
    fn rhs_jacobian(&self, _t: f64, _v: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        None
    }
}

impl<S: PortHamiltonian + ?Sized> PortHamiltonian for Box<S> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn hamiltonian(&self, z: &DVector<f64>) -> Result<f64> {
        (**self).hamiltonian(z)
    }
    fn eta(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        (**self).eta(z)
    }
    fn j_apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        (**self).j_apply(v)
    }
    fn r_apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        (**self).r_apply(v)
    }
    fn b_apply(&self, t: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
        (**self).b_apply(t, v)
    }
    fn mass(&self) -> Option<&DMatrix<f64>> {
        (**self).mass()
    }
    fn eta_jacobian(&self, z: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        (**self).eta_jacobian(z)
    }
    fn rhs_jacobian(&self, t: f64, v: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        (**self).rhs_jacobian(t, v)
    }
}

/// `J(v) - R(v) + B(t, v)`.
pub fn rhs<S: PortHamiltonian + ?Sized>(system: &S, t: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
    let mut out = system.j_apply(v)?;
    out -= system.r_apply(v)?;
    out += system.b_apply(t, v)?;
    Ok(out)
}

/// `M · x`, or `x` when the system has no mass matrix.
pub fn apply_mass<S: PortHamiltonian + ?Sized>(system: &S, x: &DVector<f64>) -> DVector<f64> {
    match system.mass() {
        Some(m) => m * x,
        None => x.clone(),
    }
}

/// How the Newton solver obtains the Jacobian of the step residual.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum JacobianMode {
    /// Forward differences on the residual.
    #[default]
    FiniteDifference,
    /// Chain rule through the system's closed-form `eta_jacobian` and
    /// `rhs_jacobian`.
    Analytic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    /// Polynomial degree of the trial space.
    pub k: usize,
    /// Gauss nodes of the step quadrature `Q_i`.
    pub s_q: usize,
    /// Gauss nodes used for the projection of η.
    pub s_pi: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Forward-difference step is `fd_rel_step * (1 + |x_i|)`.
    pub fd_rel_step: f64,
    pub jacobian_mode: JacobianMode,
}

impl SolverConfig {
    /// Degree `k` with `s_q = k` and `s_pi = max(k, 3)`.
    pub fn new(k: usize) -> Self {
        Self {
            k,
            s_q: k,
            s_pi: k.max(3),
            newton_tol: 1e-12,
            newton_max_iter: 50,
            fd_rel_step: f64::EPSILON.sqrt(),
            jacobian_mode: JacobianMode::FiniteDifference,
        }
    }

    pub fn with_nodes(mut self, s_q: usize, s_pi: usize) -> Self {
        self.s_q = s_q;
        self.s_pi = s_pi;
        self
    }

    pub fn with_jacobian(mut self, mode: JacobianMode) -> Self {
        self.jacobian_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(CpgError::InvalidArgument("k must be at least 1".into()));
        }
        if self.s_q == 0 || self.s_pi == 0 {
            return Err(CpgError::InvalidArgument(
                "quadrature node counts must be at least 1".into(),
            ));
        }
        if !(self.newton_tol > 0.0) {
            return Err(CpgError::InvalidArgument("newton_tol must be positive".into()));
        }
        if self.newton_max_iter == 0 {
            return Err(CpgError::InvalidArgument(
                "newton_max_iter must be at least 1".into(),
            ));
        }
        if !(self.fd_rel_step > 0.0) {
            return Err(CpgError::InvalidArgument("fd_rel_step must be positive".into()));
        }
        Ok(())
    }
}

/// Max componentwise deviation between `M η(z)` and the central-difference
/// gradient of `H` with step `h (1 + |z_i|)`, relative to `max(|M η|_∞, 1)`.
pub fn check_gradient<S: PortHamiltonian + ?Sized>(system: &S, z: &DVector<f64>, h: f64) -> Result<f64> {
    let g = apply_mass(system, &system.eta(z)?);
    let mut fd = DVector::zeros(z.len());
    let mut zp = z.clone();
    for i in 0..z.len() {
        let step = h * (1.0 + z[i].abs());
        zp[i] = z[i] + step;
        let hp = system.hamiltonian(&zp)?;
        zp[i] = z[i] - step;
        let hm = system.hamiltonian(&zp)?;
        zp[i] = z[i];
        if !(hp.is_finite() && hm.is_finite()) {
            return Err(CpgError::NonFinite(format!(
                "Hamiltonian near component {i} is not finite"
            )));
        }
        fd[i] = (hp - hm) / (2.0 * step);
    }
    let scale = g.amax().max(1.0);
    Ok((g - fd).amax() / scale)
}

/// Worst-case structural violations observed over a set of probes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConformanceReport {
    /// max `|⟨J(v), v⟩| / (|J(v)| |v|)`.
    pub conservativity: f64,
    /// min `⟨R(v), v⟩ / (1 + |v|²)`; should be `>= -1e-12`.
    pub dissipativity: f64,
    /// max result of [`check_gradient`].
    pub gradient: f64,
    /// max asymmetry of the mass matrix (0 when absent).
    pub mass_asymmetry: f64,
    /// whether a Cholesky factorization of the mass matrix succeeded.
    pub mass_spd: bool,
}

impl ConformanceReport {
    pub fn passes(&self) -> bool {
        self.conservativity <= 1e-12
            && self.dissipativity >= -1e-12
            && self.gradient <= 1e-6
            && self.mass_asymmetry <= 1e-13
            && self.mass_spd
    }
}

/// Runs the structural checks on every `(z, v)` probe: `v` for the
/// conservativity/dissipativity checks, `z` for the gradient check.
pub fn conformance<S: PortHamiltonian + ?Sized>(
    system: &S,
    probes: &[(DVector<f64>, DVector<f64>)],
    fd_step: f64,
) -> Result<ConformanceReport> {
    let mut rep = ConformanceReport {
        dissipativity: f64::INFINITY,
        mass_spd: true,
        ..Default::default()
    };
    if let Some(m) = system.mass() {
        let scale = m.amax().max(f64::MIN_POSITIVE);
        rep.mass_asymmetry = (m - m.transpose()).amax() / scale;
        rep.mass_spd = m.clone().cholesky().is_some();
    }
    for (z, v) in probes {
        let jv = system.j_apply(v)?;
        let denom = (jv.norm() * v.norm()).max(f64::MIN_POSITIVE);
        rep.conservativity = rep.conservativity.max(jv.dot(v).abs() / denom);
        let rv = system.r_apply(v)?;
        rep.dissipativity = rep.dissipativity.min(rv.dot(v) / (1.0 + v.norm_squared()));
        rep.gradient = rep.gradient.max(check_gradient(system, z, fd_step)?);
    }
    Ok(rep)
}
