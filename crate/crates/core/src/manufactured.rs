//! Manufactured solutions, error measurement and empirical convergence orders.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{CpgError, Result};
use crate::models::{
    make_damped_wave, make_rigid_body, make_toda, zero_control, DampedWave, RigidBody,
    RigidBodyParams, Toda, TodaParams, WaveParams,
};
use crate::solver::{integrate, CpgSolution, TimePartition};
use crate::system::{apply_mass, PortHamiltonian, SolverConfig};

/// A vector-valued function of time.
pub type VecFn = Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>;

/// A base system together with a prescribed trajectory and its derivative.
#[derive(Clone)]
pub struct ManufacturedCase<S> {
    pub base: S,
    pub z_exact: VecFn,
    pub dz_exact: VecFn,
}

impl<S: fmt::Debug> fmt::Debug for ManufacturedCase<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ManufacturedCase").field("base", &self.base).finish()
    }
}

impl<S: PortHamiltonian> ManufacturedCase<S> {
    /// Max deviation of `dz_exact` from central differences of `z_exact`.
    pub fn derivative_defect(&self, times: &[f64], h: f64) -> f64 {
        times
            .iter()
            .map(|&t| {
                let fd = ((self.z_exact)(t + h) - (self.z_exact)(t - h)) / (2.0 * h);
                (fd - (self.dz_exact)(t)).amax()
            })
            .fold(0.0, f64::max)
    }
}

/// The base system with `B` replaced by the state-independent forcing
/// `B̄(t) = M ż(t) - J(η(z(t))) + R(η(z(t)))`.
///
/// `rhs_jacobian` is forwarded from the base, which is exact when the base
/// supply does not depend on the state (true for every shipped model).
#[derive(Clone)]
pub struct ManufacturedSystem<S> {
    case: ManufacturedCase<S>,
}

impl<S: fmt::Debug> fmt::Debug for ManufacturedSystem<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ManufacturedSystem")
            .field("base", &self.case.base)
            .finish()
    }
}

pub fn wrap_manufactured<S: PortHamiltonian>(case: ManufacturedCase<S>) -> ManufacturedSystem<S> {
    ManufacturedSystem { case }
}

impl<S: PortHamiltonian> ManufacturedSystem<S> {
    pub fn base(&self) -> &S {
        &self.case.base
    }

    pub fn exact(&self, t: f64) -> DVector<f64> {
        (self.case.z_exact)(t)
    }

    pub fn exact_fn(&self) -> VecFn {
        self.case.z_exact.clone()
    }

    /// `z̄_0 = z_exact(0)`.
    pub fn initial_value(&self) -> DVector<f64> {
        self.exact(0.0)
    }

    pub fn forcing(&self, t: f64) -> Result<DVector<f64>> {
        let base = &self.case.base;
        let eta = base.eta(&(self.case.z_exact)(t))?;
        let mut out = apply_mass(base, &(self.case.dz_exact)(t));
        out -= base.j_apply(&eta)?;
        out += base.r_apply(&eta)?;
        Ok(out)
    }

    /// `M ż - J(η) + R(η) - B̄` along the exact trajectory; zero up to rounding.
    pub fn defining_residual(&self, t: f64) -> Result<f64> {
        let z = self.exact(t);
        let eta = self.eta(&z)?;
        let lhs = apply_mass(self, &(self.case.dz_exact)(t));
        let rhs = crate::system::rhs(self, t, &eta)?;
        Ok((lhs - rhs).amax())
    }
}

impl<S: PortHamiltonian> PortHamiltonian for ManufacturedSystem<S> {
    fn dim(&self) -> usize {
        self.case.base.dim()
    }
    fn hamiltonian(&self, z: &DVector<f64>) -> Result<f64> {
        self.case.base.hamiltonian(z)
    }
    fn eta(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        self.case.base.eta(z)
    }
    fn j_apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.case.base.j_apply(v)
    }
    fn r_apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.case.base.r_apply(v)
    }
    fn b_apply(&self, t: f64, _v: &DVector<f64>) -> Result<DVector<f64>> {
        self.forcing(t)
    }
    fn mass(&self) -> Option<&DMatrix<f64>> {
        self.case.base.mass()
    }
    fn eta_jacobian(&self, z: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        self.case.base.eta_jacobian(z)
    }
    fn rhs_jacobian(&self, t: f64, v: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        self.case.base.rhs_jacobian(t, v)
    }
}

/// Toda lattice with `q_i = sin t`, `p_i = cos t`.
pub fn toda_case(params: TodaParams) -> Result<ManufacturedCase<Toda>> {
    let n = params.n;
    let base = make_toda(params, zero_control())?;
    Ok(ManufacturedCase {
        base,
        z_exact: Arc::new(move |t| {
            DVector::from_fn(2 * n, |i, _| if i < n { t.sin() } else { t.cos() })
        }),
        dz_exact: Arc::new(move |t| {
            DVector::from_fn(2 * n, |i, _| if i < n { t.cos() } else { -t.sin() })
        }),
    })
}

/// Rigid body with `p = (sin t, sin 2t cos² t + ½, cos t)`.
pub fn rigid_body_case(params: RigidBodyParams) -> Result<ManufacturedCase<RigidBody>> {
    let base = make_rigid_body(params, zero_control())?;
    Ok(ManufacturedCase {
        base,
        z_exact: Arc::new(|t| {
            let c = t.cos();
            DVector::from_vec(vec![t.sin(), (2.0 * t).sin() * c * c + 0.5, c])
        }),
        dz_exact: Arc::new(|t| {
            let (s, c) = t.sin_cos();
            let (s2, c2) = (2.0 * t).sin_cos();
            DVector::from_vec(vec![c, 2.0 * c2 * c * c - s2 * s2, -s])
        }),
    })
}

/// Damped wave with `ρ = v = sin t sin x`, densities sampled at cell
/// midpoints and velocities at grid points.
pub fn wave_case(params: WaveParams) -> Result<ManufacturedCase<DampedWave>> {
    let base = make_damped_wave(params, zero_control(), zero_control())?;
    let space: Vec<f64> = base
        .cell_midpoints()
        .into_iter()
        .chain(base.grid_points())
        .map(f64::sin)
        .collect();
    let space = DVector::from_vec(space);
    let s2 = space.clone();
    Ok(ManufacturedCase {
        base,
        z_exact: Arc::new(move |t| &space * t.sin()),
        dz_exact: Arc::new(move |t| &s2 * t.cos()),
    })
}

/// Vector norm used for error measurement.
#[derive(Clone, Copy, Debug)]
pub enum ErrorNorm<'a> {
    /// Max norm.
    Plain,
    /// `sqrt(eᵀ M e)`.
    MassWeighted(&'a DMatrix<f64>),
}

impl ErrorNorm<'_> {
    pub fn measure(&self, e: &DVector<f64>) -> f64 {
        match self {
            ErrorNorm::Plain => e.amax(),
            ErrorNorm::MassWeighted(m) => e.dot(&(*m * e)).max(0.0).sqrt(),
        }
    }
}

/// Uniform sampling grid with step `tau_ref` on `[a, b]`, always ending at `b`.
pub fn sampling_grid(a: f64, b: f64, tau_ref: f64) -> Result<Vec<f64>> {
    if !(tau_ref > 0.0) {
        return Err(CpgError::InvalidArgument("tau_ref must be positive".into()));
    }
    let n = ((b - a) / tau_ref).floor() as usize;
    let mut ts: Vec<f64> = (0..=n).map(|j| a + j as f64 * tau_ref).filter(|&t| t <= b).collect();
    if ts.last().map_or(true, |&t| b - t > 1e-12 * (1.0 + b.abs())) {
        ts.push(b);
    } else if let Some(last) = ts.last_mut() {
        *last = b;
    }
    Ok(ts)
}

/// Max over the `tau_ref` sampling grid of `|z_exact(t) - z_τ(t)|`.
pub fn linf_error(
    sol: &CpgSolution,
    z_exact: &dyn Fn(f64) -> DVector<f64>,
    tau_ref: f64,
    norm: ErrorNorm<'_>,
) -> Result<f64> {
    let (a, b) = (sol.partition.start(), sol.partition.end());
    let mut err: f64 = 0.0;
    for t in sampling_grid(a, b, tau_ref)? {
        err = err.max(norm.measure(&(z_exact(t) - sol.eval(t)?)));
    }
    Ok(err)
}

/// Max error over the time grid points `t_0..t_m`.
pub fn nodal_error(sol: &CpgSolution, z_exact: &dyn Fn(f64) -> DVector<f64>, norm: ErrorNorm<'_>) -> f64 {
    sol.partition
        .points()
        .iter()
        .zip(sol.nodal_values())
        .map(|(&t, z)| norm.measure(&(z_exact(t) - z)))
        .fold(0.0, f64::max)
}

/// An empirical order of convergence between consecutive rows.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Eoc {
    Rate(f64),
    /// One of the errors was zero or negative.
    BelowFloor,
}

impl Eoc {
    pub fn rate(&self) -> Option<f64> {
        match self {
            Eoc::Rate(r) => Some(*r),
            Eoc::BelowFloor => None,
        }
    }
}

/// Pairwise rates `log(e_{i-1}/e_i) / log(τ_{i-1}/τ_i)`; one fewer than the inputs.
pub fn eoc(taus: &[f64], errors: &[f64]) -> Result<Vec<Eoc>> {
    if taus.len() != errors.len() || taus.len() < 2 {
        return Err(CpgError::InvalidArgument(
            "eoc needs two equally long lists of at least two entries".into(),
        ));
    }
    if taus.iter().any(|t| !(*t > 0.0)) {
        return Err(CpgError::InvalidArgument("step sizes must be positive".into()));
    }
    Ok((1..taus.len())
        .map(|i| {
            let (e0, e1) = (errors[i - 1], errors[i]);
            if !(e0 > 0.0 && e1 > 0.0) {
                Eoc::BelowFloor
            } else {
                Eoc::Rate((e0 / e1).ln() / (taus[i - 1] / taus[i]).ln())
            }
        })
        .collect())
}

/// One row of a convergence table.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRecord {
    pub tau: f64,
    pub err_inf: f64,
    pub err_nodal: f64,
    /// Rate against the previous row, absent on the first.
    pub eoc_inf: Option<Eoc>,
    pub eoc_nodal: Option<Eoc>,
}

/// Integrates the manufactured system from `z̄_0` on `[0, t_end]` with step
/// `tau` and returns `(err_inf, err_nodal)`.
pub fn measure_errors<S: PortHamiltonian>(
    system: &ManufacturedSystem<S>,
    config: &SolverConfig,
    t_end: f64,
    tau: f64,
    tau_ref: f64,
    norm: ErrorNorm<'_>,
) -> Result<(f64, f64)> {
    let partition = TimePartition::uniform_step(0.0, t_end, tau)?;
    let sol = integrate(system, &system.initial_value(), &partition, config)?;
    let exact = system.exact_fn();
    let err_inf = linf_error(&sol, exact.as_ref(), tau_ref, norm)?;
    let err_nodal = nodal_error(&sol, exact.as_ref(), norm);
    Ok((err_inf, err_nodal))
}

/// Assembles records from `(tau, err_inf, err_nodal)` triples; `tau` must
/// strictly decrease.
pub fn convergence_records(rows: &[(f64, f64, f64)]) -> Result<Vec<ConvergenceRecord>> {
    if rows.windows(2).any(|w| !(w[1].0 < w[0].0)) {
        return Err(CpgError::InvalidArgument(
            "step sizes must strictly decrease".into(),
        ));
    }
    let mut out: Vec<ConvergenceRecord> = rows
        .iter()
        .map(|&(tau, err_inf, err_nodal)| ConvergenceRecord {
            tau,
            err_inf,
            err_nodal,
            eoc_inf: None,
            eoc_nodal: None,
        })
        .collect();
    if rows.len() >= 2 {
        let taus: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let inf = eoc(&taus, &rows.iter().map(|r| r.1).collect::<Vec<_>>())?;
        let nod = eoc(&taus, &rows.iter().map(|r| r.2).collect::<Vec<_>>())?;
        for i in 1..rows.len() {
            out[i].eoc_inf = Some(inf[i - 1]);
            out[i].eoc_nodal = Some(nod[i - 1]);
        }
    }
    Ok(out)
}

/// Sequential sweep over `taus`.
pub fn convergence_sweep<S: PortHamiltonian>(
    system: &ManufacturedSystem<S>,
    config: &SolverConfig,
    t_end: f64,
    taus: &[f64],
    tau_ref: f64,
    norm: ErrorNorm<'_>,
) -> Result<Vec<ConvergenceRecord>> {
    let rows = taus
        .iter()
        .map(|&tau| {
            measure_errors(system, config, t_end, tau, tau_ref, norm).map(|(e, n)| (tau, e, n))
        })
        .collect::<Result<Vec<_>>>()?;
    convergence_records(&rows)
}
