//! Energy accounting for computed trajectories.
//!
//! For each step the Hamiltonian increment is compared with the quadrature
//! of dissipation and supply evaluated at the projected η, exactly as the
//! solver saw it:
//!
//! ```text
//! E_i = |H_i - H_{i-1} - Q_i[-⟨R(Π̃η), Π̃η⟩ + ⟨B(·, Π̃η), Π̃η⟩]| / max_j |H_j - H_{j-1}|
//! ```

use nalgebra::{DMatrix, DVector};

use crate::error::{CpgError, Result};
use crate::solver::{CpgSolution, LocalScheme};
use crate::system::{PortHamiltonian, SolverConfig};

/// Per-step energy balance data. Index 0 holds the initial state.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyReport {
    /// Grid times `t_0..t_m`.
    pub times: Vec<f64>,
    /// `H(z(t_i))` for `i = 0..m`.
    pub hamiltonian: Vec<f64>,
    /// `Q_i[⟨R(Π̃η), Π̃η⟩]` for steps `1..=m` (entry 0 is zero).
    pub dissipation: Vec<f64>,
    /// `Q_i[⟨B(·, Π̃η), Π̃η⟩]` for steps `1..=m` (entry 0 is zero).
    pub supply: Vec<f64>,
    /// Relative balance error for steps `1..=m` (entry 0 is zero).
    pub balance_error: Vec<f64>,
    /// Denominator used for `balance_error`.
    pub denominator: f64,
}

impl EnergyReport {
    /// `max_i E_i` over all steps.
    pub fn max_balance_error(&self) -> f64 {
        self.balance_error.iter().skip(1).copied().fold(0.0, f64::max)
    }
}

/// Recomputes `Π̃η` on every segment with the solver's rules and evaluates
/// the discrete energy balance.
///
/// The denominator is `max(max_j |ΔH_j|, 1e3 ε (1 + max_j |H_j|))` so that
/// exactly conservative runs do not divide by zero.
pub fn energy_balance_report<S: PortHamiltonian + ?Sized>(
    system: &S,
    sol: &CpgSolution,
    config: &SolverConfig,
) -> Result<EnergyReport> {
    if (sol.k, sol.s_q, sol.s_pi) != (config.k, config.s_q, config.s_pi) {
        return Err(CpgError::ConfigMismatch {
            sol_k: sol.k,
            sol_sq: sol.s_q,
            sol_spi: sol.s_pi,
            k: config.k,
            sq: config.s_q,
            spi: config.s_pi,
        });
    }
    let scheme = LocalScheme::from_config(config)?;
    let m = sol.segments.len();
    let times = sol.partition.points()[..=m].to_vec();
    let nodal = sol.nodal_values();
    let hamiltonian = nodal
        .iter()
        .map(|z| system.hamiltonian(z))
        .collect::<Result<Vec<_>>>()?;

    let mut dissipation = vec![0.0; m + 1];
    let mut supply = vec![0.0; m + 1];
    for (i, seg) in sol.segments.iter().enumerate() {
        let (a, b) = seg.interval();
        let tau = b - a;
        let d = step_unknowns(seg);
        let z_left = seg.left_value();
        let v_q: DMatrix<f64> = scheme.projected_eta_at_q(system, a, tau, &z_left, &d)?;
        let rule = scheme.rule_q();
        let mut r_sum = 0.0;
        let mut b_sum = 0.0;
        for (q, (&y, &w)) in rule.nodes().iter().zip(rule.weights()).enumerate() {
            let t = a + tau * y;
            let v: DVector<f64> = v_q.column(q).into_owned();
            r_sum += w * system.r_apply(&v)?.dot(&v);
            b_sum += w * system.b_apply(t, &v)?.dot(&v);
        }
        dissipation[i + 1] = tau * r_sum;
        supply[i + 1] = tau * b_sum;
    }

    let max_inc = hamiltonian
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(0.0, f64::max);
    let max_h = hamiltonian.iter().map(|h| h.abs()).fold(0.0, f64::max);
    let denominator = max_inc.max(1e3 * f64::EPSILON * (1.0 + max_h));
    let mut balance_error = vec![0.0; m + 1];
    for i in 1..=m {
        let inc = hamiltonian[i] - hamiltonian[i - 1];
        balance_error[i] = (inc - (supply[i] - dissipation[i])).abs() / denominator;
    }
    Ok(EnergyReport {
        times,
        hamiltonian,
        dissipation,
        supply,
        balance_error,
        denominator,
    })
}

/// Derivative coefficients of a trial segment, i.e. the step unknowns.
fn step_unknowns(seg: &crate::basis::SegmentPoly) -> DMatrix<f64> {
    seg.derivative().into_coeffs()
}

/// `(t, H(z(t)))` at the given times.
pub fn hamiltonian_trace<S: PortHamiltonian + ?Sized>(
    system: &S,
    sol: &CpgSolution,
    sample_times: &[f64],
) -> Result<Vec<(f64, f64)>> {
    sample_times
        .iter()
        .map(|&t| Ok((t, system.hamiltonian(&sol.eval(t)?)?)))
        .collect()
}

/// `dH(z)/dt + ⟨R(η), η⟩ - ⟨B(t, η), η⟩` at `t`, with the time derivative
/// taken by central differences of step `h_fd`. Vanishes along exact
/// solutions.
pub fn power_balance_residual<S, F>(system: &S, z_fn: F, t: f64, h_fd: f64) -> Result<f64>
where
    S: PortHamiltonian + ?Sized,
    F: Fn(f64) -> DVector<f64>,
{
    let hp = system.hamiltonian(&z_fn(t + h_fd))?;
    let hm = system.hamiltonian(&z_fn(t - h_fd))?;
    let eta = system.eta(&z_fn(t))?;
    let dh = (hp - hm) / (2.0 * h_fd);
    let r = system.r_apply(&eta)?.dot(&eta);
    let b = system.b_apply(t, &eta)?.dot(&eta);
    let out = dh + r - b;
    if !out.is_finite() {
        return Err(CpgError::NonFinite(format!("power balance at t = {t}")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manufactured::{rigid_body_case, toda_case};
    use crate::models::{make_rigid_body, make_toda, time_fn, zero_control, RigidBodyParams, TodaParams};
    use crate::solver::{integrate, TimePartition};

    struct Frozen;

    impl PortHamiltonian for Frozen {
        fn dim(&self) -> usize {
            2
        }
        fn hamiltonian(&self, z: &DVector<f64>) -> Result<f64> {
            Ok(z[0].exp() + z[1] * z[1])
        }
        fn eta(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(DVector::from_vec(vec![z[0].exp(), 2.0 * z[1]]))
        }
        fn j_apply(&self, _v: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(DVector::zeros(2))
        }
        fn r_apply(&self, _v: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(DVector::zeros(2))
        }
        fn b_apply(&self, _t: f64, _v: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(DVector::zeros(2))
        }
    }

    #[test]
    fn zero_rhs_hits_the_floor() {
        let z0 = DVector::from_vec(vec![0.3, -1.0]);
        let cfg = SolverConfig::new(2);
        let sol = integrate(&Frozen, &z0, &TimePartition::uniform(0.0, 1.0, 8).unwrap(), &cfg).unwrap();
        let rep = energy_balance_report(&Frozen, &sol, &cfg).unwrap();
        let h0 = rep.hamiltonian[0];
        assert!(rep.hamiltonian.iter().all(|h| (h - h0).abs() <= 4.0 * f64::EPSILON * h0));
        assert_eq!(rep.denominator, 1e3 * f64::EPSILON * (1.0 + h0));
        assert!(rep.max_balance_error() <= 1e-2);
        assert_eq!(rep.times.len(), 9);
    }

    #[test]
    fn config_mismatch_is_reported() {
        let z0 = DVector::from_vec(vec![0.0, 0.0]);
        let cfg = SolverConfig::new(2);
        let sol = integrate(&Frozen, &z0, &TimePartition::uniform(0.0, 1.0, 2).unwrap(), &cfg).unwrap();
        let other = SolverConfig::new(2).with_nodes(3, 3);
        assert!(matches!(
            energy_balance_report(&Frozen, &sol, &other),
            Err(CpgError::ConfigMismatch { .. })
        ));
    }

    #[test]
    fn rigid_body_balance_is_exact() {
        let sys = make_rigid_body(RigidBodyParams::default(), time_fn(|t| (2.0 * t).sin())).unwrap();
        let z0 = DVector::from_vec(vec![0.0, 0.5, 1.0]);
        let part = TimePartition::uniform(0.0, 1.0, 100).unwrap();
        for k in 1..=4 {
            let cfg = SolverConfig::new(k)
                .with_nodes(k, k)
                .with_jacobian(crate::system::JacobianMode::Analytic);
            let sol = integrate(&sys, &z0, &part, &cfg).unwrap();
            let rep = energy_balance_report(&sys, &sol, &cfg).unwrap();
            assert!(rep.max_balance_error() <= 1e-12, "k={k}: {}", rep.max_balance_error());
            assert!(rep.dissipation.iter().all(|d| *d == 0.0));
        }
    }

    #[test]
    fn toda_unforced_energy_is_nonincreasing() {
        let sys = make_toda(TodaParams::uniform(5, 0.1), zero_control()).unwrap();
        let z0 = DVector::from_fn(10, |i, _| 0.3 * (i as f64).sin());
        let cfg = SolverConfig::new(2);
        let sol = integrate(&sys, &z0, &TimePartition::uniform(0.0, 2.0, 200).unwrap(), &cfg).unwrap();
        let rep = energy_balance_report(&sys, &sol, &cfg).unwrap();
        for w in rep.hamiltonian.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        assert!(rep.dissipation.iter().all(|d| *d >= -1e-12));
        assert!(rep.max_balance_error() <= 1e-10);
        let trace = hamiltonian_trace(&sys, &sol, &[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(trace[0].1, rep.hamiltonian[0]);
        assert!(hamiltonian_trace(&sys, &sol, &[2.5]).is_err());
    }

    #[test]
    fn power_balance_examples() {
        // equilibrium of the unforced Toda lattice
        let toda = make_toda(TodaParams::uniform(3, 0.1), zero_control()).unwrap();
        let r = power_balance_residual(&toda, |_| DVector::zeros(6), 0.4, 1e-5).unwrap();
        assert!(r.abs() <= 1e-8);

        let case = toda_case(TodaParams::uniform(5, 0.1)).unwrap();
        let z = case.z_exact.clone();
        let sys = crate::manufactured::wrap_manufactured(case);
        let r = power_balance_residual(&sys, |t| z(t), 1.0, 1e-5).unwrap();
        assert!(r.abs() <= 1e-6, "{r}");

        let case = rigid_body_case(RigidBodyParams::default()).unwrap();
        let z = case.z_exact.clone();
        let sys = crate::manufactured::wrap_manufactured(case);
        for t in [0.3, 1.7, 4.1] {
            let r = power_balance_residual(&sys, |t| z(t), t, 1e-5).unwrap();
            assert!(r.abs() <= 1e-6, "{r}");
        }
    }

    #[test]
    fn non_finite_power_balance_is_an_error() {
        let toda = make_toda(TodaParams::uniform(2, 0.1), zero_control()).unwrap();
        let blowup = |_t: f64| DVector::from_vec(vec![1e3, 0.0, 0.0, 0.0]);
        assert!(power_balance_residual(&toda, blowup, 0.0, 1e-5).is_err());
    }
}
