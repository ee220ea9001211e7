//! Built-in experiment configs, one per figure of the reproduced study.

use crate::config::{
    ExperimentConfig, Jacobian, ModelKind, Mode, NodeRule, OneOrMany, WaveSection,
};

pub struct Preset {
    pub name: &'static str,
    /// Short figure number alias.
    pub alias: Option<&'static str>,
    pub summary: &'static str,
    build: fn() -> ExperimentConfig,
}

impl Preset {
    pub fn config(&self) -> ExperimentConfig {
        (self.build)()
    }
}

/// `T / (20·2^j)` for `j = 0..count` on `[0, 5]`.
fn sweep_taus(count: u32) -> Vec<f64> {
    (0..count).map(|j| 5.0 / (20.0 * f64::from(1u32 << j))).collect()
}

fn rule(s: &str) -> NodeRule {
    NodeRule::Expr(s.to_string())
}

fn base(mode: Mode, model: ModelKind, k: Vec<usize>, tau: Vec<f64>) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(mode, model, k, tau);
    c.jacobian = Jacobian::Analytic;
    c
}

fn toda_degree(mode: Mode) -> ExperimentConfig {
    base(mode, ModelKind::Toda, vec![1, 2, 3, 4], sweep_taus(6))
}

fn rigid_degree(mode: Mode) -> ExperimentConfig {
    base(mode, ModelKind::RigidBody, vec![1, 2, 3, 4], sweep_taus(6))
}

fn wave(mode: Mode, nu: f64, k: Vec<usize>, tau: Vec<f64>) -> ExperimentConfig {
    let mut c = base(mode, ModelKind::Wave, k, tau);
    c.s_pi = OneOrMany::One(rule("2k"));
    c.wave = Some(WaveSection::standard(nu));
    c
}

fn wave_degree(mode: Mode, nu: f64) -> ExperimentConfig {
    // k >= 4 reaches round-off before the sixth step size
    wave(mode, nu, vec![2, 4, 6], sweep_taus(5))
}

fn wave_mesh(nu: f64) -> ExperimentConfig {
    let mut c = wave(Mode::Converge, nu, vec![4], sweep_taus(5));
    // h = 10/9, 10/17, 10/33, 10/65
    c.wave.as_mut().unwrap().n = OneOrMany::Many(vec![8, 16, 32, 64]);
    c
}

fn wave_energy(nu: f64) -> ExperimentConfig {
    wave(Mode::Energy, nu, vec![1, 2, 3, 4], vec![1e-2])
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "toda_varying_degree",
        alias: Some("fig1"),
        summary: "Toda, L-inf error vs tau, k = 1..4, s_q = s_pi = k",
        build: || toda_degree(Mode::Converge),
    },
    Preset {
        name: "toda_varying_degree_different_sampling",
        alias: Some("fig2"),
        summary: "Toda, nodal error vs tau, k = 1..4, s_q = s_pi = k",
        build: || toda_degree(Mode::ConvergeNodal),
    },
    Preset {
        name: "toda_varying_quadrature",
        alias: Some("fig3"),
        summary: "Toda, k = s_pi = 3, s_q = 1..5",
        build: || {
            let mut c = base(Mode::Converge, ModelKind::Toda, vec![3], sweep_taus(6));
            c.s_q = OneOrMany::Many((1..=5).map(NodeRule::Fixed).collect());
            c.s_pi = OneOrMany::One(NodeRule::Fixed(3));
            c
        },
    },
    Preset {
        name: "toda_varying_projection",
        alias: Some("fig4"),
        summary: "Toda, k = s_q = 3, s_pi = 1..5",
        build: || {
            let mut c = base(Mode::Converge, ModelKind::Toda, vec![3], sweep_taus(6));
            c.s_q = OneOrMany::One(NodeRule::Fixed(3));
            c.s_pi = OneOrMany::Many((1..=5).map(NodeRule::Fixed).collect());
            c
        },
    },
    Preset {
        name: "toda_energybalance",
        alias: Some("fig5"),
        summary: "Toda, energy balance at tau = 1e-2, z0 = 0, k = 1..4, s_pi in {k, max(k,3)}",
        build: || {
            let mut c = base(Mode::Energy, ModelKind::Toda, vec![1, 2, 3, 4], vec![1e-2]);
            c.s_pi = OneOrMany::Many(vec![rule("k"), rule("max(k,3)")]);
            c
        },
    },
    Preset {
        name: "rigid_body_energybalance",
        alias: Some("fig6"),
        summary: "rigid body, energy balance at tau = 1e-2, z0 = (0, 0.5, 1), k = 1..4",
        build: || base(Mode::Energy, ModelKind::RigidBody, vec![1, 2, 3, 4], vec![1e-2]),
    },
    Preset {
        name: "rigid_body_varying_degree",
        alias: None,
        summary: "rigid body, L-inf error vs tau, k = 1..4, s_q = s_pi = k",
        build: || rigid_degree(Mode::Converge),
    },
    Preset {
        name: "rigid_body_varying_degree_different_sampling",
        alias: None,
        summary: "rigid body, nodal error vs tau, k = 1..4",
        build: || rigid_degree(Mode::ConvergeNodal),
    },
    Preset {
        name: "damped_wave_nu0_varying_degree",
        alias: Some("fig7"),
        summary: "damped wave nu = 0, L-inf error vs tau, k = 2, 4, 6, s_pi = 2k",
        build: || wave_degree(Mode::Converge, 0.0),
    },
    Preset {
        name: "damped_wave_nu1_varying_degree",
        alias: Some("fig8"),
        summary: "damped wave nu = 1, L-inf error vs tau, k = 2, 4, 6, s_pi = 2k",
        build: || wave_degree(Mode::Converge, 1.0),
    },
    Preset {
        name: "damped_wave_nu0_varying_degree_different_sampling",
        alias: Some("fig9"),
        summary: "damped wave nu = 0, nodal error vs tau, k = 2, 4, 6",
        build: || wave_degree(Mode::ConvergeNodal, 0.0),
    },
    Preset {
        name: "damped_wave_nu1_varying_degree_different_sampling",
        alias: Some("fig10"),
        summary: "damped wave nu = 1, nodal error vs tau, k = 2, 4, 6",
        build: || wave_degree(Mode::ConvergeNodal, 1.0),
    },
    Preset {
        name: "damped_wave_nu0_varying_discretization",
        alias: None,
        summary: "damped wave nu = 0, k = 4, N = 8, 16, 32, 64",
        build: || wave_mesh(0.0),
    },
    Preset {
        name: "damped_wave_nu1_varying_discretization",
        alias: None,
        summary: "damped wave nu = 1, k = 4, N = 8, 16, 32, 64",
        build: || wave_mesh(1.0),
    },
    Preset {
        name: "damped_wave_nu0_energybalance",
        alias: Some("fig11"),
        summary: "damped wave nu = 0, energy balance at tau = 1e-2, k = 1..4, s_pi = 2k",
        build: || wave_energy(0.0),
    },
    Preset {
        name: "damped_wave_nu1_energybalance",
        alias: Some("fig12"),
        summary: "damped wave nu = 1, energy balance at tau = 1e-2, k = 1..4, s_pi = 2k",
        build: || wave_energy(1.0),
    },
];

/// Looks a preset up by name or figure alias.
pub fn find(name: &str) -> Option<&'static Preset> {
    PRESETS
        .iter()
        .find(|p| p.name == name || p.alias == Some(name))
}
