//! Experiment configuration files (TOML, `version = 1`).
//!
//! ```toml
//! version = 1
//! mode = "converge"          # converge | converge_nodal | energy | run
//! model = "toda"             # toda | rigid_body | wave
//! t_end = 5.0
//! tau = [0.25, 0.125]        # one value for energy and run
//! tau_ref = 1.25e-4
//! k = [1, 2, 3, 4]
//! s_q = ["k"]                # integers or "k", "2k", "max(k,3)"
//! s_pi = ["k"]
//!
//! [toda]
//! n = 5
//! gamma = 0.1
//! ```
//!
//! Lists in `k`, `s_q`, `s_pi`, `wave.n` and `wave.nu` span a grid of
//! series; every series runs the full `tau` list.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Converge,
    ConvergeNodal,
    Energy,
    Run,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Converge => "converge",
            Mode::ConvergeNodal => "converge_nodal",
            Mode::Energy => "energy",
            Mode::Run => "run",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Toda,
    RigidBody,
    Wave,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Toda => "toda",
            ModelKind::RigidBody => "rigid_body",
            ModelKind::Wave => "wave",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Jacobian {
    #[default]
    Fd,
    Analytic,
}

/// Scalar time signals available to configs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    /// `sin(2t)`
    Sin2t,
    /// `1 - sin(t)`
    OneMinusSin,
    Zero,
}

impl Signal {
    pub fn eval(self, t: f64) -> f64 {
        match self {
            Signal::Sin2t => (2.0 * t).sin(),
            Signal::OneMinusSin => 1.0 - t.sin(),
            Signal::Zero => 0.0,
        }
    }
}

/// Node count, either fixed or derived from the degree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodeRule {
    Fixed(usize),
    Expr(String),
}

impl NodeRule {
    pub fn resolve(&self, k: usize) -> std::result::Result<usize, String> {
        match self {
            NodeRule::Fixed(s) => Ok(*s),
            NodeRule::Expr(e) => match e.replace(' ', "").as_str() {
                "k" => Ok(k),
                "2k" => Ok(2 * k),
                "max(k,3)" => Ok(k.max(3)),
                other => Err(format!(
                    "unknown node rule \"{other}\" (expected an integer, \"k\", \"2k\" or \"max(k,3)\")"
                )),
            },
        }
    }
}

impl fmt::Display for NodeRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeRule::Fixed(s) => write!(f, "{s}"),
            NodeRule::Expr(e) => f.write_str(e),
        }
    }
}

/// A scalar or a list in the file; always a list in memory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(x) => vec![x.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

impl<T> From<Vec<T>> for OneOrMany<T> {
    fn from(mut v: Vec<T>) -> Self {
        if v.len() == 1 {
            OneOrMany::One(v.pop().unwrap())
        } else {
            OneOrMany::Many(v)
        }
    }
}

/// Initial state: a named preset or explicit values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialState {
    Named(String),
    Values(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TodaSection {
    pub n: usize,
    pub gamma: f64,
    #[serde(default = "default_control")]
    pub control: Signal,
    /// `"zero"` or `2n` values.
    #[serde(default = "default_zero_state")]
    pub z0: InitialState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigidBodySection {
    pub inertia: [f64; 3],
    pub axis: [f64; 3],
    #[serde(default = "default_control")]
    pub control: Signal,
    #[serde(default = "default_rigid_state")]
    pub z0: InitialState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveSection {
    /// Interior grid points; a list runs a mesh study.
    pub n: OneOrMany<usize>,
    pub ell: f64,
    pub gamma: f64,
    pub nu: OneOrMany<f64>,
    #[serde(default = "default_rf_nodes")]
    pub rf_quad_nodes: usize,
    #[serde(default = "default_boundary")]
    pub g0: Signal,
    #[serde(default = "default_boundary")]
    pub gl: Signal,
    /// `"standard"`: `ρ = 1 + ½ sin(πx/ℓ)`, `v = (4x/ℓ - 2)³`; `"zero"`; or values.
    #[serde(default = "default_wave_state")]
    pub z0: InitialState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Written to stdout when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default)]
    pub format: Format,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            path: None,
            format: Format::Csv,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub mode: Mode,
    pub model: ModelKind,
    pub t_end: f64,
    pub tau: OneOrMany<f64>,
    #[serde(default = "default_tau_ref")]
    pub tau_ref: f64,
    pub k: OneOrMany<usize>,
    #[serde(default = "default_rule")]
    pub s_q: OneOrMany<NodeRule>,
    #[serde(default = "default_rule")]
    pub s_pi: OneOrMany<NodeRule>,
    #[serde(default)]
    pub jacobian: Jacobian,
    #[serde(default = "default_newton_tol")]
    pub newton_tol: f64,
    #[serde(default = "default_newton_max_iter")]
    pub newton_max_iter: usize,
    /// Sampling step for `run` mode; defaults to the time step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_step: Option<f64>,
    /// Worker cap for sweeps; 0 picks the number of cores.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toda: Option<TodaSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rigid_body: Option<RigidBodySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wave: Option<WaveSection>,
}

fn default_control() -> Signal {
    Signal::Sin2t
}
fn default_boundary() -> Signal {
    Signal::OneMinusSin
}
fn default_zero_state() -> InitialState {
    InitialState::Named("zero".into())
}
fn default_rigid_state() -> InitialState {
    InitialState::Values(vec![0.0, 0.5, 1.0])
}
fn default_wave_state() -> InitialState {
    InitialState::Named("standard".into())
}
fn default_rf_nodes() -> usize {
    10
}
fn default_tau_ref() -> f64 {
    1.25e-4
}
fn default_rule() -> OneOrMany<NodeRule> {
    OneOrMany::One(NodeRule::Expr("k".into()))
}
fn default_newton_tol() -> f64 {
    1e-12
}
fn default_newton_max_iter() -> usize {
    50
}

impl TodaSection {
    pub fn standard() -> Self {
        Self {
            n: 5,
            gamma: 0.1,
            control: Signal::Sin2t,
            z0: default_zero_state(),
        }
    }
}

impl RigidBodySection {
    pub fn standard() -> Self {
        Self {
            inertia: [1.0; 3],
            axis: [1.0; 3],
            control: Signal::Sin2t,
            z0: default_rigid_state(),
        }
    }
}

impl WaveSection {
    pub fn standard(nu: f64) -> Self {
        Self {
            n: OneOrMany::One(10),
            ell: 10.0,
            gamma: 0.1,
            nu: OneOrMany::One(nu),
            rf_quad_nodes: 10,
            g0: Signal::OneMinusSin,
            gl: Signal::OneMinusSin,
            z0: default_wave_state(),
        }
    }
}

impl ExperimentConfig {
    /// A config with defaults for everything but the essentials.
    pub fn new(mode: Mode, model: ModelKind, k: Vec<usize>, tau: Vec<f64>) -> Self {
        let mut cfg = Self {
            version: CONFIG_VERSION,
            mode,
            model,
            t_end: 5.0,
            tau: tau.into(),
            tau_ref: default_tau_ref(),
            k: k.into(),
            s_q: default_rule(),
            s_pi: default_rule(),
            jacobian: Jacobian::Fd,
            newton_tol: default_newton_tol(),
            newton_max_iter: default_newton_max_iter(),
            sample_step: None,
            workers: 0,
            output: OutputSection::default(),
            toda: None,
            rigid_body: None,
            wave: None,
        };
        cfg.ensure_model_section();
        cfg
    }

    /// Adds the standard parameter section for the selected model if missing.
    pub fn ensure_model_section(&mut self) {
        match self.model {
            ModelKind::Toda if self.toda.is_none() => self.toda = Some(TodaSection::standard()),
            ModelKind::RigidBody if self.rigid_body.is_none() => {
                self.rigid_body = Some(RigidBodySection::standard())
            }
            ModelKind::Wave if self.wave.is_none() => self.wave = Some(WaveSection::standard(0.0)),
            _ => {}
        }
    }

    pub fn from_toml_str(source: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(source).map_err(|e| {
            let loc = e
                .span()
                .map(|s| {
                    let (line, col) = line_col(source, s.start);
                    format!("line {line}, column {col}: ")
                })
                .unwrap_or_default();
            CliError::config(format!("config parse error at {loc}{}", e.message().trim()))
        })?;
        cfg.validate().map_err(|(field, msg)| {
            let loc = locate_field(source, &field)
                .map(|l| format!("line {l}, "))
                .unwrap_or_default();
            CliError::config(format!("invalid config ({loc}field `{field}`): {msg}"))
        })?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let source = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&source).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Semantic checks. Errors carry the dotted field path.
    pub fn validate(&self) -> std::result::Result<(), (String, String)> {
        let err = |f: &str, m: String| Err((f.to_string(), m));
        if self.version != CONFIG_VERSION {
            return err(
                "version",
                format!("unsupported version {} (expected {CONFIG_VERSION})", self.version),
            );
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return err("t_end", "must be positive".into());
        }
        let ks = self.k.to_vec();
        if ks.is_empty() || ks.contains(&0) {
            return err("k", "needs at least one degree, all >= 1".into());
        }
        for (name, rules) in [("s_q", &self.s_q), ("s_pi", &self.s_pi)] {
            let rules = rules.to_vec();
            if rules.is_empty() {
                return err(name, "needs at least one entry".into());
            }
            for r in &rules {
                for &k in &ks {
                    match r.resolve(k) {
                        Ok(s) if (1..=cpg_core::quadrature::MAX_NODES).contains(&s) => {}
                        Ok(s) => {
                            return err(name, format!("node count {s} outside 1..=64"));
                        }
                        Err(m) => return err(name, m),
                    }
                }
            }
        }
        let taus = self.tau.to_vec();
        if taus.is_empty() || taus.iter().any(|t| !(*t > 0.0)) {
            return err("tau", "needs positive step sizes".into());
        }
        match self.mode {
            Mode::Converge | Mode::ConvergeNodal => {
                if taus.windows(2).any(|w| !(w[1] < w[0])) {
                    return err("tau", "must strictly decrease for convergence tables".into());
                }
            }
            Mode::Energy | Mode::Run => {
                if taus.len() != 1 {
                    return err("tau", format!("{} mode takes a single step size", self.mode));
                }
            }
        }
        for &t in &taus {
            let ratio = self.t_end / t;
            if (ratio - ratio.round()).abs() > 1e-9 * ratio || ratio.round() < 1.0 {
                return err("tau", format!("step {t} does not divide t_end = {}", self.t_end));
            }
        }
        if !(self.tau_ref > 0.0) {
            return err("tau_ref", "must be positive".into());
        }
        if let Some(s) = self.sample_step {
            if !(s > 0.0) {
                return err("sample_step", "must be positive".into());
            }
        }
        if !(self.newton_tol > 0.0) {
            return err("newton_tol", "must be positive".into());
        }
        if self.newton_max_iter == 0 {
            return err("newton_max_iter", "must be at least 1".into());
        }
        match self.model {
            ModelKind::Toda => {
                let Some(s) = &self.toda else {
                    return err("toda", "missing [toda] section".into());
                };
                if s.n == 0 {
                    return err("toda.n", "must be at least 1".into());
                }
                if !(s.gamma >= 0.0) {
                    return err("toda.gamma", "must be nonnegative".into());
                }
                check_state(&s.z0, 2 * s.n, &["zero"], "toda.z0")?;
            }
            ModelKind::RigidBody => {
                let Some(s) = &self.rigid_body else {
                    return err("rigid_body", "missing [rigid_body] section".into());
                };
                if s.inertia.iter().any(|i| !(*i > 0.0)) {
                    return err("rigid_body.inertia", "moments must be positive".into());
                }
                check_state(&s.z0, 3, &["zero"], "rigid_body.z0")?;
            }
            ModelKind::Wave => {
                let Some(s) = &self.wave else {
                    return err("wave", "missing [wave] section".into());
                };
                let ns = s.n.to_vec();
                if ns.is_empty() || ns.contains(&0) {
                    return err("wave.n", "needs at least one value, all >= 1".into());
                }
                if !(s.ell > 0.0) {
                    return err("wave.ell", "must be positive".into());
                }
                if !(s.gamma >= 0.0) {
                    return err("wave.gamma", "must be nonnegative".into());
                }
                let nus = s.nu.to_vec();
                if nus.is_empty() || nus.iter().any(|v| !(*v >= 0.0)) {
                    return err("wave.nu", "needs nonnegative values".into());
                }
                if s.rf_quad_nodes == 0 || s.rf_quad_nodes > cpg_core::quadrature::MAX_NODES {
                    return err("wave.rf_quad_nodes", "must be in 1..=64".into());
                }
                if let InitialState::Values(v) = &s.z0 {
                    if ns.len() > 1 {
                        return err("wave.z0", "explicit values need a single mesh".into());
                    }
                    check_state(&s.z0, 2 * ns[0] + 3, &[], "wave.z0")?;
                    let _ = v;
                } else {
                    check_state(&s.z0, 0, &["standard", "zero"], "wave.z0")?;
                }
            }
        }
        Ok(())
    }
}

fn check_state(
    s: &InitialState,
    dim: usize,
    names: &[&str],
    field: &str,
) -> std::result::Result<(), (String, String)> {
    match s {
        InitialState::Named(n) if names.contains(&n.as_str()) => Ok(()),
        InitialState::Named(n) => Err((
            field.to_string(),
            format!("unknown initial state \"{n}\" (expected one of {names:?} or a list)"),
        )),
        InitialState::Values(v) if v.len() == dim && v.iter().all(|x| x.is_finite()) => Ok(()),
        InitialState::Values(v) => Err((
            field.to_string(),
            format!("expected {dim} finite values, got {}", v.len()),
        )),
    }
}

fn line_col(source: &str, offset: usize) -> (usize, usize) {
    let before = &source[..offset.min(source.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

/// 1-based line of `key` (dotted `table.key` allowed) in a TOML source.
fn locate_field(source: &str, field: &str) -> Option<usize> {
    let (table, key) = match field.split_once('.') {
        Some((t, k)) => (Some(t), k),
        None => (None, field),
    };
    let mut current: Option<String> = None;
    for (i, line) in source.lines().enumerate() {
        let l = line.trim();
        if l.starts_with('[') {
            let name = l.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if table.is_some_and(|t| t == name) && key.is_empty() {
                return Some(i + 1);
            }
            current = Some(name);
            continue;
        }
        let Some((lhs, _)) = l.split_once('=') else {
            continue;
        };
        let lhs = lhs.trim();
        let hit = match (table, current.as_deref()) {
            (None, None) => lhs == key,
            (Some(t), Some(c)) => t == c && lhs == key,
            (Some(t), None) => lhs == format!("{t}.{key}"),
            (None, Some(_)) => false,
        };
        if hit {
            return Some(i + 1);
        }
    }
    if let Some(t) = table {
        return locate_field(source, &format!("{t}.")).or(None);
    }
    None
}
