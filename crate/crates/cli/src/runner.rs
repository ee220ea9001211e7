//! Turns an [`ExperimentConfig`] into a result table.
//!
//! Every combination of `k`, `s_q`, `s_pi` (and for the wave `n`, `nu`) is a
//! series. Convergence modes run each series for every `tau`; the jobs run
//! on a bounded thread pool and rows come out in config order.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{self, BufWriter, Write};

use cpg_core::manufactured::{
    eoc, linf_error, nodal_error, rigid_body_case, toda_case, wave_case, wrap_manufactured,
    Eoc, ErrorNorm, ManufacturedCase,
};
use cpg_core::models::{
    make_damped_wave, make_rigid_body, make_toda, time_fn, RigidBodyParams, TimeFn, TodaParams,
    WaveParams,
};
use cpg_core::{
    energy_balance_report, integrate, manufactured, CpgSolution, JacobianMode,
    PortHamiltonian, SolverConfig, TimePartition,
};
use nalgebra::DVector;
use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::config::{ExperimentConfig, InitialState, Jacobian, Mode, ModelKind, Signal};
use crate::error::{CliError, Result};
use crate::output::{Cell, Table};

/// One resolved parameter combination.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub k: usize,
    pub s_q: usize,
    pub s_pi: usize,
    /// Wave only.
    pub mesh: Option<(usize, f64)>,
}

impl Series {
    fn key_columns(model: ModelKind) -> Vec<String> {
        let mut c = vec!["k".to_string(), "s_q".into(), "s_pi".into()];
        if model == ModelKind::Wave {
            c.extend(["n".to_string(), "nu".into()]);
        }
        c
    }

    fn key_cells(&self) -> Vec<Cell> {
        let mut c = vec![Cell::Int(self.k), Cell::Int(self.s_q), Cell::Int(self.s_pi)];
        if let Some((n, nu)) = self.mesh {
            c.extend([Cell::Int(n), Cell::Float(nu)]);
        }
        c
    }
}

/// Resolves the series grid in config order, dropping duplicates.
pub fn series(cfg: &ExperimentConfig) -> Result<Vec<Series>> {
    let meshes: Vec<Option<(usize, f64)>> = match (&cfg.model, &cfg.wave) {
        (ModelKind::Wave, Some(w)) => w
            .n
            .to_vec()
            .into_iter()
            .flat_map(|n| w.nu.to_vec().into_iter().map(move |nu| Some((n, nu))))
            .collect(),
        _ => vec![None],
    };
    let mut out: Vec<Series> = Vec::new();
    for k in cfg.k.to_vec() {
        for q in cfg.s_q.to_vec() {
            for p in cfg.s_pi.to_vec() {
                let s_q = q.resolve(k).map_err(CliError::config)?;
                let s_pi = p.resolve(k).map_err(CliError::config)?;
                for &mesh in &meshes {
                    let s = Series { k, s_q, s_pi, mesh };
                    if !out.contains(&s) {
                        out.push(s);
                    }
                }
            }
        }
    }
    Ok(out)
}

fn signal(s: Signal) -> TimeFn {
    time_fn(move |t| s.eval(t))
}

fn solver_config(cfg: &ExperimentConfig, s: &Series) -> SolverConfig {
    let mut c = SolverConfig::new(s.k)
        .with_nodes(s.s_q, s.s_pi)
        .with_jacobian(match cfg.jacobian {
            Jacobian::Fd => JacobianMode::FiniteDifference,
            Jacobian::Analytic => JacobianMode::Analytic,
        });
    c.newton_tol = cfg.newton_tol;
    c.newton_max_iter = cfg.newton_max_iter;
    c
}

fn section_missing(name: &str) -> CliError {
    CliError::config(format!("missing [{name}] section"))
}

fn wave_params(cfg: &ExperimentConfig, s: &Series) -> Result<WaveParams> {
    let w = cfg.wave.as_ref().ok_or_else(|| section_missing("wave"))?;
    let (n, nu) = s.mesh.expect("wave series carry a mesh");
    Ok(WaveParams {
        n,
        ell: w.ell,
        gamma: w.gamma,
        nu,
        rf_quad_nodes: w.rf_quad_nodes,
    })
}

fn explicit_state(z0: &InitialState, dim: usize) -> DVector<f64> {
    match z0 {
        InitialState::Values(v) => DVector::from_column_slice(v),
        InitialState::Named(_) => DVector::zeros(dim),
    }
}

/// The physical system of a series and its initial state.
fn build_system(
    cfg: &ExperimentConfig,
    s: &Series,
) -> Result<(Box<dyn PortHamiltonian>, DVector<f64>)> {
    Ok(match cfg.model {
        ModelKind::Toda => {
            let t = cfg.toda.as_ref().ok_or_else(|| section_missing("toda"))?;
            let sys = make_toda(TodaParams::uniform(t.n, t.gamma), signal(t.control))?;
            (Box::new(sys), explicit_state(&t.z0, 2 * t.n))
        }
        ModelKind::RigidBody => {
            let r = cfg
                .rigid_body
                .as_ref()
                .ok_or_else(|| section_missing("rigid_body"))?;
            let params = RigidBodyParams {
                inertia: r.inertia,
                axis: r.axis,
            };
            let sys = make_rigid_body(params, signal(r.control))?;
            (Box::new(sys), explicit_state(&r.z0, 3))
        }
        ModelKind::Wave => {
            let w = cfg.wave.as_ref().ok_or_else(|| section_missing("wave"))?;
            let params = wave_params(cfg, s)?;
            let ell = params.ell;
            let sys = make_damped_wave(params, signal(w.g0), signal(w.gl))?;
            let z0 = match &w.z0 {
                InitialState::Named(n) if n == "standard" => sys.sample_state(
                    |x| 1.0 + 0.5 * (PI * x / ell).sin(),
                    |x| (4.0 * x / ell - 2.0).powi(3),
                ),
                other => explicit_state(other, sys.dim()),
            };
            (Box::new(sys), z0)
        }
    })
}

/// `(err_inf, err_nodal)`; `err_inf` is skipped when `nodal_only`.
fn manufactured_errors<S: PortHamiltonian>(
    case: ManufacturedCase<S>,
    config: &SolverConfig,
    t_end: f64,
    tau: f64,
    tau_ref: f64,
    nodal_only: bool,
) -> Result<(Option<f64>, f64)> {
    let sys = wrap_manufactured(case);
    let partition = TimePartition::uniform_step(0.0, t_end, tau)?;
    let sol = integrate(&sys, &sys.initial_value(), &partition, config)?;
    let exact = sys.exact_fn();
    let norm = match sys.mass() {
        Some(m) => ErrorNorm::MassWeighted(m),
        None => ErrorNorm::Plain,
    };
    let nodal = nodal_error(&sol, exact.as_ref(), norm);
    let inf = if nodal_only {
        None
    } else {
        Some(linf_error(&sol, exact.as_ref(), tau_ref, norm)?)
    };
    Ok((inf, nodal))
}

fn convergence_job(
    cfg: &ExperimentConfig,
    s: &Series,
    tau: f64,
) -> Result<(Option<f64>, f64)> {
    let sc = solver_config(cfg, s);
    let nodal_only = cfg.mode == Mode::ConvergeNodal;
    let (t_end, tau_ref) = (cfg.t_end, cfg.tau_ref);
    match cfg.model {
        ModelKind::Toda => {
            let t = cfg.toda.as_ref().ok_or_else(|| section_missing("toda"))?;
            let case = toda_case(TodaParams::uniform(t.n, t.gamma))?;
            manufactured_errors(case, &sc, t_end, tau, tau_ref, nodal_only)
        }
        ModelKind::RigidBody => {
            let r = cfg
                .rigid_body
                .as_ref()
                .ok_or_else(|| section_missing("rigid_body"))?;
            let case = rigid_body_case(RigidBodyParams {
                inertia: r.inertia,
                axis: r.axis,
            })?;
            manufactured_errors(case, &sc, t_end, tau, tau_ref, nodal_only)
        }
        ModelKind::Wave => {
            let case = wave_case(wave_params(cfg, s)?)?;
            manufactured_errors(case, &sc, t_end, tau, tau_ref, nodal_only)
        }
    }
}

fn eoc_cell(e: Option<Eoc>) -> Cell {
    match e {
        None => Cell::Empty,
        Some(Eoc::Rate(r)) => Cell::Float(r),
        Some(Eoc::BelowFloor) => Cell::Text("below_floor".into()),
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::config(format!("cannot start worker pool: {e}")))
}

fn run_convergence(cfg: &ExperimentConfig, all: &[Series], keyed: bool) -> Result<Table> {
    let taus = cfg.tau.to_vec();
    let jobs: Vec<(usize, f64)> = (0..all.len())
        .flat_map(|i| taus.iter().map(move |&t| (i, t)))
        .collect();
    let results: Vec<Result<(Option<f64>, f64)>> = pool(cfg.workers)?.install(|| {
        jobs.par_iter()
            .map(|&(i, tau)| convergence_job(cfg, &all[i], tau))
            .collect()
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;

    let nodal_only = cfg.mode == Mode::ConvergeNodal;
    let mut columns = if keyed { Series::key_columns(cfg.model) } else { vec![] };
    columns.extend(
        if nodal_only {
            vec!["tau", "err_nodal", "eoc_nodal"]
        } else {
            vec!["tau", "err_inf", "eoc_inf", "err_nodal", "eoc_nodal"]
        }
        .into_iter()
        .map(String::from),
    );
    let mut table = Table::new(columns);
    for (si, s) in all.iter().enumerate() {
        let rows = &results[si * taus.len()..(si + 1) * taus.len()];
        let nodal: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let eoc_nodal = rates(&taus, &nodal)?;
        let eoc_inf = if nodal_only {
            vec![None; taus.len()]
        } else {
            let inf: Vec<f64> = rows.iter().map(|r| r.0.unwrap_or(f64::NAN)).collect();
            rates(&taus, &inf)?
        };
        for (j, &tau) in taus.iter().enumerate() {
            let mut row = if keyed { s.key_cells() } else { vec![] };
            row.push(Cell::Float(tau));
            if !nodal_only {
                row.push(Cell::Float(rows[j].0.unwrap_or(f64::NAN)));
                row.push(eoc_cell(eoc_inf[j]));
            }
            row.push(Cell::Float(nodal[j]));
            row.push(eoc_cell(eoc_nodal[j]));
            table.push(row);
        }
    }
    Ok(table)
}

/// Per-row rates, `None` on the first row.
fn rates(taus: &[f64], errors: &[f64]) -> Result<Vec<Option<Eoc>>> {
    if taus.len() < 2 {
        return Ok(vec![None; taus.len()]);
    }
    let r = eoc(taus, errors)?;
    Ok(std::iter::once(None).chain(r.into_iter().map(Some)).collect())
}

fn solve_series(cfg: &ExperimentConfig, s: &Series) -> Result<(Box<dyn PortHamiltonian>, CpgSolution, SolverConfig)> {
    let (sys, z0) = build_system(cfg, s)?;
    let sc = solver_config(cfg, s);
    let partition = TimePartition::uniform_step(0.0, cfg.t_end, cfg.tau.to_vec()[0])?;
    let sol = integrate(sys.as_ref(), &z0, &partition, &sc)?;
    Ok((sys, sol, sc))
}

fn run_series<T: Send>(
    cfg: &ExperimentConfig,
    all: &[Series],
    job: impl Fn(&Series) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let out: Vec<Result<T>> = pool(cfg.workers)?.install(|| all.par_iter().map(&job).collect());
    out.into_iter().collect()
}

fn run_energy(cfg: &ExperimentConfig, all: &[Series], keyed: bool) -> Result<Table> {
    let reports = run_series(cfg, all, |s| {
        let (sys, sol, sc) = solve_series(cfg, s)?;
        Ok(energy_balance_report(sys.as_ref(), &sol, &sc)?)
    })?;
    let mut columns = if keyed { Series::key_columns(cfg.model) } else { vec![] };
    columns.extend(
        ["i", "t_i", "H", "dissipation", "supply", "E"].map(String::from),
    );
    let mut table = Table::new(columns);
    for (s, rep) in all.iter().zip(&reports) {
        for i in 0..rep.times.len() {
            let mut row = if keyed { s.key_cells() } else { vec![] };
            row.extend([
                Cell::Int(i),
                Cell::Float(rep.times[i]),
                Cell::Float(rep.hamiltonian[i]),
                Cell::Float(rep.dissipation[i]),
                Cell::Float(rep.supply[i]),
                Cell::Float(rep.balance_error[i]),
            ]);
            table.push(row);
        }
    }
    Ok(table)
}

fn run_trajectory(cfg: &ExperimentConfig, all: &[Series], keyed: bool) -> Result<Table> {
    let step = cfg.sample_step.unwrap_or_else(|| cfg.tau.to_vec()[0]);
    let samples = run_series(cfg, all, |s| {
        let (sys, sol, _) = solve_series(cfg, s)?;
        manufactured::sampling_grid(0.0, cfg.t_end, step)?
            .into_iter()
            .map(|t| {
                let z = sol.eval(t)?;
                let h = sys.hamiltonian(&z)?;
                Ok((t, z, h))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let dim = samples
        .first()
        .and_then(|s| s.first())
        .map_or(0, |(_, z, _)| z.len());
    let mut columns = if keyed { Series::key_columns(cfg.model) } else { vec![] };
    columns.push("t".into());
    columns.extend((0..dim).map(|j| format!("z_{j}")));
    columns.push("H".into());
    let mut table = Table::new(columns);
    for (s, rows) in all.iter().zip(samples) {
        for (t, z, h) in rows {
            if z.len() != dim {
                return Err(CliError::config(
                    "run mode needs one state dimension across series; use a single wave mesh",
                ));
            }
            let mut row = if keyed { s.key_cells() } else { vec![] };
            row.push(Cell::Float(t));
            row.extend(z.iter().map(|&x| Cell::Float(x)));
            row.push(Cell::Float(h));
            table.push(row);
        }
    }
    Ok(table)
}

/// Runs the experiment described by a validated config.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Table> {
    cfg.validate()
        .map_err(|(f, m)| CliError::config(format!("invalid config (field `{f}`): {m}")))?;
    let all = series(cfg)?;
    let keyed = all.len() > 1;
    match cfg.mode {
        Mode::Converge | Mode::ConvergeNodal => run_convergence(cfg, &all, keyed),
        Mode::Energy => run_energy(cfg, &all, keyed),
        Mode::Run => run_trajectory(cfg, &all, keyed),
    }
}

/// Metadata block for JSON output.
pub fn metadata(cfg: &ExperimentConfig) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("generator".into(), json!(concat!("cpg ", env!("CARGO_PKG_VERSION"))));
    m.insert("mode".into(), json!(cfg.mode.to_string()));
    m.insert("model".into(), json!(cfg.model.to_string()));
    // the destination is not part of the experiment
    let mut echoed = cfg.clone();
    echoed.output.path = None;
    m.insert(
        "config".into(),
        serde_json::to_value(&echoed).expect("config is always serializable"),
    );
    m
}

/// Writes `table` to the configured path, or stdout when there is none.
pub fn write_output(cfg: &ExperimentConfig, table: &Table) -> Result<()> {
    let format = cfg.output.format;
    match &cfg.output.path {
        Some(path) => {
            let io_err = |source| CliError::Io {
                path: path.clone(),
                source,
            };
            let file = File::create(path).map_err(io_err)?;
            let mut w = BufWriter::new(file);
            table.write(&mut w, format, metadata(cfg))?;
            w.flush().map_err(io_err)
        }
        None => {
            let stdout = io::stdout();
            table.write(stdout.lock(), format, metadata(cfg))
        }
    }
}

/// Largest `E` per series of an energy table, in row order.
pub fn max_balance_errors(table: &Table) -> Vec<f64> {
    let Some(e) = table.column("E") else {
        return Vec::new();
    };
    let Some(i) = table.column("i") else {
        return Vec::new();
    };
    let mut out: Vec<f64> = Vec::new();
    for row in &table.rows {
        let (Cell::Int(idx), Cell::Float(val)) = (&row[i], &row[e]) else {
            continue;
        };
        if *idx == 0 {
            out.push(0.0);
        }
        if let Some(last) = out.last_mut() {
            *last = last.max(*val);
        }
    }
    out
}
