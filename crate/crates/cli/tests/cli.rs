use std::path::Path;
use std::process::{Command, Output};

use cpg_cli::config::{ExperimentConfig, Format, Mode, ModelKind};
use cpg_cli::output::{Cell, Table};
use cpg_cli::presets::{self, PRESETS};
use cpg_cli::runner::{max_balance_errors, run_experiment};

fn cpg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn floats(table: &Table, col: &str) -> Vec<Option<f64>> {
    let j = table.column(col).unwrap();
    table
        .rows
        .iter()
        .map(|r| match &r[j] {
            Cell::Float(x) => Some(*x),
            _ => None,
        })
        .collect()
}

#[test]
fn dumped_config_reproduces_output_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("fig6.toml");
    let dumped = cpg(&["dump-config", "--preset", "fig6", "--k", "1,3"]);
    assert!(dumped.status.success());
    std::fs::write(&cfg, &dumped.stdout).unwrap();

    for format in ["csv", "json"] {
        let a = dir.path().join(format!("a.{format}"));
        let b = dir.path().join(format!("b.{format}"));
        let from_preset = cpg(&[
            "energy", "--preset", "fig6", "--k", "1,3", "--format", format,
            "--out", a.to_str().unwrap(),
        ]);
        let from_file = cpg(&[
            "energy", "--config", cfg.to_str().unwrap(), "--format", format,
            "--out", b.to_str().unwrap(),
        ]);
        assert!(from_preset.status.success() && from_file.status.success());
        let (a, b) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
        assert!(!a.is_empty());
        assert_eq!(a, b, "{format}");
    }
}

#[test]
fn config_errors_exit_with_1_and_point_at_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(
        &path,
        "version = 1\nmode = \"energy\"\nmodel = \"toda\"\nt_end = 1.0\ntau = 0.1\nk = 2\n\n[toda]\nn = 3\ngamma = -0.5\n",
    )
    .unwrap();
    let out = cpg(&["energy", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("toda.gamma") && err.contains("line 10"), "{err}");

    std::fs::write(&path, "version = 1\nmode = energy\n").unwrap();
    let out = cpg(&["energy", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    assert_eq!(cpg(&["energy", "--preset", "fig99"]).status.code(), Some(1));
    assert_eq!(cpg(&["converge", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(cpg(&["converge"]).status.code(), Some(1));
}

#[test]
fn newton_failure_exits_with_2_and_names_the_step() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hard.toml");
    let mut cfg = ExperimentConfig::new(Mode::Energy, ModelKind::Toda, vec![2], vec![0.5]);
    cfg.t_end = 1.0;
    cfg.newton_tol = 1e-300;
    cfg.newton_max_iter = 2;
    cfg.toda.as_mut().unwrap().z0 = cpg_cli::config::InitialState::Values(vec![0.5; 10]);
    std::fs::write(&path, cfg.to_toml_string()).unwrap();
    let out = cpg(&["energy", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("step 1"), "{err}");
}

#[test]
fn unwritable_output_exits_with_3() {
    let out = cpg(&[
        "energy", "--model", "rigid-body", "--T", "0.1", "--out",
        "/nonexistent/dir/out.csv",
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn presets_cover_every_figure() {
    let out = cpg(&["presets"]);
    assert!(out.status.success());
    let listing = String::from_utf8(out.stdout).unwrap();
    assert_eq!(listing.lines().count(), 16);
    for p in PRESETS {
        assert!(listing.contains(p.name));
        let c = p.config();
        assert_eq!(ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
    }
    for i in 1..=12 {
        assert!(presets::find(&format!("fig{i}")).is_some());
    }
}

#[test]
fn rigid_body_energy_preset_balances_to_round_off() {
    let table = run_experiment(&presets::find("rigid_body_energybalance").unwrap().config()).unwrap();
    assert_eq!(
        table.columns[3..],
        ["i", "t_i", "H", "dissipation", "supply", "E"].map(String::from)
    );
    let maxima = max_balance_errors(&table);
    assert_eq!(maxima.len(), 4);
    assert!(maxima.iter().all(|&e| e <= 1e-12), "{maxima:?}");
}

#[test]
fn wave_energy_presets_balance_to_round_off() {
    for name in ["fig11", "fig12"] {
        let table = run_experiment(&presets::find(name).unwrap().config()).unwrap();
        let maxima = max_balance_errors(&table);
        assert_eq!(maxima.len(), 4);
        assert!(maxima.iter().all(|&e| e <= 1e-10), "{name}: {maxima:?}");
    }
}

#[test]
fn toda_convergence_rates_approach_k_plus_one() {
    let mut cfg = presets::find("fig1").unwrap().config();
    cfg.tau = vec![0.25, 0.125, 0.0625, 0.03125].into();
    cfg.tau_ref = 1e-3;
    let table = run_experiment(&cfg).unwrap();
    assert_eq!(
        table.columns,
        ["k", "s_q", "s_pi", "tau", "err_inf", "eoc_inf", "err_nodal", "eoc_nodal"].map(String::from)
    );
    let eoc = floats(&table, "eoc_inf");
    let err = floats(&table, "err_inf");
    for k in 1..=4usize {
        let last = 4 * k - 1;
        assert!(eoc[last - 3].is_none(), "first row of a series has no rate");
        if err[last].unwrap() > 1e-11 {
            let r = eoc[last].unwrap();
            assert!((r - (k + 1) as f64).abs() <= 0.2, "k={k}: {r}");
        }
    }
}

#[test]
fn single_series_uses_the_plain_schema() {
    let out = cpg(&[
        "converge-nodal", "--model", "rigid-body", "--k", "2", "--tau", "0.5,0.25",
        "--T", "1",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("tau,err_nodal,eoc_nodal"));
    assert!(lines.next().unwrap().ends_with(','));
    assert_eq!(lines.count(), 1);

    let out = cpg(&["converge", "--model", "toda", "--tau", "0.5,0.25", "--T", "1"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("tau,err_inf,eoc_inf,err_nodal,eoc_nodal"));
}

#[test]
fn run_mode_samples_trajectory_and_energy() {
    let mut cfg = ExperimentConfig::new(Mode::Run, ModelKind::RigidBody, vec![2], vec![0.1]);
    cfg.t_end = 1.0;
    cfg.sample_step = Some(0.05);
    cfg.rigid_body.as_mut().unwrap().control = cpg_cli::config::Signal::Zero;
    let table = run_experiment(&cfg).unwrap();
    assert_eq!(table.columns, ["t", "z_0", "z_1", "z_2", "H"].map(String::from));
    assert_eq!(table.rows.len(), 21);
    let h = floats(&table, "H");
    // unforced body with unit inertia keeps its energy
    assert!(h.iter().all(|x| (x.unwrap() - 0.625).abs() <= 1e-12));
}

#[test]
fn worker_count_does_not_change_rows() {
    let mut cfg = presets::find("fig3").unwrap().config();
    cfg.tau = vec![0.25, 0.125].into();
    cfg.tau_ref = 1e-2;
    cfg.output.format = Format::Csv;
    let render = |workers| {
        let mut c = cfg.clone();
        c.workers = workers;
        let mut buf = Vec::new();
        run_experiment(&c).unwrap().write_csv(&mut buf).unwrap();
        buf
    };
    assert_eq!(render(1), render(3));
}

#[test]
fn json_output_is_one_object() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.json");
    let out = cpg(&[
        "energy", "--model", "toda", "--T", "0.2", "--format", "json", "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let v: serde_json::Value =
        serde_json::from_slice(&std::fs::read(Path::new(&path)).unwrap()).unwrap();
    assert_eq!(v["metadata"]["mode"], "energy");
    assert_eq!(v["metadata"]["model"], "toda");
    assert_eq!(v["columns"][5], "E");
    assert_eq!(v["rows"].as_array().unwrap().len(), 21);
}
