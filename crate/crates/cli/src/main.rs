use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cpg_cli::config::{ExperimentConfig, Format, Jacobian, Mode, ModelKind, NodeRule, OneOrMany};
use cpg_cli::runner::{max_balance_errors, run_experiment, write_output};
use cpg_cli::{presets, CliError, Result};

/// Energy-consistent cPG experiments for port-Hamiltonian systems.
#[derive(Parser)]
#[command(name = "cpg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Error table in the sup norm and at grid points, with rates.
    Converge(RunArgs),
    /// Error table at grid points only.
    ConvergeNodal(RunArgs),
    /// Per-step energy balance.
    Energy(RunArgs),
    /// Sampled trajectory and Hamiltonian.
    Run(RunArgs),
    /// Lists the built-in figure presets.
    Presets,
    /// Prints the effective config (preset or file plus overrides) as TOML.
    DumpConfig(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Toda,
    RigidBody,
    Wave,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum JacobianArg {
    Fd,
    Analytic,
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in config by figure name (see `cpg presets`).
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    /// Polynomial degrees, comma separated.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    /// Quadrature nodes: integers or k, 2k, max(k,3).
    #[arg(long, num_args = 1)]
    sq: Option<Vec<String>>,
    /// Projection nodes: integers or k, 2k, max(k,3).
    #[arg(long, num_args = 1)]
    spi: Option<Vec<String>>,
    /// Step sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    tau: Option<Vec<f64>>,
    /// Final time.
    #[arg(long = "T")]
    t_end: Option<f64>,
    /// Sampling step of the sup-norm error.
    #[arg(long)]
    tau_ref: Option<f64>,
    #[arg(long, value_enum)]
    jacobian: Option<JacobianArg>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<String>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Worker cap, 0 for all cores.
    #[arg(long)]
    workers: Option<usize>,
}

fn node_rules(raw: &[String]) -> OneOrMany<NodeRule> {
    raw.iter()
        .flat_map(|s| split_rules(s))
        .map(|s| match s.parse::<usize>() {
            Ok(n) => NodeRule::Fixed(n),
            Err(_) => NodeRule::Expr(s),
        })
        .collect::<Vec<_>>()
        .into()
}

/// Splits on commas outside parentheses, so `max(k,3)` stays whole.
fn split_rules(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0;
    let mut cur = String::new();
    for c in s.chars() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(std::mem::take(&mut cur).trim().to_string());
                continue;
            }
            _ => {}
        }
        cur.push(c);
    }
    out.push(cur.trim().to_string());
    out
}

fn default_taus(mode: Mode) -> Vec<f64> {
    match mode {
        Mode::Converge | Mode::ConvergeNodal => (0..5).map(|j| 0.25 / f64::from(1u32 << j)).collect(),
        Mode::Energy | Mode::Run => vec![1e-2],
    }
}

/// Base config from `--config`, `--preset` or `--model`, then flag overrides.
fn resolve(args: &RunArgs, mode: Option<Mode>) -> Result<ExperimentConfig> {
    let mut cfg = if let Some(path) = &args.config {
        ExperimentConfig::from_path(path)?
    } else if let Some(name) = &args.preset {
        presets::find(name)
            .ok_or_else(|| {
                CliError::Config(format!("unknown preset \"{name}\" (see `cpg presets`)"))
            })?
            .config()
    } else {
        let model = args.model.ok_or_else(|| {
            CliError::Config("one of --config, --preset or --model is required".into())
        })?;
        let m = mode.unwrap_or(Mode::Converge);
        ExperimentConfig::new(m, model_kind(model), vec![1], default_taus(m))
    };

    if let Some(m) = mode {
        cfg.mode = m;
    }
    if let Some(model) = args.model {
        cfg.model = model_kind(model);
        cfg.ensure_model_section();
    }
    if let Some(k) = &args.k {
        cfg.k = k.clone().into();
    }
    if let Some(r) = &args.sq {
        cfg.s_q = node_rules(r);
    }
    if let Some(r) = &args.spi {
        cfg.s_pi = node_rules(r);
    }
    if let Some(t) = &args.tau {
        cfg.tau = t.clone().into();
    }
    if let Some(t) = args.t_end {
        cfg.t_end = t;
    }
    if let Some(t) = args.tau_ref {
        cfg.tau_ref = t;
    }
    if let Some(j) = args.jacobian {
        cfg.jacobian = match j {
            JacobianArg::Fd => Jacobian::Fd,
            JacobianArg::Analytic => Jacobian::Analytic,
        };
    }
    if let Some(o) = &args.out {
        cfg.output.path = Some(o.clone());
    }
    if let Some(f) = args.format {
        cfg.output.format = match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        };
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    cfg.validate()
        .map_err(|(f, m)| CliError::Config(format!("invalid config (field `{f}`): {m}")))?;
    Ok(cfg)
}

fn model_kind(m: ModelArg) -> ModelKind {
    match m {
        ModelArg::Toda => ModelKind::Toda,
        ModelArg::RigidBody => ModelKind::RigidBody,
        ModelArg::Wave => ModelKind::Wave,
    }
}

fn execute(args: &RunArgs, mode: Mode) -> Result<()> {
    let cfg = resolve(args, Some(mode))?;
    let table = run_experiment(&cfg)?;
    write_output(&cfg, &table)?;
    if let Some(path) = &cfg.output.path {
        eprintln!("wrote {} rows to {path}", table.rows.len());
    }
    if mode == Mode::Energy {
        for (i, e) in max_balance_errors(&table).iter().enumerate() {
            eprintln!("series {}: max E = {e:.3e}", i + 1);
        }
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Converge(a) => execute(&a, Mode::Converge),
        Command::ConvergeNodal(a) => execute(&a, Mode::ConvergeNodal),
        Command::Energy(a) => execute(&a, Mode::Energy),
        Command::Run(a) => execute(&a, Mode::Run),
        Command::Presets => {
            let mut out = std::io::stdout().lock();
            for p in presets::PRESETS {
                let alias = p.alias.unwrap_or("");
                // a closed pipe just ends the listing
                if writeln!(out, "{:<52} {:<6} {}", p.name, alias, p.summary).is_err() {
                    break;
                }
            }
            Ok(())
        }
        Command::DumpConfig(a) => {
            let cfg = resolve(&a, None)?;
            print!("{}", cfg.to_toml_string());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
