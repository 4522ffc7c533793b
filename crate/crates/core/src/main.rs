use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use refarm::allocator::{solve_p1, AllocationProblem};
use refarm::asymptotics::interference_margin;
use refarm::cdma::Receiver;
use refarm::channel::{gen_user_channels, linear_to_db, ChannelModel};
use refarm::config::{parse_config_with, Settings};
use refarm::experiments::{
    run_allocation_snapshot, run_convergence_trace, run_load_sweep, run_sinr_validation,
    run_snr_sweep, snapshot_rows, SweptParameter,
};
use refarm::output::{
    emit_csv, fmt_float, AllocationTable, MarginTable, SolveSummary, ValidationTable,
};
use refarm::rng::substream;
use refarm::{Error, Result};

/// CDMA/OFDMA spectrum-sharing simulator.
#[derive(Debug, Parser)]
#[command(name = "refarm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "results")]
    out: PathBuf,
    /// Master seed (overrides sweep.seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override a configuration key, e.g. `--set alpha=0.3` or `--set solver.max_iterations=100`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Monte Carlo trials per point (overrides sweep.trials).
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Suppress the summary on stdout.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
enum Command {
    /// Supportable loads and interference margins of both receivers.
    Margin,
    /// Solve one allocation instance.
    Allocate,
    /// Sweep the CDMA load.
    SweepLoad,
    /// Sweep the CDMA receive SNR.
    SweepSnr,
    /// Record the dual solver's per-iteration history.
    Trace,
    /// Per-subcarrier allocation in one load regime.
    Snapshot,
    /// Compare finite-size SINR with its large-system limit.
    Validate,
}

fn load_settings(cli: &Cli) -> Result<Settings> {
    let defaults: Vec<String> = match cli.command {
        Command::SweepLoad => vec!["sweep.parameter=alpha".into()],
        Command::SweepSnr => vec!["sweep.parameter=receive_snr_db".into()],
        _ => Vec::new(),
    };
    let mut overrides = cli.common.overrides.clone();
    if let Some(seed) = cli.common.seed {
        overrides.push(format!("sweep.seed={seed}"));
    }
    if let Some(trials) = cli.common.trials {
        overrides.push(format!("sweep.trials={trials}"));
    }
    let settings = parse_config_with(cli.common.config.as_deref(), &defaults, &overrides)?;
    let wanted = match cli.command {
        Command::SweepLoad => Some(SweptParameter::Alpha),
        Command::SweepSnr => Some(SweptParameter::ReceiveSnrDb),
        _ => None,
    };
    if let Some(w) = wanted.filter(|&w| w != settings.parameter) {
        return Err(Error::Config(format!(
            "sweep.parameter = {} conflicts with this command, which sweeps {w}",
            settings.parameter
        )));
    }
    Ok(settings)
}

fn write_resolved(settings: &Settings, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let path = out.join("config.resolved.toml");
    std::fs::write(&path, settings.to_toml()?).map_err(|e| Error::Io { path, source: e })
}

fn run(cli: &Cli) -> Result<()> {
    let settings = load_settings(cli)?;
    let out = &cli.common.out;
    let quiet = cli.common.quiet;
    write_resolved(&settings, out)?;
    let sys = &settings.system;
    match cli.command {
        Command::Margin => {
            let alpha = settings.alpha;
            let table = MarginTable {
                alpha,
                receive_snr_db: linear_to_db(sys.receive_snr()),
                beta_star_db: linear_to_db(sys.beta_star),
                sigma2: sys.sigma2,
                results: [Receiver::Mf, Receiver::Mmse]
                    .into_iter()
                    .map(|r| interference_margin(alpha, sys.q, sys.sigma2, sys.beta_star, r))
                    .collect(),
            };
            emit_csv(&table, &out.join("margin.csv"))?;
            if !quiet {
                for m in &table.results {
                    println!(
                        "{}: alpha* = {}, margin = {} (feasible: {})",
                        m.receiver,
                        fmt_float(m.alpha_star),
                        fmt_float(m.margin / sys.sigma2),
                        m.feasible
                    );
                }
            }
        }
        Command::Allocate => {
            let problem = match &settings.problem {
                Some(p) => p.clone(),
                None => {
                    let margin = interference_margin(
                        sys.alpha(),
                        sys.q,
                        sys.sigma2,
                        sys.beta_star,
                        settings.receiver,
                    );
                    let channels = gen_user_channels(
                        sys.k,
                        sys.n,
                        sys.paths,
                        ChannelModel::Selective,
                        &mut substream(settings.seed, &[0, 1]),
                    )?;
                    AllocationProblem::new(
                        channels.iter().map(|c| c.response.gains.clone()).collect(),
                        sys.noise_floor(),
                        margin.margin,
                        sys.power_caps.clone(),
                    )?
                }
            };
            let outcome = solve_p1(&problem, &settings.solver)?;
            emit_csv(
                &AllocationTable {
                    rows: snapshot_rows(&problem, &outcome.allocation),
                },
                &out.join("allocation.csv"),
            )?;
            let summary = SolveSummary { problem, outcome };
            emit_csv(&summary, &out.join("allocation_summary.csv"))?;
            if !quiet {
                let o = &summary.outcome;
                println!(
                    "throughput = {} bits/symbol, relative gap = {}, iterations = {}, converged = {}",
                    fmt_float(o.throughput),
                    fmt_float(o.relative_gap),
                    o.dual.iteration,
                    o.converged
                );
            }
        }
        Command::SweepLoad | Command::SweepSnr => {
            let spec = settings.sweep_spec();
            let (result, name) = if cli.command == Command::SweepLoad {
                (run_load_sweep(&spec)?, "sweep_load")
            } else {
                (run_snr_sweep(&spec)?, "sweep_snr")
            };
            let path = out.join(format!("{name}_{}.csv", settings.receiver));
            emit_csv(&result, &path)?;
            if !quiet {
                for p in &result.points {
                    println!(
                        "{} = {}: throughput = {}, CDMA SINR theory = {} dB, empirical = {} dB{}",
                        result.swept,
                        fmt_float(p.value),
                        fmt_float(p.ofdma_throughput),
                        fmt_float(linear_to_db(p.cdma_sinr_theory)),
                        fmt_float(linear_to_db(p.cdma_sinr_empirical_mean)),
                        if p.feasible { "" } else { " (infeasible)" }
                    );
                }
            }
        }
        Command::Trace => {
            let trace = run_convergence_trace(
                sys,
                settings.regime,
                settings.receiver,
                settings.seed,
                &settings.solver,
            )?;
            emit_csv(&trace, &out.join(format!("trace_{}.csv", settings.regime)))?;
            if !quiet {
                let o = &trace.run.outcome;
                println!(
                    "{} load: {} iterations, relative gap = {}, throughput = {}",
                    settings.regime,
                    o.dual.iteration,
                    fmt_float(o.relative_gap),
                    fmt_float(o.throughput)
                );
            }
        }
        Command::Snapshot => {
            let snap = run_allocation_snapshot(
                sys,
                settings.regime,
                settings.receiver,
                settings.seed,
                &settings.solver,
            )?;
            emit_csv(&snap, &out.join(format!("snapshot_{}.csv", settings.regime)))?;
            if !quiet {
                println!(
                    "{} load: throughput = {}",
                    settings.regime,
                    fmt_float(snap.run.outcome.throughput)
                );
            }
        }
        Command::Validate => {
            let rows = run_sinr_validation(sys, settings.trials, settings.seed)?;
            if !quiet {
                for r in &rows {
                    println!(
                        "{} {}: theory = {}, empirical = {} (relative error {}, std/mean {})",
                        r.receiver,
                        r.model,
                        fmt_float(r.theory),
                        fmt_float(r.empirical_mean),
                        fmt_float(r.relative_error),
                        fmt_float(r.std_over_mean)
                    );
                }
            }
            emit_csv(&ValidationTable { rows }, &out.join("validation.csv"))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
