//! Command-line surface: model validation suite, single-claim pricing, the
//! sensitivity experiments, and grid-slice debugging dumps.
//!
//! Exit codes: 0 success, 1 validation/computation failure, 2 configuration
//! error, 3 resource cap exceeded.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pricing_cli::config::{ConfigError, ConfigFile};
use pricing_cli::experiment::{csv_string, run_experiment, Engine, ExperimentError, ExperimentSpec, Scenario};
use pricing_cli::validation::run_validation_suite;
use pricing_core::constant_gamma::{self, SeedMode};
use pricing_core::equilibrium::{self, SolveOptions};
use pricing_core::model::{InitialRegime, Regime};
use pricing_core::scenario::{self, build_grid_from, build_tree_from, GridBudget, Lattice, LatticeError};

#[derive(Parser)]
#[command(
    name = "pricing-cli",
    about = "Equilibrium strategies and indifference prices in a regime-switching binomial market"
)]
struct Cli {
    /// Worker threads (0 = auto).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the engine validation suite and report one line per check.
    Validate {
        /// Exact-tree depth allowance; checks needing more are skipped.
        #[arg(long, default_value_t = 8)]
        depth_budget: usize,
    },
    /// Price the configured claim on the configured model.
    Price {
        #[arg(long)]
        config: PathBuf,
        /// Override the number of periods from the config.
        #[arg(long)]
        steps: Option<usize>,
        /// exact_tree | grid | constant_gamma_recursion (default grid).
        #[arg(long)]
        engine: Option<String>,
    },
    /// Run the configured sensitivity experiment and emit CSV.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        engine: Option<String>,
        /// CSV output path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump one grid slice as CSV (state and path probabilities).
    DumpSlice {
        #[arg(long)]
        config: PathBuf,
        /// Time index of the slice to dump.
        #[arg(long)]
        slice: usize,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum AppError {
    Config(String),
    Resource(String),
    Failure(String),
}

impl AppError {
    fn exit_code(&self) -> ExitCode {
        match self {
            AppError::Failure(_) => ExitCode::from(1),
            AppError::Config(_) => ExitCode::from(2),
            AppError::Resource(_) => ExitCode::from(3),
        }
    }

    fn message(&self) -> &str {
        match self {
            AppError::Config(m) | AppError::Resource(m) | AppError::Failure(m) => m,
        }
    }
}

impl From<ConfigError> for AppError {
    fn from(e: ConfigError) -> AppError {
        AppError::Config(e.to_string())
    }
}

impl From<LatticeError> for AppError {
    fn from(e: LatticeError) -> AppError {
        match e {
            LatticeError::DepthExceedsCap { .. } | LatticeError::StateExplosion { .. } => {
                AppError::Resource(e.to_string())
            }
            LatticeError::EmptyStart => AppError::Config(e.to_string()),
        }
    }
}

impl From<ExperimentError> for AppError {
    fn from(e: ExperimentError) -> AppError {
        match e {
            ExperimentError::EngineCap(_) => AppError::Resource(e.to_string()),
            ExperimentError::BadSweep
            | ExperimentError::BadStartStates
            | ExperimentError::EngineMismatch { .. }
            | ExperimentError::SweptModelInvalid { .. } => AppError::Config(e.to_string()),
            ExperimentError::ZeroBaseline(_)
            | ExperimentError::Solver(_)
            | ExperimentError::Recursion(_) => AppError::Failure(e.to_string()),
        }
    }
}

fn parse_engine(label: Option<&str>) -> Result<Engine, AppError> {
    match label {
        None => Ok(Engine::Grid),
        Some(l) => Engine::parse(l)
            .ok_or_else(|| AppError::Config(format!("unknown engine {l:?}"))),
    }
}

fn write_or_print(path: Option<&PathBuf>, content: &str) -> Result<(), AppError> {
    match path {
        Some(p) => std::fs::write(p, content)
            .map_err(|e| AppError::Failure(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn cmd_price(config: &PathBuf, steps: Option<usize>, engine: Option<&str>) -> Result<(), AppError> {
    let cfg = ConfigFile::load(config)?;
    let model = cfg.validated_model(steps)?;
    for w in model.warnings() {
        eprintln!("warning: {w}");
    }
    let payoff = cfg.payoff()?;
    let engine = parse_engine(engine)?;
    let starts: Vec<Regime> = model.initial_regime.support();
    println!(
        "model: N = {}, h = {:.6}, payoff: {} {} on {}, quantity {}",
        model.n_steps,
        model.h(),
        payoff.quantity,
        payoff.kind,
        match payoff.underlying {
            pricing_core::payoff::Underlying::Traded => "the traded asset",
            pricing_core::payoff::Underlying::NonTraded => "the non-traded asset",
        },
        payoff.quantity,
    );
    println!("engine: {}", engine.label());

    let mut per_start = [f64::NAN; 2];
    match engine {
        Engine::ExactTree => {
            for &s in &starts {
                let tree = build_tree_from(&model, model.n_steps, s)?;
                let sol = equilibrium::backward_solve(&tree, &model, &payoff, SolveOptions::default())
                    .map_err(|e| AppError::Failure(e.to_string()))?;
                per_start[s.index()] = sol.slices[0].price[0];
                println!(
                    "start {}: price = {:.10}, alpha_hat = {:.10}, alpha0 = {:.10}",
                    s,
                    sol.slices[0].price[0],
                    sol.slices[0].alpha_hat[0],
                    sol.slices[0].alpha0[0]
                );
            }
        }
        Engine::Grid => {
            let grid = build_grid_from(&model, model.n_steps, &starts, GridBudget::default())?;
            let sol = equilibrium::backward_solve(&grid, &model, &payoff, SolveOptions::default())
                .map_err(|e| AppError::Failure(e.to_string()))?;
            for &s in &starts {
                let k = (0..grid.slice_len(0))
                    .find(|&k| grid.state(0, k).regime == s)
                    .expect("start present");
                per_start[s.index()] = sol.slices[0].price[k];
                println!(
                    "start {}: price = {:.10}, alpha_hat = {:.10}, alpha0 = {:.10}",
                    s,
                    sol.slices[0].price[k],
                    sol.slices[0].alpha_hat[k],
                    sol.slices[0].alpha0[k]
                );
            }
        }
        Engine::ConstantGammaRecursion => {
            if !model.constant_gamma() {
                return Err(AppError::Config(
                    "constant_gamma_recursion requires equal risk aversion in both regimes".into(),
                ));
            }
            let grid = build_grid_from(&model, model.n_steps, &starts, GridBudget::default())?;
            let field = constant_gamma::price_recursion(
                &grid,
                &model,
                &payoff,
                model.regimes[0].gamma,
                SeedMode::TerminalTheorem,
            )
            .map_err(|e| AppError::Failure(e.to_string()))?;
            for &s in &starts {
                per_start[s.index()] = field.start_price(&grid, s).expect("start present");
                println!("start {}: price = {:.10}", s, per_start[s.index()]);
            }
        }
    }
    if let InitialRegime::Mixed(w) = model.initial_regime {
        let mix = w[0] * per_start[0] + w[1] * per_start[1];
        println!("mixture price ({:.3} bull / {:.3} bear) = {:.10}", w[0], w[1], mix);
    }
    Ok(())
}

fn cmd_experiment(
    config: &PathBuf,
    steps: Option<usize>,
    engine: Option<&str>,
    out: Option<&PathBuf>,
) -> Result<(), AppError> {
    let cfg = ConfigFile::load(config)?;
    let section = cfg
        .experiment
        .as_ref()
        .ok_or(ConfigError::MissingSection("experiment"))?;
    let scenario = Scenario::parse(&section.scenario).ok_or_else(|| {
        AppError::Config(format!("unknown experiment scenario {:?}", section.scenario))
    })?;
    let engine = match engine {
        Some(l) => parse_engine(Some(l))?,
        None => match &section.engine {
            Some(l) => parse_engine(Some(l))?,
            None => Engine::Grid,
        },
    };
    let model = cfg.market_model()?;
    let spec_steps = steps.or(section.steps).unwrap_or(model.n_steps);
    let start_states = match &section.start_states {
        None => vec![Regime::Bull, Regime::Bear],
        Some(labels) => {
            let mut v = Vec::new();
            for l in labels {
                v.push(pricing_cli::config::parse_regime_label(l)?);
            }
            v
        }
    };
    let spec = ExperimentSpec {
        scenario,
        sweep: section.sweep.clone(),
        steps: spec_steps,
        engine,
        payoff: cfg.payoff()?,
        start_states,
    };
    let rows = run_experiment(&spec, &model)?;
    write_or_print(out, &csv_string(&rows))
}

fn cmd_dump_slice(
    config: &PathBuf,
    slice: usize,
    steps: Option<usize>,
    out: Option<&PathBuf>,
) -> Result<(), AppError> {
    let cfg = ConfigFile::load(config)?;
    let model = cfg.validated_model(steps)?;
    if slice > model.n_steps {
        return Err(AppError::Config(format!(
            "slice {slice} exceeds the model's {} periods",
            model.n_steps
        )));
    }
    let starts = model.initial_regime.support();
    let grid = build_grid_from(&model, model.n_steps, &starts, GridBudget::default())?;
    write_or_print(out, &scenario::slice_csv(&grid, &model, slice))
}

fn run(cli: Cli) -> Result<bool, AppError> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| AppError::Failure(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Validate { depth_budget } => {
            let report = run_validation_suite(*depth_budget);
            for line in report.lines() {
                println!("{line}");
            }
            let executed = report.executed();
            if executed == 0 {
                println!("result: FAIL — nothing run");
                return Ok(false);
            }
            let passed = report.all_passed();
            println!(
                "result: {} ({executed} checks executed, {} skipped)",
                if passed { "PASS" } else { "FAIL" },
                report.checks.len() - executed
            );
            Ok(passed)
        }
        Command::Price {
            config,
            steps,
            engine,
        } => cmd_price(config, *steps, engine.as_deref()).map(|()| true),
        Command::Experiment {
            config,
            steps,
            engine,
            out,
        } => cmd_experiment(config, *steps, engine.as_deref(), out.as_ref()).map(|()| true),
        Command::DumpSlice {
            config,
            slice,
            steps,
            out,
        } => cmd_dump_slice(config, *slice, *steps, out.as_ref()).map(|()| true),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}
