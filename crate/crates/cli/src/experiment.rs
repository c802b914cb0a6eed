//! Sensitivity experiments: price a regime-switching model from both start
//! states against a no-switching baseline across a parameter sweep, and emit
//! the rows as CSV.
//!
//! The baseline freezes the bull-regime parameters in both states with a
//! constant risk aversion, matching the reference point the experiments
//! measure percentage changes against.

use std::fmt::Write as _;

use thiserror::Error;

use pricing_core::constant_gamma::{self, ConstantGammaError, SeedMode};
use pricing_core::equilibrium::{self, SolveOptions, SolverError};
use pricing_core::model::{
    validate_model, InitialRegime, MarketModel, Regime, ValidatedModel, ValidationError,
};
use pricing_core::payoff::PayoffSpec;
use pricing_core::scenario::{
    build_grid_from, build_tree_from, GridBudget, LatticeError, MarkovGrid, ScenarioTree,
    TREE_DEPTH_CAP,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    ExactTree,
    Grid,
    ConstantGammaRecursion,
}

impl Engine {
    pub fn parse(label: &str) -> Option<Engine> {
        match label {
            "exact_tree" => Some(Engine::ExactTree),
            "grid" => Some(Engine::Grid),
            "constant_gamma_recursion" => Some(Engine::ConstantGammaRecursion),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Engine::ExactTree => "exact_tree",
            Engine::Grid => "grid",
            Engine::ConstantGammaRecursion => "constant_gamma_recursion",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Bear-state risk aversion is 1.2× the swept bull value; market
    /// coefficients stay at their bull values in both states.
    RiskAversionBump,
    /// Bear-state drift of the traded asset drops by 0.2 from the swept
    /// bull value; risk aversion stays at the configured bull value.
    DriftBump,
    /// Bear-state volatility of the traded asset rises by 0.2 from the
    /// swept bull value.
    VolBump,
    /// Model regimes exactly as configured; the sweep sets a constant risk
    /// aversion in both states.
    Custom,
}

impl Scenario {
    pub fn parse(label: &str) -> Option<Scenario> {
        match label {
            "risk_aversion_bump" => Some(Scenario::RiskAversionBump),
            "drift_bump" => Some(Scenario::DriftBump),
            "vol_bump" => Some(Scenario::VolBump),
            "custom" => Some(Scenario::Custom),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Scenario::RiskAversionBump => "risk_aversion_bump",
            Scenario::DriftBump => "drift_bump",
            Scenario::VolBump => "vol_bump",
            Scenario::Custom => "custom",
        }
    }

    /// Whether the market coefficients change along the sweep (lattices can
    /// be reused when they do not).
    fn coefficients_vary(&self) -> bool {
        matches!(self, Scenario::DriftBump | Scenario::VolBump)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub scenario: Scenario,
    pub sweep: Vec<f64>,
    pub steps: usize,
    pub engine: Engine,
    pub payoff: PayoffSpec,
    pub start_states: Vec<Regime>,
}

#[derive(Debug, Clone, Copy)]
pub struct ExperimentRow {
    pub sweep_value: f64,
    pub price_baseline: f64,
    pub price_bull_start: f64,
    pub price_bear_start: f64,
    pub pct_change_bull: f64,
    pub pct_change_bear: f64,
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("sweep must be nonempty and strictly ascending")]
    BadSweep,
    #[error("engine cap exceeded: {0}")]
    EngineCap(String),
    #[error("baseline price is zero at sweep value {0}; percent change undefined")]
    ZeroBaseline(f64),
    #[error("the {engine} engine requires constant risk aversion; scenario {scenario} switches it")]
    EngineMismatch {
        engine: &'static str,
        scenario: &'static str,
    },
    #[error("start_states must be a nonempty subset of bull/bear")]
    BadStartStates,
    #[error("sweep value {value} produces an invalid model: {source}")]
    SweptModelInvalid {
        value: f64,
        source: ValidationError,
    },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Recursion(#[from] ConstantGammaError),
}

impl From<LatticeError> for ExperimentError {
    fn from(e: LatticeError) -> ExperimentError {
        ExperimentError::EngineCap(e.to_string())
    }
}

/// The switching and baseline models at one sweep value. The baseline uses
/// the bull-regime parameters in both states with constant risk aversion.
fn models_at(
    scenario: Scenario,
    base: &MarketModel,
    value: f64,
) -> (MarketModel, MarketModel) {
    let bull = base.regimes[0];
    let mut switching = base.clone();
    switching.initial_regime = InitialRegime::Fixed(Regime::Bull);
    let mut baseline = switching.clone();
    match scenario {
        Scenario::RiskAversionBump => {
            let mut r0 = bull;
            r0.gamma = value;
            let mut r1 = bull;
            r1.gamma = 1.2 * value;
            switching.regimes = [r0, r1];
            baseline.regimes = [r0, r0];
        }
        Scenario::DriftBump => {
            let mut r0 = bull;
            r0.mu1 = value;
            let mut r1 = r0;
            r1.mu1 = value - 0.2;
            switching.regimes = [r0, r1];
            baseline.regimes = [r0, r0];
        }
        Scenario::VolBump => {
            let mut r0 = bull;
            r0.sigma1 = value;
            let mut r1 = r0;
            r1.sigma1 = value + 0.2;
            switching.regimes = [r0, r1];
            baseline.regimes = [r0, r0];
        }
        Scenario::Custom => {
            switching.regimes[0].gamma = value;
            switching.regimes[1].gamma = value;
            let mut r0 = switching.regimes[0];
            r0.gamma = value;
            baseline.regimes = [r0, r0];
        }
    }
    (switching, baseline)
}

/// Lattices an engine prices on, built once per distinct coefficient set.
enum EngineLattice {
    Trees([Option<ScenarioTree>; 2]),
    Grid(MarkovGrid),
}

fn build_lattice(
    model: &ValidatedModel,
    engine: Engine,
    steps: usize,
    starts: &[Regime],
) -> Result<EngineLattice, ExperimentError> {
    match engine {
        Engine::ExactTree => {
            if steps > TREE_DEPTH_CAP {
                return Err(ExperimentError::EngineCap(format!(
                    "exact tree depth {steps} exceeds the cap {TREE_DEPTH_CAP}"
                )));
            }
            let mut trees = [None, None];
            for &s in starts {
                trees[s.index()] = Some(build_tree_from(model, steps, s)?);
            }
            Ok(EngineLattice::Trees(trees))
        }
        Engine::Grid | Engine::ConstantGammaRecursion => Ok(EngineLattice::Grid(
            build_grid_from(model, steps, starts, GridBudget::default())?,
        )),
    }
}

/// Root price per requested start state.
fn price_starts(
    model: &ValidatedModel,
    payoff: &PayoffSpec,
    engine: Engine,
    lattice: &EngineLattice,
    starts: &[Regime],
    scenario: Scenario,
) -> Result<[f64; 2], ExperimentError> {
    let mut out = [f64::NAN; 2];
    match (engine, lattice) {
        (Engine::ExactTree, EngineLattice::Trees(trees)) => {
            for &s in starts {
                let tree = trees[s.index()].as_ref().expect("tree built for start");
                let sol = equilibrium::backward_solve(tree, model, payoff, SolveOptions::default())?;
                out[s.index()] = sol.slices[0].price[0];
            }
        }
        (Engine::Grid, EngineLattice::Grid(grid)) => {
            let sol = equilibrium::backward_solve(grid, model, payoff, SolveOptions::default())?;
            for &s in starts {
                out[s.index()] =
                    equilibrium::start_price(&sol, grid, s).expect("start present in grid");
            }
        }
        (Engine::ConstantGammaRecursion, EngineLattice::Grid(grid)) => {
            if !model.constant_gamma() {
                return Err(ExperimentError::EngineMismatch {
                    engine: Engine::ConstantGammaRecursion.label(),
                    scenario: scenario.label(),
                });
            }
            let field = constant_gamma::price_recursion(
                grid,
                model,
                payoff,
                model.regimes[0].gamma,
                SeedMode::TerminalTheorem,
            )?;
            for &s in starts {
                out[s.index()] = field.start_price(grid, s).expect("start present in grid");
            }
        }
        _ => unreachable!("lattice kind always matches the engine that built it"),
    }
    Ok(out)
}

/// Runs the sweep: for each value, price the switching model from the
/// requested start states and the no-switching baseline, and report the
/// percentage changes.
pub fn run_experiment(
    spec: &ExperimentSpec,
    base_model: &MarketModel,
) -> Result<Vec<ExperimentRow>, ExperimentError> {
    if spec.sweep.is_empty() || spec.sweep.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ExperimentError::BadSweep);
    }
    if spec.start_states.is_empty() {
        return Err(ExperimentError::BadStartStates);
    }

    let mut cached: Option<(EngineLattice, EngineLattice)> = None;
    let mut rows = Vec::with_capacity(spec.sweep.len());
    for &value in &spec.sweep {
        let (switching_raw, baseline_raw) = models_at(spec.scenario, base_model, value);
        let invalid = |source: ValidationError| ExperimentError::SweptModelInvalid { value, source };
        let switching = validate_model(switching_raw).map_err(invalid)?;
        let baseline = validate_model(baseline_raw).map_err(invalid)?;

        let lattices = if spec.scenario.coefficients_vary() {
            cached = None;
            (
                build_lattice(&switching, spec.engine, spec.steps, &spec.start_states)?,
                build_lattice(&baseline, spec.engine, spec.steps, &[Regime::Bull])?,
            )
        } else {
            match cached.take() {
                Some(l) => l,
                None => (
                    build_lattice(&switching, spec.engine, spec.steps, &spec.start_states)?,
                    build_lattice(&baseline, spec.engine, spec.steps, &[Regime::Bull])?,
                ),
            }
        };

        let switch_prices = price_starts(
            &switching,
            &spec.payoff,
            spec.engine,
            &lattices.0,
            &spec.start_states,
            spec.scenario,
        )?;
        let base_prices = price_starts(
            &baseline,
            &spec.payoff,
            spec.engine,
            &lattices.1,
            &[Regime::Bull],
            spec.scenario,
        )?;
        let price_baseline = base_prices[0];
        if price_baseline == 0.0 {
            return Err(ExperimentError::ZeroBaseline(value));
        }
        let pct = |p: f64| 100.0 * (p - price_baseline) / price_baseline;
        rows.push(ExperimentRow {
            sweep_value: value,
            price_baseline,
            price_bull_start: switch_prices[0],
            price_bear_start: switch_prices[1],
            pct_change_bull: pct(switch_prices[0]),
            pct_change_bear: pct(switch_prices[1]),
        });

        if !spec.scenario.coefficients_vary() {
            cached = Some(lattices);
        }
    }
    Ok(rows)
}

/// Decimal formatting with 10 significant digits.
pub fn format_sig10(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exponent = x.abs().log10().floor() as i32;
    let decimals = (9 - exponent).clamp(0, 17) as usize;
    format!("{x:.decimals$}")
}

pub const CSV_HEADER: &str =
    "sweep_value,price_baseline,price_bull_start,price_bear_start,pct_change_bull,pct_change_bear";

/// CSV emission: header plus one line per row, sweep order, 10 significant
/// digits.
pub fn csv_string(rows: &[ExperimentRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            format_sig10(r.sweep_value),
            format_sig10(r.price_baseline),
            format_sig10(r.price_bull_start),
            format_sig10(r.price_bear_start),
            format_sig10(r.pct_change_bull),
            format_sig10(r.pct_change_bear),
        );
    }
    out
}

pub fn emit_csv(rows: &[ExperimentRow], path: &std::path::Path) -> std::io::Result<()> {
    std::fs::write(path, csv_string(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use pricing_core::model::{RegimeParams, S2Form};

    fn base_model() -> MarketModel {
        let p = RegimeParams {
            mu1: 0.1,
            sigma1: 0.2,
            mu2: 0.1,
            sigma2: 0.5,
            gamma: 0.6,
        };
        MarketModel {
            n_steps: 4,
            horizon: 1.0,
            s1_0: 10.0,
            s2_0: 10.0,
            rho: 0.2,
            regimes: [p, p],
            transition: [[0.6, 0.4], [0.6, 0.4]],
            initial_regime: InitialRegime::Fixed(Regime::Bull),
            s2_form: S2Form::Standard,
        }
    }

    fn spec(scenario: Scenario, sweep: Vec<f64>, engine: Engine, steps: usize) -> ExperimentSpec {
        ExperimentSpec {
            scenario,
            sweep,
            steps,
            engine,
            payoff: PayoffSpec::call_on_s2(10.0, 1.0),
            start_states: vec![Regime::Bull, Regime::Bear],
        }
    }

    #[test]
    fn disabled_switching_gives_zero_percent_change() {
        // Custom scenario with identical regimes: switching == baseline.
        let s = spec(Scenario::Custom, vec![0.6], Engine::Grid, 4);
        let rows = run_experiment(&s, &base_model()).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].pct_change_bull.abs() < 1e-9);
        assert!(rows[0].pct_change_bear.abs() < 1e-9);
    }

    #[test]
    fn risk_aversion_bump_orders_the_percent_changes() {
        let s = spec(Scenario::RiskAversionBump, vec![0.6], Engine::ExactTree, 4);
        let rows = run_experiment(&s, &base_model()).unwrap();
        let r = &rows[0];
        assert!(
            r.pct_change_bear > r.pct_change_bull && r.pct_change_bull > 0.0,
            "bear {} bull {}",
            r.pct_change_bear,
            r.pct_change_bull
        );
    }

    #[test]
    fn drift_bump_builds_valid_bear_state() {
        let s = spec(Scenario::DriftBump, vec![0.3], Engine::Grid, 6);
        let rows = run_experiment(&s, &base_model()).unwrap();
        assert!(rows[0].price_baseline > 0.0);
        assert!(rows[0].price_bull_start.is_finite());
    }

    #[test]
    fn engines_agree_on_a_shared_experiment() {
        let sweep = vec![0.4, 0.8];
        let a = run_experiment(
            &spec(Scenario::Custom, sweep.clone(), Engine::Grid, 4),
            &base_model(),
        )
        .unwrap();
        let b = run_experiment(
            &spec(Scenario::Custom, sweep.clone(), Engine::ExactTree, 4),
            &base_model(),
        )
        .unwrap();
        let c = run_experiment(
            &spec(Scenario::Custom, sweep, Engine::ConstantGammaRecursion, 4),
            &base_model(),
        )
        .unwrap();
        for ((ra, rb), rc) in a.iter().zip(&b).zip(&c) {
            assert!((ra.price_bull_start - rb.price_bull_start).abs() <= 1e-8);
            assert!((ra.price_bear_start - rb.price_bear_start).abs() <= 1e-8);
            assert!((ra.price_bull_start - rc.price_bull_start).abs() <= 1e-8);
            assert!((ra.price_baseline - rc.price_baseline).abs() <= 1e-8);
        }
    }

    #[test]
    fn recursion_engine_rejects_switching_gamma() {
        let s = spec(
            Scenario::RiskAversionBump,
            vec![0.6],
            Engine::ConstantGammaRecursion,
            4,
        );
        assert!(matches!(
            run_experiment(&s, &base_model()),
            Err(ExperimentError::EngineMismatch { .. })
        ));
    }

    #[test]
    fn sweep_must_ascend() {
        let s = spec(Scenario::Custom, vec![0.6, 0.4], Engine::Grid, 4);
        assert!(matches!(
            run_experiment(&s, &base_model()),
            Err(ExperimentError::BadSweep)
        ));
    }

    #[test]
    fn tree_engine_cap_is_enforced() {
        let s = spec(Scenario::Custom, vec![0.6], Engine::ExactTree, 9);
        assert!(matches!(
            run_experiment(&s, &base_model()),
            Err(ExperimentError::EngineCap(_))
        ));
    }

    #[test]
    fn csv_round_trips_and_recomputes() {
        let rows = run_experiment(
            &spec(Scenario::RiskAversionBump, vec![0.5, 0.6], Engine::ExactTree, 3),
            &base_model(),
        )
        .unwrap();
        let csv = csv_string(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        for (line, row) in lines.zip(&rows) {
            let vals: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
            assert_eq!(vals.len(), 6);
            assert!((vals[0] - row.sweep_value).abs() <= 1e-9);
            // pct fields recomputable from the printed prices
            let pct_bull = 100.0 * (vals[2] - vals[1]) / vals[1];
            assert!((pct_bull - vals[4]).abs() <= 1e-8 * (1.0 + vals[4].abs()));
            let pct_bear = 100.0 * (vals[3] - vals[1]) / vals[1];
            assert!((pct_bear - vals[5]).abs() <= 1e-8 * (1.0 + vals[5].abs()));
        }
    }

    #[test]
    fn empty_rows_emit_header_only() {
        let csv = csv_string(&[]);
        assert_eq!(csv, format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn sig10_formatting() {
        assert_eq!(format_sig10(0.0), "0");
        assert_eq!(format_sig10(4.314753521954637), "4.314753522");
        assert_eq!(format_sig10(0.004315), "0.004315000000");
        let parsed: f64 = format_sig10(123.45678901234).parse().unwrap();
        assert!((parsed - 123.45678901234).abs() <= 1e-7);
    }
}
