//! The validation suite: every engine-level guarantee run at its pinned
//! depth and tolerance, one pass/fail line per check. The heavy checks
//! (oracle equivalence, recursion equivalence, the sensitivity experiments)
//! are executed under both a single-worker and a full-worker thread pool and
//! their serialized outputs must match byte for byte.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pricing_core::constant_gamma::{self, SeedMode};
use pricing_core::equilibrium::{self, SolveOptions};
use pricing_core::measures::{Measure, OneStepLaw};
use pricing_core::model::{
    validate_model, InitialRegime, MarketModel, Regime, RegimeParams, S2Form, ValidatedModel,
};
use pricing_core::oracle;
use pricing_core::payoff::{OptionKind, PayoffSpec, Underlying};
use pricing_core::scenario::{build_grid, build_tree_from, Branch, Lattice, MarkovGrid};

use crate::experiment::{
    csv_string, run_experiment, Engine, ExperimentRow, ExperimentSpec, Scenario,
};

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub id: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub skipped: bool,
    pub detail: String,
}

impl CheckResult {
    fn ran(id: &'static str, name: &'static str, passed: bool, detail: String) -> CheckResult {
        CheckResult {
            id,
            name,
            passed,
            skipped: false,
            detail,
        }
    }

    fn skip(id: &'static str, name: &'static str, detail: String) -> CheckResult {
        CheckResult {
            id,
            name,
            passed: false,
            skipped: true,
            detail,
        }
    }

    pub fn line(&self) -> String {
        let tag = if self.skipped {
            "SKIP"
        } else if self.passed {
            "PASS"
        } else {
            "FAIL"
        };
        format!("[{tag}] {}: {} — {}", self.id, self.name, self.detail)
    }
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn executed(&self) -> usize {
        self.checks.iter().filter(|c| !c.skipped).count()
    }

    pub fn all_passed(&self) -> bool {
        self.executed() > 0 && self.checks.iter().all(|c| c.skipped || c.passed)
    }

    pub fn lines(&self) -> Vec<String> {
        self.checks.iter().map(|c| c.line()).collect()
    }
}

fn section4_base(n_steps: usize) -> MarketModel {
    let p = RegimeParams {
        mu1: 0.1,
        sigma1: 0.2,
        mu2: 0.1,
        sigma2: 0.5,
        gamma: 0.6,
    };
    MarketModel {
        n_steps,
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

fn section4_switching(n_steps: usize) -> ValidatedModel {
    let mut m = section4_base(n_steps);
    m.regimes[1].gamma = 0.72;
    validate_model(m).unwrap()
}

/// Draws a random validated model with N in 1..=8 and θ√h well inside [0, 1).
fn random_model(rng: &mut ChaCha8Rng, constant_gamma: bool) -> ValidatedModel {
    loop {
        let n_steps = rng.gen_range(1..=8usize);
        let h: f64 = 1.0 / n_steps as f64;
        let make_params = |rng: &mut ChaCha8Rng, gamma: f64| {
            let sigma1 = rng.gen_range(0.1..0.5);
            let tsh = rng.gen_range(0.0..0.8);
            RegimeParams {
                mu1: tsh * sigma1 / h.sqrt(),
                sigma1,
                mu2: rng.gen_range(-0.1..0.3),
                sigma2: rng.gen_range(0.1..0.6),
                gamma,
            }
        };
        let g0 = rng.gen_range(0.2..1.5);
        let g1 = if constant_gamma {
            g0
        } else {
            rng.gen_range(0.2..1.5)
        };
        let raw = MarketModel {
            n_steps,
            horizon: 1.0,
            s1_0: rng.gen_range(5.0..20.0),
            s2_0: rng.gen_range(5.0..20.0),
            rho: rng.gen_range(-1.0..1.0),
            regimes: [make_params(rng, g0), make_params(rng, g1)],
            transition: {
                let p00 = rng.gen_range(0.0..1.0);
                let p10 = rng.gen_range(0.0..1.0);
                [[p00, 1.0 - p00], [p10, 1.0 - p10]]
            },
            initial_regime: InitialRegime::Fixed(Regime::Bull),
            s2_form: S2Form::Standard,
        };
        if let Ok(m) = validate_model(raw) {
            return m;
        }
    }
}

/// Max relative one-step martingale gap |Σ q_b·S¹′ − S¹|/S¹ over all nodes,
/// with the branch probabilities supplied by the caller (so a corrupted
/// measure is detectable).
pub fn q_martingale_gap<L: Lattice>(lat: &L, probs: &dyn Fn(Regime) -> [f64; 8]) -> f64 {
    let tables = [probs(Regime::Bull), probs(Regime::Bear)];
    let mut worst: f64 = 0.0;
    for m in 0..lat.num_steps() {
        for k in 0..lat.slice_len(m) {
            let st = lat.state(m, k);
            let mut expectation = 0.0;
            for b in Branch::ALL {
                expectation += tables[st.regime.index()][b.index()]
                    * lat.state(m + 1, lat.successor(m, k, b.index())).s1;
            }
            worst = worst.max((expectation - st.s1).abs() / st.s1);
        }
    }
    worst
}

/// E^Q[per-share payoff at the horizon | node], per grid state and slice.
fn q_payoff_expectation(
    grid: &MarkovGrid,
    model: &ValidatedModel,
    payoff: &PayoffSpec,
) -> Vec<Vec<f64>> {
    let laws = [
        OneStepLaw::new(Regime::Bull, model),
        OneStepLaw::new(Regime::Bear, model),
    ];
    let n = grid.num_steps();
    let mut out = vec![Vec::new(); n + 1];
    out[n] = (0..grid.slice_len(n))
        .map(|k| {
            let st = grid.state(n, k);
            payoff.f(st.s1, st.s2)
        })
        .collect();
    for m in (0..n).rev() {
        out[m] = (0..grid.slice_len(m))
            .map(|k| {
                let law = &laws[grid.state(m, k).regime.index()];
                Branch::ALL
                    .iter()
                    .map(|b| {
                        law.prob(Measure::Q, b.index())
                            * out[m + 1][grid.successor(m, k, b.index())]
                    })
                    .sum()
            })
            .collect();
    }
    out
}

const C1: (&str, &str) = ("C1", "zero-claim degeneracy on randomized models");
const C2: (&str, &str) = ("C2", "one-step martingale property of the pricing measure");
const C3: (&str, &str) = ("C3", "conditional sub-laws identical under both measures");
const C4: (&str, &str) = ("C4", "walk-basis representation and terminal spread identity");
const C5: (&str, &str) = ("C5", "switching-risk-aversion oracle equivalence");
const C6: (&str, &str) = ("C6", "equilibrium equals dynamic-programming optimum");
const C7: (&str, &str) = ("C7", "price recursion equals the general solver");
const C8: (&str, &str) = ("C8", "prices nondecreasing in risk aversion");
const C9: (&str, &str) = ("C9", "traded-underlying claims collapse to replication");
const C10: (&str, &str) = ("C10", "complete-market limit ignores risk aversion");
const C11: (&str, &str) = ("C11", "directional sensitivity experiments");
const C12: (&str, &str) = ("C12", "worker-count determinism of serialized results");

fn check_c1_to_c3(depth_budget: usize, out: &mut Vec<CheckResult>) {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0001);
    let payoff = PayoffSpec::call_on_s2(10.0, 0.0);
    let mut worst_price: f64 = 0.0;
    let mut worst_alpha: f64 = 0.0;
    let mut worst_gap: f64 = 0.0;
    let mut worst_sub: f64 = 0.0;
    let mut engines_run = 0usize;
    let mut failure = None;

    for i in 0..20 {
        let model = random_model(&mut rng, i % 2 == 0);
        let n = model.n_steps;
        let grid = match build_grid(&model, n) {
            Ok(g) => g,
            Err(e) => {
                failure = Some(format!("grid build failed: {e}"));
                break;
            }
        };

        // C2/C3 material on the same model set.
        let gap = q_martingale_gap(&grid, &|r| *OneStepLaw::new(r, &model).probs(Measure::Q));
        worst_gap = worst_gap.max(gap);
        for regime in Regime::ALL {
            let split = OneStepLaw::new(regime, &model).conditional_split();
            for d in 0..2 {
                for s in 0..4 {
                    worst_sub = worst_sub.max((split.sub_p[d][s] - split.sub_q[d][s]).abs());
                }
            }
        }

        fn record(
            sol: &equilibrium::EquilibriumSolution,
            worst_price: &mut f64,
            worst_alpha: &mut f64,
        ) {
            for slice in &sol.slices {
                for (&p, (&a, &a0)) in slice
                    .price
                    .iter()
                    .zip(slice.alpha_hat.iter().zip(&slice.alpha0))
                {
                    *worst_price = worst_price.max(p.abs());
                    *worst_alpha = worst_alpha.max((a - a0).abs());
                }
            }
        }

        match equilibrium::backward_solve(&grid, &model, &payoff, SolveOptions::default()) {
            Ok(sol) => {
                record(&sol, &mut worst_price, &mut worst_alpha);
                engines_run += 1;
            }
            Err(e) => {
                failure = Some(format!("grid solve failed: {e}"));
                break;
            }
        }
        if model.constant_gamma() {
            match constant_gamma::price_recursion(
                &grid,
                &model,
                &payoff,
                model.regimes[0].gamma,
                SeedMode::TerminalTheorem,
            ) {
                Ok(field) => {
                    for slice in &field.slices {
                        for &p in slice {
                            worst_price = worst_price.max(p.abs());
                        }
                    }
                    engines_run += 1;
                }
                Err(e) => {
                    failure = Some(format!("recursion failed: {e}"));
                    break;
                }
            }
        }
        if n <= depth_budget.min(5) {
            let tree = build_tree_from(&model, n, Regime::Bull).unwrap();
            match equilibrium::backward_solve(&tree, &model, &payoff, SolveOptions::default()) {
                Ok(sol) => {
                    record(&sol, &mut worst_price, &mut worst_alpha);
                    engines_run += 1;
                }
                Err(e) => {
                    failure = Some(format!("tree solve failed: {e}"));
                    break;
                }
            }
        }
    }

    let elapsed = started.elapsed().as_secs_f64();
    let c1_pass =
        failure.is_none() && worst_price <= 1e-10 && worst_alpha <= 1e-10 && elapsed < 5.0;
    out.push(CheckResult::ran(
        C1.0,
        C1.1,
        c1_pass,
        failure.unwrap_or_else(|| {
            format!(
                "20 models, {engines_run} engine runs: max |p| = {worst_price:.2e}, \
                 max |alpha - alpha0| = {worst_alpha:.2e}, {elapsed:.2}s (budget 5s)"
            )
        }),
    ));
    out.push(CheckResult::ran(
        C2.0,
        C2.1,
        worst_gap <= 1e-12,
        format!("max relative gap {worst_gap:.2e} (tol 1e-12)"),
    ));
    out.push(CheckResult::ran(
        C3.0,
        C3.1,
        worst_sub <= 1e-15,
        format!("max sub-law deviation {worst_sub:.2e} (tol 1e-15)"),
    ));
}

fn check_c4() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0004);
    let mut worst_resid: f64 = 0.0;
    for _ in 0..1000 {
        let terminal = [
            rng.gen_range(-40.0..40.0),
            rng.gen_range(-40.0..40.0),
            rng.gen_range(-40.0..40.0),
            rng.gen_range(-40.0..40.0),
        ];
        let h = rng.gen_range(1e-3..1.0);
        let sol = pricing_core::bsde::solve_one_step(&terminal, h, |_| 0.0);
        let scale = terminal.iter().fold(1.0f64, |a, t| a.max(t.abs()));
        for r in pricing_core::bsde::representation_residuals(&terminal, &sol.z, h) {
            worst_resid = worst_resid.max(r.abs() / scale);
        }
    }

    // Terminal spread identity √h·z·Δb = λF − E_P[λF] on a switching model.
    let model = section4_switching(2);
    let tree = build_tree_from(&model, 2, Regime::Bull).unwrap();
    let payoff = PayoffSpec::call_on_s2(10.0, 1.0);
    let t = equilibrium::solve_terminal(&tree, &model, &payoff).unwrap();
    let mut worst_spread: f64 = 0.0;
    for k in 0..tree.slice_len(1) {
        let mut f = [0.0f64; 4];
        for (w, fv) in f.iter_mut().enumerate() {
            let st = tree.state(2, tree.successor(1, k, 2 * w));
            *fv = payoff.quantity * payoff.f(st.s1, st.s2);
        }
        let mean = f.iter().sum::<f64>() / 4.0;
        let scale = f.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        for (w, (db1, db2)) in pricing_core::model::WALK.iter().enumerate() {
            let lhs = model.sqrt_h() * pricing_core::bsde::z_dot_db(&t.z[k], *db1, *db2);
            worst_spread = worst_spread.max((lhs - (f[w] - mean)).abs() / scale);
        }
    }

    CheckResult::ran(
        C4.0,
        C4.1,
        worst_resid <= 1e-12 && worst_spread <= 1e-12,
        format!(
            "1000 random terminals: residual {worst_resid:.2e}; terminal spread {worst_spread:.2e} \
             (tol 1e-12)"
        ),
    )
}

fn check_c5() -> (CheckResult, String) {
    let started = Instant::now();
    let payoff = PayoffSpec::call_on_s2(10.0, 1.0);
    let mut worst_alpha: f64 = 0.0;
    let mut worst_price: f64 = 0.0;
    let mut csv = String::from("n,start,slice,node,alpha,price\n");
    for n in 1..=4usize {
        let model = section4_switching(n);
        for start in Regime::ALL {
            let tree = build_tree_from(&model, n, start).unwrap();
            let sol =
                equilibrium::backward_solve(&tree, &model, &payoff, SolveOptions::default())
                    .unwrap();
            let game = oracle::brute_force_game(&tree, &model, &payoff, 1e-10).unwrap();
            let game0 =
                oracle::brute_force_game(&tree, &model, &payoff.zero_quantity(), 1e-10).unwrap();
            for m in 0..n {
                for k in 0..tree.slice_len(m) {
                    let alpha = sol.slices[m].alpha_hat[k];
                    let price = sol.slices[m].price[k];
                    worst_alpha = worst_alpha.max((alpha - game.alpha[m][k]).abs());
                    let gamma = model.gamma(tree.state(m, k).regime);
                    let p_def = oracle::definitional_price(
                        gamma,
                        game.factor[m][k],
                        game0.factor[m][k],
                        0.0,
                    )
                    .unwrap();
                    worst_price = worst_price.max((price - p_def).abs());
                    let _ = writeln!(csv, "{n},{},{m},{k},{alpha},{price}", start.label());
                }
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    let passed = worst_alpha <= 1e-6 && worst_price <= 1e-8 && elapsed < 60.0;
    (
        CheckResult::ran(
            C5.0,
            C5.1,
            passed,
            format!(
                "N in 1..=4, both starts: max |dalpha| = {worst_alpha:.2e} (tol 1e-6), \
                 max |dprice| = {worst_price:.2e} (tol 1e-8), {elapsed:.2}s (budget 60s)"
            ),
        ),
        csv,
    )
}

fn check_c6() -> CheckResult {
    let model = validate_model(section4_base(4)).unwrap();
    let payoff = PayoffSpec::call_on_s2(10.0, 1.0);
    let report = match constant_gamma::verify_c7(&model, &payoff, 4) {
        Ok(r) => r,
        Err(e) => return CheckResult::ran(C6.0, C6.1, false, format!("verify failed: {e}")),
    };
    if !(report.applicable && report.passed) {
        return CheckResult::ran(
            C6.0,
            C6.1,
            false,
            format!("policy comparison failed: {report:?}"),
        );
    }
    // Value dominance over 100 random admissible policies.
    let tree = build_tree_from(&model, 4, Regime::Bull).unwrap();
    let dp = oracle::brute_force_dp(&tree, &model, &payoff, 1e-10).unwrap();
    let optimal = oracle::evaluate_policy(&tree, &model, &payoff, &dp.alpha, 0.6);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0006);
    let mut dominated = 0usize;
    for _ in 0..100 {
        let candidate: Vec<Vec<f64>> = dp
            .alpha
            .iter()
            .map(|s| s.iter().map(|a| a + rng.gen_range(-3.0..3.0)).collect())
            .collect();
        let v = oracle::evaluate_policy(&tree, &model, &payoff, &candidate, 0.6);
        if optimal <= v + 1e-12 * v.abs() {
            dominated += 1;
        }
    }
    CheckResult::ran(
        C6.0,
        C6.1,
        dominated == 100,
        format!(
            "max |dalpha| = {:.2e} (tol 1e-6); dominated {dominated}/100 random policies",
            report.max_alpha_deviation.unwrap()
        ),
    )
}

fn check_c7() -> (CheckResult, String) {
    let model = validate_model(section4_base(6)).unwrap();
    let grid = build_grid(&model, 6).unwrap();
    let mut worst: f64 = 0.0;
    let mut csv = String::from("payoff,price_recursion,price_solver\n");
    for kind in [OptionKind::Call, OptionKind::Put, OptionKind::Forward] {
        let payoff = PayoffSpec {
            kind,
            underlying: Underlying::NonTraded,
            strike: 10.0,
            quantity: 1.0,
        };
        let field = constant_gamma::price_recursion(
            &grid,
            &model,
            &payoff,
            0.6,
            SeedMode::TerminalTheorem,
        )
        .unwrap();
        let sol =
            equilibrium::backward_solve(&grid, &model, &payoff, SolveOptions::default()).unwrap();
        let a = field.start_price(&grid, Regime::Bull).unwrap();
        let b = equilibrium::start_price(&sol, &grid, Regime::Bull).unwrap();
        worst = worst.max((a - b).abs() / (1.0 + b.abs()));
        let _ = writeln!(csv, "{kind},{a},{b}");
    }
    (
        CheckResult::ran(
            C7.0,
            C7.1,
            worst <= 1e-9,
            format!("three payoffs at N=6: max relative gap {worst:.2e} (tol 1e-9)"),
        ),
        csv,
    )
}

fn check_c8() -> CheckResult {
    let model = validate_model(section4_base(30)).unwrap();
    let payoff = PayoffSpec::call_on_s2(10.0, 1.0);
    let gammas: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
    match constant_gamma::gamma_monotonicity(&model, &payoff, 30, &gammas) {
        Ok(prices) => CheckResult::ran(
            C8.0,
            C8.1,
            true,
            format!(
                "gamma 0.1..1.0 at N=30: prices {:.6}..{:.6} nondecreasing (slack 1e-12)",
                prices.first().unwrap(),
                prices.last().unwrap()
            ),
        ),
        Err(e) => CheckResult::ran(C8.0, C8.1, false, e.to_string()),
    }
}

fn check_c9() -> CheckResult {
    let payoff = PayoffSpec {
        kind: OptionKind::Call,
        underlying: Underlying::Traded,
        strike: 10.0,
        quantity: 1.0,
    };
    let mut roots = Vec::new();
    let mut worst: f64 = 0.0;
    for gammas in [[0.6, 0.6], [0.6, 0.72], [1.1, 0.3]] {
        let mut raw = section4_base(30);
        raw.regimes[0].gamma = gammas[0];
        raw.regimes[1].gamma = gammas[1];
        let model = validate_model(raw).unwrap();
        let grid = build_grid(&model, 30).unwrap();
        let sol =
            equilibrium::backward_solve(&grid, &model, &payoff, SolveOptions::default()).unwrap();
        let expectation = q_payoff_expectation(&grid, &model, &payoff);
        for m in 0..30 {
            for k in 0..grid.slice_len(m) {
                let collapse = payoff.quantity * expectation[m][k];
                worst = worst
                    .max((sol.slices[m].price[k] - collapse).abs() / (1.0 + collapse.abs()));
            }
        }
        roots.push(equilibrium::start_price(&sol, &grid, Regime::Bull).unwrap());
    }
    let spread = roots
        .iter()
        .fold(0.0f64, |a, &p| a.max((p - roots[0]).abs()));
    CheckResult::ran(
        C9.0,
        C9.1,
        worst <= 1e-9 && spread <= 1e-9,
        format!(
            "N=30, three gamma configs: max node gap {worst:.2e}, root spread {spread:.2e} \
             (tol 1e-9)"
        ),
    )
}

fn check_c10() -> CheckResult {
    let payoff = PayoffSpec::call_on_s2(10.0, 1.0);
    let mut roots = Vec::new();
    for gammas in [[0.3, 0.3], [0.6, 0.6], [0.6, 1.2]] {
        let mut raw = section4_base(20);
        raw.rho = 1.0;
        raw.regimes[0].gamma = gammas[0];
        raw.regimes[1].gamma = gammas[1];
        let model = validate_model(raw).unwrap();
        let grid = build_grid(&model, 20).unwrap();
        let sol =
            equilibrium::backward_solve(&grid, &model, &payoff, SolveOptions::default()).unwrap();
        roots.push(equilibrium::start_price(&sol, &grid, Regime::Bull).unwrap());
    }
    let spread = roots
        .iter()
        .fold(0.0f64, |a, &p| a.max((p - roots[0]).abs()));
    CheckResult::ran(
        C10.0,
        C10.1,
        spread <= 1e-8,
        format!("|rho| = 1 replication at N=20: root spread {spread:.2e} (tol 1e-8)"),
    )
}

/// The three §4-style experiments; returns the rows for the CSV artifact.
fn run_c11_experiments() -> Result<[Vec<ExperimentRow>; 3], String> {
    let base = section4_base(8);
    let payoff = PayoffSpec::call_on_s2(10.0, 1.0);
    let risk = run_experiment(
        &ExperimentSpec {
            scenario: Scenario::RiskAversionBump,
            sweep: (1..=10).map(|i| i as f64 / 10.0).collect(),
            steps: 8,
            engine: Engine::ExactTree,
            payoff,
            start_states: vec![Regime::Bull, Regime::Bear],
        },
        &base,
    )
    .map_err(|e| format!("risk-aversion experiment: {e}"))?;
    let drift = run_experiment(
        &ExperimentSpec {
            scenario: Scenario::DriftBump,
            sweep: vec![0.22, 0.26, 0.30, 0.34, 0.38],
            steps: 30,
            engine: Engine::Grid,
            payoff,
            start_states: vec![Regime::Bull, Regime::Bear],
        },
        &section4_base(30),
    )
    .map_err(|e| format!("drift experiment: {e}"))?;
    let vol = run_experiment(
        &ExperimentSpec {
            scenario: Scenario::VolBump,
            sweep: vec![0.10, 0.15, 0.20, 0.25, 0.30],
            steps: 30,
            engine: Engine::Grid,
            payoff,
            start_states: vec![Regime::Bull, Regime::Bear],
        },
        &section4_base(30),
    )
    .map_err(|e| format!("vol experiment: {e}"))?;
    Ok([risk, drift, vol])
}

fn c11_artifact(experiments: &[Vec<ExperimentRow>; 3]) -> String {
    let mut out = String::new();
    for (name, rows) in ["risk_aversion", "drift", "vol"].iter().zip(experiments) {
        let _ = writeln!(out, "# {name}");
        out.push_str(&csv_string(rows));
    }
    out
}

fn check_c11(experiments: &[Vec<ExperimentRow>; 3]) -> CheckResult {
    let [risk, drift, vol] = experiments;
    let mut problems = Vec::new();

    for r in risk {
        if !(r.pct_change_bear > r.pct_change_bull && r.pct_change_bull > 0.0) {
            problems.push(format!(
                "risk-aversion ordering broken at gamma {}: bull {:.4}%, bear {:.4}%",
                r.sweep_value, r.pct_change_bull, r.pct_change_bear
            ));
        }
    }
    let bear_range = (
        risk.iter().map(|r| r.pct_change_bear).fold(f64::MAX, f64::min),
        risk.iter().map(|r| r.pct_change_bear).fold(f64::MIN, f64::max),
    );

    for (name, rows) in [("drift", drift), ("vol", vol)] {
        let sign = rows[0].pct_change_bear.signum();
        for r in rows {
            if r.pct_change_bear.signum() != sign || r.pct_change_bull.signum() != sign {
                problems.push(format!(
                    "{name} experiment sign flips at sweep value {}",
                    r.sweep_value
                ));
            }
            if r.pct_change_bear.abs() + 1e-12 < r.pct_change_bull.abs() {
                problems.push(format!(
                    "{name} experiment: bear-start magnitude below bull-start at {}",
                    r.sweep_value
                ));
            }
        }
    }

    let passed = problems.is_empty();
    let detail = if passed {
        format!(
            "risk-aversion bump at N=8: bear-start change {:.2}%..{:.2}% across gamma \
             0.1..1.0 (reference reports 7%..23% at N=365, recorded not asserted); \
             drift and vol bumps at N=30 sign-consistent with bear-start dominance",
            bear_range.0, bear_range.1
        )
    } else {
        problems.join("; ")
    };
    CheckResult::ran(C11.0, C11.1, passed, detail)
}

/// Runs the full suite. `depth_budget` is the exact-tree depth allowance:
/// checks needing deeper trees than the budget are skipped (budget 0 skips
/// everything and the report flags that nothing ran).
pub fn run_validation_suite(depth_budget: usize) -> ValidationReport {
    let mut checks = Vec::new();
    if depth_budget == 0 {
        for (id, name) in [C1, C2, C3, C4, C5, C6, C7, C8, C9, C10, C11, C12] {
            checks.push(CheckResult::skip(
                id,
                name,
                "nothing run: depth budget is 0".into(),
            ));
        }
        return ValidationReport { checks };
    }

    check_c1_to_c3(depth_budget, &mut checks);
    checks.push(check_c4());

    let pool_single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("single-thread pool");
    let pool_full = rayon::ThreadPoolBuilder::new()
        .build()
        .expect("default pool");

    // C5/C7/C11 run once per pool; the full-pool run carries the assertions,
    // both runs feed the determinism comparison.
    let mut artifacts_full: Vec<(&str, String)> = Vec::new();
    let mut artifacts_single: Vec<(&str, String)> = Vec::new();

    if depth_budget >= 4 {
        let (check, csv_full) = pool_full.install(check_c5);
        let (_, csv_single) = pool_single.install(check_c5);
        checks.push(check);
        artifacts_full.push(("C5", csv_full));
        artifacts_single.push(("C5", csv_single));
        checks.push(pool_full.install(check_c6));
    } else {
        checks.push(CheckResult::skip(
            C5.0,
            C5.1,
            format!("requires tree depth 4 > budget {depth_budget}"),
        ));
        checks.push(CheckResult::skip(
            C6.0,
            C6.1,
            format!("requires tree depth 4 > budget {depth_budget}"),
        ));
    }

    {
        let (check, csv_full) = pool_full.install(check_c7);
        let (_, csv_single) = pool_single.install(check_c7);
        checks.push(check);
        artifacts_full.push(("C7", csv_full));
        artifacts_single.push(("C7", csv_single));
    }

    checks.push(pool_full.install(check_c8));
    checks.push(pool_full.install(check_c9));
    checks.push(pool_full.install(check_c10));

    if depth_budget >= 8 {
        let full = pool_full.install(run_c11_experiments);
        let single = pool_single.install(run_c11_experiments);
        match (full, single) {
            (Ok(full), Ok(single)) => {
                checks.push(check_c11(&full));
                artifacts_full.push(("C11", c11_artifact(&full)));
                artifacts_single.push(("C11", c11_artifact(&single)));
            }
            (Err(e), _) | (_, Err(e)) => {
                checks.push(CheckResult::ran(C11.0, C11.1, false, e));
            }
        }
    } else {
        checks.push(CheckResult::skip(
            C11.0,
            C11.1,
            format!("requires tree depth 8 > budget {depth_budget}"),
        ));
    }

    if artifacts_full.is_empty() {
        checks.push(CheckResult::skip(
            C12.0,
            C12.1,
            "no rerunnable artifacts within the depth budget".into(),
        ));
    } else {
        let mut mismatches = Vec::new();
        for ((id, full), (_, single)) in artifacts_full.iter().zip(&artifacts_single) {
            if full != single {
                mismatches.push(*id);
            }
        }
        let compared: Vec<&str> = artifacts_full.iter().map(|(id, _)| *id).collect();
        checks.push(CheckResult::ran(
            C12.0,
            C12.1,
            mismatches.is_empty(),
            if mismatches.is_empty() {
                format!(
                    "byte-identical serialized results for {} across 1 vs {} workers",
                    compared.join("/"),
                    rayon::current_num_threads()
                )
            } else {
                format!("worker-count-dependent output in {}", mismatches.join("/"))
            },
        ));
    }

    ValidationReport { checks }
}
