//! Cross-module consistency: the closed-form solvers against the numeric
//! oracles, and the constant-γ recursion against the general solver.

use pricing_core::constant_gamma::{price_recursion, SeedMode};
use pricing_core::equilibrium::{backward_solve, start_price, SolveOptions};
use pricing_core::model::{
    validate_model, InitialRegime, MarketModel, Regime, RegimeParams, S2Form, ValidatedModel,
};
use pricing_core::oracle;
use pricing_core::payoff::{OptionKind, PayoffSpec, Underlying};
use pricing_core::scenario::{build_grid, build_tree_from, Lattice};

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

fn switching_gamma(n_steps: usize) -> ValidatedModel {
    let mut m = section4_base(n_steps);
    m.regimes[1].gamma = 0.72;
    validate_model(m).unwrap()
}

/// Formula route vs numeric-game route, node by node: holdings within 1e-6,
/// prices within 1e-8 of the definitional (root-found) compensation.
#[test]
fn solver_matches_game_oracle_and_definitional_prices() {
    let payoff = PayoffSpec::call_on_s2(10.0, 1.0);
    for n in 1..=3usize {
        let m = switching_gamma(n);
        let tree = build_tree_from(&m, n, Regime::Bull).unwrap();
        let sol = backward_solve(&tree, &m, &payoff, SolveOptions::default()).unwrap();
        let game = oracle::brute_force_game(&tree, &m, &payoff, 1e-10).unwrap();
        let game0 =
            oracle::brute_force_game(&tree, &m, &payoff.zero_quantity(), 1e-10).unwrap();
        for slice in 0..n {
            for k in 0..tree.slice_len(slice) {
                let a_dev = (sol.slices[slice].alpha_hat[k] - game.alpha[slice][k]).abs();
                assert!(a_dev <= 1e-6, "N={n} slice {slice} node {k}: dalpha {a_dev}");
                let gamma = m.gamma(tree.state(slice, k).regime);
                let p_def = oracle::definitional_price(
                    gamma,
                    game.factor[slice][k],
                    game0.factor[slice][k],
                    0.0,
                )
                .unwrap();
                let p_dev = (sol.slices[slice].price[k] - p_def).abs();
                assert!(p_dev <= 1e-8, "N={n} slice {slice} node {k}: dp {p_dev}");
            }
        }
    }
}

/// The two-step case is the general iteration's n = 2 instance: the solver's
/// root agrees with the numeric game at N = 2 under switching risk aversion.
#[test]
fn two_period_case_is_recovered_by_the_general_iteration() {
    let m = switching_gamma(2);
    let payoff = PayoffSpec::call_on_s2(10.0, 1.0);
    let tree = build_tree_from(&m, 2, Regime::Bear).unwrap();
    let sol = backward_solve(&tree, &m, &payoff, SolveOptions::default()).unwrap();
    let game = oracle::brute_force_game(&tree, &m, &payoff, 1e-10).unwrap();
    assert!((sol.slices[0].alpha_hat[0] - game.alpha[0][0]).abs() <= 1e-6);
    let game0 = oracle::brute_force_game(&tree, &m, &payoff.zero_quantity(), 1e-10).unwrap();
    let p_def =
        oracle::definitional_price(0.72, game.factor[0][0], game0.factor[0][0], 3.0).unwrap();
    assert!((sol.slices[0].price[0] - p_def).abs() <= 1e-8);
}

/// Constant-γ recursion vs the general solver for three payoffs at N = 6 on
/// regime-invariant coefficients.
#[test]
fn recursion_agrees_with_solver_for_three_payoffs() {
    let m = validate_model(section4_base(6)).unwrap();
    let grid = build_grid(&m, 6).unwrap();
    for kind in [OptionKind::Call, OptionKind::Put, OptionKind::Forward] {
        let payoff = PayoffSpec {
            kind,
            underlying: Underlying::NonTraded,
            strike: 10.0,
            quantity: 1.0,
        };
        let field = price_recursion(&grid, &m, &payoff, 0.6, SeedMode::TerminalTheorem).unwrap();
        let sol = backward_solve(&grid, &m, &payoff, SolveOptions::default()).unwrap();
        let a = field.start_price(&grid, Regime::Bull).unwrap();
        let b = start_price(&sol, &grid, Regime::Bull).unwrap();
        assert!(
            (a - b).abs() <= 1e-9 * (1.0 + b.abs()),
            "{kind}: recursion {a} vs solver {b}"
        );
    }
}

/// Complete-market degeneration: |ρ| = 1 makes a claim on the non-traded
/// asset replicable, so its price ignores the risk-aversion configuration.
#[test]
fn complete_market_limit_is_gamma_invariant() {
    let payoff = PayoffSpec::call_on_s2(10.0, 1.0);
    let mut prices = Vec::new();
    for gammas in [[0.3, 0.3], [0.6, 0.6], [0.6, 1.2], [1.5, 0.4]] {
        let mut raw = section4_base(12);
        raw.rho = 1.0;
        raw.regimes[0].gamma = gammas[0];
        raw.regimes[1].gamma = gammas[1];
        let m = validate_model(raw).unwrap();
        let grid = build_grid(&m, 12).unwrap();
        let sol = backward_solve(&grid, &m, &payoff, SolveOptions::default()).unwrap();
        prices.push(start_price(&sol, &grid, Regime::Bull).unwrap());
    }
    for p in &prices[1..] {
        assert!((p - prices[0]).abs() <= 1e-8 * (1.0 + prices[0].abs()));
    }
}

/// Wealth never enters the computation: the definitional compensation is the
/// same at any nominal wealth, and the solver consumes no wealth input.
#[test]
fn definitional_price_is_wealth_invariant_against_solver() {
    let m = switching_gamma(2);
    let payoff = PayoffSpec::call_on_s2(10.0, 2.0);
    let tree = build_tree_from(&m, 2, Regime::Bull).unwrap();
    let sol = backward_solve(&tree, &m, &payoff, SolveOptions::default()).unwrap();
    let game = oracle::brute_force_game(&tree, &m, &payoff, 1e-10).unwrap();
    let game0 = oracle::brute_force_game(&tree, &m, &payoff.zero_quantity(), 1e-10).unwrap();
    for x in [0.0, -4.0, 17.5] {
        let p = oracle::definitional_price(0.6, game.factor[0][0], game0.factor[0][0], x).unwrap();
        assert!((p - sol.slices[0].price[0]).abs() <= 1e-8);
    }
}
