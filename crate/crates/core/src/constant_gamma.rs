//! Constant-risk-aversion fast path: a one-line price recursion on the
//! deduplicated grid, equilibrium-equals-optimal verification, and the
//! risk-aversion monotonicity check.
//!
//! With a single γ the indifference price satisfies
//! p_m = (1/γ)·E_Q[ log E[ e^{γ·p_{m+1}} | node ∨ Δb¹ ] | node ],
//! seeded at the terminal problem's price. The recursion runs in w = γ·p
//! space with max-shifted sums.

use rayon::prelude::*;
use thiserror::Error;

use crate::equilibrium::{self, SolveOptions, SolverError};
use crate::model::{Regime, ValidatedModel, ValidationError};
use crate::numerics::{dot_skip_zero, log_sum_exp};
use crate::oracle::{self, OracleError};
use crate::payoff::PayoffSpec;
use crate::scenario::{build_tree_from, Lattice, LatticeError, MarkovGrid};

#[derive(Debug, Error)]
pub enum ConstantGammaError {
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("pricing gamma must be > 0, got {0}")]
    BadGamma(f64),
    #[error("gamma grid must be nonempty, ascending and positive")]
    BadGammaGrid,
    #[error(
        "prices not monotone in gamma: p({gamma_lo}) = {p_lo} exceeds p({gamma_hi}) = {p_hi}"
    )]
    MonotonicityViolation {
        gamma_lo: f64,
        gamma_hi: f64,
        p_lo: f64,
        p_hi: f64,
    },
    #[error("recursion value left the representable range at slice {slice}")]
    Overflow { slice: usize },
}

/// How the recursion is started.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SeedMode {
    /// Seed slice N−1 with the terminal problem's price.
    #[default]
    TerminalTheorem,
    /// Seed a fictitious slice N with p = λF and apply the recursion once;
    /// reproduces the same slice N−1 values.
    TerminalPayoff,
}

/// Indifference price per grid state at each slice 0..N−1.
#[derive(Debug, Clone)]
pub struct PriceField {
    pub slices: Vec<Vec<f64>>,
}

impl PriceField {
    /// Price at the slice-0 state with the given start regime.
    pub fn start_price(&self, grid: &MarkovGrid, start: Regime) -> Option<f64> {
        (0..grid.slice_len(0))
            .find(|&k| grid.state(0, k).regime == start)
            .map(|k| self.slices[0][k])
    }

    /// Root price mixed over the model's initial-regime distribution.
    pub fn mixture_price(&self, grid: &MarkovGrid, model: &ValidatedModel) -> f64 {
        let weights = model.initial_regime.weights();
        let mut total = 0.0;
        let mut mass = 0.0;
        for k in 0..grid.slice_len(0) {
            let w = weights[grid.state(0, k).regime.index()];
            total += w * self.slices[0][k];
            mass += w;
        }
        total / mass
    }
}

struct RecTables {
    q: [[f64; 2]; 2],
    /// ln(½·P[i][j′]) indexed by sub-branch s = 2·(Δb²<0) + j′.
    log_half: [[f64; 4]; 2],
}

impl RecTables {
    fn new(model: &ValidatedModel) -> RecTables {
        let mut t = RecTables {
            q: [[0.0; 2]; 2],
            log_half: [[0.0; 4]; 2],
        };
        for regime in Regime::ALL {
            let i = regime.index();
            let tsh = model.theta_sqrt_h(regime);
            t.q[i] = [0.5 * (1.0 - tsh), 0.5 * (1.0 + tsh)];
            for s in 0..4 {
                t.log_half[i][s] = (0.5 * model.transition[i][s & 1]).ln();
            }
        }
        t
    }
}

/// One recursion step: w_m(k) = Σ_d q_d·logΣexp(ln(½P) + w_{m+1}(succ)).
fn recursion_step(grid: &MarkovGrid, tables: &RecTables, m: usize, w_next: &[f64]) -> Vec<f64> {
    (0..grid.slice_len(m))
        .into_par_iter()
        .with_min_len(2048)
        .map(|k| {
            let i = grid.state(m, k).regime.index();
            let mut log_inner = [0.0f64; 2];
            for d in 0..2 {
                let mut terms = [0.0f64; 4];
                for (s, t) in terms.iter_mut().enumerate() {
                    *t = tables.log_half[i][s] + w_next[grid.successor(m, k, 4 * d + s)];
                }
                log_inner[d] = log_sum_exp(&terms);
            }
            dot_skip_zero(&tables.q[i], &log_inner)
        })
        .collect()
}

/// Runs the constant-γ price recursion on the grid. The result is the
/// indifference price field of a model whose risk aversion equals `gamma`
/// in both regimes; market coefficients come from `model` unchanged.
///
/// The recursion reproduces the general solver's price only when the market
/// coefficients are regime-invariant: its derivation needs the no-claim
/// value one step ahead to be known given the current information and the
/// next traded price, which fails when the coefficients switch. For
/// switching-coefficient models use the general backward solver on the grid.
pub fn price_recursion(
    grid: &MarkovGrid,
    model: &ValidatedModel,
    payoff: &PayoffSpec,
    gamma: f64,
    seed: SeedMode,
) -> Result<PriceField, ConstantGammaError> {
    if !(gamma > 0.0) {
        return Err(ConstantGammaError::BadGamma(gamma));
    }
    let n = grid.num_steps();
    let tables = RecTables::new(model);

    let mut w_next: Vec<f64> = match seed {
        SeedMode::TerminalPayoff => {
            let terminal: Vec<f64> = (0..grid.slice_len(n))
                .into_par_iter()
                .with_min_len(2048)
                .map(|k| {
                    let st = grid.state(n, k);
                    gamma * payoff.quantity * payoff.f(st.s1, st.s2)
                })
                .collect();
            recursion_step(grid, &tables, n - 1, &terminal)
        }
        SeedMode::TerminalTheorem => {
            // Seed from the terminal problem, priced with the requested γ.
            let mut forced = (**model).clone();
            forced.regimes[0].gamma = gamma;
            forced.regimes[1].gamma = gamma;
            let forced = crate::model::validate_model(forced)?;
            let t = equilibrium::solve_terminal(grid, &forced, payoff)?;
            t.price.iter().map(|p| gamma * p).collect()
        }
    };

    let mut slices = vec![Vec::new(); n];
    slices[n - 1] = w_next.iter().map(|w| w / gamma).collect();
    for m in (0..n.saturating_sub(1)).rev() {
        let w = recursion_step(grid, &tables, m, &w_next);
        if w.par_iter().any(|v| !v.is_finite()) {
            return Err(ConstantGammaError::Overflow { slice: m });
        }
        slices[m] = w.iter().map(|v| v / gamma).collect();
        w_next = w;
    }
    Ok(PriceField { slices })
}

/// Outcome of the equilibrium-equals-optimal comparison.
#[derive(Debug, Clone)]
pub struct C7Report {
    /// Whether the constant-γ hypothesis holds; the comparison is out of
    /// scope otherwise and nothing is asserted.
    pub applicable: bool,
    pub max_alpha_deviation: Option<f64>,
    pub worst_node: Option<(usize, usize)>,
    pub passed: bool,
}

const C7_ALPHA_TOL: f64 = 1e-6;

/// Compares the equilibrium policy against the classical dynamic-programming
/// optimum on an exact tree of the given depth.
pub fn verify_c7(
    model: &ValidatedModel,
    payoff: &PayoffSpec,
    depth: usize,
) -> Result<C7Report, ConstantGammaError> {
    if !model.constant_gamma() {
        return Ok(C7Report {
            applicable: false,
            max_alpha_deviation: None,
            worst_node: None,
            passed: false,
        });
    }
    let start = model.initial_regime.support()[0];
    let tree = build_tree_from(model, depth, start)?;
    let sol = equilibrium::backward_solve(&tree, model, payoff, SolveOptions::default())?;
    let dp = oracle::brute_force_dp(&tree, model, payoff, oracle::DEFAULT_SEARCH_TOL)?;
    let mut max_dev = 0.0;
    let mut worst = (0, 0);
    for m in 0..depth {
        for k in 0..tree.slice_len(m) {
            let dev = (sol.slices[m].alpha_hat[k] - dp.alpha[m][k]).abs();
            if dev > max_dev {
                max_dev = dev;
                worst = (m, k);
            }
        }
    }
    Ok(C7Report {
        applicable: true,
        max_alpha_deviation: Some(max_dev),
        worst_node: Some(worst),
        passed: max_dev <= C7_ALPHA_TOL,
    })
}

/// Root prices along an ascending γ grid; errors on the first adjacent pair
/// that breaks monotonicity beyond a 1e-12 slack.
pub fn gamma_monotonicity(
    model: &ValidatedModel,
    payoff: &PayoffSpec,
    depth: usize,
    gamma_grid: &[f64],
) -> Result<Vec<f64>, ConstantGammaError> {
    if gamma_grid.is_empty()
        || gamma_grid.windows(2).any(|w| w[0] >= w[1])
        || gamma_grid.iter().any(|&g| !(g > 0.0))
    {
        return Err(ConstantGammaError::BadGammaGrid);
    }
    let grid = crate::scenario::build_grid(model, depth)?;
    let mut prices = Vec::with_capacity(gamma_grid.len());
    for &g in gamma_grid {
        let field = price_recursion(&grid, model, payoff, g, SeedMode::TerminalTheorem)?;
        prices.push(field.mixture_price(&grid, model));
    }
    for (i, w) in prices.windows(2).enumerate() {
        if w[0] > w[1] + 1e-12 {
            return Err(ConstantGammaError::MonotonicityViolation {
                gamma_lo: gamma_grid[i],
                gamma_hi: gamma_grid[i + 1],
                p_lo: w[0],
                p_hi: w[1],
            });
        }
    }
    Ok(prices)
}
