//! Formula-independent ground truth on tiny trees: numeric per-node utility
//! maximization, brute-force game and dynamic-programming solves, and
//! definitional indifference pricing by root finding.
//!
//! Everything here works from the optimization definitions directly —
//! derivative-free one-dimensional search over the holding, literal
//! enumeration of descendant paths — so it shares no code path with the
//! closed-form solvers it checks.

use rayon::prelude::*;
use thiserror::Error;

use crate::equilibrium::{merton_alpha, wealth_increment};
use crate::model::{Regime, ValidatedModel, WALK};
use crate::numerics::golden_minimize;
use crate::payoff::PayoffSpec;
use crate::scenario::{Branch, Lattice, ScenarioTree, State};

/// Hard cap on oracle depth (8⁴ leaves with a 1-d search per node).
pub const ORACLE_DEPTH_CAP: usize = 4;

/// Default tolerance on the holding for the golden-section searches.
pub const DEFAULT_SEARCH_TOL: f64 = 1e-10;

const MAX_BRACKET_EXPANSIONS: usize = 60;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("depth {0} exceeds the oracle cap {ORACLE_DEPTH_CAP}")]
    DepthExceedsCap(usize),
    #[error("bracket expansion failed around alpha = {center}")]
    BracketFailure { center: f64 },
    #[error("brute-force dynamic programming requires constant risk aversion")]
    ConstantGammaRequired,
    #[error("indifference equation root not bracketed")]
    RootNotBracketed,
}

/// One node's oracle answer: the numerically optimal holding and the
/// wealth-free value factor C, so that V(x) = −e^{−γx}·C.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleNode {
    pub alpha: f64,
    pub factor: f64,
}

impl OracleNode {
    /// Expected utility at nominal wealth x.
    pub fn value_at(&self, gamma: f64, x: f64) -> f64 {
        -(-gamma * x).exp() * self.factor
    }
}

/// The one-step objective α ↦ g(α, s, i, z) from the backward-equation view:
/// ¼·Σ over walk branches of e^{−γα(μ¹h+σ¹√h·Δb¹)}·e^{γ√h·z·Δb}.
pub fn g_function(gamma: f64, mu1: f64, sigma1: f64, h: f64, z: [f64; 3]) -> impl Fn(f64) -> f64 {
    let sqrt_h = h.sqrt();
    move |alpha: f64| {
        WALK.iter()
            .map(|&(db1, db2)| {
                (-gamma * alpha * (mu1 * h + sigma1 * sqrt_h * db1 as f64)
                    + gamma * sqrt_h * crate::bsde::z_dot_db(&z, db1, db2))
                .exp()
            })
            .sum::<f64>()
            * 0.25
    }
}

/// One symmetric three-point parabola fit; recovers accuracy lost to the
/// floating-point noise floor that stalls pure golden section near a flat
/// minimum.
fn parabolic_refine<F: Fn(f64) -> f64>(f: &F, x0: f64, delta: f64) -> f64 {
    let fm = f(x0 - delta);
    let f0 = f(x0);
    let fp = f(x0 + delta);
    let denom = fm - 2.0 * f0 + fp;
    if !(denom > 0.0) {
        return x0;
    }
    let step = 0.5 * delta * (fm - fp) / denom;
    if step.is_finite() && step.abs() < 10.0 * delta {
        x0 + step
    } else {
        x0
    }
}

/// Golden-section minimization with automatic bracket expansion (whenever the
/// minimizer lands at a bracket edge, the bracket doubles around it) and a
/// final parabolic refinement.
fn minimize_expanding<F: Fn(f64) -> f64>(
    f: &F,
    center: f64,
    half_width: f64,
    tol: f64,
) -> Result<f64, OracleError> {
    let mut lo = center - half_width;
    let mut hi = center + half_width;
    for _ in 0..MAX_BRACKET_EXPANSIONS {
        let r = golden_minimize(|x| f(x), lo, hi, tol.max(1e-6), 400);
        let width = hi - lo;
        let edge = 0.01 * width;
        if r.x - lo < edge {
            hi = r.x + width;
            lo = r.x - 2.0 * width;
        } else if hi - r.x < edge {
            lo = r.x - width;
            hi = r.x + 2.0 * width;
        } else {
            return Ok(parabolic_refine(f, r.x, 1e-4));
        }
    }
    Err(OracleError::BracketFailure { center })
}

/// Bracket half-width around the Merton holding used by all searches.
fn bracket_half_width(model: &ValidatedModel, regime: Regime) -> f64 {
    let p = model.params(regime);
    10.0 / (p.gamma * p.sigma1 * model.sqrt_h())
}

/// Expected e^{−γ·(future wealth increments under `policy`)}·e^{γλF} from a
/// node, by literal enumeration of every descendant path.
fn policy_moment(
    tree: &ScenarioTree,
    model: &ValidatedModel,
    payoff: &PayoffSpec,
    policy: &[Vec<f64>],
    slice: usize,
    node: usize,
    gamma: f64,
) -> f64 {
    if slice == tree.num_steps() {
        let st = tree.state(slice, node);
        return (gamma * payoff.quantity * payoff.f(st.s1, st.s2)).exp();
    }
    let st = tree.state(slice, node);
    let row = &model.transition[st.regime.index()];
    let alpha = policy[slice][node];
    let mut acc = 0.0;
    for b in Branch::ALL {
        let dx = wealth_increment(model, st.regime, alpha, b.db1);
        acc += 0.25
            * row[b.next_regime.index()]
            * (-gamma * dx).exp()
            * policy_moment(
                tree,
                model,
                payoff,
                policy,
                slice + 1,
                tree.successor(slice, node, b.index()),
                gamma,
            );
    }
    acc
}

/// Conditional continuation factors A(Δb¹) at a node: the (Δb², next regime)
/// averaged continuation moments, one per Δb¹ outcome.
fn continuation_pair(
    tree: &ScenarioTree,
    model: &ValidatedModel,
    payoff: &PayoffSpec,
    policy: &[Vec<f64>],
    slice: usize,
    node: usize,
    gamma: f64,
) -> [f64; 2] {
    let st = tree.state(slice, node);
    let row = &model.transition[st.regime.index()];
    let mut out = [0.0; 2];
    for b in Branch::ALL {
        let d = (b.db1 < 0) as usize;
        out[d] += 0.5
            * row[b.next_regime.index()]
            * policy_moment(
                tree,
                model,
                payoff,
                policy,
                slice + 1,
                tree.successor(slice, node, b.index()),
                gamma,
            );
    }
    out
}

fn one_step_objective<'a>(
    model: &'a ValidatedModel,
    state: &State,
    gamma: f64,
    cont: [f64; 2],
) -> impl Fn(f64) -> f64 + 'a {
    let regime = state.regime;
    move |alpha: f64| {
        let up = wealth_increment(model, regime, alpha, 1);
        let dn = wealth_increment(model, regime, alpha, -1);
        0.5 * (-gamma * up).exp() * cont[0] + 0.5 * (-gamma * dn).exp() * cont[1]
    }
}

/// Numeric solve of the terminal (pure optimization) problem at a node one
/// step before the horizon: golden-section minimization of the expected
/// disutility over the holding.
pub fn brute_force_terminal(
    model: &ValidatedModel,
    state: State,
    payoff: &PayoffSpec,
    bracket: Option<(f64, f64)>,
    tol: f64,
) -> Result<OracleNode, OracleError> {
    let gamma = model.gamma(state.regime);
    let row = &model.transition[state.regime.index()];
    let mut cont = [0.0; 2];
    for b in Branch::ALL {
        let d = (b.db1 < 0) as usize;
        let s1 = crate::scenario::step_s1(model, state.regime, state.s1, b.db1);
        let s2 = crate::scenario::step_s2(model, state.regime, state.s2, b.db1, b.db2);
        cont[d] += 0.5
            * row[b.next_regime.index()]
            * (gamma * payoff.quantity * payoff.f(s1, s2)).exp();
    }
    let objective = one_step_objective(model, &state, gamma, cont);
    let alpha = match bracket {
        Some((lo, hi)) => {
            minimize_expanding(&objective, 0.5 * (lo + hi), 0.5 * (hi - lo), tol)?
        }
        None => {
            let p = model.params(state.regime);
            let center = merton_alpha(gamma, model.theta(state.regime), p.sigma1, model.h());
            minimize_expanding(&objective, center, bracket_half_width(model, state.regime), tol)?
        }
    };
    Ok(OracleNode {
        alpha,
        factor: objective(alpha),
    })
}

/// Per-node policies and wealth-free value factors for a whole tree.
#[derive(Debug, Clone)]
pub struct PolicySolution {
    /// Holding per (slice, node), slices 0..N−1.
    pub alpha: Vec<Vec<f64>>,
    /// Value factor per (slice, node): V(x) = −e^{−γ(i)x}·factor.
    pub factor: Vec<Vec<f64>>,
}

/// Brute-force subgame perfect equilibrium: backward over the tree, at each
/// node numerically maximizing expected terminal utility given that every
/// future node plays its already-fixed equilibrium holding (enumerated
/// path by path).
pub fn brute_force_game(
    tree: &ScenarioTree,
    model: &ValidatedModel,
    payoff: &PayoffSpec,
    tol: f64,
) -> Result<PolicySolution, OracleError> {
    let n = tree.num_steps();
    if n > ORACLE_DEPTH_CAP {
        return Err(OracleError::DepthExceedsCap(n));
    }
    let mut alpha: Vec<Vec<f64>> = (0..n).map(|m| vec![0.0; tree.slice_len(m)]).collect();
    for m in (0..n).rev() {
        let solved: Vec<Result<f64, OracleError>> = (0..tree.slice_len(m))
            .into_par_iter()
            .map(|k| {
                let st = tree.state(m, k);
                let gamma = model.gamma(st.regime);
                let cont = continuation_pair(tree, model, payoff, &alpha, m, k, gamma);
                let objective = one_step_objective(model, &st, gamma, cont);
                let p = model.params(st.regime);
                let center = merton_alpha(gamma, model.theta(st.regime), p.sigma1, model.h());
                minimize_expanding(&objective, center, bracket_half_width(model, st.regime), tol)
            })
            .collect();
        for (k, a) in solved.into_iter().enumerate() {
            alpha[m][k] = a?;
        }
    }
    let factor = (0..n)
        .map(|m| {
            (0..tree.slice_len(m))
                .into_par_iter()
                .map(|k| {
                    let gamma = model.gamma(tree.state(m, k).regime);
                    policy_moment(tree, model, payoff, &alpha, m, k, gamma)
                })
                .collect()
        })
        .collect();
    Ok(PolicySolution { alpha, factor })
}

/// Classical dynamic programming (Bellman) solve; well-posed only under
/// constant risk aversion.
pub fn brute_force_dp(
    tree: &ScenarioTree,
    model: &ValidatedModel,
    payoff: &PayoffSpec,
    tol: f64,
) -> Result<PolicySolution, OracleError> {
    if !model.constant_gamma() {
        return Err(OracleError::ConstantGammaRequired);
    }
    let n = tree.num_steps();
    if n > ORACLE_DEPTH_CAP {
        return Err(OracleError::DepthExceedsCap(n));
    }
    let gamma = model.regimes[0].gamma;
    let mut alpha: Vec<Vec<f64>> = (0..n).map(|m| vec![0.0; tree.slice_len(m)]).collect();
    let mut factor: Vec<Vec<f64>> = (0..=n).map(|m| vec![0.0; tree.slice_len(m)]).collect();
    for (k, f) in factor[n].iter_mut().enumerate() {
        let st = tree.state(n, k);
        *f = (gamma * payoff.quantity * payoff.f(st.s1, st.s2)).exp();
    }
    for m in (0..n).rev() {
        let next = &factor[m + 1];
        let solved: Vec<Result<(f64, f64), OracleError>> = (0..tree.slice_len(m))
            .into_par_iter()
            .map(|k| {
                let st = tree.state(m, k);
                let row = &model.transition[st.regime.index()];
                let mut cont = [0.0; 2];
                for b in Branch::ALL {
                    let d = (b.db1 < 0) as usize;
                    cont[d] += 0.5
                        * row[b.next_regime.index()]
                        * next[tree.successor(m, k, b.index())];
                }
                let objective = one_step_objective(model, &st, gamma, cont);
                let p = model.params(st.regime);
                let center = merton_alpha(gamma, model.theta(st.regime), p.sigma1, model.h());
                let a = minimize_expanding(
                    &objective,
                    center,
                    bracket_half_width(model, st.regime),
                    tol,
                )?;
                Ok((a, objective(a)))
            })
            .collect();
        for (k, r) in solved.into_iter().enumerate() {
            let (a, f) = r?;
            alpha[m][k] = a;
            factor[m][k] = f;
        }
    }
    factor.pop();
    Ok(PolicySolution { alpha, factor })
}

/// Value factor at the root of an arbitrary admissible policy (constant γ):
/// backward expectation with the policy's holdings fixed.
pub fn evaluate_policy(
    tree: &ScenarioTree,
    model: &ValidatedModel,
    payoff: &PayoffSpec,
    policy: &[Vec<f64>],
    gamma: f64,
) -> f64 {
    let n = tree.num_steps();
    let mut cur: Vec<f64> = (0..tree.slice_len(n))
        .map(|k| {
            let st = tree.state(n, k);
            (gamma * payoff.quantity * payoff.f(st.s1, st.s2)).exp()
        })
        .collect();
    for m in (0..n).rev() {
        let mut prev = vec![0.0; tree.slice_len(m)];
        for (k, out) in prev.iter_mut().enumerate() {
            let st = tree.state(m, k);
            let row = &model.transition[st.regime.index()];
            for b in Branch::ALL {
                let dx = wealth_increment(model, st.regime, policy[m][k], b.db1);
                *out += 0.25
                    * row[b.next_regime.index()]
                    * (-gamma * dx).exp()
                    * cur[tree.successor(m, k, b.index())];
            }
        }
        cur = prev;
    }
    cur[0]
}

/// Solves the indifference equation V^λ(x+G) = V⁰(x) for G by bisection on
/// the compensation. The closed form (1/γ)·log(C^λ/C⁰) exists but is not
/// used here; this is the formula-independent route.
pub fn definitional_price(
    gamma: f64,
    factor_lambda: f64,
    factor_no_claim: f64,
    x_nominal: f64,
) -> Result<f64, OracleError> {
    let phi = |c: f64| {
        -(-gamma * (x_nominal + c)).exp() * factor_lambda + (-gamma * x_nominal).exp() * factor_no_claim
    };
    let mut lo = -1.0;
    let mut hi = 1.0;
    let mut tries = 0;
    while phi(lo) > 0.0 || phi(hi) < 0.0 {
        lo *= 2.0;
        hi *= 2.0;
        tries += 1;
        if tries > 400 {
            return Err(OracleError::RootNotBracketed);
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo < 1e-14 * (1.0 + mid.abs()) {
            break;
        }
        if phi(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
