//! Backward iteration producing subgame perfect equilibrium strategies and
//! utility indifference prices under regime-dependent risk aversion.
//!
//! At each node the equilibrium holding is the no-claim (Merton) holding plus
//! a claim adjustment read off two Δb¹-conditional exponential moments; the
//! price is the Q-expected log of the same moments normalized by the no-claim
//! moment. Because every strategy is a function of the Markov state and the
//! pricing risk aversion takes only two values, the path sums of future
//! equilibrium wealth increments admit backward-recursive conditional
//! exponential moments: the solver carries, per state, one log-moment per
//! risk-aversion value instead of enumerating paths. The no-claim moment is
//! price-free and collapses to a per-(slice, regime) table.
//!
//! All exponential moments are kept in log space with max-shifted sums.

use rayon::prelude::*;
use thiserror::Error;

use crate::bsde::{self, BsdeSolution};
use crate::model::{MarketModel, Regime, ValidatedModel};
use crate::numerics::{dot_skip_zero, log_sum_exp};
use crate::payoff::PayoffSpec;
use crate::scenario::Lattice;

/// Rayon splitting floor; per-node work is small, so avoid tiny tasks.
const PAR_MIN_LEN: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SolverError {
    #[error("exponential moment left the representable range at slice {slice}")]
    Overflow { slice: usize },
    #[error("operation requires a solution solved with keep_diagnostics")]
    DiagnosticsRequired,
}

/// No-claim equilibrium (Merton) holding:
/// (1/(2γσ¹√h))·log((1+θ√h)/(1−θ√h)).
pub fn merton_alpha(gamma: f64, theta: f64, sigma1: f64, h: f64) -> f64 {
    let t = theta * h.sqrt();
    debug_assert!((0.0..=1.0).contains(&t));
    (t.ln_1p() - (-t).ln_1p()) / (2.0 * gamma * sigma1 * h.sqrt())
}

/// Self-financing wealth increment α·(μ¹h + σ¹√h·Δb¹).
#[inline]
pub fn wealth_increment(model: &MarketModel, regime: Regime, alpha: f64, db1: i8) -> f64 {
    let p = model.params(regime);
    alpha * (p.mu1 * model.h() + p.sigma1 * model.sqrt_h() * db1 as f64)
}

/// Claim adjustment H from the log-ratio of the two Δb¹-conditional moments
/// (finite for every admissible θ, including θ = 0).
#[inline]
pub fn h_lambda_log_ratio(gamma: f64, sigma1: f64, sqrt_h: f64, log_num: [f64; 2]) -> f64 {
    (log_num[0] - log_num[1]) / (2.0 * gamma * sigma1 * sqrt_h)
}

/// The same adjustment via the measure-gap form
/// (1/(hμ¹γ))·(E_P[log Num] − E_Q[log Num]); singular at μ¹ = 0.
#[inline]
pub fn h_lambda_measure_gap(gamma: f64, mu1: f64, h: f64, q_db1: [f64; 2], log_num: [f64; 2]) -> f64 {
    let e_p = 0.5 * log_num[0] + 0.5 * log_num[1];
    let e_q = dot_skip_zero(&q_db1, &log_num);
    (e_p - e_q) / (h * mu1 * gamma)
}

/// Precomputed per-regime scalars shared by the solvers.
pub(crate) struct Ctx {
    pub h: f64,
    pub sqrt_h: f64,
    pub gammas: [f64; 2],
    pub theta_sqrt_h: [f64; 2],
    pub alpha0: [f64; 2],
    /// Q weights of Δb¹ = (+1, −1) per regime.
    pub q: [[f64; 2]; 2],
    /// ln(¼·P[i][j′]) indexed by the sub-branch s = 2·(Δb²<0) + j′.
    pub log_quarter: [[f64; 4]; 2],
    /// ln(P[i][j′]).
    pub log_row: [[f64; 2]; 2],
    /// μ¹h + σ¹√h·Δb¹ per regime, Δb¹ = (+1, −1).
    pub dx_coeff: [[f64; 2]; 2],
    /// 1/(2γσ¹√h) per regime.
    pub inv_2gs: [f64; 2],
}

impl Ctx {
    pub fn new(model: &ValidatedModel) -> Ctx {
        let (h, sqrt_h) = (model.h(), model.sqrt_h());
        let mut ctx = Ctx {
            h,
            sqrt_h,
            gammas: [0.0; 2],
            theta_sqrt_h: [0.0; 2],
            alpha0: [0.0; 2],
            q: [[0.0; 2]; 2],
            log_quarter: [[0.0; 4]; 2],
            log_row: [[0.0; 2]; 2],
            dx_coeff: [[0.0; 2]; 2],
            inv_2gs: [0.0; 2],
        };
        for regime in Regime::ALL {
            let i = regime.index();
            let p = model.params(regime);
            let tsh = model.theta_sqrt_h(regime);
            ctx.gammas[i] = p.gamma;
            ctx.theta_sqrt_h[i] = tsh;
            ctx.alpha0[i] = merton_alpha(p.gamma, model.theta(regime), p.sigma1, h);
            ctx.q[i] = [0.5 * (1.0 - tsh), 0.5 * (1.0 + tsh)];
            for s in 0..4 {
                ctx.log_quarter[i][s] = (0.25 * model.transition[i][s & 1]).ln();
            }
            for j in 0..2 {
                ctx.log_row[i][j] = model.transition[i][j].ln();
            }
            ctx.dx_coeff[i] = [
                p.mu1 * h + p.sigma1 * sqrt_h,
                p.mu1 * h - p.sigma1 * sqrt_h,
            ];
            ctx.inv_2gs[i] = 1.0 / (2.0 * p.gamma * p.sigma1 * sqrt_h);
        }
        ctx
    }
}

/// No-claim conditional exponential moments. The no-claim increments depend
/// only on the regime path, so the moment is a function of (slice, regime)
/// and the pricing risk aversion.
#[derive(Debug, Clone)]
pub struct NoClaimTable {
    /// α̂⁰ per regime.
    pub alpha0: [f64; 2],
    /// log E[e^{−γ(g)·Σ_{k≥m} ΔX̂⁰}| regime j at m], indexed [m][j][g].
    pub log_w0: Vec<[[f64; 2]; 2]>,
    /// log of the node-level normalizer E[e^{−γ(i)·Σ_{k>m} ΔX̂⁰} | regime i at m],
    /// indexed [m][i].
    pub log_norm: Vec<[f64; 2]>,
}

fn build_no_claim(ctx: &Ctx, n_steps: usize) -> NoClaimTable {
    let mut log_w0 = vec![[[0.0f64; 2]; 2]; n_steps + 1];
    for m in (0..n_steps).rev() {
        for i in 0..2 {
            for g in 0..2 {
                let cont = log_sum_exp(&[
                    ctx.log_row[i][0] + log_w0[m + 1][0][g],
                    ctx.log_row[i][1] + log_w0[m + 1][1][g],
                ]);
                let step = log_sum_exp(&[
                    -ctx.gammas[g] * ctx.alpha0[i] * ctx.dx_coeff[i][0],
                    -ctx.gammas[g] * ctx.alpha0[i] * ctx.dx_coeff[i][1],
                ]) + 0.5f64.ln();
                log_w0[m][i][g] = step + cont;
            }
        }
    }
    let mut log_norm = vec![[0.0f64; 2]; n_steps];
    for (m, norm) in log_norm.iter_mut().enumerate() {
        for i in 0..2 {
            norm[i] = log_sum_exp(&[
                ctx.log_row[i][0] + log_w0[m + 1][0][i],
                ctx.log_row[i][1] + log_w0[m + 1][1][i],
            ]);
        }
    }
    NoClaimTable {
        alpha0: ctx.alpha0,
        log_w0,
        log_norm,
    }
}

/// Per-node outputs of one backward slice.
#[derive(Debug, Clone, Default)]
pub struct SolutionSlice {
    /// No-claim holding at each node (a function of the node's regime).
    pub alpha0: Vec<f64>,
    /// Equilibrium holding with the claim.
    pub alpha_hat: Vec<f64>,
    /// Indifference price.
    pub price: Vec<f64>,
}

/// Per-node log claim moments, kept when requested; slot g is the pricing
/// risk aversion γ(g).
#[derive(Debug, Clone)]
pub struct Diagnostics {
    /// log E[e^{−γ(g)·Σ_{k≥m} ΔX̂^λ}·e^{λγ(g)F} | state], indexed [m][node][g];
    /// slice N holds λγ(g)F.
    pub log_w_lambda: Vec<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone)]
pub struct EquilibriumSolution {
    pub lambda: f64,
    /// Decision slices m = 0..N−1.
    pub slices: Vec<SolutionSlice>,
    pub no_claim: NoClaimTable,
    pub diagnostics: Option<Diagnostics>,
}

impl EquilibriumSolution {
    /// Equilibrium wealth increment at (slice, node) for the given Δb¹.
    pub fn dx_hat<L: Lattice>(&self, lat: &L, model: &MarketModel, m: usize, k: usize, db1: i8) -> f64 {
        wealth_increment(model, lat.state(m, k).regime, self.slices[m].alpha_hat[k], db1)
    }

    /// No-claim wealth increment at (slice, node) for the given Δb¹.
    pub fn dx0<L: Lattice>(&self, lat: &L, model: &MarketModel, m: usize, k: usize, db1: i8) -> f64 {
        wealth_increment(model, lat.state(m, k).regime, self.slices[m].alpha0[k], db1)
    }
}

/// Root price for a given start regime, if that start is on the lattice.
pub fn start_price<L: Lattice>(
    solution: &EquilibriumSolution,
    lat: &L,
    start: Regime,
) -> Option<f64> {
    (0..lat.slice_len(0))
        .find(|&k| lat.state(0, k).regime == start)
        .map(|k| solution.slices[0].price[k])
}

/// Root price mixed over the model's initial-regime distribution.
pub fn mixture_price<L: Lattice>(
    solution: &EquilibriumSolution,
    lat: &L,
    model: &ValidatedModel,
) -> f64 {
    let weights = model.initial_regime.weights();
    let mut total = 0.0;
    let mut mass = 0.0;
    for k in 0..lat.slice_len(0) {
        let w = weights[lat.state(0, k).regime.index()];
        total += w * solution.slices[0].price[k];
        mass += w;
    }
    total / mass
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SolveOptions {
    /// Keep per-node log claim moments (needed by the optimality certificate).
    pub keep_diagnostics: bool,
}

/// Terminal-step solution at slice N−1 (the pure optimization problem).
#[derive(Debug, Clone)]
pub struct TerminalSolution {
    pub alpha_hat: Vec<f64>,
    pub price: Vec<f64>,
    /// Backward-equation value at the node: E[λF] + f^λ·h.
    pub y1: Vec<f64>,
    pub f_lambda: Vec<f64>,
    pub z: Vec<[f64; 3]>,
}

/// Terminal log claim moments per leaf: λ·γ(g)·F.
fn terminal_moments<L: Lattice>(lat: &L, ctx: &Ctx, payoff: &PayoffSpec) -> Vec<[f64; 2]> {
    let n = lat.num_steps();
    let lambda = payoff.lambda();
    let mut out = vec![[0.0f64; 2]; lat.slice_len(n)];
    out.par_iter_mut()
        .with_min_len(PAR_MIN_LEN)
        .enumerate()
        .for_each(|(k, lw)| {
            let st = lat.state(n, k);
            let f = payoff.f(st.s1, st.s2);
            lw[0] = lambda * ctx.gammas[0] * f;
            lw[1] = lambda * ctx.gammas[1] * f;
        });
    out
}

/// Per-node quantities shared by the slice sweep: the Δb¹-conditional log
/// moments log E[¼P·W′] for both pricing risk aversions.
#[inline]
fn conditional_log_moments<L: Lattice>(
    lat: &L,
    lw_next: &[[f64; 2]],
    ctx: &Ctx,
    m: usize,
    k: usize,
    regime_idx: usize,
) -> [[f64; 2]; 2] {
    // inner[d][g], d = 0 for Δb¹ = +1
    let mut inner = [[0.0f64; 2]; 2];
    for d in 0..2 {
        for g in 0..2 {
            let mut terms = [0.0f64; 4];
            for (s, term) in terms.iter_mut().enumerate() {
                let succ = lat.successor(m, k, 4 * d + s);
                *term = ctx.log_quarter[regime_idx][s] + lw_next[succ][g];
            }
            inner[d][g] = log_sum_exp(&terms);
        }
    }
    inner
}

/// Solves the terminal problem at slice N−1: the equilibrium holding, the
/// indifference price, and the backward-equation value.
pub fn solve_terminal<L: Lattice>(
    lat: &L,
    model: &ValidatedModel,
    payoff: &PayoffSpec,
) -> Result<TerminalSolution, SolverError> {
    let ctx = Ctx::new(model);
    let n = lat.num_steps();
    let m = n - 1;
    let lw_next = terminal_moments(lat, &ctx, payoff);
    let len = lat.slice_len(m);
    let lambda = payoff.lambda();

    let mut out = TerminalSolution {
        alpha_hat: vec![0.0; len],
        price: vec![0.0; len],
        y1: vec![0.0; len],
        f_lambda: vec![0.0; len],
        z: vec![[0.0; 3]; len],
    };
    let results: Vec<(f64, f64, f64, f64, [f64; 3])> = (0..len)
        .into_par_iter()
        .with_min_len(PAR_MIN_LEN)
        .map(|k| {
            let i = lat.state(m, k).regime.index();
            let gamma = ctx.gammas[i];
            let inner = conditional_log_moments(lat, &lw_next, &ctx, m, k, i);
            let log_num = [
                inner[0][i] + std::f64::consts::LN_2,
                inner[1][i] + std::f64::consts::LN_2,
            ];
            let alpha = ctx.alpha0[i] + ctx.inv_2gs[i] * (log_num[0] - log_num[1]);
            let price = dot_skip_zero(&ctx.q[i], &log_num) / gamma;

            // Backward-equation view: terminal data on the walk branches is
            // λF at the (Δb¹, Δb²) successor (regime-free), so read the j′=0
            // child.
            let mut terminal = [0.0f64; 4];
            for (w, t) in terminal.iter_mut().enumerate() {
                let st = lat.state(n, lat.successor(m, k, 2 * w));
                *t = lambda * payoff.f(st.s1, st.s2);
            }
            let f0 = bsde::driver_f0(ctx.theta_sqrt_h[i] / ctx.sqrt_h, gamma, ctx.h);
            let mut f_lambda_val = f0;
            let sol: BsdeSolution = bsde::solve_one_step(&terminal, ctx.h, |z| {
                f_lambda_val = bsde::driver_f_lambda(f0, z, gamma, ctx.h, ctx.q[i])
                    .unwrap_or(f64::NAN);
                f_lambda_val
            });
            (alpha, price, sol.y, f_lambda_val, sol.z)
        })
        .collect();
    for (k, (a, p, y, f, z)) in results.into_iter().enumerate() {
        out.alpha_hat[k] = a;
        out.price[k] = p;
        out.y1[k] = y;
        out.f_lambda[k] = f;
        out.z[k] = z;
    }
    if out
        .alpha_hat
        .iter()
        .chain(&out.price)
        .chain(&out.y1)
        .any(|v| !v.is_finite())
    {
        return Err(SolverError::Overflow { slice: m });
    }
    Ok(out)
}

/// Full backward solve over problems (P1)…(PN). The terminal slice is the
/// base case; every earlier slice prices against the already-fixed future
/// equilibrium controls through the claim moments.
pub fn backward_solve<L: Lattice>(
    lat: &L,
    model: &ValidatedModel,
    payoff: &PayoffSpec,
    options: SolveOptions,
) -> Result<EquilibriumSolution, SolverError> {
    let ctx = Ctx::new(model);
    let n = lat.num_steps();
    let no_claim = build_no_claim(&ctx, n);

    let mut lw_next = terminal_moments(lat, &ctx, payoff);
    let mut diag: Option<Vec<Vec<[f64; 2]>>> = options.keep_diagnostics.then(|| {
        let mut v = vec![Vec::new(); n + 1];
        v[n] = lw_next.clone();
        v
    });

    let mut slices = vec![SolutionSlice::default(); n];
    for m in (0..n).rev() {
        let len = lat.slice_len(m);
        let mut alpha0_v = vec![0.0f64; len];
        let mut alpha_v = vec![0.0f64; len];
        let mut price_v = vec![0.0f64; len];
        let mut lw_cur = vec![[0.0f64; 2]; len];

        let log_norm = &no_claim.log_norm[m];
        alpha0_v
            .par_iter_mut()
            .with_min_len(PAR_MIN_LEN)
            .zip(alpha_v.par_iter_mut())
            .zip(price_v.par_iter_mut())
            .zip(lw_cur.par_iter_mut())
            .enumerate()
            .for_each(|(k, (((a0, ah), pr), lw))| {
                let i = lat.state(m, k).regime.index();
                let gamma = ctx.gammas[i];
                let inner = conditional_log_moments(lat, &lw_next, &ctx, m, k, i);
                let log_num = [
                    inner[0][i] + std::f64::consts::LN_2,
                    inner[1][i] + std::f64::consts::LN_2,
                ];
                *a0 = ctx.alpha0[i];
                *ah = ctx.alpha0[i] + ctx.inv_2gs[i] * (log_num[0] - log_num[1]);
                *pr = (dot_skip_zero(&ctx.q[i], &log_num) - log_norm[i]) / gamma;
                // W = Σ_d e^{−γ·ΔX̂(d)}·Inner(d); the ¼P weights inside Inner
                // already carry the Δb¹ half.
                for g in 0..2 {
                    let gam = ctx.gammas[g];
                    lw[g] = crate::numerics::log_add_exp(
                        -gam * *ah * ctx.dx_coeff[i][0] + inner[0][g],
                        -gam * *ah * ctx.dx_coeff[i][1] + inner[1][g],
                    );
                }
            });

        if alpha_v
            .par_iter()
            .chain(price_v.par_iter())
            .any(|v| !v.is_finite())
            || lw_cur.par_iter().flatten().any(|v| !v.is_finite())
        {
            return Err(SolverError::Overflow { slice: m });
        }

        slices[m] = SolutionSlice {
            alpha0: alpha0_v,
            alpha_hat: alpha_v,
            price: price_v,
        };
        if let Some(d) = diag.as_mut() {
            d[m] = lw_cur.clone();
        }
        lw_next = lw_cur;
    }

    Ok(EquilibriumSolution {
        lambda: payoff.lambda(),
        slices,
        no_claim,
        diagnostics: diag.map(|log_w_lambda| Diagnostics { log_w_lambda }),
    })
}

/// Per-node verification that the stored policy satisfies the one-step
/// optimality principle.
#[derive(Debug, Clone)]
pub struct CertificateReport {
    pub nodes_checked: usize,
    /// Max |log(e^{−γfh}·g(α̂))| over nodes; optimality requires ≈ 0.
    pub max_optimality_residual: f64,
    /// Min over nodes and ±δ of log g(α̂±δ) − log g(α̂); must be > 0.
    pub min_perturbation_gain: f64,
    /// Max |d log g / dα| at α̂ by central difference.
    pub max_foc_derivative: f64,
    /// (slice, node) of the worst offender.
    pub worst_node: (usize, usize),
    pub passed: bool,
}

#[derive(Debug, Clone, Error)]
#[error(
    "optimality certificate failed at slice {}, node {}: residual {:.3e}, \
     perturbation gain {:.3e}, foc {:.3e}",
    report.worst_node.0,
    report.worst_node.1,
    report.max_optimality_residual,
    report.min_perturbation_gain,
    report.max_foc_derivative
)]
pub struct CertificateError {
    pub report: CertificateReport,
}

const CERT_OPTIMALITY_TOL: f64 = 1e-9;
const CERT_FOC_TOL: f64 = 1e-6;

/// Checks, at every node, that the stored α̂ satisfies the
/// suboptimality/optimality principle: the one-step objective g is stationary
/// and locally minimal at α̂ and e^{−γf^λh}·g(α̂) = 1.
pub fn optimality_certificate<L: Lattice>(
    lat: &L,
    model: &ValidatedModel,
    solution: &EquilibriumSolution,
    delta: f64,
) -> Result<CertificateReport, SolverError> {
    let diag = solution
        .diagnostics
        .as_ref()
        .ok_or(SolverError::DiagnosticsRequired)?;
    let ctx = Ctx::new(model);
    let n = lat.num_steps();

    struct NodeScore {
        residual: f64,
        gain: f64,
        foc: f64,
        node: (usize, usize),
    }

    let mut worst = NodeScore {
        residual: 0.0,
        gain: f64::INFINITY,
        foc: 0.0,
        node: (0, 0),
    };
    let mut nodes = 0usize;

    for m in 0..n {
        let lw_next = &diag.log_w_lambda[m + 1];
        let scores: Vec<NodeScore> = (0..lat.slice_len(m))
            .into_par_iter()
            .with_min_len(512)
            .map(|k| {
                let i = lat.state(m, k).regime.index();
                let gamma = ctx.gammas[i];
                // Y′ on the four walk branches: the claim moment aggregated
                // over the next regime with this node's pricing γ.
                let mut y_next = [0.0f64; 4];
                for (w, y) in y_next.iter_mut().enumerate() {
                    let terms = [
                        ctx.log_row[i][0] + lw_next[lat.successor(m, k, 2 * w)][i],
                        ctx.log_row[i][1] + lw_next[lat.successor(m, k, 2 * w + 1)][i],
                    ];
                    *y = log_sum_exp(&terms) / gamma;
                }
                let f0 = bsde::driver_f0(ctx.theta_sqrt_h[i] / ctx.sqrt_h, gamma, ctx.h);
                let mut f_lambda = f0;
                let sol = bsde::solve_one_step(&y_next, ctx.h, |z| {
                    f_lambda = bsde::driver_f_lambda(f0, z, gamma, ctx.h, ctx.q[i])
                        .unwrap_or(f64::NAN);
                    f_lambda
                });
                // log g(α) over the four walk branches.
                let log_g = |alpha: f64| -> f64 {
                    let mut terms = [0.0f64; 4];
                    for (w, t) in terms.iter_mut().enumerate() {
                        let (db1, db2) = crate::model::WALK[w];
                        let d = (db1 < 0) as usize;
                        *t = -gamma * alpha * ctx.dx_coeff[i][d]
                            + gamma * ctx.sqrt_h * bsde::z_dot_db(&sol.z, db1, db2);
                    }
                    log_sum_exp(&terms) + 0.25f64.ln()
                };
                let alpha = solution.slices[m].alpha_hat[k];
                let at = log_g(alpha);
                let residual = (at - gamma * f_lambda * ctx.h).abs();
                let gain = (log_g(alpha + delta) - at).min(log_g(alpha - delta) - at);
                let foc = (log_g(alpha + delta) - log_g(alpha - delta)) / (2.0 * delta);
                NodeScore {
                    residual,
                    gain,
                    foc: foc.abs(),
                    node: (m, k),
                }
            })
            .collect();
        nodes += scores.len();
        for s in scores {
            let was_bad = worst.residual.max(worst.foc) - worst.gain.min(0.0);
            let is_bad = s.residual.max(s.foc) - s.gain.min(0.0);
            if is_bad > was_bad {
                worst.node = s.node;
            }
            worst.residual = worst.residual.max(s.residual);
            worst.gain = worst.gain.min(s.gain);
            worst.foc = worst.foc.max(s.foc);
        }
    }

    let passed = worst.residual <= CERT_OPTIMALITY_TOL
        && worst.gain > 0.0
        && worst.foc <= CERT_FOC_TOL;
    Ok(CertificateReport {
        nodes_checked: nodes,
        max_optimality_residual: worst.residual,
        min_perturbation_gain: worst.gain,
        max_foc_derivative: worst.foc,
        worst_node: worst.node,
        passed,
    })
}

impl CertificateReport {
    /// Turns a failed report into the certificate error.
    pub fn ensure(self) -> Result<CertificateReport, CertificateError> {
        if self.passed {
            Ok(self)
        } else {
            Err(CertificateError { report: self })
        }
    }
}
