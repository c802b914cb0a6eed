//! One-step backward stochastic difference equation solves and the driver
//! functions used by the equilibrium iteration.
//!
//! The walk basis is {1, Δb¹, Δb², Δb³} with Δb³ := −Δb¹Δb², which is
//! orthonormal under the uniform four-branch law, so terminal data decompose
//! exactly as y′ = E[y′] + √h·z·Δb.

use thiserror::Error;

use crate::model::WALK;
use crate::numerics::{dot_skip_zero, log_sum_exp};

/// Third walk coordinate: −Δb¹Δb².
#[inline]
pub fn db3(db1: i8, db2: i8) -> i8 {
    -(db1 * db2)
}

/// z·Δb over the walk basis.
#[inline]
pub fn z_dot_db(z: &[f64; 3], db1: i8, db2: i8) -> f64 {
    z[0] * db1 as f64 + z[1] * db2 as f64 + z[2] * db3(db1, db2) as f64
}

/// Solution of a one-step backward difference equation: the value y at the
/// node and the representation coefficients z against the walk basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsdeSolution {
    pub y: f64,
    pub z: [f64; 3],
}

/// Solves one backward step: z_i = (1/√h)·E[y′·Δbⁱ], y = E[y′] + f(z)·h.
///
/// `terminal` holds y′ on the four walk branches in the order
/// (+,+), (+,−), (−,+), (−,−). The driver is evaluated at the z produced by
/// this same step; no fixed-point iteration is needed because z is determined
/// by the terminal data alone.
pub fn solve_one_step<F>(terminal: &[f64; 4], h: f64, driver: F) -> BsdeSolution
where
    F: FnOnce(&[f64; 3]) -> f64,
{
    let sqrt_h = h.sqrt();
    let mut z = [0.0; 3];
    let mut mean = 0.0;
    for (y, (db1, db2)) in terminal.iter().zip(WALK) {
        mean += 0.25 * y;
        z[0] += 0.25 * y * db1 as f64;
        z[1] += 0.25 * y * db2 as f64;
        z[2] += 0.25 * y * db3(db1, db2) as f64;
    }
    z.iter_mut().for_each(|zi| *zi /= sqrt_h);
    let y = mean + driver(&z) * h;
    BsdeSolution { y, z }
}

/// Per-branch residuals y′ − E[y′] − √h·z·Δb; zero up to rounding.
pub fn representation_residuals(terminal: &[f64; 4], z: &[f64; 3], h: f64) -> [f64; 4] {
    let sqrt_h = h.sqrt();
    let mean: f64 = terminal.iter().sum::<f64>() / 4.0;
    let mut out = [0.0; 4];
    for (i, (db1, db2)) in WALK.iter().enumerate() {
        out[i] = terminal[i] - mean - sqrt_h * z_dot_db(z, *db1, *db2);
    }
    out
}

/// Driver at the no-claim solution: (1/(γh))·log g*(θ), where g* is the
/// one-step objective at the no-claim optimizer,
/// g* = ½[r^{−(1+θ√h)/2} + r^{(1−θ√h)/2}] with r = (1+θ√h)/(1−θ√h).
pub fn driver_f0(theta: f64, gamma: f64, h: f64) -> f64 {
    let t = theta * h.sqrt();
    debug_assert!((0.0..=1.0).contains(&t));
    if t == 0.0 {
        return 0.0;
    }
    // log r computed as ln(1+t) − ln(1−t); stays finite for t < 1 and the
    // t → 1 limit of g* is 1/2.
    let log_r = t.ln_1p() - (-t).ln_1p();
    let g_star = 0.5 * ((-0.5 * (1.0 + t) * log_r).exp() + (0.5 * (1.0 - t) * log_r).exp());
    g_star.ln() / (gamma * h)
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("driver evaluation overflowed the log-space budget")]
pub struct OverflowGuard;

/// Driver at a claim solution (Eq-level contract: f⁰ plus the Q-expected log
/// of the Δb¹-conditional exponential moment of γ√h·z·Δb).
///
/// `q_db1` are the Q weights of Δb¹ = (+1, −1). Exponential moments are
/// max-shifted, so only non-finite inputs can trip the guard.
pub fn driver_f_lambda(
    f0: f64,
    z: &[f64; 3],
    gamma: f64,
    h: f64,
    q_db1: [f64; 2],
) -> Result<f64, OverflowGuard> {
    let sqrt_h = h.sqrt();
    let mut log_inner = [0.0; 2];
    for (d, db1) in [1i8, -1i8].into_iter().enumerate() {
        let terms = [
            gamma * sqrt_h * z_dot_db(z, db1, 1),
            gamma * sqrt_h * z_dot_db(z, db1, -1),
        ];
        log_inner[d] = log_sum_exp(&terms) + 0.5f64.ln();
    }
    let f = f0 + dot_skip_zero(&q_db1, &log_inner) / (gamma * h);
    if f.is_finite() {
        Ok(f)
    } else {
        Err(OverflowGuard)
    }
}
