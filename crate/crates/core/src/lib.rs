//! Pricing engine for a two-asset, regime-switching, multi-period binomial market.
//!
//! The market has one traded asset, one non-traded asset (both driven by a
//! symmetric two-dimensional random walk) and a two-state Markov chain that
//! switches the drift/volatility coefficients and the investor's exponential
//! risk aversion between a bull and a bear regime. Because risk aversion can
//! change with the regime, optimal strategies are time inconsistent; the
//! solver computes subgame perfect equilibrium strategies by backward
//! iteration and prices contingent claims by utility indifference.
//!
//! Crate layout:
//! - [`model`] — market/preference parameters and validation
//! - [`payoff`] — claim descriptions (call/put/forward on either asset)
//! - [`scenario`] — the exact event tree and the deduplicated state grid
//! - [`measures`] — one-step branch laws under the physical and martingale measures
//! - [`bsde`] — one-step backward stochastic difference equation solves and drivers
//! - [`equilibrium`] — the general equilibrium solver (regime-dependent risk aversion)
//! - [`constant_gamma`] — the constant-risk-aversion fast path and its checks
//! - [`oracle`] — formula-independent ground truth on tiny trees

pub mod bsde;
pub mod constant_gamma;
pub mod equilibrium;
pub mod measures;
pub mod model;
pub mod numerics;
pub mod oracle;
pub mod payoff;
pub mod scenario;

pub use model::{
    market_price_of_risk, transition_power, validate_model, InitialRegime, MarketModel, Regime,
    RegimeParams, S2Form, ValidatedModel,
};
pub use payoff::{OptionKind, PayoffSpec, Underlying};
pub use scenario::{build_grid, build_tree, Branch, Lattice, MarkovGrid, ScenarioTree};
