//! Market and preference parameters, validation, and elementary derived
//! quantities (market price of risk, n-step transition probabilities).

use std::fmt;
use std::ops::Deref;

use thiserror::Error;

/// Market state: `Bull` is state 0 (good), `Bear` is state 1 (bad).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    Bull,
    Bear,
}

impl Regime {
    pub const ALL: [Regime; 2] = [Regime::Bull, Regime::Bear];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Regime::Bull => 0,
            Regime::Bear => 1,
        }
    }

    #[inline]
    pub fn from_index(i: usize) -> Regime {
        match i {
            0 => Regime::Bull,
            1 => Regime::Bear,
            _ => panic!("regime index out of range: {i}"),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Regime::Bull => "bull",
            Regime::Bear => "bear",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Per-regime coefficients: traded-asset drift/vol, non-traded drift/vol,
/// and the absolute risk-aversion coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeParams {
    /// Per-period drift rate of the traded asset (1/time).
    pub mu1: f64,
    /// Volatility of the traded asset (1/√time).
    pub sigma1: f64,
    /// Drift of the non-traded asset.
    pub mu2: f64,
    /// Volatility of the non-traded asset.
    pub sigma2: f64,
    /// Absolute risk aversion (1/wealth).
    pub gamma: f64,
}

/// Which parenthesization of the non-traded asset's noise term to use.
///
/// `Standard` drives the asset with ρ·Δb¹ + √(1−ρ²)·Δb², so the two noises
/// have correlation ρ and ρ = 0 decouples the assets. `AsPrinted` uses
/// ρ·(Δb¹ + √(1−ρ²)·Δb²), under which ρ = 0 removes all non-traded risk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum S2Form {
    #[default]
    Standard,
    AsPrinted,
}

/// Starting market state: a known regime or a distribution over the two.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialRegime {
    Fixed(Regime),
    Mixed([f64; 2]),
}

impl InitialRegime {
    /// Probability weights over (bull, bear).
    pub fn weights(&self) -> [f64; 2] {
        match self {
            InitialRegime::Fixed(Regime::Bull) => [1.0, 0.0],
            InitialRegime::Fixed(Regime::Bear) => [0.0, 1.0],
            InitialRegime::Mixed(w) => *w,
        }
    }

    /// Regimes with strictly positive starting weight.
    pub fn support(&self) -> Vec<Regime> {
        let w = self.weights();
        Regime::ALL
            .into_iter()
            .filter(|r| w[r.index()] > 0.0)
            .collect()
    }
}

/// All model parameters for the two-asset regime-switching binomial market.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketModel {
    /// Number of trading periods N ≥ 1.
    pub n_steps: usize,
    /// Horizon T > 0; the step length is h = T/N.
    pub horizon: f64,
    /// Initial traded-asset price.
    pub s1_0: f64,
    /// Initial non-traded-asset price.
    pub s2_0: f64,
    /// Correlation between the two driving noises, |ρ| ≤ 1.
    pub rho: f64,
    /// Coefficients per regime, indexed by `Regime::index`.
    pub regimes: [RegimeParams; 2],
    /// Row-stochastic one-step transition matrix of the regime chain.
    pub transition: [[f64; 2]; 2],
    /// Starting regime (point mass or distribution).
    pub initial_regime: InitialRegime,
    /// Reading of the non-traded asset's noise term.
    pub s2_form: S2Form,
}

impl MarketModel {
    #[inline]
    pub fn h(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    #[inline]
    pub fn sqrt_h(&self) -> f64 {
        self.h().sqrt()
    }

    #[inline]
    pub fn params(&self, regime: Regime) -> &RegimeParams {
        &self.regimes[regime.index()]
    }

    #[inline]
    pub fn gamma(&self, regime: Regime) -> f64 {
        self.params(regime).gamma
    }

    /// Market price of risk μ¹/σ¹ in the given regime.
    #[inline]
    pub fn theta(&self, regime: Regime) -> f64 {
        let p = self.params(regime);
        p.mu1 / p.sigma1
    }

    #[inline]
    pub fn theta_sqrt_h(&self, regime: Regime) -> f64 {
        self.theta(regime) * self.sqrt_h()
    }

    /// True iff both regimes carry the same risk aversion.
    pub fn constant_gamma(&self) -> bool {
        self.regimes[0].gamma == self.regimes[1].gamma
    }

    /// The four one-step price factors of the non-traded asset in `regime`,
    /// in walk-branch order (Δb¹, Δb²) = (+,+), (+,−), (−,+), (−,−).
    pub fn s2_factors(&self, regime: Regime) -> [f64; 4] {
        let p = self.params(regime);
        let (h, sh) = (self.h(), self.sqrt_h());
        let mut out = [0.0; 4];
        for (i, (db1, db2)) in WALK.iter().enumerate() {
            let noise = match self.s2_form {
                S2Form::Standard => {
                    self.rho * *db1 as f64 + (1.0 - self.rho * self.rho).sqrt() * *db2 as f64
                }
                S2Form::AsPrinted => {
                    self.rho * (*db1 as f64 + (1.0 - self.rho * self.rho).sqrt() * *db2 as f64)
                }
            };
            out[i] = 1.0 + p.mu2 * h + p.sigma2 * sh * noise;
        }
        out
    }

    /// The two one-step price factors of the traded asset in `regime`,
    /// ordered (Δb¹ = +1, Δb¹ = −1).
    pub fn s1_factors(&self, regime: Regime) -> [f64; 2] {
        let p = self.params(regime);
        let (h, sh) = (self.h(), self.sqrt_h());
        [
            1.0 + p.mu1 * h + p.sigma1 * sh,
            1.0 + p.mu1 * h - p.sigma1 * sh,
        ]
    }
}

/// Walk-branch order used throughout: (Δb¹, Δb²) ∈ (+,+), (+,−), (−,+), (−,−).
pub const WALK: [(i8, i8); 4] = [(1, 1), (1, -1), (-1, 1), (-1, -1)];

/// A single violated model constraint.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("{regime}: theta*sqrt(h) = {value} outside [0, 1]; martingale measure undefined")]
    ThetaOutOfRange { regime: Regime, value: f64 },
    #[error("{regime}: one-step price factor {value} <= 0 for {asset}")]
    NonpositivePriceFactor {
        regime: Regime,
        asset: &'static str,
        value: f64,
    },
    #[error("transition matrix invalid: {detail}")]
    BadTransitionMatrix { detail: String },
    #[error("{regime}: risk aversion gamma = {value} must be > 0")]
    NonpositiveGamma { regime: Regime, value: f64 },
    #[error("{regime}: volatility {name} = {value} must be > 0")]
    NonpositiveVolatility {
        regime: Regime,
        name: &'static str,
        value: f64,
    },
    #[error("correlation rho = {value} outside [-1, 1]")]
    BadCorrelation { value: f64 },
    #[error("{detail}")]
    BadShape { detail: String },
}

/// Every constraint violated by a raw model, reported together.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("model validation failed: {}", self.describe())]
pub struct ValidationError {
    pub violations: Vec<Violation>,
}

impl ValidationError {
    fn describe(&self) -> String {
        self.violations
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// A model that passed [`validate_model`]. Downstream code relies on the
/// invariants (positive prices, well-defined Q, stochastic transition rows).
#[derive(Debug, Clone)]
pub struct ValidatedModel {
    model: MarketModel,
    warnings: Vec<String>,
}

impl ValidatedModel {
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn into_inner(self) -> MarketModel {
        self.model
    }
}

impl Deref for ValidatedModel {
    type Target = MarketModel;

    fn deref(&self) -> &MarketModel {
        &self.model
    }
}

const ROW_SUM_TOL: f64 = 1e-12;

/// Checks every model invariant; returns the model unchanged iff all hold,
/// otherwise the full list of violations.
pub fn validate_model(model: MarketModel) -> Result<ValidatedModel, ValidationError> {
    let mut violations = Vec::new();
    let mut warnings = Vec::new();

    if model.n_steps < 1 {
        violations.push(Violation::BadShape {
            detail: format!("n_steps = {} must be >= 1", model.n_steps),
        });
    }
    if !(model.horizon > 0.0) {
        violations.push(Violation::BadShape {
            detail: format!("horizon = {} must be > 0", model.horizon),
        });
    }
    for (name, v) in [("s1_0", model.s1_0), ("s2_0", model.s2_0)] {
        if !(v > 0.0) {
            violations.push(Violation::BadShape {
                detail: format!("initial price {name} = {v} must be > 0"),
            });
        }
    }
    if !(model.rho.abs() <= 1.0) {
        violations.push(Violation::BadCorrelation { value: model.rho });
    }

    for (r, row) in Regime::ALL.iter().zip(&model.transition) {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            violations.push(Violation::BadTransitionMatrix {
                detail: format!("row {} sums to {sum}, not 1", r.index()),
            });
        }
        for &p in row {
            if !(0.0..=1.0).contains(&p) {
                violations.push(Violation::BadTransitionMatrix {
                    detail: format!("entry {p} in row {} outside [0, 1]", r.index()),
                });
            }
        }
    }

    if let InitialRegime::Mixed(w) = model.initial_regime {
        let sum = w[0] + w[1];
        if !w.iter().all(|&p| (0.0..=1.0).contains(&p)) || (sum - 1.0).abs() > ROW_SUM_TOL {
            violations.push(Violation::BadShape {
                detail: format!("initial regime distribution {w:?} is not a distribution"),
            });
        }
    }

    // Per-regime checks; only meaningful when shape parameters are sane.
    let shape_ok = violations.is_empty();
    for regime in Regime::ALL {
        let p = model.params(regime);
        if !(p.gamma > 0.0) {
            violations.push(Violation::NonpositiveGamma {
                regime,
                value: p.gamma,
            });
        }
        for (name, v) in [("sigma1", p.sigma1), ("sigma2", p.sigma2)] {
            if !(v > 0.0) {
                violations.push(Violation::NonpositiveVolatility {
                    regime,
                    name,
                    value: v,
                });
            }
        }
        if shape_ok && p.sigma1 > 0.0 {
            let tsh = model.theta_sqrt_h(regime);
            if !(0.0..=1.0).contains(&tsh) {
                violations.push(Violation::ThetaOutOfRange {
                    regime,
                    value: tsh,
                });
            } else if tsh == 1.0 {
                warnings.push(format!(
                    "{regime}: theta*sqrt(h) = 1 exactly; one martingale-measure branch \
                     carries probability 0"
                ));
            }
            for f in model.s1_factors(regime) {
                if !(f > 0.0) {
                    violations.push(Violation::NonpositivePriceFactor {
                        regime,
                        asset: "s1",
                        value: f,
                    });
                }
            }
            if p.sigma2 > 0.0 && model.rho.abs() <= 1.0 {
                for f in model.s2_factors(regime) {
                    if !(f > 0.0) {
                        violations.push(Violation::NonpositivePriceFactor {
                            regime,
                            asset: "s2",
                            value: f,
                        });
                    }
                }
            }
        }
    }

    if violations.is_empty() {
        Ok(ValidatedModel { model, warnings })
    } else {
        Err(ValidationError { violations })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("market price of risk undefined: sigma1 must be > 0")]
pub struct ZeroVolatility;

/// Market price of risk θ = μ¹/σ¹.
pub fn market_price_of_risk(mu1: f64, sigma1: f64) -> Result<f64, ZeroVolatility> {
    if sigma1 > 0.0 {
        Ok(mu1 / sigma1)
    } else {
        Err(ZeroVolatility)
    }
}

/// n-step transition matrix Pⁿ; P⁰ is the identity.
pub fn transition_power(transition: &[[f64; 2]; 2], n: usize) -> [[f64; 2]; 2] {
    let mut out = [[1.0, 0.0], [0.0, 1.0]];
    for _ in 0..n {
        let mut next = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                next[a][b] = out[a][0] * transition[0][b] + out[a][1] * transition[1][b];
            }
        }
        out = next;
    }
    out
}

#[cfg(test)]
pub(crate) fn section4_model(n_steps: usize) -> MarketModel {
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn section4_parameters_validate() {
        let m = validate_model(section4_model(365)).expect("reference parameters are valid");
        assert!(m.warnings().is_empty());
        assert!((m.h() - 1.0 / 365.0).abs() < 1e-18);
    }

    #[test]
    fn oversized_theta_is_rejected() {
        let mut m = section4_model(1);
        m.regimes[0].mu1 = 2.0;
        m.regimes[0].sigma1 = 0.1; // theta*sqrt(h) = 20
        let err = validate_model(m).unwrap_err();
        assert!(err
            .violations
            .iter()
            .any(|v| matches!(v, Violation::ThetaOutOfRange { .. })));
    }

    #[test]
    fn zero_gamma_is_rejected_in_either_regime() {
        for idx in 0..2 {
            let mut m = section4_model(365);
            m.regimes[idx].gamma = 0.0;
            let err = validate_model(m).unwrap_err();
            assert!(err
                .violations
                .iter()
                .any(|v| matches!(v, Violation::NonpositiveGamma { .. })));
        }
    }

    #[test]
    fn all_violations_are_reported_together() {
        let mut m = section4_model(365);
        m.regimes[0].gamma = -1.0;
        m.regimes[1].gamma = 0.0;
        m.transition = [[0.5, 0.4], [0.6, 0.4]];
        let err = validate_model(m).unwrap_err();
        assert!(err.violations.len() >= 3);
    }

    #[test]
    fn negative_price_factor_is_rejected() {
        let mut m = section4_model(1); // h = 1
        m.regimes[1].mu1 = 0.1;
        m.regimes[1].sigma1 = 1.2; // 1 + 0.1 - 1.2 < 0
        let err = validate_model(m).unwrap_err();
        assert!(err.violations.iter().any(|v| matches!(
            v,
            Violation::NonpositivePriceFactor { asset: "s1", .. }
        )));
    }

    #[test]
    fn theta_sqrt_h_of_one_warns_but_validates() {
        let mut m = section4_model(1); // h = 1
        m.regimes[0].mu1 = 0.2; // theta = 1
        m.regimes[1].mu1 = 0.2;
        // keep s1 down factor positive: 1 + 0.2 - 0.2 = 1
        let v = validate_model(m).expect("degenerate but well defined");
        assert_eq!(v.warnings().len(), 2);
    }

    #[test]
    fn mpr_examples() {
        assert!((market_price_of_risk(0.1, 0.2).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(market_price_of_risk(0.0, 0.7).unwrap(), 0.0);
        assert!((market_price_of_risk(0.3, 0.6).unwrap() - 0.5).abs() < 1e-15);
        assert!(market_price_of_risk(0.1, 0.0).is_err());
    }

    #[test]
    fn transition_power_identity_and_rank_one() {
        let p = [[0.6, 0.4], [0.6, 0.4]];
        let p0 = transition_power(&p, 0);
        assert_eq!(p0, [[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(transition_power(&p, 1), p);
        let p2 = transition_power(&p, 2);
        for a in 0..2 {
            for b in 0..2 {
                assert!((p2[a][b] - p[a][b]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn transition_power_rows_stay_stochastic() {
        let p = [[0.93, 0.07], [0.28, 0.72]];
        for n in 0..=40 {
            let pn = transition_power(&p, n);
            for row in pn {
                assert!((row[0] + row[1] - 1.0).abs() <= 1e-12);
                assert!(row.iter().all(|&x| (0.0..=1.0 + 1e-15).contains(&x)));
            }
        }
    }
}
