//! Structured-text configuration files. Unknown keys are errors; every label
//! is parsed fail-closed.
//!
//! Layout:
//!
//! ```toml
//! [model]
//! n_steps = 8
//! horizon = 1.0
//! s1_0 = 10.0
//! s2_0 = 10.0
//! rho = 0.2
//! transition = [[0.6, 0.4], [0.6, 0.4]]
//! initial_regime = "bull"        # or "bear" or [0.5, 0.5]
//! # s2_form = "standard"         # or "as_printed"
//!
//! [model.regime0]
//! mu1 = 0.1
//! sigma1 = 0.2
//! mu2 = 0.1
//! sigma2 = 0.5
//! gamma = 0.6
//!
//! [model.regime1]
//! # same keys as regime0
//!
//! [payoff]
//! kind = "call"                  # call | put | forward
//! underlying = "non_traded"      # traded | non_traded
//! strike = 10.0
//! quantity = 1.0
//!
//! [experiment]                   # only needed by the experiment subcommand
//! scenario = "risk_aversion_bump"
//! sweep = [0.1, 0.2, 0.3]
//! steps = 8
//! engine = "exact_tree"          # exact_tree | grid | constant_gamma_recursion
//! start_states = ["bull", "bear"]
//! ```

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use pricing_core::model::{
    validate_model, InitialRegime, MarketModel, Regime, RegimeParams, S2Form, ValidatedModel,
    ValidationError,
};
use pricing_core::payoff::{OptionKind, PayoffSpec, Underlying};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unknown {field} value {value:?}")]
    BadLabel { field: &'static str, value: String },
    #[error("config is missing the [{0}] section required by this command")]
    MissingSection(&'static str),
    #[error(transparent)]
    InvalidModel(#[from] ValidationError),
    #[error("invalid payoff: {0}")]
    InvalidPayoff(#[from] pricing_core::payoff::PayoffError),
    #[error("invalid experiment: {0}")]
    InvalidExperiment(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub model: ModelSection,
    pub payoff: Option<PayoffSection>,
    pub experiment: Option<ExperimentSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub n_steps: usize,
    pub horizon: f64,
    pub s1_0: f64,
    pub s2_0: f64,
    pub rho: f64,
    pub transition: [[f64; 2]; 2],
    pub initial_regime: InitialRegimeValue,
    pub s2_form: Option<String>,
    pub regime0: RegimeSection,
    pub regime1: RegimeSection,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum InitialRegimeValue {
    Label(String),
    Distribution([f64; 2]),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeSection {
    pub mu1: f64,
    pub sigma1: f64,
    pub mu2: f64,
    pub sigma2: f64,
    pub gamma: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayoffSection {
    pub kind: String,
    pub underlying: String,
    pub strike: f64,
    pub quantity: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub scenario: String,
    pub sweep: Vec<f64>,
    pub steps: Option<usize>,
    pub engine: Option<String>,
    pub start_states: Option<Vec<String>>,
}

pub fn parse_regime_label(label: &str) -> Result<Regime, ConfigError> {
    match label {
        "bull" => Ok(Regime::Bull),
        "bear" => Ok(Regime::Bear),
        other => Err(ConfigError::BadLabel {
            field: "regime",
            value: other.to_string(),
        }),
    }
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<ConfigFile, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(toml::from_str(&text)?)
    }

    /// Raw market model from the [model] section (not yet validated).
    pub fn market_model(&self) -> Result<MarketModel, ConfigError> {
        let m = &self.model;
        let to_params = |r: &RegimeSection| RegimeParams {
            mu1: r.mu1,
            sigma1: r.sigma1,
            mu2: r.mu2,
            sigma2: r.sigma2,
            gamma: r.gamma,
        };
        let initial_regime = match &m.initial_regime {
            InitialRegimeValue::Label(l) => InitialRegime::Fixed(parse_regime_label(l)?),
            InitialRegimeValue::Distribution(w) => InitialRegime::Mixed(*w),
        };
        let s2_form = match m.s2_form.as_deref() {
            None | Some("standard") => S2Form::Standard,
            Some("as_printed") => S2Form::AsPrinted,
            Some(other) => {
                return Err(ConfigError::BadLabel {
                    field: "s2_form",
                    value: other.to_string(),
                })
            }
        };
        Ok(MarketModel {
            n_steps: m.n_steps,
            horizon: m.horizon,
            s1_0: m.s1_0,
            s2_0: m.s2_0,
            rho: m.rho,
            regimes: [to_params(&m.regime0), to_params(&m.regime1)],
            transition: m.transition,
            initial_regime,
            s2_form,
        })
    }

    /// Validated model, with n_steps optionally overridden from the CLI.
    pub fn validated_model(&self, steps: Option<usize>) -> Result<ValidatedModel, ConfigError> {
        let mut model = self.market_model()?;
        if let Some(n) = steps {
            model.n_steps = n;
        }
        Ok(validate_model(model)?)
    }

    pub fn payoff(&self) -> Result<PayoffSpec, ConfigError> {
        let section = self
            .payoff
            .as_ref()
            .ok_or(ConfigError::MissingSection("payoff"))?;
        let kind = match section.kind.as_str() {
            "call" => OptionKind::Call,
            "put" => OptionKind::Put,
            "forward" => OptionKind::Forward,
            other => {
                return Err(ConfigError::BadLabel {
                    field: "payoff.kind",
                    value: other.to_string(),
                })
            }
        };
        let underlying = match section.underlying.as_str() {
            "traded" => Underlying::Traded,
            "non_traded" => Underlying::NonTraded,
            other => {
                return Err(ConfigError::BadLabel {
                    field: "payoff.underlying",
                    value: other.to_string(),
                })
            }
        };
        let payoff = PayoffSpec {
            kind,
            underlying,
            strike: section.strike,
            quantity: section.quantity,
        };
        payoff.validate()?;
        Ok(payoff)
    }
}
