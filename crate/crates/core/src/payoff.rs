//! Contingent-claim descriptions. Claims pay λ·F(S¹_T, S²_T) at the horizon.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptionKind {
    Call,
    Put,
    Forward,
}

impl fmt::Display for OptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptionKind::Call => "call",
            OptionKind::Put => "put",
            OptionKind::Forward => "forward",
        })
    }
}

/// Which terminal price the payoff reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Underlying {
    /// The traded asset S¹.
    Traded,
    /// The non-traded asset S².
    NonTraded,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum PayoffError {
    #[error("strike = {0} must be >= 0")]
    NegativeStrike(f64),
    #[error("quantity = {0} must be >= 0")]
    NegativeQuantity(f64),
}

/// A claim: `quantity` (λ) shares of F(S¹_T, S²_T).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PayoffSpec {
    pub kind: OptionKind,
    pub underlying: Underlying,
    pub strike: f64,
    /// Number of shares written, λ ≥ 0.
    pub quantity: f64,
}

impl PayoffSpec {
    pub fn call_on_s2(strike: f64, quantity: f64) -> PayoffSpec {
        PayoffSpec {
            kind: OptionKind::Call,
            underlying: Underlying::NonTraded,
            strike,
            quantity,
        }
    }

    pub fn validate(&self) -> Result<(), PayoffError> {
        if !(self.strike >= 0.0) {
            return Err(PayoffError::NegativeStrike(self.strike));
        }
        if !(self.quantity >= 0.0) {
            return Err(PayoffError::NegativeQuantity(self.quantity));
        }
        Ok(())
    }

    /// Per-share payoff F evaluated at terminal prices.
    #[inline]
    pub fn f(&self, s1: f64, s2: f64) -> f64 {
        let u = match self.underlying {
            Underlying::Traded => s1,
            Underlying::NonTraded => s2,
        };
        match self.kind {
            OptionKind::Call => (u - self.strike).max(0.0),
            OptionKind::Put => (self.strike - u).max(0.0),
            OptionKind::Forward => u - self.strike,
        }
    }

    /// λ, the written quantity.
    #[inline]
    pub fn lambda(&self) -> f64 {
        self.quantity
    }

    /// The claim with the same terms and λ = 0.
    pub fn zero_quantity(&self) -> PayoffSpec {
        PayoffSpec {
            quantity: 0.0,
            ..*self
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payoff_shapes() {
        let call = PayoffSpec::call_on_s2(10.0, 1.0);
        assert_eq!(call.f(7.0, 12.5), 2.5);
        assert_eq!(call.f(12.5, 7.0), 0.0);

        let put = PayoffSpec {
            kind: OptionKind::Put,
            underlying: Underlying::Traded,
            strike: 10.0,
            quantity: 2.0,
        };
        assert_eq!(put.f(8.0, 99.0), 2.0);

        let fwd = PayoffSpec {
            kind: OptionKind::Forward,
            underlying: Underlying::NonTraded,
            strike: 10.0,
            quantity: 1.0,
        };
        assert_eq!(fwd.f(0.0, 4.0), -6.0);
    }

    #[test]
    fn negative_terms_are_rejected() {
        assert!(PayoffSpec::call_on_s2(-1.0, 1.0).validate().is_err());
        assert!(PayoffSpec::call_on_s2(10.0, -0.5).validate().is_err());
        assert!(PayoffSpec::call_on_s2(10.0, 0.0).validate().is_ok());
    }
}
