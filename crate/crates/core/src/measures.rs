//! One-step branch laws under the physical measure P and the martingale
//! measure Q, plus the conditional-expectation operators the solvers use.
//!
//! Under P each walk increment is ±1 with probability 1/2 and the regime
//! moves by its transition row, independently. Q reweights only the Δb¹
//! outcomes, to (1 ∓ θ√h)/2, leaving Δb² and the regime chain untouched —
//! which makes the traded asset a martingale and keeps the Δb¹-conditional
//! law of everything else identical under both measures.

use crate::model::{Regime, ValidatedModel};
use crate::scenario::Branch;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    P,
    Q,
}

/// Joint law of the 8 one-period branches from a node in `regime`.
#[derive(Debug, Clone)]
pub struct OneStepLaw {
    pub regime: Regime,
    pub theta_sqrt_h: f64,
    prob_p: [f64; 8],
    prob_q: [f64; 8],
}

impl OneStepLaw {
    pub fn new(regime: Regime, model: &ValidatedModel) -> OneStepLaw {
        let tsh = model.theta_sqrt_h(regime);
        let row = &model.transition[regime.index()];
        let mut prob_p = [0.0; 8];
        let mut prob_q = [0.0; 8];
        for b in Branch::ALL {
            let i = b.index();
            let pj = row[b.next_regime.index()];
            prob_p[i] = 0.25 * pj;
            prob_q[i] = 0.5 * (1.0 - b.db1 as f64 * tsh) * 0.5 * pj;
        }
        OneStepLaw {
            regime,
            theta_sqrt_h: tsh,
            prob_p,
            prob_q,
        }
    }

    #[inline]
    pub fn prob(&self, measure: Measure, branch: usize) -> f64 {
        match measure {
            Measure::P => self.prob_p[branch],
            Measure::Q => self.prob_q[branch],
        }
    }

    pub fn probs(&self, measure: Measure) -> &[f64; 8] {
        match measure {
            Measure::P => &self.prob_p,
            Measure::Q => &self.prob_q,
        }
    }

    /// Marginal weights of Δb¹ = (+1, −1) under Q: ((1−θ√h)/2, (1+θ√h)/2).
    #[inline]
    pub fn q_db1_weights(&self) -> [f64; 2] {
        [
            0.5 * (1.0 - self.theta_sqrt_h),
            0.5 * (1.0 + self.theta_sqrt_h),
        ]
    }

    /// Probability-weighted sum of per-branch values.
    pub fn expect(&self, measure: Measure, values: &[f64; 8]) -> f64 {
        self.probs(measure)
            .iter()
            .zip(values)
            .map(|(&p, &v)| p * v)
            .sum()
    }

    /// Conditional expectations given Δb¹, returned as (given +1, given −1).
    pub fn expect_given_s1(&self, measure: Measure, values: &[f64; 8]) -> [f64; 2] {
        let split = self.conditional_split();
        let sub = split.sub(measure);
        let mut out = [0.0; 2];
        for d in 0..2 {
            out[d] = (0..4).map(|s| sub[d][s] * values[4 * d + s]).sum();
        }
        out
    }

    /// The Δb¹-conditional sub-laws under both measures.
    pub fn conditional_split(&self) -> ConditionalSplit {
        let normalize = |probs: &[f64; 8]| -> [[f64; 4]; 2] {
            let mut out = [[0.0; 4]; 2];
            for d in 0..2 {
                let total: f64 = probs[4 * d..4 * d + 4].iter().sum();
                for s in 0..4 {
                    out[d][s] = probs[4 * d + s] / total;
                }
            }
            out
        };
        let sub_p = normalize(&self.prob_p);
        let mut sub_q = normalize(&self.prob_q);
        // θ√h = 1 gives a null Δb¹ = +1 event under Q; its conditional law is
        // undefined and never enters a price (its weight is 0), so pin it to
        // the P sub-law to keep downstream arithmetic finite.
        for d in 0..2 {
            if sub_q[d].iter().any(|p| p.is_nan()) {
                sub_q[d] = sub_p[d];
            }
        }
        ConditionalSplit { sub_p, sub_q }
    }
}

/// Normalized laws over (Δb², next regime), one per Δb¹ outcome
/// (index 0: Δb¹ = +1, index 1: Δb¹ = −1).
#[derive(Debug, Clone, Copy)]
pub struct ConditionalSplit {
    pub sub_p: [[f64; 4]; 2],
    pub sub_q: [[f64; 4]; 2],
}

impl ConditionalSplit {
    pub fn sub(&self, measure: Measure) -> &[[f64; 4]; 2] {
        match measure {
            Measure::P => &self.sub_p,
            Measure::Q => &self.sub_q,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{section4_model, validate_model};
    use crate::scenario::{build_tree, step_s1, step_s2, Lattice};

    #[test]
    fn probabilities_sum_to_one() {
        let m = validate_model(section4_model(365)).unwrap();
        for regime in Regime::ALL {
            let law = OneStepLaw::new(regime, &m);
            let sp: f64 = law.probs(Measure::P).iter().sum();
            let sq: f64 = law.probs(Measure::Q).iter().sum();
            assert!((sp - 1.0).abs() < 1e-15);
            assert!((sq - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_theta_makes_q_equal_p() {
        let mut raw = section4_model(365);
        raw.regimes[0].mu1 = 0.0;
        raw.regimes[1].mu1 = 0.0;
        let m = validate_model(raw).unwrap();
        let law = OneStepLaw::new(Regime::Bull, &m);
        for b in 0..8 {
            assert_eq!(law.prob(Measure::P, b), law.prob(Measure::Q, b));
        }
    }

    #[test]
    fn q_up_marginal_matches_reference_value() {
        // (1 − 0.5·√(1/365))/2, frozen from the mpmath oracle.
        let m = validate_model(section4_model(365)).unwrap();
        let law = OneStepLaw::new(Regime::Bull, &m);
        assert!((law.q_db1_weights()[0] - 0.4869144019352447).abs() < 1e-15);
    }

    #[test]
    fn single_branch_p_probability_from_transition_row() {
        // 0.25 · P[0][1] = 0.25 · 0.4 = 0.1
        let m = validate_model(section4_model(365)).unwrap();
        let law = OneStepLaw::new(Regime::Bull, &m);
        let b = Branch {
            db1: 1,
            db2: -1,
            next_regime: Regime::Bear,
        };
        assert!((law.prob(Measure::P, b.index()) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn expectation_of_constant_is_constant() {
        let m = validate_model(section4_model(365)).unwrap();
        let law = OneStepLaw::new(Regime::Bear, &m);
        let c = 3.25;
        assert!((law.expect(Measure::P, &[c; 8]) - c).abs() < 1e-14);
        assert!((law.expect(Measure::Q, &[c; 8]) - c).abs() < 1e-14);
    }

    fn child_prices(m: &ValidatedModel, regime: Regime, s1: f64, s2: f64) -> ([f64; 8], [f64; 8]) {
        let mut c1 = [0.0; 8];
        let mut c2 = [0.0; 8];
        for b in Branch::ALL {
            c1[b.index()] = step_s1(m, regime, s1, b.db1);
            c2[b.index()] = step_s2(m, regime, s2, b.db1, b.db2);
        }
        (c1, c2)
    }

    #[test]
    fn s1_is_a_martingale_under_q_and_drifts_under_p() {
        let m = validate_model(section4_model(365)).unwrap();
        for regime in Regime::ALL {
            let law = OneStepLaw::new(regime, &m);
            let (c1, _) = child_prices(&m, regime, 10.0, 10.0);
            let eq = law.expect(Measure::Q, &c1);
            assert!((eq - 10.0).abs() <= 1e-12 * 10.0);
            let ep = law.expect(Measure::P, &c1);
            let drifted = 10.0 * (1.0 + m.params(regime).mu1 * m.h());
            assert!((ep - drifted).abs() <= 1e-12 * drifted);
        }
    }

    #[test]
    fn q_martingale_holds_at_every_tree_node() {
        let mut raw = section4_model(4);
        raw.regimes[1].mu1 = 0.05;
        raw.regimes[1].sigma1 = 0.35;
        let m = validate_model(raw).unwrap();
        let tree = build_tree(&m, 4).unwrap();
        let laws = [
            OneStepLaw::new(Regime::Bull, &m),
            OneStepLaw::new(Regime::Bear, &m),
        ];
        for slice in 0..4 {
            for k in 0..tree.slice_len(slice) {
                let st = tree.state(slice, k);
                let mut c1 = [0.0; 8];
                for b in Branch::ALL {
                    c1[b.index()] = tree
                        .state(slice + 1, tree.successor(slice, k, b.index()))
                        .s1;
                }
                let eq = laws[st.regime.index()].expect(Measure::Q, &c1);
                assert!((eq - st.s1).abs() <= 1e-12 * st.s1);
            }
        }
    }

    #[test]
    fn radon_nikodym_factor_depends_only_on_db1() {
        let m = validate_model(section4_model(365)).unwrap();
        for regime in Regime::ALL {
            let law = OneStepLaw::new(regime, &m);
            let tsh = law.theta_sqrt_h;
            for b in Branch::ALL {
                let p = law.prob(Measure::P, b.index());
                let q = law.prob(Measure::Q, b.index());
                if p > 0.0 {
                    let expected = 1.0 - b.db1 as f64 * tsh;
                    assert!((q / p - expected).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn conditional_sub_laws_are_identical_under_p_and_q() {
        let mut raw = section4_model(7);
        raw.transition = [[0.85, 0.15], [0.4, 0.6]];
        let m = validate_model(raw).unwrap();
        for regime in Regime::ALL {
            let split = OneStepLaw::new(regime, &m).conditional_split();
            for d in 0..2 {
                let sum_p: f64 = split.sub_p[d].iter().sum();
                let sum_q: f64 = split.sub_q[d].iter().sum();
                assert!((sum_p - 1.0).abs() < 1e-15);
                assert!((sum_q - 1.0).abs() < 1e-15);
                for s in 0..4 {
                    assert!((split.sub_p[d][s] - split.sub_q[d][s]).abs() <= 1e-15);
                }
            }
        }
    }

    #[test]
    fn recombining_split_recovers_the_full_law() {
        let m = validate_model(section4_model(12)).unwrap();
        let law = OneStepLaw::new(Regime::Bull, &m);
        let split = law.conditional_split();
        let q_db1 = law.q_db1_weights();
        for b in Branch::ALL {
            let d = (b.db1 < 0) as usize;
            let s = b.index() % 4;
            let rebuilt_q = q_db1[d] * split.sub_q[d][s];
            assert!((rebuilt_q - law.prob(Measure::Q, b.index())).abs() < 1e-15);
            let rebuilt_p = 0.5 * split.sub_p[d][s];
            assert!((rebuilt_p - law.prob(Measure::P, b.index())).abs() < 1e-15);
        }
    }

    #[test]
    fn values_depending_only_on_db1_pass_through_the_split() {
        let m = validate_model(section4_model(365)).unwrap();
        let law = OneStepLaw::new(Regime::Bull, &m);
        let mut values = [0.0; 8];
        for b in Branch::ALL {
            values[b.index()] = if b.db1 > 0 { 1.75 } else { -0.5 };
        }
        for measure in [Measure::P, Measure::Q] {
            let [up, down] = law.expect_given_s1(measure, &values);
            assert!((up - 1.75).abs() < 1e-15);
            assert!((down + 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn conditional_s2_expectation_matches_enumeration() {
        let m = validate_model(section4_model(365)).unwrap();
        let law = OneStepLaw::new(Regime::Bull, &m);
        let (_, c2) = child_prices(&m, Regime::Bull, 10.0, 10.0);
        let [up, _] = law.expect_given_s1(Measure::P, &c2);
        // exhaustive enumeration of the db1 = +1 half
        let mut num = 0.0;
        let mut den = 0.0;
        for b in Branch::ALL.iter().filter(|b| b.db1 > 0) {
            let p = law.prob(Measure::P, b.index());
            num += p * c2[b.index()];
            den += p;
        }
        assert!((up - num / den).abs() < 1e-14);
    }

    #[test]
    fn degenerate_theta_split_stays_finite() {
        let mut raw = section4_model(1);
        raw.regimes[0].mu1 = 0.2; // theta*sqrt(h) = 1
        raw.regimes[1].mu1 = 0.2;
        let m = validate_model(raw).unwrap();
        let law = OneStepLaw::new(Regime::Bull, &m);
        assert_eq!(law.q_db1_weights()[0], 0.0);
        let split = law.conditional_split();
        assert!(split.sub_q[0].iter().all(|p| p.is_finite()));
    }
}
