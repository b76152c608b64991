//! Belief representations and their closed-form dynamics.
//!
//! Two posteriors drive everything downstream:
//!
//! - the scalar belief `b = Pr{X = 1 | history}` for the distortion
//!   objective, which collapses to a function of the buffered sample and its
//!   age: `b = 0.5 (1 ± (2p-1)^θ)`, and
//! - the vector belief `b_i = Pr{δ = i | history}` over the age of incorrect
//!   information, truncated at the same bound `N` as the AoI. Overflow mass
//!   folds into the top bin rather than being renormalized away, so the
//!   expected cost stays conservative.
//!
//! The vector filter conditions only on the action taken and the next value
//! of the buffer-vs-estimate indicator `ρ`; the sampled value itself is never
//! folded into the age posterior. One consequence worth knowing: after a
//! failed transmission of a fresh sample the update shifts the whole vector,
//! treating the feedback as a pure channel observation.
//!
//! Drift correction is deliberately lazy. The updates conserve mass exactly in
//! real arithmetic, so renormalization only kicks in when the sum strays more
//! than 1e-9 from one, and every such event is counted — a rising counter
//! points at a filter bug, not at floating-point noise.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Action;

const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum BeliefError {
    #[error("AoI must be at least 1, got {0}")]
    AoiTooSmall(u32),
    #[error("AoI {aoi} exceeds the truncation bound {bound}")]
    AoiBeyondBound { aoi: u32, bound: usize },
    #[error("self-transition probability {0} outside the supported range (0.5, 1]")]
    PersistenceOutOfRange(f64),
    #[error("belief value {0} outside [0, 1]")]
    ValueOutOfRange(f64),
    #[error("weights must be nonnegative and sum to 1 within 1e-9 (sum {0})")]
    NotNormalized(f64),
    #[error("binary state index {0} must be 0 or 1")]
    NotBinary(usize),
    #[error("observation ρ'={rho_next} has probability zero under action {action} and the current belief")]
    InconsistentObservation { action: Action, rho_next: u8 },
    #[error("distortion table must be square, nonempty, and finite")]
    BadDistortionTable,
    #[error("distortion weights must be positive and finite, got c1={c1}, c2={c2}")]
    BadDistortionWeights { c1: f64, c2: f64 },
}

/// Posterior probability that a binary source is in state 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarBelief(f64);

impl ScalarBelief {
    pub fn new(b: f64) -> Result<Self, BeliefError> {
        if !(0.0..=1.0).contains(&b) || !b.is_finite() {
            return Err(BeliefError::ValueOutOfRange(b));
        }
        Ok(ScalarBelief(b))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Bounded per-pair distortion penalty `f(x, x̂)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionFn {
    table: Vec<Vec<f64>>,
}

impl DistortionFn {
    /// Indicator distortion: 1 exactly when source and estimate disagree.
    pub fn real_time_error(states: usize) -> Self {
        DistortionFn {
            table: (0..states)
                .map(|x| {
                    (0..states)
                        .map(|xh| if x == xh { 0.0 } else { 1.0 })
                        .collect()
                })
                .collect(),
        }
    }

    /// Squared error over integer-labeled states.
    pub fn squared_error(states: usize) -> Self {
        DistortionFn {
            table: (0..states)
                .map(|x| {
                    (0..states)
                        .map(|xh| {
                            let d = x as f64 - xh as f64;
                            d * d
                        })
                        .collect()
                })
                .collect(),
        }
    }

    /// Binary distortion with asymmetric penalties: `c1` for a false alarm
    /// (source 0 estimated as 1), `c2` for a miss (source 1 estimated as 0).
    pub fn weighted_binary(c1: f64, c2: f64) -> Result<Self, BeliefError> {
        if !(c1.is_finite() && c2.is_finite() && c1 > 0.0 && c2 > 0.0) {
            return Err(BeliefError::BadDistortionWeights { c1, c2 });
        }
        Ok(DistortionFn {
            table: vec![vec![0.0, c1], vec![c2, 0.0]],
        })
    }

    pub fn from_table(table: Vec<Vec<f64>>) -> Result<Self, BeliefError> {
        let n = table.len();
        if n == 0 || table.iter().any(|r| r.len() != n) {
            return Err(BeliefError::BadDistortionTable);
        }
        if table.iter().flatten().any(|v| !v.is_finite()) {
            return Err(BeliefError::BadDistortionTable);
        }
        Ok(DistortionFn { table })
    }

    pub fn num_states(&self) -> usize {
        self.table.len()
    }

    pub fn value(&self, x: usize, x_hat: usize) -> f64 {
        self.table[x][x_hat]
    }

    pub fn canonical_string(&self) -> String {
        let rows: Vec<String> = self
            .table
            .iter()
            .map(|r| {
                r.iter()
                    .map(|v| format!("{v:?}"))
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect();
        format!("f[{}]", rows.join(";"))
    }
}

/// `g(n) = Pr{source agrees with a sample it emitted n slots ago}` for the
/// binary symmetric chain; `g(0) = 1` by convention.
pub fn agreement_probability(n: u32, p: f64) -> f64 {
    debug_assert!(p > 0.5 && p <= 1.0, "persistence {p} out of range");
    if n == 0 {
        1.0
    } else {
        0.5 * (1.0 + (2.0 * p - 1.0).powi(n as i32))
    }
}

/// Scalar belief as a function of the buffered sample and its age:
/// `0.5 (1 + (2p-1)^θ)` when the buffer holds 1, the mirror image otherwise.
pub fn belief_from_aoi(x_tilde: usize, theta: u32, p: f64) -> Result<ScalarBelief, BeliefError> {
    if theta < 1 {
        return Err(BeliefError::AoiTooSmall(theta));
    }
    if !(p > 0.5 && p <= 1.0) {
        return Err(BeliefError::PersistenceOutOfRange(p));
    }
    if x_tilde > 1 {
        return Err(BeliefError::NotBinary(x_tilde));
    }
    let drift = (2.0 * p - 1.0).powi(theta as i32);
    let b = if x_tilde == 1 {
        0.5 * (1.0 + drift)
    } else {
        0.5 * (1.0 - drift)
    };
    ScalarBelief::new(b)
}

/// One-slot scalar belief update. Idle and retransmit predict through the
/// chain; sampling pins the belief to the fresh buffer value (`x_tilde_next`
/// is the buffer content after the slot, which idle/retransmit leave alone).
pub fn belief_update_distortion(
    b: ScalarBelief,
    action: Action,
    x_tilde_next: usize,
    p: f64,
) -> ScalarBelief {
    let b = b.value();
    let updated = match action {
        Action::Idle | Action::Retransmit => b * p + (1.0 - b) * (1.0 - p),
        Action::Sample => {
            if x_tilde_next == 1 {
                p
            } else {
                1.0 - p
            }
        }
    };
    ScalarBelief(updated.clamp(0.0, 1.0))
}

/// Expected distortion of estimate `x_hat` under a binary scalar belief.
pub fn expected_distortion(b: ScalarBelief, x_hat: usize, f: &DistortionFn) -> f64 {
    let b = b.value();
    b * f.value(1, x_hat) + (1.0 - b) * f.value(0, x_hat)
}

/// Truncated posterior over the age of incorrect information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AoiiBelief {
    weights: Vec<f64>,
    renormalizations: u32,
}

impl AoiiBelief {
    /// All mass on age 0 (source known to agree with the estimate).
    pub fn certain_zero(bound: usize) -> Self {
        let mut weights = vec![0.0; bound + 1];
        weights[0] = 1.0;
        AoiiBelief {
            weights,
            renormalizations: 0,
        }
    }

    /// The belief one slot after a delivered fresh sample: `(p, 1-p, 0, …)`.
    pub fn after_reset(p: f64, bound: usize) -> Self {
        let mut weights = vec![0.0; bound + 1];
        weights[0] = p;
        if bound >= 1 {
            weights[1] = 1.0 - p;
        }
        AoiiBelief {
            weights,
            renormalizations: 0,
        }
    }

    pub fn from_weights(weights: Vec<f64>) -> Result<Self, BeliefError> {
        if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(BeliefError::NotNormalized(weights.iter().sum()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(BeliefError::NotNormalized(sum));
        }
        Ok(AoiiBelief {
            weights,
            renormalizations: 0,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bound(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn get(&self, i: usize) -> f64 {
        self.weights.get(i).copied().unwrap_or(0.0)
    }

    /// How often drift correction had to fire on this value's history.
    pub fn renormalizations(&self) -> u32 {
        self.renormalizations
    }

    pub fn max_abs_diff(&self, other: &AoiiBelief) -> f64 {
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn finish(mut self) -> Self {
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL && sum > 0.0 {
            for w in self.weights.iter_mut() {
                *w /= sum;
            }
            self.renormalizations += 1;
        }
        self
    }
}

/// One-slot update of the truncated AoII belief given the action taken and
/// the observed next value of the buffer-vs-estimate indicator.
///
/// Cases:
/// - idle, or retransmit answered with `ρ' = 1`: the estimate is unchanged,
///   so age 0 mixes through the chain and positive ages shift up with
///   probability `p`;
/// - retransmit answered with `ρ' = 0`: the estimate flipped to the buffer
///   value, mirroring the roles of `p` and `1-p` (callers must hold `ρ = 1`
///   — a delivered duplicate re-send carries no flip and follows the idle
///   case instead);
/// - sample answered with `ρ' = 1`: failed fresh transmission, the vector
///   shifts up with probability `p` and age 0 receives `1-p`;
/// - sample answered with `ρ' = 0`: reset to `(p, 1-p, 0, …)`.
///
/// Mass shifted past the bound accumulates in the top bin.
pub fn aoii_belief_update(
    bel: &AoiiBelief,
    action: Action,
    rho_next: u8,
    p: f64,
) -> Result<AoiiBelief, BeliefError> {
    if !(p > 0.5 && p <= 1.0) {
        return Err(BeliefError::PersistenceOutOfRange(p));
    }
    if rho_next > 1 {
        return Err(BeliefError::InconsistentObservation { action, rho_next });
    }
    let n = bel.bound();
    let pb = 1.0 - p;
    let b = &bel.weights;
    let mut out = vec![0.0; n + 1];
    // Shifts past the bound fold into the top bin.
    match (action, rho_next) {
        (Action::Idle, _) | (Action::Retransmit, 1) => {
            out[0] += b[0] * p + (1.0 - b[0]) * pb;
            out[1.min(n)] += pb * b[0];
            for i in 1..=n {
                out[(i + 1).min(n)] += p * b[i];
            }
        }
        (Action::Retransmit, 0) => {
            out[0] += b[0] * pb + (1.0 - b[0]) * p;
            out[1.min(n)] += p * b[0];
            for i in 1..=n {
                out[(i + 1).min(n)] += pb * b[i];
            }
        }
        (Action::Sample, 1) => {
            // A fresh sample that certainly matched the estimate is never
            // transmitted, so ρ' = 1 cannot be observed.
            if b[0] >= 1.0 - 1e-12 {
                return Err(BeliefError::InconsistentObservation { action, rho_next });
            }
            out[0] += pb;
            for i in 0..=n {
                out[(i + 1).min(n)] += p * b[i];
            }
        }
        (Action::Sample, 0) => {
            out[0] += p;
            out[1.min(n)] += pb;
        }
        (_, rho) => {
            return Err(BeliefError::InconsistentObservation {
                action,
                rho_next: rho,
            })
        }
    }
    Ok(AoiiBelief {
        weights: out,
        renormalizations: bel.renormalizations,
    }
    .finish())
}

/// Closed-form AoII belief under a perfect channel, as a function of the AoI:
/// `b_0 = g(θ)`, `b_i = g(θ-i) (1-p) p^{i-1}` for `1 ≤ i ≤ θ`, zero beyond.
pub fn aoii_belief_perfect(theta: u32, p: f64, bound: usize) -> Result<AoiiBelief, BeliefError> {
    if theta < 1 {
        return Err(BeliefError::AoiTooSmall(theta));
    }
    if theta as usize > bound {
        return Err(BeliefError::AoiBeyondBound { aoi: theta, bound });
    }
    if !(p > 0.5 && p <= 1.0) {
        return Err(BeliefError::PersistenceOutOfRange(p));
    }
    let pb = 1.0 - p;
    let mut weights = vec![0.0; bound + 1];
    weights[0] = agreement_probability(theta, p);
    for i in 1..=theta {
        weights[i as usize] = agreement_probability(theta - i, p) * pb * p.powi(i as i32 - 1);
    }
    Ok(AoiiBelief {
        weights,
        renormalizations: 0,
    })
}

/// Expected AoII of a truncated belief: `Σ i · b_i`.
pub fn expected_aoii(bel: &AoiiBelief) -> f64 {
    bel.weights
        .iter()
        .enumerate()
        .map(|(i, &w)| i as f64 * w)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn belief(v: &[f64]) -> AoiiBelief {
        AoiiBelief::from_weights(v.to_vec()).unwrap()
    }

    #[test]
    fn belief_from_aoi_basics() {
        assert!((belief_from_aoi(1, 1, 0.8).unwrap().value() - 0.8).abs() < 1e-12);
        // Matrix-power oracle gives 0.5 (1 - 0.4^3) = 0.468.
        assert!((belief_from_aoi(0, 3, 0.7).unwrap().value() - 0.468).abs() < 1e-12);
        assert!((belief_from_aoi(1, 200, 0.8).unwrap().value() - 0.5).abs() < 1e-12);
        assert!(matches!(
            belief_from_aoi(1, 0, 0.8),
            Err(BeliefError::AoiTooSmall(0))
        ));
        assert!(matches!(
            belief_from_aoi(1, 2, 0.4),
            Err(BeliefError::PersistenceOutOfRange(_))
        ));
    }

    #[test]
    fn distortion_update_cases() {
        let half = ScalarBelief::new(0.5).unwrap();
        let updated = belief_update_distortion(half, Action::Idle, 0, 0.8);
        assert!((updated.value() - 0.5).abs() < 1e-12);

        for b0 in [0.1, 0.5, 0.9] {
            let b = ScalarBelief::new(b0).unwrap();
            let fresh = belief_update_distortion(b, Action::Sample, 1, 0.8);
            assert!((fresh.value() - 0.8).abs() < 1e-12);
        }

        // 0.9·0.8 + 0.1·0.2 = 0.74, cross-checked against the exact filter
        // in the oracle tests.
        let b = ScalarBelief::new(0.9).unwrap();
        let updated = belief_update_distortion(b, Action::Retransmit, 1, 0.8);
        assert!((updated.value() - 0.74).abs() < 1e-12);
    }

    #[test]
    fn idle_iteration_contracts_toward_half() {
        for &p in &[0.6f64, 0.75, 0.9] {
            let rate = (2.0 * p - 1.0).abs();
            let mut b = ScalarBelief::new(0.97).unwrap();
            for _ in 0..25 {
                let next = belief_update_distortion(b, Action::Idle, 1, p);
                let before = (b.value() - 0.5).abs();
                let after = (next.value() - 0.5).abs();
                assert!((after - rate * before).abs() < 1e-12);
                b = next;
            }
        }
    }

    #[test]
    fn aoii_update_examples() {
        let from_zero = AoiiBelief::certain_zero(6);
        let idle = aoii_belief_update(&from_zero, Action::Idle, 0, 0.7).unwrap();
        assert!(idle.max_abs_diff(&belief(&[0.7, 0.3, 0.0, 0.0, 0.0, 0.0, 0.0])) < 1e-12);

        let any = belief(&[0.2, 0.3, 0.1, 0.4, 0.0, 0.0, 0.0]);
        let reset = aoii_belief_update(&any, Action::Sample, 0, 0.7).unwrap();
        assert!(reset.max_abs_diff(&belief(&[0.7, 0.3, 0.0, 0.0, 0.0, 0.0, 0.0])) < 1e-12);

        let b = belief(&[0.58, 0.21, 0.21, 0.0, 0.0, 0.0, 0.0]);
        let failed = aoii_belief_update(&b, Action::Sample, 1, 0.7).unwrap();
        let expect = belief(&[0.3, 0.406, 0.147, 0.147, 0.0, 0.0, 0.0]);
        assert!(failed.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn aoii_update_rejects_impossible_observation() {
        let sure = AoiiBelief::certain_zero(4);
        assert!(matches!(
            aoii_belief_update(&sure, Action::Sample, 1, 0.7),
            Err(BeliefError::InconsistentObservation { .. })
        ));
        let b = belief(&[0.5, 0.5, 0.0]);
        assert!(matches!(
            aoii_belief_update(&b, Action::Idle, 3, 0.7),
            Err(BeliefError::InconsistentObservation { .. })
        ));
    }

    #[test]
    fn aoii_updates_conserve_mass_with_top_bin_folding() {
        let mut bel = AoiiBelief::after_reset(0.6, 5);
        let script = [
            (Action::Idle, 0),
            (Action::Idle, 0),
            (Action::Retransmit, 1),
            (Action::Idle, 0),
            (Action::Sample, 1),
            (Action::Idle, 0),
            (Action::Retransmit, 0),
            (Action::Idle, 0),
            (Action::Idle, 0),
            (Action::Idle, 0),
            (Action::Idle, 0),
        ];
        for &(a, rho) in &script {
            bel = aoii_belief_update(&bel, a, rho, 0.6).unwrap();
            let sum: f64 = bel.weights().iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        assert_eq!(bel.renormalizations(), 0);
        // After enough idle slots mass has piled up in the top bin.
        assert!(bel.get(5) > 0.0);
    }

    #[test]
    fn perfect_channel_belief_examples() {
        let one = aoii_belief_perfect(1, 0.7, 6).unwrap();
        assert!(one.max_abs_diff(&belief(&[0.7, 0.3, 0.0, 0.0, 0.0, 0.0, 0.0])) < 1e-12);

        let two = aoii_belief_perfect(2, 0.7, 6).unwrap();
        assert!(two.max_abs_diff(&belief(&[0.58, 0.21, 0.21, 0.0, 0.0, 0.0, 0.0])) < 1e-12);

        for &p in &[0.6, 0.7, 0.8, 0.9] {
            for theta in 1..=30 {
                let bel = aoii_belief_perfect(theta, p, 30).unwrap();
                let sum: f64 = bel.weights().iter().sum();
                assert!((sum - 1.0).abs() < 1e-12, "p={p} theta={theta}");
            }
        }

        assert!(matches!(
            aoii_belief_perfect(31, 0.7, 30),
            Err(BeliefError::AoiBeyondBound { .. })
        ));
    }

    #[test]
    fn perfect_channel_belief_is_iterated_idle_from_certainty() {
        for &p in &[0.6, 0.7, 0.8, 0.9] {
            let mut bel = AoiiBelief::certain_zero(30);
            for theta in 1..=30u32 {
                bel = aoii_belief_update(&bel, Action::Idle, 0, p).unwrap();
                let closed = aoii_belief_perfect(theta, p, 30).unwrap();
                assert!(bel.max_abs_diff(&closed) < 1e-12, "p={p} theta={theta}");
            }
        }
    }

    #[test]
    fn expected_cost_examples() {
        let rte = DistortionFn::real_time_error(2);
        let b = ScalarBelief::new(0.8).unwrap();
        assert!((expected_distortion(b, 1, &rte) - 0.2).abs() < 1e-12);

        let weighted = DistortionFn::weighted_binary(2.0, 5.0).unwrap();
        let b = ScalarBelief::new(0.3).unwrap();
        assert!((expected_distortion(b, 1, &weighted) - 1.4).abs() < 1e-12);

        let b = ScalarBelief::new(0.0).unwrap();
        assert_eq!(expected_distortion(b, 0, &rte), 0.0);

        assert_eq!(expected_aoii(&AoiiBelief::certain_zero(8)), 0.0);
        let bel = belief(&[0.58, 0.21, 0.21]);
        assert!((expected_aoii(&bel) - 0.63).abs() < 1e-12);
        let mut top = vec![0.0; 9];
        top[8] = 1.0;
        assert_eq!(expected_aoii(&belief(&top)), 8.0);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn weights_strategy(len: usize) -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(0.0f64..1.0, len).prop_map(|raw| {
                let sum: f64 = raw.iter().sum();
                if sum == 0.0 {
                    let mut w = vec![0.0; raw.len()];
                    w[0] = 1.0;
                    w
                } else {
                    raw.into_iter().map(|v| v / sum).collect()
                }
            })
        }

        proptest! {
            #[test]
            fn expected_costs_are_affine_in_the_belief(
                wa in weights_strategy(9),
                wb in weights_strategy(9),
                lambda in 0.0f64..1.0,
                b1 in 0.0f64..1.0,
                b2 in 0.0f64..1.0,
            ) {
                let a = belief(&wa);
                let b = belief(&wb);
                let mixed: Vec<f64> = wa
                    .iter()
                    .zip(&wb)
                    .map(|(x, y)| lambda * x + (1.0 - lambda) * y)
                    .collect();
                let mix_cost = expected_aoii(&belief(&mixed));
                let split = lambda * expected_aoii(&a) + (1.0 - lambda) * expected_aoii(&b);
                prop_assert!((mix_cost - split).abs() < 1e-12);

                let f = DistortionFn::weighted_binary(2.0, 5.0).unwrap();
                let mix_b = ScalarBelief::new(lambda * b1 + (1.0 - lambda) * b2).unwrap();
                let lhs = expected_distortion(mix_b, 0, &f);
                let rhs = lambda * expected_distortion(ScalarBelief::new(b1).unwrap(), 0, &f)
                    + (1.0 - lambda) * expected_distortion(ScalarBelief::new(b2).unwrap(), 0, &f);
                prop_assert!((lhs - rhs).abs() < 1e-12);
            }

            #[test]
            fn updates_preserve_mass_for_arbitrary_beliefs(
                w in weights_strategy(12),
                p in 0.51f64..1.0,
                script in proptest::collection::vec(0u8..4, 1..30),
            ) {
                let mut bel = belief(&w);
                for &code in &script {
                    let (action, rho) = match code {
                        0 => (Action::Idle, 0),
                        1 => (Action::Retransmit, 1),
                        2 => (Action::Retransmit, 0),
                        _ => (Action::Sample, 0),
                    };
                    bel = aoii_belief_update(&bel, action, rho, p).unwrap();
                    let sum: f64 = bel.weights().iter().sum();
                    prop_assert!((sum - 1.0).abs() < 1e-9);
                    prop_assert!(bel.weights().iter().all(|&v| v >= 0.0));
                }
            }
        }
    }

    #[test]
    fn distortion_table_validation() {
        assert!(DistortionFn::from_table(vec![vec![0.0, 1.0]]).is_err());
        assert!(DistortionFn::from_table(vec![vec![0.0, f64::NAN], vec![1.0, 0.0]]).is_err());
        assert!(DistortionFn::weighted_binary(0.0, 1.0).is_err());
        let mse = DistortionFn::squared_error(4);
        assert_eq!(mse.value(3, 1), 4.0);
        assert_eq!(mse.value(2, 2), 0.0);
    }
}
