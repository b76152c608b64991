//! Independent ground-truth machinery used only by tests and verification
//! runs: an exact joint filter over (source state, AoII), a value-observing
//! forward filter for the scalar belief, and an exhaustive small-MDP solver.
//!
//! The joint filter is the Bayes filter of the same observation convention
//! the truncated vector updates implement: the post-sample feedback counts as
//! a pure channel observation (failure reported with likelihood `1-q`
//! regardless of the hidden age), and the sampled value itself is never
//! folded into the age posterior. Under that convention the closed-form
//! vector updates are exact, which is precisely what the filter is here to
//! certify. Ages truncate at the same bound with identical top-bin folding so
//! comparisons are exact rather than approximate.

use thiserror::Error;

use crate::mdp::{policy_gain_exact, FiniteMdp, GainError};
use crate::source::SourceModel;
use crate::Action;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("observation ρ'={rho_next} has probability zero under action {action}")]
    ZeroProbabilityObservation { action: Action, rho_next: u8 },
    #[error("instance too large for exhaustive search: {0}")]
    InstanceTooLarge(String),
    #[error("policy evaluation failed: {0}")]
    Evaluation(#[from] GainError),
}

/// Joint probability table over (binary source state, truncated AoII), plus
/// the currently observed buffer-vs-estimate indicator.
///
/// The estimate is implied: it equals the source state exactly when the age
/// is zero, and the buffer content is the estimate flipped by `rho`.
#[derive(Debug, Clone)]
pub struct JointFilterState {
    /// `probs[x][i] = Pr{X = x, δ = i}`; sums to 1.
    probs: [Vec<f64>; 2],
    rho: u8,
}

impl JointFilterState {
    /// Start from known agreement (age zero), source value uniform.
    pub fn init_agreement(bound: usize) -> Self {
        let mut a = vec![0.0; bound + 1];
        let mut b = vec![0.0; bound + 1];
        a[0] = 0.5;
        b[0] = 0.5;
        JointFilterState {
            probs: [a, b],
            rho: 0,
        }
    }

    pub fn bound(&self) -> usize {
        self.probs[0].len() - 1
    }

    pub fn rho(&self) -> u8 {
        self.rho
    }

    pub fn total_mass(&self) -> f64 {
        self.probs[0].iter().sum::<f64>() + self.probs[1].iter().sum::<f64>()
    }

    /// Marginal distribution of the AoII.
    pub fn aoii_marginal(&self) -> Vec<f64> {
        (0..=self.bound())
            .map(|i| self.probs[0][i] + self.probs[1][i])
            .collect()
    }

    /// Marginal probability that the source is in state 1.
    pub fn source_marginal_one(&self) -> f64 {
        self.probs[1].iter().sum()
    }

    /// Probability that the source differs from the buffered sample.
    pub fn mismatch_with_buffer(&self) -> f64 {
        // x̂ = x when δ = 0, 1-x otherwise; x̃ = x̂ flipped by ρ.
        let mut mismatch = 0.0;
        for x in 0..2usize {
            for i in 0..=self.bound() {
                let x_hat = if i == 0 { x } else { 1 - x };
                let x_tilde = if self.rho == 0 { x_hat } else { 1 - x_hat };
                if x != x_tilde {
                    mismatch += self.probs[x][i];
                }
            }
        }
        mismatch
    }

    /// Predictive probability of observing `ρ' = 0` under `action`, following
    /// the physical channel semantics (a fresh sample that matches the
    /// estimate is not transmitted).
    pub fn predictive_rho_zero(&self, action: Action, q: f64) -> f64 {
        match action {
            Action::Idle => {
                if self.rho == 0 {
                    1.0
                } else {
                    0.0
                }
            }
            Action::Retransmit => {
                if self.rho == 0 {
                    1.0
                } else {
                    q
                }
            }
            Action::Sample => {
                let b0: f64 = self.probs[0][0] + self.probs[1][0];
                b0 + (1.0 - b0) * q
            }
        }
    }
}

/// One exact predict-update step of the joint filter.
///
/// The hidden pair moves through the generative model of the tracked system:
/// source flips with probability `1-p`; the estimate changes only on a
/// delivery; the age resets to zero on agreement, resets to at most one when
/// a fresh sample is delivered, and otherwise grows by one. Conditioning on
/// an observation of probability zero is surfaced as an error, never masked.
pub fn exact_filter_step(
    jf: &JointFilterState,
    action: Action,
    rho_next: u8,
    p: f64,
    q: f64,
) -> Result<JointFilterState, OracleError> {
    let n = jf.bound();
    let pb = 1.0 - p;
    let qb = 1.0 - q;
    let mut out = [vec![0.0; n + 1], vec![0.0; n + 1]];
    let zero_prob = || OracleError::ZeroProbabilityObservation { action, rho_next };
    if rho_next > 1 {
        return Err(zero_prob());
    }

    // Weighted deposit of one hidden transition branch. `fresh_delivery`
    // marks a delivered fresh sample, which caps the next age at one.
    let deposit = |out: &mut [Vec<f64>; 2],
                   x: usize,
                   i: usize,
                   w: f64,
                   x_hat_next: usize,
                   fresh_delivery: bool| {
        if w == 0.0 {
            return;
        }
        for (x_next, px) in [(x, p), (1 - x, pb)] {
            let i_next = if x_next == x_hat_next {
                0
            } else if fresh_delivery {
                1
            } else {
                (i + 1).min(n)
            };
            out[x_next][i_next] += w * px;
        }
    };

    match action {
        Action::Idle => {
            if rho_next != jf.rho {
                return Err(zero_prob());
            }
            for x in 0..2usize {
                for i in 0..=n {
                    let x_hat = if i == 0 { x } else { 1 - x };
                    deposit(&mut out, x, i, jf.probs[x][i], x_hat, false);
                }
            }
        }
        Action::Retransmit => {
            // The buffer holds x̃ = x̂ flipped by ρ; on success the estimate
            // becomes x̃, on failure it stays. ρ' = 0 reports success when
            // ρ = 1; with ρ = 0 both outcomes leave ρ' = 0.
            for x in 0..2usize {
                for i in 0..=n {
                    let w = jf.probs[x][i];
                    if w == 0.0 {
                        continue;
                    }
                    let x_hat = if i == 0 { x } else { 1 - x };
                    let x_tilde = if jf.rho == 0 { x_hat } else { 1 - x_hat };
                    match (jf.rho, rho_next) {
                        (0, 0) => deposit(&mut out, x, i, w, x_hat, false),
                        (0, 1) => return Err(zero_prob()),
                        (1, 0) => deposit(&mut out, x, i, w * q, x_tilde, false),
                        (1, 1) => deposit(&mut out, x, i, w * qb, x_hat, false),
                        _ => unreachable!(),
                    }
                }
            }
        }
        Action::Sample => {
            // Feedback is treated as a pure channel observation: ρ' = 1 with
            // likelihood 1-q and ρ' = 0 with likelihood q for every hidden
            // state. Given ρ' = 0 the estimate becomes the sampled value;
            // given ρ' = 1 it becomes its complement.
            for x in 0..2usize {
                for i in 0..=n {
                    let w = jf.probs[x][i];
                    if w == 0.0 {
                        continue;
                    }
                    match rho_next {
                        0 => deposit(&mut out, x, i, w * q, x, true),
                        1 => deposit(&mut out, x, i, w * qb, 1 - x, false),
                        _ => unreachable!(),
                    }
                }
            }
        }
    }

    let mass: f64 = out[0].iter().sum::<f64>() + out[1].iter().sum::<f64>();
    if mass <= 0.0 {
        return Err(zero_prob());
    }
    for row in out.iter_mut() {
        for v in row.iter_mut() {
            *v /= mass;
        }
    }
    Ok(JointFilterState {
        probs: out,
        rho: rho_next,
    })
}

/// Forward filter over the source value that observes exact samples; the
/// independent route for checking the scalar belief formulas.
#[derive(Debug, Clone)]
pub struct ValueFilter {
    probs: Vec<f64>,
}

impl ValueFilter {
    /// Point mass on an observed sample value.
    pub fn observed(model: &SourceModel, value: usize) -> Self {
        let mut probs = vec![0.0; model.num_states()];
        probs[value] = 1.0;
        ValueFilter { probs }
    }

    pub fn uniform(states: usize) -> Self {
        ValueFilter {
            probs: vec![1.0 / states as f64; states],
        }
    }

    /// Push the posterior one slot through the chain (no new observation).
    pub fn predict(&mut self, model: &SourceModel) {
        let m = self.probs.len();
        let mut next = vec![0.0; m];
        for (x, &w) in self.probs.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (j, &pij) in model.matrix()[x].iter().enumerate() {
                next[j] += w * pij;
            }
        }
        self.probs = next;
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob_of(&self, x: usize) -> f64 {
        self.probs[x]
    }
}

const BRUTE_FORCE_MAX_STATES: usize = 200;
const BRUTE_FORCE_MAX_POLICIES: f64 = 2e7;

/// Exhaustively enumerate every deterministic stationary policy, evaluate
/// each exactly, and return the best gain with a witness policy. For a
/// multichain policy the best closed class counts: its gain is attainable
/// from some start, and the optimum of a communicating MDP is attainable
/// everywhere, so the minimum over policies and classes equals the optimal
/// gain.
pub fn brute_force_gain(mdp: &FiniteMdp) -> Result<(f64, Vec<Action>), OracleError> {
    let n = mdp.num_states();
    if n > BRUTE_FORCE_MAX_STATES {
        return Err(OracleError::InstanceTooLarge(format!(
            "{n} states exceeds the {BRUTE_FORCE_MAX_STATES}-state guard"
        )));
    }
    let mut policy_count = 1f64;
    for s in 0..n {
        if mdp.feasible[s].len() > 3 {
            return Err(OracleError::InstanceTooLarge(format!(
                "state {s} has more than 3 actions"
            )));
        }
        policy_count *= mdp.feasible[s].len() as f64;
        if policy_count > BRUTE_FORCE_MAX_POLICIES {
            return Err(OracleError::InstanceTooLarge(format!(
                "more than {BRUTE_FORCE_MAX_POLICIES:e} deterministic policies"
            )));
        }
    }

    let mut choice = vec![0usize; n];
    let mut policy: Vec<Action> = (0..n).map(|s| mdp.feasible[s][0]).collect();
    let mut best = f64::INFINITY;
    let mut best_policy = policy.clone();

    loop {
        let gain = match policy_gain_exact(mdp, &policy) {
            Ok(g) => g,
            Err(GainError::Multichain { class_gains }) => {
                class_gains.into_iter().fold(f64::INFINITY, f64::min)
            }
            Err(e) => return Err(e.into()),
        };
        if gain < best {
            best = gain;
            best_policy = policy.clone();
        }

        // Mixed-radix increment over per-state action choices.
        let mut s = 0;
        loop {
            if s == n {
                return Ok((best, best_policy));
            }
            choice[s] += 1;
            if choice[s] < mdp.feasible[s].len() {
                policy[s] = mdp.feasible[s][choice[s]];
                break;
            }
            choice[s] = 0;
            policy[s] = mdp.feasible[s][0];
            s += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::{aoii_belief_update, AoiiBelief};
    use crate::mdp::{StateSpace, SystemConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn uniform_prior_stays_uniform_under_idle() {
        let model = SourceModel::binary_symmetric(0.7).unwrap();
        let mut vf = ValueFilter::uniform(2);
        for _ in 0..10 {
            vf.predict(&model);
            assert!((vf.prob_of(1) - 0.5).abs() < 1e-14);
        }
        // Same for the joint filter, whose value-blind observations never
        // break the symmetry of the source marginal.
        let mut jf = JointFilterState::init_agreement(8);
        for _ in 0..10 {
            jf = exact_filter_step(&jf, Action::Idle, 0, 0.7, 0.8).unwrap();
            assert!((jf.source_marginal_one() - 0.5).abs() < 1e-14);
        }
    }

    #[test]
    fn joint_filter_reset_marginal() {
        let p = 0.7;
        let jf = JointFilterState::init_agreement(6);
        let jf = exact_filter_step(&jf, Action::Sample, 0, p, 0.8).unwrap();
        let marginal = jf.aoii_marginal();
        assert!((marginal[0] - p).abs() < 1e-12);
        assert!((marginal[1] - (1.0 - p)).abs() < 1e-12);
        assert!(marginal[2..].iter().all(|&v| v == 0.0));
        // Mismatch with the fresh buffer content is 1-p.
        assert!((jf.mismatch_with_buffer() - (1.0 - p)).abs() < 1e-12);
    }

    #[test]
    fn zero_probability_observations_are_surfaced() {
        let jf = JointFilterState::init_agreement(4);
        assert!(matches!(
            exact_filter_step(&jf, Action::Idle, 1, 0.7, 0.8),
            Err(OracleError::ZeroProbabilityObservation { .. })
        ));
        assert!(matches!(
            exact_filter_step(&jf, Action::Retransmit, 1, 0.7, 0.8),
            Err(OracleError::ZeroProbabilityObservation { .. })
        ));
        // Perfect channel: a failed fresh transmission cannot be observed.
        assert!(matches!(
            exact_filter_step(&jf, Action::Sample, 1, 0.7, 1.0),
            Err(OracleError::ZeroProbabilityObservation { .. })
        ));
    }

    #[test]
    fn joint_filter_tracks_the_truncated_updates_on_random_runs() {
        let bound = 12usize;
        for &(p, q) in &[(0.7f64, 0.5f64), (0.8, 0.8), (0.6, 1.0)] {
            let mut rng = ChaCha12Rng::seed_from_u64(900 + (p * 10.0) as u64);
            for _ in 0..200 {
                let mut jf = JointFilterState::init_agreement(bound);
                let mut bel = AoiiBelief::certain_zero(bound);
                for _ in 0..40 {
                    let action = match rng.gen_range(0..3u8) {
                        0 => Action::Idle,
                        1 if jf.rho() == 1 => Action::Retransmit,
                        1 => Action::Idle,
                        _ => Action::Sample,
                    };
                    let p0 = jf.predictive_rho_zero(action, q);
                    let rho_next = if rng.gen_bool(p0.clamp(0.0, 1.0)) {
                        0
                    } else {
                        1
                    };
                    jf = exact_filter_step(&jf, action, rho_next, p, q).unwrap();
                    bel = aoii_belief_update(&bel, action, rho_next, p).unwrap();
                    let marginal = jf.aoii_marginal();
                    for (i, &w) in marginal.iter().enumerate() {
                        assert!(
                            (w - bel.get(i)).abs() < 1e-9,
                            "p={p} q={q} index {i}: filter {w} vs update {}",
                            bel.get(i)
                        );
                    }
                    assert!((jf.total_mass() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn filter_mass_stays_normalized_over_long_runs() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let (p, q) = (0.8, 0.6);
        let mut jf = JointFilterState::init_agreement(20);
        for _ in 0..100_000 {
            let action = match rng.gen_range(0..3u8) {
                0 => Action::Idle,
                1 if jf.rho() == 1 => Action::Retransmit,
                1 => Action::Idle,
                _ => Action::Sample,
            };
            let p0 = jf.predictive_rho_zero(action, q);
            let rho_next = if rng.gen_bool(p0.clamp(0.0, 1.0)) {
                0
            } else {
                1
            };
            jf = exact_filter_step(&jf, action, rho_next, p, q).unwrap();
            assert!((jf.total_mass() - 1.0).abs() < 1e-12);
        }
    }

    fn two_cycle() -> FiniteMdp {
        FiniteMdp::new(
            StateSpace::AoiiPerfect {
                battery: 0,
                aoi_bound: 2,
            },
            vec![0, 1],
            vec![vec![Action::Idle], vec![Action::Idle]],
            vec![vec![vec![(1, 1.0)]], vec![vec![(0, 1.0)]]],
            vec![0.0, 1.0],
        )
    }

    #[test]
    fn brute_force_on_the_two_cycle() {
        let (gain, _) = brute_force_gain(&two_cycle()).unwrap();
        assert!((gain - 0.5).abs() < 1e-10);
    }

    #[test]
    fn brute_force_picks_the_dominating_action() {
        // Noisy two-state chain, cost 0 at state 0 and 1 at state 1. From
        // either state, sampling drifts toward state 0 and idling away from
        // it, so sampling everywhere is the unique optimum (gain 0.1).
        let mdp = FiniteMdp::new(
            StateSpace::AoiiPerfect {
                battery: 0,
                aoi_bound: 2,
            },
            vec![0, 1],
            vec![
                vec![Action::Idle, Action::Sample],
                vec![Action::Idle, Action::Sample],
            ],
            vec![
                vec![vec![(0, 0.1), (1, 0.9)], vec![(0, 0.9), (1, 0.1)]],
                vec![vec![(0, 0.1), (1, 0.9)], vec![(0, 0.9), (1, 0.1)]],
            ],
            vec![0.0, 1.0],
        );
        let (gain, policy) = brute_force_gain(&mdp).unwrap();
        assert!((gain - 0.1).abs() < 1e-10);
        assert_eq!(policy, vec![Action::Sample, Action::Sample]);
    }

    #[test]
    fn brute_force_matches_rvi_on_a_tiny_distortion_instance() {
        // E = 1 with free transmissions keeps the policy count tiny while
        // all three actions stay in play.
        let cfg = SystemConfig {
            p: 0.8,
            q: 0.6,
            mu: 0.4,
            sample_cost: 0,
            transmit_cost: 1,
            battery_capacity: 1,
            aoi_bound: 2,
            ..SystemConfig::default()
        };
        let model = SourceModel::binary_symmetric(cfg.p).unwrap();
        let mdp = crate::mdp::restrict_to_recurrent_core(
            crate::mdp::build_distortion_mdp(&cfg, &model).unwrap(),
        )
        .unwrap();
        let sol = crate::mdp::rvi_solve(&mdp, 1e-10, 0).unwrap();
        let (gain, _) = brute_force_gain(&mdp).unwrap();
        assert!(
            (sol.gain - gain).abs() < 1e-8,
            "rvi {} brute {gain}",
            sol.gain
        );
        // Optimality certificate: no sampled policy beats the brute-force gain.
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..50 {
            let policy: Vec<Action> = (0..mdp.num_states())
                .map(|s| {
                    let k = rng.gen_range(0..mdp.feasible[s].len());
                    mdp.feasible[s][k]
                })
                .collect();
            let g = match policy_gain_exact(&mdp, &policy) {
                Ok(g) => g,
                Err(GainError::Multichain { class_gains }) => {
                    class_gains.into_iter().fold(f64::INFINITY, f64::min)
                }
                Err(e) => panic!("{e}"),
            };
            assert!(g >= gain - 1e-9);
        }
    }

    #[test]
    fn brute_force_guard_trips_on_large_instances() {
        let cfg = SystemConfig::default();
        let model = SourceModel::binary_symmetric(cfg.p).unwrap();
        let mdp = crate::mdp::build_distortion_mdp(&cfg, &model).unwrap();
        assert!(matches!(
            brute_force_gain(&mdp),
            Err(OracleError::InstanceTooLarge(_))
        ));
    }
}
