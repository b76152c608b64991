//! Finite average-cost MDPs and the relative value iteration solver.
//!
//! Three builders produce sparse finite MDPs over enumerated product spaces:
//!
//! - [`build_distortion_mdp`]: state `(e, θ, x̃, x̂)` — battery, AoI of the
//!   buffered sample, buffer content, monitor estimate. The per-state cost is
//!   the belief-weighted expected distortion, with the belief reconstructed
//!   from `(x̃, θ)`.
//! - [`build_aoii_perfect_mdp`]: state `(e, θ)` for the AoII objective under
//!   a perfect channel, where the AoII belief is a closed-form function of
//!   the AoI.
//! - [`build_aoi_mdp`]: state `(e, Δ, θ)` — a value-agnostic freshness
//!   benchmark with the monitor AoI `Δ` as cost.
//!
//! Builders enumerate the full Cartesian product; [`restrict_to_recurrent_core`]
//! then trims unreachable/transient corners (e.g. mismatched buffer/estimate
//! pairs under a perfect channel) so the solved MDP is communicating.

mod build;
mod solve;

pub use build::{build_aoi_mdp, build_aoii_perfect_mdp, build_distortion_mdp};
pub use solve::{
    bellman_residual, check_communicating, policy_gain_exact, restrict_to_recurrent_core,
    rvi_solve, rvi_solve_with, GainError, RviParams, SolveError,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::DistortionFn;
use crate::{fnv1a, Action};

/// Probability mass tolerance for kernel rows.
pub const ROW_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum MdpError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("the AoII finite-state formulation needs a perfect channel, got q = {q}")]
    UnsupportedChannel { q: f64 },
    #[error("distortion table covers {table} states but the source has {states}")]
    SourceMismatch { table: usize, states: usize },
    #[error(
        "the state space splits into {count} recurrent classes; \
         the model is not solvable as a single communicating MDP"
    )]
    MultipleRecurrentClasses { count: usize },
    #[error("source error: {0}")]
    Source(#[from] crate::source::SourceError),
    #[error("belief error: {0}")]
    Belief(#[from] crate::belief::BeliefError),
}

/// All scalar system parameters plus the distortion instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Self-transition probability of the (symmetric) source.
    pub p: f64,
    /// Reception success probability of the channel.
    pub q: f64,
    /// Bernoulli energy arrival rate.
    pub mu: f64,
    /// Energy units consumed per sample.
    pub sample_cost: u32,
    /// Energy units consumed per transmission.
    pub transmit_cost: u32,
    /// Battery capacity in energy units.
    pub battery_capacity: u32,
    /// AoI truncation bound `N`.
    pub aoi_bound: u32,
    /// Distortion penalty table.
    pub distortion: DistortionFn,
    /// Solver stopping tolerance.
    pub epsilon: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            p: 0.8,
            q: 0.8,
            mu: 0.5,
            sample_cost: 1,
            transmit_cost: 1,
            battery_capacity: 10,
            aoi_bound: 30,
            distortion: DistortionFn::real_time_error(2),
            epsilon: 1e-3,
        }
    }
}

impl SystemConfig {
    /// Combined energy cost of sampling plus transmitting.
    pub fn total_cost(&self) -> u32 {
        self.sample_cost + self.transmit_cost
    }

    /// Truncation bound for the monitor-side AoI in the freshness benchmark.
    pub fn monitor_bound(&self) -> u32 {
        2 * self.aoi_bound
    }

    pub fn validate(&self) -> Result<(), MdpError> {
        let fail = |msg: String| Err(MdpError::InvalidConfig(msg));
        if !(self.p > 0.0 && self.p <= 1.0) {
            return fail(format!("p = {} outside (0, 1]", self.p));
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return fail(format!("q = {} outside (0, 1]", self.q));
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return fail(format!("mu = {} outside [0, 1]", self.mu));
        }
        if self.battery_capacity < self.total_cost() {
            return fail(format!(
                "battery capacity {} below the combined action cost {}",
                self.battery_capacity,
                self.total_cost()
            ));
        }
        if self.aoi_bound < 1 {
            return fail("aoi_bound must be at least 1".to_string());
        }
        if self.epsilon.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return fail(format!("epsilon = {} must be positive", self.epsilon));
        }
        Ok(())
    }

    /// Stable hash of the resolved configuration paired with a source
    /// description; echoed in every policy document and output row.
    pub fn config_hash(&self, source_canonical: &str) -> u64 {
        let canon = format!(
            "p={:?};q={:?};mu={:?};cs={};ct={};E={};N={};eps={:?};{};src={}",
            self.p,
            self.q,
            self.mu,
            self.sample_cost,
            self.transmit_cost,
            self.battery_capacity,
            self.aoi_bound,
            self.epsilon,
            self.distortion.canonical_string(),
            source_canonical,
        );
        fnv1a(canon.as_bytes())
    }
}

/// Describes how an enumerated product space maps to state tuples.
///
/// Enumeration is lexicographic in the listed component order, with the
/// battery level as the slowest-varying component, so full-product index 0 is
/// always the lowest-battery, lowest-age state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StateSpace {
    /// `(e, θ, x̃, x̂)` with `e ∈ 0..=E`, `θ ∈ 1..=N`, values in `0..m`.
    Distortion {
        battery: u32,
        aoi_bound: u32,
        source_states: u32,
    },
    /// `(e, θ)` with `e ∈ 0..=E`, `θ ∈ 1..=N`.
    AoiiPerfect { battery: u32, aoi_bound: u32 },
    /// `(e, Δ, θ)` with `Δ ∈ 1..=monitor_bound`, `θ ∈ 1..=N`.
    AoiBenchmark {
        battery: u32,
        aoi_bound: u32,
        monitor_bound: u32,
    },
}

/// A decoded state tuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateLabel {
    Distortion {
        battery: u32,
        aoi: u32,
        buffer: u32,
        estimate: u32,
    },
    Aoii {
        battery: u32,
        aoi: u32,
    },
    Aoi {
        battery: u32,
        monitor_aoi: u32,
        aoi: u32,
    },
}

impl StateLabel {
    pub fn battery(&self) -> u32 {
        match *self {
            StateLabel::Distortion { battery, .. }
            | StateLabel::Aoii { battery, .. }
            | StateLabel::Aoi { battery, .. } => battery,
        }
    }
}

impl StateSpace {
    /// Number of states in the unrestricted product.
    pub fn full_size(&self) -> usize {
        match *self {
            StateSpace::Distortion {
                battery,
                aoi_bound,
                source_states,
            } => {
                (battery as usize + 1)
                    * aoi_bound as usize
                    * source_states as usize
                    * source_states as usize
            }
            StateSpace::AoiiPerfect { battery, aoi_bound } => {
                (battery as usize + 1) * aoi_bound as usize
            }
            StateSpace::AoiBenchmark {
                battery,
                aoi_bound,
                monitor_bound,
            } => (battery as usize + 1) * monitor_bound as usize * aoi_bound as usize,
        }
    }

    pub fn label(&self, full_index: usize) -> StateLabel {
        match *self {
            StateSpace::Distortion {
                aoi_bound,
                source_states,
                ..
            } => {
                let m = source_states as usize;
                let estimate = (full_index % m) as u32;
                let rest = full_index / m;
                let buffer = (rest % m) as u32;
                let rest = rest / m;
                let aoi = (rest % aoi_bound as usize) as u32 + 1;
                let battery = (rest / aoi_bound as usize) as u32;
                StateLabel::Distortion {
                    battery,
                    aoi,
                    buffer,
                    estimate,
                }
            }
            StateSpace::AoiiPerfect { aoi_bound, .. } => {
                let aoi = (full_index % aoi_bound as usize) as u32 + 1;
                let battery = (full_index / aoi_bound as usize) as u32;
                StateLabel::Aoii { battery, aoi }
            }
            StateSpace::AoiBenchmark {
                aoi_bound,
                monitor_bound,
                ..
            } => {
                let aoi = (full_index % aoi_bound as usize) as u32 + 1;
                let rest = full_index / aoi_bound as usize;
                let monitor_aoi = (rest % monitor_bound as usize) as u32 + 1;
                let battery = (rest / monitor_bound as usize) as u32;
                StateLabel::Aoi {
                    battery,
                    monitor_aoi,
                    aoi,
                }
            }
        }
    }

    /// Full-product index of a state tuple, if it lies inside the bounds.
    pub fn index(&self, label: &StateLabel) -> Option<usize> {
        match (*self, label) {
            (
                StateSpace::Distortion {
                    battery,
                    aoi_bound,
                    source_states,
                },
                &StateLabel::Distortion {
                    battery: e,
                    aoi,
                    buffer,
                    estimate,
                },
            ) => {
                if e > battery
                    || aoi < 1
                    || aoi > aoi_bound
                    || buffer >= source_states
                    || estimate >= source_states
                {
                    return None;
                }
                let m = source_states as usize;
                Some(
                    ((e as usize * aoi_bound as usize + (aoi as usize - 1)) * m + buffer as usize)
                        * m
                        + estimate as usize,
                )
            }
            (
                StateSpace::AoiiPerfect { battery, aoi_bound },
                &StateLabel::Aoii { battery: e, aoi },
            ) => {
                if e > battery || aoi < 1 || aoi > aoi_bound {
                    return None;
                }
                Some(e as usize * aoi_bound as usize + (aoi as usize - 1))
            }
            (
                StateSpace::AoiBenchmark {
                    battery,
                    aoi_bound,
                    monitor_bound,
                },
                &StateLabel::Aoi {
                    battery: e,
                    monitor_aoi,
                    aoi,
                },
            ) => {
                if e > battery
                    || aoi < 1
                    || aoi > aoi_bound
                    || monitor_aoi < 1
                    || monitor_aoi > monitor_bound
                {
                    return None;
                }
                Some(
                    (e as usize * monitor_bound as usize + (monitor_aoi as usize - 1))
                        * aoi_bound as usize
                        + (aoi as usize - 1),
                )
            }
            _ => None,
        }
    }
}

impl Copy for StateSpace {}

/// Enumerated states, per-state feasible actions, sparse kernel, and
/// per-state immediate cost.
///
/// `retained` lists the full-product index of every state, ascending; after
/// [`restrict_to_recurrent_core`] it is a strict subset of the product.
/// Kernel rows refer to positions in `retained`, not to product indices.
#[derive(Debug, Clone)]
pub struct FiniteMdp {
    pub space: StateSpace,
    pub retained: Vec<u32>,
    pub feasible: Vec<Vec<Action>>,
    rows: Vec<Vec<Vec<(u32, f64)>>>,
    pub cost: Vec<f64>,
}

impl FiniteMdp {
    pub(crate) fn new(
        space: StateSpace,
        retained: Vec<u32>,
        feasible: Vec<Vec<Action>>,
        rows: Vec<Vec<Vec<(u32, f64)>>>,
        cost: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(retained.len(), feasible.len());
        debug_assert_eq!(retained.len(), rows.len());
        debug_assert_eq!(retained.len(), cost.len());
        FiniteMdp {
            space,
            retained,
            feasible,
            rows,
            cost,
        }
    }

    pub fn num_states(&self) -> usize {
        self.retained.len()
    }

    pub fn label_of(&self, state: usize) -> StateLabel {
        self.space.label(self.retained[state] as usize)
    }

    /// Position of a full-product index among retained states.
    pub fn position_of_full(&self, full_index: usize) -> Option<usize> {
        self.retained.binary_search(&(full_index as u32)).ok()
    }

    /// Sparse kernel row for a feasible `(state, action)` pair.
    pub fn row(&self, state: usize, action: Action) -> Option<&[(u32, f64)]> {
        let k = self.feasible[state].iter().position(|&a| a == action)?;
        Some(&self.rows[state][k])
    }

    pub(crate) fn row_by_slot(&self, state: usize, slot: usize) -> &[(u32, f64)] {
        &self.rows[state][slot]
    }

    pub fn is_feasible(&self, state: usize, action: Action) -> bool {
        self.feasible[state].contains(&action)
    }

    /// Check stochasticity of every row and non-emptiness of every action
    /// set. Used by tests; builders uphold this by construction.
    pub fn validate(&self) -> Result<(), MdpError> {
        for (s, actions) in self.feasible.iter().enumerate() {
            if actions.is_empty() {
                return Err(MdpError::InvalidConfig(format!(
                    "state {s} has no feasible action"
                )));
            }
            for (k, _) in actions.iter().enumerate() {
                let row = &self.rows[s][k];
                let mut sum = 0.0;
                for &(next, p) in row {
                    if !(0.0..=1.0 + ROW_TOL).contains(&p) {
                        return Err(MdpError::InvalidConfig(format!(
                            "probability {p} out of range at state {s}"
                        )));
                    }
                    if next as usize >= self.num_states() {
                        return Err(MdpError::InvalidConfig(format!(
                            "dangling transition target {next} at state {s}"
                        )));
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > ROW_TOL {
                    return Err(MdpError::InvalidConfig(format!(
                        "row for state {s} action slot {k} sums to {sum}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Union adjacency over all feasible actions (deduplicated, sorted).
    pub(crate) fn union_adjacency(&self) -> Vec<Vec<u32>> {
        self.rows
            .iter()
            .map(|state_rows| {
                let mut targets: Vec<u32> = state_rows
                    .iter()
                    .flatten()
                    .filter(|&&(_, p)| p > 0.0)
                    .map(|&(next, _)| next)
                    .collect();
                targets.sort_unstable();
                targets.dedup();
                targets
            })
            .collect()
    }
}

/// Output of relative value iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RviSolution {
    /// Optimal long-run average cost.
    pub gain: f64,
    /// Relative value vector anchored at the reference state.
    pub bias: Vec<f64>,
    /// Minimizing action per state.
    pub policy: Vec<Action>,
    pub iterations: u64,
    /// Final max-norm difference of successive relative values.
    pub residual_span: f64,
}
