//! The decision interface and the policy zoo.
//!
//! Every policy maps a strictly causal [`Observation`] — battery level,
//! buffer content, estimate, ages, indicator, and (for belief-driven
//! policies) the AoII belief — to an energy-feasible action. Ground truth
//! never appears in an observation, so causality is enforced by the type.
//!
//! Policies:
//! - [`Policy::Tabular`]: a solved table over one of the enumerated state
//!   spaces (distortion, perfect-channel AoII, or the freshness benchmark);
//! - [`Policy::Baseline`]: sample whenever the battery covers the combined
//!   cost, otherwise idle;
//! - [`Policy::MyopicAoii`]: finite-horizon expansion of the AoII belief
//!   recursion, the stand-in for a learned policy on unreliable channels.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{aoii_belief_update, expected_aoii, AoiiBelief};
use crate::mdp::{FiniteMdp, RviSolution, StateLabel, StateSpace, SystemConfig};
use crate::source::SourceModel;
use crate::Action;

pub const POLICY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(
        "observation indicator rho={rho} inconsistent with buffer {buffer} vs estimate {estimate}"
    )]
    InconsistentIndicator { rho: u8, buffer: u32, estimate: u32 },
    #[error(
        "observation (battery {battery}, aoi {aoi}) outside the policy's enumerated space; \
         likely a config mismatch"
    )]
    KeyOutOfSpace { battery: u32, aoi: u32 },
    #[error("belief-driven policy needs an AoII belief in the observation")]
    MissingBelief,
    #[error("policy document schema {got} unsupported (expected {expected})")]
    SchemaVersion { got: u32, expected: u32 },
    #[error("policy table is empty")]
    EmptyTable,
    #[error("policy table length {got} does not match {expected} retained states")]
    TableLength { expected: usize, got: usize },
    #[error("stored action {action} infeasible at battery level {battery}")]
    InfeasibleEntry { action: Action, battery: u32 },
    #[error("policy was solved for a different configuration (hash {stored:#x} vs {expected:#x})")]
    ConfigMismatch { stored: u64, expected: u64 },
    #[error("malformed policy document: {0}")]
    Malformed(String),
    #[error("belief update failed: {0}")]
    Belief(#[from] crate::belief::BeliefError),
}

/// Everything the controller can causally know at decision time.
///
/// `monitor_aoi` is reconstructed from delivery feedback and is therefore
/// causal. `aoii_belief` is carried only for belief-driven policies.
#[derive(Debug, Clone)]
pub struct Observation {
    pub battery: u32,
    pub buffer: u32,
    pub estimate: u32,
    /// AoI of the buffered sample, capped at the configured bound.
    pub transmitter_aoi: u32,
    /// Monitor-side AoI, capped at the benchmark bound.
    pub monitor_aoi: u32,
    /// 1 exactly when the buffer differs from the estimate.
    pub rho: u8,
    pub aoii_belief: Option<AoiiBelief>,
}

impl Observation {
    pub fn new(
        battery: u32,
        buffer: u32,
        estimate: u32,
        transmitter_aoi: u32,
        monitor_aoi: u32,
    ) -> Self {
        Observation {
            battery,
            buffer,
            estimate,
            transmitter_aoi,
            monitor_aoi,
            rho: u8::from(buffer != estimate),
            aoii_belief: None,
        }
    }

    pub fn with_belief(mut self, belief: AoiiBelief) -> Self {
        self.aoii_belief = Some(belief);
        self
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let expected = u8::from(self.buffer != self.estimate);
        if self.rho != expected {
            return Err(PolicyError::InconsistentIndicator {
                rho: self.rho,
                buffer: self.buffer,
                estimate: self.estimate,
            });
        }
        Ok(())
    }
}

/// A solved deterministic table plus enough provenance to detect misuse.
#[derive(Debug, Clone)]
pub struct TabularPolicy {
    pub space: StateSpace,
    pub retained: Vec<u32>,
    pub actions: Vec<Action>,
    pub config_hash: u64,
    pub gain: f64,
    pub residual_span: f64,
    pub iterations: u64,
    pub metadata: BTreeMap<String, String>,
}

impl TabularPolicy {
    pub fn from_solution(
        mdp: &FiniteMdp,
        solution: &RviSolution,
        config: &SystemConfig,
        model: &SourceModel,
        metadata: BTreeMap<String, String>,
    ) -> Self {
        TabularPolicy {
            space: mdp.space,
            retained: mdp.retained.clone(),
            actions: solution.policy.clone(),
            config_hash: config.config_hash(&model.canonical_string()),
            gain: solution.gain,
            residual_span: solution.residual_span,
            iterations: solution.iterations,
            metadata,
        }
    }

    /// Convert an observation into this table's state tuple.
    fn label_for(&self, obs: &Observation) -> StateLabel {
        match self.space {
            StateSpace::Distortion { .. } => StateLabel::Distortion {
                battery: obs.battery,
                aoi: obs.transmitter_aoi,
                buffer: obs.buffer,
                estimate: obs.estimate,
            },
            StateSpace::AoiiPerfect { .. } => StateLabel::Aoii {
                battery: obs.battery,
                aoi: obs.transmitter_aoi,
            },
            StateSpace::AoiBenchmark { .. } => StateLabel::Aoi {
                battery: obs.battery,
                monitor_aoi: obs.monitor_aoi,
                aoi: obs.transmitter_aoi,
            },
        }
    }

    pub fn action_for(&self, obs: &Observation) -> Result<Action, PolicyError> {
        let key_err = || PolicyError::KeyOutOfSpace {
            battery: obs.battery,
            aoi: obs.transmitter_aoi,
        };
        let full = self.space.index(&self.label_for(obs)).ok_or_else(key_err)?;
        let pos = self
            .retained
            .binary_search(&(full as u32))
            .map_err(|_| key_err())?;
        Ok(self.actions[pos])
    }

    /// Action table as a battery × AoI grid for one `(buffer, estimate)`
    /// slice (`None` for the AoII table, which has no slice axis). Absent
    /// cells are states outside the retained core.
    pub fn action_grid(
        &self,
        slice: Option<(u32, u32)>,
    ) -> Result<Vec<Vec<Option<Action>>>, PolicyError> {
        let (battery, aoi_bound) = match self.space {
            StateSpace::Distortion {
                battery, aoi_bound, ..
            } => (battery, aoi_bound),
            StateSpace::AoiiPerfect { battery, aoi_bound } => (battery, aoi_bound),
            StateSpace::AoiBenchmark { .. } => {
                return Err(PolicyError::Malformed(
                    "the freshness benchmark table has no battery × AoI grid".to_string(),
                ))
            }
        };
        let mut grid = Vec::with_capacity(battery as usize + 1);
        for e in 0..=battery {
            let mut row = Vec::with_capacity(aoi_bound as usize);
            for theta in 1..=aoi_bound {
                let label = match (self.space, slice) {
                    (StateSpace::Distortion { .. }, Some((buffer, estimate))) => {
                        StateLabel::Distortion {
                            battery: e,
                            aoi: theta,
                            buffer,
                            estimate,
                        }
                    }
                    (StateSpace::Distortion { .. }, None) => {
                        return Err(PolicyError::Malformed(
                            "a distortion table needs a (buffer, estimate) slice".to_string(),
                        ))
                    }
                    (StateSpace::AoiiPerfect { .. }, None) => StateLabel::Aoii {
                        battery: e,
                        aoi: theta,
                    },
                    (StateSpace::AoiiPerfect { .. }, Some(_)) => {
                        return Err(PolicyError::Malformed(
                            "the AoII table has no (buffer, estimate) slices".to_string(),
                        ))
                    }
                    (StateSpace::AoiBenchmark { .. }, _) => unreachable!(),
                };
                let cell = self
                    .space
                    .index(&label)
                    .and_then(|full| self.retained.binary_search(&(full as u32)).ok())
                    .map(|pos| self.actions[pos]);
                row.push(cell);
            }
            grid.push(row);
        }
        if grid.iter().flatten().all(Option::is_none) {
            return Err(PolicyError::Malformed(format!(
                "slice {slice:?} is absent from the retained state space"
            )));
        }
        Ok(grid)
    }

    /// Check the table against a config/model pair before simulating with it.
    pub fn ensure_matches(
        &self,
        config: &SystemConfig,
        model: &SourceModel,
    ) -> Result<(), PolicyError> {
        let expected = config.config_hash(&model.canonical_string());
        if expected != self.config_hash {
            return Err(PolicyError::ConfigMismatch {
                stored: self.config_hash,
                expected,
            });
        }
        Ok(())
    }

    fn validate_feasibility(&self, transmit_cost: u32, total_cost: u32) -> Result<(), PolicyError> {
        if self.actions.is_empty() {
            return Err(PolicyError::EmptyTable);
        }
        if self.actions.len() != self.retained.len() {
            return Err(PolicyError::TableLength {
                expected: self.retained.len(),
                got: self.actions.len(),
            });
        }
        for (pos, &action) in self.actions.iter().enumerate() {
            let battery = self.space.label(self.retained[pos] as usize).battery();
            let need = match action {
                Action::Idle => 0,
                Action::Retransmit => transmit_cost,
                Action::Sample => total_cost,
            };
            if battery < need {
                return Err(PolicyError::InfeasibleEntry { action, battery });
            }
        }
        Ok(())
    }
}

/// The decision zoo behind one uniform `decide` entry point.
#[derive(Debug, Clone)]
pub enum Policy {
    Tabular(TabularPolicy),
    /// Sample whenever the battery covers sampling plus transmission.
    Baseline {
        sample_threshold: u32,
    },
    /// Horizon-limited expansion of the belief recursion.
    MyopicAoii {
        config: SystemConfig,
        horizon: u32,
    },
}

impl Policy {
    pub fn baseline(config: &SystemConfig) -> Self {
        Policy::Baseline {
            sample_threshold: config.total_cost(),
        }
    }

    pub fn myopic(config: &SystemConfig) -> Self {
        Policy::MyopicAoii {
            config: config.clone(),
            horizon: 3,
        }
    }

    /// Does `decide` need `Observation::aoii_belief` populated?
    pub fn needs_belief(&self) -> bool {
        matches!(self, Policy::MyopicAoii { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Policy::Tabular(_) => "tabular",
            Policy::Baseline { .. } => "baseline",
            Policy::MyopicAoii { .. } => "myopic_aoii",
        }
    }
}

/// Uniform decision entry point; the returned action is always
/// energy-feasible at the observed battery level.
pub fn decide(policy: &Policy, obs: &Observation) -> Result<Action, PolicyError> {
    obs.validate()?;
    match policy {
        Policy::Tabular(table) => table.action_for(obs),
        Policy::Baseline { sample_threshold } => Ok(if obs.battery >= *sample_threshold {
            Action::Sample
        } else {
            Action::Idle
        }),
        Policy::MyopicAoii { config, horizon } => myopic_aoii(obs, config, *horizon),
    }
}

/// Pick the feasible action minimizing the expected cumulative expected AoII
/// over the next `horizon` slots, by exact expansion of the belief recursion
/// and the energy/channel branching. Ties break toward idle (then
/// retransmit), so a do-nothing-helps state stays cheap.
pub fn myopic_aoii(
    obs: &Observation,
    config: &SystemConfig,
    horizon: u32,
) -> Result<Action, PolicyError> {
    let bel = obs.aoii_belief.as_ref().ok_or(PolicyError::MissingBelief)?;
    let mut best = f64::INFINITY;
    let mut best_action = Action::Idle;
    for (action, value) in action_values(obs.battery, obs.rho, bel, config, horizon)? {
        if value < best {
            best = value;
            best_action = action;
        }
    }
    Ok(best_action)
}

fn feasible_for_belief(battery: u32, rho: u8, config: &SystemConfig) -> Vec<Action> {
    let mut actions = vec![Action::Idle];
    // Retransmitting a sample the monitor already holds is dominated by idle.
    if rho == 1 && battery >= config.transmit_cost {
        actions.push(Action::Retransmit);
    }
    if battery >= config.total_cost() {
        actions.push(Action::Sample);
    }
    actions
}

fn action_values(
    battery: u32,
    rho: u8,
    bel: &AoiiBelief,
    config: &SystemConfig,
    horizon: u32,
) -> Result<Vec<(Action, f64)>, PolicyError> {
    let mut out = Vec::new();
    for action in feasible_for_belief(battery, rho, config) {
        out.push((
            action,
            branch_value(battery, rho, bel, action, config, horizon)?,
        ));
    }
    Ok(out)
}

fn lookahead_value(
    battery: u32,
    rho: u8,
    bel: &AoiiBelief,
    config: &SystemConfig,
    horizon: u32,
) -> Result<f64, PolicyError> {
    let values = action_values(battery, rho, bel, config, horizon)?;
    Ok(values
        .into_iter()
        .map(|(_, v)| v)
        .fold(f64::INFINITY, f64::min))
}

/// Expected cumulative expected AoII of taking `action` now and acting
/// greedily for the remaining horizon.
fn branch_value(
    battery: u32,
    rho: u8,
    bel: &AoiiBelief,
    action: Action,
    config: &SystemConfig,
    horizon: u32,
) -> Result<f64, PolicyError> {
    if horizon == 0 {
        return Ok(0.0);
    }
    let e_max = config.battery_capacity;
    let p = config.p;
    let q = config.q;
    let b0 = bel.get(0);

    // (probability, paid energy, ρ', belief update observation)
    let outcomes: Vec<(f64, u32, u8)> = match action {
        Action::Idle => vec![(1.0, 0, rho)],
        Action::Retransmit => vec![
            (q, config.transmit_cost, 0),
            (1.0 - q, config.transmit_cost, 1),
        ],
        Action::Sample => vec![
            (b0, config.sample_cost, 0),
            ((1.0 - b0) * q, config.total_cost(), 0),
            ((1.0 - b0) * (1.0 - q), config.total_cost(), 1),
        ],
    };

    let mut total = 0.0;
    for (prob, paid, rho_next) in outcomes {
        if prob <= 0.0 {
            continue;
        }
        let next_bel = aoii_belief_update(bel, action, rho_next, p)?;
        let stage = expected_aoii(&next_bel);
        for (arrival, p_arrival) in [(1u32, config.mu), (0u32, 1.0 - config.mu)] {
            if p_arrival <= 0.0 {
                continue;
            }
            let e_next = (battery - paid + arrival).min(e_max);
            let future = if horizon > 1 {
                lookahead_value(e_next, rho_next, &next_bel, config, horizon - 1)?
            } else {
                0.0
            };
            total += prob * p_arrival * (stage + future);
        }
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Serialization

#[derive(Debug, Serialize, Deserialize)]
struct PolicyDocument {
    schema: u32,
    space: StateSpace,
    retained: Vec<u32>,
    actions: Vec<u8>,
    config: SystemConfig,
    source: crate::source::SourceDescriptor,
    config_hash: u64,
    gain: f64,
    residual_span: f64,
    iterations: u64,
    metadata: BTreeMap<String, String>,
}

/// Serialize a solved table together with the configuration and source it
/// was built for. Round-trips bit-exactly through [`load_policy`].
pub fn save_policy(
    policy: &TabularPolicy,
    config: &SystemConfig,
    model: &SourceModel,
) -> Result<String, PolicyError> {
    policy.validate_feasibility(config.transmit_cost, config.total_cost())?;
    let doc = PolicyDocument {
        schema: POLICY_SCHEMA_VERSION,
        space: policy.space,
        retained: policy.retained.clone(),
        actions: policy.actions.iter().map(|&a| a as u8).collect(),
        config: config.clone(),
        source: model.descriptor(),
        config_hash: policy.config_hash,
        gain: policy.gain,
        residual_span: policy.residual_span,
        iterations: policy.iterations,
        metadata: policy.metadata.clone(),
    };
    serde_json::to_string_pretty(&doc).map_err(|e| PolicyError::Malformed(e.to_string()))
}

/// Parse and validate a policy document. Returns the table plus the
/// configuration and source model it was solved for.
pub fn load_policy(text: &str) -> Result<(TabularPolicy, SystemConfig, SourceModel), PolicyError> {
    let doc: PolicyDocument =
        serde_json::from_str(text).map_err(|e| PolicyError::Malformed(e.to_string()))?;
    if doc.schema != POLICY_SCHEMA_VERSION {
        return Err(PolicyError::SchemaVersion {
            got: doc.schema,
            expected: POLICY_SCHEMA_VERSION,
        });
    }
    let actions: Vec<Action> = doc
        .actions
        .iter()
        .map(|&raw| {
            Action::from_index(raw as usize)
                .ok_or_else(|| PolicyError::Malformed(format!("unknown action code {raw}")))
        })
        .collect::<Result<_, _>>()?;
    let model = doc
        .source
        .rebuild()
        .map_err(|e| PolicyError::Malformed(e.to_string()))?;
    let stored_hash = doc.config.config_hash(&model.canonical_string());
    if stored_hash != doc.config_hash {
        return Err(PolicyError::ConfigMismatch {
            stored: doc.config_hash,
            expected: stored_hash,
        });
    }
    let policy = TabularPolicy {
        space: doc.space,
        retained: doc.retained,
        actions,
        config_hash: doc.config_hash,
        gain: doc.gain,
        residual_span: doc.residual_span,
        iterations: doc.iterations,
        metadata: doc.metadata,
    };
    policy.validate_feasibility(doc.config.transmit_cost, doc.config.total_cost())?;
    Ok((policy, doc.config, model))
}
