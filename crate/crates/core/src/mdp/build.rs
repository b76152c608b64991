//! Kernel construction for the three finite MDPs.
//!
//! Shared conventions:
//! - energy arrivals are Bernoulli(`mu`) and are credited after the action's
//!   debit, with the battery capped at `E`;
//! - the energy causality constraint gates feasibility: retransmit needs
//!   `e ≥ c_t`, sample needs `e ≥ c_s + c_t` (a fresh sample may turn out to
//!   need transmission, so the full amount must be on hand);
//! - AoI advances as `θ' = 1` on sample, `min(θ+1, N)` otherwise.

use std::collections::BTreeMap;

use crate::belief::{agreement_probability, aoii_belief_perfect, expected_aoii};
use crate::source::SourceModel;
use crate::Action;

use super::{FiniteMdp, MdpError, StateLabel, StateSpace, SystemConfig};

/// Accumulates probability mass per successor, merging duplicate targets.
struct RowBuilder {
    entries: BTreeMap<u32, f64>,
}

impl RowBuilder {
    fn new() -> Self {
        RowBuilder {
            entries: BTreeMap::new(),
        }
    }

    fn add(&mut self, target: usize, prob: f64) {
        if prob > 0.0 {
            *self.entries.entry(target as u32).or_insert(0.0) += prob;
        }
    }

    fn finish(self) -> Vec<(u32, f64)> {
        let row: Vec<(u32, f64)> = self.entries.into_iter().collect();
        debug_assert!(
            (row.iter().map(|&(_, p)| p).sum::<f64>() - 1.0).abs() < super::ROW_TOL,
            "kernel row does not sum to 1"
        );
        row
    }
}

fn arrivals(mu: f64) -> [(u32, f64); 2] {
    [(1, mu), (0, 1.0 - mu)]
}

fn feasible_actions(e: u32, config: &SystemConfig, with_retransmit: bool) -> Vec<Action> {
    let mut actions = vec![Action::Idle];
    if with_retransmit && e >= config.transmit_cost {
        actions.push(Action::Retransmit);
    }
    if e >= config.total_cost() {
        actions.push(Action::Sample);
    }
    actions
}

/// Distortion MDP over `(e, θ, x̃, x̂)`.
///
/// The sample action branches on the latent source value with the belief
/// weights `Pr{X | x̃, θ}` taken from row `x̃` of `P^θ`; the drawn sample is
/// transmitted only when it differs from the estimate, which is also what
/// decides whether the battery pays `c_s` or `c_s + c_t`.
pub fn build_distortion_mdp(
    config: &SystemConfig,
    model: &SourceModel,
) -> Result<FiniteMdp, MdpError> {
    config.validate()?;
    let m = model.num_states();
    if config.distortion.num_states() != m {
        return Err(MdpError::SourceMismatch {
            table: config.distortion.num_states(),
            states: m,
        });
    }
    let e_max = config.battery_capacity;
    let n = config.aoi_bound;
    let space = StateSpace::Distortion {
        battery: e_max,
        aoi_bound: n,
        source_states: m as u32,
    };
    let size = space.full_size();
    let (q, qb) = (config.q, 1.0 - config.q);

    // Belief weights per (x̃, θ) reused across battery levels and estimates.
    let mut rows_by_age: Vec<Vec<Vec<f64>>> = Vec::with_capacity(m);
    for x_tilde in 0..m {
        let mut per_age = Vec::with_capacity(n as usize + 1);
        per_age.push(Vec::new()); // θ = 0 unused
        for theta in 1..=n {
            per_age.push(model.n_step_row(x_tilde, theta as usize)?);
        }
        rows_by_age.push(per_age);
    }

    let mut feasible = Vec::with_capacity(size);
    let mut rows = Vec::with_capacity(size);
    let mut cost = Vec::with_capacity(size);

    for full in 0..size {
        let StateLabel::Distortion {
            battery: e,
            aoi: theta,
            buffer,
            estimate,
        } = space.label(full)
        else {
            unreachable!()
        };
        let weights = &rows_by_age[buffer as usize][theta as usize];
        cost.push(
            weights
                .iter()
                .enumerate()
                .map(|(x, &w)| w * config.distortion.value(x, estimate as usize))
                .sum(),
        );

        let actions = feasible_actions(e, config, true);
        let theta_next = (theta + 1).min(n);
        let mut state_rows = Vec::with_capacity(actions.len());
        for &a in &actions {
            let mut row = RowBuilder::new();
            match a {
                Action::Idle => {
                    for (u, pu) in arrivals(config.mu) {
                        let e_next = (e + u).min(e_max);
                        let label = StateLabel::Distortion {
                            battery: e_next,
                            aoi: theta_next,
                            buffer,
                            estimate,
                        };
                        row.add(space.index(&label).unwrap(), pu);
                    }
                }
                Action::Retransmit => {
                    for (u, pu) in arrivals(config.mu) {
                        let e_next = (e - config.transmit_cost + u).min(e_max);
                        if buffer == estimate {
                            // The monitor already holds this value; delivery
                            // outcome cannot change the estimate.
                            let label = StateLabel::Distortion {
                                battery: e_next,
                                aoi: theta_next,
                                buffer,
                                estimate,
                            };
                            row.add(space.index(&label).unwrap(), pu);
                        } else {
                            let hit = StateLabel::Distortion {
                                battery: e_next,
                                aoi: theta_next,
                                buffer,
                                estimate: buffer,
                            };
                            let miss = StateLabel::Distortion {
                                battery: e_next,
                                aoi: theta_next,
                                buffer,
                                estimate,
                            };
                            row.add(space.index(&hit).unwrap(), pu * q);
                            row.add(space.index(&miss).unwrap(), pu * qb);
                        }
                    }
                }
                Action::Sample => {
                    for (x, &w) in weights.iter().enumerate() {
                        if w == 0.0 {
                            continue;
                        }
                        let x = x as u32;
                        for (u, pu) in arrivals(config.mu) {
                            if x == estimate {
                                // Fresh sample equals the estimate: stored,
                                // not transmitted; only the sampling cost.
                                let e_next = (e - config.sample_cost + u).min(e_max);
                                let label = StateLabel::Distortion {
                                    battery: e_next,
                                    aoi: 1,
                                    buffer: x,
                                    estimate,
                                };
                                row.add(space.index(&label).unwrap(), w * pu);
                            } else {
                                let e_next = (e - config.total_cost() + u).min(e_max);
                                let hit = StateLabel::Distortion {
                                    battery: e_next,
                                    aoi: 1,
                                    buffer: x,
                                    estimate: x,
                                };
                                let miss = StateLabel::Distortion {
                                    battery: e_next,
                                    aoi: 1,
                                    buffer: x,
                                    estimate,
                                };
                                row.add(space.index(&hit).unwrap(), w * pu * q);
                                row.add(space.index(&miss).unwrap(), w * pu * qb);
                            }
                        }
                    }
                }
            }
            state_rows.push(row.finish());
        }
        feasible.push(actions);
        rows.push(state_rows);
    }

    Ok(FiniteMdp::new(
        space,
        (0..size as u32).collect(),
        feasible,
        rows,
        cost,
    ))
}

/// AoII MDP over `(e, θ)` for a perfect channel.
///
/// With `q = 1` the buffer and the estimate always coincide, so retransmission
/// is pointless and the AoII belief is pinned by the AoI alone. The battery
/// mixes on the agreement probability `g(θ)`: with probability `g(θ)` the
/// fresh sample equals the estimate and only `c_s` is paid, otherwise the
/// sample goes out and `c_s + c_t` is paid.
pub fn build_aoii_perfect_mdp(config: &SystemConfig) -> Result<FiniteMdp, MdpError> {
    config.validate()?;
    if (config.q - 1.0).abs() > 1e-12 {
        return Err(MdpError::UnsupportedChannel { q: config.q });
    }
    if config.p <= 0.5 {
        return Err(MdpError::InvalidConfig(format!(
            "AoII belief formulas need p > 0.5, got {}",
            config.p
        )));
    }
    let e_max = config.battery_capacity;
    let n = config.aoi_bound;
    let space = StateSpace::AoiiPerfect {
        battery: e_max,
        aoi_bound: n,
    };
    let size = space.full_size();

    let mut age_cost = vec![0.0; n as usize + 1];
    for theta in 1..=n {
        age_cost[theta as usize] =
            expected_aoii(&aoii_belief_perfect(theta, config.p, n as usize)?);
    }

    let mut feasible = Vec::with_capacity(size);
    let mut rows = Vec::with_capacity(size);
    let mut cost = Vec::with_capacity(size);

    for full in 0..size {
        let StateLabel::Aoii {
            battery: e,
            aoi: theta,
        } = space.label(full)
        else {
            unreachable!()
        };
        cost.push(age_cost[theta as usize]);

        let actions = feasible_actions(e, config, false);
        let theta_next = (theta + 1).min(n);
        let mut state_rows = Vec::with_capacity(actions.len());
        for &a in &actions {
            let mut row = RowBuilder::new();
            match a {
                Action::Idle => {
                    for (u, pu) in arrivals(config.mu) {
                        let label = StateLabel::Aoii {
                            battery: (e + u).min(e_max),
                            aoi: theta_next,
                        };
                        row.add(space.index(&label).unwrap(), pu);
                    }
                }
                Action::Sample => {
                    let g = agreement_probability(theta, config.p);
                    for (u, pu) in arrivals(config.mu) {
                        let transmit = StateLabel::Aoii {
                            battery: (e - config.total_cost() + u).min(e_max),
                            aoi: 1,
                        };
                        let store_only = StateLabel::Aoii {
                            battery: (e - config.sample_cost + u).min(e_max),
                            aoi: 1,
                        };
                        row.add(space.index(&transmit).unwrap(), pu * (1.0 - g));
                        row.add(space.index(&store_only).unwrap(), pu * g);
                    }
                }
                Action::Retransmit => unreachable!("retransmit excluded above"),
            }
            state_rows.push(row.finish());
        }
        feasible.push(actions);
        rows.push(state_rows);
    }

    Ok(FiniteMdp::new(
        space,
        (0..size as u32).collect(),
        feasible,
        rows,
        cost,
    ))
}

/// Value-agnostic freshness benchmark over `(e, Δ, θ)` with cost `Δ`.
///
/// The monitor AoI resets on delivery to the delivered sample's age plus one
/// transmission slot: `Δ' = 2` for a fresh sample, `Δ' = θ + 1` for a
/// retransmission. A fresh sample is transmitted only when it differs from
/// the estimate; without tracking values, that event has probability
/// `1 - Pr{source unchanged after Δ slots}` under the stationary law.
pub fn build_aoi_mdp(config: &SystemConfig, model: &SourceModel) -> Result<FiniteMdp, MdpError> {
    config.validate()?;
    let e_max = config.battery_capacity;
    let n = config.aoi_bound;
    let n_delta = config.monitor_bound();
    let space = StateSpace::AoiBenchmark {
        battery: e_max,
        aoi_bound: n,
        monitor_bound: n_delta,
    };
    let size = space.full_size();
    let (q, qb) = (config.q, 1.0 - config.q);

    let change_prob: Vec<f64> = (0..=n_delta as usize)
        .map(|d| 1.0 - model.agreement_after(d))
        .collect();

    let mut feasible = Vec::with_capacity(size);
    let mut rows = Vec::with_capacity(size);
    let mut cost = Vec::with_capacity(size);

    for full in 0..size {
        let StateLabel::Aoi {
            battery: e,
            monitor_aoi: delta,
            aoi: theta,
        } = space.label(full)
        else {
            unreachable!()
        };
        cost.push(delta as f64);

        let actions = feasible_actions(e, config, true);
        let theta_next = (theta + 1).min(n);
        let delta_grown = (delta + 1).min(n_delta);
        let mut state_rows = Vec::with_capacity(actions.len());
        for &a in &actions {
            let mut row = RowBuilder::new();
            match a {
                Action::Idle => {
                    for (u, pu) in arrivals(config.mu) {
                        let label = StateLabel::Aoi {
                            battery: (e + u).min(e_max),
                            monitor_aoi: delta_grown,
                            aoi: theta_next,
                        };
                        row.add(space.index(&label).unwrap(), pu);
                    }
                }
                Action::Retransmit => {
                    for (u, pu) in arrivals(config.mu) {
                        let e_next = (e - config.transmit_cost + u).min(e_max);
                        let hit = StateLabel::Aoi {
                            battery: e_next,
                            monitor_aoi: (theta + 1).min(n_delta),
                            aoi: theta_next,
                        };
                        let miss = StateLabel::Aoi {
                            battery: e_next,
                            monitor_aoi: delta_grown,
                            aoi: theta_next,
                        };
                        row.add(space.index(&hit).unwrap(), pu * q);
                        row.add(space.index(&miss).unwrap(), pu * qb);
                    }
                }
                Action::Sample => {
                    let d = change_prob[delta as usize];
                    for (u, pu) in arrivals(config.mu) {
                        let e_tx = (e - config.total_cost() + u).min(e_max);
                        let e_store = (e - config.sample_cost + u).min(e_max);
                        let hit = StateLabel::Aoi {
                            battery: e_tx,
                            monitor_aoi: 2,
                            aoi: 1,
                        };
                        let miss = StateLabel::Aoi {
                            battery: e_tx,
                            monitor_aoi: delta_grown,
                            aoi: 1,
                        };
                        let silent = StateLabel::Aoi {
                            battery: e_store,
                            monitor_aoi: delta_grown,
                            aoi: 1,
                        };
                        row.add(space.index(&hit).unwrap(), pu * d * q);
                        row.add(space.index(&miss).unwrap(), pu * d * qb);
                        row.add(space.index(&silent).unwrap(), pu * (1.0 - d));
                    }
                }
            }
            state_rows.push(row.finish());
        }
        feasible.push(actions);
        rows.push(state_rows);
    }

    Ok(FiniteMdp::new(
        space,
        (0..size as u32).collect(),
        feasible,
        rows,
        cost,
    ))
}
