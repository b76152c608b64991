//! Relative value iteration, exact policy evaluation, and the graph
//! machinery behind the communicating-property check.
//!
//! RVI iterates `V(z) = C(z) + Σ P̂{z'|z,a*} h(z')` with `h = V - V(ref)`,
//! stopping when successive relative values differ by less than the
//! tolerance in max norm. The sweep runs on the damped kernel
//! `P̂ = τ I + (1-τ) P`; mixing in a self-loop removes periodicity without
//! changing the optimal gain, the minimizing actions, or (up to scale) the
//! bias, so the solver also converges on purely cyclic chains. The reported
//! bias is rescaled by `1-τ` so the returned `(gain, bias)` pair satisfies
//! the undamped optimality equation.

use thiserror::Error;

use crate::Action;

use super::{FiniteMdp, MdpError, RviSolution};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("reference state {ref_state} out of range for {num_states} states")]
    InvalidReference { ref_state: usize, num_states: usize },
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error(
        "relative value iteration did not converge within {iterations} sweeps \
         (last residual {last_residual:e})"
    )]
    NotConverged {
        iterations: u64,
        last_residual: f64,
        residual_history: Vec<f64>,
    },
}

#[derive(Debug, Error)]
pub enum GainError {
    #[error("policy has {got} entries for {expected} states")]
    WrongLength { expected: usize, got: usize },
    #[error("policy action {action} infeasible at state {state}")]
    InfeasiblePolicy { state: usize, action: Action },
    #[error(
        "policy-induced chain has {} closed classes with gains {class_gains:?}",
        class_gains.len()
    )]
    Multichain { class_gains: Vec<f64> },
    #[error("stationary distribution iteration did not converge")]
    NoConvergence,
}

/// Solver knobs. `damping` is the self-loop weight of the aperiodicity
/// transform; `0.5` is safe for arbitrary chains.
#[derive(Debug, Clone)]
pub struct RviParams {
    pub epsilon: f64,
    pub ref_state: usize,
    pub max_iterations: u64,
    pub damping: f64,
}

impl Default for RviParams {
    fn default() -> Self {
        RviParams {
            epsilon: 1e-3,
            ref_state: 0,
            max_iterations: 100_000,
            damping: 0.5,
        }
    }
}

/// Solve the average-cost problem by relative value iteration.
pub fn rvi_solve(
    mdp: &FiniteMdp,
    epsilon: f64,
    ref_state: usize,
) -> Result<RviSolution, SolveError> {
    rvi_solve_with(
        mdp,
        &RviParams {
            epsilon,
            ref_state,
            ..RviParams::default()
        },
    )
}

pub fn rvi_solve_with(mdp: &FiniteMdp, params: &RviParams) -> Result<RviSolution, SolveError> {
    let n = mdp.num_states();
    if params.ref_state >= n {
        return Err(SolveError::InvalidReference {
            ref_state: params.ref_state,
            num_states: n,
        });
    }
    if params.epsilon.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(SolveError::BadTolerance(params.epsilon));
    }
    let tau = params.damping;
    debug_assert!((0.0..1.0).contains(&tau));

    let mut h = vec![0.0f64; n];
    let mut h_next = vec![0.0f64; n];
    let mut residuals: Vec<f64> = Vec::new();
    let mut iterations = 0u64;
    let mut converged = false;

    while iterations < params.max_iterations {
        iterations += 1;
        // V(s) = C(s) + τ h(s) + (1-τ) min_a Σ P{s'|s,a} h(s');
        // cost and the self-loop term are action-independent, so the argmin
        // only needs the expected continuation.
        let v_ref = {
            let s = params.ref_state;
            mdp.cost[s] + tau * h[s] + (1.0 - tau) * best_continuation(mdp, s, &h)
        };
        let mut residual = 0.0f64;
        for s in 0..n {
            let v = mdp.cost[s] + tau * h[s] + (1.0 - tau) * best_continuation(mdp, s, &h);
            let hv = v - v_ref;
            residual = residual.max((hv - h[s]).abs());
            h_next[s] = hv;
        }
        std::mem::swap(&mut h, &mut h_next);
        residuals.push(residual);
        if residual < params.epsilon {
            converged = true;
            break;
        }
    }

    if !converged {
        let last = residuals.last().copied().unwrap_or(f64::INFINITY);
        let tail = residuals.len().saturating_sub(100);
        return Err(SolveError::NotConverged {
            iterations,
            last_residual: last,
            residual_history: residuals.split_off(tail),
        });
    }

    // Gain: at the fixed point h(ref) = 0, so V(ref) is the optimal average
    // cost of the undamped problem as well.
    let s = params.ref_state;
    let gain = mdp.cost[s] + tau * h[s] + (1.0 - tau) * best_continuation(mdp, s, &h);

    // Undo the bias scaling introduced by the damped kernel.
    let bias: Vec<f64> = h.iter().map(|&v| v * (1.0 - tau)).collect();

    let policy: Vec<Action> = (0..n).map(|s| greedy_action(mdp, s, &bias)).collect();
    let residual_span = *residuals.last().expect("at least one sweep ran");

    Ok(RviSolution {
        gain,
        bias,
        policy,
        iterations,
        residual_span,
    })
}

fn expected_value(row: &[(u32, f64)], h: &[f64]) -> f64 {
    row.iter().map(|&(next, p)| p * h[next as usize]).sum()
}

fn best_continuation(mdp: &FiniteMdp, s: usize, h: &[f64]) -> f64 {
    let mut best = f64::INFINITY;
    for k in 0..mdp.feasible[s].len() {
        let v = expected_value(mdp.row_by_slot(s, k), h);
        if v < best {
            best = v;
        }
    }
    best
}

/// Minimizing action under the supplied bias, ties broken toward the
/// cheapest action (idle < retransmit < sample).
fn greedy_action(mdp: &FiniteMdp, s: usize, bias: &[f64]) -> Action {
    let mut best = f64::INFINITY;
    let mut best_action = mdp.feasible[s][0];
    for (k, &a) in mdp.feasible[s].iter().enumerate() {
        let v = expected_value(mdp.row_by_slot(s, k), bias);
        if v < best {
            best = v;
            best_action = a;
        }
    }
    best_action
}

/// Max-norm violation of the average-cost optimality equation by a solution.
pub fn bellman_residual(mdp: &FiniteMdp, sol: &RviSolution) -> f64 {
    let mut worst = 0.0f64;
    for s in 0..mdp.num_states() {
        let best = mdp.cost[s] + best_continuation(mdp, s, &sol.bias);
        worst = worst.max((sol.gain + sol.bias[s] - best).abs());
    }
    worst
}

/// True iff the directed graph of positive-probability transitions under any
/// feasible action is strongly connected. A strongly connected union graph
/// means every state pair is mutually reachable under some (possibly
/// randomized) policy, so the MDP is communicating.
pub fn check_communicating(mdp: &FiniteMdp) -> bool {
    strongly_connected_components(&mdp.union_adjacency()).len() == 1
}

/// Drop transient and unreachable product states, keeping the unique closed
/// communicating class. Errors when more than one closed class exists (for
/// example `mu = 0`, where the battery can only drain).
pub fn restrict_to_recurrent_core(mdp: FiniteMdp) -> Result<FiniteMdp, MdpError> {
    let adj = mdp.union_adjacency();
    let sccs = strongly_connected_components(&adj);
    if sccs.len() == 1 {
        return Ok(mdp);
    }
    let mut comp_of = vec![0u32; mdp.num_states()];
    for (c, comp) in sccs.iter().enumerate() {
        for &v in comp {
            comp_of[v as usize] = c as u32;
        }
    }
    let mut closed: Vec<usize> = Vec::new();
    for (c, comp) in sccs.iter().enumerate() {
        let leaks = comp.iter().any(|&v| {
            adj[v as usize]
                .iter()
                .any(|&w| comp_of[w as usize] != c as u32)
        });
        if !leaks {
            closed.push(c);
        }
    }
    if closed.len() != 1 {
        return Err(MdpError::MultipleRecurrentClasses {
            count: closed.len(),
        });
    }
    let mut keep: Vec<u32> = sccs[closed[0]].clone();
    keep.sort_unstable();

    let mut new_of_old = vec![u32::MAX; mdp.num_states()];
    for (new, &old) in keep.iter().enumerate() {
        new_of_old[old as usize] = new as u32;
    }

    let mut retained = Vec::with_capacity(keep.len());
    let mut feasible = Vec::with_capacity(keep.len());
    let mut rows = Vec::with_capacity(keep.len());
    let mut cost = Vec::with_capacity(keep.len());
    for &old in &keep {
        let old = old as usize;
        retained.push(mdp.retained[old]);
        feasible.push(mdp.feasible[old].clone());
        cost.push(mdp.cost[old]);
        let remapped: Vec<Vec<(u32, f64)>> = (0..mdp.feasible[old].len())
            .map(|k| {
                mdp.row_by_slot(old, k)
                    .iter()
                    .map(|&(next, p)| {
                        let new_next = new_of_old[next as usize];
                        debug_assert!(new_next != u32::MAX, "closed class leaked a transition");
                        (new_next, p)
                    })
                    .collect()
            })
            .collect();
        rows.push(remapped);
    }

    Ok(FiniteMdp::new(mdp.space, retained, feasible, rows, cost))
}

/// Long-run average cost of a deterministic stationary policy, from the
/// stationary distribution of the induced chain (damped power iteration to
/// 1e-12). Multichain policies yield a warning error carrying each closed
/// class's gain.
pub fn policy_gain_exact(mdp: &FiniteMdp, policy: &[Action]) -> Result<f64, GainError> {
    let gains = induced_class_gains(mdp, policy)?;
    if gains.len() == 1 {
        Ok(gains[0])
    } else {
        Err(GainError::Multichain { class_gains: gains })
    }
}

/// Gains of every closed class of the policy-induced chain.
pub(crate) fn induced_class_gains(
    mdp: &FiniteMdp,
    policy: &[Action],
) -> Result<Vec<f64>, GainError> {
    let n = mdp.num_states();
    if policy.len() != n {
        return Err(GainError::WrongLength {
            expected: n,
            got: policy.len(),
        });
    }
    let mut slot = vec![0usize; n];
    for s in 0..n {
        slot[s] = mdp.feasible[s].iter().position(|&a| a == policy[s]).ok_or(
            GainError::InfeasiblePolicy {
                state: s,
                action: policy[s],
            },
        )?;
    }

    let adj: Vec<Vec<u32>> = (0..n)
        .map(|s| {
            mdp.row_by_slot(s, slot[s])
                .iter()
                .filter(|&&(_, p)| p > 0.0)
                .map(|&(next, _)| next)
                .collect()
        })
        .collect();
    let sccs = strongly_connected_components(&adj);
    let mut comp_of = vec![0u32; n];
    for (c, comp) in sccs.iter().enumerate() {
        for &v in comp {
            comp_of[v as usize] = c as u32;
        }
    }

    let mut gains = Vec::new();
    for (c, comp) in sccs.iter().enumerate() {
        let leaks = comp.iter().any(|&v| {
            adj[v as usize]
                .iter()
                .any(|&w| comp_of[w as usize] != c as u32)
        });
        if leaks {
            continue;
        }
        gains.push(class_gain(mdp, &slot, comp)?);
    }
    debug_assert!(!gains.is_empty(), "a finite chain has a closed class");
    Ok(gains)
}

fn class_gain(mdp: &FiniteMdp, slot: &[usize], class: &[u32]) -> Result<f64, GainError> {
    let mut local = vec![usize::MAX; mdp.num_states()];
    for (i, &v) in class.iter().enumerate() {
        local[v as usize] = i;
    }
    let k = class.len();
    let mut pi = vec![1.0 / k as f64; k];
    let mut next = vec![0.0f64; k];
    let mut converged = false;
    for _ in 0..1_000_000u64 {
        for v in next.iter_mut() {
            *v = 0.0;
        }
        for (i, &v) in class.iter().enumerate() {
            let mass = pi[i];
            if mass == 0.0 {
                continue;
            }
            for &(target, p) in mdp.row_by_slot(v as usize, slot[v as usize]) {
                let j = local[target as usize];
                debug_assert!(j != usize::MAX, "closed class leaked");
                next[j] += mass * p;
            }
        }
        let mut change = 0.0;
        for i in 0..k {
            let mixed = 0.5 * pi[i] + 0.5 * next[i];
            change += (mixed - pi[i]).abs();
            pi[i] = mixed;
        }
        if change < 1e-12 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(GainError::NoConvergence);
    }
    Ok(class
        .iter()
        .enumerate()
        .map(|(i, &v)| pi[i] * mdp.cost[v as usize])
        .sum())
}

/// Iterative Tarjan strongly-connected components.
pub(crate) fn strongly_connected_components(adj: &[Vec<u32>]) -> Vec<Vec<u32>> {
    const UNSET: u32 = u32::MAX;
    let n = adj.len();
    let mut index = vec![UNSET; n];
    let mut low = vec![0u32; n];
    let mut on_stack = vec![false; n];
    let mut stack: Vec<u32> = Vec::new();
    let mut next_index = 0u32;
    let mut sccs: Vec<Vec<u32>> = Vec::new();
    let mut frames: Vec<(u32, usize)> = Vec::new();

    for root in 0..n {
        if index[root] != UNSET {
            continue;
        }
        frames.push((root as u32, 0));
        while let Some(frame) = frames.last_mut() {
            let v = frame.0 as usize;
            if frame.1 == 0 {
                index[v] = next_index;
                low[v] = next_index;
                next_index += 1;
                stack.push(v as u32);
                on_stack[v] = true;
            }
            if frame.1 < adj[v].len() {
                let w = adj[v][frame.1] as usize;
                frame.1 += 1;
                if index[w] == UNSET {
                    frames.push((w as u32, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                frames.pop();
                if let Some(parent) = frames.last() {
                    let p = parent.0 as usize;
                    low[p] = low[p].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().expect("tarjan stack underflow");
                        on_stack[w as usize] = false;
                        comp.push(w);
                        if w as usize == v {
                            break;
                        }
                    }
                    sccs.push(comp);
                }
            }
        }
    }
    sccs
}
