//! Sampling and transmission policies for real-time remote tracking.
//!
//! A monitor tracks a Markov information source through a sampler, a
//! one-sample buffer, and an unreliable channel, all powered by harvested
//! energy stored in a finite battery. Sampling and transmitting cost energy,
//! so the source is only partially observable. The toolkit
//!
//! - models the source and the monitor-side estimation rule ([`source`]),
//! - carries the closed-form belief machinery that turns the partially
//!   observable problem into a finite one ([`belief`]),
//! - builds finite average-cost MDPs for the distortion and age-of-incorrect-
//!   information objectives and solves them with relative value iteration
//!   ([`mdp`]),
//! - wraps solved tables, the opportunistic baseline, the freshness benchmark,
//!   and a myopic belief heuristic behind one decision interface ([`policy`]),
//! - simulates the full system slot by slot with seeded, policy-independent
//!   randomness ([`sim`]),
//! - keeps independent correctness instruments for tests ([`oracle`]), and
//! - drives configuration-based experiment sweeps ([`experiment`]).

pub mod belief;
pub mod experiment;
pub mod mdp;
pub mod oracle;
pub mod policy;
pub mod sim;
pub mod source;

use serde::{Deserialize, Serialize};

/// Per-slot command issued by the controller.
///
/// `Sample` takes a fresh sample and transmits it only when its value differs
/// from the monitor's current estimate; `Retransmit` resends the buffered
/// sample unconditionally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Idle = 0,
    Retransmit = 1,
    Sample = 2,
}

impl Action {
    /// All actions in ascending energy order (idle < retransmit < sample).
    pub const ALL: [Action; 3] = [Action::Idle, Action::Retransmit, Action::Sample];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(idx: usize) -> Option<Action> {
        match idx {
            0 => Some(Action::Idle),
            1 => Some(Action::Retransmit),
            2 => Some(Action::Sample),
            _ => None,
        }
    }

    /// Single-character code used in structure grids (0/1/2).
    pub fn code(self) -> char {
        match self {
            Action::Idle => '0',
            Action::Retransmit => '1',
            Action::Sample => '2',
        }
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Action::Idle => write!(f, "idle"),
            Action::Retransmit => write!(f, "retransmit"),
            Action::Sample => write!(f, "sample"),
        }
    }
}

/// FNV-1a over a byte string; used for config hashes and trace hashes.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x1000_0000_01b3);
    }
    hash
}
