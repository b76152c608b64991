//! Markov models of the tracked information source.
//!
//! Three families are supported: the two-state symmetric chain with
//! self-transition probability `p`, the M-state symmetric chain (self
//! transition `p`, equal out-transition `r = (1-p)/(M-1)` to every other
//! state), and a general row-stochastic matrix. The monitor estimates the
//! source by keeping the last received sample; for the binary chain this is
//! the maximum-likelihood estimate when `p > 0.5`, and for the symmetric
//! M-state chain when `p > r`. Construction rejects models outside those
//! regimes (general matrices are accepted and the last-sample rule is used as
//! a recorded heuristic).
//!
//! `n_step_matrix` memoizes consecutive matrix powers because the MDP
//! builders query every exponent `1..=N` repeatedly.

use std::sync::Mutex;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Row-major dense transition matrix.
pub type Matrix = Vec<Vec<f64>>;

const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("transition matrix must be square with at least 2 states, got {rows}x{cols}")]
    BadShape { rows: usize, cols: usize },
    #[error("transition probability {value} at ({row}, {col}) outside [0, 1]")]
    ProbabilityOutOfRange { row: usize, col: usize, value: f64 },
    #[error("row {row} of the transition matrix sums to {sum}, expected 1 within 1e-12")]
    RowNotStochastic { row: usize, sum: f64 },
    #[error("unsupported regime: {0}")]
    UnsupportedRegime(String),
    #[error("state index {index} out of range for a {states}-state source")]
    InvalidState { index: usize, states: usize },
}

/// Which family a [`SourceModel`] belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SourceKind {
    BinarySymmetric { p: f64 },
    SymmetricMState { states: usize, p: f64 },
    General,
}

/// An immutable Markov source with memoized n-step transition powers.
///
/// Safe to share across threads; the power cache sits behind a mutex and
/// random streams are caller-owned.
#[derive(Debug)]
pub struct SourceModel {
    kind: SourceKind,
    matrix: Matrix,
    powers: Mutex<Vec<Matrix>>,
}

impl Clone for SourceModel {
    fn clone(&self) -> Self {
        SourceModel {
            kind: self.kind.clone(),
            matrix: self.matrix.clone(),
            powers: Mutex::new(vec![identity(self.matrix.len())]),
        }
    }
}

impl SourceModel {
    /// Two-state symmetric chain. The last-sample estimator needs `p > 0.5`.
    pub fn binary_symmetric(p: f64) -> Result<Self, SourceError> {
        if !(p > 0.5 && p <= 1.0) {
            return Err(SourceError::UnsupportedRegime(format!(
                "binary self-transition probability must satisfy 0.5 < p <= 1, got {p}"
            )));
        }
        let matrix = vec![vec![p, 1.0 - p], vec![1.0 - p, p]];
        Ok(Self::from_parts(SourceKind::BinarySymmetric { p }, matrix))
    }

    /// Symmetric M-state chain with self-transition `p` and uniform
    /// out-transition `r = (1-p)/(M-1)`. Requires `p > r` so the last-sample
    /// estimator is maximum likelihood.
    pub fn symmetric_m_state(states: usize, p: f64) -> Result<Self, SourceError> {
        if states < 2 {
            return Err(SourceError::BadShape {
                rows: states,
                cols: states,
            });
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(SourceError::ProbabilityOutOfRange {
                row: 0,
                col: 0,
                value: p,
            });
        }
        let r = (1.0 - p) / (states as f64 - 1.0);
        if p <= r {
            return Err(SourceError::UnsupportedRegime(format!(
                "symmetric {states}-state chain needs p > r for the last-sample estimator, \
                 got p = {p}, r = {r}"
            )));
        }
        let matrix = (0..states)
            .map(|i| {
                (0..states)
                    .map(|j| if i == j { p } else { r })
                    .collect::<Vec<_>>()
            })
            .collect();
        Ok(Self::from_parts(
            SourceKind::SymmetricMState { states, p },
            matrix,
        ))
    }

    /// General finite chain from a row-stochastic matrix.
    pub fn general(matrix: Matrix) -> Result<Self, SourceError> {
        let rows = matrix.len();
        if rows < 2 || matrix.iter().any(|r| r.len() != rows) {
            return Err(SourceError::BadShape {
                rows,
                cols: matrix.first().map(|r| r.len()).unwrap_or(0),
            });
        }
        for (i, row) in matrix.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                    return Err(SourceError::ProbabilityOutOfRange {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(SourceError::RowNotStochastic { row: i, sum });
            }
        }
        Ok(Self::from_parts(SourceKind::General, matrix))
    }

    fn from_parts(kind: SourceKind, matrix: Matrix) -> Self {
        let n = matrix.len();
        SourceModel {
            kind,
            matrix,
            powers: Mutex::new(vec![identity(n)]),
        }
    }

    pub fn kind(&self) -> &SourceKind {
        &self.kind
    }

    pub fn num_states(&self) -> usize {
        self.matrix.len()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    /// Self-transition probability for the symmetric families.
    pub fn persistence(&self) -> Option<f64> {
        match self.kind {
            SourceKind::BinarySymmetric { p } | SourceKind::SymmetricMState { p, .. } => Some(p),
            SourceKind::General => None,
        }
    }

    /// Draw the successor of state `x` from row `x` of the transition matrix.
    pub fn step<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> Result<usize, SourceError> {
        let m = self.num_states();
        if x >= m {
            return Err(SourceError::InvalidState {
                index: x,
                states: m,
            });
        }
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (j, &pj) in self.matrix[x].iter().enumerate() {
            acc += pj;
            if u < acc {
                return Ok(j);
            }
        }
        // Floating-point slack: the row sums to 1 within 1e-12.
        Ok(m - 1)
    }

    /// `P^n`, memoized. `n = 0` is the identity.
    pub fn n_step_matrix(&self, n: usize) -> Matrix {
        let mut cache = self.powers.lock().expect("power cache poisoned");
        while cache.len() <= n {
            let next = mat_mul(
                cache.last().expect("cache seeded with identity"),
                &self.matrix,
            );
            cache.push(next);
        }
        cache[n].clone()
    }

    /// Row `x` of `P^n`: the distribution of the source `n` slots after it
    /// was observed in state `x`.
    pub fn n_step_row(&self, x: usize, n: usize) -> Result<Vec<f64>, SourceError> {
        let m = self.num_states();
        if x >= m {
            return Err(SourceError::InvalidState {
                index: x,
                states: m,
            });
        }
        let mut cache = self.powers.lock().expect("power cache poisoned");
        while cache.len() <= n {
            let next = mat_mul(
                cache.last().expect("cache seeded with identity"),
                &self.matrix,
            );
            cache.push(next);
        }
        Ok(cache[n][x].clone())
    }

    /// Stationary distribution via damped power iteration.
    pub fn stationary(&self) -> Vec<f64> {
        let m = self.num_states();
        let mut pi = vec![1.0 / m as f64; m];
        let mut next = vec![0.0; m];
        for _ in 0..100_000 {
            for v in next.iter_mut() {
                *v = 0.0;
            }
            for (i, &weight) in pi.iter().enumerate() {
                for (j, slot) in next.iter_mut().enumerate() {
                    *slot += weight * self.matrix[i][j];
                }
            }
            let mut change = 0.0;
            for j in 0..m {
                let mixed = 0.5 * pi[j] + 0.5 * next[j];
                change += (mixed - pi[j]).abs();
                pi[j] = mixed;
            }
            if change < 1e-14 {
                break;
            }
        }
        pi
    }

    /// Probability that the source sits in the same state it occupied `n`
    /// slots ago, averaged over the stationary distribution. Used by the
    /// value-agnostic freshness benchmark.
    pub fn agreement_after(&self, n: usize) -> f64 {
        let pi = self.stationary();
        let pn = self.n_step_matrix(n);
        pi.iter().enumerate().map(|(x, &w)| w * pn[x][x]).sum()
    }

    /// The estimate the monitor holds after receiving `last_sample`.
    ///
    /// In every supported regime (binary `p > 0.5`, symmetric `p > r`,
    /// both enforced at construction) this is the sample itself. General
    /// matrices also use the last sample; that choice is a heuristic and is
    /// echoed in output metadata.
    pub fn ml_estimate(&self, last_sample: usize) -> Result<usize, SourceError> {
        let m = self.num_states();
        if last_sample >= m {
            return Err(SourceError::InvalidState {
                index: last_sample,
                states: m,
            });
        }
        Ok(last_sample)
    }

    /// Serializable description from which the model can be rebuilt.
    pub fn descriptor(&self) -> SourceDescriptor {
        SourceDescriptor {
            kind: self.kind.clone(),
            matrix: self.matrix.clone(),
        }
    }

    /// Stable textual form used in config hashes.
    pub fn canonical_string(&self) -> String {
        match &self.kind {
            SourceKind::BinarySymmetric { p } => format!("binary(p={p:?})"),
            SourceKind::SymmetricMState { states, p } => {
                format!("symmetric(m={states},p={p:?})")
            }
            SourceKind::General => {
                let rows: Vec<String> = self
                    .matrix
                    .iter()
                    .map(|r| {
                        r.iter()
                            .map(|v| format!("{v:?}"))
                            .collect::<Vec<_>>()
                            .join(",")
                    })
                    .collect();
                format!("general({})", rows.join(";"))
            }
        }
    }
}

/// Round-trippable form of a [`SourceModel`] for policy documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDescriptor {
    pub kind: SourceKind,
    pub matrix: Matrix,
}

impl SourceDescriptor {
    pub fn rebuild(&self) -> Result<SourceModel, SourceError> {
        match &self.kind {
            SourceKind::BinarySymmetric { p } => SourceModel::binary_symmetric(*p),
            SourceKind::SymmetricMState { states, p } => {
                SourceModel::symmetric_m_state(*states, *p)
            }
            SourceKind::General => SourceModel::general(self.matrix.clone()),
        }
    }
}

fn identity(n: usize) -> Matrix {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn mat_mul(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i][k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    /// Transition matrix of the three-state asymmetric example used in the
    /// experiment suite.
    pub(crate) fn asymmetric_three_state() -> Matrix {
        vec![
            vec![0.1, 0.6, 0.3],
            vec![0.4, 0.0, 0.6],
            vec![0.8, 0.1, 0.1],
        ]
    }

    #[test]
    fn absorbing_self_transition_never_leaves() {
        let model = SourceModel::binary_symmetric(1.0).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..100 {
            assert_eq!(model.step(0, &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn step_rejects_invalid_state() {
        let model = SourceModel::binary_symmetric(0.8).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        assert!(matches!(
            model.step(2, &mut rng),
            Err(SourceError::InvalidState { .. })
        ));
    }

    #[test]
    fn empirical_binary_self_transition_frequency() {
        let model = SourceModel::binary_symmetric(0.8).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let draws = 1_000_000;
        let stays = (0..draws)
            .filter(|_| model.step(1, &mut rng).unwrap() == 1)
            .count();
        let freq = stays as f64 / draws as f64;
        assert!((freq - 0.8).abs() < 0.01, "frequency {freq}");
    }

    #[test]
    fn empirical_general_transition_frequency() {
        let model = SourceModel::general(asymmetric_three_state()).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(43);
        let draws = 1_000_000;
        let hits = (0..draws)
            .filter(|_| model.step(0, &mut rng).unwrap() == 1)
            .count();
        let freq = hits as f64 / draws as f64;
        assert!((freq - 0.6).abs() < 0.01, "frequency {freq}");
    }

    #[test]
    fn empirical_rows_match_matrix_within_three_sigma() {
        let model = SourceModel::general(asymmetric_three_state()).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(44);
        let draws = 1_000_000usize;
        for x in 0..3 {
            let mut counts = [0usize; 3];
            for _ in 0..draws {
                counts[model.step(x, &mut rng).unwrap()] += 1;
            }
            for (j, &count) in counts.iter().enumerate() {
                let p = model.matrix()[x][j];
                let sigma = (p * (1.0 - p) / draws as f64).sqrt();
                let freq = count as f64 / draws as f64;
                assert!(
                    (freq - p).abs() <= 3.0 * sigma + 1e-12,
                    "row {x} col {j}: freq {freq} vs p {p}"
                );
            }
        }
    }

    #[test]
    fn zero_step_matrix_is_identity() {
        let model = SourceModel::symmetric_m_state(4, 0.6).unwrap();
        let eye = model.n_step_matrix(0);
        for (i, row) in eye.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(v, if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn two_step_binary_self_entry() {
        // Explicit square: 0.8^2 + 0.2^2 = 0.68.
        let model = SourceModel::binary_symmetric(0.8).unwrap();
        let sq = model.n_step_matrix(2);
        assert!((sq[0][0] - 0.68).abs() < 1e-12);
        assert!((sq[1][1] - 0.68).abs() < 1e-12);
    }

    #[test]
    fn binary_self_entry_closed_form() {
        for &p in &[0.6, 0.7, 0.8, 0.9] {
            let model = SourceModel::binary_symmetric(p).unwrap();
            for n in 0..=40usize {
                let expect = 0.5 * (1.0 + (2.0 * p - 1.0).powi(n as i32));
                let pn = model.n_step_matrix(n);
                assert!((pn[1][1] - expect).abs() < 1e-12, "p={p} n={n}");
            }
        }
    }

    #[test]
    fn symmetric_m_state_self_entry_closed_form() {
        for &(m, p) in &[(3usize, 0.6), (4, 0.7), (6, 0.8)] {
            let model = SourceModel::symmetric_m_state(m, p).unwrap();
            let r = (1.0 - p) / (m as f64 - 1.0);
            for n in 0..=30usize {
                let expect = 1.0 / m as f64 + (1.0 - 1.0 / m as f64) * (p - r).powi(n as i32);
                let pn = model.n_step_matrix(n);
                assert!((pn[0][0] - expect).abs() < 1e-10, "m={m} p={p} n={n}");
            }
        }
    }

    #[test]
    fn chapman_kolmogorov() {
        let model = SourceModel::general(asymmetric_three_state()).unwrap();
        for &(a, b) in &[(1usize, 1usize), (2, 3), (5, 7), (10, 13)] {
            let pab = model.n_step_matrix(a + b);
            let prod = mat_mul(&model.n_step_matrix(a), &model.n_step_matrix(b));
            for i in 0..3 {
                for j in 0..3 {
                    assert!((pab[i][j] - prod[i][j]).abs() < 1e-10, "a={a} b={b}");
                }
            }
        }
    }

    #[test]
    fn power_rows_stay_stochastic() {
        let model = SourceModel::general(asymmetric_three_state()).unwrap();
        for n in 0..60 {
            for row in model.n_step_matrix(n) {
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-12, "n={n}");
                assert!(row.iter().all(|&v| (-1e-15..=1.0 + 1e-12).contains(&v)));
            }
        }
    }

    #[test]
    fn ml_estimate_is_last_sample_in_supported_regimes() {
        let binary = SourceModel::binary_symmetric(0.8).unwrap();
        assert_eq!(binary.ml_estimate(1).unwrap(), 1);
        let sym = SourceModel::symmetric_m_state(4, 0.6).unwrap();
        assert_eq!(sym.ml_estimate(2).unwrap(), 2);
        let gen = SourceModel::general(asymmetric_three_state()).unwrap();
        assert_eq!(gen.ml_estimate(0).unwrap(), 0);
        assert!(matches!(
            sym.ml_estimate(9),
            Err(SourceError::InvalidState { .. })
        ));
    }

    #[test]
    fn out_of_regime_models_are_rejected() {
        assert!(matches!(
            SourceModel::binary_symmetric(0.4),
            Err(SourceError::UnsupportedRegime(_))
        ));
        assert!(matches!(
            SourceModel::binary_symmetric(0.5),
            Err(SourceError::UnsupportedRegime(_))
        ));
        // p = 0.2 with M = 4 gives r = 0.266... > p.
        assert!(matches!(
            SourceModel::symmetric_m_state(4, 0.2),
            Err(SourceError::UnsupportedRegime(_))
        ));
        assert!(matches!(
            SourceModel::general(vec![vec![0.5, 0.4], vec![0.5, 0.5]]),
            Err(SourceError::RowNotStochastic { .. })
        ));
    }

    #[test]
    fn stationary_distribution_is_fixed_point() {
        let model = SourceModel::general(asymmetric_three_state()).unwrap();
        let pi = model.stationary();
        assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        for j in 0..3 {
            let mapped: f64 = (0..3).map(|i| pi[i] * model.matrix()[i][j]).sum();
            assert!((mapped - pi[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn binary_agreement_matches_closed_form() {
        let model = SourceModel::binary_symmetric(0.7).unwrap();
        for n in 0..20 {
            let expect = 0.5 * (1.0 + 0.4f64.powi(n as i32));
            assert!((model.agreement_after(n) - expect).abs() < 1e-10);
        }
    }
}
