//! Domain types: the controlled Markov source, the random-delay channel,
//! and the augmented state/decision spaces built from them.
//!
//! Everything here is immutable after validation and safe to share
//! read-only across threads.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for "this row/pmf sums to one" checks at validation time.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// A single violated model invariant.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelViolation {
    #[error("kernel for action {action}: row {row} sums to {sum:.6}, expected 1")]
    NonStochasticRow { action: usize, row: usize, sum: f64 },
    #[error("kernel for action {action}: entry ({row},{col}) = {value} is outside [0,1]")]
    NegativeProbability {
        action: usize,
        row: usize,
        col: usize,
        value: f64,
    },
    #[error("delay support value {value} must be a positive integer")]
    ZeroOrNegativeDelaySupport { value: u32 },
    #[error("delay support must be strictly increasing (position {index})")]
    NonIncreasingDelaySupport { index: usize },
    #[error("delay probabilities sum to {sum:.6}, expected 1")]
    PmfNotNormalized { sum: f64 },
    #[error("delay probability at position {index} is {value}, expected > 0")]
    NonPositiveDelayProbability { index: usize, value: f64 },
    #[error("cost C({state},{action}) = {value} is not finite")]
    NonFiniteCost {
        state: usize,
        action: usize,
        value: f64,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{0} must be nonempty")]
    Empty(&'static str),
}

/// Validation failure carrying every violated invariant, not just the first.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid model: {}", .violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
pub struct ModelError {
    pub violations: Vec<ModelViolation>,
}

impl ModelError {
    pub fn contains(&self, pred: impl Fn(&ModelViolation) -> bool) -> bool {
        self.violations.iter().any(pred)
    }
}

/// Finite pmf of the channel delay, stored exactly as (support, probs) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayPmf {
    support: Vec<u32>,
    probs: Vec<f64>,
}

impl DelayPmf {
    /// Validates and builds a delay pmf. Support values must be positive and
    /// strictly increasing, probabilities positive and summing to one.
    pub fn new(support: Vec<u32>, probs: Vec<f64>) -> Result<Self, ModelError> {
        let mut violations = Vec::new();
        validate_delay(&support, &probs, &mut violations);
        if violations.is_empty() {
            Ok(Self { support, probs })
        } else {
            Err(ModelError { violations })
        }
    }

    /// Degenerate pmf with all mass on one delay value.
    pub fn degenerate(delay: u32) -> Result<Self, ModelError> {
        Self::new(vec![delay], vec![1.0])
    }

    /// Two-point pmf Pr(Y=y_low)=p, Pr(Y=y_high)=1-p. Collapses to a
    /// degenerate pmf at the p=1 boundary.
    pub fn two_point(p: f64, y_low: u32, y_high: u32) -> Result<Self, ModelError> {
        if (p - 1.0).abs() < 1e-12 {
            Self::degenerate(y_low)
        } else {
            Self::new(vec![y_low, y_high], vec![p, 1.0 - p])
        }
    }

    pub fn support(&self) -> &[u32] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn min_delay(&self) -> u32 {
        self.support[0]
    }

    pub fn max_delay(&self) -> u32 {
        *self.support.last().unwrap()
    }

    /// Mean delay: the sum of y * Pr(Y=y).
    pub fn mean(&self) -> f64 {
        self.support
            .iter()
            .zip(&self.probs)
            .map(|(&y, &p)| f64::from(y) * p)
            .sum()
    }

    /// Probability of a given delay value, zero if not in the support.
    pub fn prob_of(&self, delay: u32) -> f64 {
        match self.support.binary_search(&delay) {
            Ok(i) => self.probs[i],
            Err(_) => 0.0,
        }
    }
}

fn validate_delay(support: &[u32], probs: &[f64], out: &mut Vec<ModelViolation>) {
    if support.is_empty() {
        out.push(ModelViolation::Empty("delay support"));
        return;
    }
    if support.len() != probs.len() {
        out.push(ModelViolation::DimensionMismatch(format!(
            "delay support has {} values but {} probabilities",
            support.len(),
            probs.len()
        )));
        return;
    }
    for (i, &y) in support.iter().enumerate() {
        if y == 0 {
            out.push(ModelViolation::ZeroOrNegativeDelaySupport { value: y });
        }
        if i > 0 && support[i] <= support[i - 1] {
            out.push(ModelViolation::NonIncreasingDelaySupport { index: i });
        }
    }
    let mut sum = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 || !p.is_finite() {
            out.push(ModelViolation::NonPositiveDelayProbability { index: i, value: p });
        }
        sum += p;
    }
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        out.push(ModelViolation::PmfNotNormalized { sum });
    }
}

/// The controlled source with its per-action transition matrices, per-slot
/// cost table, channel delay pmf, and waiting-time cap.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovControlModel {
    kernels: Vec<DMatrix<f64>>,
    cost: DMatrix<f64>,
    delay: DelayPmf,
    z_max: u32,
}

impl MarkovControlModel {
    /// Validates a raw model description. On failure the error lists every
    /// violated invariant.
    pub fn new(
        kernels: Vec<DMatrix<f64>>,
        cost: DMatrix<f64>,
        delay: DelayPmf,
        z_max: u32,
    ) -> Result<Self, ModelError> {
        let mut violations = Vec::new();
        if kernels.is_empty() {
            violations.push(ModelViolation::Empty("action set"));
        }
        let n = cost.nrows();
        if n == 0 {
            violations.push(ModelViolation::Empty("state set"));
        }
        if cost.ncols() != kernels.len() {
            violations.push(ModelViolation::DimensionMismatch(format!(
                "cost table has {} action columns but {} kernels given",
                cost.ncols(),
                kernels.len()
            )));
        }
        for (a, p) in kernels.iter().enumerate() {
            if p.nrows() != n || p.ncols() != n {
                violations.push(ModelViolation::DimensionMismatch(format!(
                    "kernel for action {a} is {}x{}, expected {n}x{n}",
                    p.nrows(),
                    p.ncols()
                )));
                continue;
            }
            for row in 0..n {
                let mut sum = 0.0;
                for col in 0..n {
                    let v = p[(row, col)];
                    if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                        violations.push(ModelViolation::NegativeProbability {
                            action: a,
                            row,
                            col,
                            value: v,
                        });
                    }
                    sum += v;
                }
                if (sum - 1.0).abs() > STOCHASTIC_TOL {
                    violations.push(ModelViolation::NonStochasticRow {
                        action: a,
                        row,
                        sum,
                    });
                }
            }
        }
        for s in 0..cost.nrows() {
            for a in 0..cost.ncols() {
                let v = cost[(s, a)];
                if !v.is_finite() {
                    violations.push(ModelViolation::NonFiniteCost {
                        state: s,
                        action: a,
                        value: v,
                    });
                }
            }
        }
        if violations.is_empty() {
            Ok(Self {
                kernels,
                cost,
                delay,
                z_max,
            })
        } else {
            Err(ModelError { violations })
        }
    }

    pub fn state_count(&self) -> usize {
        self.cost.nrows()
    }

    pub fn action_count(&self) -> usize {
        self.kernels.len()
    }

    pub fn kernel(&self, action: usize) -> &DMatrix<f64> {
        &self.kernels[action]
    }

    pub fn kernels(&self) -> &[DMatrix<f64>] {
        &self.kernels
    }

    pub fn cost(&self, state: usize, action: usize) -> f64 {
        self.cost[(state, action)]
    }

    pub fn cost_table(&self) -> &DMatrix<f64> {
        &self.cost
    }

    pub fn min_cost(&self) -> f64 {
        self.cost.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn delay(&self) -> &DelayPmf {
        &self.delay
    }

    pub fn z_max(&self) -> u32 {
        self.z_max
    }

    /// Same model with a different delay pmf (used by p-sweeps).
    pub fn with_delay(&self, delay: DelayPmf) -> Self {
        Self {
            kernels: self.kernels.clone(),
            cost: self.cost.clone(),
            delay,
            z_max: self.z_max,
        }
    }
}

/// The sufficient statistic the decision maker acts on: the sampled source
/// state, the realized delay of that sample, and the previous control action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AugmentedState {
    pub source_state: usize,
    pub delay: u32,
    pub prev_action: usize,
}

/// One joint decision: how long to wait before the next sample, and which
/// control action to hold for the coming frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Decision {
    pub wait: u32,
    pub action: usize,
}

/// Fixed lexicographic enumeration of (source_state, delay, prev_action)
/// triples. Index arithmetic keeps traces and CSV output reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSpace {
    source_count: usize,
    delays: Vec<u32>,
    action_count: usize,
}

impl AugmentedSpace {
    pub fn from_model(model: &MarkovControlModel) -> Self {
        Self {
            source_count: model.state_count(),
            delays: model.delay().support().to_vec(),
            action_count: model.action_count(),
        }
    }

    pub fn len(&self) -> usize {
        self.source_count * self.delays.len() * self.action_count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn delay_count(&self) -> usize {
        self.delays.len()
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn source_count(&self) -> usize {
        self.source_count
    }

    pub fn delay_index(&self, delay: u32) -> Option<usize> {
        self.delays.binary_search(&delay).ok()
    }

    pub fn state_at(&self, index: usize) -> AugmentedState {
        debug_assert!(index < self.len());
        let a = index % self.action_count;
        let rest = index / self.action_count;
        let d = rest % self.delays.len();
        let s = rest / self.delays.len();
        AugmentedState {
            source_state: s,
            delay: self.delays[d],
            prev_action: a,
        }
    }

    pub fn index_of(&self, state: &AugmentedState) -> Option<usize> {
        if state.source_state >= self.source_count || state.prev_action >= self.action_count {
            return None;
        }
        let d = self.delay_index(state.delay)?;
        Some((state.source_state * self.delays.len() + d) * self.action_count + state.prev_action)
    }

    pub fn states(&self) -> Vec<AugmentedState> {
        (0..self.len()).map(|i| self.state_at(i)).collect()
    }
}

/// Lists all augmented states in lexicographic (source_state, delay,
/// prev_action) order; length |S|*|Y|*|A|.
pub fn enumerate_augmented_states(model: &MarkovControlModel) -> Vec<AugmentedState> {
    AugmentedSpace::from_model(model).states()
}

/// Mean of a delay pmf.
pub fn delay_expectation(pmf: &DelayPmf) -> f64 {
    pmf.mean()
}

/// Deterministic map from every augmented state to a decision, stored by
/// state index in the lexicographic enumeration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagePolicy {
    decisions: Vec<Decision>,
}

impl StagePolicy {
    pub fn new(decisions: Vec<Decision>) -> Self {
        Self { decisions }
    }

    pub fn decision(&self, state_index: usize) -> Decision {
        self.decisions[state_index]
    }

    pub fn decisions(&self) -> &[Decision] {
        &self.decisions
    }

    pub fn len(&self) -> usize {
        self.decisions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decisions.is_empty()
    }

    /// True if any state waits the full cap, which signals possible
    /// truncation bias in the chosen z_max.
    pub fn hits_wait_cap(&self, z_max: u32) -> bool {
        z_max > 0 && self.decisions.iter().any(|d| d.wait == z_max)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use nalgebra::dmatrix;

    pub(crate) fn case_study_model(p: f64, z_max: u32) -> MarkovControlModel {
        let p0 = dmatrix![0.9, 0.1; 0.1, 0.9];
        let p1 = dmatrix![0.6, 0.4; 0.01, 0.99];
        let cost = dmatrix![40.0, 60.0; 0.0, 20.0];
        let delay = DelayPmf::two_point(p, 1, 10).unwrap();
        MarkovControlModel::new(vec![p0, p1], cost, delay, z_max).unwrap()
    }

    #[test]
    fn case_study_model_validates() {
        let m = case_study_model(0.5, 20);
        assert_eq!(m.state_count(), 2);
        assert_eq!(m.action_count(), 2);
        assert_eq!(m.z_max(), 20);
        assert_eq!(m.min_cost(), 0.0);
    }

    #[test]
    fn non_stochastic_row_is_reported() {
        let p0 = dmatrix![0.9, 0.2; 0.1, 0.9];
        let p1 = dmatrix![0.5, 0.5; 0.5, 0.5];
        let cost = dmatrix![1.0, 1.0; 1.0, 1.0];
        let delay = DelayPmf::degenerate(1).unwrap();
        let err = MarkovControlModel::new(vec![p0, p1], cost, delay, 5).unwrap_err();
        assert!(err.contains(|v| matches!(
            v,
            ModelViolation::NonStochasticRow {
                action: 0,
                row: 0,
                ..
            }
        )));
    }

    #[test]
    fn zero_delay_support_is_rejected() {
        let err = DelayPmf::new(vec![0, 10], vec![0.5, 0.5]).unwrap_err();
        assert!(err.contains(|v| matches!(v, ModelViolation::ZeroOrNegativeDelaySupport { .. })));
    }

    #[test]
    fn unnormalized_pmf_is_rejected() {
        let err = DelayPmf::new(vec![1, 10], vec![0.5, 0.4]).unwrap_err();
        assert!(err.contains(|v| matches!(v, ModelViolation::PmfNotNormalized { .. })));
    }

    #[test]
    fn unsorted_support_is_rejected() {
        let err = DelayPmf::new(vec![10, 1], vec![0.5, 0.5]).unwrap_err();
        assert!(err.contains(|v| matches!(v, ModelViolation::NonIncreasingDelaySupport { .. })));
    }

    #[test]
    fn non_finite_cost_is_rejected() {
        let p0 = dmatrix![1.0, 0.0; 0.0, 1.0];
        let cost = dmatrix![f64::NAN; 0.0];
        let err = MarkovControlModel::new(vec![p0], cost, DelayPmf::degenerate(1).unwrap(), 0)
            .unwrap_err();
        assert!(err.contains(|v| matches!(v, ModelViolation::NonFiniteCost { .. })));
    }

    #[test]
    fn dimension_mismatches_are_rejected() {
        let p0 = dmatrix![0.9, 0.1; 0.1, 0.9];
        let wrong = DMatrix::from_element(3, 3, 1.0 / 3.0);
        let cost = dmatrix![1.0, 1.0; 1.0, 1.0];
        let delay = DelayPmf::degenerate(1).unwrap();
        let err =
            MarkovControlModel::new(vec![p0.clone(), wrong], cost, delay.clone(), 0).unwrap_err();
        assert!(err.contains(|v| matches!(v, ModelViolation::DimensionMismatch(_))));

        // Cost table with the wrong number of action columns.
        let cost = DMatrix::from_element(2, 3, 1.0);
        let err = MarkovControlModel::new(vec![p0.clone(), p0], cost, delay, 0).unwrap_err();
        assert!(err.contains(|v| matches!(v, ModelViolation::DimensionMismatch(_))));
    }

    #[test]
    fn all_violations_are_collected() {
        let p0 = dmatrix![0.9, 0.2; -0.1, 0.9];
        let cost = dmatrix![f64::INFINITY, 1.0; 1.0, 1.0];
        let delay = DelayPmf::degenerate(1).unwrap();
        let err = MarkovControlModel::new(vec![p0.clone(), p0], cost, delay, 0).unwrap_err();
        assert!(err.violations.len() >= 4);
        assert!(err.contains(|v| matches!(v, ModelViolation::NonFiniteCost { .. })));
        assert!(err.contains(|v| matches!(v, ModelViolation::NegativeProbability { .. })));
    }

    #[test]
    fn augmented_enumeration_counts() {
        assert_eq!(
            enumerate_augmented_states(&case_study_model(0.5, 20)).len(),
            8
        );

        let m = case_study_model(1.0, 20); // degenerate delay
        assert_eq!(enumerate_augmented_states(&m).len(), 4);

        let p = DMatrix::from_element(3, 3, 1.0 / 3.0);
        let cost = DMatrix::zeros(3, 2);
        let delay = DelayPmf::new(vec![1, 2, 3, 4], vec![0.25; 4]).unwrap();
        let m = MarkovControlModel::new(vec![p.clone(), p], cost, delay, 3).unwrap();
        assert_eq!(enumerate_augmented_states(&m).len(), 24);
    }

    #[test]
    fn enumeration_is_lexicographic_and_bijective() {
        let m = case_study_model(0.5, 4);
        let space = AugmentedSpace::from_model(&m);
        let states = space.states();
        assert_eq!(
            states[0],
            AugmentedState {
                source_state: 0,
                delay: 1,
                prev_action: 0
            }
        );
        assert_eq!(
            states[1],
            AugmentedState {
                source_state: 0,
                delay: 1,
                prev_action: 1
            }
        );
        assert_eq!(
            states[2],
            AugmentedState {
                source_state: 0,
                delay: 10,
                prev_action: 0
            }
        );
        assert_eq!(
            states[7],
            AugmentedState {
                source_state: 1,
                delay: 10,
                prev_action: 1
            }
        );
        for (i, g) in states.iter().enumerate() {
            assert_eq!(space.index_of(g), Some(i));
        }
        assert_eq!(
            space.index_of(&AugmentedState {
                source_state: 0,
                delay: 3,
                prev_action: 0
            }),
            None
        );
    }

    #[test]
    fn delay_expectation_examples() {
        let pmf = DelayPmf::two_point(0.5, 1, 10).unwrap();
        assert!((delay_expectation(&pmf) - 5.5).abs() < 1e-12);
        let pmf = DelayPmf::degenerate(1).unwrap();
        assert_eq!(delay_expectation(&pmf), 1.0);
        let pmf = DelayPmf::two_point(0.9, 1, 10).unwrap();
        assert!((delay_expectation(&pmf) - 1.9).abs() < 1e-12);
    }

    #[test]
    fn two_point_collapses_at_p_one() {
        let pmf = DelayPmf::two_point(1.0, 1, 10).unwrap();
        assert_eq!(pmf.support(), &[1]);
        assert_eq!(pmf.probs(), &[1.0]);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn space_strategy() -> impl Strategy<Value = AugmentedSpace> {
            (1usize..5, 1usize..5, 1usize..4).prop_flat_map(|(s, y, a)| {
                proptest::collection::vec(1u32..20, y).prop_map(move |mut delays| {
                    delays.sort_unstable();
                    delays.dedup();
                    AugmentedSpace {
                        source_count: s,
                        delays,
                        action_count: a,
                    }
                })
            })
        }

        proptest! {
            #[test]
            fn enumeration_round_trips(space in space_strategy()) {
                for (i, g) in space.states().iter().enumerate() {
                    prop_assert_eq!(space.index_of(g), Some(i));
                    prop_assert_eq!(&space.state_at(i), g);
                }
                prop_assert_eq!(
                    space.len(),
                    space.source_count() * space.delay_count() * space.action_count()
                );
            }

            #[test]
            fn two_point_pmfs_always_validate(
                p in 0.001f64..=1.0,
                y_low in 1u32..10,
                gap in 1u32..10,
            ) {
                let pmf = DelayPmf::two_point(p, y_low, y_low + gap).unwrap();
                let total: f64 = pmf.probs().iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
                prop_assert!(pmf.mean() >= f64::from(y_low));
                prop_assert!(pmf.mean() <= f64::from(y_low + gap));
            }
        }
    }
}
