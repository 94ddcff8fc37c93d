//! Construction of the equivalent delay-free MDP over augmented states
//! G = (sampled source state, realized delay, previous action) with joint
//! decisions (wait Z, action A).
//!
//! The transition kernel factorizes as
//! `Pr(Y=delta') * [P_a^delta * P_A^Z]_{s,s'} * 1{a'=A}`, and the expected
//! frame cost accumulates the per-slot cost over the whole frame
//! `[D_i, D_{i+1})` while the chosen action is held fixed. Everything is
//! materialized up front: the tables are small at desk scale and one build
//! serves every value of the cost-rate parameter lambda.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::model::{AugmentedSpace, AugmentedState, Decision, MarkovControlModel};

/// Tolerance for "derived rows sum to one" checks. Violations are reported,
/// never silently renormalized.
pub const KERNEL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AugmentationError {
    #[error("cached power {power} of kernel {action}: row {row} sums to {sum:.12}")]
    NonStochasticPower {
        action: usize,
        power: u32,
        row: usize,
        sum: f64,
    },
    #[error("kernel row for augmented state {state}, decision {decision} sums to {sum:.12}")]
    NonStochasticKernelRow {
        state: usize,
        decision: usize,
        sum: f64,
    },
    #[error("expected frame cost for augmented state {state}, decision {decision} is not finite")]
    NonFiniteFrameCost { state: usize, decision: usize },
}

/// Memoized matrix powers P_a^k for k = 0 ..= max(delay support) + z_max.
#[derive(Debug, Clone)]
pub struct MatrixPowerCache {
    powers: Vec<Vec<DMatrix<f64>>>,
}

impl MatrixPowerCache {
    pub fn build(model: &MarkovControlModel, max_power: u32) -> Result<Self, AugmentationError> {
        let n = model.state_count();
        let mut powers = Vec::with_capacity(model.action_count());
        for (a, p) in model.kernels().iter().enumerate() {
            let mut per_action = Vec::with_capacity(max_power as usize + 1);
            per_action.push(DMatrix::identity(n, n));
            for k in 1..=max_power {
                let next = per_action.last().unwrap() * p;
                for row in 0..n {
                    let sum: f64 = next.row(row).iter().sum();
                    if (sum - 1.0).abs() > KERNEL_TOL {
                        return Err(AugmentationError::NonStochasticPower {
                            action: a,
                            power: k,
                            row,
                            sum,
                        });
                    }
                }
                per_action.push(next);
            }
            powers.push(per_action);
        }
        Ok(Self { powers })
    }

    /// Builds a cache deep enough for every kernel and frame-cost query of
    /// the given model.
    pub fn for_model(model: &MarkovControlModel) -> Result<Self, AugmentationError> {
        Self::build(model, model.delay().max_delay() + model.z_max())
    }

    pub fn max_power(&self) -> u32 {
        self.powers[0].len() as u32 - 1
    }

    pub fn power(&self, action: usize, k: u32) -> &DMatrix<f64> {
        &self.powers[action][k as usize]
    }
}

/// One-step transition distribution of the augmented chain from `g` under
/// `decision`, as a dense vector over the lexicographic state enumeration.
pub fn transition_kernel(
    model: &MarkovControlModel,
    cache: &MatrixPowerCache,
    g: &AugmentedState,
    decision: Decision,
) -> Vec<f64> {
    let space = AugmentedSpace::from_model(model);
    let source_row = source_row_after(model, cache, g, decision);
    let mut out = vec![0.0; space.len()];
    for (dy, &py) in model.delay().probs().iter().enumerate() {
        for (sp, &mass) in source_row.iter().enumerate() {
            let idx = (sp * space.delay_count() + dy) * space.action_count() + decision.action;
            out[idx] = py * mass;
        }
    }
    out
}

/// Distribution of the next sampled source state: row s of
/// P_a^delta * P_A^Z.
fn source_row_after(
    model: &MarkovControlModel,
    cache: &MatrixPowerCache,
    g: &AugmentedState,
    decision: Decision,
) -> Vec<f64> {
    let n = model.state_count();
    let pd = cache.power(g.prev_action, g.delay);
    let pz = cache.power(decision.action, decision.wait);
    let mut row = vec![0.0; n];
    for sp in 0..n {
        let mut acc = 0.0;
        for k in 0..n {
            acc += pd[(g.source_state, k)] * pz[(k, sp)];
        }
        row[sp] = acc;
    }
    row
}

/// Exact expected cost accumulated over one frame: the sampled state is
/// propagated `delay` steps under the previous action, then the per-slot
/// cost of holding `decision.action` is summed over the `Z + Y'` slots of
/// the frame, averaged over the next delay Y'.
pub fn expected_frame_cost(
    model: &MarkovControlModel,
    cache: &MatrixPowerCache,
    g: &AugmentedState,
    decision: Decision,
) -> f64 {
    let n = model.state_count();
    let base = cache.power(g.prev_action, g.delay);
    let mut row: Vec<f64> = (0..n).map(|k| base[(g.source_state, k)]).collect();
    let horizon = decision.wait + model.delay().max_delay();
    // prefix[l] = expected cost of the first l slots of the frame.
    let mut prefix = Vec::with_capacity(horizon as usize + 1);
    prefix.push(0.0);
    let p_act = model.kernel(decision.action);
    for _ in 0..horizon {
        let slot_cost: f64 = row
            .iter()
            .enumerate()
            .map(|(s, &w)| w * model.cost(s, decision.action))
            .sum();
        prefix.push(prefix.last().unwrap() + slot_cost);
        row = advance(&row, p_act);
    }
    model
        .delay()
        .support()
        .iter()
        .zip(model.delay().probs())
        .map(|(&y, &py)| py * prefix[(decision.wait + y) as usize])
        .sum()
}

fn advance(row: &[f64], p: &DMatrix<f64>) -> Vec<f64> {
    let n = row.len();
    let mut next = vec![0.0; n];
    for (k, &w) in row.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for sp in 0..n {
            next[sp] += w * p[(k, sp)];
        }
    }
    next
}

/// The fully materialized delay-free MDP: dense kernel, expected frame
/// costs q, and frame lengths f. The cost-rate parameter lambda enters only
/// through [`AugmentedMdp::stage_cost`], so one build serves all lambda.
#[derive(Debug, Clone)]
pub struct AugmentedMdp {
    model: MarkovControlModel,
    space: AugmentedSpace,
    decisions: Vec<Decision>,
    kernel: Vec<f64>,
    q: Vec<f64>,
    f: Vec<f64>,
}

impl AugmentedMdp {
    pub fn build(model: &MarkovControlModel) -> Result<Self, AugmentationError> {
        let space = AugmentedSpace::from_model(model);
        let n_states = space.len();
        let n_actions = model.action_count();
        let z_max = model.z_max();
        let decisions: Vec<Decision> = (0..=z_max)
            .flat_map(|wait| (0..n_actions).map(move |action| Decision { wait, action }))
            .collect();
        let n_decisions = decisions.len();
        let delay_probs = model.delay().probs().to_vec();
        let delay_support = model.delay().support().to_vec();
        let mean_delay = model.delay().mean();
        let horizon = z_max + model.delay().max_delay();

        let cache = MatrixPowerCache::for_model(model)?;
        let mut kernel = vec![0.0; n_states * n_decisions * n_states];
        let mut q = vec![0.0; n_states * n_decisions];

        for g_idx in 0..n_states {
            let g = space.state_at(g_idx);
            let base = cache.power(g.prev_action, g.delay);
            let r0: Vec<f64> = (0..model.state_count())
                .map(|k| base[(g.source_state, k)])
                .collect();
            for action in 0..n_actions {
                let p_act = model.kernel(action);
                let cost_col: Vec<f64> = (0..model.state_count())
                    .map(|s| model.cost(s, action))
                    .collect();
                // One sweep over frame offsets t yields both the sampled-state
                // rows r0 * P_A^t (the kernel's source factor at t = Z) and the
                // prefix sums of per-slot expected cost shared by all Z.
                let mut row = r0.clone();
                let mut srows: Vec<Vec<f64>> = Vec::with_capacity(z_max as usize + 1);
                let mut prefix = Vec::with_capacity(horizon as usize + 1);
                prefix.push(0.0);
                for t in 0..=horizon {
                    if t <= z_max {
                        srows.push(row.clone());
                    }
                    if t < horizon {
                        let slot_cost: f64 = row.iter().zip(&cost_col).map(|(&w, &c)| w * c).sum();
                        prefix.push(prefix.last().unwrap() + slot_cost);
                        row = advance(&row, p_act);
                    }
                }
                for wait in 0..=z_max {
                    let d_idx = wait as usize * n_actions + action;
                    let q_val: f64 = delay_support
                        .iter()
                        .zip(&delay_probs)
                        .map(|(&y, &py)| py * prefix[(wait + y) as usize])
                        .sum();
                    if !q_val.is_finite() {
                        return Err(AugmentationError::NonFiniteFrameCost {
                            state: g_idx,
                            decision: d_idx,
                        });
                    }
                    q[g_idx * n_decisions + d_idx] = q_val;

                    let out = &mut kernel[(g_idx * n_decisions + d_idx) * n_states..][..n_states];
                    let srow = &srows[wait as usize];
                    let mut sum = 0.0;
                    for (dy, &py) in delay_probs.iter().enumerate() {
                        for (sp, &mass) in srow.iter().enumerate() {
                            let v = py * mass;
                            out[(sp * space.delay_count() + dy) * n_actions + action] = v;
                            sum += v;
                        }
                    }
                    if (sum - 1.0).abs() > KERNEL_TOL {
                        return Err(AugmentationError::NonStochasticKernelRow {
                            state: g_idx,
                            decision: d_idx,
                            sum,
                        });
                    }
                }
            }
        }

        let f = (0..=z_max).map(|z| f64::from(z) + mean_delay).collect();
        Ok(Self {
            model: model.clone(),
            space,
            decisions,
            kernel,
            q,
            f,
        })
    }

    pub fn model(&self) -> &MarkovControlModel {
        &self.model
    }

    pub fn space(&self) -> &AugmentedSpace {
        &self.space
    }

    pub fn decisions(&self) -> &[Decision] {
        &self.decisions
    }

    pub fn decision_count(&self) -> usize {
        self.decisions.len()
    }

    /// Index of a decision in the lexicographic (wait, action) ordering.
    pub fn decision_index(&self, d: Decision) -> Option<usize> {
        if d.wait > self.model.z_max() || d.action >= self.model.action_count() {
            return None;
        }
        Some(d.wait as usize * self.model.action_count() + d.action)
    }

    pub fn kernel_row(&self, state: usize, decision: usize) -> &[f64] {
        let n = self.space.len();
        &self.kernel[(state * self.decisions.len() + decision) * n..][..n]
    }

    /// Expected frame cost q(G, Z, A).
    pub fn q(&self, state: usize, decision: usize) -> f64 {
        self.q[state * self.decisions.len() + decision]
    }

    /// Expected frame length f(Z) = Z + mean delay.
    pub fn f_of_wait(&self, wait: u32) -> f64 {
        self.f[wait as usize]
    }

    pub fn f_of_decision(&self, decision: usize) -> f64 {
        self.f[self.decisions[decision].wait as usize]
    }

    /// Stage cost g(G, Z, A; lambda) = q - lambda * f.
    pub fn stage_cost(&self, state: usize, decision: usize, lambda: f64) -> f64 {
        self.q(state, decision) - lambda * self.f_of_decision(decision)
    }

    /// E[values(G') | G, decision] under the kernel.
    pub fn expected_value(&self, state: usize, decision: usize, values: &[f64]) -> f64 {
        self.kernel_row(state, decision)
            .iter()
            .zip(values)
            .map(|(&p, &v)| p * v)
            .sum()
    }
}
