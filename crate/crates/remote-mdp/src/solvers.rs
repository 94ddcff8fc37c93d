//! Average-cost solvers for the delay-free MDP and the root search for the
//! optimal cost rate h*.
//!
//! Two independent routes are provided. `bisec_mrvi` is the two-layer
//! route: an outer bisection on the cost-rate parameter lambda, with a
//! damped relative value iteration (MRVI) computing U(lambda) inside.
//! `fpbi_solve` is the one-layer route: it treats U(h*) = 0 as a constraint
//! and iterates the coupled fixed-point equations directly, updating the
//! cost-rate estimate from the ratio equation at the reference state and
//! the relative values from a Bellman-style backup. Both return the same
//! root because U has a unique zero and sign(U(lambda)) = sign(h* - lambda).

use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::analysis::{self, AnalysisError};
use crate::augmentation::AugmentedMdp;
use crate::model::{Decision, StagePolicy};

/// Tolerance band before the sign of U at a bisection bound is declared
/// inconsistent with the a-priori bounds.
pub const BOUNDS_SIGN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("bisection bound check failed: U({lambda:.9}) = {u:.3e} has the wrong sign")]
    BoundsInverted { lambda: f64, u: f64 },
    #[error("solver did not converge within {iterations} iterations")]
    MaxIterationsExceeded { iterations: usize },
    #[error("value table became non-finite at iteration {iteration}")]
    NonFiniteValue { iteration: usize },
    #[error(transparent)]
    NotUnichain(#[from] AnalysisError),
    #[error(
        "policy enumeration refused: {states} states x {decisions} decisions exceeds budget {budget}"
    )]
    OracleTooLarge {
        states: usize,
        decisions: usize,
        budget: usize,
    },
    #[error("restricted decision set for state {state} is empty")]
    EmptyDecisionSet { state: usize },
}

/// Relative values W indexed by augmented state, pinned to W(ref_state) = 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelativeValueTable {
    pub values: Vec<f64>,
    pub ref_state: usize,
}

impl RelativeValueTable {
    /// Pins the table so the reference entry is exactly zero.
    pub fn new(mut values: Vec<f64>, ref_state: usize) -> Self {
        let shift = values[ref_state];
        for v in values.iter_mut() {
            *v -= shift;
        }
        values[ref_state] = 0.0;
        Self { values, ref_state }
    }
}

/// One outer-iteration record: the current lambda (Bisec-MRVI) or h (FPBI)
/// together with the convergence metric of that step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEntry {
    pub iteration: usize,
    /// Cumulative full value-update sweeps over the state space so far.
    pub cumulative_sweeps: usize,
    /// Current lambda (with U(lambda) in `metric`) or current h estimate.
    pub value: f64,
    pub metric: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub algorithm: String,
    pub h_star: f64,
    pub policy: StagePolicy,
    pub values: RelativeValueTable,
    pub trace: Vec<TraceEntry>,
    /// Total full value-update sweeps across the whole solve.
    pub sweeps: usize,
    pub wall_clock_secs: f64,
    pub converged: bool,
    /// True when the returned policy waits the full cap somewhere, which
    /// signals possible truncation bias in z_max.
    pub wait_cap_hit: bool,
}

/// Options for the damped relative value iteration.
#[derive(Debug, Clone, Copy)]
pub struct MrviOptions {
    /// Span-seminorm convergence threshold on successive damped backups.
    pub tol: f64,
    /// Damping factor tau in (0, 1]; 0.5 keeps the iteration convergent on
    /// periodic chains.
    pub damping: f64,
    pub max_sweeps: usize,
}

impl Default for MrviOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            damping: 0.5,
            max_sweeps: 100_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MrviResult {
    /// Average cost U(lambda) of the lambda-parameterized MDP.
    pub u_lambda: f64,
    pub values: RelativeValueTable,
    pub policy: StagePolicy,
    pub sweeps: usize,
    /// False when the sweep budget ran out; the result is then best-effort.
    pub converged: bool,
}

const REF_STATE: usize = 0;

/// Minimum of the lambda-stage-cost Bellman backup at one state, over the
/// given decision indices. Ties resolve to the lexicographically smallest
/// (wait, action) because decision indices are ordered that way.
fn bellman_min(
    mdp: &AugmentedMdp,
    state: usize,
    lambda: f64,
    values: &[f64],
    decisions: &[usize],
) -> (f64, usize) {
    let mut best = f64::INFINITY;
    let mut best_d = decisions[0];
    for &d in decisions {
        let v = mdp.stage_cost(state, d, lambda) + mdp.expected_value(state, d, values);
        if v < best {
            best = v;
            best_d = d;
        }
    }
    (best, best_d)
}

/// Damped relative value iteration for the MDP with stage cost
/// g(.; lambda) = q - lambda * f. Returns the average cost U(lambda), the
/// converged relative values, and the greedy policy.
pub fn mrvi_solve(mdp: &AugmentedMdp, lambda: f64, opts: &MrviOptions) -> MrviResult {
    assert!(
        opts.damping > 0.0 && opts.damping <= 1.0,
        "damping in (0,1]"
    );
    assert!(opts.tol > 0.0, "tolerance must be positive");
    let n = mdp.space().len();
    let all: Vec<usize> = (0..mdp.decision_count()).collect();
    let tau = opts.damping;

    let mut values = vec![0.0; n];
    let mut backup = vec![0.0; n];
    let mut greedy = vec![0usize; n];
    let mut u = f64::NAN;
    let mut converged = false;
    let mut sweeps = 0;

    while sweeps < opts.max_sweeps {
        sweeps += 1;
        for g in 0..n {
            let (b, d) = bellman_min(mdp, g, lambda, &values, &all);
            backup[g] = b;
            greedy[g] = d;
        }
        // The previous iterate is pinned to zero at the reference state, so
        // the backup there is the current average-cost estimate.
        u = backup[REF_STATE];
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for g in 0..n {
            let damped = (1.0 - tau) * values[g] + tau * backup[g];
            let diff = damped - values[g];
            lo = lo.min(diff);
            hi = hi.max(diff);
            values[g] = damped;
        }
        let shift = values[REF_STATE];
        for v in values.iter_mut() {
            *v -= shift;
        }
        if hi - lo < opts.tol {
            converged = true;
            break;
        }
    }

    let decisions: Vec<Decision> = greedy.iter().map(|&d| mdp.decisions()[d]).collect();
    MrviResult {
        u_lambda: u,
        values: RelativeValueTable::new(values, REF_STATE),
        policy: StagePolicy::new(decisions),
        sweeps,
        converged,
    }
}

/// Two-layer solver: bisection on lambda over the a-priori bounds, with
/// MRVI evaluating U(lambda) at each midpoint. Stops when the interval is
/// narrower than `epsilon` and reports the final midpoint as h*.
pub fn bisec_mrvi(
    mdp: &AugmentedMdp,
    epsilon: f64,
    opts: &MrviOptions,
) -> Result<SolveReport, SolveError> {
    assert!(epsilon > 0.0, "epsilon must be positive");
    let start = Instant::now();
    let (mut lo, mut hi) = analysis::h_star_bounds(mdp.model())?;
    let mut trace = Vec::new();
    let mut sweeps = 0;
    let mut iteration = 0;
    let mut converged = true;

    let run = |lambda: f64,
               sweeps: &mut usize,
               iteration: &mut usize,
               trace: &mut Vec<TraceEntry>,
               converged: &mut bool| {
        let r = mrvi_solve(mdp, lambda, opts);
        *sweeps += r.sweeps;
        *iteration += 1;
        *converged &= r.converged;
        trace.push(TraceEntry {
            iteration: *iteration,
            cumulative_sweeps: *sweeps,
            value: lambda,
            metric: r.u_lambda,
        });
        r
    };

    if hi - lo >= epsilon {
        // The bounds guarantee U(lo) >= 0 >= U(hi); a violation beyond the
        // tolerance band means the kernel or cost tables are inconsistent.
        // The band cannot be tighter than the inner solver's own accuracy,
        // which the span stopping rule caps at tol / damping.
        let sign_tol = BOUNDS_SIGN_TOL.max(opts.tol / opts.damping);
        let r_lo = run(lo, &mut sweeps, &mut iteration, &mut trace, &mut converged);
        if r_lo.u_lambda < -sign_tol {
            return Err(SolveError::BoundsInverted {
                lambda: lo,
                u: r_lo.u_lambda,
            });
        }
        let r_hi = run(hi, &mut sweeps, &mut iteration, &mut trace, &mut converged);
        if r_hi.u_lambda > sign_tol {
            return Err(SolveError::BoundsInverted {
                lambda: hi,
                u: r_hi.u_lambda,
            });
        }
    }

    while hi - lo >= epsilon {
        let mid = 0.5 * (lo + hi);
        let r = run(mid, &mut sweeps, &mut iteration, &mut trace, &mut converged);
        if r.u_lambda > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let h_star = 0.5 * (lo + hi);
    let fin = run(
        h_star,
        &mut sweeps,
        &mut iteration,
        &mut trace,
        &mut converged,
    );
    let wait_cap_hit = fin.policy.hits_wait_cap(mdp.model().z_max());
    Ok(SolveReport {
        algorithm: "bisec-mrvi".to_string(),
        h_star,
        policy: fin.policy,
        values: fin.values,
        trace,
        sweeps,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        converged,
        wait_cap_hit,
    })
}

/// Per-state decision sets for restricted solves; `None` means every
/// decision is allowed everywhere.
fn full_sets(mdp: &AugmentedMdp) -> Vec<usize> {
    (0..mdp.decision_count()).collect()
}

/// One-layer fixed-point iteration: alternates the ratio equation at the
/// reference state (updating h) with a Bellman-style backup of the relative
/// values at stage cost g(.; h), re-pinning W(ref) = 0 after each sweep.
/// Converges when successive value tables differ by less than `epsilon` in
/// sup-norm.
pub fn fpbi_solve(
    mdp: &AugmentedMdp,
    epsilon: f64,
    max_iterations: usize,
) -> Result<SolveReport, SolveError> {
    fpbi_core(mdp, None, epsilon, max_iterations, "fpbi")
}

/// FPBI with the decision set at each augmented state restricted to the
/// given decision indices (used for the fixed-sampling benchmarks).
pub fn fpbi_solve_restricted(
    mdp: &AugmentedMdp,
    allowed: &[Vec<usize>],
    epsilon: f64,
    max_iterations: usize,
) -> Result<SolveReport, SolveError> {
    assert_eq!(allowed.len(), mdp.space().len());
    for (g, set) in allowed.iter().enumerate() {
        if set.is_empty() {
            return Err(SolveError::EmptyDecisionSet { state: g });
        }
    }
    fpbi_core(
        mdp,
        Some(allowed),
        epsilon,
        max_iterations,
        "fpbi-restricted",
    )
}

fn fpbi_core(
    mdp: &AugmentedMdp,
    allowed: Option<&[Vec<usize>]>,
    epsilon: f64,
    max_iterations: usize,
    label: &str,
) -> Result<SolveReport, SolveError> {
    assert!(epsilon > 0.0, "epsilon must be positive");
    let start = Instant::now();
    let n = mdp.space().len();
    let all = full_sets(mdp);
    let sets = |g: usize| -> &[usize] {
        match allowed {
            Some(a) => &a[g],
            None => &all,
        }
    };

    let mut w = vec![0.0; n];
    let mut w_next = vec![0.0; n];
    let mut trace = Vec::new();
    let mut h = f64::NAN;
    let mut converged = false;
    let mut sweeps = 0;

    for k in 1..=max_iterations {
        // Ratio equation at the reference state.
        h = f64::INFINITY;
        for &d in sets(REF_STATE) {
            let num = mdp.q(REF_STATE, d) + mdp.expected_value(REF_STATE, d, &w);
            h = h.min(num / mdp.f_of_decision(d));
        }
        // Bellman-style backup at stage cost g(.; h).
        for (g, slot) in w_next.iter_mut().enumerate() {
            let (b, _) = bellman_min(mdp, g, h, &w, sets(g));
            *slot = b;
        }
        let shift = w_next[REF_STATE];
        let mut metric = 0.0f64;
        for g in 0..n {
            w_next[g] -= shift;
            metric = metric.max((w_next[g] - w[g]).abs());
        }
        w_next[REF_STATE] = 0.0;
        if !h.is_finite() || w_next.iter().any(|v| !v.is_finite()) {
            return Err(SolveError::NonFiniteValue { iteration: k });
        }
        std::mem::swap(&mut w, &mut w_next);
        sweeps = k;
        trace.push(TraceEntry {
            iteration: k,
            cumulative_sweeps: sweeps,
            value: h,
            metric,
        });
        if metric < epsilon {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(SolveError::MaxIterationsExceeded {
            iterations: max_iterations,
        });
    }

    let decisions: Vec<Decision> = (0..n)
        .map(|g| {
            let (_, d) = bellman_min(mdp, g, h, &w, sets(g));
            mdp.decisions()[d]
        })
        .collect();
    let policy = StagePolicy::new(decisions);
    let wait_cap_hit = policy.hits_wait_cap(mdp.model().z_max());
    Ok(SolveReport {
        algorithm: label.to_string(),
        h_star: h,
        policy,
        values: RelativeValueTable::new(w, REF_STATE),
        trace,
        sweeps,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        converged,
        wait_cap_hit,
    })
}

/// Long-run average cost of one fixed stationary policy by renewal-reward
/// over the induced augmented chain: `E_pi[q] / E_pi[f]`.
pub fn evaluate_policy_average_cost(
    mdp: &AugmentedMdp,
    policy: &StagePolicy,
) -> Result<f64, SolveError> {
    let m = analysis::induced_chain_matrix(mdp, policy);
    let pi = analysis::stationary_distribution(&m)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (g, &weight) in pi.iter().enumerate() {
        let d = mdp
            .decision_index(policy.decision(g))
            .expect("policy decision outside the decision set");
        num += weight * mdp.q(g, d);
        den += weight * mdp.f_of_decision(d);
    }
    Ok(num / den)
}

#[derive(Debug, Clone)]
pub struct BruteForceReport {
    pub best_cost: f64,
    pub best_policy: StagePolicy,
    pub policies_evaluated: u64,
    /// Policies whose induced chain was not unichain (skipped: their
    /// average cost is initial-state dependent).
    pub policies_skipped: u64,
}

/// Exhaustive enumeration of every stationary deterministic policy,
/// evaluated through the stationary distribution of its induced chain.
/// Refuses when |states| x |decisions| exceeds `budget`.
pub fn brute_force_best_policy(
    mdp: &AugmentedMdp,
    budget: usize,
) -> Result<BruteForceReport, SolveError> {
    let n = mdp.space().len();
    let nd = mdp.decision_count();
    if n.saturating_mul(nd) > budget {
        return Err(SolveError::OracleTooLarge {
            states: n,
            decisions: nd,
            budget,
        });
    }

    let mut digits = vec![0usize; n];
    let mut best_cost = f64::INFINITY;
    let mut best: Option<Vec<usize>> = None;
    let mut evaluated = 0u64;
    let mut skipped = 0u64;
    loop {
        let policy = StagePolicy::new(digits.iter().map(|&d| mdp.decisions()[d]).collect());
        match evaluate_policy_average_cost(mdp, &policy) {
            Ok(cost) => {
                evaluated += 1;
                if cost < best_cost {
                    best_cost = cost;
                    best = Some(digits.clone());
                }
            }
            Err(SolveError::NotUnichain(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
        // Odometer increment in lexicographic order.
        let mut pos = n;
        loop {
            if pos == 0 {
                break;
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < nd {
                break;
            }
            digits[pos] = 0;
        }
        if digits.iter().all(|&d| d == 0) {
            break;
        }
    }
    let best = best.expect("at least one policy must induce a unichain");
    Ok(BruteForceReport {
        best_cost,
        best_policy: StagePolicy::new(best.iter().map(|&d| mdp.decisions()[d]).collect()),
        policies_evaluated: evaluated,
        policies_skipped: skipped,
    })
}
