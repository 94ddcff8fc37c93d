//! Seeded Monte Carlo simulation of the time-slotted closed loop: source,
//! sampler with waiting, random-delay channel, and remote controller.
//!
//! One simulation run is single-threaded and fully determined by its seed;
//! the frame sampler uses splittable per-frame RNG streams so its results
//! do not depend on evaluation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::augmentation::AugmentedMdp;
use crate::benchmarks::{
    aoi_optimal_threshold, average_aoi, control_under_fixed_sampling, SamplingRule,
};
use crate::model::{
    AugmentedSpace, AugmentedState, Decision, DelayPmf, MarkovControlModel, StagePolicy,
};
use crate::solvers::fpbi_solve;
use crate::Error;

/// Number of batches for the batch-means confidence intervals. Slots within
/// a frame are strongly correlated, so naive i.i.d. intervals would be
/// invalid.
const BATCHES: usize = 100;

/// Normal 97.5% quantile for the 95% half-widths.
const Z_95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SimConfig {
    /// Horizon T in slots.
    pub horizon: u64,
    pub seed: u64,
    pub initial_state: usize,
    /// Age at t = 0, before the first delivery.
    pub initial_age: u32,
    /// Slots excluded from all averages.
    pub burn_in: u64,
    pub record_trajectory: bool,
}

impl SimConfig {
    pub fn new(horizon: u64, seed: u64) -> Self {
        Self {
            horizon,
            seed,
            initial_state: 0,
            initial_age: 1,
            burn_in: horizon / 100,
            record_trajectory: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SlotEvent {
    None,
    Sample,
    Delivery,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub t: u64,
    pub source_state: usize,
    pub action: usize,
    pub age: u64,
    pub cost: f64,
    pub event: SlotEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub avg_cost: f64,
    pub avg_age: f64,
    /// Delivered samples within the horizon.
    pub frames: u64,
    pub ci_halfwidth_cost: f64,
    pub ci_halfwidth_age: f64,
    pub se_cost: f64,
    pub se_age: f64,
    /// Generator backing the run, recorded for reproducibility.
    pub rng: String,
    pub seed: u64,
    pub trajectory: Option<Vec<TrajectoryRow>>,
}

fn draw_delay(pmf: &DelayPmf, rng: &mut ChaCha8Rng) -> u32 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (&y, &p) in pmf.support().iter().zip(pmf.probs()) {
        acc += p;
        if u < acc {
            return y;
        }
    }
    pmf.max_delay()
}

fn step_source(
    model: &MarkovControlModel,
    state: usize,
    action: usize,
    rng: &mut ChaCha8Rng,
) -> usize {
    let row = model.kernel(action).row(state);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (next, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return next;
        }
    }
    model.state_count() - 1
}

struct BatchStats {
    sums: Vec<f64>,
    batch_len: u64,
    total: f64,
    count: u64,
}

impl BatchStats {
    fn new(slots: u64) -> Self {
        let batches = (BATCHES as u64).min(slots.max(1));
        Self {
            sums: vec![0.0; batches as usize],
            batch_len: (slots / batches).max(1),
            total: 0.0,
            count: 0,
        }
    }

    fn push(&mut self, value: f64) {
        let idx = ((self.count / self.batch_len) as usize).min(self.sums.len() - 1);
        self.sums[idx] += value;
        self.total += value;
        self.count += 1;
    }

    fn mean(&self) -> f64 {
        self.total / self.count as f64
    }

    /// Standard error of the mean from batch means.
    fn se(&self) -> f64 {
        let b = self.sums.len();
        if b < 2 {
            return 0.0;
        }
        // The last batch may be longer by the division remainder; use the
        // nominal length for the first b-1 and the actual for the last.
        let mut means = Vec::with_capacity(b);
        for (i, &s) in self.sums.iter().enumerate() {
            let len = if i + 1 == b {
                self.count - self.batch_len * (b as u64 - 1)
            } else {
                self.batch_len
            };
            means.push(s / len as f64);
        }
        let m: f64 = means.iter().sum::<f64>() / b as f64;
        let var: f64 = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (b as f64 - 1.0);
        (var / b as f64).sqrt()
    }
}

/// Runs the closed loop for `cfg.horizon` slots under a fixed stage policy.
///
/// Per frame: a delivery at D_i hands the controller
/// G_i = (sampled state, realized delay, previous action); the policy picks
/// (Z_i, A_i); A_i is held for the whole frame; the next sample is taken at
/// S_{i+1} = D_i + Z_i and delivered Y_{i+1} slots later. The age grows by
/// one per slot and resets to Y_i at each delivery. Identical inputs give
/// bit-identical reports.
pub fn simulate(model: &MarkovControlModel, policy: &StagePolicy, cfg: &SimConfig) -> SimReport {
    assert!(cfg.horizon > cfg.burn_in, "horizon must exceed burn-in");
    assert!(cfg.initial_state < model.state_count());
    let space = AugmentedSpace::from_model(model);
    assert_eq!(
        policy.len(),
        space.len(),
        "policy must cover the augmented space"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = cfg.initial_state;
    let mut age = u64::from(cfg.initial_age);
    let mut action = 0usize; // pre-history action before the first delivery
    let mut frames = 0u64;

    // Channel bookkeeping. The first sample is taken at t = 0.
    let mut sampled_state = 0usize;
    let mut sample_delay = 0u32;
    let mut next_sample = Some(0u64);
    let mut next_delivery: Option<u64> = None;
    let mut channel_busy = false;
    let mut prev_delivery: Option<u64> = None;
    let mut wait_decided: u32 = 0;

    let slots = cfg.horizon - cfg.burn_in;
    let mut cost_stats = BatchStats::new(slots);
    let mut age_stats = BatchStats::new(slots);
    let mut trajectory = cfg.record_trajectory.then(Vec::new);

    for t in 0..cfg.horizon {
        let mut event = SlotEvent::None;
        if next_delivery == Some(t) {
            // Frame accounting: D_{i+1} - D_i = Z_i + Y_{i+1}.
            if let Some(prev) = prev_delivery {
                assert_eq!(t - prev, u64::from(wait_decided) + u64::from(sample_delay));
            }
            age = u64::from(sample_delay);
            let g = AugmentedState {
                source_state: sampled_state,
                delay: sample_delay,
                prev_action: action,
            };
            let g_idx = space
                .index_of(&g)
                .expect("delivered sample outside the augmented space");
            let d = policy.decision(g_idx);
            action = d.action;
            wait_decided = d.wait;
            next_sample = Some(t + u64::from(d.wait));
            prev_delivery = Some(t);
            next_delivery = None;
            channel_busy = false;
            frames += 1;
            event = SlotEvent::Delivery;
        }
        if next_sample == Some(t) {
            assert!(
                !channel_busy,
                "no sample may be taken while the channel is busy"
            );
            sampled_state = x;
            sample_delay = draw_delay(model.delay(), &mut rng);
            next_delivery = Some(t + u64::from(sample_delay));
            next_sample = None;
            channel_busy = true;
            if event == SlotEvent::None {
                event = SlotEvent::Sample;
            }
        }
        let cost = model.cost(x, action);
        if t >= cfg.burn_in {
            cost_stats.push(cost);
            age_stats.push(age as f64);
        }
        if let Some(rows) = trajectory.as_mut() {
            rows.push(TrajectoryRow {
                t,
                source_state: x,
                action,
                age,
                cost,
                event,
            });
        }
        x = step_source(model, x, action, &mut rng);
        age += 1;
    }

    assert!(frames >= 1, "horizon too short to deliver a single sample");
    SimReport {
        avg_cost: cost_stats.mean(),
        avg_age: age_stats.mean(),
        frames,
        ci_halfwidth_cost: Z_95 * cost_stats.se(),
        ci_halfwidth_age: Z_95 * age_stats.se(),
        se_cost: cost_stats.se(),
        se_age: age_stats.se(),
        rng: "chacha8".to_string(),
        seed: cfg.seed,
        trajectory,
    }
}

/// Empirical next-state distribution and mean accumulated cost of `n`
/// independent frames started from `g` under `decision`. Each frame uses
/// its own RNG stream, so results are independent of evaluation order.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSample {
    pub counts: Vec<u64>,
    pub freq: Vec<f64>,
    pub mean_cost: f64,
    pub se_cost: f64,
    pub n: u64,
}

pub fn frame_sampler(
    model: &MarkovControlModel,
    g: &AugmentedState,
    decision: Decision,
    seed: u64,
    n: u64,
) -> FrameSample {
    assert!(n >= 1);
    let space = AugmentedSpace::from_model(model);
    let mut counts = vec![0u64; space.len()];
    let mut cost_sum = 0.0;
    let mut cost_sq = 0.0;
    for frame in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(frame);
        let mut x = g.source_state;
        for _ in 0..g.delay {
            x = step_source(model, x, g.prev_action, &mut rng);
        }
        let y_next = draw_delay(model.delay(), &mut rng);
        let frame_len = decision.wait + y_next;
        let mut captured = x;
        let mut cost = 0.0;
        for k in 0..frame_len {
            if k == decision.wait {
                captured = x;
            }
            cost += model.cost(x, decision.action);
            if k + 1 < frame_len {
                x = step_source(model, x, decision.action, &mut rng);
            }
        }
        let next = AugmentedState {
            source_state: captured,
            delay: y_next,
            prev_action: decision.action,
        };
        counts[space.index_of(&next).unwrap()] += 1;
        cost_sum += cost;
        cost_sq += cost * cost;
    }
    let mean = cost_sum / n as f64;
    let var = if n > 1 {
        (cost_sq - n as f64 * mean * mean).max(0.0) / (n as f64 - 1.0)
    } else {
        0.0
    };
    FrameSample {
        freq: counts.iter().map(|&c| c as f64 / n as f64).collect(),
        counts,
        mean_cost: mean,
        se_cost: (var / n as f64).sqrt(),
        n,
    }
}

/// Deterministic sub-seed for a tagged task, so every run draws from the
/// single experiment seed.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in tag.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ base.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// One row of the p-sweep table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub p: f64,
    pub policy: String,
    pub h_solver: f64,
    pub avg_cost_sim: f64,
    pub ci_cost: f64,
    /// Exact analytic average age for the delay-only rules, simulated
    /// (with `ci_age` > 0) for the free optimal policy.
    pub avg_age: f64,
    pub ci_age: f64,
    pub beta: Option<u32>,
}

/// Solves and simulates the optimal policy and both benchmarks for every p
/// in a two-point delay family, emitting one row per (p, policy).
pub fn sweep_p(
    base: &MarkovControlModel,
    p_values: &[f64],
    sim_cfg: &SimConfig,
    epsilon: f64,
    max_iterations: usize,
) -> Result<Vec<SweepRow>, Error> {
    let support = base.delay().support();
    if support.len() != 2 {
        return Err(Error::Invalid(format!(
            "p-sweep needs a two-point delay family, got {} support values",
            support.len()
        )));
    }
    let (y_low, y_high) = (support[0], support[1]);
    let z_max = base.z_max();
    let mut rows = Vec::new();

    for &p in p_values {
        let pmf = DelayPmf::two_point(p, y_low, y_high)?;
        let model = base.with_delay(pmf.clone());
        let mdp = AugmentedMdp::build(&model)?;

        let run = |name: &str,
                   report: crate::solvers::SolveReport,
                   analytic_age: Option<f64>,
                   beta: Option<u32>|
         -> SweepRow {
            let cfg = SimConfig {
                seed: derive_seed(sim_cfg.seed, &format!("sweep:{p}:{name}")),
                record_trajectory: false,
                ..*sim_cfg
            };
            let sim = simulate(&model, &report.policy, &cfg);
            let (avg_age, ci_age) = match analytic_age {
                Some(age) => (age, 0.0),
                None => (sim.avg_age, sim.ci_halfwidth_age),
            };
            SweepRow {
                p,
                policy: name.to_string(),
                h_solver: report.h_star,
                avg_cost_sim: sim.avg_cost,
                ci_cost: sim.ci_halfwidth_cost,
                avg_age,
                ci_age,
                beta,
            }
        };

        let free = fpbi_solve(&mdp, epsilon, max_iterations)?;
        rows.push(run("optimal", free, None, None));

        let zw =
            control_under_fixed_sampling(&mdp, &SamplingRule::ZeroWait, epsilon, max_iterations)?;
        let zw_age = average_aoi(&pmf, &SamplingRule::ZeroWait, z_max);
        rows.push(run("zero-wait", zw, Some(zw_age), None));

        let (beta, rule) = aoi_optimal_threshold(&pmf, z_max);
        let th = control_under_fixed_sampling(&mdp, &rule, epsilon, max_iterations)?;
        let th_age = average_aoi(&pmf, &rule, z_max);
        rows.push(run("aoi-threshold", th, Some(th_age), Some(beta)));
    }
    Ok(rows)
}
