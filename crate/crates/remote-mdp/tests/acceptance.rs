//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line
//! (run with `--nocapture` to see them all).

mod common;

use common::{
    case_study_model, check, random_model, random_model_with_cost, random_unichain, tiny_instance,
};
use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use remote_mdp::analysis::{h_star_bounds, induced_chain_check, unichain_check};
use remote_mdp::augmentation::AugmentedMdp;
use remote_mdp::benchmarks::{aoi_optimal_threshold, control_under_fixed_sampling, SamplingRule};
use remote_mdp::model::StagePolicy;
use remote_mdp::sim::{simulate, sweep_p, SimConfig};
use remote_mdp::solvers::{
    bisec_mrvi, brute_force_best_policy, evaluate_policy_average_cost, fpbi_solve, mrvi_solve,
    MrviOptions, TraceEntry,
};

const EPS: f64 = 1e-6;
const MAX_ITERS: usize = 100_000;

fn opts() -> MrviOptions {
    MrviOptions::default()
}

#[test]
fn criterion_01_bounds_containment() {
    let model = case_study_model(0.5, 20);
    let (lo, hi) = h_star_bounds(&model).unwrap();
    let mdp = AugmentedMdp::build(&model).unwrap();
    let b = bisec_mrvi(&mdp, EPS, &opts()).unwrap();
    let f = fpbi_solve(&mdp, EPS, MAX_ITERS).unwrap();
    let ok = lo == 0.0
        && (hi - 20.0).abs() < 1e-9
        && (0.0..=20.0).contains(&b.h_star)
        && (0.0..=20.0).contains(&f.h_star);
    check(
        "criterion 1 (bounds containment)",
        ok,
        format!(
            "bounds [{lo:.3e}, {hi:.12}], h*(bisec) = {:.9}, h*(fpbi) = {:.9}",
            b.h_star, f.h_star
        ),
    );
}

#[test]
fn criterion_02_solver_cross_agreement() {
    let mut worst_h = 0.0f64;
    let mut worst_eval = 0.0f64;
    for k in 1..=9 {
        let p = k as f64 / 10.0;
        let model = case_study_model(p, 20);
        let mdp = AugmentedMdp::build(&model).unwrap();
        let b = bisec_mrvi(&mdp, EPS, &opts()).unwrap();
        let f = fpbi_solve(&mdp, EPS, MAX_ITERS).unwrap();
        worst_h = worst_h.max((b.h_star - f.h_star).abs());
        let eb = evaluate_policy_average_cost(&mdp, &b.policy).unwrap();
        let ef = evaluate_policy_average_cost(&mdp, &f.policy).unwrap();
        worst_eval = worst_eval.max((eb - ef).abs());
    }
    let ok = worst_h < 2.0 * EPS && worst_eval < 2.0 * EPS;
    check(
        "criterion 2 (solver cross-agreement)",
        ok,
        format!(
            "max |h difference| = {worst_h:.3e}, max |policy-eval difference| = {worst_eval:.3e}"
        ),
    );
}

#[test]
fn criterion_03_root_residual() {
    let model = case_study_model(0.5, 20);
    let mdp = AugmentedMdp::build(&model).unwrap();
    let f = fpbi_solve(&mdp, EPS, MAX_ITERS).unwrap();
    let recheck = mrvi_solve(&mdp, f.h_star, &opts());
    let ok = recheck.converged && recheck.u_lambda.abs() < 1e-5;
    check(
        "criterion 3 (root residual)",
        ok,
        format!(
            "|U(h*)| = {:.3e} at h* = {:.9}",
            recheck.u_lambda.abs(),
            f.h_star
        ),
    );
}

#[test]
fn criterion_04_brute_force_optimality() {
    let model = tiny_instance(2);
    let mdp = AugmentedMdp::build(&model).unwrap();
    assert_eq!(mdp.space().len(), 8);
    assert_eq!(mdp.decision_count(), 6);
    let bf = brute_force_best_policy(&mdp, 64).unwrap();
    let f = fpbi_solve(&mdp, EPS, MAX_ITERS).unwrap();
    let diff = (bf.best_cost - f.h_star).abs();
    let ok = diff < 1e-6 && bf.policies_evaluated + bf.policies_skipped == 6u64.pow(8);
    check(
        "criterion 4 (brute-force optimality)",
        ok,
        format!(
            "enumerated {} policies ({} skipped), min = {:.12}, h* = {:.12}, diff = {diff:.3e}",
            bf.policies_evaluated, bf.policies_skipped, bf.best_cost, f.h_star
        ),
    );
}

#[test]
fn criterion_05_dinkelbach_monotonicity_and_sign() {
    let model = case_study_model(0.5, 20);
    let mdp = AugmentedMdp::build(&model).unwrap();
    let f = fpbi_solve(&mdp, EPS, MAX_ITERS).unwrap();
    let grid: Vec<f64> = (0..7).map(|k| 20.0 * k as f64 / 6.0).collect();
    let us: Vec<f64> = grid
        .iter()
        .map(|&l| mrvi_solve(&mdp, l, &opts()).u_lambda)
        .collect();
    let monotone = us.windows(2).all(|w| w[1] <= w[0] + 1e-9);
    let signs_ok = grid
        .iter()
        .zip(&us)
        .filter(|(&l, _)| (l - f.h_star).abs() > 1e-5)
        .all(|(&l, &u)| (u > 0.0) == (f.h_star > l));
    check(
        "criterion 5 (Dinkelbach monotonicity and sign)",
        monotone && signs_ok,
        format!("U on grid = {us:?}, root = {:.9}", f.h_star),
    );
}

#[test]
fn criterion_06_simulation_consistency() {
    let model = case_study_model(0.5, 20);
    let mdp = AugmentedMdp::build(&model).unwrap();
    let cfg = SimConfig {
        burn_in: 10_000,
        ..SimConfig::new(1_000_000, 424242)
    };

    let mut detail = String::new();
    let mut ok = true;
    let free = fpbi_solve(&mdp, EPS, MAX_ITERS).unwrap();
    let zw = control_under_fixed_sampling(&mdp, &SamplingRule::ZeroWait, EPS, MAX_ITERS).unwrap();
    let (_, rule) = aoi_optimal_threshold(model.delay(), model.z_max());
    let th = control_under_fixed_sampling(&mdp, &rule, EPS, MAX_ITERS).unwrap();
    for (name, report, seed) in [
        ("optimal", &free, 1u64),
        ("zero-wait", &zw, 2),
        ("aoi-threshold", &th, 3),
    ] {
        let sim = simulate(&model, &report.policy, &SimConfig { seed, ..cfg });
        let dev = (sim.avg_cost - report.h_star).abs();
        let pass = dev <= 3.0 * sim.se_cost;
        ok &= pass;
        detail.push_str(&format!(
            "{name}: sim {:.6} vs h {:.6} ({:.2} se); ",
            sim.avg_cost,
            report.h_star,
            dev / sim.se_cost
        ));
    }
    check("criterion 6 (simulation consistency)", ok, detail);
}

#[test]
fn criterion_07_sweep_orderings() {
    let model = case_study_model(0.5, 20);
    let p_grid: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
    let cfg = SimConfig {
        burn_in: 10_000,
        ..SimConfig::new(1_000_000, 777)
    };
    let rows = sweep_p(&model, &p_grid, &cfg, EPS, MAX_ITERS).unwrap();
    assert_eq!(rows.len(), 27);
    let mut ok = true;
    let mut detail = String::new();
    for k in 0..9 {
        let (opt, zw, th) = (&rows[3 * k], &rows[3 * k + 1], &rows[3 * k + 2]);
        assert_eq!(opt.policy, "optimal");
        assert_eq!(zw.policy, "zero-wait");
        assert_eq!(th.policy, "aoi-threshold");
        // (a) the threshold rule has the lowest age: exactly vs zero-wait
        // (both analytic), within 3 sigma vs the simulated optimal.
        let age_ok = th.avg_age <= zw.avg_age + 1e-12
            && th.avg_age <= opt.avg_age + 3.0 * (opt.ci_age / 1.96);
        // (b) the free optimum costs no more than either benchmark.
        let cost_ok = opt.h_solver <= zw.h_solver + 1e-6 && opt.h_solver <= th.h_solver + 1e-6;
        ok &= age_ok && cost_ok;
        if !(age_ok && cost_ok) {
            detail.push_str(&format!("violation at p = {}; ", opt.p));
        }
    }
    if ok {
        detail = format!(
            "9 p-values: age(threshold) lowest, h(optimal) <= h(benchmarks); e.g. p=0.5: h = {:.4} vs {:.4}/{:.4}",
            rows[12].h_solver, rows[13].h_solver, rows[14].h_solver
        );
    }
    check("criterion 7 (sweep orderings)", ok, detail);
}

#[test]
fn criterion_08_convergence_comparison() {
    let model = case_study_model(0.5, 20);
    let mdp = AugmentedMdp::build(&model).unwrap();
    let f = fpbi_solve(&mdp, EPS, MAX_ITERS).unwrap();
    let b = bisec_mrvi(&mdp, EPS, &opts()).unwrap();
    let h_ref = f.h_star;
    let first_hit = |trace: &[TraceEntry]| {
        trace
            .iter()
            .find(|e| (e.value - h_ref).abs() < 1e-4)
            .map(|e| e.cumulative_sweeps)
    };
    let fh = first_hit(&f.trace);
    let bh = first_hit(&b.trace);
    let ok = matches!((fh, bh), (Some(fs), Some(bs)) if fs < bs);
    check(
        "criterion 8 (convergence comparison)",
        ok,
        format!(
            "sweeps to |h - h*| < 1e-4: fpbi {fh:?} vs bisec-mrvi {bh:?} (totals {} vs {})",
            f.sweeps, b.sweeps
        ),
    );
}

#[test]
fn criterion_09_unichain_property_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(9009);

    // Products and powers of unichains stay unichain.
    let mut closure_ok = true;
    for _ in 0..100 {
        let n = rng.random_range(2..6);
        let a = random_unichain(&mut rng, n);
        let b = random_unichain(&mut rng, n);
        closure_ok &= unichain_check(&(&a * &b)).is_unichain;
        for power in [2u32, 3, 5] {
            let mut pa = DMatrix::identity(n, n);
            let mut pb = DMatrix::identity(n, n);
            for _ in 0..power {
                pa = &pa * &a;
                pb = &pb * &b;
            }
            closure_ok &= unichain_check(&pa).is_unichain;
            closure_ok &= unichain_check(&pb).is_unichain;
        }
    }

    // Independent product chains stay unichain.
    let mut product_ok = true;
    for _ in 0..20 {
        let na = rng.random_range(2..4);
        let a = random_unichain(&mut rng, na);
        let nb = rng.random_range(2..4);
        let b = random_unichain(&mut rng, nb);
        product_ok &= unichain_check(&a.kronecker(&b)).is_unichain;
    }

    // Induced augmented chains of every stationary deterministic policy on
    // the tiny instance. This clause fails honestly: the 256 action-locking
    // policies (every state with previous action a chooses action a) freeze
    // the previous-action coordinate, so their induced chains have two
    // closed classes. See the sharp characterization test in the analysis
    // module.
    let model = tiny_instance(1);
    let mdp = AugmentedMdp::build(&model).unwrap();
    let n = mdp.space().len();
    let nd = mdp.decision_count();
    let mut digits = vec![0usize; n];
    let mut multichain = 0u64;
    let mut total = 0u64;
    loop {
        total += 1;
        let policy = StagePolicy::new(digits.iter().map(|&d| mdp.decisions()[d]).collect());
        if !induced_chain_check(&mdp, &policy).is_unichain {
            multichain += 1;
        }
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
    let induced_ok = multichain == 0;

    check(
        "criterion 9 (unichain property suite)",
        closure_ok && product_ok && induced_ok,
        format!(
            "products/powers on 100 pairs: {}; 20 independent products: {}; \
             induced chains: {multichain}/{total} policies are multichain \
             (the action-locking policies; exactly one closed class per locked action orbit)",
            if closure_ok {
                "all unichain"
            } else {
                "violations"
            },
            if product_ok {
                "all unichain"
            } else {
                "violations"
            },
        ),
    );
}

#[test]
fn criterion_10_invariant_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);

    // Kernel rows stochastic within 1e-10 on random models.
    let mut worst_row = 0.0f64;
    for _ in 0..20 {
        let model = random_model(&mut rng);
        let mdp = AugmentedMdp::build(&model).unwrap();
        for g in 0..mdp.space().len() {
            for d in 0..mdp.decision_count() {
                let sum: f64 = mdp.kernel_row(g, d).iter().sum();
                worst_row = worst_row.max((sum - 1.0).abs());
            }
        }
    }
    let rows_ok = worst_row < 1e-10;

    // Constant cost pins h* = c for both solvers.
    let mut worst_const = 0.0f64;
    for _ in 0..20 {
        let c = rng.random_range(-5.0..5.0);
        let model =
            random_model_with_cost(&mut rng, |_, n_s, n_a| DMatrix::from_element(n_s, n_a, c));
        let mdp = AugmentedMdp::build(&model).unwrap();
        let f = fpbi_solve(&mdp, EPS, MAX_ITERS).unwrap();
        let b = bisec_mrvi(&mdp, EPS, &opts()).unwrap();
        worst_const = worst_const
            .max((f.h_star - c).abs())
            .max((b.h_star - c).abs());
    }
    let const_ok = worst_const < 1e-9;

    // Seed determinism of simulation reports.
    let model = case_study_model(0.5, 20);
    let mdp = AugmentedMdp::build(&model).unwrap();
    let policy = fpbi_solve(&mdp, EPS, MAX_ITERS).unwrap().policy;
    let cfg = SimConfig::new(100_000, 5150);
    let a = simulate(&model, &policy, &cfg);
    let b = simulate(&model, &policy, &cfg);
    let deterministic =
        a == b && serde_json::to_string(&a).unwrap() == serde_json::to_string(&b).unwrap();

    check(
        "criterion 10 (invariant suite)",
        rows_ok && const_ok && deterministic,
        format!(
            "max |row sum - 1| = {worst_row:.3e}; max |h* - c| = {worst_const:.3e}; \
             identical seeds give byte-identical reports: {deterministic}"
        ),
    );
}
