//! Experiment orchestration behind the command-line front end: runs the
//! subcommands against a parsed config and writes reports and CSV files.
//!
//! Every CSV has a header row; numbers are formatted locale-independently
//! with 12 significant digits.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::analysis;
use crate::augmentation::AugmentedMdp;
use crate::benchmarks::{
    aoi_optimal_threshold, average_aoi, control_under_fixed_sampling, SamplingRule,
};
use crate::config::{Algorithm, ExperimentConfig};
use crate::sim::{self, SimConfig, SweepRow};
use crate::solvers::{
    bisec_mrvi, brute_force_best_policy, fpbi_solve, mrvi_solve, MrviOptions, SolveReport,
    TraceEntry,
};
use crate::Error;

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub algorithm: Option<Algorithm>,
    pub epsilon: Option<f64>,
    pub seed: Option<u64>,
    pub horizon: Option<u64>,
    pub p_grid: Option<Vec<f64>>,
    pub out_dir: Option<PathBuf>,
    pub trajectory: bool,
    pub dump_tables: bool,
    pub budget: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Benchmark,
    Simulate,
    Sweep,
    Convergence,
    Inspect,
    Oracle,
}

/// Formats a float with 12 significant digits, locale-independent.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    format!("{x:.11e}")
}

/// Parses a `LO:HI:STEP` grid specification into the inclusive list of
/// values LO, LO+STEP, ..., HI.
pub fn parse_p_grid(spec: &str) -> Result<Vec<f64>, Error> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::Invalid(format!(
            "p grid `{spec}` must have the form LO:HI:STEP"
        )));
    }
    let lo: f64 = parts[0]
        .parse()
        .map_err(|_| Error::Invalid(format!("bad grid start `{}`", parts[0])))?;
    let hi: f64 = parts[1]
        .parse()
        .map_err(|_| Error::Invalid(format!("bad grid end `{}`", parts[1])))?;
    let step: f64 = parts[2]
        .parse()
        .map_err(|_| Error::Invalid(format!("bad grid step `{}`", parts[2])))?;
    if step <= 0.0 || hi < lo {
        return Err(Error::Invalid(format!("empty or inverted grid `{spec}`")));
    }
    let mut out = Vec::new();
    let mut k = 0u32;
    loop {
        let v = lo + f64::from(k) * step;
        if v > hi + step * 1e-9 {
            break;
        }
        out.push(v);
        k += 1;
    }
    Ok(out)
}

fn mrvi_options(cfg: &ExperimentConfig) -> MrviOptions {
    MrviOptions {
        tol: cfg.solver.tol,
        damping: cfg.solver.tau,
        max_sweeps: cfg.solver.max_sweeps,
    }
}

fn sim_config(cfg: &ExperimentConfig, ov: &Overrides) -> SimConfig {
    SimConfig {
        horizon: ov.horizon.unwrap_or(cfg.sim.horizon),
        seed: ov.seed.unwrap_or(cfg.sim.seed),
        initial_state: cfg.sim.initial_state,
        initial_age: cfg.sim.initial_age,
        burn_in: ov.horizon.map(|h| h / 100).unwrap_or(cfg.sim.burn_in),
        record_trajectory: ov.trajectory,
    }
}

fn out_dir(cfg: &ExperimentConfig, ov: &Overrides) -> PathBuf {
    ov.out_dir.clone().unwrap_or_else(|| cfg.output.dir.clone())
}

fn write_file(path: &Path, contents: &str) -> Result<(), Error> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

fn trace_csv(sections: &[(&str, &[TraceEntry])]) -> String {
    let mut s = String::from("solver,iteration,sweep_count,lambda_or_h,metric\n");
    for (solver, entries) in sections {
        for e in *entries {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                solver,
                e.iteration,
                e.cumulative_sweeps,
                fmt_f64(e.value),
                fmt_f64(e.metric)
            ));
        }
    }
    s
}

fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("p,policy,h_solver,avg_cost_sim,ci_cost,avg_age,ci_age,beta_if_any\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            fmt_f64(r.p),
            r.policy,
            fmt_f64(r.h_solver),
            fmt_f64(r.avg_cost_sim),
            fmt_f64(r.ci_cost),
            fmt_f64(r.avg_age),
            fmt_f64(r.ci_age),
            r.beta.map(|b| b.to_string()).unwrap_or_default()
        ));
    }
    s
}

fn run_solver(
    mdp: &AugmentedMdp,
    algorithm: Algorithm,
    epsilon: f64,
    opts: &MrviOptions,
    max_iterations: usize,
) -> Result<SolveReport, Error> {
    let report = match algorithm {
        Algorithm::BisecMrvi => bisec_mrvi(mdp, epsilon, opts)?,
        Algorithm::Fpbi => fpbi_solve(mdp, epsilon, max_iterations)?,
    };
    Ok(report)
}

fn print_solve_summary(report: &SolveReport, bounds: (f64, f64), z_max: u32) {
    println!("algorithm      {}", report.algorithm);
    println!("h*             {}", fmt_f64(report.h_star));
    println!(
        "bounds         [{}, {}]",
        fmt_f64(bounds.0),
        fmt_f64(bounds.1)
    );
    println!(
        "contained      {}",
        report.h_star >= bounds.0 - 1e-9 && report.h_star <= bounds.1 + 1e-9
    );
    println!("sweeps         {}", report.sweeps);
    println!("iterations     {}", report.trace.len());
    println!("converged      {}", report.converged);
    println!("wall clock     {:.3}s", report.wall_clock_secs);
    if report.wait_cap_hit {
        println!(
            "warning: the policy waits the full cap z_max = {z_max} somewhere; \
             the cap may be truncating the optimal waiting time"
        );
    }
}

/// Runs one subcommand against a parsed config, writing artifacts under the
/// output directory and printing a human-readable summary.
pub fn run(command: Command, cfg: &ExperimentConfig, ov: &Overrides) -> Result<(), Error> {
    match command {
        Command::Solve => solve_cmd(cfg, ov),
        Command::Benchmark => benchmark_cmd(cfg, ov),
        Command::Simulate => simulate_cmd(cfg, ov),
        Command::Sweep => sweep_cmd(cfg, ov),
        Command::Convergence => convergence_cmd(cfg, ov),
        Command::Inspect => inspect_cmd(cfg, ov),
        Command::Oracle => oracle_cmd(cfg, ov),
    }
}

fn solve_cmd(cfg: &ExperimentConfig, ov: &Overrides) -> Result<(), Error> {
    let model = cfg.build_model()?;
    let mdp = AugmentedMdp::build(&model)?;
    let bounds = analysis::h_star_bounds(&model)?;
    let algorithm = ov.algorithm.unwrap_or(cfg.solver.algorithm);
    let epsilon = ov.epsilon.unwrap_or(cfg.solver.epsilon);
    let report = run_solver(
        &mdp,
        algorithm,
        epsilon,
        &mrvi_options(cfg),
        cfg.solver.max_sweeps,
    )?;
    print_solve_summary(&report, bounds, model.z_max());

    let dir = out_dir(cfg, ov);
    let artifact = json!({
        "bounds": { "lower": bounds.0, "upper": bounds.1 },
        "report": report,
    });
    write_file(
        &dir.join("solve_report.json"),
        &serde_json::to_string_pretty(&artifact).expect("report serialization"),
    )?;
    write_file(
        &dir.join("solve_trace.csv"),
        &trace_csv(&[(report.algorithm.as_str(), &report.trace)]),
    )?;
    write_file(&dir.join("resolved_config.toml"), &cfg.to_toml_string())?;
    println!("wrote {}", dir.join("solve_report.json").display());
    Ok(())
}

fn benchmark_cmd(cfg: &ExperimentConfig, ov: &Overrides) -> Result<(), Error> {
    let model = cfg.build_model()?;
    let mdp = AugmentedMdp::build(&model)?;
    let epsilon = ov.epsilon.unwrap_or(cfg.solver.epsilon);
    let max_iters = cfg.solver.max_sweeps;
    let z_max = model.z_max();
    let pmf = model.delay();

    let free = fpbi_solve(&mdp, epsilon, max_iters)?;
    let zw = control_under_fixed_sampling(&mdp, &SamplingRule::ZeroWait, epsilon, max_iters)?;
    let zw_age = average_aoi(pmf, &SamplingRule::ZeroWait, z_max);
    let (beta, rule) = aoi_optimal_threshold(pmf, z_max);
    if rule.caps_wait(pmf, z_max) {
        println!(
            "warning: threshold beta = {beta} saturates at z_max = {z_max}; \
             benchmark comparability is degraded"
        );
    }
    let th = control_under_fixed_sampling(&mdp, &rule, epsilon, max_iters)?;
    let th_age = average_aoi(pmf, &rule, z_max);

    println!(
        "{:<14} {:>18} {:>18} {:>6}",
        "policy", "h", "avg_age", "beta"
    );
    println!(
        "{:<14} {:>18} {:>18} {:>6}",
        "optimal",
        fmt_f64(free.h_star),
        "-",
        "-"
    );
    println!(
        "{:<14} {:>18} {:>18} {:>6}",
        "zero-wait",
        fmt_f64(zw.h_star),
        fmt_f64(zw_age),
        "-"
    );
    println!(
        "{:<14} {:>18} {:>18} {:>6}",
        "aoi-threshold",
        fmt_f64(th.h_star),
        fmt_f64(th_age),
        beta
    );

    let mut csv = String::from("policy,h,avg_age,beta\n");
    csv.push_str(&format!("optimal,{},,\n", fmt_f64(free.h_star)));
    csv.push_str(&format!(
        "zero-wait,{},{},\n",
        fmt_f64(zw.h_star),
        fmt_f64(zw_age)
    ));
    csv.push_str(&format!(
        "aoi-threshold,{},{},{}\n",
        fmt_f64(th.h_star),
        fmt_f64(th_age),
        beta
    ));
    let dir = out_dir(cfg, ov);
    write_file(&dir.join("benchmark.csv"), &csv)?;
    println!("wrote {}", dir.join("benchmark.csv").display());
    Ok(())
}

fn simulate_cmd(cfg: &ExperimentConfig, ov: &Overrides) -> Result<(), Error> {
    let model = cfg.build_model()?;
    let mdp = AugmentedMdp::build(&model)?;
    let algorithm = ov.algorithm.unwrap_or(cfg.solver.algorithm);
    let epsilon = ov.epsilon.unwrap_or(cfg.solver.epsilon);
    let report = run_solver(
        &mdp,
        algorithm,
        epsilon,
        &mrvi_options(cfg),
        cfg.solver.max_sweeps,
    )?;
    let scfg = sim_config(cfg, ov);
    let sim = sim::simulate(&model, &report.policy, &scfg);

    println!("solver h*      {}", fmt_f64(report.h_star));
    println!(
        "avg cost       {} +/- {}",
        fmt_f64(sim.avg_cost),
        fmt_f64(sim.ci_halfwidth_cost)
    );
    println!(
        "avg age        {} +/- {}",
        fmt_f64(sim.avg_age),
        fmt_f64(sim.ci_halfwidth_age)
    );
    println!("frames         {}", sim.frames);
    println!("seed           {} ({})", scfg.seed, sim.rng);

    let dir = out_dir(cfg, ov);
    if let Some(rows) = &sim.trajectory {
        let mut csv = String::from("t,source_state,action,age,cost,event\n");
        for r in rows {
            let event = match r.event {
                sim::SlotEvent::None => "none",
                sim::SlotEvent::Sample => "sample",
                sim::SlotEvent::Delivery => "delivery",
            };
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.t,
                r.source_state,
                r.action,
                r.age,
                fmt_f64(r.cost),
                event
            ));
        }
        write_file(&dir.join("trajectory.csv"), &csv)?;
        println!("wrote {}", dir.join("trajectory.csv").display());
    }
    let mut slim = sim.clone();
    slim.trajectory = None;
    write_file(
        &dir.join("sim_report.json"),
        &serde_json::to_string_pretty(&json!({
            "solver_h_star": report.h_star,
            "report": slim,
        }))
        .expect("report serialization"),
    )?;
    println!("wrote {}", dir.join("sim_report.json").display());
    Ok(())
}

fn sweep_cmd(cfg: &ExperimentConfig, ov: &Overrides) -> Result<(), Error> {
    let model = cfg.build_model()?;
    let grid = ov.p_grid.clone().unwrap_or_else(|| cfg.sweep.p.clone());
    let epsilon = ov.epsilon.unwrap_or(cfg.solver.epsilon);
    let scfg = sim_config(cfg, ov);
    let rows = sim::sweep_p(&model, &grid, &scfg, epsilon, cfg.solver.max_sweeps)?;
    let dir = out_dir(cfg, ov);
    write_file(&dir.join("sweep.csv"), &sweep_csv(&rows))?;
    println!(
        "swept {} p-values x 3 policies = {} rows",
        grid.len(),
        rows.len()
    );
    println!("wrote {}", dir.join("sweep.csv").display());
    Ok(())
}

fn convergence_cmd(cfg: &ExperimentConfig, ov: &Overrides) -> Result<(), Error> {
    let model = cfg.build_model()?;
    let mdp = AugmentedMdp::build(&model)?;
    let epsilon = ov.epsilon.unwrap_or(cfg.solver.epsilon);
    let opts = mrvi_options(cfg);
    let fpbi = fpbi_solve(&mdp, epsilon, cfg.solver.max_sweeps)?;
    let bisec = bisec_mrvi(&mdp, epsilon, &opts)?;

    let h_ref = fpbi.h_star;
    let first_hit = |entries: &[TraceEntry]| {
        entries
            .iter()
            .find(|e| (e.value - h_ref).abs() < 1e-4)
            .map(|e| e.cumulative_sweeps)
    };
    println!(
        "fpbi:        h* = {}, sweeps = {}",
        fmt_f64(fpbi.h_star),
        fpbi.sweeps
    );
    println!(
        "bisec-mrvi:  h* = {}, sweeps = {}",
        fmt_f64(bisec.h_star),
        bisec.sweeps
    );
    match (first_hit(&fpbi.trace), first_hit(&bisec.trace)) {
        (Some(f), Some(b)) => {
            println!("sweeps to |h - h*| < 1e-4: fpbi {f}, bisec-mrvi {b}");
        }
        _ => println!("one of the traces never came within 1e-4 of h*"),
    }

    let dir = out_dir(cfg, ov);
    write_file(
        &dir.join("convergence.csv"),
        &trace_csv(&[("fpbi", &fpbi.trace), ("bisec-mrvi", &bisec.trace)]),
    )?;
    println!("wrote {}", dir.join("convergence.csv").display());
    Ok(())
}

fn inspect_cmd(cfg: &ExperimentConfig, ov: &Overrides) -> Result<(), Error> {
    let model = cfg.build_model()?;
    let mdp = AugmentedMdp::build(&model)?;
    let space = mdp.space();

    println!(
        "model: {} states, {} actions, z_max = {}",
        model.state_count(),
        model.action_count(),
        model.z_max()
    );
    println!(
        "delay: support {:?}, probs {:?}, E[Y] = {}",
        model.delay().support(),
        model.delay().probs(),
        fmt_f64(model.delay().mean())
    );
    println!(
        "augmented space: {} states x {} decisions",
        space.len(),
        mdp.decision_count()
    );
    for a in 0..model.action_count() {
        let report = analysis::unichain_check(model.kernel(a));
        println!(
            "kernel {a}: unichain = {}, recurrent {:?}, transient {:?}",
            report.is_unichain, report.recurrent_class, report.transient_states
        );
        if report.is_unichain {
            let pi = analysis::stationary_distribution(model.kernel(a))?;
            let pretty: Vec<String> = pi.iter().map(|&v| fmt_f64(v)).collect();
            println!("  stationary: [{}]", pretty.join(", "));
        }
    }
    match analysis::h_star_bounds(&model) {
        Ok((lo, hi)) => println!("h* bounds: [{}, {}]", fmt_f64(lo), fmt_f64(hi)),
        Err(e) => println!("h* bounds unavailable: {e}"),
    }
    println!("state enumeration:");
    for (i, g) in space.states().iter().enumerate() {
        println!(
            "  {i}: (source={}, delay={}, prev_action={})",
            g.source_state, g.delay, g.prev_action
        );
    }

    if ov.dump_tables {
        let dir = out_dir(cfg, ov);
        let mut kcsv = String::from("state,wait,action,next_state,prob\n");
        let mut qcsv = String::from("state,wait,action,q\n");
        for g in 0..space.len() {
            for (d_idx, d) in mdp.decisions().iter().enumerate() {
                qcsv.push_str(&format!(
                    "{},{},{},{}\n",
                    g,
                    d.wait,
                    d.action,
                    fmt_f64(mdp.q(g, d_idx))
                ));
                for (gp, &p) in mdp.kernel_row(g, d_idx).iter().enumerate() {
                    if p > 0.0 {
                        kcsv.push_str(&format!(
                            "{},{},{},{},{}\n",
                            g,
                            d.wait,
                            d.action,
                            gp,
                            fmt_f64(p)
                        ));
                    }
                }
            }
        }
        write_file(&dir.join("kernel.csv"), &kcsv)?;
        write_file(&dir.join("q.csv"), &qcsv)?;
        println!(
            "wrote {} and {}",
            dir.join("kernel.csv").display(),
            dir.join("q.csv").display()
        );
    }
    Ok(())
}

fn oracle_cmd(cfg: &ExperimentConfig, ov: &Overrides) -> Result<(), Error> {
    let model = cfg.build_model()?;
    let mdp = AugmentedMdp::build(&model)?;
    let budget = ov.budget.unwrap_or(64);
    let bf = brute_force_best_policy(&mdp, budget)?;
    println!(
        "enumerated {} policies ({} skipped as non-unichain)",
        bf.policies_evaluated, bf.policies_skipped
    );
    println!("brute-force min average cost: {}", fmt_f64(bf.best_cost));

    let epsilon = ov.epsilon.unwrap_or(cfg.solver.epsilon);
    let f = fpbi_solve(&mdp, epsilon, cfg.solver.max_sweeps)?;
    println!("fpbi h*:                      {}", fmt_f64(f.h_star));
    println!(
        "difference:                   {}",
        fmt_f64((bf.best_cost - f.h_star).abs())
    );
    println!("best policy (state -> wait,action):");
    for (g, d) in bf.best_policy.decisions().iter().enumerate() {
        let s = mdp.space().state_at(g);
        println!(
            "  ({},{},{}) -> ({}, {})",
            s.source_state, s.delay, s.prev_action, d.wait, d.action
        );
    }
    // MRVI at the brute-force optimum should see a near-zero residual.
    let recheck = mrvi_solve(&mdp, bf.best_cost, &mrvi_options(cfg));
    println!(
        "U(best_cost) residual:        {}",
        fmt_f64(recheck.u_lambda)
    );
    Ok(())
}
