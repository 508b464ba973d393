//! Subcommand dispatch. Every stage adds one report section, any files it
//! emits, and a violation line for each failed check.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use rayon::prelude::*;
use serde_json::{json, Value};

use degenctrl_core::adjoint::{adjoint_energy_audit, TraceParams};
use degenctrl_core::carleman::write_reports_csv;
use degenctrl_core::coefficients::{check_memory_admissibility, AdmissibilitySample};
use degenctrl_core::control::{uncontrolled_baseline, write_cg_csv, write_fixed_point_csv};
use degenctrl_core::discretization::io::{write_field_csv, write_fields_block};
use degenctrl_core::forward::write_diagnostics_csv;
use degenctrl_core::weights::{check_phi_le_eta, write_weight_csv, WeightKind};
use degenctrl_core::{
    audit, energy_audit, hum_control, memory_fixed_point, solve_adjoint, solve_forward, trace_estimate_audit,
    validate_profile, validate_rates, validation_mesh, ControlProblem, ControlResult, ControlWindow, EstimateId,
    ForwardProblem, Grid, Scenario, SourceMode,
};

use crate::config::{KernelConfig, RunConfig, Stage};
use crate::output::{Output, RunReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Validate,
    Forward,
    Adjoint,
    Carleman,
    Control,
    Fixpoint,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Forward => "forward",
            Command::Adjoint => "adjoint",
            Command::Carleman => "carleman",
            Command::Control => "control",
            Command::Fixpoint => "fixpoint",
            Command::Sweep => "sweep",
        }
    }

    fn stage(self) -> Option<Stage> {
        Some(match self {
            Command::Validate => Stage::Validate,
            Command::Forward => Stage::Forward,
            Command::Adjoint => Stage::Adjoint,
            Command::Carleman => Stage::Carleman,
            Command::Control => Stage::Control,
            Command::Fixpoint => Stage::Fixpoint,
            Command::Sweep => return None,
        })
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out: PathBuf,
    /// Worker threads for `sweep`.
    pub jobs: usize,
    /// Overrides the config's seed.
    pub seed: Option<u64>,
}

impl RunOptions {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        RunOptions { out: out.into(), jobs: 1, seed: None }
    }
}

/// Runs `cmd` and writes everything under `opts.out`.
pub fn run_command(cmd: Command, cfg: &RunConfig, opts: &RunOptions) -> anyhow::Result<RunReport> {
    let mut cfg = cfg.clone();
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    cfg.check()?;
    match cmd.stage() {
        Some(stage) => run_stages(cmd.name(), &cfg, &[stage], &opts.out),
        None => run_sweep(&cfg, opts),
    }
}

fn stage_name(stage: Stage) -> &'static str {
    match stage {
        Stage::Validate => "validate",
        Stage::Forward => "forward",
        Stage::Adjoint => "adjoint",
        Stage::Carleman => "carleman",
        Stage::Control => "control",
        Stage::Fixpoint => "fixpoint",
    }
}

/// Runs `stages` in order into `dir`.
pub fn run_stages(command: &str, cfg: &RunConfig, stages: &[Stage], dir: &Path) -> anyhow::Result<RunReport> {
    let mut out = Output::create(dir)?;
    let mut report = RunReport::new(command, cfg);
    for &stage in stages {
        let start = Instant::now();
        let name = stage_name(stage);
        let section = match stage {
            Stage::Validate => stage_validate(cfg, &mut out, &mut report.violations),
            Stage::Forward => stage_forward(cfg, &mut out, &mut report.violations),
            Stage::Adjoint => stage_adjoint(cfg, &mut out, &mut report.violations),
            Stage::Carleman => stage_carleman(cfg, &mut out, &mut report.violations),
            Stage::Control => stage_control(cfg, &mut out, &mut report.violations),
            Stage::Fixpoint => stage_fixpoint(cfg, &mut out, &mut report.violations),
        }
        .with_context(|| format!("{name} stage of `{}`", cfg.name))?;
        report.sections.insert(name.to_string(), section);
        report.timings.insert(name.to_string(), start.elapsed().as_secs_f64());
    }
    out.finish(report)
}

fn grid_json(g: &Grid) -> Value {
    json!({ "nx": g.nx, "na": g.na, "nt": g.nt, "dt": g.dt, "da": g.da, "nt_adjusted": g.nt_adjusted })
}

fn validation_json(rep: &degenctrl_core::ValidationReport) -> Value {
    json!({ "checks": rep.checks, "passed": rep.passed(), "violations": rep.violations, "notes": rep.notes })
}

fn stage_validate(cfg: &RunConfig, _out: &mut Output, violations: &mut Vec<String>) -> anyhow::Result<Value> {
    let mut section = serde_json::Map::new();
    let profile = match cfg.profile() {
        Ok(p) => {
            let mesh = validation_mesh(&p, cfg.validation.mesh_points, cfg.validation.mesh_grading);
            let rep = validate_profile(&p, &mesh);
            for v in &rep.violations {
                violations.push(format!("profile: {} at {} (residual {:e})", v.rule, v.location, v.residual));
            }
            section.insert("profile".into(), validation_json(&rep));
            section.insert("class".into(), json!(p.class_code()));
            Some(p)
        }
        Err(e) => {
            violations.push(format!("profile: {e}"));
            section.insert("profile".into(), json!({ "passed": false, "error": e.to_string() }));
            None
        }
    };
    let [nt, na, nx] = cfg.validation.rate_samples;
    let rates = validate_rates(&cfg.rates(), cfg.domain.a_max, cfg.domain.t_final, (nt, na, nx));
    for v in &rates.violations {
        violations.push(format!("rates: {} at {} (value {:e})", v.rule, v.location, v.residual));
    }
    section.insert("rates".into(), validation_json(&rates));
    let window = ControlWindow::new(cfg.window.alpha, cfg.window.rho_w);
    if let Err(e) = &window {
        violations.push(format!("window: {e}"));
    }
    section.insert("window".into(), json!({ "passed": window.is_ok() }));
    if profile.is_none() || window.is_err() {
        return Ok(Value::Object(section));
    }

    let sc = cfg.scenario()?;
    let grid = sc.grid(cfg.grid.refine)?;
    section.insert("grid".into(), grid_json(&grid));
    let s = cfg.weights.s();
    match sc.weights(sc.natural_orientation(), s) {
        Ok(ws) => {
            let nodal = ws.nodal(&grid)?;
            let times: Vec<f64> = (0..grid.nt).map(|n| grid.t_mid(n)).collect();
            let (worst, bad) = check_phi_le_eta(&ws, &nodal, &times, &grid.a_nodes());
            if bad > 0 {
                violations.push(format!("weights: phi > eta at {bad} nodes (worst {worst:e})"));
            }
            section.insert(
                "weights".into(),
                json!({
                    "orientation": format!("{:?}", ws.orientation),
                    "s": s,
                    "p_norm": ws.p_norm,
                    "rho_norm": ws.rho_norm,
                    "kappa": ws.kappa,
                    "psi_at_0": ws.psi_at_0,
                    "psi_at_1": ws.psi_at_1,
                    "flags": ws.flags,
                    "phi_le_eta_worst": worst,
                    "phi_le_eta_failures": bad,
                }),
            );
        }
        Err(e) => {
            // the weights are only needed by the audits and the control
            section.insert("weights".into(), json!({ "available": false, "reason": e.to_string() }));
        }
    }

    // Memory admissibility is a hypothesis of the control results only; it
    // counts as a violation when the kernel is claimed to be admissible.
    let cs = cfg.control_s();
    let p_norm = sc.weights(sc.natural_orientation(), cs).map(|w| w.p_norm);
    let claimed = matches!(cfg.kernel, KernelConfig::AdmissibleDecayKernel { .. });
    let memory = match p_norm {
        Ok(p) => {
            let c = check_memory_admissibility(
                &sc.kernel,
                cs,
                p,
                cfg.domain.t_final,
                cfg.domain.a_max,
                AdmissibilitySample::default(),
            );
            if claimed && !c.is_finite() {
                violations.push(format!("kernel: not admissible at s = {cs}"));
            }
            json!({ "s": cs, "constant": c, "admissible": c.is_finite(), "claimed": claimed })
        }
        Err(e) => {
            if claimed {
                violations.push(format!("kernel: admissibility needs the weights ({e})"));
            }
            json!({ "s": cs, "admissible": false, "reason": e.to_string() })
        }
    };
    section.insert("memory_admissibility".into(), memory);
    Ok(Value::Object(section))
}

fn stage_forward(cfg: &RunConfig, out: &mut Output, violations: &mut Vec<String>) -> anyhow::Result<Value> {
    let sc = cfg.scenario()?;
    let grid = sc.grid(cfg.grid.refine)?;
    let problem = sc.forward_problem(&grid, true);
    let traj = solve_forward(&problem)?;
    let energy = energy_audit(&traj, &problem);
    if !energy.passed {
        violations.push(format!("forward: energy bound exceeded (C_emp {:?})", energy.c_emp));
    }
    out.write_with("forward_terminal.csv", |w| write_field_csv(w, &grid, traj.terminal()))?;
    out.write_with("forward_diagnostics.csv", |w| write_diagnostics_csv(w, &traj))?;
    out.write_with("forward_trajectory.blk", |w| write_fields_block(w, &traj.snapshots))?;
    out.plot("forward_diagnostics.csv", "forward norms", "t", &["L2_norm", "dissipation", "newborn_L2"], false, true);
    out.plot("forward_terminal.csv", "y(T)", "x", &["value"], false, false);
    Ok(json!({
        "grid": grid_json(&grid),
        "memory": !sc.kernel.is_zero(),
        "terminal_l2": traj.terminal().norm_sq(&grid).sqrt(),
        "finite": traj.is_finite(),
        "energy": energy,
    }))
}

fn stage_adjoint(cfg: &RunConfig, out: &mut Output, violations: &mut Vec<String>) -> anyhow::Result<Value> {
    let sc = cfg.scenario()?;
    let grid = sc.grid(cfg.grid.refine)?;
    let problem = sc.adjoint_problem(&grid);
    let traj = solve_adjoint(&problem)?;
    let energy = adjoint_energy_audit(&traj, &problem);
    if !energy.passed {
        violations.push(format!("adjoint: energy bound exceeded (C_emp {:?})", energy.c_emp));
    }
    let s = cfg.weights.s();
    let trace = match sc.weights(sc.natural_orientation(), s) {
        Ok(ws) => {
            let nodal = ws.nodal(&grid)?;
            let rep = trace_estimate_audit(&traj, &problem, &nodal, s, TraceParams::default_for(&grid, problem.rates.a_bar));
            if rep.violation {
                violations.push("adjoint: newborn-trace estimate violated".to_string());
            }
            serde_json::to_value(&rep)?
        }
        Err(e) => json!({ "available": false, "reason": e.to_string() }),
    };
    out.write_with("adjoint_initial.csv", |w| write_field_csv(w, &grid, &traj.snapshots[0]))?;
    out.write_with("adjoint_diagnostics.csv", |w| write_diagnostics_csv(w, &traj))?;
    out.write_with("adjoint_trajectory.blk", |w| write_fields_block(w, &traj.snapshots))?;
    out.plot("adjoint_diagnostics.csv", "adjoint norms", "t", &["L2_norm", "dissipation", "newborn_L2"], false, true);
    Ok(json!({
        "grid": grid_json(&grid),
        "initial_l2": traj.snapshots[0].norm_sq(&grid).sqrt(),
        "finite": traj.is_finite(),
        "energy": energy,
        "trace": trace,
    }))
}

fn selected_estimates(cfg: &RunConfig) -> Vec<EstimateId> {
    if cfg.carleman.estimates.is_empty() {
        EstimateId::ALL.to_vec()
    } else {
        cfg.carleman.estimates.iter().filter_map(|n| EstimateId::parse(n)).collect()
    }
}

fn stage_carleman(cfg: &RunConfig, out: &mut Output, violations: &mut Vec<String>) -> anyhow::Result<Value> {
    let sc = cfg.scenario()?;
    let cs = sc.carleman(cfg.grid.refine)?;
    let mut all = Vec::new();
    let mut per_estimate = serde_json::Map::new();
    for est in selected_estimates(cfg) {
        if !cs.applicable(est) {
            per_estimate.insert(est.name().into(), json!({ "applicable": false }));
            continue;
        }
        let reports = audit(est, &cs, &cfg.carleman.s_values)?;
        let rows: Vec<Value> = reports
            .iter()
            .map(|r| {
                if r.violation {
                    violations.push(format!("carleman: {} violated at s = {}", est.name(), r.s));
                }
                json!({
                    "s": r.s,
                    "ln_c": r.empirical_c_ln(),
                    "lhs": r.lhs_total,
                    "rhs": r.rhs_total,
                    "violation": r.violation,
                    "truncation_flags": r.truncation_flags,
                })
            })
            .collect();
        per_estimate.insert(est.name().into(), json!({ "applicable": true, "reports": rows }));
        all.extend(reports);
    }
    out.write_with("carleman.csv", |w| write_reports_csv(w, &all))?;
    out.plot("carleman.csv", "empirical constants", "s", &["value"], true, true);
    let orientation = sc.natural_orientation();
    if let Ok(ws) = sc.weights(orientation, cfg.weights.s()) {
        let g = &cs.problem.grid;
        for kind in [WeightKind::Phi, WeightKind::Sigma] {
            let file = format!("weights_{}.csv", kind.name().to_lowercase());
            out.write_with(&file, |w| write_weight_csv(w, &ws, kind, g))?;
            out.plot(&file, kind.name(), "x", &["log_exp_value"], false, false);
        }
    }
    Ok(json!({ "scenario": cs.name, "s_values": cfg.carleman.s_values, "estimates": per_estimate }))
}

fn control_problem(cfg: &RunConfig, sc: &Scenario, eps: f64) -> anyhow::Result<ControlProblem> {
    let mut p = sc.control_problem(cfg.grid.refine, cfg.control_s(), eps)?;
    p.cg_tol = cfg.control.cg_tol;
    p.cg_max_iter = cfg.control.cg_max_iter;
    Ok(p)
}

fn control_json(res: &ControlResult, grid: &Grid, baseline: f64) -> Value {
    json!({
        "terminal_norm_target": res.terminal_norm_target,
        "free_terminal_norm_target": res.free_terminal_norm_target,
        "baseline_terminal_norm_target": baseline,
        "reduction": if baseline > 0.0 { res.terminal_norm_target / baseline } else { 0.0 },
        "control_norm": res.control_norm(grid),
        "cg_iters": res.cg_iters,
        "cg_converged": res.converged,
        "gradient_norm": res.gradient_norm,
        "lambda_max": res.lambda_max,
        "eps_eff": res.eps_eff,
        "hum_bound": res.hum_bound,
        "j_value": res.j_value,
        "effort": res.effort,
    })
}

fn write_control_files(out: &mut Output, res: &ControlResult, grid: &Grid) -> anyhow::Result<()> {
    out.write_with("control.blk", |w| write_fields_block(w, &res.f.steps))?;
    out.write_with("control_terminal.csv", |w| write_field_csv(w, grid, res.y.terminal()))?;
    out.write_with("cg_history.csv", |w| write_cg_csv(w, &res.cg_history))?;
    out.plot("cg_history.csv", "CG convergence", "iteration", &["gradient_norm"], false, true);
    Ok(())
}

fn stage_control(cfg: &RunConfig, out: &mut Output, violations: &mut Vec<String>) -> anyhow::Result<Value> {
    let sc = cfg.scenario()?;
    let problem = control_problem(cfg, &sc, cfg.control.eps)?;
    let (_, baseline) = uncontrolled_baseline(&problem)?;
    // memory frozen at the uncontrolled memoryless history
    let free = solve_forward(&ForwardProblem {
        grid: problem.grid.clone(),
        profile: problem.profile.clone(),
        rates: problem.rates.clone(),
        window: problem.window,
        y0: problem.y0.clone(),
        control: None,
        source: SourceMode::None,
    })?;
    let res = hum_control(&problem, &free)?;
    if !res.converged {
        violations.push(format!("control: CG stopped after {} iterations", res.cg_iters));
    }
    write_control_files(out, &res, &problem.grid)?;
    Ok(json!({ "grid": grid_json(&problem.grid), "s": problem.s, "eps": problem.eps, "result": control_json(&res, &problem.grid, baseline) }))
}

fn stage_fixpoint(cfg: &RunConfig, out: &mut Output, violations: &mut Vec<String>) -> anyhow::Result<Value> {
    let sc = cfg.scenario()?;
    let problem = control_problem(cfg, &sc, cfg.control.eps)?;
    let (_, baseline) = uncontrolled_baseline(&problem)?;
    let fp = memory_fixed_point(&problem, cfg.control.fixpoint_tol, cfg.control.fixpoint_max_iter)?;
    if !fp.converged {
        violations.push(format!("fixpoint: not converged in {} iterations", fp.iterates.len()));
    }
    if !fp.final_result.converged {
        violations.push(format!("fixpoint: final CG stopped after {} iterations", fp.final_result.cg_iters));
    }
    write_control_files(out, &fp.final_result, &problem.grid)?;
    out.write_with("fixpoint.csv", |w| write_fixed_point_csv(w, &fp))?;
    out.plot("fixpoint.csv", "Picard residual", "iter", &["residual"], false, true);
    Ok(json!({
        "grid": grid_json(&problem.grid),
        "s": problem.s,
        "eps": problem.eps,
        "iterations": fp.iterates.len(),
        "converged": fp.converged,
        "iterates": fp.iterates,
        "contraction_ratios": fp.contraction_ratios(),
        "result": control_json(&fp.final_result, &problem.grid, baseline),
    }))
}

/// `eps_1e-4` style directory names.
fn eps_dir(eps: f64) -> String {
    format!("eps_{eps:e}")
}

fn run_sweep(cfg: &RunConfig, opts: &RunOptions) -> anyhow::Result<RunReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| anyhow!("thread pool: {e}"))?;
    let mut out = Output::create(&opts.out)?;
    let mut report = RunReport::new("sweep", cfg);
    let start = Instant::now();
    if cfg.sweep.presets.is_empty() {
        let eps_list = &cfg.sweep.eps;
        let runs: Vec<anyhow::Result<RunReport>> = pool.install(|| {
            eps_list
                .par_iter()
                .map(|&eps| {
                    let mut sub = cfg.clone();
                    sub.control.eps = eps;
                    run_stages("fixpoint", &sub, &[Stage::Fixpoint], &opts.out.join(eps_dir(eps)))
                })
                .collect()
        });
        let mut rows = Vec::new();
        let mut csv = csv::Writer::from_writer(Vec::new());
        csv.write_record(["eps", "terminal_norm_target", "control_norm", "fixpoint_iters", "report_hash"])?;
        for (&eps, run) in eps_list.iter().zip(runs) {
            let sub = run?;
            let fp = &sub.sections["fixpoint"];
            let terminal = fp["result"]["terminal_norm_target"].as_f64().unwrap_or(f64::NAN);
            csv.write_record([
                format!("{eps:e}"),
                format!("{terminal:e}"),
                format!("{:e}", fp["result"]["control_norm"].as_f64().unwrap_or(f64::NAN)),
                fp["iterations"].to_string(),
                sub.report_hash.clone(),
            ])?;
            for v in &sub.violations {
                report.violations.push(format!("{}: {v}", eps_dir(eps)));
            }
            out.adopt(&eps_dir(eps), &sub.files, &[]);
            rows.push((eps, terminal, sub));
        }
        // ordered by decreasing eps, the terminal norm must not grow
        let mut by_eps: Vec<(f64, f64)> = rows.iter().map(|r| (r.0, r.1)).collect();
        by_eps.sort_by(|a, b| b.0.total_cmp(&a.0));
        let monotone = by_eps.windows(2).all(|w| w[1].1 <= w[0].1);
        if !monotone {
            report.violations.push("sweep: terminal norm not monotone in eps".to_string());
        }
        out.write_bytes("sweep.csv", &csv.into_inner()?)?;
        out.plot("sweep.csv", "terminal norm against penalty", "eps", &["terminal_norm_target"], true, true);
        let instances: Vec<Value> = rows
            .iter()
            .map(|(eps, t, sub)| json!({ "eps": eps, "terminal_norm_target": t, "report_hash": sub.report_hash }))
            .collect();
        report.sections.insert(
            "sweep".into(),
            json!({ "kind": "eps", "instances": instances, "monotone_nonincreasing": monotone }),
        );
    } else {
        let presets = &cfg.sweep.presets;
        let stages = &cfg.sweep.stages;
        let runs: Vec<anyhow::Result<RunReport>> = pool.install(|| {
            presets
                .par_iter()
                .map(|name| {
                    let mut sub = RunConfig::preset(name).ok_or_else(|| anyhow!("unknown preset `{name}`"))?;
                    sub.seed = cfg.seed;
                    run_stages("suite", &sub, stages, &opts.out.join(name))
                })
                .collect()
        });
        let mut instances = Vec::new();
        for (name, run) in presets.iter().zip(runs) {
            let sub = run?;
            for v in &sub.violations {
                report.violations.push(format!("{name}: {v}"));
            }
            out.adopt(name, &sub.files, &[]);
            instances.push(json!({ "preset": name, "report_hash": sub.report_hash, "violations": sub.violations.len() }));
        }
        report.sections.insert("sweep".into(), json!({ "kind": "presets", "stages": stages, "instances": instances }));
    }
    report.timings.insert("sweep".into(), start.elapsed().as_secs_f64());
    out.finish(report)
}
