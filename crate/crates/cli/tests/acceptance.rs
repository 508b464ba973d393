//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! Lines go straight to stderr so they show up even when the harness
//! captures output. Set `DEGENCTRL_BLESS=1` to rewrite the Carleman baseline.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use common::*;
use degenctrl_cli::{run_command, Command, RunConfig, RunOptions, Stage, PRESETS};
use degenctrl_core::coefficients::DEFAULT_GRADING;
use degenctrl_core::control::{uncontrolled_baseline, HumOperator};
use degenctrl_core::forward::SolverContext;
use degenctrl_core::scenarios::{control_demo, control_suite, suite, CONTROL_S};
use degenctrl_core::weights::WeightKind;
use degenctrl_core::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const RATIO_TOL: f64 = 1e-12;
const PSI_TOL: f64 = 1e-8;
const DUALITY_TOL: f64 = 1e-10;
const RANDOM_SCENARIOS: usize = 20;
const ENERGY_DRIFT: f64 = 0.20;
const MIN_ORDER: f64 = 0.9;
const FORMULA_RATIO: (f64, f64) = (1.7, 2.3);
const CARLEMAN_S: [f64; 3] = [1.0, 3.0, 10.0];
const BASELINE_REL: f64 = 0.25;
const CONTROL_REDUCTION: f64 = 1e-3;
const CONTROL_EPS: f64 = 1e-6;
const FIXPOINT_TOL: f64 = 1e-6;
const FIXPOINT_MAX_ITER: usize = 20;
const EFFORT_REFINEMENTS: (usize, usize) = (2, 4);
const EFFORT_DRIFT: f64 = 0.25;

fn report(n: u32, name: &str, pass: bool, detail: &str) {
    let line = format!("criterion {n:>2} {name:<28} {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

fn sci(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", ")
}

#[test]
fn criterion_01_admissibility_lattice() {
    let lattice: Vec<f64> = (0..8).map(|i| 0.25 * i as f64).collect();
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    let mut cases = 0;
    for &m1 in &lattice {
        for &m2 in &lattice {
            let prof = power_law_profile(m1, m2).unwrap();
            for points in [50, 200, 800] {
                cases += 1;
                let mesh = validation_mesh(&prof, points, DEFAULT_GRADING);
                let rep = validate_profile(&prof, &mesh);
                if !rep.passed() {
                    failures.push(format!("({m1},{m2})/{points}"));
                }
                for &x in &mesh {
                    // x k'/k for x^m1 (1-x)^m2
                    let want = m1 - m2 * x / (1.0 - x);
                    let got = x * prof.k_prime(x) / prof.k(x);
                    worst = worst.max((got - want).abs() / want.abs().max(1.0));
                }
            }
        }
    }
    let rejected = [2.0, 2.25, 3.0]
        .iter()
        .all(|&m| power_law_profile(m, 0.0).is_err() && power_law_profile(0.0, m).is_err());
    let pass = failures.is_empty() && worst <= RATIO_TOL && rejected;
    report(
        1,
        "admissibility lattice",
        pass,
        &format!("{cases} profile/mesh cases, rejected={}, max ratio error {worst:.1e}, failures {failures:?}", rejected),
    );
}

#[test]
fn criterion_02_weight_identities() {
    let prof = power_law_profile(1.0, 0.0).unwrap();
    let mesh = validation_mesh(&prof, 800, DEFAULT_GRADING);
    let cfg = WeightConfig { orientation: Orientation::Left, t_final: 1.0, a_max: 1.0, s: 1.0, kappa: None, quad_points: 400 };
    let w = WeightSet::build(&prof, &cfg, &mesh).unwrap();
    let e0 = (w.psi(0.0).unwrap() + 2.0).abs();
    let e1 = (w.psi(1.0).unwrap() + 1.0).abs();

    let mut profiles = 0;
    let mut nodes = 0usize;
    let mut bad = 0usize;
    let mut worst = f64::NEG_INFINITY;
    for sc in suite() {
        for o in [Orientation::Left, Orientation::Right] {
            let Ok(w) = sc.weights(o, 1.0) else { continue };
            if w.flags.rho_truncated || !w.rho_norm.is_finite() {
                continue;
            }
            profiles += 1;
            let grid = sc.grid(1).unwrap();
            let mesh = validation_mesh(&sc.profile, 800, DEFAULT_GRADING);
            for &x in grid.x_centers.iter().chain(&mesh) {
                for n in 1..grid.nt {
                    for j in 0..grid.na {
                        let (t, a) = (grid.t(n), grid.a(j));
                        let d = w.eval(WeightKind::Varphi, t, a, x).unwrap() - w.eval(WeightKind::Eta, t, a, x).unwrap();
                        worst = worst.max(d);
                        nodes += 1;
                        if d > 0.0 {
                            bad += 1;
                        }
                    }
                }
            }
        }
    }
    let pass = e0 <= PSI_TOL && e1 <= PSI_TOL && profiles >= 4 && bad == 0;
    report(
        2,
        "weight identities",
        pass,
        &format!(
            "|psi(0)+2|={e0:.1e} |psi(1)+1|={e1:.1e}; {profiles} finite-rho cases, {nodes} nodes, {bad} with phi>eta (max phi-eta {worst:.3e})"
        ),
    );
}

fn omega_restricted(ctx: &SolverContext, f: &StepField) -> StepField {
    let mut out = f.clone();
    for s in &mut out.steps {
        ctx.restrict_to_omega(s);
    }
    out
}

#[test]
fn criterion_03_discrete_duality() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce_0003);
    let mut worst_pair = 0.0f64;
    for idx in 0..RANDOM_SCENARIOS {
        let sc = random_scenario(&mut rng, idx);
        let grid = sc.grid(1).unwrap();
        let ctx = SolverContext::new(&grid, &sc.profile, &sc.rates, &sc.window);
        let f = random_steps(&mut rng, &grid);
        let g = random_steps(&mut rng, &grid);
        let zero = Field::zeros_on(&grid);
        let y = solve_forward_with(&ctx, &zero, Some(&f), &SourceMode::None).unwrap();
        let v = solve_adjoint_with(&ctx, &zero, Some(&g), true).unwrap();
        let lhs = omega_restricted(&ctx, &f).dot(&v.q_field(), &grid);
        let rhs = -y.q_field().dot(&g, &grid);
        worst_pair = worst_pair.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()));
    }
    let mut worst_sym = 0.0f64;
    let mut worst_psd = 0.0f64;
    let mut gram = 0;
    for idx in 0..RANDOM_SCENARIOS {
        let sc = random_scenario(&mut rng, idx);
        let Ok(problem) = sc.control_problem(1, 1e-3, 1e-4) else { continue };
        let op = HumOperator::new(&problem).unwrap();
        let grid = &problem.grid;
        let (mut u, mut w) = (random_field(&mut rng, grid), random_field(&mut rng, grid));
        op.project(&mut u);
        op.project(&mut w);
        let (lu, lw) = (op.apply(&u).unwrap(), op.apply(&w).unwrap());
        let scale = (op.inner(&lu, &u) * op.inner(&lw, &w)).sqrt().max(f64::MIN_POSITIVE);
        worst_sym = worst_sym.max((op.inner(&lu, &w) - op.inner(&u, &lw)).abs() / scale);
        worst_psd = worst_psd.max(-op.inner(&lu, &u) / scale);
        gram += 1;
    }
    let pass = worst_pair <= DUALITY_TOL && worst_sym <= DUALITY_TOL && worst_psd <= DUALITY_TOL && gram >= 15;
    report(
        3,
        "discrete duality",
        pass,
        &format!(
            "{RANDOM_SCENARIOS} pairings, max rel gap {worst_pair:.1e}; {gram} Gram checks, asym {worst_sym:.1e}, neg part {worst_psd:.1e}"
        ),
    );
}

#[test]
fn criterion_04_energy_estimate() {
    let energy = |sc: &Scenario, na: usize| {
        let mut s = sc.clone();
        s.na = na;
        let grid = s.grid(1).unwrap();
        let problem = s.forward_problem(&grid, true);
        energy_audit(&solve_forward(&problem).unwrap(), &problem)
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for sc in suite() {
        let (a, b) = (energy(&sc, sc.na), energy(&sc, 2 * sc.na));
        let (c1, c2) = (a.c_emp.unwrap_or(f64::NAN), b.c_emp.unwrap_or(f64::NAN));
        let drift = (c2 / c1 - 1.0).abs();
        pass &= a.passed && b.passed && c1.is_finite() && c2.is_finite() && drift < ENERGY_DRIFT;
        parts.push(format!("{} C={c1:.3}->{c2:.3}", sc.name));
    }
    report(4, "energy estimate", pass, &parts.join(", "));
}

#[test]
fn criterion_05_manufactured_convergence() {
    let mut min_order = f64::INFINITY;
    let mut worst = String::new();
    for sc in suite() {
        for study in [Study::Space, Study::Time] {
            let levels: &[(usize, usize)] = match study {
                Study::Space => &SPACE_LEVELS,
                Study::Time => &TIME_LEVELS,
            };
            for adjoint in [false, true] {
                let errs: Vec<f64> = levels
                    .iter()
                    .map(|&(nx, na)| {
                        if adjoint {
                            adjoint_mms_error(&sc.profile, study, nx, na)
                        } else {
                            forward_mms_error(&sc.profile, study, nx, na)
                        }
                    })
                    .collect();
                for p in observed_orders(&errs) {
                    if !(p >= min_order) {
                        min_order = p;
                        let solver = if adjoint { "adjoint" } else { "forward" };
                        worst = format!("{} {solver} {study:?}", sc.name);
                    }
                }
            }
        }
    }
    report(5, "manufactured convergence", min_order >= MIN_ORDER, &format!("min observed order {min_order:.3} ({worst})"));
}

#[test]
fn criterion_06_characteristic_formula() {
    let mut pass = true;
    let mut parts = Vec::new();
    for sc in suite() {
        let errs: Vec<f64> = FORMULA_LEVELS.iter().map(|&na| formula_disagreement(&sc, na)).collect();
        let ratios: Vec<f64> = errs.windows(2).map(|w| w[0] / w[1]).collect();
        pass &= ratios.iter().all(|r| (FORMULA_RATIO.0..=FORMULA_RATIO.1).contains(r));
        parts.push(format!("{} {:.2?}", sc.name, ratios));
    }
    report(6, "characteristic formula", pass, &parts.join(", "));
}

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/carleman_baseline.json")
}

#[test]
fn criterion_07_carleman_audits() {
    let mut current = BTreeMap::new();
    let mut nonfinite = Vec::new();
    let mut covered = BTreeMap::new();
    for sc in suite() {
        let scen = sc.carleman(1).unwrap();
        for est in EstimateId::ALL {
            if !scen.applicable(est) {
                continue;
            }
            *covered.entry(est.name()).or_insert(0) += 1;
            for r in audit(est, &scen, &CARLEMAN_S).unwrap() {
                match r.empirical_c_ln() {
                    Some(l) if l.is_finite() => {
                        current.insert(format!("{}/{}/{}", sc.name, est.name(), r.s), l);
                    }
                    _ => nonfinite.push(format!("{}/{}/{}", sc.name, est.name(), r.s)),
                }
            }
        }
    }
    let all_covered = EstimateId::ALL.iter().all(|e| covered.contains_key(e.name()));
    let path = golden_path();
    if std::env::var("DEGENCTRL_BLESS").is_ok_and(|v| v == "1") {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, serde_json::to_string_pretty(&current).unwrap() + "\n").unwrap();
    }
    let baseline: Option<BTreeMap<String, f64>> =
        std::fs::read_to_string(&path).ok().and_then(|s| serde_json::from_str(&s).ok());
    let (regress, worst) = match &baseline {
        Some(base) => {
            let mut worst = 0.0f64;
            let mut missing = Vec::new();
            for (k, &l) in &current {
                match base.get(k) {
                    Some(&b) => worst = worst.max(((l - b).exp() - 1.0).abs()),
                    None => missing.push(k.clone()),
                }
            }
            let same_keys = missing.is_empty() && base.len() == current.len();
            (same_keys && worst <= BASELINE_REL, worst)
        }
        None => (false, f64::NAN),
    };
    let pass = nonfinite.is_empty() && all_covered && regress;
    report(
        7,
        "Carleman audits",
        pass,
        &format!(
            "{} finite constants over s in {CARLEMAN_S:?}, non-finite {nonfinite:?}, scenarios per estimate {covered:?}, max rel change vs baseline {worst:.2e}{}",
            current.len(),
            if baseline.is_none() { " (baseline missing)" } else { "" }
        ),
    );
}

#[test]
fn criterion_08_null_control() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::preset("wd_control").unwrap();
    cfg.sweep.eps = vec![1e-2, 1e-4, CONTROL_EPS];
    cfg.control.fixpoint_tol = FIXPOINT_TOL;
    cfg.control.fixpoint_max_iter = FIXPOINT_MAX_ITER;
    let opts = RunOptions { out: dir.path().to_path_buf(), jobs: 3, seed: None };
    let rep = run_command(Command::Sweep, &cfg, &opts).unwrap();
    let sweep = &rep.sections["sweep"];
    let norms: Vec<f64> =
        sweep["instances"].as_array().unwrap().iter().map(|i| i["terminal_norm_target"].as_f64().unwrap()).collect();
    let monotone = norms.windows(2).all(|w| w[1] <= w[0]) && sweep["monotone_nonincreasing"] == true;

    // independent recomputation of the finest case through the library
    let problem = control_demo(CONTROL_S).control_problem(1, CONTROL_S, CONTROL_EPS).unwrap();
    let (_, baseline) = uncontrolled_baseline(&problem).unwrap();
    let fp = memory_fixed_point(&problem, FIXPOINT_TOL, FIXPOINT_MAX_ITER).unwrap();
    let terminal = fp.final_result.terminal_norm_target;
    let ratio = terminal / baseline;
    let agree = (terminal - norms[2]).abs() <= 1e-12 * terminal;
    let pass = fp.converged && ratio <= CONTROL_REDUCTION && monotone && agree && rep.passed();
    report(
        8,
        "null control",
        pass,
        &format!(
            "|y(T)| {terminal:.3e} vs baseline {baseline:.3e} (ratio {ratio:.2e}) after {} Picard steps; eps sweep [{}]",
            fp.iterates.len(),
            sci(&norms)
        ),
    );
}

#[test]
fn criterion_09_fixed_point() {
    let mut memoryless = control_demo(CONTROL_S);
    memoryless.kernel = MemoryKernel::zero();
    let p0 = memoryless.control_problem(1, CONTROL_S, 1e-4).unwrap();
    let fp0 = memory_fixed_point(&p0, FIXPOINT_TOL, FIXPOINT_MAX_ITER).unwrap();
    let p1 = control_demo(CONTROL_S).control_problem(1, CONTROL_S, 1e-4).unwrap();
    let fp1 = memory_fixed_point(&p1, FIXPOINT_TOL, FIXPOINT_MAX_ITER).unwrap();
    let ratios = fp1.contraction_ratios();
    let pass = fp0.converged
        && fp0.iterates.len() == 1
        && fp1.converged
        && fp1.iterates.len() <= FIXPOINT_MAX_ITER
        && !ratios.is_empty()
        && ratios.iter().all(|&r| r < 1.0);
    report(
        9,
        "fixed point",
        pass,
        &format!("b=0: {} iteration(s); admissible kernel: {} iterations, ratios [{}]", fp0.iterates.len(), fp1.iterates.len(), sci(&ratios)),
    );
}

#[test]
fn criterion_10_control_effort() {
    let jobs: Vec<(Scenario, usize)> = control_suite(CONTROL_S)
        .into_iter()
        .flat_map(|sc| [EFFORT_REFINEMENTS.0, EFFORT_REFINEMENTS.1].map(|r| (sc.clone(), r)))
        .collect();
    let results: Vec<Option<f64>> = std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(sc, r)| {
                s.spawn(move || {
                    let problem = sc.control_problem(*r, CONTROL_S, 1e-4).unwrap();
                    let fp = memory_fixed_point(&problem, FIXPOINT_TOL, FIXPOINT_MAX_ITER).unwrap();
                    fp.converged.then_some(fp.final_result.effort.c_emp).flatten()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut pass = true;
    let mut parts = Vec::new();
    for (pair, c) in jobs.chunks(2).zip(results.chunks(2)) {
        let name = &pair[0].0.name;
        match (c[0], c[1]) {
            (Some(a), Some(b)) if a.is_finite() && b.is_finite() => {
                let drift = (b / a - 1.0).abs();
                pass &= drift <= EFFORT_DRIFT;
                parts.push(format!("{name} C={a:.4}->{b:.4} ({:+.1}%)", 100.0 * (b / a - 1.0)));
            }
            _ => {
                pass = false;
                parts.push(format!("{name} C not finite"));
            }
        }
    }
    report(10, "control effort", pass, &format!("refine {EFFORT_REFINEMENTS:?}: {}", parts.join(", ")));
}

#[test]
fn criterion_11_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let mut suite_cfg = RunConfig::preset("wd_left").unwrap();
    suite_cfg.name = "suite".into();
    suite_cfg.seed = 11;
    suite_cfg.sweep.presets = PRESETS.iter().map(|s| s.to_string()).collect();
    suite_cfg.sweep.stages = vec![Stage::Validate, Stage::Forward, Stage::Adjoint, Stage::Carleman];
    let mut eps_cfg = RunConfig::preset("wd_control").unwrap();
    eps_cfg.seed = 11;
    let mut hashes = Vec::new();
    for (run, jobs) in [("a", 4), ("b", 1)] {
        let mut h = Vec::new();
        for (name, cfg) in [("suite", &suite_cfg), ("eps", &eps_cfg)] {
            let opts = RunOptions { out: dir.path().join(run).join(name), jobs, seed: Some(11) };
            let rep = run_command(Command::Sweep, cfg, &opts).unwrap();
            h.push(rep.report_hash);
        }
        hashes.push(h);
    }
    let manifests_equal = ["suite", "eps"].iter().all(|n| {
        std::fs::read(dir.path().join("a").join(n).join("manifest.txt")).unwrap()
            == std::fs::read(dir.path().join("b").join(n).join("manifest.txt")).unwrap()
    });
    let pass = hashes[0] == hashes[1] && manifests_equal;
    report(
        11,
        "determinism",
        pass,
        &format!("suite {} / eps sweep {}, manifests equal={manifests_equal}", &hashes[0][0][..16], &hashes[0][1][..16]),
    );
}
