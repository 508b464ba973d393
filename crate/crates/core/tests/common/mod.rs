#![allow(dead_code)]

use std::sync::Arc;

use degenctrl_core::scenarios::{standard_rates, Scenario};
use degenctrl_core::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_field(rng: &mut ChaCha8Rng, grid: &Grid) -> Field {
    let vals = (0..grid.na * grid.nx).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Field::from_values(grid.na, grid.nx, vals).unwrap()
}

pub fn random_steps(rng: &mut ChaCha8Rng, grid: &Grid) -> StepField {
    StepField { steps: (0..grid.nt).map(|_| random_field(rng, grid)).collect() }
}

/// A random scenario degenerate at no more than one end, so that one weight
/// orientation always applies.
pub fn random_scenario(rng: &mut ChaCha8Rng, idx: usize) -> Scenario {
    let m = 0.25 * rng.gen_range(0..8) as f64;
    let profile = match rng.gen_range(0..3) {
        0 => power_law_profile(m, 0.0),
        1 => power_law_profile(0.0, m),
        _ => power_law_profile(0.0, 0.0),
    }
    .unwrap();
    let a_max = rng.gen_range(0.5..2.0);
    let na = rng.gen_range(2..7) * 2;
    let t_ratio: f64 = [0.5, 1.0, 2.0][rng.gen_range(0..3)];
    let a_bar = rng.gen_range(0.1..0.9) * a_max * t_ratio.min(1.0);
    let alpha = rng.gen_range(0.05..0.6);
    let rho_w = rng.gen_range(alpha + 0.1..0.95);
    let beta0 = rng.gen_range(0.0..3.0);
    let mu0 = rng.gen_range(0.0..1.0);
    Scenario {
        name: format!("random_{idx}"),
        profile,
        rates: standard_rates(beta0, mu0, a_bar, a_max),
        window: ControlWindow::new(alpha, rho_w).unwrap(),
        kernel: MemoryKernel::zero(),
        t_final: t_ratio * a_max,
        a_max,
        nx: rng.gen_range(8..20),
        na,
        grading: degenctrl_core::coefficients::DEFAULT_GRADING,
        kappa: None,
        y0: Arc::new(|_, _| 0.0),
        control: None,
        g: Arc::new(|_, _, _| 0.0),
        v_t: Arc::new(|_, _| 0.0),
    }
}

/// `(value, x-derivative, second x-derivative)` of `x^2 (1-x)^2`.
pub fn bump(x: f64) -> (f64, f64, f64) {
    let v = x * x * (1.0 - x) * (1.0 - x);
    let d1 = 2.0 * x * (1.0 - x) * (1.0 - 2.0 * x);
    let d2 = 2.0 - 12.0 * x + 12.0 * x * x;
    (v, d1, d2)
}

/// `(k X')'` for the bump `X`, from the exact `k'`.
pub fn flux_div(profile: &DegeneracyProfile, x: f64) -> f64 {
    let (_, d1, d2) = bump(x);
    profile.k_prime(x) * d1 + profile.k(x) * d2
}

/// `log2(e_coarse / e_fine)` for consecutive levels.
pub fn observed_orders(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Study {
    /// Solutions constant along characteristics, so only space errors remain.
    Space,
    /// Generic smooth solutions on a fine space grid.
    Time,
}

const A_BAR: f64 = 0.5;

fn mms_mu(_t: f64, a: f64, x: f64) -> f64 {
    0.2 * (1.0 + a + x * (1.0 - x))
}

// c int_{1/2}^1 ((a - 1/2) / (1/2))^2 (1 + a^2) da = 1, in closed form
fn mms_beta(a: f64, _x: f64) -> f64 {
    if a <= A_BAR {
        0.0
    } else {
        let u = (a - A_BAR) / (1.0 - A_BAR);
        let c = 1.0 / (0.5 * (1.25 / 3.0 + 0.5 / 4.0 + 0.25 / 5.0));
        c * u * u
    }
}

fn mms_rates(study: Study) -> RateSet {
    match study {
        Study::Space => RateSet::new(|_, _| 0.0, mms_mu, A_BAR),
        Study::Time => RateSet::new(mms_beta, mms_mu, A_BAR),
    }
}

fn max_error(grid: &Grid, snaps: &[Field], exact: impl Fn(f64, f64, f64) -> f64) -> f64 {
    snaps
        .iter()
        .enumerate()
        .map(|(n, s)| {
            let mut e = Field::from_fn(grid, |a, x| exact(grid.t(n), a, x));
            e.axpy(-1.0, s);
            e.norm_sq(grid).sqrt()
        })
        .fold(0.0, f64::max)
}

/// Max-in-time L2 error of the forward solver against a manufactured
/// solution on `[0,1]^2` in `(t, a)`.
///
/// Space: `y = ((a - t)_+)^3 X(x)`, no births. Time: `y = (1 + sin 3t)(1 + a^2) X(x)`
/// with fertility normalized so the renewal condition holds exactly.
pub fn forward_mms_error(profile: &DegeneracyProfile, study: Study, nx: usize, na: usize) -> f64 {
    let grid = build_grid_for(profile, nx, na, na, 1.0, 1.0, degenctrl_core::coefficients::DEFAULT_GRADING).unwrap();
    let window = ControlWindow::new(0.3, 0.8).unwrap();
    let ctx = degenctrl_core::forward::SolverContext::new(&grid, profile, &mms_rates(study), &window);
    let lx = |x: f64| flux_div(profile, x);
    let (exact, source): (Box<dyn Fn(f64, f64, f64) -> f64>, Box<dyn Fn(f64, f64, f64) -> f64>) = match study {
        Study::Space => {
            let phi = |s: f64| if s < 0.0 { -s * s * s } else { 0.0 };
            (
                Box::new(move |t, a, x| phi(t - a) * bump(x).0),
                Box::new(move |t, a, x| phi(t - a) * (mms_mu(t, a, x) * bump(x).0 - lx(x))),
            )
        }
        Study::Time => {
            let tf = |t: f64| 1.0 + (3.0 * t).sin();
            let dtf = |t: f64| 3.0 * (3.0 * t).cos();
            (
                Box::new(move |t, a, x| tf(t) * (1.0 + a * a) * bump(x).0),
                Box::new(move |t, a, x| {
                    let q = 1.0 + a * a;
                    (dtf(t) * q + tf(t) * 2.0 * a) * bump(x).0 - tf(t) * q * lx(x) + mms_mu(t, a, x) * tf(t) * q * bump(x).0
                }),
            )
        }
    };
    let y0 = Field::from_fn(&grid, |a, x| exact(0.0, a, x));
    // space: source at the implicit end of the step; time: at step midpoints
    let h = StepField::from_fn(&grid, |n, a, x| match study {
        Study::Space => source(grid.t(n + 1), a, x),
        Study::Time => source(grid.t_mid(n), a, x),
    });
    let traj = solve_forward_with(&ctx, &y0, None, &SourceMode::Explicit(h)).unwrap();
    max_error(&grid, &traj.snapshots, exact)
}

/// Same for the adjoint solver. Space: `v = ((t - a)_+)^3 X(x)`, no births.
/// Time: `v = e^t (1 - a) X(x)` with the fertility term active.
pub fn adjoint_mms_error(profile: &DegeneracyProfile, study: Study, nx: usize, na: usize) -> f64 {
    let grid = build_grid_for(profile, nx, na, na, 1.0, 1.0, degenctrl_core::coefficients::DEFAULT_GRADING).unwrap();
    let window = ControlWindow::new(0.3, 0.8).unwrap();
    let ctx = degenctrl_core::forward::SolverContext::new(&grid, profile, &mms_rates(study), &window);
    let lx = |x: f64| flux_div(profile, x);
    // -v_t - v_a - (k v_x)_x + mu v = beta v(t, 0) - g
    let (exact, source): (Box<dyn Fn(f64, f64, f64) -> f64>, Box<dyn Fn(f64, f64, f64) -> f64>) = match study {
        Study::Space => {
            let phi = |s: f64| if s > 0.0 { s * s * s } else { 0.0 };
            (
                Box::new(move |t, a, x| phi(t - a) * bump(x).0),
                Box::new(move |t, a, x| phi(t - a) * (lx(x) - mms_mu(t, a, x) * bump(x).0)),
            )
        }
        Study::Time => (
            Box::new(|t: f64, a, x| t.exp() * (1.0 - a) * bump(x).0),
            Box::new(move |t: f64, a, x| {
                let e = t.exp();
                let dv = e * (1.0 - a) * bump(x).0 - e * bump(x).0;
                mms_beta(a, x) * e * bump(x).0 + dv + e * (1.0 - a) * lx(x) - mms_mu(t, a, x) * e * (1.0 - a) * bump(x).0
            }),
        ),
    };
    let v_t = Field::from_fn(&grid, |a, x| exact(1.0, a, x));
    let g = StepField::from_fn(&grid, |n, a, x| source(grid.t(n + 1), a, x));
    let traj = solve_adjoint_with(&ctx, &v_t, Some(&g), true).unwrap();
    max_error(&grid, &traj.snapshots, exact)
}

pub const SPACE_LEVELS: [(usize, usize); 4] = [(16, 4), (32, 4), (64, 4), (128, 4)];
pub const TIME_LEVELS: [(usize, usize); 4] = [(256, 8), (256, 16), (256, 32), (256, 64)];

/// Disagreement between the adjoint grid solution and the characteristic
/// formula at `t = T/2`, L2 over ages and space, for a fertility-free copy
/// of `scenario` with `na` age cells and `nx = 32`.
pub fn formula_disagreement(scenario: &degenctrl_core::scenarios::Scenario, na: usize) -> f64 {
    let mut sc = scenario.clone();
    sc.rates = RateSet::new(|_, _| 0.0, |_, a, x| 0.2 * (1.0 + a + x * (1.0 - x)), scenario.rates.a_bar);
    sc.na = na;
    sc.nx = 32;
    let grid = sc.grid(1).unwrap();
    let problem = sc.adjoint_problem(&grid);
    let ctx = degenctrl_core::forward::SolverContext::new(&grid, &problem.profile, &problem.rates, &problem.window);
    let traj = solve_adjoint_with(&ctx, &problem.v_t, Some(&problem.g), true).unwrap();
    let n = grid.nt / 2;
    let mut err = 0.0;
    for j in 0..grid.na {
        let f = degenctrl_core::adjoint::implicit_formula_eval_with(&ctx, &problem, n, j, None, 64).unwrap();
        for (i, fv) in f.iter().enumerate() {
            let d = fv - traj.snapshots[n].get(j, i);
            err += d * d * grid.h[i] * grid.da;
        }
    }
    err.sqrt()
}

pub const FORMULA_LEVELS: [usize; 3] = [32, 64, 128];
