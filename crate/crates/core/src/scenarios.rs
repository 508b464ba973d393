//! Named scenarios shared by the tests, the CLI and the benches.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::adjoint::AdjointProblem;
use crate::carleman::{AuditParams, CarlemanScenario};
use crate::coefficients::{
    power_law_profile, validation_mesh, ControlWindow, DegeneracyProfile, MemoryKernel, RateSet, DEFAULT_GRADING,
    DEFAULT_MESH_POINTS,
};
use crate::control::{ControlProblem, DEFAULT_CG_MAX_ITER, DEFAULT_CG_TOL};
use crate::discretization::{build_grid_for, Field, Grid, StepField};
use crate::error::Result;
use crate::forward::{ForwardProblem, SourceMode};
use crate::weights::{Orientation, WeightConfig, WeightSet, DEFAULT_QUAD_POINTS};

pub type DataFn2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type DataFn3 = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// Everything needed to instantiate the solvers at any resolution.
#[derive(Clone)]
pub struct Scenario {
    pub name: String,
    pub profile: DegeneracyProfile,
    pub rates: RateSet,
    pub window: ControlWindow,
    pub kernel: MemoryKernel,
    pub t_final: f64,
    pub a_max: f64,
    /// Base resolution; `refine` multiplies all three.
    pub nx: usize,
    pub na: usize,
    pub grading: f64,
    /// Fixed `kappa`; `None` selects `kappa_max`.
    pub kappa: Option<f64>,
    /// `y0(a, x)`.
    pub y0: DataFn2,
    /// Forward control `f(t, a, x)`, restricted to `omega` by the solver.
    pub control: Option<DataFn3>,
    /// Adjoint source `g(t, a, x)`.
    pub g: DataFn3,
    /// Adjoint terminal data `v_T(a, x)`.
    pub v_t: DataFn2,
}

impl std::fmt::Debug for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scenario").field("name", &self.name).field("profile", &self.profile).finish_non_exhaustive()
    }
}

impl Scenario {
    pub fn grid(&self, refine: usize) -> Result<Grid> {
        let r = refine.max(1);
        let na = self.na * r;
        let nt = (self.t_final * na as f64 / self.a_max).round() as usize;
        build_grid_for(&self.profile, self.nx * r, na, nt, self.t_final, self.a_max, self.grading)
    }

    pub fn forward_problem(&self, grid: &Grid, with_memory: bool) -> ForwardProblem {
        let y0 = Field::from_fn(grid, |a, x| (self.y0)(a, x));
        let control = self.control.as_ref().map(|c| StepField::from_fn(grid, |n, a, x| c(grid.t_mid(n), a, x)));
        let source = if with_memory && !self.kernel.is_zero() {
            SourceMode::SelfMemory(self.kernel.clone())
        } else {
            SourceMode::None
        };
        ForwardProblem {
            grid: grid.clone(),
            profile: self.profile.clone(),
            rates: self.rates.clone(),
            window: self.window,
            y0,
            control,
            source,
        }
    }

    pub fn adjoint_problem(&self, grid: &Grid) -> AdjointProblem {
        AdjointProblem {
            g: StepField::from_fn(grid, |n, a, x| (self.g)(grid.t(n + 1), a, x)),
            v_t: Field::from_fn(grid, |a, x| (self.v_t)(a, x)),
            grid: grid.clone(),
            profile: self.profile.clone(),
            rates: self.rates.clone(),
            window: self.window,
            include_beta_term: true,
        }
    }

    /// The orientation whose hypotheses the profile meets (`k(1) > 0` for Left).
    pub fn natural_orientation(&self) -> Orientation {
        if self.profile.degenerate_right() && !self.profile.degenerate_left() {
            Orientation::Right
        } else {
            Orientation::Left
        }
    }

    pub fn weights(&self, orientation: Orientation, s: f64) -> Result<WeightSet> {
        let mesh = validation_mesh(&self.profile, DEFAULT_MESH_POINTS, DEFAULT_GRADING);
        let cfg = WeightConfig {
            orientation,
            t_final: self.t_final,
            a_max: self.a_max,
            s,
            kappa: self.kappa,
            quad_points: DEFAULT_QUAD_POINTS,
        };
        WeightSet::build(&self.profile, &cfg, &mesh)
    }

    /// Adjoint solves plus whichever weight orientations can be built.
    pub fn carleman(&self, refine: usize) -> Result<CarlemanScenario> {
        let grid = self.grid(refine)?;
        let problem = self.adjoint_problem(&grid);
        let left = self.weights(Orientation::Left, 1.0).ok();
        let right = self.weights(Orientation::Right, 1.0).ok();
        let params = AuditParams::default_for(&grid, &self.window);
        CarlemanScenario::prepare(&self.name, problem, left, right, params)
    }

    pub fn control_problem(&self, refine: usize, s: f64, eps: f64) -> Result<ControlProblem> {
        let grid = self.grid(refine)?;
        let y0 = Field::from_fn(&grid, |a, x| (self.y0)(a, x));
        Ok(ControlProblem {
            weights: self.weights(self.natural_orientation(), s)?,
            grid,
            profile: self.profile.clone(),
            rates: self.rates.clone(),
            kernel: self.kernel.clone(),
            window: self.window,
            y0,
            s,
            eps,
            cg_tol: DEFAULT_CG_TOL,
            cg_max_iter: DEFAULT_CG_MAX_ITER,
        })
    }
}

/// Fertility vanishing on `[0, a_bar]` and rising smoothly after it.
pub fn standard_rates(beta0: f64, mu0: f64, a_bar: f64, a_max: f64) -> RateSet {
    RateSet::new(
        move |a, x| {
            if a <= a_bar {
                0.0
            } else {
                let r = (a - a_bar) / (a_max - a_bar);
                beta0 * r * r * (1.0 + 0.5 * x)
            }
        },
        move |_, a, x| mu0 * (1.0 + a + x * (1.0 - x)),
        a_bar,
    )
}

fn base(name: &str, profile: DegeneracyProfile) -> Scenario {
    Scenario {
        name: name.to_string(),
        profile,
        rates: standard_rates(2.0, 0.2, 0.5, 1.0),
        window: ControlWindow { alpha: 0.3, rho_w: 0.8 },
        kernel: MemoryKernel::gaussian(0.3, 0.5, 0.25),
        t_final: 1.0,
        a_max: 1.0,
        nx: 24,
        na: 10,
        grading: DEFAULT_GRADING,
        kappa: None,
        y0: Arc::new(|a, x| (1.0 + a) * (1.0 - a) * (PI * x).sin()),
        control: Some(Arc::new(|t, a, x| (1.0 - t) * a * (2.0 * PI * x).sin())),
        g: Arc::new(|t, a, x| t * (1.0 - a) * x * (1.0 - x)),
        v_t: Arc::new(|a, x| (1.0 - a) * (PI * x).sin()),
    }
}

/// The audit suite: each degeneracy class at each end plus the uniform case.
pub fn suite() -> Vec<Scenario> {
    vec![
        base("wd_left", power_law_profile(0.5, 0.0).expect("valid exponents")),
        base("sd_left", power_law_profile(1.5, 0.0).expect("valid exponents")),
        base("wd_right", power_law_profile(0.0, 0.5).expect("valid exponents")),
        base("sd_right", power_law_profile(0.0, 1.5).expect("valid exponents")),
        base("uniform", power_law_profile(0.0, 0.0).expect("valid exponents")),
    ]
}

pub fn by_name(name: &str) -> Option<Scenario> {
    suite().into_iter().chain(control_suite(CONTROL_S)).find(|s| s.name == name)
}

/// Carleman parameter the control scenarios are certified at.
pub const CONTROL_S: f64 = 1e-5;

/// `k = x^m1`, `T = A = 1`, `a_bar = 0.5`, `omega = (0.3, 0.8)`, smooth
/// `y0`, no prescribed control, and the decaying kernel admissible at `s`.
pub fn control_scenario(name: &str, m1: f64, s: f64) -> Result<Scenario> {
    let profile = power_law_profile(m1, 0.0)?;
    let mut sc = base(name, profile);
    // |p| = p(1) = 1 / (2 - m1) for x^m1
    sc.kernel = MemoryKernel::admissible_decay(0.5, s, 1.0 / (2.0 - m1), sc.t_final);
    sc.control = None;
    sc.nx = 32;
    sc.na = 16;
    Ok(sc)
}

/// The weakly degenerate demonstration scenario.
pub fn control_demo(s: f64) -> Scenario {
    control_scenario("wd_control", 0.5, s).expect("valid exponent")
}

/// Left-degenerate control scenarios, one per degeneracy class.
pub fn control_suite(s: f64) -> Vec<Scenario> {
    vec![control_demo(s), control_scenario("sd_control", 1.5, s).expect("valid exponent")]
}
