//! Forward marching for the controlled population system with memory.
//!
//! One step `n -> n+1` (with `dt = da`):
//!
//! 1. shift along characteristics, `ytilde_j = y^n_{j-1}`, and fill the
//!    youngest cell with the renewal trace `B^n = sum_j beta_j y^n_j da`;
//! 2. add `dt (m + f chi_omega)` where `m` is the memory (or prescribed) source
//!    for step `n`;
//! 3. solve `(I + dt mu(t_{n+1}) - dt A0) y^{n+1}_j = rhs_j` for each age row.
//!
//! The oldest cell has no successor, so mass leaves the domain at `a = A`.

use std::sync::Arc;

use serde::Serialize;

use crate::coefficients::{ControlWindow, DegeneracyProfile, MemoryKernel, RateSet};
use crate::discretization::{assemble_operator, DiscreteOperator, Field, Grid, ShiftedFactor, StepField};
use crate::error::{Error, Result};

/// Per-grid data shared by the forward and adjoint solvers.
#[derive(Clone, Debug)]
pub struct SolverContext {
    pub grid: Grid,
    pub op: DiscreteOperator,
    /// `beta(a_j, x_i)`, age-major.
    pub beta: Vec<f64>,
    pub beta_is_zero: bool,
    /// 1 inside the control window, 0 outside.
    pub omega_mask: Vec<f64>,
    rates: RateSet,
    /// Factors of `M_{n+1}` per `(n, j)` when cached.
    factors: Option<Arc<Vec<ShiftedFactor>>>,
}

impl SolverContext {
    pub fn new(grid: &Grid, profile: &DegeneracyProfile, rates: &RateSet, window: &ControlWindow) -> Self {
        let op = assemble_operator(grid, profile);
        let mut beta = vec![0.0; grid.field_len()];
        for j in 0..grid.na {
            for i in 0..grid.nx {
                beta[j * grid.nx + i] = rates.beta(grid.a(j), grid.x_centers[i]);
            }
        }
        let beta_is_zero = beta.iter().all(|&b| b == 0.0);
        let omega_mask = grid.x_centers.iter().map(|&x| if window.contains(x) { 1.0 } else { 0.0 }).collect();
        SolverContext { grid: grid.clone(), op, beta, beta_is_zero, omega_mask, rates: rates.clone(), factors: None }
    }

    /// Precomputes every step matrix factorization; worth it when the same
    /// context drives many solves.
    pub fn with_cached_factors(mut self) -> Self {
        let g = &self.grid;
        let mut mu = vec![0.0; g.nx];
        let mut all = Vec::with_capacity(g.nt * g.na);
        for n in 0..g.nt {
            for j in 0..g.na {
                self.mu_row(g.t(n + 1), j, &mut mu);
                all.push(self.op.factor_shifted(g.dt, &mu));
            }
        }
        self.factors = Some(Arc::new(all));
        self
    }

    /// Solves `M_{n+1} out = rhs` for age row `j`.
    pub(crate) fn step_solve(&self, n: usize, j: usize, rhs: &[f64], out: &mut [f64], work: &mut StepWork) {
        match &self.factors {
            Some(f) => f[n * self.grid.na + j].solve(rhs, out),
            None => {
                self.mu_row(self.grid.t(n + 1), j, &mut work.mu);
                self.op.solve_shifted(self.grid.dt, &work.mu, rhs, out, &mut work.scratch);
            }
        }
    }

    /// `mu(t, a_j, x_i)` for one age row.
    pub fn mu_row(&self, t: f64, j: usize, out: &mut [f64]) {
        let a = self.grid.a(j);
        for (i, &x) in self.grid.x_centers.iter().enumerate() {
            out[i] = self.rates.mu(t, a, x);
        }
    }

    /// `sum_j beta_j y_j da`.
    pub fn renewal(&self, y: &Field) -> Vec<f64> {
        let g = &self.grid;
        let mut b = vec![0.0; g.nx];
        if self.beta_is_zero {
            return b;
        }
        for j in 0..g.na {
            let row = y.row(j);
            let beta = &self.beta[j * g.nx..(j + 1) * g.nx];
            for i in 0..g.nx {
                b[i] += beta[i] * row[i];
            }
        }
        b.iter_mut().for_each(|v| *v *= g.da);
        b
    }

    /// Zeroes entries outside the control window.
    pub fn restrict_to_omega(&self, f: &mut Field) {
        for j in 0..f.na {
            for (v, m) in f.row_mut(j).iter_mut().zip(&self.omega_mask) {
                if *m == 0.0 {
                    *v = 0.0;
                }
            }
        }
    }

    pub fn space_l2(&self, v: &[f64]) -> f64 {
        self.op.dot(v, v).sqrt()
    }

    /// `int int k y_x^2` over ages at one time.
    pub fn dissipation(&self, y: &Field) -> f64 {
        (0..y.na).map(|j| self.op.dissipation(y.row(j))).sum::<f64>() * self.grid.da
    }

    pub fn rates(&self) -> &RateSet {
        &self.rates
    }
}

/// Scratch buffers for [`SolverContext::step_solve`].
pub(crate) struct StepWork {
    mu: Vec<f64>,
    scratch: Vec<f64>,
}

impl StepWork {
    pub(crate) fn new(nx: usize) -> Self {
        StepWork { mu: vec![0.0; nx], scratch: Vec::with_capacity(nx) }
    }
}

/// Exactly one source configuration.
#[derive(Clone, Debug)]
pub enum SourceMode {
    None,
    /// `int_0^t b(t,s) y(s) ds` with the solution itself.
    SelfMemory(MemoryKernel),
    /// Memory of a fixed history `w` (snapshots `0..=Nt`).
    Frozen { kernel: MemoryKernel, w: Vec<Field> },
    /// Prescribed step source `h`.
    Explicit(StepField),
}

#[derive(Clone, Debug)]
pub struct ForwardProblem {
    pub grid: Grid,
    pub profile: DegeneracyProfile,
    pub rates: RateSet,
    pub window: ControlWindow,
    pub y0: Field,
    /// Step field; slice `n` acts during step `n`.
    pub control: Option<StepField>,
    pub source: SourceMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum TrajectoryKind {
    Forward,
    Adjoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Diagnostics {
    pub t: f64,
    pub l2_norm: f64,
    pub dissipation: f64,
    pub newborn_l2: f64,
}

/// Time-indexed solution.
///
/// Forward: `snapshots[n] = y(t_n)`, `newborn_trace[n]` is the renewal
/// quadrature of `snapshots[n]`, `source` is the step source actually applied.
/// Adjoint: `snapshots[n] = v(t_n)`, `steps` holds the post-solve fields
/// `V^n` of each backward step and `newborn_trace[n] = V^n_0`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub kind: TrajectoryKind,
    pub snapshots: Vec<Field>,
    pub steps: Option<StepField>,
    pub newborn_trace: Vec<Vec<f64>>,
    pub source: Option<StepField>,
    pub diagnostics: Vec<Diagnostics>,
}

impl Trajectory {
    pub fn terminal(&self) -> &Field {
        self.snapshots.last().expect("trajectory has snapshots")
    }

    /// The field paired with step data in `<., .>_Q`: forward snapshots
    /// `1..=Nt`, adjoint step fields.
    pub fn q_field(&self) -> StepField {
        match self.kind {
            TrajectoryKind::Forward => StepField { steps: self.snapshots[1..].to_vec() },
            TrajectoryKind::Adjoint => self.steps.clone().expect("adjoint trajectory stores its steps"),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.snapshots.iter().all(Field::is_finite)
    }
}

/// Memory source for the step ending at `t_{t_index}`:
/// `dt (b_0 y_0 / 2 + sum_{0<m<n} b_m y_m + 3/2 b_n y_n)` with `n = t_index - 1`
/// (trapezoid on `[0, t_n]`, rectangle on `[t_n, t_{n+1}]`); `dt b_0 y_0`
/// when `n = 0`.
pub fn memory_source(kernel: &MemoryKernel, grid: &Grid, history: &[Field], t_index: usize) -> Field {
    let mut out = Field::zeros_on(grid);
    if t_index == 0 || kernel.is_zero() {
        return out;
    }
    let n = t_index - 1;
    let t = grid.t(t_index);
    for (m, y) in history.iter().enumerate().take(n + 1) {
        let w = if n == 0 {
            1.0
        } else if m == 0 {
            0.5
        } else if m == n {
            1.5
        } else {
            1.0
        };
        let s = grid.t(m);
        for j in 0..grid.na {
            let a = grid.a(j);
            let row = y.row(j);
            let dst = &mut out.values[j * grid.nx..(j + 1) * grid.nx];
            for i in 0..grid.nx {
                if row[i] != 0.0 {
                    dst[i] += w * kernel.eval(t, s, a, grid.x_centers[i]) * row[i];
                }
            }
        }
    }
    out.scale(grid.dt);
    out
}

/// The step source generated by a fixed history `w`.
pub fn frozen_source(kernel: &MemoryKernel, grid: &Grid, w: &[Field]) -> StepField {
    StepField { steps: (0..grid.nt).map(|n| memory_source(kernel, grid, w, n + 1)).collect() }
}

pub fn solve_forward(problem: &ForwardProblem) -> Result<Trajectory> {
    let ctx = SolverContext::new(&problem.grid, &problem.profile, &problem.rates, &problem.window);
    let source = match &problem.source {
        SourceMode::Frozen { kernel, w } => {
            if w.len() < problem.grid.nt {
                return Err(Error::ShapeMismatch {
                    expected: format!(">= {} snapshots", problem.grid.nt),
                    found: w.len().to_string(),
                });
            }
            SourceMode::Explicit(frozen_source(kernel, &problem.grid, w))
        }
        other => other.clone(),
    };
    solve_forward_with(&ctx, &problem.y0, problem.control.as_ref(), &source)
}

/// Forward solve reusing a prepared context.
pub fn solve_forward_with(
    ctx: &SolverContext,
    y0: &Field,
    control: Option<&StepField>,
    source: &SourceMode,
) -> Result<Trajectory> {
    let g = &ctx.grid;
    if y0.na != g.na || y0.nx != g.nx {
        return Err(Error::ShapeMismatch { expected: format!("{}x{}", g.na, g.nx), found: format!("{}x{}", y0.na, y0.nx) });
    }
    if let Some(f) = control {
        f.check_shape(g)?;
    }
    if let SourceMode::Explicit(h) = source {
        h.check_shape(g)?;
    }
    if let SourceMode::Frozen { kernel, w } = source {
        let h = frozen_source(kernel, g, w);
        return solve_forward_with(ctx, y0, control, &SourceMode::Explicit(h));
    }
    let mut snapshots = Vec::with_capacity(g.nt + 1);
    let mut traces = Vec::with_capacity(g.nt + 1);
    let mut diagnostics = Vec::with_capacity(g.nt + 1);
    let mut applied = Vec::with_capacity(g.nt);
    snapshots.push(y0.clone());
    let mut rhs = vec![0.0; g.nx];
    let mut work = StepWork::new(g.nx);
    for n in 0..g.nt {
        let y = &snapshots[n];
        let trace = ctx.renewal(y);
        diagnostics.push(diag(ctx, g.t(n), y, &trace));
        let src = match source {
            SourceMode::None => None,
            SourceMode::SelfMemory(k) => Some(memory_source(k, g, &snapshots, n + 1)),
            SourceMode::Explicit(h) => Some(h.steps[n].clone()),
            SourceMode::Frozen { .. } => unreachable!(),
        };
        let mut next = Field::zeros_on(g);
        for j in 0..g.na {
            let inflow: &[f64] = if j == 0 { &trace } else { snapshots[n].row(j - 1) };
            rhs.copy_from_slice(inflow);
            if let Some(s) = &src {
                for (r, v) in rhs.iter_mut().zip(s.row(j)) {
                    *r += g.dt * v;
                }
            }
            if let Some(f) = control {
                for ((r, v), m) in rhs.iter_mut().zip(f.steps[n].row(j)).zip(&ctx.omega_mask) {
                    *r += g.dt * m * v;
                }
            }
            ctx.step_solve(n, j, &rhs, next.row_mut(j), &mut work);
        }
        if !next.is_finite() {
            return Err(Error::NonFinite { step: n + 1 });
        }
        traces.push(trace);
        if let Some(s) = src {
            applied.push(s);
        }
        snapshots.push(next);
    }
    let last = snapshots.last().unwrap();
    let trace = ctx.renewal(last);
    diagnostics.push(diag(ctx, g.t(g.nt), last, &trace));
    traces.push(trace);
    Ok(Trajectory {
        kind: TrajectoryKind::Forward,
        snapshots,
        steps: None,
        newborn_trace: traces,
        source: if applied.is_empty() { None } else { Some(StepField { steps: applied }) },
        diagnostics,
    })
}

fn diag(ctx: &SolverContext, t: f64, y: &Field, trace: &[f64]) -> Diagnostics {
    Diagnostics {
        t,
        l2_norm: y.norm_sq(&ctx.grid).sqrt(),
        dissipation: ctx.dissipation(y),
        newborn_l2: ctx.space_l2(trace),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyReport {
    pub sup_norm_sq: f64,
    pub dissipation: f64,
    pub lhs: f64,
    pub rhs0: f64,
    /// `lhs / rhs0`; `None` when `rhs0 = 0`.
    pub c_emp: Option<f64>,
    /// `A |beta|^2 + 2 + T^2 |b|^2` (the last term only with self-memory).
    pub c_beta: f64,
    /// `1.5 exp(c_beta T) rhs0`.
    pub bound: f64,
    pub passed: bool,
}

/// Both sides of the energy estimate on a computed trajectory.
pub fn energy_audit(traj: &Trajectory, problem: &ForwardProblem) -> EnergyReport {
    let g = &problem.grid;
    let ctx = SolverContext::new(g, &problem.profile, &problem.rates, &problem.window);
    let sup_norm_sq = traj.snapshots.iter().map(|y| y.norm_sq(g)).fold(0.0, f64::max);
    let dissipation = g.dt * traj.snapshots[1..].iter().map(|y| ctx.dissipation(y)).sum::<f64>();
    let lhs = sup_norm_sq + dissipation;
    let mut rhs0 = problem.y0.norm_sq(g);
    if let Some(f) = &problem.control {
        let mut fo = f.clone();
        fo.steps.iter_mut().for_each(|s| ctx.restrict_to_omega(s));
        rhs0 += fo.norm_sq(g);
    }
    let mut memory_term = 0.0;
    match &problem.source {
        SourceMode::Explicit(h) => rhs0 += h.norm_sq(g),
        SourceMode::Frozen { .. } => {
            if let Some(h) = &traj.source {
                rhs0 += h.norm_sq(g);
            }
        }
        SourceMode::SelfMemory(k) => memory_term = g.t_final * g.t_final * k.sup_norm * k.sup_norm,
        SourceMode::None => {}
    }
    let beta_sup = ctx.beta.iter().fold(0.0f64, |m, b| m.max(b.abs()));
    let c_beta = g.a_max * beta_sup * beta_sup + 2.0 + memory_term;
    let bound = 1.5 * (c_beta * g.t_final).exp() * rhs0;
    let tol = 1e-300;
    let (c_emp, passed) = if rhs0 > 0.0 {
        (Some(lhs / rhs0), lhs <= bound)
    } else {
        (None, lhs <= tol)
    };
    EnergyReport { sup_norm_sq, dissipation, lhs, rhs0, c_emp, c_beta, bound, passed }
}

/// CSV `t,L2_norm,dissipation,newborn_L2`.
pub fn write_diagnostics_csv<W: std::io::Write>(mut w: W, traj: &Trajectory) -> Result<()> {
    writeln!(w, "t,L2_norm,dissipation,newborn_L2")?;
    for d in &traj.diagnostics {
        writeln!(w, "{},{},{},{}", d.t, d.l2_norm, d.dissipation, d.newborn_l2)?;
    }
    Ok(())
}
