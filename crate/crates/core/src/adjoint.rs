//! Backward adjoint solver, the characteristic-line formulas, and the
//! newborn-trace estimate audit.
//!
//! The solver is the exact transpose of [`crate::forward`] in the
//! `da * h` inner product. A backward step `n+1 -> n` computes
//!
//! `V^n = M_{n+1}^{-1} (v^{n+1} - dt g^n)` row by row, then
//! `v^n_j = V^n_{j+1} + da beta_j V^n_0` (no `V^n_{Na}` term, so `v = 0`
//! beyond the last age cell). `V^n_0` is the newborn trace `v(t_n, 0)`.
//!
//! With this convention, for forward data `F` and adjoint source `g`,
//! `<y(T), v_T> - <y(0), v(0)> = <F, V>_Q + <y, g>_Q`.

use serde::Serialize;

use crate::coefficients::{ControlWindow, DegeneracyProfile, RateSet};
use crate::discretization::{Field, Grid, StepField};
use crate::error::{Error, Result};
use crate::forward::{Diagnostics, SolverContext, StepWork, Trajectory, TrajectoryKind};
use crate::quadrature::{LogReal, LogSum};
use crate::weights::{gamma_raw, NodalWeights};

pub const DEFAULT_SUBSTEPS: usize = 4;

#[derive(Clone, Debug)]
pub struct AdjointProblem {
    pub grid: Grid,
    pub profile: DegeneracyProfile,
    pub rates: RateSet,
    pub window: ControlWindow,
    /// Step source; slice `n` acts during backward step `n+1 -> n`.
    pub g: StepField,
    pub v_t: Field,
    pub include_beta_term: bool,
}

pub fn solve_adjoint(problem: &AdjointProblem) -> Result<Trajectory> {
    let ctx = SolverContext::new(&problem.grid, &problem.profile, &problem.rates, &problem.window);
    solve_adjoint_with(&ctx, &problem.v_t, Some(&problem.g), problem.include_beta_term)
}

/// Backward solve reusing a prepared context; `g = None` means zero source.
pub fn solve_adjoint_with(
    ctx: &SolverContext,
    v_t: &Field,
    g: Option<&StepField>,
    include_beta_term: bool,
) -> Result<Trajectory> {
    let grid = &ctx.grid;
    if v_t.na != grid.na || v_t.nx != grid.nx {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", grid.na, grid.nx),
            found: format!("{}x{}", v_t.na, v_t.nx),
        });
    }
    if let Some(g) = g {
        g.check_shape(grid)?;
    }
    let (na, nx) = (grid.na, grid.nx);
    let mut snapshots = vec![Field::zeros_on(grid); grid.nt + 1];
    let mut steps = vec![Field::zeros_on(grid); grid.nt];
    let mut traces = vec![vec![0.0; nx]; grid.nt];
    snapshots[grid.nt] = v_t.clone();
    let mut rhs = vec![0.0; nx];
    let mut work = StepWork::new(nx);
    for n in (0..grid.nt).rev() {
        let mut big_v = Field::zeros_on(grid);
        // youngest row first: it is the trace feeding the fertility source
        for j in 0..na {
            rhs.copy_from_slice(snapshots[n + 1].row(j));
            if let Some(g) = g {
                for (r, v) in rhs.iter_mut().zip(g.steps[n].row(j)) {
                    *r -= grid.dt * v;
                }
            }
            ctx.step_solve(n, j, &rhs, big_v.row_mut(j), &mut work);
        }
        if !big_v.is_finite() {
            return Err(Error::NonFinite { step: n });
        }
        let mut v = Field::zeros_on(grid);
        for j in 0..na - 1 {
            v.row_mut(j).copy_from_slice(big_v.row(j + 1));
        }
        if include_beta_term && !ctx.beta_is_zero {
            let trace = big_v.row(0).to_vec();
            for j in 0..na {
                let beta = &ctx.beta[j * nx..(j + 1) * nx];
                for (i, dst) in v.row_mut(j).iter_mut().enumerate() {
                    *dst += grid.da * beta[i] * trace[i];
                }
            }
        }
        traces[n] = big_v.row(0).to_vec();
        steps[n] = big_v;
        snapshots[n] = v;
    }
    let diagnostics = snapshots
        .iter()
        .enumerate()
        .map(|(n, v)| Diagnostics {
            t: grid.t(n),
            l2_norm: v.norm_sq(grid).sqrt(),
            dissipation: ctx.dissipation(v),
            newborn_l2: if n < grid.nt { ctx.space_l2(&traces[n]) } else { ctx.space_l2(v_t.row(0)) },
        })
        .collect();
    Ok(Trajectory {
        kind: TrajectoryKind::Adjoint,
        snapshots,
        steps: Some(StepField { steps }),
        newborn_trace: traces,
        source: None,
        diagnostics,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Branch {
    /// The characteristic reaches `t = T` inside the fertility-free ages.
    Direct,
    /// It reaches `t = T` after crossing fertile ages.
    BetaWindow,
    /// It leaves through `a = A` before `t = T`.
    AgeCutoff,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CharacteristicCase {
    pub t: f64,
    pub a: f64,
    pub t_final: f64,
    pub a_max: f64,
    pub a_bar: f64,
    pub t_tilde: f64,
    pub gamma_at: f64,
    pub gamma: f64,
    pub branch: Branch,
}

impl CharacteristicCase {
    pub fn new(t: f64, a: f64, t_final: f64, a_max: f64, a_bar: f64) -> Self {
        let t_tilde = t_final - a_bar;
        let gamma_at = a_max - a + t - t_tilde;
        let gamma = a_bar.min(gamma_at);
        let branch = if t >= t_tilde + a {
            Branch::Direct
        } else if a_bar <= gamma_at {
            Branch::BetaWindow
        } else {
            Branch::AgeCutoff
        };
        CharacteristicCase { t, a, t_final, a_max, a_bar, t_tilde, gamma_at, gamma, branch }
    }
}

/// `v(t_n, a_j, .)` from the characteristic-line formula.
///
/// The integral `int S(s - a) G(s) ds` with `G = beta v(., 0) - g` is a
/// composite trapezoid over the grid points of the characteristic, nested
/// Horner-style so each `S(dt)` is applied once; `S` is `substeps` implicit
/// Euler steps per `dt` with `mu` taken at the segment midpoint. `trace`
/// is the newborn history `V^m_0` of a backward solve (needed whenever the
/// fertility term can enter).
pub fn implicit_formula_eval(
    problem: &AdjointProblem,
    n: usize,
    j: usize,
    trace: Option<&[Vec<f64>]>,
    substeps: usize,
) -> Result<Vec<f64>> {
    let ctx = SolverContext::new(&problem.grid, &problem.profile, &problem.rates, &problem.window);
    implicit_formula_eval_with(&ctx, problem, n, j, trace, substeps)
}

pub fn implicit_formula_eval_with(
    ctx: &SolverContext,
    problem: &AdjointProblem,
    n: usize,
    j: usize,
    trace: Option<&[Vec<f64>]>,
    substeps: usize,
) -> Result<Vec<f64>> {
    let g = &ctx.grid;
    let (t, a) = (g.t(n), g.a(j));
    let case = CharacteristicCase::new(t, a, g.t_final, g.a_max, problem.rates.a_bar);
    let needs_trace = problem.include_beta_term && case.branch != Branch::Direct && !ctx.beta_is_zero;
    if needs_trace && trace.is_none() {
        return Err(Error::MissingTrace { t_index: n });
    }
    let nx = g.nx;
    let to_final = g.nt - n;
    // grid points along the characteristic: offsets in units of dt, last may be fractional
    let (taus, v_end): (Vec<f64>, Vec<f64>) = if j + to_final < g.na {
        ((0..=to_final).map(|m| m as f64 * g.dt).collect(), problem.v_t.row(j + to_final).to_vec())
    } else {
        let full = g.na - 1 - j;
        let mut taus: Vec<f64> = (0..=full).map(|m| m as f64 * g.dt).collect();
        taus.push(g.a_max - a);
        (taus, vec![0.0; nx])
    };
    let k_last = taus.len() - 1;
    let source_at = |m: usize| -> Vec<f64> {
        let tau = taus[m];
        let step_idx = ((n + m).max(1) - 1).min(g.nt - 1);
        let age_idx = (j + m).min(g.na - 1);
        let mut out: Vec<f64> = if (tau - m as f64 * g.dt).abs() > 1e-12 * g.dt.max(1.0) {
            vec![0.0; nx]
        } else {
            problem.g.steps[step_idx].row(age_idx).iter().map(|v| -v).collect()
        };
        if problem.include_beta_term {
            if let Some(tr) = trace {
                let s_age = a + tau;
                let tm = n + m;
                let v0: &[f64] = if tm < tr.len() { &tr[tm] } else { problem.v_t.row(0) };
                for (i, o) in out.iter_mut().enumerate() {
                    *o += problem.rates.beta(s_age, g.x_centers[i]) * v0[i];
                }
            }
        }
        out
    };
    let weights: Vec<f64> = (0..=k_last)
        .map(|m| {
            let left = if m > 0 { taus[m] - taus[m - 1] } else { 0.0 };
            let right = if m < k_last { taus[m + 1] - taus[m] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect();
    let mut u = v_end;
    let s_end = source_at(k_last);
    for (ui, s) in u.iter_mut().zip(&s_end) {
        *ui += weights[k_last] * s;
    }
    let mut mu = vec![0.0; nx];
    for m in (0..k_last).rev() {
        let dtau = taus[m + 1] - taus[m];
        let tm = t + 0.5 * (taus[m] + taus[m + 1]);
        let am = a + 0.5 * (taus[m] + taus[m + 1]);
        for (i, x) in g.x_centers.iter().enumerate() {
            mu[i] = problem.rates.mu(tm, am, *x);
        }
        let sub = ((substeps as f64 * dtau / g.dt).ceil() as usize).max(1);
        u = ctx.op.semigroup_apply(&mu, &u, dtau, sub);
        let s = source_at(m);
        for (ui, sv) in u.iter_mut().zip(&s) {
            *ui += weights[m] * sv;
        }
    }
    Ok(u)
}

/// A named nonnegative quantity kept in log space.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Term {
    pub name: String,
    pub value: LogReal,
}

impl Term {
    pub fn new(name: &str, value: LogReal) -> Self {
        Term { name: name.to_string(), value }
    }

    pub fn plain(name: &str, value: f64) -> Self {
        Term { name: name.to_string(), value: LogReal::from_value(value.max(0.0)) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceParams {
    /// Start of the small-age window in time, in `[T - a_bar, T)`.
    pub t0: f64,
    /// Upper age of the small-age window.
    pub zeta: f64,
}

impl TraceParams {
    pub fn default_for(grid: &Grid, a_bar: f64) -> Self {
        TraceParams { t0: (grid.t_final - a_bar).max(0.5 * grid.t_final), zeta: 0.25 * grid.a_max }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceReport {
    pub s: f64,
    pub lhs: LogReal,
    pub rhs_terms: Vec<Term>,
    pub rhs_total: LogReal,
    /// `lhs / rhs_total`; `None` when both vanish.
    pub empirical_c: Option<f64>,
    pub violation: bool,
}

/// Both sides of the newborn-trace estimate on an adjoint solve.
pub fn trace_estimate_audit(
    traj: &Trajectory,
    problem: &AdjointProblem,
    nodal: &NodalWeights,
    s: f64,
    params: TraceParams,
) -> TraceReport {
    let g = &problem.grid;
    let a_bar = problem.rates.a_bar;
    let mut lhs = LogSum::new();
    for tr in &traj.newborn_trace {
        let v: f64 = tr.iter().zip(&g.h).map(|(v, h)| v * v * h).sum();
        lhs.push_weighted(v, g.dt.ln());
    }
    let cell = g.da * g.dt;
    let mut window_g = LogSum::new();
    let mut all_g = LogSum::new();
    for n in 0..g.nt {
        let tq = g.t(n + 1);
        for j in 0..g.na {
            let row: f64 = problem.g.steps[n].row(j).iter().zip(&g.h).map(|(v, h)| v * v * h).sum();
            all_g.push_weighted(row, cell.ln());
            if tq - g.a(j) >= g.t_final - a_bar - 1e-12 {
                window_g.push_weighted(row, cell.ln());
            }
        }
    }
    let q = traj.q_field();
    let mut obs = LogSum::new();
    let mut small_age = LogSum::new();
    for n in 0..g.nt {
        let tm = g.t_mid(n);
        for j in 0..g.na {
            let a = g.a(j);
            let row = q.steps[n].row(j);
            if tm >= g.t_final - a_bar {
                let ga = gamma_raw(g.t_final, tm, a);
                for i in 0..g.nx {
                    if problem.window.contains(g.x_centers[i]) && row[i] != 0.0 {
                        let lw = 2.0 * (s * ga).ln() + 2.0 * s * ga * nodal.big_psi_c[i];
                        obs.push_ln(lw + (row[i] * row[i] * g.h[i] * cell).ln());
                    }
                }
            }
            if tm >= params.t0 && a <= params.zeta {
                let v: f64 = row.iter().zip(&g.h).map(|(v, h)| v * v * h).sum();
                small_age.push_weighted(v, cell.ln());
            }
        }
    }
    let j_bar = g.first_age_above(a_bar);
    let terminal: f64 = (0..j_bar)
        .map(|j| problem.v_t.row(j).iter().zip(&g.h).map(|(v, h)| v * v * h).sum::<f64>())
        .sum::<f64>()
        * g.da;
    let rhs_terms = vec![
        Term::new("kernel_window_g", window_g.total()),
        Term::new("g_sq", all_g.total()),
        Term::new("observation", obs.total()),
        Term::plain("terminal_window", terminal),
        Term::new("small_age_window", small_age.total()),
    ];
    let rhs_total = LogReal::sum(rhs_terms.iter().map(|t| t.value));
    let lhs = lhs.total();
    let (empirical_c, violation) = ratio(lhs, rhs_total);
    TraceReport { s, lhs, rhs_terms, rhs_total, empirical_c, violation }
}

/// `(lhs/rhs, violated)` with `0/0` vacuous and `x/0` a violation.
pub fn ratio(lhs: LogReal, rhs: LogReal) -> (Option<f64>, bool) {
    if rhs.is_zero() {
        return (None, !lhs.is_zero());
    }
    let r = lhs.div(rhs).value();
    (Some(r), !r.is_finite())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdjointEnergyReport {
    pub sup_norm_sq: f64,
    pub data_sq: f64,
    pub c_emp: Option<f64>,
    pub bound: f64,
    pub passed: bool,
}

/// `sup_t |v(t)|^2` against `|v_T|^2 + |g|^2_Q`, bound `1.5 exp((A|beta|^2 + 2) T)`.
pub fn adjoint_energy_audit(traj: &Trajectory, problem: &AdjointProblem) -> AdjointEnergyReport {
    let g = &problem.grid;
    let sup_norm_sq = traj.snapshots.iter().map(|v| v.norm_sq(g)).fold(0.0, f64::max);
    let data_sq = problem.v_t.norm_sq(g) + problem.g.norm_sq(g);
    let beta_sup = problem.rates.beta_sup(g.a_max, g.na, g.nx);
    let c = g.a_max * beta_sup * beta_sup + 2.0;
    let bound = 1.5 * (c * g.t_final).exp() * data_sq;
    let (c_emp, passed) = if data_sq > 0.0 {
        (Some(sup_norm_sq / data_sq), sup_norm_sq <= bound)
    } else {
        (None, sup_norm_sq == 0.0)
    };
    AdjointEnergyReport { sup_norm_sq, data_sq, c_emp, bound, passed }
}
