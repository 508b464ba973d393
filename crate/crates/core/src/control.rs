//! Penalized HUM null control for the frozen-memory system and the Picard
//! iteration on the memory term.
//!
//! For terminal dual data `z` on the target ages `(a_bar, A)`:
//!
//! * `L* z` is the adjoint solution `V` (zero source) restricted to `omega`;
//! * the control is `f = K V` with `K = s^2 gamma^2 exp(2 s sigma) chi_omega`;
//! * `Lambda z` is the target-age part of the terminal state driven by `f`
//!   from zero data.
//!
//! CG solves `(Lambda + eps_eff) z = -y_free(T)` in the `da * h` inner
//! product. Then `y(T) = r - eps_eff z` on the target ages, `r` the final CG
//! residual. `eps_eff = eps * lambda_max`, so `eps` is scale-free.

use std::io::Write;

use serde::Serialize;

use crate::adjoint::{solve_adjoint_with, Term};
use crate::coefficients::{
    check_memory_admissibility, AdmissibilitySample, ControlWindow, DegeneracyProfile, MemoryKernel, RateSet,
};
use crate::discretization::{Field, Grid, StepField};
use crate::error::{Error, Result};
use crate::forward::{frozen_source, solve_forward_with, SolverContext, SourceMode, Trajectory};
use crate::quadrature::{LogReal, LogSum};
use crate::weights::{gamma_raw, NodalWeights, WeightSet};

pub const DEFAULT_EPS: f64 = 1e-4;
pub const DEFAULT_CG_TOL: f64 = 1e-8;
pub const DEFAULT_CG_MAX_ITER: usize = 500;
const POWER_ITERS: usize = 30;
const DIVERGENCE_STREAK: usize = 3;

#[derive(Clone, Debug)]
pub struct ControlProblem {
    pub grid: Grid,
    pub profile: DegeneracyProfile,
    pub rates: RateSet,
    pub kernel: MemoryKernel,
    pub window: ControlWindow,
    pub y0: Field,
    pub s: f64,
    pub weights: WeightSet,
    /// Penalty relative to `lambda_max`.
    pub eps: f64,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl ControlProblem {
    /// First age row of the target band `(a_bar, A)`.
    pub fn target_start(&self) -> usize {
        self.grid.first_age_above(self.rates.a_bar)
    }

    fn check(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidParameter { name: "eps", reason: format!("need eps > 0, got {}", self.eps) });
        }
        if !(self.s > 0.0 && self.s.is_finite()) {
            return Err(Error::InvalidParameter { name: "s", reason: format!("need s > 0, got {}", self.s) });
        }
        if self.rates.a_bar > self.grid.t_final {
            return Err(Error::InvalidParameter { name: "a_bar", reason: "need a_bar <= T".into() });
        }
        if !self.kernel.is_zero() {
            let c = check_memory_admissibility(
                &self.kernel,
                self.s,
                self.weights.p_norm,
                self.grid.t_final,
                self.grid.a_max,
                AdmissibilitySample::default(),
            );
            if !c.is_finite() {
                return Err(Error::InvalidParameter {
                    name: "kernel",
                    reason: format!("memory kernel not admissible at s = {}", self.s),
                });
            }
        }
        Ok(())
    }
}

/// The map `z -> Lambda z` and the pieces it is built from.
pub struct HumOperator {
    pub ctx: SolverContext,
    pub nodal: NodalWeights,
    /// `ln K` on `omega`, `-inf` elsewhere; one row per `(n, j)`.
    ln_k: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    pub j_bar: usize,
}

impl HumOperator {
    pub fn new(problem: &ControlProblem) -> Result<Self> {
        let g = &problem.grid;
        let ctx = SolverContext::new(g, &problem.profile, &problem.rates, &problem.window).with_cached_factors();
        let nodal = problem.weights.nodal(g)?;
        let s = problem.s;
        let mut ln_k = Vec::with_capacity(g.nt * g.na);
        for n in 0..g.nt {
            for j in 0..g.na {
                let gam = gamma_raw(g.t_final, g.t_mid(n), g.a(j));
                let row = (0..g.nx)
                    .map(|i| {
                        if ctx.omega_mask[i] == 0.0 {
                            f64::NEG_INFINITY
                        } else {
                            2.0 * (s * gam).ln() + 2.0 * s * gam * nodal.big_psi_c[i]
                        }
                    })
                    .collect();
                ln_k.push(row);
            }
        }
        let k: Vec<Vec<f64>> = ln_k.iter().map(|row: &Vec<f64>| row.iter().map(|l| l.exp()).collect()).collect();
        Ok(HumOperator { ctx, nodal, ln_k, k, j_bar: problem.target_start() })
    }

    pub fn grid(&self) -> &Grid {
        &self.ctx.grid
    }

    /// Zero the rows below the target band.
    pub fn project(&self, z: &mut Field) {
        for j in 0..self.j_bar.min(z.na) {
            z.row_mut(j).iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn inner(&self, u: &Field, v: &Field) -> f64 {
        let g = self.grid();
        (self.j_bar..g.na)
            .map(|j| u.row(j).iter().zip(v.row(j)).zip(&g.h).map(|((a, b), h)| a * b * h).sum::<f64>())
            .sum::<f64>()
            * g.da
    }

    pub fn dual(&self, z: &Field) -> Result<Trajectory> {
        let mut zt = z.clone();
        self.project(&mut zt);
        solve_adjoint_with(&self.ctx, &zt, None, true)
    }

    /// `f = K V` from a dual trajectory; exactly zero off `omega`.
    pub fn control_from(&self, dual: &Trajectory) -> StepField {
        let g = self.grid();
        let v = dual.steps.as_ref().expect("adjoint trajectory stores its steps");
        let mut f = StepField::zeros(g);
        for n in 0..g.nt {
            for j in 0..g.na {
                let k = &self.k[n * g.na + j];
                let src = v.steps[n].row(j);
                for ((dst, kv), sv) in f.steps[n].row_mut(j).iter_mut().zip(k).zip(src) {
                    *dst = kv * sv;
                }
            }
        }
        f
    }

    /// `Lambda z`, projected on the target band.
    pub fn apply(&self, z: &Field) -> Result<Field> {
        let dual = self.dual(z)?;
        let f = self.control_from(&dual);
        let zero = Field::zeros_on(self.grid());
        let y = solve_forward_with(&self.ctx, &zero, Some(&f), &SourceMode::None)?;
        let mut out = y.terminal().clone();
        self.project(&mut out);
        Ok(out)
    }

    /// Largest eigenvalue of `Lambda` by power iteration from a fixed start.
    pub fn lambda_max(&self) -> Result<f64> {
        let g = self.grid();
        if self.j_bar >= g.na {
            return Ok(0.0);
        }
        let mut z = Field::from_fn(g, |a, x| 1.0 + a + x * (1.0 - x));
        self.project(&mut z);
        let mut lambda = 0.0;
        for _ in 0..POWER_ITERS {
            let nz = self.inner(&z, &z).sqrt();
            if nz == 0.0 {
                return Ok(0.0);
            }
            z.scale(1.0 / nz);
            let lz = self.apply(&z)?;
            lambda = self.inner(&lz, &z);
            z = lz;
        }
        Ok(lambda.max(0.0))
    }

    /// `int_omega K^{-1} f^2 = int_omega K V^2`, in log space.
    pub fn effort(&self, dual: &Trajectory) -> LogReal {
        let g = self.grid();
        let v = dual.steps.as_ref().expect("adjoint trajectory stores its steps");
        let cell = (g.dt * g.da).ln();
        let mut acc = LogSum::new();
        for n in 0..g.nt {
            for j in 0..g.na {
                let lk = &self.ln_k[n * g.na + j];
                for (i, &x) in v.steps[n].row(j).iter().enumerate() {
                    if x != 0.0 && lk[i] > f64::NEG_INFINITY {
                        acc.push_ln(lk[i] + (x * x * g.h[i]).ln() + cell);
                    }
                }
            }
        }
        acc.total()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CgRecord {
    pub iter: usize,
    /// `1/2 <(Lambda + eps) z, z> + <y_free, z>`.
    pub functional: f64,
    pub gradient_norm: f64,
}

/// Both sides of the weighted control-effort bound.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EffortReport {
    pub effort: LogReal,
    pub weighted_source: LogReal,
    pub weighted_initial: LogReal,
    /// `effort / (weighted_source + weighted_initial)`.
    pub c_emp: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ControlResult {
    pub f: StepField,
    #[serde(skip)]
    pub y: Trajectory,
    #[serde(skip)]
    pub dual: Trajectory,
    pub z_t: Field,
    pub j_terms: Vec<Term>,
    pub j_value: LogReal,
    pub terminal_norm_target: f64,
    /// Same data, `f = 0`.
    pub free_terminal_norm_target: f64,
    pub cg_iters: usize,
    pub gradient_norm: f64,
    pub converged: bool,
    pub cg_history: Vec<CgRecord>,
    pub lambda_max: f64,
    pub eps_eff: f64,
    /// `eps_eff |z| + |r|`, which bounds the terminal norm.
    pub hum_bound: f64,
    pub effort: EffortReport,
}

impl ControlResult {
    pub fn control_norm(&self, grid: &Grid) -> f64 {
        self.f.norm_sq(grid).sqrt()
    }
}

/// Penalized HUM control for the system with frozen history `frozen_w`.
pub fn hum_control(problem: &ControlProblem, frozen_w: &Trajectory) -> Result<ControlResult> {
    problem.check()?;
    let op = HumOperator::new(problem)?;
    let lambda = op.lambda_max()?;
    let h = frozen_source(&problem.kernel, &problem.grid, &frozen_w.snapshots);
    hum_control_with(&op, problem, &h, lambda)
}

/// [`hum_control`] with a prepared operator, source `h` and `lambda_max`.
pub fn hum_control_with(op: &HumOperator, problem: &ControlProblem, h: &StepField, lambda_max: f64) -> Result<ControlResult> {
    let g = &problem.grid;
    let source = SourceMode::Explicit(h.clone());
    let free = solve_forward_with(&op.ctx, &problem.y0, None, &source)?;
    let mut b = free.terminal().clone();
    op.project(&mut b);
    let eps_eff = if lambda_max > 0.0 { problem.eps * lambda_max } else { problem.eps };
    let b_norm = op.inner(&b, &b).sqrt();
    let mut z = Field::zeros_on(g);
    let mut r = b.clone();
    let mut history = Vec::new();
    let mut iters = 0;
    let mut converged = b_norm == 0.0;
    if !converged {
        let mut p = r.clone();
        p.scale(-1.0);
        let mut rr = op.inner(&r, &r);
        history.push(CgRecord { iter: 0, functional: 0.0, gradient_norm: rr.sqrt() });
        while iters < problem.cg_max_iter {
            let mut q = op.apply(&p)?;
            q.axpy(eps_eff, &p);
            let curv = op.inner(&p, &q);
            if !(curv > 0.0) {
                return Err(Error::NegativeCurvature { curvature: curv });
            }
            let alpha = rr / curv;
            z.axpy(alpha, &p);
            r.axpy(alpha, &q);
            iters += 1;
            let rr_new = op.inner(&r, &r);
            let mut rb = r.clone();
            rb.axpy(1.0, &b);
            history.push(CgRecord { iter: iters, functional: 0.5 * op.inner(&rb, &z), gradient_norm: rr_new.sqrt() });
            if rr_new.sqrt() <= problem.cg_tol * b_norm {
                converged = true;
                break;
            }
            let beta = rr_new / rr;
            rr = rr_new;
            p.scale(beta);
            p.axpy(-1.0, &r);
        }
    }
    let dual = op.dual(&z)?;
    let f = op.control_from(&dual);
    let y = solve_forward_with(&op.ctx, &problem.y0, Some(&f), &source)?;
    let terminal_norm_target = y.terminal().norm_sq_ages_from(g, op.j_bar).sqrt();
    let free_terminal_norm_target = b_norm;
    let gradient_norm = op.inner(&r, &r).sqrt();
    let hum_bound = eps_eff * op.inner(&z, &z).sqrt() + gradient_norm;

    let ws = &problem.weights;
    let hat0 = 2.0 * problem.s * ws.phi_hat0();
    let state: f64 = y.snapshots[1..].iter().map(|f| f.norm_sq(g)).sum::<f64>() * g.dt;
    let early: f64 = y.terminal().norm_sq(g) - y.terminal().norm_sq_ages_from(g, op.j_bar);
    let effort_term = op.effort(&dual);
    let j_terms = vec![
        Term::new("state", LogReal::from_value(state).mul(LogReal::from_ln(-hat0))),
        Term::new("control", effort_term),
        Term::new("terminal_window", LogReal::from_value(early.max(0.0)).mul(LogReal::from_ln(-hat0))),
    ];
    let j_value = LogReal::sum(j_terms.iter().map(|t| t.value));
    let effort = effort_report(op, problem, h, effort_term);
    Ok(ControlResult {
        f,
        y,
        dual,
        z_t: z,
        j_terms,
        j_value,
        terminal_norm_target,
        free_terminal_norm_target,
        cg_iters: iters,
        gradient_norm,
        converged,
        cg_history: history,
        lambda_max,
        eps_eff,
        hum_bound,
        effort,
    })
}

fn effort_report(op: &HumOperator, problem: &ControlProblem, h: &StepField, effort: LogReal) -> EffortReport {
    let g = &problem.grid;
    let s = problem.s;
    let cell = (g.dt * g.da).ln();
    let mut src = LogSum::new();
    for n in 0..g.nt {
        for j in 0..g.na {
            let gam = gamma_raw(g.t_final, g.t_mid(n), g.a(j));
            for (i, &v) in h.steps[n].row(j).iter().enumerate() {
                if v != 0.0 {
                    src.push_ln((v * v * g.h[i]).ln() + cell - 2.0 * s * gam * op.nodal.psi_c[i]);
                }
            }
        }
    }
    let weighted_source = src.total();
    let weighted_initial =
        LogReal::from_value(problem.y0.norm_sq(g)).mul(LogReal::from_ln(-2.0 * s * problem.weights.phi_hat0()));
    let rhs = weighted_source.add(weighted_initial);
    let c_emp = if rhs.is_zero() { None } else { Some(effort.div(rhs).value()) };
    EffortReport { effort, weighted_source, weighted_initial, c_emp }
}

/// `f = 0` run with the self-memory active, and its target-age terminal norm.
pub fn uncontrolled_baseline(problem: &ControlProblem) -> Result<(Trajectory, f64)> {
    let ctx = SolverContext::new(&problem.grid, &problem.profile, &problem.rates, &problem.window);
    let traj = solve_forward_with(&ctx, &problem.y0, None, &SourceMode::SelfMemory(problem.kernel.clone()))?;
    let norm = traj.terminal().norm_sq_ages_from(&problem.grid, problem.target_start()).sqrt();
    Ok((traj, norm))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FixedPointIterate {
    pub iter: usize,
    /// Relative change of the memory source produced by the new iterate.
    pub residual: f64,
    pub control_norm: f64,
    pub terminal_norm: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FixedPointResult {
    pub iterates: Vec<FixedPointIterate>,
    pub converged: bool,
    pub final_result: ControlResult,
}

impl FixedPointResult {
    /// `residual_{n+1} / residual_n` over consecutive nonzero residuals.
    pub fn contraction_ratios(&self) -> Vec<f64> {
        self.iterates
            .windows(2)
            .filter(|w| w[0].residual > 0.0)
            .map(|w| w[1].residual / w[0].residual)
            .collect()
    }
}

/// Picard iteration `w -> y(w)` starting from the uncontrolled memoryless run.
///
/// Iterate `n` controls the system with the memory of `w_{n-1}`; its residual
/// is `|h(w_n) - h(w_{n-1})| / |h(w_n)|` with `0/0 = 0`, so a zero kernel
/// stops after one iteration.
pub fn memory_fixed_point(problem: &ControlProblem, tol: f64, max_iter: usize) -> Result<FixedPointResult> {
    problem.check()?;
    let g = &problem.grid;
    let op = HumOperator::new(problem)?;
    let lambda = op.lambda_max()?;
    let w0 = solve_forward_with(&op.ctx, &problem.y0, None, &SourceMode::None)?;
    let mut h = frozen_source(&problem.kernel, g, &w0.snapshots);
    let mut iterates = Vec::new();
    let mut streak = 0;
    let mut last: Option<ControlResult> = None;
    let mut converged = false;
    for iter in 1..=max_iter.max(1) {
        let res = hum_control_with(&op, problem, &h, lambda)?;
        let h_next = frozen_source(&problem.kernel, g, &res.y.snapshots);
        let mut diff = h_next.clone();
        diff.axpy(-1.0, &h);
        let num = diff.norm_sq(g).sqrt();
        let den = h_next.norm_sq(g).sqrt();
        let residual = if num == 0.0 { 0.0 } else if den == 0.0 { f64::INFINITY } else { num / den };
        iterates.push(FixedPointIterate {
            iter,
            residual,
            control_norm: res.f.norm_sq(g).sqrt(),
            terminal_norm: res.terminal_norm_target,
        });
        let n = iterates.len();
        if n >= 2 && residual > iterates[n - 2].residual {
            streak += 1;
        } else {
            streak = 0;
        }
        last = Some(res);
        if residual <= tol {
            converged = true;
            break;
        }
        if streak >= DIVERGENCE_STREAK || !residual.is_finite() {
            return Err(Error::FixedPointDivergence { streak, residual });
        }
        h = h_next;
    }
    Ok(FixedPointResult { iterates, converged, final_result: last.expect("at least one iteration") })
}

/// `iteration,functional,gradient_norm` rows.
pub fn write_cg_csv<W: Write>(mut w: W, history: &[CgRecord]) -> Result<()> {
    writeln!(w, "iteration,functional,gradient_norm")?;
    for r in history {
        writeln!(w, "{},{:e},{:e}", r.iter, r.functional, r.gradient_norm)?;
    }
    Ok(())
}

/// `iter,residual,control_norm,terminal_norm` rows.
pub fn write_fixed_point_csv<W: Write>(mut w: W, res: &FixedPointResult) -> Result<()> {
    writeln!(w, "iter,residual,control_norm,terminal_norm")?;
    for r in &res.iterates {
        writeln!(w, "{},{:e},{:e},{:e}", r.iter, r.residual, r.control_norm, r.terminal_norm)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::control_demo;

    fn small(eps: f64) -> ControlProblem {
        let mut sc = control_demo(1e-5);
        sc.nx = 16;
        sc.na = 8;
        sc.control_problem(1, 1e-5, eps).unwrap()
    }

    fn bump(grid: &Grid, c: f64) -> Field {
        Field::from_fn(grid, |a, x| (c * a + x).sin() * x * (1.0 - x) + a * a)
    }

    #[test]
    fn zero_data_gives_zero_control() {
        let mut p = small(1e-4);
        p.y0 = Field::zeros_on(&p.grid);
        p.kernel = MemoryKernel::zero();
        let w = solve_forward_with(
            &SolverContext::new(&p.grid, &p.profile, &p.rates, &p.window),
            &p.y0,
            None,
            &SourceMode::None,
        )
        .unwrap();
        let res = hum_control(&p, &w).unwrap();
        assert_eq!(res.cg_iters, 0);
        assert!(res.converged);
        assert_eq!(res.f.max_abs(), 0.0);
        assert!(res.j_value.is_zero());
    }

    #[test]
    fn gram_operator_is_symmetric_psd() {
        let p = small(1e-4);
        let op = HumOperator::new(&p).unwrap();
        let mut u = bump(&p.grid, 3.0);
        let mut v = bump(&p.grid, -7.0);
        op.project(&mut u);
        op.project(&mut v);
        let lu = op.apply(&u).unwrap();
        let lv = op.apply(&v).unwrap();
        let (a, b) = (op.inner(&lu, &v), op.inner(&u, &lv));
        assert!((a - b).abs() <= 1e-10 * a.abs().max(b.abs()), "{a} vs {b}");
        assert!(op.inner(&lu, &u) >= 0.0);
        assert!(op.inner(&lv, &v) >= 0.0);
        let lm = op.lambda_max().unwrap();
        assert!(lm > 0.0 && op.inner(&lu, &u) <= lm * op.inner(&u, &u) * (1.0 + 1e-6));
    }

    #[test]
    fn control_vanishes_off_window() {
        let p = small(1e-2);
        let (w, _) = uncontrolled_baseline(&p).unwrap();
        let res = hum_control(&p, &w).unwrap();
        let g = &p.grid;
        assert!(res.f.max_abs() > 0.0);
        for step in &res.f.steps {
            for j in 0..g.na {
                for (i, &v) in step.row(j).iter().enumerate() {
                    if !p.window.contains(g.x_centers[i]) {
                        assert_eq!(v, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn cg_functional_decreases_and_terminal_is_bounded() {
        let p = small(1e-3);
        let (w, base) = uncontrolled_baseline(&p).unwrap();
        let res = hum_control(&p, &w).unwrap();
        assert!(res.converged);
        for pair in res.cg_history.windows(2) {
            assert!(pair[1].functional <= pair[0].functional + 1e-12 * pair[0].functional.abs().max(1e-300));
        }
        assert!(res.terminal_norm_target <= res.hum_bound * (1.0 + 1e-6) + 1e-14);
        assert!(res.terminal_norm_target < base);
    }

    #[test]
    fn smaller_penalty_drives_closer_to_zero() {
        let (w, _) = uncontrolled_baseline(&small(1e-2)).unwrap();
        let coarse = hum_control(&small(1e-2), &w).unwrap();
        let fine = hum_control(&small(1e-4), &w).unwrap();
        assert!(fine.terminal_norm_target <= coarse.terminal_norm_target);
        assert!(fine.control_norm(&small(1e-4).grid) >= coarse.control_norm(&small(1e-2).grid));
    }

    #[test]
    fn memoryless_fixed_point_stops_at_once() {
        let mut p = small(1e-3);
        p.kernel = MemoryKernel::zero();
        let fp = memory_fixed_point(&p, 1e-8, 20).unwrap();
        assert!(fp.converged);
        assert_eq!(fp.iterates.len(), 1);
        assert_eq!(fp.iterates[0].residual, 0.0);
    }

    #[test]
    fn rejects_bad_parameters() {
        let mut p = small(0.0);
        let w = uncontrolled_baseline(&small(1e-2)).unwrap().0;
        assert!(matches!(hum_control(&p, &w), Err(Error::InvalidParameter { name: "eps", .. })));
        p.eps = 1e-3;
        p.kernel = MemoryKernel::constant(1e6);
        p.s = 1.0;
        assert!(matches!(hum_control(&p, &w), Err(Error::InvalidParameter { .. })));
    }

    #[test]
    fn csv_writers_emit_headers() {
        let hist = [CgRecord { iter: 0, functional: 0.0, gradient_norm: 1.0 }];
        let mut buf = Vec::new();
        write_cg_csv(&mut buf, &hist).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("iteration,functional,gradient_norm\n0,"));
    }
}
