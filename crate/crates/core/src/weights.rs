//! Carleman weight functions for both degeneracy orientations.
//!
//! Left orientation (`k(0) = 0`):
//! `p(x) = int_0^x y/k`, `psi = p - 2|p|`, `rho(x) = d int_x^1 1/k`.
//! Right orientation (`k(1) = 0`):
//! `p(x) = int_0^x (y-1)/k`, `psi = p - 2|p|`, `rho(x) = d int_0^x 1/k`.
//! In both, `Psi = exp(kappa rho) - exp(2 kappa |rho|)` and `d = sup |k'|`.
//!
//! Time weights: `Theta = 1/(t^4 (T-t)^4 a^4)`, and `gamma` equal to
//! `Theta(T/2, a)` up to `T/2` and to `Theta` afterwards.

use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::coefficients::{graded_widths, DegeneracyProfile, DEFAULT_GRADING};
use crate::discretization::Grid;
use crate::error::{Error, Result};
use crate::quadrature::{integrate, integrate_endpoint_singular};

pub const QUAD_TOL: f64 = 1e-10;
pub const DEFAULT_QUAD_POINTS: usize = 400;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
pub enum Orientation {
    Left,
    Right,
}

/// Integrand called as `f(x, 1 - x)`.
type Integrand = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// `C(x) = int_lo^x f`, tabulated on a graded mesh and refined locally on
/// evaluation. `q_lo`, `q_hi` are the power-law exponents of `f` at the ends
/// (zero when `f` is regular there).
#[derive(Clone)]
pub struct CumulativeIntegral {
    nodes: Vec<f64>,
    values: Vec<f64>,
    f: Integrand,
    q_lo: f64,
    q_hi: f64,
}

impl std::fmt::Debug for CumulativeIntegral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CumulativeIntegral")
            .field("lo", &self.lo())
            .field("hi", &self.hi())
            .field("total", &self.total())
            .finish()
    }
}

impl CumulativeIntegral {
    pub fn build(f: Integrand, lo: f64, hi: f64, q: (f64, f64), cells: usize, graded: (bool, bool)) -> Result<Self> {
        let (q_lo, q_hi) = q;
        if q_lo <= -1.0 || q_hi <= -1.0 {
            return Err(Error::QuadratureDivergence { lo, hi });
        }
        let widths = graded_widths(cells.max(2), DEFAULT_GRADING, graded.0, graded.1);
        let mut nodes = vec![lo];
        let mut acc = 0.0;
        for w in &widths[..widths.len() - 1] {
            acc += w;
            nodes.push(lo + (hi - lo) * acc);
        }
        nodes.push(hi);
        let mut ci = CumulativeIntegral { nodes, values: Vec::new(), f, q_lo, q_hi };
        let n = ci.nodes.len();
        let mut values = vec![0.0; n];
        for i in 0..n - 1 {
            values[i + 1] = values[i] + ci.panel(i, ci.nodes[i + 1])?;
        }
        ci.values = values;
        Ok(ci)
    }

    /// `int_{nodes[i]}^{x}` with the endpoint mapping where it applies.
    fn panel(&self, i: usize, x: f64) -> Result<f64> {
        let a = self.nodes[i];
        if x <= a {
            return Ok(0.0);
        }
        let ql = if i == 0 { self.q_lo.min(0.0) } else { 0.0 };
        let qh = if x >= self.hi() { self.q_hi.min(0.0) } else { 0.0 };
        let shift = 1.0 - x;
        if ql < 0.0 || qh < 0.0 {
            integrate_endpoint_singular(|y, d| (self.f)(y, shift + d), a, x, ql, qh, QUAD_TOL)
        } else if a >= 0.5 {
            // in the distance to 1, which is exact here and not in x
            integrate(|d| (self.f)(1.0 - d, d), 1.0 - x, 1.0 - a, QUAD_TOL)
        } else {
            integrate(|y| (self.f)(y, 1.0 - y), a, x, QUAD_TOL)
        }
    }

    pub fn lo(&self) -> f64 {
        self.nodes[0]
    }

    pub fn hi(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn total(&self) -> f64 {
        *self.values.last().unwrap_or(&0.0)
    }

    /// Table value at the panel start plus the local integral; `x` is
    /// clamped to `[lo, hi]`.
    pub fn eval(&self, x: f64) -> Result<f64> {
        let x = x.clamp(self.lo(), self.hi());
        let i = match self.nodes.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => return Ok(self.values[i]),
            Err(i) => i - 1,
        };
        Ok(self.values[i] + self.panel(i, x)?)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Tabulated `p` (or `p-bar`) with its sup norm.
#[derive(Clone, Debug)]
pub struct PTable {
    pub orientation: Orientation,
    pub integral: CumulativeIntegral,
    pub p_norm: f64,
}

impl PTable {
    pub fn p(&self, x: f64) -> Result<f64> {
        self.integral.eval(x)
    }
}

pub fn compute_p(profile: &DegeneracyProfile, orientation: Orientation, quad_points: usize) -> Result<PTable> {
    let prof = profile.clone();
    let graded = (profile.degenerate_left(), profile.degenerate_right());
    let (f, q): (Integrand, (f64, f64)) = match orientation {
        Orientation::Left => (Arc::new(move |y: f64, yc: f64| y / prof.k_split(y, yc)), (1.0 - profile.m1, -profile.m2)),
        Orientation::Right => (Arc::new(move |y: f64, yc: f64| -yc / prof.k_split(y, yc)), (-profile.m1, 1.0 - profile.m2)),
    };
    let integral = CumulativeIntegral::build(f, 0.0, 1.0, q, quad_points, graded)?;
    let p_norm = integral.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(PTable { orientation, integral, p_norm })
}

/// Tabulated `rho` with its (possibly truncated) sup norm.
#[derive(Clone, Debug)]
pub struct RhoTable {
    pub orientation: Orientation,
    /// `int 1/k` from the lower limit of the table.
    pub inv_k: CumulativeIntegral,
    pub frak_d: f64,
    /// Sup of `rho` over the evaluation mesh.
    pub rho_norm: f64,
    /// The defining integral diverges on `[0,1]`; the table lives on a cut domain.
    pub divergent: bool,
    /// `sup |k'|` was taken over a mesh on which `k'` is unbounded.
    pub d_unbounded: bool,
}

impl RhoTable {
    pub fn rho(&self, x: f64) -> Result<f64> {
        let c = self.inv_k.eval(x)?;
        Ok(match self.orientation {
            Orientation::Left => self.frak_d * (self.inv_k.total() - c),
            Orientation::Right => self.frak_d * c,
        })
    }

    /// `|rho|_inf` on `[0,1]`: infinite when the integral diverges.
    pub fn rho_norm_exact(&self) -> f64 {
        if self.divergent {
            f64::INFINITY
        } else {
            self.rho_norm
        }
    }
}

/// `rho` for `orientation`; `eval_mesh` (sorted, interior) sets both the
/// sampling of `d = sup |k'|` and the truncation points used when `int 1/k`
/// diverges at an end.
pub fn compute_rho(
    profile: &DegeneracyProfile,
    orientation: Orientation,
    quad_points: usize,
    eval_mesh: &[f64],
) -> Result<RhoTable> {
    if eval_mesh.is_empty() {
        return Err(Error::InvalidParameter { name: "eval_mesh", reason: "empty".into() });
    }
    let frak_d = eval_mesh.iter().fold(0.0f64, |m, &x| m.max(profile.k_prime(x).abs()));
    let div_lo = profile.m1 >= 1.0;
    let div_hi = profile.m2 >= 1.0;
    let lo = if div_lo { eval_mesh[0] } else { 0.0 };
    let hi = if div_hi { *eval_mesh.last().unwrap() } else { 1.0 };
    let q = (if div_lo { 0.0 } else { -profile.m1 }, if div_hi { 0.0 } else { -profile.m2 });
    let prof = profile.clone();
    let inv_k = CumulativeIntegral::build(
        Arc::new(move |y: f64, yc: f64| 1.0 / prof.k_split(y, yc)),
        lo,
        hi,
        q,
        quad_points,
        (profile.degenerate_left(), profile.degenerate_right()),
    )?;
    let mut table = RhoTable {
        orientation,
        inv_k,
        frak_d,
        rho_norm: 0.0,
        divergent: div_lo || div_hi,
        d_unbounded: profile.k_prime_unbounded(),
    };
    // sup over the evaluation mesh, as the weights are only used there
    let mesh_sup = eval_mesh.iter().try_fold(0.0f64, |m, &x| Ok::<_, Error>(m.max(table.rho(x)?)))?;
    table.rho_norm = mesh_sup;
    Ok(table)
}

/// `ln(|p| + 1) / (2 |rho|)`.
pub fn kappa_max(p_norm: f64, rho_norm: f64) -> Result<f64> {
    if rho_norm.is_infinite() {
        return Err(Error::InfiniteRho);
    }
    if !(p_norm > 0.0 && rho_norm > 0.0) || !p_norm.is_finite() {
        return Err(Error::InvalidParameter {
            name: "kappa_max",
            reason: format!("need p_norm > 0 and finite rho_norm > 0, got ({p_norm}, {rho_norm})"),
        });
    }
    Ok((p_norm + 1.0).ln() / (2.0 * rho_norm))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum WeightKind {
    Theta,
    Gamma,
    Varphi,
    Eta,
    Phi,
    Sigma,
    PhiHat,
    PhiStar,
}

impl WeightKind {
    pub const ALL: [WeightKind; 8] = [
        WeightKind::Theta,
        WeightKind::Gamma,
        WeightKind::Varphi,
        WeightKind::Eta,
        WeightKind::Phi,
        WeightKind::Sigma,
        WeightKind::PhiHat,
        WeightKind::PhiStar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WeightKind::Theta => "Theta",
            WeightKind::Gamma => "gamma",
            WeightKind::Varphi => "varphi",
            WeightKind::Eta => "eta",
            WeightKind::Phi => "Phi",
            WeightKind::Sigma => "sigma",
            WeightKind::PhiHat => "Phi_hat",
            WeightKind::PhiStar => "Phi_star",
        }
    }

    pub fn is_theta_based(self) -> bool {
        matches!(self, WeightKind::Theta | WeightKind::Varphi | WeightKind::Eta)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct WeightFlags {
    pub rho_truncated: bool,
    pub d_unbounded: bool,
    pub kappa_fallback: bool,
}

/// All weights for one `(s, kappa, orientation)`.
#[derive(Clone, Debug)]
pub struct WeightSet {
    pub orientation: Orientation,
    pub p: PTable,
    pub p_norm: f64,
    pub rho: RhoTable,
    pub rho_norm: f64,
    pub frak_d: f64,
    pub kappa: f64,
    pub t_final: f64,
    pub a_max: f64,
    pub s: f64,
    pub psi_at_0: f64,
    pub psi_at_1: f64,
    pub flags: WeightFlags,
}

#[derive(Clone, Debug)]
pub struct WeightConfig {
    pub orientation: Orientation,
    pub t_final: f64,
    pub a_max: f64,
    pub s: f64,
    /// `None` selects `kappa_max`.
    pub kappa: Option<f64>,
    pub quad_points: usize,
}

impl WeightSet {
    pub fn build(profile: &DegeneracyProfile, cfg: &WeightConfig, eval_mesh: &[f64]) -> Result<Self> {
        if !(cfg.s > 0.0 && cfg.t_final > 0.0 && cfg.a_max > 0.0) {
            return Err(Error::InvalidParameter { name: "weights", reason: "s, T and A must be positive".into() });
        }
        let p = compute_p(profile, cfg.orientation, cfg.quad_points)?;
        let rho = compute_rho(profile, cfg.orientation, cfg.quad_points, eval_mesh)?;
        let mut flags = WeightFlags { rho_truncated: rho.divergent, d_unbounded: rho.d_unbounded, kappa_fallback: false };
        let kappa = match cfg.kappa {
            Some(k) => k,
            None if rho.rho_norm > 0.0 => kappa_max(p.p_norm, rho.rho_norm)?,
            None => {
                flags.kappa_fallback = true;
                1.0
            }
        };
        let p_norm = p.p_norm;
        let (psi_at_0, psi_at_1) = (p.p(0.0)? - 2.0 * p_norm, p.p(1.0)? - 2.0 * p_norm);
        Ok(WeightSet {
            orientation: cfg.orientation,
            p_norm,
            rho_norm: rho.rho_norm,
            frak_d: rho.frak_d,
            p,
            rho,
            kappa,
            t_final: cfg.t_final,
            a_max: cfg.a_max,
            s: cfg.s,
            psi_at_0,
            psi_at_1,
            flags,
        })
    }

    pub fn with_s(&self, s: f64) -> Self {
        WeightSet { s, ..self.clone() }
    }

    pub fn psi(&self, x: f64) -> Result<f64> {
        Ok(self.p.p(x)? - 2.0 * self.p_norm)
    }

    pub fn rho_at(&self, x: f64) -> Result<f64> {
        self.rho.rho(x)
    }

    /// `Psi(x) = exp(kappa rho) - exp(2 kappa |rho|)`.
    pub fn big_psi(&self, x: f64) -> Result<f64> {
        let r = self.rho_at(x)?;
        Ok((self.kappa * r).exp() - (2.0 * self.kappa * self.rho_norm).exp())
    }

    pub fn theta(&self, t: f64, a: f64) -> Result<f64> {
        if !(t > 0.0 && t < self.t_final && a > 0.0 && a <= self.a_max * (1.0 + 1e-12)) {
            return Err(Error::WeightDomain { which: "Theta", t, a });
        }
        Ok(theta_raw(self.t_final, t, a))
    }

    pub fn gamma(&self, t: f64, a: f64) -> Result<f64> {
        if !(t >= 0.0 && t < self.t_final && a > 0.0 && a <= self.a_max * (1.0 + 1e-12)) {
            return Err(Error::WeightDomain { which: "gamma", t, a });
        }
        Ok(gamma_raw(self.t_final, t, a))
    }

    /// `psi` at the end where it is largest (`x = 1` Left, `x = 0` Right).
    pub fn psi_max(&self) -> f64 {
        match self.orientation {
            Orientation::Left => self.psi_at_1,
            Orientation::Right => self.psi_at_0,
        }
    }

    pub fn psi_min(&self) -> f64 {
        match self.orientation {
            Orientation::Left => self.psi_at_0,
            Orientation::Right => self.psi_at_1,
        }
    }

    pub fn phi_hat(&self, t: f64) -> Result<f64> {
        Ok(self.gamma(t, self.a_max)? * self.psi_max())
    }

    /// `Phi_hat(0) = gamma(0, A) psi_max`, a finite negative scalar.
    pub fn phi_hat0(&self) -> f64 {
        gamma_raw(self.t_final, 0.0, self.a_max) * self.psi_max()
    }

    pub fn phi_star(&self, t: f64, a: f64) -> Result<f64> {
        Ok(self.gamma(t, a)? * self.psi_min())
    }

    pub fn eval(&self, which: WeightKind, t: f64, a: f64, x: f64) -> Result<f64> {
        match which {
            WeightKind::Theta => self.theta(t, a),
            WeightKind::Gamma => self.gamma(t, a),
            WeightKind::Varphi => Ok(self.theta(t, a)? * self.psi(x)?),
            WeightKind::Eta => Ok(self.theta(t, a)? * self.big_psi(x)?),
            WeightKind::Phi => Ok(self.gamma(t, a)? * self.psi(x)?),
            WeightKind::Sigma => Ok(self.gamma(t, a)? * self.big_psi(x)?),
            WeightKind::PhiHat => self.phi_hat(t),
            WeightKind::PhiStar => self.phi_star(t, a),
        }
    }

    /// `ln e^{2 s W} = 2 s W`.
    pub fn eval_logweight(&self, which: WeightKind, t: f64, a: f64, x: f64) -> Result<f64> {
        Ok(2.0 * self.s * self.eval(which, t, a, x)?)
    }

    /// `psi` and `Psi` at cell centers and faces of `grid`.
    pub fn nodal(&self, grid: &Grid) -> Result<NodalWeights> {
        let psi_c = grid.x_centers.iter().map(|&x| self.psi(x)).collect::<Result<Vec<_>>>()?;
        let big_psi_c = grid.x_centers.iter().map(|&x| self.big_psi(x)).collect::<Result<Vec<_>>>()?;
        let psi_f = grid.x_faces.iter().map(|&x| self.psi(x)).collect::<Result<Vec<_>>>()?;
        let big_psi_f = grid.x_faces.iter().map(|&x| self.big_psi(x)).collect::<Result<Vec<_>>>()?;
        Ok(NodalWeights { psi_c, big_psi_c, psi_f, big_psi_f })
    }
}

pub fn theta_raw(t_final: f64, t: f64, a: f64) -> f64 {
    1.0 / (t.powi(4) * (t_final - t).powi(4) * a.powi(4))
}

pub fn gamma_raw(t_final: f64, t: f64, a: f64) -> f64 {
    if t <= 0.5 * t_final {
        (4.0 / (t_final * t_final)).powi(4) / a.powi(4)
    } else {
        theta_raw(t_final, t, a)
    }
}

/// Space parts of the weights sampled on a grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NodalWeights {
    pub psi_c: Vec<f64>,
    pub big_psi_c: Vec<f64>,
    pub psi_f: Vec<f64>,
    pub big_psi_f: Vec<f64>,
}

/// Worst `phi - eta` over the grid cells (should be `<= 0`) and the count of
/// nodes where it is positive.
pub fn check_phi_le_eta(ws: &WeightSet, nodal: &NodalWeights, times: &[f64], ages: &[f64]) -> (f64, usize) {
    let mut worst = f64::NEG_INFINITY;
    let mut bad = 0;
    for &t in times {
        for &a in ages {
            let th = theta_raw(ws.t_final, t, a);
            for (ps, bps) in nodal.psi_c.iter().zip(&nodal.big_psi_c) {
                let d = th * ps - th * bps;
                worst = worst.max(d);
                if d > 0.0 {
                    bad += 1;
                }
            }
        }
    }
    (worst, bad)
}

/// Smallest `s` (by bisection) from which
/// `(s Theta)^2 e^{2 s eta} <= (s gamma)^2 e^{2 s sigma}` at every sampled node;
/// `inf` when no finite `s` works.
pub fn ordering_threshold(ws: &WeightSet, nodal: &NodalWeights, times: &[f64], ages: &[f64]) -> f64 {
    let holds = |s: f64| {
        times.iter().all(|&t| {
            ages.iter().all(|&a| {
                let th = theta_raw(ws.t_final, t, a);
                let ga = gamma_raw(ws.t_final, t, a);
                nodal.big_psi_c.iter().all(|&bp| {
                    2.0 * (s * th).ln() + 2.0 * s * th * bp <= 2.0 * (s * ga).ln() + 2.0 * s * ga * bp
                })
            })
        })
    };
    let mut hi = 1e-12;
    while !holds(hi) {
        hi *= 2.0;
        if hi > 1e300 {
            return f64::INFINITY;
        }
    }
    let mut lo = hi / 2.0;
    if hi <= 1e-12 {
        return hi;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if holds(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    hi
}

/// CSV `t,a,x,value,log_exp_value` on step midpoints and cell centers.
pub fn write_weight_csv<W: Write>(mut w: W, ws: &WeightSet, which: WeightKind, grid: &Grid) -> Result<()> {
    writeln!(w, "t,a,x,value,log_exp_value")?;
    let nodal = ws.nodal(grid)?;
    for n in 0..grid.nt {
        let t = grid.t_mid(n);
        for j in 0..grid.na {
            let a = grid.a(j);
            for (i, &x) in grid.x_centers.iter().enumerate() {
                let v = match which {
                    WeightKind::Theta => theta_raw(ws.t_final, t, a),
                    WeightKind::Gamma => gamma_raw(ws.t_final, t, a),
                    WeightKind::Varphi => theta_raw(ws.t_final, t, a) * nodal.psi_c[i],
                    WeightKind::Eta => theta_raw(ws.t_final, t, a) * nodal.big_psi_c[i],
                    WeightKind::Phi => gamma_raw(ws.t_final, t, a) * nodal.psi_c[i],
                    WeightKind::Sigma => gamma_raw(ws.t_final, t, a) * nodal.big_psi_c[i],
                    _ => ws.eval(which, t, a, x)?,
                };
                writeln!(w, "{},{},{},{},{}", t, a, x, v, 2.0 * ws.s * v)?;
            }
        }
    }
    Ok(())
}
