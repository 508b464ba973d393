//! Diffusion coefficient, vital rates, memory kernel and control window,
//! together with the sampled hypothesis checks on each of them.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};

/// Relative slack used by every sampled inequality check.
pub const CHECK_REL_TOL: f64 = 1e-12;
/// Log-space overflow bound for the memory admissibility product.
pub const ADMISSIBILITY_LOG_CAP: f64 = 700.0;
/// Default number of interior points of the validation mesh.
pub const DEFAULT_MESH_POINTS: usize = 800;
/// Default geometric grading toward degenerate endpoints.
pub const DEFAULT_GRADING: f64 = 1.05;

pub type Fn2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type Fn3 = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
pub type Fn4 = Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum EndpointClass {
    None,
    Weak,
    Strong,
}

impl EndpointClass {
    pub fn from_exponent(m: f64) -> Result<Self> {
        if !(0.0..2.0).contains(&m) || m.is_nan() {
            return Err(Error::ExponentOutOfRange { endpoint: 0, value: m });
        }
        Ok(if m == 0.0 {
            EndpointClass::None
        } else if m < 1.0 {
            EndpointClass::Weak
        } else {
            EndpointClass::Strong
        })
    }

    pub fn is_degenerate(self) -> bool {
        self != EndpointClass::None
    }

    fn letter(self) -> char {
        match self {
            EndpointClass::None => 'N',
            EndpointClass::Weak => 'W',
            EndpointClass::Strong => 'S',
        }
    }
}

/// Fritsch-Carlson monotone cubic Hermite interpolant.
#[derive(Clone, Debug, PartialEq)]
pub struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(Error::InvalidParameter {
                name: "table",
                reason: format!("need >= 2 matching x/k samples, got {} and {}", xs.len(), ys.len()),
            });
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) || xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "table",
                reason: "x must be strictly increasing and all values finite".into(),
            });
        }
        let n = xs.len();
        let delta: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i])).collect();
        let mut m = vec![0.0; n];
        m[0] = delta[0];
        m[n - 1] = delta[n - 2];
        for i in 1..n - 1 {
            m[i] = if delta[i - 1] * delta[i] <= 0.0 { 0.0 } else { 0.5 * (delta[i - 1] + delta[i]) };
        }
        for i in 0..n - 1 {
            if delta[i] == 0.0 {
                m[i] = 0.0;
                m[i + 1] = 0.0;
                continue;
            }
            let a = m[i] / delta[i];
            let b = m[i + 1] / delta[i];
            let r = a * a + b * b;
            if r > 9.0 {
                let tau = 3.0 / r.sqrt();
                m[i] = tau * a * delta[i];
                m[i + 1] = tau * b * delta[i];
            }
        }
        Ok(MonotoneCubic { xs, ys, slopes: m })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let i = match self.xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => return self.ys[i],
            Err(i) => i - 1,
        };
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * self.ys[i]
            + (t3 - 2.0 * t2 + t) * h * self.slopes[i]
            + (-2.0 * t3 + 3.0 * t2) * self.ys[i + 1]
            + (t3 - t2) * h * self.slopes[i + 1]
    }

    pub fn knots(&self) -> (&[f64], &[f64]) {
        (&self.xs, &self.ys)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProfileShape {
    /// `x^m1 (1-x)^m2`.
    PowerLaw { m1: f64, m2: f64 },
    Constant { value: f64 },
    Table(MonotoneCubic),
}

/// The diffusion coefficient `k` with its claimed endpoint exponents.
#[derive(Clone, Debug, PartialEq)]
pub struct DegeneracyProfile {
    pub shape: ProfileShape,
    pub m1: f64,
    pub m2: f64,
    pub theta0: Option<f64>,
    pub theta1: Option<f64>,
    pub class: [EndpointClass; 2],
}

fn classify(m1: f64, m2: f64) -> Result<[EndpointClass; 2]> {
    let c0 = EndpointClass::from_exponent(m1).map_err(|_| Error::ExponentOutOfRange { endpoint: 0, value: m1 })?;
    let c1 = EndpointClass::from_exponent(m2).map_err(|_| Error::ExponentOutOfRange { endpoint: 1, value: m2 })?;
    Ok([c0, c1])
}

/// `k(x) = x^m1 (1-x)^m2` with exact derivative.
pub fn power_law_profile(m1: f64, m2: f64) -> Result<DegeneracyProfile> {
    let class = classify(m1, m2)?;
    Ok(DegeneracyProfile {
        shape: ProfileShape::PowerLaw { m1, m2 },
        m1,
        m2,
        theta0: (m1 > 0.0).then_some(m1),
        theta1: (m2 > 0.0).then_some(m2),
        class,
    })
}

pub fn constant_profile(value: f64) -> Result<DegeneracyProfile> {
    if !(value > 0.0 && value.is_finite()) {
        return Err(Error::InvalidParameter { name: "k", reason: format!("constant k must be positive, got {value}") });
    }
    Ok(DegeneracyProfile {
        shape: ProfileShape::Constant { value },
        m1: 0.0,
        m2: 0.0,
        theta0: None,
        theta1: None,
        class: [EndpointClass::None; 2],
    })
}

/// Tabulated `k` interpolated by a monotone cubic; exponents are the user's claim.
pub fn table_profile(xs: Vec<f64>, ks: Vec<f64>, m1: f64, m2: f64) -> Result<DegeneracyProfile> {
    let class = classify(m1, m2)?;
    Ok(DegeneracyProfile {
        shape: ProfileShape::Table(MonotoneCubic::new(xs, ks)?),
        m1,
        m2,
        theta0: (m1 > 0.0).then_some(m1),
        theta1: (m2 > 0.0).then_some(m2),
        class,
    })
}

impl DegeneracyProfile {
    /// Same `k`, different claimed exponents (and rider exponents).
    pub fn with_claimed_exponents(mut self, m1: f64, m2: f64) -> Result<Self> {
        self.class = classify(m1, m2)?;
        self.m1 = m1;
        self.m2 = m2;
        self.theta0 = (m1 > 0.0).then_some(m1);
        self.theta1 = (m2 > 0.0).then_some(m2);
        Ok(self)
    }

    pub fn k(&self, x: f64) -> f64 {
        match &self.shape {
            ProfileShape::PowerLaw { m1, m2 } => {
                let x = x.clamp(0.0, 1.0);
                pow0(x, *m1) * pow0(1.0 - x, *m2)
            }
            ProfileShape::Constant { value } => *value,
            ProfileShape::Table(t) => t.eval(x),
        }
    }

    /// `k(x)` given `xc = 1 - x` computed accurately by the caller.
    pub fn k_split(&self, x: f64, xc: f64) -> f64 {
        match &self.shape {
            ProfileShape::PowerLaw { m1, m2 } => pow0(x.max(0.0), *m1) * pow0(xc.max(0.0), *m2),
            _ => self.k(x),
        }
    }

    /// Analytic for power laws, central differences otherwise.
    pub fn k_prime(&self, x: f64) -> f64 {
        match &self.shape {
            ProfileShape::PowerLaw { m1, m2 } => {
                let (m1, m2) = (*m1, *m2);
                let y = 1.0 - x;
                let mut d = 0.0;
                if m1 != 0.0 {
                    d += m1 * x.powf(m1 - 1.0) * pow0(y, m2);
                }
                if m2 != 0.0 {
                    d -= m2 * pow0(x, m1) * y.powf(m2 - 1.0);
                }
                d
            }
            ProfileShape::Constant { .. } => 0.0,
            ProfileShape::Table(_) => {
                let h = (1e-6 * x.min(1.0 - x)).max(1e-8);
                if x - h < 0.0 {
                    (-3.0 * self.k(x) + 4.0 * self.k(x + h) - self.k(x + 2.0 * h)) / (2.0 * h)
                } else if x + h > 1.0 {
                    (3.0 * self.k(x) - 4.0 * self.k(x - h) + self.k(x - 2.0 * h)) / (2.0 * h)
                } else {
                    (self.k(x + h) - self.k(x - h)) / (2.0 * h)
                }
            }
        }
    }

    pub fn degenerate_left(&self) -> bool {
        self.class[0].is_degenerate()
    }

    pub fn degenerate_right(&self) -> bool {
        self.class[1].is_degenerate()
    }

    /// Two-letter class such as `WW`, `SN`, `NN`.
    pub fn class_code(&self) -> String {
        format!("{}{}", self.class[0].letter(), self.class[1].letter())
    }

    /// `k'` may be unbounded (weak degeneracy of a power law).
    pub fn k_prime_unbounded(&self) -> bool {
        match &self.shape {
            ProfileShape::PowerLaw { m1, m2 } => (*m1 > 0.0 && *m1 < 1.0) || (*m2 > 0.0 && *m2 < 1.0),
            ProfileShape::Constant { .. } => false,
            ProfileShape::Table(_) => {
                (self.m1 > 0.0 && self.m1 < 1.0) || (self.m2 > 0.0 && self.m2 < 1.0)
            }
        }
    }
}

fn pow0(x: f64, m: f64) -> f64 {
    if m == 0.0 {
        1.0
    } else {
        x.max(0.0).powf(m)
    }
}

/// Cell widths of a mesh on `[0,1]` graded geometrically toward the
/// flagged ends. Growth stops after half the cells so that very fine meshes
/// keep representable spacings near `x = 1`.
pub fn graded_widths(n: usize, ratio: f64, left: bool, right: bool) -> Vec<f64> {
    let half = n / 2;
    let raw: Vec<f64> = (0..n)
        .map(|i| {
            let e = match (left, right) {
                (true, true) => i.min(n - 1 - i),
                (true, false) => i.min(half),
                (false, true) => (n - 1 - i).min(half),
                (false, false) => 0,
            };
            ratio.powi(e as i32)
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Interior validation mesh: the inner faces of a graded partition.
pub fn validation_mesh(profile: &DegeneracyProfile, points: usize, ratio: f64) -> Vec<f64> {
    let widths = graded_widths(points + 1, ratio, profile.degenerate_left(), profile.degenerate_right());
    let mut x = 0.0;
    let mut out = Vec::with_capacity(points);
    for w in &widths[..points] {
        x += w;
        out.push(x);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub rule: String,
    pub location: String,
    pub residual: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: usize,
    pub violations: Vec<Violation>,
    pub notes: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    fn check(&mut self, ok: bool, rule: &str, location: impl FnOnce() -> String, residual: f64) {
        self.checks += 1;
        if !ok {
            self.violations.push(Violation { rule: rule.to_string(), location: location(), residual });
        }
    }

    pub fn merge(&mut self, other: ValidationReport) {
        self.checks += other.checks;
        self.violations.extend(other.violations);
        self.notes.extend(other.notes);
    }

    pub fn violated(&self, rule: &str) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }
}

fn le_rel(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs + CHECK_REL_TOL * lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE)
}

/// Largest rider exponent certified on the nearest 10% of mesh points:
/// `min(theta_given, min log-slope)`. The rider holds iff the result is positive.
pub fn monotonicity_theta(profile: &DegeneracyProfile, mesh: &[f64], endpoint: u8) -> f64 {
    let n = (mesh.len() / 10).max(1);
    let (pts, given): (Vec<f64>, f64) = if endpoint == 0 {
        (mesh[..n].to_vec(), profile.theta0.unwrap_or(profile.m1))
    } else {
        (mesh[mesh.len() - n..].to_vec(), profile.theta1.unwrap_or(profile.m2))
    };
    pts.iter().fold(given, |acc, &x| {
        let slope = if endpoint == 0 {
            x * profile.k_prime(x) / profile.k(x)
        } else {
            (x - 1.0) * profile.k_prime(x) / profile.k(x)
        };
        acc.min(slope)
    })
}

pub fn validate_profile(profile: &DegeneracyProfile, mesh: &[f64]) -> ValidationReport {
    let mut rep = ValidationReport::default();
    let mesh_ok = !mesh.is_empty()
        && mesh.windows(2).all(|w| w[1] > w[0])
        && mesh.iter().all(|&x| x > 0.0 && x < 1.0);
    rep.check(mesh_ok, "mesh strictly increasing and interior", || "mesh".into(), 0.0);
    if !mesh_ok {
        return rep;
    }
    for (e, m) in [(0u8, profile.m1), (1u8, profile.m2)] {
        rep.check(m.is_finite() && (0.0..2.0).contains(&m), "exponent in [0,2)", || format!("endpoint {e}"), m);
        let class_ok = match profile.class[e as usize] {
            EndpointClass::None => m == 0.0,
            EndpointClass::Weak => m > 0.0 && m < 1.0,
            EndpointClass::Strong => (1.0..2.0).contains(&m),
        };
        rep.check(class_ok, "class matches exponent", || format!("endpoint {e}"), m);
    }
    let kmax = mesh.iter().map(|&x| profile.k(x)).fold(0.0f64, f64::max);
    if profile.degenerate_left() {
        let k0 = profile.k(0.0);
        rep.check(k0 <= 1e-12 * kmax.max(1.0), "k vanishes at degenerate endpoint", || "x=0".into(), k0);
    }
    if profile.degenerate_right() {
        let k1 = profile.k(1.0);
        rep.check(k1 <= 1e-12 * kmax.max(1.0), "k vanishes at degenerate endpoint", || "x=1".into(), k1);
    }
    // each growth bound is a hypothesis only at a degenerate endpoint
    let (left, right) = (profile.degenerate_left(), profile.degenerate_right());
    for &x in mesh {
        let k = profile.k(x);
        let dk = profile.k_prime(x);
        rep.check(k > 0.0 && k.is_finite(), "k positive", || format!("x={x:e}"), k);
        if left {
            let l = x * dk;
            let r = profile.m1 * k;
            rep.check(le_rel(l, r), "x k' <= M1 k", || format!("x={x:e}"), l - r);
        }
        if right {
            let l = (x - 1.0) * dk;
            let r = profile.m2 * k;
            rep.check(le_rel(l, r), "(x-1) k' <= M2 k", || format!("x={x:e}"), l - r);
        }
    }
    for e in [0u8, 1] {
        if profile.class[e as usize] == EndpointClass::Strong {
            let theta = monotonicity_theta(profile, mesh, e);
            rep.check(theta > 0.0, "monotonicity rider", || format!("endpoint {e}"), theta);
            rep.notes.push(format!("endpoint {e}: rider certified with theta = {theta}"));
        }
    }
    rep
}

/// Fertility, mortality and the fertility-free age window.
#[derive(Clone)]
pub struct RateSet {
    pub beta: Fn2,
    pub mu: Fn3,
    pub a_bar: f64,
}

impl fmt::Debug for RateSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RateSet").field("a_bar", &self.a_bar).finish_non_exhaustive()
    }
}

impl RateSet {
    pub fn new(
        beta: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        mu: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        a_bar: f64,
    ) -> Self {
        RateSet { beta: Arc::new(beta), mu: Arc::new(mu), a_bar }
    }

    pub fn zero(a_bar: f64) -> Self {
        Self::new(|_, _| 0.0, |_, _, _| 0.0, a_bar)
    }

    pub fn beta(&self, a: f64, x: f64) -> f64 {
        (self.beta)(a, x)
    }

    pub fn mu(&self, t: f64, a: f64, x: f64) -> f64 {
        (self.mu)(t, a, x)
    }

    /// Sampled `sup |beta|` on cell centers.
    pub fn beta_sup(&self, a_max: f64, na: usize, nx: usize) -> f64 {
        let mut m = 0.0f64;
        for j in 0..na {
            let a = (j as f64 + 0.5) * a_max / na as f64;
            for i in 0..nx {
                let x = (i as f64 + 0.5) / nx as f64;
                m = m.max(self.beta(a, x).abs());
            }
        }
        m
    }
}

pub fn validate_rates(rates: &RateSet, a_max: f64, t_max: f64, samples: (usize, usize, usize)) -> ValidationReport {
    let (nt, na, nx) = samples;
    let mut rep = ValidationReport::default();
    rep.check(rates.a_bar > 0.0 && rates.a_bar <= a_max, "a_bar in (0, A]", || "a_bar".into(), rates.a_bar);
    rep.check(rates.a_bar <= t_max, "a_bar <= T", || "a_bar".into(), rates.a_bar - t_max);
    let xs: Vec<f64> = (0..=nx).map(|i| i as f64 / nx as f64).collect();
    let ages: Vec<f64> = (0..=na).map(|j| j as f64 * a_max / na as f64).collect();
    let mut beta_neg = (0.0f64, String::new());
    let mut beta_window = (0.0f64, String::new());
    let mut window_pts = 0;
    let mut window_ages: Vec<f64> = ages.iter().copied().filter(|&a| a <= rates.a_bar).collect();
    window_ages.push(rates.a_bar);
    for &a in &ages {
        for &x in &xs {
            let b = rates.beta(a, x);
            if b < beta_neg.0 || !b.is_finite() {
                beta_neg = (if b.is_finite() { b } else { f64::NAN }, format!("a={a}, x={x}"));
            }
        }
    }
    for &a in &window_ages {
        for &x in &xs {
            window_pts += 1;
            let b = rates.beta(a, x);
            if b.abs() > beta_window.0.abs() {
                beta_window = (b, format!("a={a}, x={x}"));
            }
        }
    }
    rep.check(beta_neg.0 >= 0.0, "beta nonnegative", || beta_neg.1.clone(), beta_neg.0);
    rep.check(beta_window.0 == 0.0, "beta zero on fertility-free window", || beta_window.1.clone(), beta_window.0);
    let mut mu_neg = (0.0f64, String::new());
    for n in 0..=nt {
        let t = n as f64 * t_max / nt as f64;
        for &a in &ages {
            for &x in &xs {
                let m = rates.mu(t, a, x);
                if m < mu_neg.0 || !m.is_finite() {
                    mu_neg = (if m.is_finite() { m } else { f64::NAN }, format!("t={t}, a={a}, x={x}"));
                }
            }
        }
    }
    rep.check(mu_neg.0 >= 0.0, "mu nonnegative", || mu_neg.1.clone(), mu_neg.0);
    rep.notes.push(format!("beta window checked at {window_pts} points"));
    rep
}

#[derive(Clone)]
pub enum KernelForm {
    Zero,
    Constant(f64),
    /// `amp * exp(-(s - center*t)^2 / (2 width^2))`.
    Gaussian { amp: f64, center: f64, width: f64 },
    /// `b0 * exp(-2 4^4 s p_norm / (T^4 (T-t)^4 a^4))`, exactly cancelling
    /// the admissibility weight at the same `s`.
    AdmissibleDecay { b0: f64, s: f64, p_norm: f64, t_final: f64 },
    Custom(Fn4),
}

impl fmt::Debug for KernelForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelForm::Zero => write!(f, "Zero"),
            KernelForm::Constant(c) => write!(f, "Constant({c})"),
            KernelForm::Gaussian { amp, center, width } => {
                write!(f, "Gaussian {{ amp: {amp}, center: {center}, width: {width} }}")
            }
            KernelForm::AdmissibleDecay { b0, s, p_norm, t_final } => {
                write!(f, "AdmissibleDecay {{ b0: {b0}, s: {s}, p_norm: {p_norm}, t_final: {t_final} }}")
            }
            KernelForm::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Memory kernel `b(t, s, a, x)`.
#[derive(Clone, Debug)]
pub struct MemoryKernel {
    pub form: KernelForm,
    pub sup_norm: f64,
    pub admissibility_constant: Option<f64>,
}

/// Log of the admissibility weight `2 4^4 s p / (T^4 (T-t)^4 a^4)`.
pub fn admissibility_log_weight(s: f64, p_norm: f64, t_final: f64, t: f64, a: f64) -> f64 {
    2.0 * 256.0 * s * p_norm / (t_final.powi(4) * (t_final - t).powi(4) * a.powi(4))
}

impl MemoryKernel {
    pub fn zero() -> Self {
        MemoryKernel { form: KernelForm::Zero, sup_norm: 0.0, admissibility_constant: None }
    }

    pub fn constant(c: f64) -> Self {
        MemoryKernel { form: KernelForm::Constant(c), sup_norm: c.abs(), admissibility_constant: None }
    }

    pub fn gaussian(amp: f64, center: f64, width: f64) -> Self {
        MemoryKernel { form: KernelForm::Gaussian { amp, center, width }, sup_norm: amp.abs(), admissibility_constant: None }
    }

    pub fn admissible_decay(b0: f64, s: f64, p_norm: f64, t_final: f64) -> Self {
        MemoryKernel {
            form: KernelForm::AdmissibleDecay { b0, s, p_norm, t_final },
            sup_norm: b0.abs(),
            admissibility_constant: Some(s),
        }
    }

    pub fn custom(f: impl Fn(f64, f64, f64, f64) -> f64 + Send + Sync + 'static, sup_norm: f64) -> Self {
        MemoryKernel { form: KernelForm::Custom(Arc::new(f)), sup_norm, admissibility_constant: None }
    }

    pub fn is_zero(&self) -> bool {
        match self.form {
            KernelForm::Zero => true,
            KernelForm::Constant(c) => c == 0.0,
            KernelForm::Gaussian { amp, .. } => amp == 0.0,
            KernelForm::AdmissibleDecay { b0, .. } => b0 == 0.0,
            KernelForm::Custom(_) => false,
        }
    }

    pub fn eval(&self, t: f64, s: f64, a: f64, x: f64) -> f64 {
        match &self.form {
            KernelForm::Zero => 0.0,
            KernelForm::Constant(c) => *c,
            KernelForm::Gaussian { amp, center, width } => {
                let d = s - center * t;
                amp * (-d * d / (2.0 * width * width)).exp()
            }
            KernelForm::AdmissibleDecay { b0, s: sk, p_norm, t_final } => {
                if t >= *t_final || a <= 0.0 {
                    return 0.0;
                }
                b0 * (-admissibility_log_weight(*sk, *p_norm, *t_final, t, a)).exp()
            }
            KernelForm::Custom(f) => f(t, s, a, x),
        }
    }

    /// `ln |b|` evaluated without underflow where the form allows.
    pub fn ln_abs(&self, t: f64, s: f64, a: f64, x: f64) -> f64 {
        match &self.form {
            KernelForm::AdmissibleDecay { b0, s: sk, p_norm, t_final } => {
                if t >= *t_final || a <= 0.0 || *b0 == 0.0 {
                    return f64::NEG_INFINITY;
                }
                b0.abs().ln() - admissibility_log_weight(*sk, *p_norm, *t_final, t, a)
            }
            _ => self.eval(t, s, a, x).abs().ln(),
        }
    }
}

/// Sample sizes for the admissibility sup: `(nt, ns, na, nx)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct AdmissibilitySample {
    pub nt: usize,
    pub ns: usize,
    pub na: usize,
    pub nx: usize,
}

impl Default for AdmissibilitySample {
    fn default() -> Self {
        AdmissibilitySample { nt: 32, ns: 8, na: 32, nx: 16 }
    }
}

/// Sampled sup of `exp(2 4^4 s p / (T^4 (T-t)^4 a^4)) |b|`, computed in log
/// space; `+inf` once the log exceeds [`ADMISSIBILITY_LOG_CAP`].
pub fn check_memory_admissibility(
    kernel: &MemoryKernel,
    s: f64,
    p_norm: f64,
    t_final: f64,
    a_max: f64,
    sample: AdmissibilitySample,
) -> f64 {
    if kernel.is_zero() {
        return 0.0;
    }
    let mut best = f64::NEG_INFINITY;
    for n in 0..sample.nt {
        let t = (n as f64 + 0.5) * t_final / sample.nt as f64;
        for j in 0..sample.na {
            let a = (j as f64 + 0.5) * a_max / sample.na as f64;
            let lw = admissibility_log_weight(s, p_norm, t_final, t, a);
            let cancel = match &kernel.form {
                KernelForm::AdmissibleDecay { b0, s: sk, p_norm: pk, t_final: tk } => {
                    Some(b0.abs().ln() + (lw - admissibility_log_weight(*sk, *pk, *tk, t, a)))
                }
                _ => None,
            };
            for m in 0..sample.ns {
                let sp = (m as f64 + 0.5) * t / sample.ns as f64;
                for i in 0..sample.nx {
                    let x = (i as f64 + 0.5) / sample.nx as f64;
                    let l = match cancel {
                        Some(c) => c,
                        None => {
                            let lb = kernel.ln_abs(t, sp, a, x);
                            if lb == f64::NEG_INFINITY {
                                continue;
                            }
                            lw + lb
                        }
                    };
                    if l > ADMISSIBILITY_LOG_CAP || l.is_nan() {
                        return f64::INFINITY;
                    }
                    best = best.max(l);
                }
            }
        }
    }
    if best == f64::NEG_INFINITY {
        0.0
    } else {
        best.exp()
    }
}

/// Observation window `(alpha, rho_w)` compactly inside `(0,1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ControlWindow {
    pub alpha: f64,
    pub rho_w: f64,
}

impl ControlWindow {
    pub fn new(alpha: f64, rho_w: f64) -> Result<Self> {
        if !(0.0 < alpha && alpha < rho_w && rho_w < 1.0) {
            return Err(Error::InvalidParameter {
                name: "window",
                reason: format!("need 0 < alpha < rho_w < 1, got ({alpha}, {rho_w})"),
            });
        }
        Ok(ControlWindow { alpha, rho_w })
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.alpha && x < self.rho_w
    }

    pub fn is_inside(&self, other: &ControlWindow) -> bool {
        other.alpha <= self.alpha && self.rho_w <= other.rho_w
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification_examples() {
        let p = power_law_profile(0.5, 0.7).unwrap();
        assert_eq!(p.class_code(), "WW");
        let p = power_law_profile(1.0, 0.0).unwrap();
        assert_eq!(p.class, [EndpointClass::Strong, EndpointClass::None]);
        assert!(matches!(power_law_profile(3.0, 0.0), Err(Error::ExponentOutOfRange { endpoint: 0, .. })));
        assert!(matches!(power_law_profile(0.0, 2.0), Err(Error::ExponentOutOfRange { endpoint: 1, .. })));
    }

    #[test]
    fn sqrt_profile_attains_bound() {
        let p = power_law_profile(0.5, 0.0).unwrap();
        let mesh: Vec<f64> = (1..=100).map(|i| i as f64 / 101.0).collect();
        assert!(validate_profile(&p, &mesh).passed());
        let q = p.with_claimed_exponents(0.3, 0.0).unwrap();
        let rep = validate_profile(&q, &mesh);
        let n = rep.violations.iter().filter(|v| v.rule == "x k' <= M1 k").count();
        assert_eq!(n, 100);
    }

    #[test]
    fn constant_profile_passes() {
        let p = constant_profile(1.0).unwrap();
        let mesh = validation_mesh(&p, 50, 1.05);
        let rep = validate_profile(&p, &mesh);
        assert!(rep.passed(), "{:?}", rep.violations);
        assert_eq!(p.class, [EndpointClass::None; 2]);
    }

    #[test]
    fn table_profile_tracks_power_law() {
        let xs: Vec<f64> = (0..=200).map(|i| i as f64 / 200.0).collect();
        let ks: Vec<f64> = xs.iter().map(|x| x * (2.0 - x)).collect();
        let p = table_profile(xs, ks, 1.0, 0.0).unwrap();
        assert!((p.k(0.3) - 0.51).abs() < 1e-5);
        assert!((p.k_prime(0.3) - 1.4).abs() < 1e-3);
    }

    #[test]
    fn monotone_cubic_preserves_monotonicity() {
        let xs = vec![0.0, 0.1, 0.2, 0.9, 1.0];
        let ys = vec![0.0, 0.0, 1.0, 1.0, 5.0];
        let c = MonotoneCubic::new(xs, ys).unwrap();
        let mut prev = c.eval(0.0);
        for i in 1..=1000 {
            let v = c.eval(i as f64 / 1000.0);
            assert!(v >= prev - 1e-15);
            prev = v;
        }
    }

    #[test]
    fn rate_examples() {
        let ok = RateSet::new(|a, _| (a - 0.5f64).max(0.0), |_, _, _| 0.0, 0.5);
        assert!(validate_rates(&ok, 1.0, 1.0, (8, 16, 8)).passed());
        let bad = RateSet::new(|_, _| 1.0, |_, _, _| 0.0, 0.5);
        assert!(validate_rates(&bad, 1.0, 1.0, (8, 16, 8)).violated("beta zero on fertility-free window"));
        let neg = RateSet::new(|_, _| 0.0, |_, _, _| -1.0, 0.5);
        assert!(validate_rates(&neg, 1.0, 1.0, (8, 16, 8)).violated("mu nonnegative"));
    }

    #[test]
    fn admissibility_examples() {
        let sample = AdmissibilitySample::default();
        assert_eq!(check_memory_admissibility(&MemoryKernel::zero(), 1.0, 2.0 / 3.0, 1.0, 1.0, sample), 0.0);
        let k = MemoryKernel::admissible_decay(1.0, 1.0, 2.0 / 3.0, 1.0);
        assert_eq!(check_memory_admissibility(&k, 1.0, 2.0 / 3.0, 1.0, 1.0, sample), 1.0);
        assert_eq!(check_memory_admissibility(&MemoryKernel::constant(1.0), 1.0, 2.0 / 3.0, 1.0, 1.0, sample), f64::INFINITY);
    }

    #[test]
    fn window_rules() {
        assert!(ControlWindow::new(0.3, 0.8).is_ok());
        assert!(ControlWindow::new(0.0, 0.8).is_err());
        assert!(ControlWindow::new(0.5, 0.4).is_err());
    }
}
