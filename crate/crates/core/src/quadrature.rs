//! Adaptive Gauss-Kronrod integration and log-space accumulation.
//!
//! Weighted integrals in this crate routinely involve factors such as
//! `exp(2 s phi)` with exponents in the thousands, so every weighted sum is
//! carried as a natural logarithm ([`LogReal`]) and accumulated by
//! [`LogSum`], which rescales to the running maximum and keeps a Neumaier
//! compensation term.

use std::fmt;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_PANELS: usize = 4000;
const TAIL_FRACTION: f64 = 1e-100;

/// One 15-point Kronrod panel; returns (kronrod, |kronrod - gauss|).
fn gk15<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> (f64, f64) {
    let c = 0.5 * (lo + hi);
    let h = 0.5 * (hi - lo);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let dx = h * XGK[i];
        let s = f(c - dx) + f(c + dx);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

struct Panel {
    lo: f64,
    hi: f64,
    val: f64,
    err: f64,
}

/// Globally adaptive Gauss-Kronrod integral of `f` over `[lo, hi]`: the
/// panel with the largest error estimate is bisected until the summed
/// estimate falls below `rel_tol` times the integral.
pub fn integrate<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, rel_tol: f64) -> Result<f64> {
    if hi == lo {
        return Ok(0.0);
    }
    if hi < lo {
        return integrate(f, hi, lo, rel_tol).map(|v| -v);
    }
    let (val, err) = gk15(&f, lo, hi);
    let mut panels = vec![Panel { lo, hi, val, err }];
    loop {
        let total: f64 = panels.iter().map(|p| p.val).sum();
        let total_err: f64 = panels.iter().map(|p| p.err).sum();
        if !total.is_finite() || !total_err.is_finite() {
            return Err(Error::QuadratureDivergence { lo, hi });
        }
        if total_err <= (rel_tol * total.abs()).max(1e-300) {
            return Ok(total);
        }
        if panels.len() >= MAX_PANELS {
            return Err(Error::QuadratureDivergence { lo, hi });
        }
        let (worst, _) = panels
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, p)| if p.err > acc.1 { (i, p.err) } else { acc });
        let p = panels.swap_remove(worst);
        let mid = 0.5 * (p.lo + p.hi);
        if mid <= p.lo || mid >= p.hi {
            // cannot split further: keep the value, drop the estimate
            panels.push(Panel { err: 0.0, ..p });
            continue;
        }
        let (lv, le) = gk15(&f, p.lo, mid);
        let (rv, re) = gk15(&f, mid, p.hi);
        panels.push(Panel { lo: p.lo, hi: mid, val: lv, err: le });
        panels.push(Panel { lo: mid, hi: p.hi, val: rv, err: re });
    }
}

/// Integral of a function with integrable power-law behaviour
/// `(x - lo)^q_lo` and `(hi - x)^q_hi` at the ends.
///
/// Each half is mapped by `x = end + (mid - end) u^m` with `m = 1/(1+q)`,
/// which turns a pure power into a constant. Exponents `q >= 0` need no
/// mapping; exponents `q <= -1` diverge and are rejected. For `q` near `-1`
/// the map `u^m` underflows, so the innermost `TAIL_FRACTION` of the half is
/// taken in closed form from the pure power, `f(d) d / (1 + q)`.
///
/// `f` receives `(x, hi - x)`, the second argument computed without
/// cancellation so that integrands singular at `hi` stay accurate there.
pub fn integrate_endpoint_singular<F: Fn(f64, f64) -> f64>(
    f: F,
    lo: f64,
    hi: f64,
    q_lo: f64,
    q_hi: f64,
    rel_tol: f64,
) -> Result<f64> {
    if hi <= lo {
        return Ok(0.0);
    }
    if q_lo <= -1.0 || q_hi <= -1.0 {
        return Err(Error::QuadratureDivergence { lo, hi });
    }
    let mid = 0.5 * (lo + hi);
    let len = mid - lo;
    let left = if q_lo >= 0.0 {
        integrate(|x| f(x, hi - x), lo, mid, rel_tol)?
    } else {
        let m = 1.0 / (1.0 + q_lo);
        let d0 = (len * TAIL_FRACTION).max(lo.abs() * 1e-12);
        let x0 = lo + d0;
        let tail = f(x0, hi - x0) * d0 / (1.0 + q_lo);
        let body = integrate(
            |u: f64| {
                let x = lo + len * u.powf(m);
                f(x, hi - x) * len * m * u.powf(m - 1.0)
            },
            (d0 / len).powf(1.0 / m),
            1.0,
            rel_tol,
        )?;
        body + tail
    };
    let len = hi - mid;
    let right = if q_hi >= 0.0 {
        integrate(|x| f(x, hi - x), mid, hi, rel_tol)?
    } else {
        let m = 1.0 / (1.0 + q_hi);
        let d0 = len * TAIL_FRACTION;
        let tail = f(hi - d0, d0) * d0 / (1.0 + q_hi);
        let body = integrate(
            |u: f64| {
                let d = len * u.powf(m);
                f(hi - d, d) * len * m * u.powf(m - 1.0)
            },
            TAIL_FRACTION.powf(1.0 / m),
            1.0,
            rel_tol,
        )?;
        body + tail
    };
    Ok(left + right)
}

/// A non-negative real stored as its natural logarithm (`-inf` is zero).
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct LogReal {
    ln: f64,
}

impl LogReal {
    pub const ZERO: LogReal = LogReal { ln: f64::NEG_INFINITY };
    pub const ONE: LogReal = LogReal { ln: 0.0 };

    pub fn from_ln(ln: f64) -> Self {
        LogReal { ln }
    }

    /// Panics in debug builds on negative input.
    pub fn from_value(v: f64) -> Self {
        debug_assert!(v >= 0.0 || v.is_nan(), "LogReal from negative {v}");
        LogReal { ln: v.ln() }
    }

    pub fn ln(self) -> f64 {
        self.ln
    }

    pub fn log10(self) -> f64 {
        self.ln / std::f64::consts::LN_10
    }

    /// Value as `f64`; underflows to `0.0` and overflows to `inf`.
    pub fn value(self) -> f64 {
        self.ln.exp()
    }

    pub fn is_zero(self) -> bool {
        self.ln == f64::NEG_INFINITY
    }

    pub fn is_finite(self) -> bool {
        !self.ln.is_nan() && self.ln < f64::INFINITY
    }

    pub fn mul(self, other: LogReal) -> LogReal {
        if self.is_zero() || other.is_zero() {
            return LogReal::ZERO;
        }
        LogReal { ln: self.ln + other.ln }
    }

    pub fn scale(self, factor: f64) -> LogReal {
        self.mul(LogReal::from_value(factor))
    }

    pub fn add(self, other: LogReal) -> LogReal {
        let (hi, lo) = if self.ln >= other.ln { (self, other) } else { (other, self) };
        if lo.is_zero() {
            return hi;
        }
        LogReal { ln: hi.ln + (lo.ln - hi.ln).exp().ln_1p() }
    }

    /// `self / other` as a log value; `0/0` is reported as zero.
    pub fn div(self, other: LogReal) -> LogReal {
        if self.is_zero() {
            return LogReal::ZERO;
        }
        LogReal { ln: self.ln - other.ln }
    }

    pub fn sum<I: IntoIterator<Item = LogReal>>(items: I) -> LogReal {
        let mut acc = LogSum::new();
        for it in items {
            acc.push(it);
        }
        acc.total()
    }
}

impl fmt::Display for LogReal {
    /// Scientific notation that survives values outside the `f64` range.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        if !self.ln.is_finite() {
            return write!(f, "{}", if self.ln.is_nan() { "NaN" } else { "inf" });
        }
        let l10 = self.log10();
        let mut exp = l10.floor();
        let mut mant = 10f64.powf(l10 - exp);
        if mant >= 9.999_999_5 {
            mant /= 10.0;
            exp += 1.0;
        }
        write!(f, "{:.6}e{}", mant, exp as i64)
    }
}

impl Serialize for LogReal {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

/// Streaming sum of non-negative terms given in log space.
#[derive(Clone, Debug)]
pub struct LogSum {
    max_ln: f64,
    sum: f64,
    comp: f64,
}

impl Default for LogSum {
    fn default() -> Self {
        Self::new()
    }
}

impl LogSum {
    pub fn new() -> Self {
        LogSum { max_ln: f64::NEG_INFINITY, sum: 0.0, comp: 0.0 }
    }

    pub fn push(&mut self, term: LogReal) {
        self.push_ln(term.ln);
    }

    /// Adds `exp(ln)`.
    pub fn push_ln(&mut self, ln: f64) {
        if ln == f64::NEG_INFINITY {
            return;
        }
        if ln > self.max_ln {
            let r = (self.max_ln - ln).exp();
            self.sum *= r;
            self.comp *= r;
            self.max_ln = ln;
        }
        let x = (ln - self.max_ln).exp();
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    /// Adds `value * exp(weight_ln)` for a non-negative `value`.
    pub fn push_weighted(&mut self, value: f64, weight_ln: f64) {
        if value > 0.0 {
            self.push_ln(value.ln() + weight_ln);
        }
    }

    pub fn total(&self) -> LogReal {
        if self.max_ln == f64::NEG_INFINITY {
            return LogReal::ZERO;
        }
        LogReal::from_ln(self.max_ln + (self.sum + self.comp).ln())
    }
}
