use serde::Serialize;

use super::grid::Grid;
use crate::coefficients::DegeneracyProfile;

/// Finite-volume `(k u_x)_x` with homogeneous Dirichlet data and `k` on faces.
///
/// `(A0 u)_i = sub_i u_{i-1} + diag_i u_i + sup_i u_{i+1}`. The outer faces
/// see a zero ghost value half a cell away, so `diag` carries the wall flux.
/// With `H = diag(h)`, `H A0` is symmetric and negative semidefinite.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiscreteOperator {
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    pub sup: Vec<f64>,
    /// `k(x_{i-1/2}) / h_{i-1/2}` for each of the `Nx + 1` faces.
    pub face_conductance: Vec<f64>,
    pub h: Vec<f64>,
}

pub fn assemble_operator(grid: &Grid, profile: &DegeneracyProfile) -> DiscreteOperator {
    let nx = grid.nx;
    let face_conductance: Vec<f64> =
        (0..=nx).map(|f| profile.k(grid.x_faces[f]) / grid.h_face[f]).collect();
    let mut sub = vec![0.0; nx];
    let mut diag = vec![0.0; nx];
    let mut sup = vec![0.0; nx];
    for i in 0..nx {
        let left = face_conductance[i] / grid.h[i];
        let right = face_conductance[i + 1] / grid.h[i];
        if i > 0 {
            sub[i] = left;
        }
        if i + 1 < nx {
            sup[i] = right;
        }
        diag[i] = -(left + right);
    }
    DiscreteOperator { sub, diag, sup, face_conductance, h: grid.h.clone() }
}

impl DiscreteOperator {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        let n = self.len();
        for i in 0..n {
            let mut v = self.diag[i] * u[i];
            if i > 0 {
                v += self.sub[i] * u[i - 1];
            }
            if i + 1 < n {
                v += self.sup[i] * u[i + 1];
            }
            out[i] = v;
        }
    }

    /// `sum_faces k_f (jump u)^2 / h_f = -<A0 u, u>_H`, the discrete `int k u_x^2`.
    pub fn dissipation(&self, u: &[f64]) -> f64 {
        let n = self.len();
        let mut s = 0.0;
        for f in 0..=n {
            let left = if f == 0 { 0.0 } else { u[f - 1] };
            let right = if f == n { 0.0 } else { u[f] };
            let d = right - left;
            s += self.face_conductance[f] * d * d;
        }
        s
    }

    /// Face gradients `(u_i - u_{i-1}) / h_{i-1/2}` including the walls.
    pub fn face_gradients(&self, u: &[f64], h_face: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..=n)
            .map(|f| {
                let left = if f == 0 { 0.0 } else { u[f - 1] };
                let right = if f == n { 0.0 } else { u[f] };
                (right - left) / h_face[f]
            })
            .collect()
    }

    /// Solves `(I + dt mu - dt A0) y = rhs` by the Thomas algorithm.
    pub fn solve_shifted(&self, dt: f64, mu: &[f64], rhs: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
        let n = self.len();
        scratch.clear();
        scratch.resize(n, 0.0);
        let c = scratch;
        let b0 = 1.0 + dt * mu[0] - dt * self.diag[0];
        c[0] = -dt * self.sup[0] / b0;
        out[0] = rhs[0] / b0;
        for i in 1..n {
            let a = -dt * self.sub[i];
            let b = 1.0 + dt * mu[i] - dt * self.diag[i] - a * c[i - 1];
            c[i] = if i + 1 < n { -dt * self.sup[i] / b } else { 0.0 };
            out[i] = (rhs[i] - a * out[i - 1]) / b;
        }
        for i in (0..n - 1).rev() {
            out[i] -= c[i] * out[i + 1];
        }
    }

    /// LU factors of `I + dt mu - dt A0`, for repeated solves.
    pub fn factor_shifted(&self, dt: f64, mu: &[f64]) -> ShiftedFactor {
        let n = self.len();
        let mut inv_b = vec![0.0; n];
        let mut c = vec![0.0; n];
        let mut a = vec![0.0; n];
        let mut prev_c = 0.0;
        for i in 0..n {
            a[i] = if i > 0 { -dt * self.sub[i] } else { 0.0 };
            let b = 1.0 + dt * mu[i] - dt * self.diag[i] - a[i] * prev_c;
            inv_b[i] = 1.0 / b;
            c[i] = if i + 1 < n { -dt * self.sup[i] / b } else { 0.0 };
            prev_c = c[i];
        }
        ShiftedFactor { a, inv_b, c }
    }

    /// `S(dt_total) u` approximated by `substeps` implicit Euler steps with
    /// reaction `mu`.
    pub fn semigroup_apply(&self, mu: &[f64], u: &[f64], dt_total: f64, substeps: usize) -> Vec<f64> {
        let mut cur = u.to_vec();
        if dt_total <= 0.0 {
            return cur;
        }
        let steps = substeps.max(1);
        let tau = dt_total / steps as f64;
        let mut next = vec![0.0; u.len()];
        let mut scratch = Vec::new();
        for _ in 0..steps {
            self.solve_shifted(tau, mu, &cur, &mut next, &mut scratch);
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// `<u, v>_H`.
    pub fn dot(&self, u: &[f64], v: &[f64]) -> f64 {
        u.iter().zip(v).zip(&self.h).map(|((a, b), h)| a * b * h).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShiftedFactor {
    a: Vec<f64>,
    inv_b: Vec<f64>,
    c: Vec<f64>,
}

impl ShiftedFactor {
    pub fn solve(&self, rhs: &[f64], out: &mut [f64]) {
        let n = self.inv_b.len();
        out[0] = rhs[0] * self.inv_b[0];
        for i in 1..n {
            out[i] = (rhs[i] - self.a[i] * out[i - 1]) * self.inv_b[i];
        }
        for i in (0..n - 1).rev() {
            out[i] -= self.c[i] * out[i + 1];
        }
    }
}

/// Free-standing form used by the formula evaluator.
pub fn semigroup_apply(op: &DiscreteOperator, mu_slice: &[f64], u: &[f64], dt_total: f64, substeps: usize) -> Vec<f64> {
    op.semigroup_apply(mu_slice, u, dt_total, substeps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{constant_profile, power_law_profile};
    use crate::discretization::grid::build_grid;
    use std::f64::consts::PI;

    #[test]
    fn laplacian_second_order() {
        let k = constant_profile(1.0).unwrap();
        let mut errs = Vec::new();
        for nx in [32, 64, 128] {
            let g = build_grid(nx, 4, 4, 1.0, 1.0, 1.0, (false, false)).unwrap();
            let op = assemble_operator(&g, &k);
            let u: Vec<f64> = g.x_centers.iter().map(|x| (PI * x).sin()).collect();
            let mut out = vec![0.0; nx];
            op.apply(&u, &mut out);
            let e = out.iter().zip(&u).map(|(a, b)| (a + PI * PI * b).abs()).fold(0.0, f64::max);
            errs.push(e);
        }
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log2() > 1.9, "{errs:?}");
        }
    }

    #[test]
    fn symmetric_and_nonpositive() {
        let k = power_law_profile(0.7, 1.2).unwrap();
        let g = build_grid(40, 4, 4, 1.0, 1.0, 1.05, (true, true)).unwrap();
        let op = assemble_operator(&g, &k);
        let u: Vec<f64> = (0..40).map(|i| ((i * 7 % 13) as f64 - 6.0) / 5.0).collect();
        let v: Vec<f64> = (0..40).map(|i| ((i * 5 % 11) as f64 - 4.0) / 3.0).collect();
        let (mut au, mut av) = (vec![0.0; 40], vec![0.0; 40]);
        op.apply(&u, &mut au);
        op.apply(&v, &mut av);
        let l = op.dot(&au, &v);
        let r = op.dot(&u, &av);
        assert!((l - r).abs() <= 1e-13 * l.abs().max(1.0));
        assert!(op.dot(&au, &u) <= 0.0);
        assert!((op.dissipation(&u) + op.dot(&au, &u)).abs() < 1e-10 * op.dissipation(&u));
    }

    #[test]
    fn degenerate_wall_has_no_flux() {
        let k = power_law_profile(1.0, 0.0).unwrap();
        let g = build_grid(16, 4, 4, 1.0, 1.0, 1.0, (true, false)).unwrap();
        let op = assemble_operator(&g, &k);
        assert_eq!(op.face_conductance[0], 0.0);
        assert!(op.face_conductance[16] > 0.0);
    }

    #[test]
    fn thomas_inverts_shifted_operator() {
        let k = power_law_profile(0.5, 0.0).unwrap();
        let g = build_grid(24, 4, 4, 1.0, 1.0, 1.05, (true, false)).unwrap();
        let op = assemble_operator(&g, &k);
        let mu: Vec<f64> = (0..24).map(|i| 0.1 * i as f64).collect();
        let y: Vec<f64> = (0..24).map(|i| (i as f64 * 0.37).cos()).collect();
        let mut ay = vec![0.0; 24];
        op.apply(&y, &mut ay);
        let rhs: Vec<f64> = (0..24).map(|i| y[i] + 0.05 * mu[i] * y[i] - 0.05 * ay[i]).collect();
        let mut out = vec![0.0; 24];
        op.solve_shifted(0.05, &mu, &rhs, &mut out, &mut Vec::new());
        let mut cached = vec![0.0; rhs.len()];
        op.factor_shifted(0.05, &mu).solve(&rhs, &mut cached);
        for (u, v) in out.iter().zip(&cached) {
            assert!((u - v).abs() <= 1e-13 * u.abs().max(1.0));
        }
        for i in 0..24 {
            assert!((out[i] - y[i]).abs() < 1e-12);
        }
    }
}
