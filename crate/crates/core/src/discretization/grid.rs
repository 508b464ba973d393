use serde::Serialize;

use crate::coefficients::{graded_widths, DegeneracyProfile};
use crate::error::{Error, Result};

/// Tensor grid on `(0,T) x (0,A) x (0,1)` with `dt = da`.
///
/// Space is cell-centered with graded faces. Ages are cell-centered at
/// `(j + 1/2) da`. States are stored at `t_n = n dt`; step-wise data (controls,
/// sources) lives on the step midpoints `(n + 1/2) dt`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Grid {
    pub nx: usize,
    pub na: usize,
    pub nt: usize,
    pub t_final: f64,
    pub a_max: f64,
    pub dt: f64,
    pub da: f64,
    pub x_faces: Vec<f64>,
    pub x_centers: Vec<f64>,
    /// Cell widths `h_i`.
    pub h: Vec<f64>,
    /// Center-to-center distances across each face, `Nx + 1` entries; the
    /// boundary entries run from the outer center to the wall.
    pub h_face: Vec<f64>,
    /// True when the requested `Nt` was replaced to honour `dt = da`.
    pub nt_adjusted: bool,
}

/// Builds the grid; `Nt` is forced to `T Na / A`, which must be an integer.
pub fn build_grid(
    nx: usize,
    na: usize,
    nt: usize,
    t_final: f64,
    a_max: f64,
    grading: f64,
    degenerate: (bool, bool),
) -> Result<Grid> {
    if nx < 8 {
        return Err(Error::InvalidParameter { name: "Nx", reason: format!("need Nx >= 8, got {nx}") });
    }
    if na == 0 {
        return Err(Error::InvalidParameter { name: "Na", reason: "need Na >= 1".into() });
    }
    if !(t_final > 0.0 && a_max > 0.0) {
        return Err(Error::InvalidParameter { name: "T/A", reason: "T and A must be positive".into() });
    }
    if !(grading >= 1.0 && grading.is_finite()) {
        return Err(Error::InvalidParameter { name: "grading", reason: format!("need grading >= 1, got {grading}") });
    }
    let ratio = t_final * na as f64 / a_max;
    let forced = ratio.round();
    if (ratio - forced).abs() > 1e-9 * ratio.max(1.0) || forced < 1.0 {
        return Err(Error::IncompatibleGrid { ratio, smallest_nt: ratio.ceil().max(1.0) as usize });
    }
    let forced = forced as usize;
    let widths = graded_widths(nx, grading, degenerate.0, degenerate.1);
    let mut x_faces = Vec::with_capacity(nx + 1);
    let mut acc = 0.0;
    x_faces.push(0.0);
    for w in &widths[..nx - 1] {
        acc += w;
        x_faces.push(acc);
    }
    x_faces.push(1.0);
    let h: Vec<f64> = x_faces.windows(2).map(|w| w[1] - w[0]).collect();
    let x_centers: Vec<f64> = x_faces.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let mut h_face = Vec::with_capacity(nx + 1);
    h_face.push(x_centers[0]);
    for i in 1..nx {
        h_face.push(x_centers[i] - x_centers[i - 1]);
    }
    h_face.push(1.0 - x_centers[nx - 1]);
    let da = a_max / na as f64;
    Ok(Grid {
        nx,
        na,
        nt: forced,
        t_final,
        a_max,
        dt: da,
        da,
        x_faces,
        x_centers,
        h,
        h_face,
        nt_adjusted: forced != nt,
    })
}

/// Grid graded toward the degenerate ends of `profile`.
pub fn build_grid_for(
    profile: &DegeneracyProfile,
    nx: usize,
    na: usize,
    nt: usize,
    t_final: f64,
    a_max: f64,
    grading: f64,
) -> Result<Grid> {
    build_grid(nx, na, nt, t_final, a_max, grading, (profile.degenerate_left(), profile.degenerate_right()))
}

impl Grid {
    /// Age cell center `a_j`.
    pub fn a(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.da
    }

    /// State time `t_n = n dt`.
    pub fn t(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    /// Step midpoint `(n + 1/2) dt`.
    pub fn t_mid(&self, n: usize) -> f64 {
        (n as f64 + 0.5) * self.dt
    }

    pub fn a_nodes(&self) -> Vec<f64> {
        (0..self.na).map(|j| self.a(j)).collect()
    }

    /// Index of the first age cell whose center exceeds `a`.
    pub fn first_age_above(&self, a: f64) -> usize {
        (0..self.na).find(|&j| self.a(j) > a).unwrap_or(self.na)
    }

    pub fn field_len(&self) -> usize {
        self.na * self.nx
    }
}
