use serde::Serialize;

use super::grid::Grid;
use crate::error::{Error, Result};

/// A function of `(a, x)` at one time: `Na x Nx` values, age-major.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Field {
    pub na: usize,
    pub nx: usize,
    pub values: Vec<f64>,
}

impl Field {
    pub fn zeros(na: usize, nx: usize) -> Self {
        Field { na, nx, values: vec![0.0; na * nx] }
    }

    pub fn zeros_on(grid: &Grid) -> Self {
        Self::zeros(grid.na, grid.nx)
    }

    /// Samples `f(a_j, x_i)` at cell centers.
    pub fn from_fn(grid: &Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut out = Self::zeros_on(grid);
        for j in 0..grid.na {
            let a = grid.a(j);
            for (i, &x) in grid.x_centers.iter().enumerate() {
                out.values[j * grid.nx + i] = f(a, x);
            }
        }
        out
    }

    pub fn from_values(na: usize, nx: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != na * nx {
            return Err(Error::ShapeMismatch { expected: format!("{na}x{nx}"), found: values.len().to_string() });
        }
        Ok(Field { na, nx, values })
    }

    #[inline]
    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.values[j * self.nx + i]
    }

    #[inline]
    pub fn set(&mut self, j: usize, i: usize, v: f64) {
        self.values[j * self.nx + i] = v;
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.nx..(j + 1) * self.nx]
    }

    pub fn row_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.values[j * self.nx..(j + 1) * self.nx]
    }

    /// `<u, v> = sum_j da sum_i h_i u v`.
    pub fn dot(&self, other: &Field, grid: &Grid) -> f64 {
        let mut s = 0.0;
        for j in 0..self.na {
            let (a, b) = (self.row(j), other.row(j));
            for i in 0..self.nx {
                s += grid.h[i] * a[i] * b[i];
            }
        }
        s * grid.da
    }

    pub fn norm_sq(&self, grid: &Grid) -> f64 {
        self.dot(self, grid)
    }

    /// Squared norm restricted to age cells `j >= j0`.
    pub fn norm_sq_ages_from(&self, grid: &Grid, j0: usize) -> f64 {
        let mut s = 0.0;
        for j in j0..self.na {
            for (i, v) in self.row(j).iter().enumerate() {
                s += grid.h[i] * v * v;
            }
        }
        s * grid.da
    }

    pub fn axpy(&mut self, alpha: f64, x: &Field) {
        for (a, b) in self.values.iter_mut().zip(&x.values) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Field) -> Result<()> {
        if self.na != other.na || self.nx != other.nx {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", self.na, self.nx),
                found: format!("{}x{}", other.na, other.nx),
            });
        }
        Ok(())
    }
}

/// Data living on time steps: slice `n` acts during step `n -> n+1`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepField {
    pub steps: Vec<Field>,
}

impl StepField {
    pub fn zeros(grid: &Grid) -> Self {
        StepField { steps: vec![Field::zeros_on(grid); grid.nt] }
    }

    /// `f(n, a_j, x_i)` for each step.
    pub fn from_fn(grid: &Grid, f: impl Fn(usize, f64, f64) -> f64) -> Self {
        StepField { steps: (0..grid.nt).map(|n| Field::from_fn(grid, |a, x| f(n, a, x))).collect() }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `<u, v>_Q = dt sum_n <u_n, v_n>`.
    pub fn dot(&self, other: &StepField, grid: &Grid) -> f64 {
        self.steps.iter().zip(&other.steps).map(|(a, b)| a.dot(b, grid)).sum::<f64>() * grid.dt
    }

    pub fn norm_sq(&self, grid: &Grid) -> f64 {
        self.dot(self, grid)
    }

    pub fn axpy(&mut self, alpha: f64, x: &StepField) {
        for (a, b) in self.steps.iter_mut().zip(&x.steps) {
            a.axpy(alpha, b);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.steps.iter_mut().for_each(|f| f.scale(alpha));
    }

    pub fn max_abs(&self) -> f64 {
        self.steps.iter().fold(0.0f64, |m, f| m.max(f.max_abs()))
    }

    pub fn check_shape(&self, grid: &Grid) -> Result<()> {
        if self.steps.len() != grid.nt || self.steps.iter().any(|f| f.na != grid.na || f.nx != grid.nx) {
            return Err(Error::ShapeMismatch {
                expected: format!("{} steps of {}x{}", grid.nt, grid.na, grid.nx),
                found: format!("{} steps", self.steps.len()),
            });
        }
        Ok(())
    }
}
