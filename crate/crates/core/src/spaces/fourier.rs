//! Unitary Fourier transform `f̂(ξ) = (2π)^{-1/2} ∫ f(x) e^{-iξx} dx` on the grid.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rustfft::FftPlanner;

use super::{GridFunction, SpatialGrid};

/// Samples on the frequency grid dual to a [`SpatialGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyFunction {
    grid: SpatialGrid,
    values: Vec<C64>,
}

impl FrequencyFunction {
    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [C64] {
        &mut self.values
    }

    pub fn norm(&self) -> f64 {
        let sum: f64 = self.values.iter().map(|v| v.norm_sqr()).sum();
        (sum * self.grid.freq_spacing()).sqrt()
    }
}

/// Discrete realization of the unitary transform.
pub fn fourier(f: &GridFunction) -> FrequencyFunction {
    let grid = *f.grid();
    let n = grid.len();
    let dx = grid.spacing();
    let x0 = grid.node(0);
    let xi0 = grid.freq_node(0);

    let mut buf: Vec<C64> =
        f.values().iter().enumerate().map(|(j, v)| v * C64::from_polar(1.0, -xi0 * j as f64 * dx)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);

    let scale = dx / (2.0 * PI).sqrt();
    for (k, v) in buf.iter_mut().enumerate() {
        *v *= C64::from_polar(scale, -grid.freq_node(k) * x0);
    }
    FrequencyFunction { grid, values: buf }
}

pub fn inverse_fourier(fh: &FrequencyFunction) -> GridFunction {
    let grid = *fh.grid();
    let n = grid.len();
    let dxi = grid.freq_spacing();
    let x0 = grid.node(0);
    let xi0 = grid.freq_node(0);

    let mut buf: Vec<C64> =
        fh.values().iter().enumerate().map(|(k, v)| v * C64::from_polar(1.0, k as f64 * dxi * x0)).collect();
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);

    let scale = dxi / (2.0 * PI).sqrt();
    for (j, v) in buf.iter_mut().enumerate() {
        *v *= C64::from_polar(scale, xi0 * grid.node(j));
    }
    GridFunction::from_values_unchecked(grid, buf)
}

/// Transform evaluated at an arbitrary frequency by direct quadrature.
pub fn fourier_at(f: &GridFunction, xi: f64) -> C64 {
    let grid = f.grid();
    let dx = grid.spacing();
    let x0 = grid.node(0);
    // e^{-iξ x_j} by recurrence, resynchronized every block to bound drift.
    let step = C64::from_polar(1.0, -xi * dx);
    let mut acc = C64::new(0.0, 0.0);
    let mut phase = C64::from_polar(1.0, -xi * x0);
    for (j, v) in f.values().iter().enumerate() {
        if j % 256 == 0 {
            phase = C64::from_polar(1.0, -xi * grid.node(j));
        }
        acc += v * phase;
        phase *= step;
    }
    acc * dx / (2.0 * PI).sqrt()
}

impl FrequencyFunction {
    pub(crate) fn from_values(grid: SpatialGrid, values: Vec<C64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }
}
