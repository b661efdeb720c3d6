//! Discretized weighted L² spaces on a truncated line.
//!
//! The line is replaced by `[-x_max, x_max]` sampled at `n_points` cell
//! centers. Integrals are Riemann sums with uniform weight `spacing`, which is
//! spectrally accurate for smooth decaying integrands.

mod fourier;
mod operator;

pub use fourier::{fourier, fourier_at, inverse_fourier, FrequencyFunction};
pub use operator::{
    dual_norm_rank_k, form_maximizer, hermitian_defect, op_norm_weighted, op_norm_weighted_with, power_iteration,
    FormSup, OperatorRep, PowerIterationOptions,
};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Japanese bracket `<x> = (1 + x²)^{1/2}`.
#[inline]
pub fn bracket(x: f64) -> f64 {
    (1.0 + x * x).sqrt()
}

/// Uniform grid of cell centers on `[-x_max, x_max]`, symmetric about 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    x_max: f64,
    n_points: usize,
}

impl SpatialGrid {
    pub fn new(x_max: f64, n_points: usize) -> Result<Self> {
        if !(x_max.is_finite() && x_max > 0.0) {
            return Err(Error::InvalidGrid(format!("x_max must be positive, got {x_max}")));
        }
        if n_points < 2 || n_points % 2 != 0 {
            return Err(Error::InvalidGrid(format!("n_points must be even and >= 2, got {n_points}")));
        }
        Ok(Self { x_max, n_points })
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn len(&self) -> usize {
        self.n_points
    }

    pub fn is_empty(&self) -> bool {
        self.n_points == 0
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.x_max / self.n_points as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        -self.x_max + (i as f64 + 0.5) * self.spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.node(i)).collect()
    }

    /// Spacing of the dual frequency grid, `pi / x_max`.
    pub fn freq_spacing(&self) -> f64 {
        std::f64::consts::PI / self.x_max
    }

    pub fn freq_node(&self, k: usize) -> f64 {
        (k as f64 - self.n_points as f64 / 2.0 + 0.5) * self.freq_spacing()
    }

    pub fn freq_nodes(&self) -> Vec<f64> {
        (0..self.n_points).map(|k| self.freq_node(k)).collect()
    }

    /// Largest frequency resolved by the grid.
    pub fn nyquist(&self) -> f64 {
        std::f64::consts::PI / self.spacing()
    }
}

/// Power `s` of the weight `<x>^s`; `L²_s` is normed by `‖<x>^s f‖`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct WeightExponent(pub f64);

impl WeightExponent {
    pub fn weight(&self, x: f64) -> f64 {
        bracket(x).powf(self.0)
    }

    /// Whether the exponent is admissible for smoothing-space norms (`s > 1/2`).
    pub fn is_smoothing_admissible(&self) -> bool {
        self.0 > 0.5
    }
}

impl std::ops::Neg for WeightExponent {
    type Output = WeightExponent;

    fn neg(self) -> Self::Output {
        WeightExponent(-self.0)
    }
}

/// Complex-valued samples of a function on a [`SpatialGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: SpatialGrid,
    values: Vec<C64>,
}

impl GridFunction {
    pub fn new(grid: SpatialGrid, values: Vec<C64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch { expected: grid.len(), got: values.len() });
        }
        if let Some(index) = values.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: SpatialGrid) -> Self {
        Self { grid, values: vec![C64::new(0.0, 0.0); grid.len()] }
    }

    pub fn from_fn(grid: SpatialGrid, f: impl FnMut(f64) -> C64) -> Self {
        let values = grid.nodes().into_iter().map(f).collect();
        Self { grid, values }
    }

    pub(crate) fn from_values_unchecked(grid: SpatialGrid, values: Vec<C64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<C64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        weighted_norm(self, WeightExponent(0.0))
    }

    /// L² pairing `∫ f conj(g) dx`.
    pub fn inner(&self, other: &GridFunction) -> C64 {
        pairing(self.grid.spacing(), &self.values, &other.values)
    }

    pub fn scaled(&self, c: C64) -> GridFunction {
        Self { grid: self.grid, values: self.values.iter().map(|v| v * c).collect() }
    }

    pub fn add(&self, other: &GridFunction) -> GridFunction {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Self { grid: self.grid, values }
    }

    pub fn sub(&self, other: &GridFunction) -> GridFunction {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Self { grid: self.grid, values }
    }

    /// Multiplies pointwise by `<x>^s`.
    pub fn weighted(&self, s: WeightExponent) -> GridFunction {
        let values = self.values.iter().enumerate().map(|(i, v)| v * s.weight(self.grid.node(i))).collect();
        Self { grid: self.grid, values }
    }

    /// Fraction of the L² mass sitting in the outer tenth of the window.
    pub fn edge_mass_fraction(&self) -> f64 {
        let cut = 0.9 * self.grid.x_max();
        let mut total = 0.0;
        let mut edge = 0.0;
        for (i, v) in self.values.iter().enumerate() {
            let m = v.norm_sqr();
            total += m;
            if self.grid.node(i).abs() > cut {
                edge += m;
            }
        }
        if total == 0.0 {
            0.0
        } else {
            edge / total
        }
    }

    /// Rejects functions that are not resolved by the truncation window.
    pub fn validate_decay(&self, tolerance: f64) -> Result<()> {
        let outside = self.edge_mass_fraction();
        if outside > tolerance {
            Err(Error::Truncation { outside })
        } else {
            Ok(())
        }
    }

    pub fn max_abs_diff(&self, other: &GridFunction) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }
}

pub(crate) fn pairing(dx: f64, f: &[C64], g: &[C64]) -> C64 {
    f.iter().zip(g).map(|(a, b)| a * b.conj()).sum::<C64>() * dx
}

/// `(Σ <x_i>^{2s} |f(x_i)|² dx)^{1/2}`; `s = 0` is the plain L² norm.
pub fn weighted_norm(f: &GridFunction, s: WeightExponent) -> f64 {
    let grid = f.grid();
    let dx = grid.spacing();
    let sum: f64 = f
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let x = grid.node(i);
            (1.0 + x * x).powf(s.0) * v.norm_sqr()
        })
        .sum();
    (sum * dx).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn grid_is_symmetric_and_dual() {
        let g = SpatialGrid::new(10.0, 64).unwrap();
        for i in 0..g.len() {
            assert_relative_eq!(g.node(i), -g.node(g.len() - 1 - i), epsilon = 1e-12);
            assert_relative_eq!(g.freq_node(i), -g.freq_node(g.len() - 1 - i), epsilon = 1e-12);
        }
        let product = g.freq_spacing() * g.spacing() * g.len() as f64;
        assert_relative_eq!(product, 2.0 * std::f64::consts::PI, epsilon = 1e-12);
    }

    #[test]
    fn rejects_odd_grid() {
        assert!(SpatialGrid::new(1.0, 7).is_err());
        assert!(SpatialGrid::new(-1.0, 8).is_err());
    }

    #[test]
    fn rejects_non_finite_values() {
        let g = SpatialGrid::new(1.0, 4).unwrap();
        let v = vec![C64::new(0.0, 0.0), C64::new(f64::NAN, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)];
        assert_eq!(GridFunction::new(g, v), Err(Error::NonFinite { index: 1 }));
    }

    #[test]
    fn zero_function_has_zero_norm() {
        let g = SpatialGrid::new(5.0, 32).unwrap();
        assert_eq!(weighted_norm(&GridFunction::zeros(g), WeightExponent(3.0)), 0.0);
    }

    #[test]
    fn box_indicator_norm() {
        let g = SpatialGrid::new(4.0, 4000).unwrap();
        let f = GridFunction::from_fn(g, |x| if x.abs() <= 1.0 { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) });
        let n = weighted_norm(&f, WeightExponent(0.0));
        assert!((n - 2f64.sqrt()).abs() < 2.0 * g.spacing());
    }

    #[test]
    fn gaussian_weighted_norm_matches_refined_quadrature() {
        // (3/2)√π = ∫(1+x²)e^{-x²}dx; oracle is a ten-times finer grid.
        let coarse = SpatialGrid::new(12.0, 256).unwrap();
        let fine = SpatialGrid::new(12.0, 2560).unwrap();
        let gauss = |x: f64| C64::new((-x * x / 2.0).exp(), 0.0);
        let a = weighted_norm(&GridFunction::from_fn(coarse, gauss), WeightExponent(1.0));
        let b = weighted_norm(&GridFunction::from_fn(fine, gauss), WeightExponent(1.0));
        assert_relative_eq!(a, b, max_relative = 1e-12);
        assert_relative_eq!(b * b, 1.5 * std::f64::consts::PI.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn decay_validation_flags_wide_functions() {
        let g = SpatialGrid::new(5.0, 128).unwrap();
        let narrow = GridFunction::from_fn(g, |x| C64::new((-x * x).exp(), 0.0));
        let wide = GridFunction::from_fn(g, |x| C64::new((-x * x / 50.0).exp(), 0.0));
        assert!(narrow.validate_decay(1e-8).is_ok());
        assert!(matches!(wide.validate_decay(1e-8), Err(Error::Truncation { .. })));
    }

    fn arb_function(n: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n)
    }

    proptest! {
        #[test]
        fn weighted_norm_is_monotone_in_s(v in arb_function(32), s in -2.0f64..2.0, ds in 0.0f64..2.0) {
            let g = SpatialGrid::new(6.0, 32).unwrap();
            let f = GridFunction::new(g, v.into_iter().map(|(a, b)| C64::new(a, b)).collect()).unwrap();
            prop_assert!(weighted_norm(&f, WeightExponent(s)) <= weighted_norm(&f, WeightExponent(s + ds)) * (1.0 + 1e-12));
        }

        #[test]
        fn weighted_pairing_cauchy_schwarz(v in arb_function(32), w in arb_function(32), s in 0.0f64..2.0) {
            let g = SpatialGrid::new(6.0, 32).unwrap();
            let f = GridFunction::new(g, v.into_iter().map(|(a, b)| C64::new(a, b)).collect()).unwrap();
            let h = GridFunction::new(g, w.into_iter().map(|(a, b)| C64::new(a, b)).collect()).unwrap();
            let lhs = f.inner(&h).norm();
            let rhs = weighted_norm(&f, WeightExponent(-s)) * weighted_norm(&h, WeightExponent(s));
            prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-15);
        }
    }
}
