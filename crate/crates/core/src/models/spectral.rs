//! Spectral function data `σ(λ)`, `a(λ)` on an energy window.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::quad::{lin_space, log_space};

/// Open energy interval `(lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
}

impl Window {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidSpectralFunction(format!("window ({lo}, {hi}) is not a bounded open interval")));
        }
        Ok(Self { lo, hi })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, l: f64) -> bool {
        l > self.lo && l < self.hi
    }
}

/// Default half-width of the neighborhoods removed around breakpoints.
pub const DEFAULT_DELTA: f64 = 1e-6;

/// The pair `σ`, `a` with symbolic `a'`, breakpoint set `𝒩` and window `J`.
#[derive(Debug, Clone)]
pub struct SpectralFunction {
    sigma: Expr,
    a: Expr,
    a_prime: Expr,
    breakpoints: Vec<f64>,
    window: Window,
    delta: f64,
}

impl SpectralFunction {
    pub fn new(sigma: Expr, a: Expr, window: Window) -> Result<Self> {
        Self::with_delta(sigma, a, window, DEFAULT_DELTA)
    }

    pub fn parse(sigma: &str, a: &str, window: Window) -> Result<Self> {
        Self::new(Expr::parse(sigma)?, Expr::parse(a)?, window)
    }

    pub fn with_delta(sigma: Expr, a: Expr, window: Window, delta: f64) -> Result<Self> {
        Self::with_extra_breakpoints(sigma, a, window, delta, &[])
    }

    pub(crate) fn with_extra_breakpoints(
        sigma: Expr,
        a: Expr,
        window: Window,
        delta: f64,
        extra: &[f64],
    ) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::InvalidSpectralFunction(format!("delta must be positive, got {delta}")));
        }
        let a_prime = a.derivative();
        let mut breakpoints: Vec<f64> = Vec::new();
        for e in [&sigma, &a, &a_prime] {
            breakpoints.extend(e.breakpoints(window.lo, window.hi));
        }
        breakpoints.extend(extra.iter().copied().filter(|&x| window.contains(x)));
        breakpoints.sort_by(|x, y| x.partial_cmp(y).unwrap());
        breakpoints.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * x.abs().max(1.0));
        let sf = Self { sigma, a, a_prime, breakpoints, window, delta };
        sf.validate()?;
        Ok(sf)
    }

    fn validate(&self) -> Result<()> {
        let segs = self.segments();
        if segs.is_empty() {
            return Err(Error::EmptyGrid);
        }
        for &(lo, hi) in &segs {
            let pts = sample_points(lo, hi, 512);
            let mut prev_a = f64::NEG_INFINITY;
            for l in pts {
                let (s, a, ap) = (self.sigma(l), self.a(l), self.a_prime(l));
                if !(s.is_finite() && a.is_finite() && ap.is_finite()) {
                    return Err(Error::InvalidSpectralFunction(format!("not finite at lambda = {l}")));
                }
                if ap <= 0.0 {
                    return Err(Error::InvalidSpectralFunction(format!("a'({l}) = {ap} is not positive")));
                }
                if a <= prev_a {
                    return Err(Error::InvalidSpectralFunction(format!("a is not increasing near {l}")));
                }
                prev_a = a;
            }
        }
        Ok(())
    }

    pub fn sigma_expr(&self) -> &Expr {
        &self.sigma
    }

    pub fn a_expr(&self) -> &Expr {
        &self.a
    }

    pub fn a_prime_expr(&self) -> &Expr {
        &self.a_prime
    }

    pub fn sigma(&self, l: f64) -> f64 {
        self.sigma.eval(l)
    }

    pub fn a(&self, l: f64) -> f64 {
        self.a.eval(l)
    }

    pub fn a_prime(&self, l: f64) -> f64 {
        self.a_prime.eval(l)
    }

    /// `|σ(λ)| / a'(λ)^{1/2}`.
    pub fn amplitude(&self, l: f64) -> f64 {
        self.sigma(l).abs() / self.a_prime(l).abs().sqrt()
    }

    /// `σ(λ)² / a'(λ)`.
    pub fn weight(&self, l: f64) -> f64 {
        let s = self.sigma(l);
        s * s / self.a_prime(l).abs()
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Components of `J` minus closed `δ`-neighborhoods of the breakpoints.
    pub fn segments(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let mut lo = self.window.lo;
        for &p in &self.breakpoints {
            let hi = p - self.delta;
            if hi > lo {
                out.push((lo, hi));
            }
            lo = lo.max(p + self.delta);
        }
        if self.window.hi > lo {
            out.push((lo, self.window.hi));
        }
        out
    }

    /// Whether `λ` lies in `J` away from the breakpoint neighborhoods.
    pub fn admits(&self, l: f64) -> bool {
        self.window.contains(l) && self.breakpoints.iter().all(|p| (l - p).abs() > self.delta)
    }

    /// Removes the excluded neighborhoods from a λ-grid.
    pub fn filter_grid(&self, grid: &[f64]) -> Vec<f64> {
        grid.iter().copied().filter(|&l| self.admits(l)).collect()
    }

    /// Detects jumps of `σ` under refinement: returns the largest ratio between the
    /// fine-grid and coarse-grid maximal increments on each segment.
    pub fn continuity_ratio(&self, n: usize) -> f64 {
        let mut worst: f64 = 0.0;
        for (lo, hi) in self.segments() {
            let coarse = max_increment(&self.sigma, &sample_points(lo, hi, n));
            let fine = max_increment(&self.sigma, &sample_points(lo, hi, 4 * n));
            if coarse > 0.0 {
                worst = worst.max(fine / coarse);
            }
        }
        worst
    }
}

fn max_increment(e: &Expr, pts: &[f64]) -> f64 {
    pts.windows(2).map(|w| (e.eval(w[1]) - e.eval(w[0])).abs()).fold(0.0, f64::max)
}

/// Interior sample points of `(lo, hi)`: log-spaced on positive ranges, linear otherwise.
pub(crate) fn sample_points(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let pad = (hi - lo) * 1e-9;
    if lo > 0.0 {
        log_space(lo + pad, hi - pad, n)
    } else {
        lin_space(lo + pad, hi - pad, n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn power_sigma_on_positive_window() {
        let sf = SpectralFunction::parse("lambda^0.25", "lambda", Window::new(0.01, 100.0).unwrap()).unwrap();
        assert!(sf.breakpoints().is_empty());
        assert_eq!(sf.segments(), vec![(0.01, 100.0)]);
        assert_relative_eq!(sf.amplitude(16.0), 2.0);
        assert_relative_eq!(sf.weight(16.0), 4.0);
    }

    #[test]
    fn abs_breakpoint_is_excluded() {
        let sf = SpectralFunction::parse("abs(lambda - 1)", "lambda", Window::new(0.0, 2.0).unwrap()).unwrap();
        assert_eq!(sf.breakpoints().len(), 1);
        assert_relative_eq!(sf.breakpoints()[0], 1.0, epsilon = 1e-12);
        assert_eq!(sf.segments().len(), 2);
        assert!(!sf.admits(1.0));
        assert!(sf.admits(0.5));
    }

    #[test]
    fn decreasing_a_is_rejected() {
        let err = SpectralFunction::parse("1", "-lambda", Window::new(1.0, 2.0).unwrap()).unwrap_err();
        assert!(matches!(err, Error::InvalidSpectralFunction(_)));
    }

    #[test]
    fn square_on_window_through_zero_splits() {
        // a = λ|λ| is increasing with a' = 2|λ| vanishing only at the breakpoint 0.
        let sf = SpectralFunction::parse("1", "lambda*abs(lambda)", Window::new(-1.0, 1.0).unwrap()).unwrap();
        assert_eq!(sf.segments().len(), 2);
    }

    #[test]
    fn smooth_sigma_has_bounded_refinement_ratio() {
        let sf = SpectralFunction::parse("exp(-lambda)", "lambda", Window::new(0.0, 5.0).unwrap()).unwrap();
        assert!(sf.continuity_ratio(64) < 0.5);
    }
}
