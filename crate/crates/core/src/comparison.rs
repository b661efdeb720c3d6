//! Comparison principles: transfer of smoothing estimates from `(σ, a, H)` to
//! `(σ̃, ã, H̃)` through pointwise domination of density-weighted symbols.
//!
//! Conditions are checked on λ-grids. Conclusions compare the spectral sides of
//! the identities, which equal the time-side norms; a [`Resolution`] adds the
//! time sides as well.

use serde::{Deserialize, Serialize};

use crate::best_constant::rhs_sup;
use crate::density::{density_norms, PairingOracle};
use crate::error::{Error, Result};
use crate::evolution::{
    batch_spectral_side, dual_spectral_side, identity_dual, identity_scalar, scalar_spectral_side, spectral_rule,
    DualOracle, Resolution,
};
use crate::expr::Expr;
use crate::models::{ModelKind, OperatorModel, SpectralFunction};
use crate::spaces::{GridFunction, WeightExponent};

/// Relative slack in pointwise conditions.
pub const CONDITION_SLACK: f64 = 1e-10;
/// Relative slack in the transferred a priori bound.
pub const TRANSFER_SLACK: f64 = 0.02;
/// Default relative tolerance of the spectral-side quadratures.
const SIDE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ComparisonMode {
    Local,
    Global,
    Uniform,
}

/// Two triples over the same window.
#[derive(Debug, Clone)]
pub struct ComparisonConfig {
    pub sf: SpectralFunction,
    pub sf_tilde: SpectralFunction,
    pub mode: ComparisonMode,
}

impl ComparisonConfig {
    pub fn new(sf: SpectralFunction, sf_tilde: SpectralFunction, mode: ComparisonMode) -> Result<Self> {
        if sf.window() != sf_tilde.window() {
            return Err(Error::Config("comparison needs identical windows".into()));
        }
        Ok(Self { sf, sf_tilde, mode })
    }

    /// Grid points admissible for both triples.
    fn common_grid(&self, lambdas: &[f64]) -> Result<Vec<f64>> {
        let pts: Vec<f64> = self.sf.filter_grid(lambdas).into_iter().filter(|&l| self.sf_tilde.admits(l)).collect();
        if pts.is_empty() {
            return Err(Error::EmptyGrid);
        }
        Ok(pts)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub condition_holds: bool,
    /// `min (left - right) / max(left, right)` over the grid; negative where the condition fails.
    pub worst_margin: f64,
    pub worst_lambda: f64,
    /// Spectral-side norm of the `H` triple.
    pub lhs_norm: f64,
    /// Spectral-side norm of the `H̃` triple.
    pub rhs_norm: f64,
    pub conclusion_holds: bool,
    /// Time-side norms `(H, H̃)` when a resolution was supplied.
    pub time_norms: Option<(f64, f64)>,
}

fn margins(left: &[f64], right: &[f64], grid: &[f64]) -> (bool, f64, f64) {
    let mut worst = (f64::INFINITY, grid[0]);
    let mut holds = true;
    for ((&l, &r), &x) in left.iter().zip(right).zip(grid) {
        let scale = l.abs().max(r.abs());
        if r > l + CONDITION_SLACK * scale {
            holds = false;
        }
        let m = if scale > 0.0 { (l - r) / scale } else { 0.0 };
        if m < worst.0 {
            worst = (m, x);
        }
    }
    (holds, worst.0, worst.1)
}

fn conclusion(lhs: f64, rhs: f64) -> bool {
    lhs >= rhs - CONDITION_SLACK * lhs.max(rhs)
}

/// Space-local comparison: `amp |<Aφ, ψ>| ≥ ãmp |<Ãφ, ψ>|` on the grid, and
/// `‖F‖_{L²(R_t)} ≥ ‖F̃‖_{L²(R_t)}`.
#[allow(clippy::too_many_arguments)]
pub fn check_local(
    model: &OperatorModel,
    model_tilde: &OperatorModel,
    cfg: &ComparisonConfig,
    phi: &GridFunction,
    psi: &GridFunction,
    lambdas: &[f64],
    time: Option<&Resolution>,
) -> Result<ComparisonReport> {
    let grid = cfg.common_grid(lambdas)?;
    let (o, ot) = (PairingOracle::new(model, phi, psi)?, PairingOracle::new(model_tilde, phi, psi)?);
    let left: Vec<f64> = grid.iter().map(|&l| Ok(cfg.sf.amplitude(l) * o.at(l)?.norm())).collect::<Result<_>>()?;
    let right: Vec<f64> =
        grid.iter().map(|&l| Ok(cfg.sf_tilde.amplitude(l) * ot.at(l)?.norm())).collect::<Result<_>>()?;
    let (condition_holds, worst_margin, worst_lambda) = margins(&left, &right, &grid);
    let lhs_norm = scalar_spectral_side(model, &cfg.sf, phi, psi, SIDE_TOL)?;
    let rhs_norm = scalar_spectral_side(model_tilde, &cfg.sf_tilde, phi, psi, SIDE_TOL)?;
    let time_norms = match time {
        Some(res) => Some((
            identity_scalar(model, &cfg.sf, phi, psi, res)?.lhs,
            identity_scalar(model_tilde, &cfg.sf_tilde, phi, psi, res)?.lhs,
        )),
        None => None,
    };
    Ok(ComparisonReport {
        condition_holds,
        worst_margin,
        worst_lambda,
        lhs_norm,
        rhs_norm,
        conclusion_holds: conclusion(lhs_norm, rhs_norm),
        time_norms,
    })
}

/// Space-global comparison: `amp ‖Aφ‖_{X*} ≥ ãmp ‖Ãφ‖_{X*}` on the grid, and the
/// corresponding `L²(R_t, X*)` norms.
#[allow(clippy::too_many_arguments)]
pub fn check_global(
    model: &OperatorModel,
    model_tilde: &OperatorModel,
    cfg: &ComparisonConfig,
    phi: &GridFunction,
    s: WeightExponent,
    lambdas: &[f64],
    time: Option<&Resolution>,
) -> Result<ComparisonReport> {
    let grid = cfg.common_grid(lambdas)?;
    let (o, ot) = (DualOracle::new(model, phi, s)?, DualOracle::new(model_tilde, phi, s)?);
    let left: Vec<f64> =
        grid.iter().map(|&l| Ok(cfg.sf.amplitude(l) * o.at(l)?.max(0.0).sqrt())).collect::<Result<_>>()?;
    let right: Vec<f64> =
        grid.iter().map(|&l| Ok(cfg.sf_tilde.amplitude(l) * ot.at(l)?.max(0.0).sqrt())).collect::<Result<_>>()?;
    let (condition_holds, worst_margin, worst_lambda) = margins(&left, &right, &grid);
    let lhs_norm = dual_spectral_side(model, &cfg.sf, phi, s, SIDE_TOL)?;
    let rhs_norm = dual_spectral_side(model_tilde, &cfg.sf_tilde, phi, s, SIDE_TOL)?;
    let time_norms = match time {
        Some(res) => Some((
            identity_dual(model, &cfg.sf, phi, s, res)?.lhs,
            identity_dual(model_tilde, &cfg.sf_tilde, phi, s, res)?.lhs,
        )),
        None => None,
    };
    Ok(ComparisonReport {
        condition_holds,
        worst_margin,
        worst_lambda,
        lhs_norm,
        rhs_norm,
        conclusion_holds: conclusion(lhs_norm, rhs_norm),
        time_norms,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UniformReport {
    /// The norm-level condition `(σ²/a') N_H ≥ (σ̃²/ã') N_H̃` held on the refined grid.
    /// It implies the "for every ψ there is a ψ̃" form by taking ψ̃ as the
    /// maximizer for `Ã`.
    pub condition_holds: bool,
    pub worst_margin: f64,
    pub worst_lambda: f64,
    /// `C0 = √(2π) sup (|σ|/a'^{1/2}) N_H^{1/2}` of the `H` triple.
    pub c0: f64,
    /// `lhs(H̃ triple, φ) / ‖φ‖` per batch member.
    pub ratios: Vec<f64>,
    pub worst_ratio: f64,
    pub violations: usize,
    /// No batch member exceeded `C0 ‖φ‖ (1 + 2%)`.
    pub transferred: bool,
}

/// Refinement rounds around the smallest condition margins.
const MARGIN_ROUNDS: usize = 3;

/// Uniform comparison with the sufficient norm-level condition and an empirical
/// transfer check of `‖h̃_J φ‖ ≤ C0 ‖φ‖` on `batch`.
pub fn check_uniform(
    model: &OperatorModel,
    model_tilde: &OperatorModel,
    cfg: &ComparisonConfig,
    s: WeightExponent,
    lambdas: &[f64],
    batch: &[GridFunction],
) -> Result<UniformReport> {
    let mut grid = cfg.common_grid(lambdas)?;
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let sides = |ls: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
        let (n, nt) = (density_norms(model, s, ls)?, density_norms(model_tilde, s, ls)?);
        Ok((
            ls.iter().zip(&n).map(|(&l, v)| cfg.sf.weight(l) * v).collect(),
            ls.iter().zip(&nt).map(|(&l, v)| cfg.sf_tilde.weight(l) * v).collect(),
        ))
    };
    let (mut left, mut right) = sides(&grid)?;
    for _ in 0..MARGIN_ROUNDS {
        let (_, _, at) = margins(&left, &right, &grid);
        let i = grid.partition_point(|p| *p < at);
        let lo = grid[i.saturating_sub(1)];
        let hi = grid[(i + 1).min(grid.len() - 1)];
        if hi <= lo {
            break;
        }
        let fresh: Vec<f64> = cfg
            .common_grid(&(1..9).map(|j| lo + (hi - lo) * j as f64 / 9.0).collect::<Vec<_>>())
            .unwrap_or_default()
            .into_iter()
            .filter(|l| grid.binary_search_by(|p| p.total_cmp(l)).is_err())
            .collect();
        if fresh.is_empty() {
            break;
        }
        let (fl, fr) = sides(&fresh)?;
        for ((l, a), b) in fresh.into_iter().zip(fl).zip(fr) {
            let at = grid.partition_point(|p| *p < l);
            grid.insert(at, l);
            left.insert(at, a);
            right.insert(at, b);
        }
    }
    let (condition_holds, worst_margin, worst_lambda) = margins(&left, &right, &grid);
    let c0 = rhs_sup(model, &cfg.sf, s, &grid)?.value;
    let rule = spectral_rule(&cfg.sf_tilde, 24, 8, Some(nyquist_cap(model_tilde)))?;
    let (lhs, _) = batch_spectral_side(model_tilde, &cfg.sf_tilde, s, batch, &rule)?;
    let ratios: Vec<f64> =
        lhs.iter().zip(batch).map(|(&v, phi)| if phi.norm() > 0.0 { v / phi.norm() } else { 0.0 }).collect();
    let violations = ratios.iter().filter(|&&r| r > c0 * (1.0 + TRANSFER_SLACK)).count();
    Ok(UniformReport {
        condition_holds,
        worst_margin,
        worst_lambda,
        c0,
        worst_ratio: ratios.iter().cloned().fold(0.0, f64::max),
        ratios,
        violations,
        transferred: violations == 0,
    })
}

/// Largest `λ` whose plane waves the model grid resolves; infinite for matrix models.
pub fn nyquist_cap(model: &OperatorModel) -> f64 {
    match model.kind() {
        ModelKind::FreeLaplacian1D | ModelKind::PerturbedSchrodinger1D => model.grid().nyquist().powi(2),
        _ => f64::INFINITY,
    }
}

/// Weight-only condition `σ²/a' ≥ σ̃²/ã'` of the perturbed comparison.
pub fn check_weights(cfg: &ComparisonConfig, lambdas: &[f64]) -> Result<(bool, f64, f64)> {
    let grid = cfg.common_grid(lambdas)?;
    let left: Vec<f64> = grid.iter().map(|&l| cfg.sf.weight(l)).collect();
    let right: Vec<f64> = grid.iter().map(|&l| cfg.sf_tilde.weight(l)).collect();
    Ok(margins(&left, &right, &grid))
}

/// `(σ̃, ã) = (σ |a_new'|^{1/2}, a_new)` from a triple with `a(λ) = λ`.
pub fn powers_weight(sf: &SpectralFunction, a_new: &Expr) -> Result<SpectralFunction> {
    if *sf.a_expr() != Expr::var() {
        return Err(Error::InvalidSpectralFunction("powers_weight needs a(λ) = λ".into()));
    }
    let sigma = Expr::Mul(
        Box::new(sf.sigma_expr().clone()),
        Box::new(Expr::Sqrt(Box::new(Expr::Abs(Box::new(a_new.derivative()))))),
    );
    SpectralFunction::with_extra_breakpoints(sigma, a_new.clone(), sf.window(), sf.delta(), sf.breakpoints())
}

/// The same map for a general `a`: `σ̃ = σ |(a_new ∘ a^{-1})'|^{1/2}` expressed as
/// `σ (|a_new'| / a')^{1/2}` with `a_new` given as a function of `λ`.
pub fn reweight(sf: &SpectralFunction, a_new: &Expr) -> Result<SpectralFunction> {
    let ratio = Expr::Div(Box::new(Expr::Abs(Box::new(a_new.derivative()))), Box::new(sf.a_prime_expr().clone()));
    let sigma = Expr::Mul(Box::new(sf.sigma_expr().clone()), Box::new(Expr::Sqrt(Box::new(ratio))));
    SpectralFunction::with_extra_breakpoints(sigma, a_new.clone(), sf.window(), sf.delta(), sf.breakpoints())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::random_batch;
    use crate::models::Window;
    use crate::quad::log_space;
    use crate::spaces::SpatialGrid;
    use approx::assert_relative_eq;
    use num_complex::Complex64 as C64;
    use proptest::prelude::*;

    fn gaussian(grid: SpatialGrid, c: f64, w: f64, k: f64) -> GridFunction {
        GridFunction::from_fn(grid, |x| C64::from_polar((-(x - c).powi(2) / (2.0 * w * w)).exp(), k * x))
    }

    fn setup() -> (OperatorModel, SpectralFunction, Window) {
        let g = SpatialGrid::new(12.0, 128).unwrap();
        let w = Window::new(0.2, 20.0).unwrap();
        (OperatorModel::free(g), SpectralFunction::parse("lambda^0.25", "lambda", w).unwrap(), w)
    }

    #[test]
    fn identical_triples_give_equality() {
        let (m, sf, _) = setup();
        let cfg = ComparisonConfig::new(sf.clone(), sf, ComparisonMode::Local).unwrap();
        let g = *m.grid();
        let (phi, psi) = (gaussian(g, 0.3, 1.0, 1.0), gaussian(g, -0.4, 0.8, 0.0));
        let grid = log_space(0.21, 19.0, 64);
        let r = check_local(&m, &m, &cfg, &phi, &psi, &grid, None).unwrap();
        assert!(r.condition_holds && r.conclusion_holds);
        assert_eq!(r.lhs_norm, r.rhs_norm);
        let r = check_global(&m, &m, &cfg, &phi, WeightExponent(1.0), &grid, None).unwrap();
        assert!(r.condition_holds && r.conclusion_holds);
        assert_eq!(r.lhs_norm, r.rhs_norm);
    }

    #[test]
    fn zero_sigma_tilde_and_zero_phi_pass() {
        let (m, sf, w) = setup();
        let zero = SpectralFunction::parse("0", "lambda", w).unwrap();
        let cfg = ComparisonConfig::new(sf.clone(), zero, ComparisonMode::Local).unwrap();
        let g = *m.grid();
        let phi = gaussian(g, 0.0, 1.0, 0.5);
        let grid = log_space(0.21, 19.0, 64);
        let r = check_local(&m, &m, &cfg, &phi, &phi, &grid, None).unwrap();
        assert!(r.condition_holds && r.conclusion_holds && r.rhs_norm == 0.0);
        let same = ComparisonConfig::new(sf.clone(), sf, ComparisonMode::Global).unwrap();
        let r = check_global(&m, &m, &same, &GridFunction::zeros(g), WeightExponent(1.0), &grid, None).unwrap();
        assert!(r.condition_holds && r.conclusion_holds && r.lhs_norm == 0.0);
    }

    #[test]
    fn squared_frequency_instance_is_an_equality() {
        let (m, sf, _) = setup();
        let tilde = powers_weight(&sf, &Expr::parse("lambda^2").unwrap()).unwrap();
        // σ̃ = σ (2λ)^{1/2}
        for l in [0.3, 2.0, 15.0] {
            assert_relative_eq!(tilde.sigma(l), sf.sigma(l) * (2.0 * l).sqrt(), max_relative = 1e-12);
            assert_relative_eq!(tilde.weight(l), sf.weight(l), max_relative = 1e-12);
        }
        let cfg = ComparisonConfig::new(sf, tilde, ComparisonMode::Local).unwrap();
        let g = *m.grid();
        let phi = gaussian(g, 0.2, 1.0, 0.8);
        let grid = log_space(0.21, 19.0, 64);
        let r = check_local(&m, &m, &cfg, &phi, &phi, &grid, None).unwrap();
        assert!(r.worst_margin.abs() < 1e-10);
        assert_relative_eq!(r.lhs_norm, r.rhs_norm, max_relative = 1e-6);
        let r = check_global(&m, &m, &cfg, &phi, WeightExponent(1.0), &grid, None).unwrap();
        assert!(r.worst_margin.abs() < 1e-10);
        assert_relative_eq!(r.lhs_norm, r.rhs_norm, max_relative = 1e-6);
    }

    #[test]
    fn uniform_transfer_and_inflated_weight() {
        let g = SpatialGrid::new(20.0, 256).unwrap();
        let m = OperatorModel::free(g);
        let w = Window::new(0.05, 20.0).unwrap();
        let sf = SpectralFunction::parse("lambda^0.25", "lambda", w).unwrap();
        let tilde = powers_weight(&sf, &Expr::parse("lambda^2").unwrap()).unwrap();
        let grid = log_space(0.05 + 1e-9, 20.0 - 1e-9, 64);
        let batch = random_batch(&g, 24, 11);
        let cfg = ComparisonConfig::new(sf.clone(), tilde.clone(), ComparisonMode::Uniform).unwrap();
        let r = check_uniform(&m, &m, &cfg, WeightExponent(1.0), &grid, &batch).unwrap();
        assert!(r.condition_holds && r.transferred, "{r:?}");
        let inflated = SpectralFunction::new(
            Expr::Mul(Box::new(Expr::constant(1.5)), Box::new(tilde.sigma_expr().clone())),
            tilde.a_expr().clone(),
            w,
        )
        .unwrap();
        let bad = ComparisonConfig::new(sf, inflated, ComparisonMode::Uniform).unwrap();
        let r = check_uniform(&m, &m, &bad, WeightExponent(1.0), &grid, &batch).unwrap();
        assert!(!r.condition_holds);
        assert_relative_eq!(r.worst_margin, 1.0 / 2.25 - 1.0, max_relative = 1e-6);
    }

    #[test]
    fn powers_weight_identity_and_fractional() {
        let (_, sf, _) = setup();
        let same = powers_weight(&sf, &Expr::var()).unwrap();
        for l in [0.3, 4.0] {
            assert_relative_eq!(same.sigma(l), sf.sigma(l), max_relative = 1e-14);
        }
        let alpha = 0.7;
        let frac = powers_weight(&sf, &Expr::var().powf(alpha)).unwrap();
        for l in [0.3, 4.0, 17.0] {
            assert_relative_eq!(frac.sigma(l), alpha.sqrt() * l.powf((2.0 * alpha - 1.0) / 4.0), max_relative = 1e-12);
        }
        let not_identity = SpectralFunction::parse("1", "2*lambda", Window::new(0.2, 20.0).unwrap()).unwrap();
        assert!(powers_weight(&not_identity, &Expr::var()).is_err());
        assert!(powers_weight(&sf, &Expr::parse("-lambda").unwrap()).is_err());
    }

    #[test]
    fn enlarging_sigma_never_decreases_the_h_side() {
        let (m, sf, w) = setup();
        let big = SpectralFunction::parse("lambda^0.25*(1+lambda/10)", "lambda", w).unwrap();
        let phi = gaussian(*m.grid(), 0.0, 1.0, 1.0);
        let grid = log_space(0.21, 19.0, 32);
        let cfg_a = ComparisonConfig::new(sf.clone(), sf.clone(), ComparisonMode::Global).unwrap();
        let cfg_b = ComparisonConfig::new(big, sf, ComparisonMode::Global).unwrap();
        let a = check_global(&m, &m, &cfg_a, &phi, WeightExponent(1.0), &grid, None).unwrap();
        let b = check_global(&m, &m, &cfg_b, &phi, WeightExponent(1.0), &grid, None).unwrap();
        assert!(b.lhs_norm >= a.lhs_norm && b.condition_holds && b.conclusion_holds);
    }

    #[test]
    fn mismatched_windows_are_rejected() {
        let (_, sf, _) = setup();
        let other = SpectralFunction::parse("1", "lambda", Window::new(0.2, 10.0).unwrap()).unwrap();
        assert!(ComparisonConfig::new(sf, other, ComparisonMode::Local).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn powers_weight_is_functorial(p in 0.3f64..2.5, q in 0.3f64..2.5, l in 0.3f64..15.0) {
            // a2 ∘ a1 with a1 = λ^p, a2 = λ^q: one step with λ^{pq}, or two chained steps.
            let (_, sf, _) = setup();
            let a1 = Expr::var().powf(p);
            let a2 = Expr::var().powf(q);
            let direct = powers_weight(&sf, &a2.compose(&a1)).unwrap();
            let first = powers_weight(&sf, &a1).unwrap();
            let chained = reweight(&first, &a2.compose(&a1)).unwrap();
            prop_assert!((direct.sigma(l) - chained.sigma(l)).abs() <= 1e-10 * direct.sigma(l));
            prop_assert!((direct.a(l) - chained.a(l)).abs() <= 1e-10 * direct.a(l));
        }
    }
}
