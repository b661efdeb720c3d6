//! Spectral density `A(λ) = d/dλ E(λ)P_ac(H)`: pairing, application and norm.
//!
//! Norm convention: [`density_norm`] returns `N(λ) = sup_{‖f‖_X=1} <A(λ)f, f>`,
//! the square of `‖A(λ)‖_{B(X,X*)}` as a map norm; callers take square roots.
//! `N(λ)` is also the operator norm of `<x>^{-s} A(λ) <x>^{-s}`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Eigen, ModelKind, OperatorModel};
use crate::quad::{adaptive_simpson, linear_fit};
use crate::spaces::{
    bracket, fourier_at, power_iteration, GridFunction, OperatorRep, PowerIterationOptions, SpatialGrid, WeightExponent,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DensityRoute {
    Exact,
    EpsilonSmoothed(f64),
}

/// `A(λ)` as a computable operator on grid values.
#[derive(Debug, Clone)]
pub struct DensityRep {
    pub lambda: f64,
    pub rep: OperatorRep,
    pub route: DensityRoute,
}

impl DensityRep {
    /// `<A φ, ψ>` in the grid L² pairing.
    pub fn pairing(&self, phi: &GridFunction, psi: &GridFunction) -> C64 {
        self.rep.apply_fn(phi).inner(psi)
    }
}

/// `(1/π) ε / (x² + ε²)`.
#[inline]
pub fn lorentzian(x: f64, eps: f64) -> f64 {
    eps / (PI * (x * x + eps * eps))
}

fn require_positive(model: &OperatorModel, l: f64) -> Result<()> {
    match model.kind() {
        ModelKind::FreeLaplacian1D | ModelKind::PerturbedSchrodinger1D if !(l > 0.0) => {
            Err(Error::InvalidLambda { lambda: l, reason: "density of the free line needs lambda > 0".into() })
        }
        _ if !l.is_finite() => Err(Error::InvalidLambda { lambda: l, reason: "not finite".into() }),
        _ => Ok(()),
    }
}

fn epsilon(model: &OperatorModel, l: f64) -> Result<f64> {
    model
        .epsilon_at(l)
        .filter(|e| *e > 0.0)
        .ok_or_else(|| Error::Unsupported("model has no smoothed density route".into()))
}

/// Plane waves `(2π)^{-1/2} e^{±ikx}` on the grid.
pub fn plane_pair(grid: SpatialGrid, k: f64) -> [GridFunction; 2] {
    let c = 1.0 / (2.0 * PI).sqrt();
    [
        GridFunction::from_fn(grid, |x| C64::from_polar(c, k * x)),
        GridFunction::from_fn(grid, |x| C64::from_polar(c, -k * x)),
    ]
}

/// The density as an operator: rank 2 on the free and perturbed lines, dense for matrix models.
pub fn density_rep(model: &OperatorModel, l: f64) -> Result<DensityRep> {
    require_positive(model, l)?;
    match model.kind() {
        ModelKind::FreeLaplacian1D => {
            let k = l.sqrt();
            let vectors = plane_pair(*model.grid(), k).to_vec();
            let coeffs = DMatrix::from_diagonal_element(2, 2, C64::new(1.0 / (2.0 * k), 0.0));
            Ok(DensityRep {
                lambda: l,
                rep: OperatorRep::RankKFactored { vectors, coeffs },
                route: DensityRoute::Exact,
            })
        }
        ModelKind::PerturbedSchrodinger1D => {
            let k = l.sqrt();
            let vectors = crate::perturbation::distorted_plane_pair(model, l)?.to_vec();
            let coeffs = DMatrix::from_diagonal_element(2, 2, C64::new(1.0 / (2.0 * k), 0.0));
            Ok(DensityRep {
                lambda: l,
                rep: OperatorRep::RankKFactored { vectors, coeffs },
                route: DensityRoute::Exact,
            })
        }
        _ => {
            let eps = epsilon(model, l)?;
            let eig = model.eigen().expect("matrix model");
            Ok(DensityRep {
                lambda: l,
                rep: OperatorRep::DenseMatrix(smoothed_matrix(eig, l, eps)),
                route: DensityRoute::EpsilonSmoothed(eps),
            })
        }
    }
}

/// `V diag(L_ε(λ - λ_k)) V*`.
pub fn smoothed_matrix(eig: &Eigen, l: f64, eps: f64) -> DMatrix<C64> {
    let w: Vec<f64> = eig.values.iter().map(|&lk| lorentzian(l - lk, eps)).collect();
    let mut scaled = eig.vectors.clone();
    for (j, wj) in w.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*wj);
    }
    scaled * eig.vectors.adjoint()
}

/// Precomputed data for repeated evaluation of `λ ↦ <A(λ)φ, ψ>`.
pub struct PairingOracle<'a> {
    model: &'a OperatorModel,
    phi: &'a GridFunction,
    psi: &'a GridFunction,
    coeffs: Option<(Vec<C64>, Vec<C64>)>,
}

impl<'a> PairingOracle<'a> {
    pub fn new(model: &'a OperatorModel, phi: &'a GridFunction, psi: &'a GridFunction) -> Result<Self> {
        for f in [phi, psi] {
            if f.grid() != model.grid() {
                return Err(Error::InvalidGrid("function and model grids differ".into()));
            }
        }
        let coeffs = match model.kind() {
            ModelKind::StarkFD | ModelKind::GenericHermitian => {
                let eig = model.eigen().expect("matrix model");
                Some((eig.coefficients(phi.values()), eig.coefficients(psi.values())))
            }
            _ => None,
        };
        Ok(Self { model, phi, psi, coeffs })
    }

    pub fn at(&self, l: f64) -> Result<C64> {
        require_positive(self.model, l)?;
        match self.model.kind() {
            ModelKind::FreeLaplacian1D => {
                let k = l.sqrt();
                let (ap, am) = (fourier_at(self.phi, k), fourier_at(self.phi, -k));
                let (bp, bm) = if std::ptr::eq(self.phi, self.psi) {
                    (ap, am)
                } else {
                    (fourier_at(self.psi, k), fourier_at(self.psi, -k))
                };
                Ok((ap * bp.conj() + am * bm.conj()) / (2.0 * k))
            }
            ModelKind::PerturbedSchrodinger1D => {
                let rep = density_rep(self.model, l)?;
                Ok(rep.pairing(self.phi, self.psi))
            }
            _ => {
                let eps = epsilon(self.model, l)?;
                let eig = self.model.eigen().expect("matrix model");
                let (c, d) = self.coeffs.as_ref().expect("coefficients");
                let sum: C64 = eig
                    .values
                    .iter()
                    .zip(c.iter().zip(d))
                    .map(|(&lk, (ck, dk))| ck * dk.conj() * lorentzian(l - lk, eps))
                    .sum();
                Ok(sum * self.model.grid().spacing())
            }
        }
    }
}

/// `<A(λ)φ, ψ>`.
pub fn density_pairing(model: &OperatorModel, l: f64, phi: &GridFunction, psi: &GridFunction) -> Result<C64> {
    PairingOracle::new(model, phi, psi)?.at(l)
}

/// `A(λ)φ` as an element of `X*` sampled on the grid.
pub fn density_apply(model: &OperatorModel, l: f64, phi: &GridFunction) -> Result<GridFunction> {
    require_positive(model, l)?;
    match model.kind() {
        ModelKind::FreeLaplacian1D => {
            let k = l.sqrt();
            let (ap, am) = (fourier_at(phi, k), fourier_at(phi, -k));
            let c = 1.0 / ((2.0 * PI).sqrt() * 2.0 * k);
            Ok(GridFunction::from_fn(*phi.grid(), |x| {
                (ap * C64::from_polar(1.0, k * x) + am * C64::from_polar(1.0, -k * x)) * c
            }))
        }
        _ => Ok(density_rep(model, l)?.rep.apply_fn(phi)),
    }
}

/// `c(q) = ∫ <x>^{-2s} e^{iqx} dx` on the whole line.
///
/// Uses `c(q) = (2√π/Γ(s)) (q/2)^{s-1/2} K_{s-1/2}(q)` with the modified Bessel
/// function from its integral `K_ν(q) = ∫_0^∞ e^{-q cosh t} cosh(νt) dt`.
pub fn weight_transform(q: f64, s: f64) -> Result<f64> {
    if !(s > 0.5) {
        return Err(Error::WeightTooWeak { s });
    }
    let q = q.abs();
    let gs = libm::tgamma(s);
    if q == 0.0 {
        return Ok(PI.sqrt() * libm::tgamma(s - 0.5) / gs);
    }
    let nu = s - 0.5;
    // e^{q} K_ν(q) = ∫ e^{-q(cosh t - 1)} cosh(νt) dt; the integrand is below e^{-60} past t_max.
    let t_max = (1.0 + 60.0 / q).acosh() + 1.0;
    let f = |t: f64| (-q * (t.cosh() - 1.0)).exp() * (nu * t).cosh();
    let rough = adaptive_simpson(f, 0.0, t_max, 1e-6 * t_max)?;
    let scaled_k = adaptive_simpson(f, 0.0, t_max, 1e-14 * rough.abs().max(f64::MIN_POSITIVE))?;
    Ok(2.0 * PI.sqrt() / gs * (q / 2.0).powf(nu) * scaled_k * (-q).exp())
}

/// `N(λ) = sup_{‖f‖_{L²_s}=1} <A(λ)f, f>`.
///
/// On the free line this is the top eigenvalue of the 2×2 Gram problem of the
/// rank-2 form with whole-line weight transforms; matrix models use the
/// top eigenvalue of `<x>^{-s} A_ε <x>^{-s}`.
pub fn density_norm(model: &OperatorModel, l: f64, s: WeightExponent) -> Result<f64> {
    require_positive(model, l)?;
    match model.kind() {
        ModelKind::FreeLaplacian1D => free_density_norm(l, s),
        ModelKind::PerturbedSchrodinger1D => {
            let rep = density_rep(model, l)?;
            match rep.rep {
                OperatorRep::RankKFactored { vectors, coeffs } => crate::spaces::dual_norm_rank_k(&vectors, &coeffs, s),
                _ => unreachable!("perturbed density is rank 2"),
            }
        }
        _ => SmoothedNormScanner::new(model, s)?.at(l),
    }
}

pub fn free_density_norm(l: f64, s: WeightExponent) -> Result<f64> {
    if !(l > 0.0) {
        return Err(Error::InvalidLambda { lambda: l, reason: "density of the free line needs lambda > 0".into() });
    }
    if !s.is_smoothing_admissible() {
        return Err(Error::WeightTooWeak { s: s.0 });
    }
    let k = l.sqrt();
    let c0 = weight_transform(0.0, s.0)?;
    let c2 = weight_transform(2.0 * k, s.0)?;
    // C^{1/2} G C^{1/2} with C = (2k)^{-1} I and G_jl = c(q_j - q_l)/(2π).
    let g = DMatrix::from_row_slice(2, 2, &[c0, c2, c2, c0]) / (2.0 * PI);
    let reduced = g / (2.0 * k);
    let eig = SymmetricEigen::new(reduced);
    Ok(eig.eigenvalues.max())
}

/// Repeated `N(λ)` evaluations for an ε-smoothed matrix model at fixed `s`.
///
/// The nonzero spectrum of `W V L V* W` equals that of `L^{1/2} (V* W² V) L^{1/2}`,
/// so the `λ`-independent middle factor is formed once.
pub struct SmoothedNormScanner<'a> {
    model: &'a OperatorModel,
    gram: DMatrix<C64>,
    /// Set when the Gram is real; a dense eigenvalue solve then beats power
    /// iteration, which crawls on the clustered top of the spectrum.
    real: Option<DMatrix<f64>>,
    opts: PowerIterationOptions,
}

impl<'a> SmoothedNormScanner<'a> {
    pub fn new(model: &'a OperatorModel, s: WeightExponent) -> Result<Self> {
        let eig = model.eigen().ok_or_else(|| Error::Unsupported("model has no eigendecomposition".into()))?;
        let grid = model.grid();
        let w2: Vec<f64> = grid.nodes().iter().map(|&x| bracket(x).powf(-2.0 * s.0)).collect();
        let gram = eig.weighted_gram(&w2);
        let real = gram.iter().all(|z| z.im == 0.0).then(|| gram.map(|z| z.re));
        Ok(Self { model, gram, real, opts: PowerIterationOptions::default() })
    }

    pub fn at(&self, l: f64) -> Result<f64> {
        let eps = epsilon(self.model, l)?;
        let eig = self.model.eigen().expect("matrix model");
        let root: Vec<f64> = eig.values.iter().map(|&lk| lorentzian(l - lk, eps).sqrt()).collect();
        let n = root.len();
        if let Some(g) = &self.real {
            let m = DMatrix::from_fn(n, n, |i, j| root[i] * g[(i, j)] * root[j]);
            return Ok(m.symmetric_eigenvalues().max().max(0.0));
        }
        let apply = |v: &[C64]| {
            let x = DVector::from_iterator(n, v.iter().zip(&root).map(|(z, r)| z * r));
            let y = &self.gram * x;
            y.iter().zip(&root).map(|(z, r)| z * r).collect::<Vec<_>>()
        };
        let (mu, _) = power_iteration(n, apply, self.opts)?;
        Ok(mu.max(0.0))
    }
}

/// Side of the boundary value `λ ± i0` (or `λ ± iε`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// `R(λ ± iε) = (H - (λ ± iε))^{-1}` as an operator on grid values.
#[derive(Debug, Clone)]
pub struct ResolventRep {
    pub lambda: f64,
    pub epsilon: f64,
    pub sign: Sign,
    pub rep: OperatorRep,
}

pub fn resolvent(model: &OperatorModel, l: f64, eps: f64, sign: Sign) -> Result<ResolventRep> {
    if !(eps >= 0.0) {
        return Err(Error::InvalidLambda { lambda: l, reason: format!("epsilon {eps} must be nonnegative") });
    }
    let z = C64::new(l, sign.value() * eps);
    let rep = match model.kind() {
        ModelKind::FreeLaplacian1D => OperatorRep::IntegralKernel(free_kernel(model.grid(), z)?),
        ModelKind::PerturbedSchrodinger1D => {
            let (_, v, _) = model.potential().expect("perturbed model");
            let r = free_kernel(model.grid(), z)? * C64::new(model.grid().spacing(), 0.0);
            let n = r.nrows();
            let m = DMatrix::identity(n, n) + v * &r;
            let x = m.lu().try_inverse().ok_or(Error::Singular { lambda: l })?;
            OperatorRep::DenseMatrix(r * x)
        }
        _ => {
            if eps == 0.0 {
                return Err(Error::InvalidLambda { lambda: l, reason: "matrix models need epsilon > 0".into() });
            }
            OperatorRep::DenseMatrix(matrix_resolvent(model.matrix().expect("matrix model"), z)?)
        }
    };
    Ok(ResolventRep { lambda: l, epsilon: eps, sign, rep })
}

/// `(M - z)^{-1}` by dense LU.
pub fn matrix_resolvent(m: &DMatrix<C64>, z: C64) -> Result<DMatrix<C64>> {
    let n = m.nrows();
    let shifted = m - DMatrix::from_diagonal_element(n, n, z);
    shifted.lu().try_inverse().ok_or(Error::Singular { lambda: z.re })
}

/// Kernel `(i / 2w) e^{iw|x-y|}`, `w² = z`, `Im w >= 0`; at `z = λ ± i0` this is
/// `(±i / 2√λ) e^{±i√λ|x-y|}`.
pub fn free_kernel(grid: &SpatialGrid, z: C64) -> Result<DMatrix<C64>> {
    let w = if z.im == 0.0 {
        if !(z.re > 0.0) {
            return Err(Error::InvalidLambda { lambda: z.re, reason: "boundary value needs lambda > 0".into() });
        }
        C64::new(z.re.sqrt(), 0.0)
    } else {
        let w = z.sqrt();
        if w.im < 0.0 {
            -w
        } else {
            w
        }
    };
    Ok(free_kernel_w(grid, w))
}

pub(crate) fn free_kernel_w(grid: &SpatialGrid, w: C64) -> DMatrix<C64> {
    let n = grid.len();
    let dx = grid.spacing();
    let pre = C64::new(0.0, 1.0) / (2.0 * w);
    // Toeplitz: the kernel depends on |i - j| only.
    let row: Vec<C64> = (0..n).map(|d| pre * (C64::new(0.0, 1.0) * w * (d as f64 * dx)).exp()).collect();
    DMatrix::from_fn(n, n, |i, j| row[i.abs_diff(j)])
}

/// Boundary value with the sign convention `λ ± i0`.
pub fn free_boundary_kernel(grid: &SpatialGrid, l: f64, sign: Sign) -> Result<DMatrix<C64>> {
    if !(l > 0.0) {
        return Err(Error::InvalidLambda { lambda: l, reason: "boundary value needs lambda > 0".into() });
    }
    Ok(free_kernel_w(grid, C64::new(sign.value() * l.sqrt(), 0.0)))
}

/// Least-squares power law `value ≈ C λ^slope`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerFit {
    pub slope: f64,
    pub constant: f64,
    pub lambdas: Vec<f64>,
    pub values: Vec<f64>,
}

pub fn fit_power_law(lambdas: &[f64], values: &[f64]) -> Result<PowerFit> {
    if lambdas.len() < 4 {
        return Err(Error::DegenerateFit(format!("need at least 4 points, got {}", lambdas.len())));
    }
    if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) || lambdas.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::DegenerateFit("values and lambdas must be positive".into()));
    }
    let xs: Vec<f64> = lambdas.iter().map(|l| l.ln()).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let (slope, intercept) = linear_fit(&xs, &ys)?;
    Ok(PowerFit { slope, constant: intercept.exp(), lambdas: lambdas.to_vec(), values: values.to_vec() })
}

/// Fits `log ‖A(λ)‖_{s,-s}` against `log λ`, with `‖A(λ)‖_{s,-s} = N(λ)`.
pub fn agmon_scan(model: &OperatorModel, s: WeightExponent, lambdas: &[f64]) -> Result<PowerFit> {
    if lambdas.len() < 4 {
        return Err(Error::DegenerateFit(format!("need at least 4 points, got {}", lambdas.len())));
    }
    fit_power_law(lambdas, &density_norms(model, s, lambdas)?)
}

/// `N(λ)` on a list of spectral parameters, sharing setup work across the list.
pub fn density_norms(model: &OperatorModel, s: WeightExponent, lambdas: &[f64]) -> Result<Vec<f64>> {
    match model.kind() {
        ModelKind::StarkFD | ModelKind::GenericHermitian => {
            let scanner = SmoothedNormScanner::new(model, s)?;
            lambdas.iter().map(|&l| scanner.at(l)).collect()
        }
        _ => lambdas.iter().map(|&l| density_norm(model, l, s)).collect(),
    }
}

/// Upper envelope of `N(λ)` over consecutive windows of `width_gaps` mean gaps,
/// fitted as a power law against the window centers.
pub fn smoothed_envelope_fit(
    model: &OperatorModel,
    s: WeightExponent,
    lo: f64,
    hi: f64,
    width_gaps: f64,
    samples_per_window: usize,
) -> Result<PowerFit> {
    let eig = model.eigen().ok_or_else(|| Error::Unsupported("model has no eigendecomposition".into()))?;
    let scanner = SmoothedNormScanner::new(model, s)?;
    let (mut centers, mut env) = (Vec::new(), Vec::new());
    let mut a = lo;
    while a < hi {
        let width = width_gaps * eig.mean_gap_near(a);
        let b = (a + width).min(hi);
        let mut m: f64 = 0.0;
        for i in 0..samples_per_window {
            let l = a + (b - a) * (i as f64 + 0.5) / samples_per_window as f64;
            m = m.max(scanner.at(l)?);
        }
        centers.push(0.5 * (a + b));
        env.push(m);
        a = b;
    }
    let shifted: Vec<f64> = centers.iter().map(|c| 1.0 + c.abs()).collect();
    let mut fit = fit_power_law(&shifted, &env)?;
    fit.lambdas = centers;
    Ok(fit)
}
