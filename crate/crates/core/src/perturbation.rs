//! Short-range perturbations `H̃ = H + V` of the free line through
//! Lippmann–Schwinger inversion of `I + V R±(λ)`.
//!
//! With `X± = (I + V R±(λ))^{-1}` the perturbed resolvent is `R̃± = R± X±`, and
//! splitting `R⁺X⁺ - R⁻X⁻ = (R⁺ - R⁻)X⁺ + R⁻(X⁺ - X⁻)` gives
//!
//! ```text
//! Ã(λ) = A(λ) X⁺ - R⁻ X⁺ V A(λ) X⁻,
//! ```
//!
//! which also equals `(X⁺)* A(λ) X⁺`. The latter is rank 2 on the line and is the
//! form used for scans; the former is built densely to validate it.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::density::{free_boundary_kernel, matrix_resolvent, plane_pair, DensityRep, DensityRoute, Sign};
use crate::error::{Error, Result};
use crate::models::{ModelKind, OperatorModel, PotentialSpec, SpectralFunction};
use crate::quad::CompositeRule;
use crate::spaces::{
    bracket, dual_norm_rank_k, hermitian_defect, GridFunction, OperatorRep, SpatialGrid, WeightExponent,
};

/// Pivot growth beyond which `I + VR` is treated as singular.
const SINGULAR_NORM: f64 = 1e12;

/// `I + VR±(λ)` restricted to the support nodes of `V`, with its inverse.
#[derive(Debug, Clone)]
pub struct LippmannSchwingerState {
    pub lambda: f64,
    pub sign: Sign,
    pub support: Vec<usize>,
    /// `V R±` on support nodes (matrix on values).
    pub vr: DMatrix<C64>,
    pub inv: DMatrix<C64>,
    /// `‖<x>^s (I + VR)^{-1} <x>^{-s}‖` on the support nodes.
    pub inv_norm_s: f64,
    /// `‖<x>^s V R <x>^{-s}‖` from the whole grid into the support.
    pub vr_norm_s: f64,
}

/// Free boundary kernel `K±` as an integral operator.
pub fn free_resolvent_kernel(l: f64, sign: Sign, grid: &SpatialGrid) -> Result<OperatorRep> {
    Ok(OperatorRep::IntegralKernel(free_boundary_kernel(grid, l, sign)?))
}

fn submatrix(m: &DMatrix<C64>, rows: &[usize], cols: &[usize]) -> DMatrix<C64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Rows `S` of the boundary resolvent (kernel times `dx`) against all grid columns.
fn resolvent_rows(grid: &SpatialGrid, l: f64, sign: Sign, rows: &[usize]) -> DMatrix<C64> {
    let k = sign.value() * l.sqrt();
    let dx = grid.spacing();
    let pre = C64::new(0.0, 1.0) / (2.0 * k) * dx;
    DMatrix::from_fn(rows.len(), grid.len(), |i, j| {
        let r = (grid.node(rows[i]) - grid.node(j)).abs();
        pre * C64::from_polar(1.0, k * r)
    })
}

fn top_singular_value(b: &DMatrix<C64>) -> f64 {
    if b.nrows() == 0 || b.ncols() == 0 {
        return 0.0;
    }
    let g = if b.nrows() <= b.ncols() { b * b.adjoint() } else { b.adjoint() * b };
    let g = (&g + g.adjoint()) * C64::new(0.5, 0.0);
    SymmetricEigen::new(g).eigenvalues.max().max(0.0).sqrt()
}

pub fn assemble_vr(
    v: &PotentialSpec,
    l: f64,
    sign: Sign,
    grid: &SpatialGrid,
    s: WeightExponent,
) -> Result<LippmannSchwingerState> {
    let vm = v.matrix(grid)?;
    let support = v.support(grid)?;
    assemble_with(&vm, &support, l, sign, grid, s)
}

pub(crate) fn assemble_with(
    vm: &DMatrix<C64>,
    support: &[usize],
    l: f64,
    sign: Sign,
    grid: &SpatialGrid,
    s: WeightExponent,
) -> Result<LippmannSchwingerState> {
    if !(l > 0.0) {
        return Err(Error::InvalidLambda { lambda: l, reason: "boundary value needs lambda > 0".into() });
    }
    let m = support.len();
    if m == 0 {
        return Ok(LippmannSchwingerState {
            lambda: l,
            sign,
            support: Vec::new(),
            vr: DMatrix::zeros(0, 0),
            inv: DMatrix::zeros(0, 0),
            inv_norm_s: 1.0,
            vr_norm_s: 0.0,
        });
    }
    let r_rows = resolvent_rows(grid, l, sign, support);
    let r_ss = DMatrix::from_fn(m, m, |i, j| r_rows[(i, support[j])]);
    let v_ss = submatrix(vm, support, support);
    let vr = &v_ss * &r_ss;
    let inv = (DMatrix::identity(m, m) + &vr).lu().try_inverse().ok_or(Error::Singular { lambda: l })?;
    if inv.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) || inv.norm() > SINGULAR_NORM {
        return Err(Error::Singular { lambda: l });
    }
    let w: Vec<f64> = support.iter().map(|&i| s.weight(grid.node(i))).collect();
    let weighted_inv = DMatrix::from_fn(m, m, |i, j| inv[(i, j)] * (w[i] / w[j]));
    let inv_norm_s = top_singular_value(&weighted_inv);
    let vr_full = &v_ss * &r_rows;
    let vr_w = DMatrix::from_fn(m, grid.len(), |i, j| vr_full[(i, j)] * (w[i] / s.weight(grid.node(j))));
    let vr_norm_s = top_singular_value(&vr_w);
    Ok(LippmannSchwingerState { lambda: l, sign, support: support.to_vec(), vr, inv, inv_norm_s, vr_norm_s })
}

/// `|det(I + VR±(λ))|` on the support nodes.
pub fn ls_determinant(v: &PotentialSpec, l: f64, sign: Sign, grid: &SpatialGrid) -> Result<f64> {
    let vm = v.matrix(grid)?;
    let support = v.support(grid)?;
    let m = support.len();
    if m == 0 {
        return Ok(1.0);
    }
    let r_rows = resolvent_rows(grid, l, sign, &support);
    let r_ss = DMatrix::from_fn(m, m, |i, j| r_rows[(i, support[j])]);
    let t = submatrix(&vm, &support, &support) * r_ss;
    Ok((DMatrix::identity(m, m) + t).determinant().norm())
}

/// Full-grid `X± = (I + V R±)^{-1}` assembled from the support inverse.
fn full_inverse(st: &LippmannSchwingerState, vm: &DMatrix<C64>, grid: &SpatialGrid) -> DMatrix<C64> {
    let n = grid.len();
    let mut x = DMatrix::identity(n, n);
    if st.support.is_empty() {
        return x;
    }
    let r_rows = resolvent_rows(grid, st.lambda, st.sign, &st.support);
    let v_ss = submatrix(vm, &st.support, &st.support);
    let corr = &st.inv * v_ss * r_rows;
    for (a, &i) in st.support.iter().enumerate() {
        for j in 0..n {
            x[(i, j)] -= corr[(a, j)];
        }
    }
    x
}

/// `w± = (X⁺)* u±`, the distorted plane waves with `Ã(λ) = (2√λ)^{-1} Σ± w± (·, w±)`.
pub fn distorted_plane_pair(model: &OperatorModel, l: f64) -> Result<[GridFunction; 2]> {
    let (_, vm, support) =
        model.potential().ok_or_else(|| Error::Unsupported("distorted plane waves need a perturbed model".into()))?;
    distorted_with(vm, support, l, model.grid())
}

fn distorted_with(vm: &DMatrix<C64>, support: &[usize], l: f64, grid: &SpatialGrid) -> Result<[GridFunction; 2]> {
    let u = plane_pair(*grid, l.sqrt());
    if support.is_empty() {
        return Ok(u);
    }
    let st = assemble_with(vm, support, l, Sign::Plus, grid, WeightExponent(0.0))?;
    let r_rows = resolvent_rows(grid, l, Sign::Plus, support);
    let v_ss = submatrix(vm, support, support);
    // (X⁺)* u = u - (R⁺_{S,:})* V_SS* (I+T)^{-*} u_S
    let lhs = r_rows.adjoint() * v_ss.adjoint() * st.inv.adjoint();
    let mut out = Vec::with_capacity(2);
    for ui in &u {
        let us = DVector::from_iterator(support.len(), support.iter().map(|&i| ui.values()[i]));
        let corr = &lhs * us;
        let vals: Vec<C64> = ui.values().iter().zip(corr.iter()).map(|(a, c)| a - c).collect();
        out.push(GridFunction::new(*grid, vals)?);
    }
    let b = out.pop().unwrap();
    let a = out.pop().unwrap();
    Ok([a, b])
}

/// Dense `Ã(λ)` from the chain `A X⁺ - R⁻ X⁺ V A X⁻`, with its validation figures.
#[derive(Debug, Clone)]
pub struct PerturbedDensity {
    pub density: DensityRep,
    /// `sup <Ãf, f>` over unit `L²_s` vectors.
    pub norm_tilde: f64,
    /// The same for the free density on the grid.
    pub norm_free: f64,
    pub ratio: f64,
    pub hermitian_defect: f64,
    /// Smallest eigenvalue of the Hermitian part relative to the largest.
    pub min_relative_eigenvalue: f64,
    /// `‖chain - (X⁺)* A X⁺‖ / ‖chain‖`.
    pub factorization_gap: f64,
}

/// Positivity / Hermiticity tolerance for `Ã(λ)`.
const FORM_TOL: f64 = 1e-8;

pub fn perturbed_density(grid: &SpatialGrid, v: &PotentialSpec, l: f64, s: WeightExponent) -> Result<PerturbedDensity> {
    if !s.is_smoothing_admissible() {
        return Err(Error::WeightTooWeak { s: s.0 });
    }
    let vm = v.matrix(grid)?;
    let support = v.support(grid)?;
    let plus = assemble_with(&vm, &support, l, Sign::Plus, grid, s)?;
    let minus = assemble_with(&vm, &support, l, Sign::Minus, grid, s)?;
    let xp = full_inverse(&plus, &vm, grid);
    let xm = full_inverse(&minus, &vm, grid);
    let dx = C64::new(grid.spacing(), 0.0);
    let rm = free_boundary_kernel(grid, l, Sign::Minus)? * dx;

    let k = l.sqrt();
    let u = plane_pair(*grid, k);
    let coeffs = DMatrix::from_diagonal_element(2, 2, C64::new(1.0 / (2.0 * k), 0.0));
    let a = OperatorRep::RankKFactored { vectors: u.to_vec(), coeffs: coeffs.clone() }.to_dense(grid);

    let chain = &a * &xp - &rm * &xp * &vm * &a * &xm;
    let factored = xp.adjoint() * &a * &xp;
    let scale = chain.norm().max(f64::MIN_POSITIVE);
    let factorization_gap = (&chain - &factored).norm() / scale;

    let defect = hermitian_defect(&chain);
    let herm = (&chain + chain.adjoint()) * C64::new(0.5, 0.0);
    let w: Vec<f64> = grid.nodes().iter().map(|&x| bracket(x).powf(-s.0)).collect();
    let sandwich = DMatrix::from_fn(grid.len(), grid.len(), |i, j| herm[(i, j)] * (w[i] * w[j]));
    let eig = SymmetricEigen::new(herm.clone()).eigenvalues;
    let (emin, emax) = (eig.min(), eig.max());
    let min_relative_eigenvalue = if emax > 0.0 { emin / emax } else { 0.0 };
    if defect > FORM_TOL || min_relative_eigenvalue < -FORM_TOL {
        return Err(Error::Inconsistent(format!(
            "at lambda = {l}: hermitian defect {defect:.3e}, relative min eigenvalue {min_relative_eigenvalue:.3e}"
        )));
    }
    // The dx of the pairing cancels against the dx of the norm.
    let norm_tilde = SymmetricEigen::new(sandwich).eigenvalues.max().max(0.0);
    let norm_free = dual_norm_rank_k(&u, &coeffs, s)?;
    Ok(PerturbedDensity {
        density: DensityRep { lambda: l, rep: OperatorRep::DenseMatrix(chain), route: DensityRoute::Exact },
        norm_tilde,
        norm_free,
        ratio: norm_tilde / norm_free,
        hermitian_defect: defect,
        min_relative_eigenvalue,
        factorization_gap,
    })
}

/// The chain of [`perturbed_density`] at fixed `ε > 0` for matrices `H`, `V`:
/// `A_ε X⁺ - R(λ-iε) X⁺ V A_ε X⁻` with `X± = (I + V R(λ±iε))^{-1}`.
pub fn smoothed_chain(h: &DMatrix<C64>, v: &DMatrix<C64>, l: f64, eps: f64) -> Result<DMatrix<C64>> {
    let (a, rm, xp, xm) = smoothed_parts(h, v, l, eps)?;
    Ok(&a * &xp - &rm * &xp * v * &a * &xm)
}

/// The chain without the leading `R(λ-iε)` of the second term.
pub fn smoothed_chain_without_outer_resolvent(
    h: &DMatrix<C64>,
    v: &DMatrix<C64>,
    l: f64,
    eps: f64,
) -> Result<DMatrix<C64>> {
    let (a, _, xp, xm) = smoothed_parts(h, v, l, eps)?;
    Ok(&a * &xp - &xp * v * &a * &xm)
}

/// `(1/2πi)(X⁺ - X⁻)` and `-X⁺ V A_ε X⁻`, which agree exactly.
pub fn smoothed_inverse_jump(
    h: &DMatrix<C64>,
    v: &DMatrix<C64>,
    l: f64,
    eps: f64,
) -> Result<(DMatrix<C64>, DMatrix<C64>)> {
    let (a, _, xp, xm) = smoothed_parts(h, v, l, eps)?;
    let jump = (&xp - &xm) / C64::new(0.0, 2.0 * PI);
    let product = -(&xp * v * &a * &xm);
    Ok((jump, product))
}

type Parts = (DMatrix<C64>, DMatrix<C64>, DMatrix<C64>, DMatrix<C64>);

fn smoothed_parts(h: &DMatrix<C64>, v: &DMatrix<C64>, l: f64, eps: f64) -> Result<Parts> {
    if !(eps > 0.0) {
        return Err(Error::InvalidLambda { lambda: l, reason: "smoothed chain needs epsilon > 0".into() });
    }
    let n = h.nrows();
    let rp = matrix_resolvent(h, C64::new(l, eps))?;
    let rm = matrix_resolvent(h, C64::new(l, -eps))?;
    let a = (&rp - &rm) / C64::new(0.0, 2.0 * PI);
    let id = DMatrix::<C64>::identity(n, n);
    let xp = (&id + v * &rp).lu().try_inverse().ok_or(Error::Singular { lambda: l })?;
    let xm = (&id + v * &rm).lu().try_inverse().ok_or(Error::Singular { lambda: l })?;
    Ok((a, rm, xp, xm))
}

/// `(1/2πi)(R(λ+iε) - R(λ-iε))` for a Hermitian matrix.
pub fn stone_density(h: &DMatrix<C64>, l: f64, eps: f64) -> Result<DMatrix<C64>> {
    let rp = matrix_resolvent(h, C64::new(l, eps))?;
    let rm = matrix_resolvent(h, C64::new(l, -eps))?;
    Ok((rp - rm) / C64::new(0.0, 2.0 * PI))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LapRow {
    pub lambda: f64,
    pub inv_norm_plus: f64,
    pub inv_norm_minus: f64,
    pub vr_norm_plus: f64,
    pub vr_norm_minus: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LapScanReport {
    pub rows: Vec<LapRow>,
    pub sup_inv_norm: f64,
    pub argmax: f64,
    /// `max ‖VR±(λ)‖_{s,s}` over the top decade of the grid.
    pub top_decade_vr: f64,
    pub limsup_ok: bool,
    /// λ values where the inversion failed or exceeded the threshold.
    pub exclusions: Vec<f64>,
}

/// Default inverse-norm threshold above which a λ is reported as excluded.
pub const DEFAULT_EXCLUSION_THRESHOLD: f64 = 1e6;

pub fn lap_condition_scan(
    v: &PotentialSpec,
    grid: &SpatialGrid,
    s: WeightExponent,
    lambdas: &[f64],
    exclusion_threshold: f64,
) -> Result<LapScanReport> {
    if lambdas.len() < 4 {
        return Err(Error::Config(format!("lap scan needs at least 4 lambdas, got {}", lambdas.len())));
    }
    let (lo, hi) = (lambdas[0], lambdas[lambdas.len() - 1]);
    if !(lo > 0.0 && hi >= 100.0 * lo) {
        return Err(Error::Config(format!("lap scan must cover [d, L] with L >= 100 d, got [{lo}, {hi}]")));
    }
    let vm = v.matrix(grid)?;
    let support = v.support(grid)?;
    let mut rows = Vec::with_capacity(lambdas.len());
    let mut exclusions = Vec::new();
    for &l in lambdas {
        let eval = |sign| match assemble_with(&vm, &support, l, sign, grid, s) {
            Ok(st) => Ok((st.inv_norm_s, st.vr_norm_s)),
            Err(Error::Singular { .. }) => Ok((f64::INFINITY, f64::NAN)),
            Err(e) => Err(e),
        };
        let (ip, vp) = eval(Sign::Plus)?;
        let (im, vmn) = eval(Sign::Minus)?;
        if !(ip.max(im) <= exclusion_threshold) {
            exclusions.push(l);
        }
        rows.push(LapRow { lambda: l, inv_norm_plus: ip, inv_norm_minus: im, vr_norm_plus: vp, vr_norm_minus: vmn });
    }
    let mut sup_inv_norm = 0.0;
    let mut argmax = lambdas[0];
    for r in rows.iter().filter(|r| !exclusions.contains(&r.lambda)) {
        let m = r.inv_norm_plus.max(r.inv_norm_minus);
        if m > sup_inv_norm {
            sup_inv_norm = m;
            argmax = r.lambda;
        }
    }
    let top_decade_vr =
        rows.iter().filter(|r| r.lambda >= hi / 10.0).map(|r| r.vr_norm_plus.max(r.vr_norm_minus)).fold(0.0, f64::max);
    Ok(LapScanReport { rows, sup_inv_norm, argmax, top_decade_vr, limsup_ok: top_decade_vr < 1.0, exclusions })
}

/// Per-batch outcome of the perturbed smoothing estimate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbedSmoothingReport {
    /// `lhs(φ) / ‖φ‖` for each batch member.
    pub ratios: Vec<f64>,
    pub empirical_constant: f64,
    /// `√(2π) sup_λ (|σ|/a'^{1/2}) ‖Ã(λ)‖^{1/2}` over the quadrature and scan nodes.
    pub bound: f64,
    pub bound_argmax: f64,
    pub pass: bool,
}

/// Composite Gauss–Legendre nodes in `k = √λ` over the admissible segments.
pub(crate) fn k_rule(sf: &SpectralFunction, panels: usize, order: usize) -> Result<CompositeRule> {
    let segs = sf.segments();
    if segs.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let mut rules = Vec::new();
    for (lo, hi) in segs {
        if lo < 0.0 {
            return Err(Error::InvalidLambda { lambda: lo, reason: "window must lie in (0, inf)".into() });
        }
        let (a, b) = (lo.sqrt(), hi.sqrt());
        // Panels graded geometrically in k when the segment spans decades.
        if a > 0.0 && b / a > 4.0 {
            let edges = crate::quad::log_space(a, b, panels + 1);
            for w in edges.windows(2) {
                rules.push(CompositeRule::new(w[0], w[1], 1, order));
            }
        } else {
            rules.push(CompositeRule::new(a, b, panels, order));
        }
    }
    Ok(CompositeRule::concat(rules))
}

/// Spectral side of the `H̃` spacetime norm for each `φ` of the batch, against the sup bound.
pub fn perturbed_smoothing_check(
    model: &OperatorModel,
    sf: &SpectralFunction,
    s: WeightExponent,
    batch: &[GridFunction],
    panels: usize,
) -> Result<PerturbedSmoothingReport> {
    if model.kind() != ModelKind::PerturbedSchrodinger1D && model.kind() != ModelKind::FreeLaplacian1D {
        return Err(Error::Unsupported("perturbed smoothing check needs a line model".into()));
    }
    let grid = model.grid();
    let rule = k_rule(sf, panels, 8)?;
    let mut lhs2 = vec![0.0; batch.len()];
    let mut bound: f64 = 0.0;
    let mut bound_argmax = f64::NAN;
    let dx = grid.spacing();
    let w2: Vec<f64> = grid.nodes().iter().map(|&x| bracket(x).powf(-2.0 * s.0)).collect();
    for (&k, &wk) in rule.nodes.iter().zip(&rule.weights) {
        let l = k * k;
        let w = match model.kind() {
            ModelKind::FreeLaplacian1D => plane_pair(*grid, k),
            _ => distorted_plane_pair(model, l)?,
        };
        let coeffs = DMatrix::from_diagonal_element(2, 2, C64::new(1.0 / (2.0 * k), 0.0));
        let n_tilde = dual_norm_rank_k(&w, &coeffs, s)?;
        let b = sf.amplitude(l) * n_tilde.sqrt();
        if b > bound {
            bound = b;
            bound_argmax = l;
        }
        let weight = sf.weight(l) * 2.0 * k * wk;
        for (acc, phi) in lhs2.iter_mut().zip(batch) {
            let cp = phi.inner(&w[0]) / (2.0 * k);
            let cm = phi.inner(&w[1]) / (2.0 * k);
            let norm2: f64 = w[0]
                .values()
                .iter()
                .zip(w[1].values())
                .zip(&w2)
                .map(|((a, b), ww)| (cp * a + cm * b).norm_sqr() * ww)
                .sum::<f64>()
                * dx;
            *acc += weight * norm2;
        }
    }
    let bound = (2.0 * PI).sqrt() * bound;
    let ratios: Vec<f64> = lhs2.iter().zip(batch).map(|(l2, phi)| (2.0 * PI * l2).sqrt() / phi.norm()).collect();
    let empirical_constant = ratios.iter().cloned().fold(0.0, f64::max);
    Ok(PerturbedSmoothingReport {
        pass: empirical_constant <= bound * 1.01,
        ratios,
        empirical_constant,
        bound,
        bound_argmax,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{density_rep, free_kernel};
    use crate::models::{Smoothing, Window};
    use crate::quad::log_space;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gaussian_v(grid: &SpatialGrid, amp: f64) -> PotentialSpec {
        PotentialSpec::from_fn(grid, |x| amp * (-x * x).exp(), 1.0)
    }

    #[test]
    fn zero_potential_is_identity() {
        let g = SpatialGrid::new(6.0, 64).unwrap();
        let st = assemble_vr(&PotentialSpec::zero(&g), 2.0, Sign::Plus, &g, WeightExponent(1.0)).unwrap();
        assert_eq!(st.inv_norm_s, 1.0);
        assert_eq!(st.vr_norm_s, 0.0);
        let pd = perturbed_density(&g, &PotentialSpec::zero(&g), 2.0, WeightExponent(1.0)).unwrap();
        let a = density_rep(&OperatorModel::free(g), 2.0).unwrap().rep.to_dense(&g);
        let OperatorRep::DenseMatrix(at) = &pd.density.rep else { panic!() };
        assert!((at - &a).iter().all(|z| z.norm() <= 1e-12 * a.norm()));
        assert_relative_eq!(pd.ratio, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn neumann_series_oracle() {
        let g = SpatialGrid::new(6.0, 128).unwrap();
        let st = assemble_vr(&gaussian_v(&g, 0.05), 4.0, Sign::Plus, &g, WeightExponent(1.0)).unwrap();
        let m = st.support.len();
        let tn = top_singular_value(&st.vr);
        assert!(tn <= 0.5);
        let mut term = DMatrix::<C64>::identity(m, m);
        let mut sum = term.clone();
        for _ in 0..20 {
            term = -(&term * &st.vr);
            sum += &term;
        }
        assert!((sum - &st.inv).norm() < 1e-8 * st.inv.norm());
        // Geometric series bound on the unweighted inverse.
        assert!(top_singular_value(&st.inv) <= 1.0 / (1.0 - tn));
        let back = (DMatrix::identity(m, m) + &st.vr) * &st.inv;
        assert!((back - DMatrix::identity(m, m)).norm() < 1e-8);
    }

    #[test]
    fn boundary_kernel_solves_helmholtz_weakly() {
        // ∫ K⁺(x,y) (-f'' - λ f)(y) dy = f(x) for a test function f.
        let g = SpatialGrid::new(12.0, 1024).unwrap();
        let l = 1.7;
        let f = |x: f64| (-x * x).exp() * (1.0 + 0.3 * x);
        let d2 = |x: f64| {
            // f'' of e^{-x²}(1 + 0.3x)
            let e = (-x * x).exp();
            e * ((4.0 * x * x - 2.0) * (1.0 + 0.3 * x) - 1.2 * x)
        };
        let k = free_kernel(&g, C64::new(l, 0.0)).unwrap();
        let rhs: Vec<C64> = g.nodes().iter().map(|&x| C64::new(-d2(x) - l * f(x), 0.0)).collect();
        let applied = OperatorRep::IntegralKernel(k).apply(&g, &rhs);
        let mut err: f64 = 0.0;
        for (i, &x) in g.nodes().iter().enumerate() {
            if x.abs() < 4.0 {
                err = err.max((applied[i] - f(x)).norm());
            }
        }
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn free_resolvent_agmon_slope() {
        // ‖<x>^{-1} K± <x>^{-1}‖ on a fixed window, λ ∈ [10, 10³].
        let g = SpatialGrid::new(8.0, 512).unwrap();
        let lams = log_space(10.0, 1e3, 8);
        let norms: Vec<f64> = lams
            .iter()
            .map(|&l| {
                let rep = free_resolvent_kernel(l, Sign::Plus, &g).unwrap();
                crate::spaces::op_norm_weighted(&rep, &g, WeightExponent(-1.0), WeightExponent(-1.0)).unwrap()
            })
            .collect();
        let fit = crate::density::fit_power_law(&lams, &norms).unwrap();
        assert!((fit.slope + 0.5).abs() < 0.05, "{}", fit.slope);
    }

    fn random_hermitian(n: usize, seed: u64, scale: f64) -> DMatrix<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        (&a + a.adjoint()) * C64::new(0.5 * scale, 0.0)
    }

    #[test]
    fn smoothed_chain_is_exact_resolvent_algebra() {
        let h = random_hermitian(64, 1, 1.0);
        let v = random_hermitian(64, 2, 0.3);
        let (l, eps) = (0.4, 1e-2);
        let chain = smoothed_chain(&h, &v, l, eps).unwrap();
        let direct = stone_density(&(&h + &v), l, eps).unwrap();
        assert!((&chain - &direct).norm() <= 1e-10 * direct.norm());
        let printed = smoothed_chain_without_outer_resolvent(&h, &v, l, eps).unwrap();
        assert!((&printed - &direct).norm() > 1e-2 * direct.norm());
        let (jump, product) = smoothed_inverse_jump(&h, &v, l, eps).unwrap();
        assert!((&jump - &product).norm() <= 1e-8 * product.norm());
    }

    #[test]
    fn perturbed_density_is_psd_and_factorizations_agree() {
        let g = SpatialGrid::new(6.0, 128).unwrap();
        let v = gaussian_v(&g, 0.3);
        let pd = perturbed_density(&g, &v, 1.5, WeightExponent(1.0)).unwrap();
        assert!(pd.factorization_gap < 1e-10, "{}", pd.factorization_gap);
        assert!(pd.hermitian_defect < 1e-8);
        // Rank-2 route through the model agrees with the dense chain.
        let model = OperatorModel::perturbed(g, v).unwrap();
        let rep = density_rep(&model, 1.5).unwrap().rep.to_dense(&g);
        let OperatorRep::DenseMatrix(chain) = &pd.density.rep else { panic!() };
        assert!((rep - chain).norm() < 1e-10 * chain.norm());
        let n_model = crate::density::density_norm(&model, 1.5, WeightExponent(1.0)).unwrap();
        assert_relative_eq!(n_model, pd.norm_tilde, max_relative = 1e-8);
    }

    #[test]
    fn reflection_symmetry_for_even_potential() {
        let g = SpatialGrid::new(6.0, 128).unwrap();
        let model = OperatorModel::perturbed(g, gaussian_v(&g, 0.3)).unwrap();
        let phi = GridFunction::from_fn(g, |x| C64::new((-(x - 0.7).powi(2)).exp(), 0.2 * x));
        let reflected = GridFunction::from_fn(g, |x| C64::new((-(-x - 0.7).powi(2)).exp(), -0.2 * x));
        for l in [0.5, 2.0, 7.0] {
            let a = crate::density::density_pairing(&model, l, &phi, &phi).unwrap();
            let b = crate::density::density_pairing(&model, l, &reflected, &reflected).unwrap();
            assert_relative_eq!(a.re, b.re, max_relative = 1e-10);
        }
    }

    #[test]
    fn lap_scan_zero_and_gaussian() {
        let g = SpatialGrid::new(6.0, 128).unwrap();
        let lams = log_space(0.1, 1e3, 16);
        let zero = lap_condition_scan(&PotentialSpec::zero(&g), &g, WeightExponent(1.0), &lams, 1e6).unwrap();
        assert_eq!(zero.sup_inv_norm, 1.0);
        assert!(zero.limsup_ok);
        let r = |n: usize| {
            let g = SpatialGrid::new(6.0, n).unwrap();
            lap_condition_scan(&gaussian_v(&g, 0.3), &g, WeightExponent(1.0), &lams, 1e6).unwrap()
        };
        let (a, b) = (r(128), r(256));
        assert!(a.limsup_ok && a.exclusions.is_empty());
        assert!(a.sup_inv_norm.is_finite());
        assert_relative_eq!(a.sup_inv_norm, b.sup_inv_norm, max_relative = 0.01);
        assert!(lap_condition_scan(&gaussian_v(&g, 0.3), &g, WeightExponent(1.0), &[1.0, 2.0, 3.0, 4.0], 1e6).is_err());
    }

    #[test]
    fn resonance_peak_matches_determinant_minimum() {
        // Two barriers trap quasi-bound states; I + VR⁺ is nearly singular at their energies.
        let g = SpatialGrid::new(6.0, 256).unwrap();
        let v = PotentialSpec::from_fn(
            &g,
            |x| 20.0 * ((-4.0 * (x - 2.5).powi(2)).exp() + (-4.0 * (x + 2.5).powi(2)).exp()),
            1.0,
        );
        let lams = crate::quad::lin_space(0.2, 3.0, 281);
        let scan_grid: Vec<f64> = [0.001].into_iter().chain(lams.iter().copied()).collect();
        let scan = lap_condition_scan(&v, &g, WeightExponent(1.0), &[0.01, 0.1, 1.0, 1.5], 1e6).unwrap();
        assert!(scan.sup_inv_norm.is_finite());
        let norms: Vec<f64> = lams
            .iter()
            .map(|&l| {
                assemble_vr(&v, l, Sign::Plus, &g, WeightExponent(1.0)).map(|s| s.inv_norm_s).unwrap_or(f64::INFINITY)
            })
            .collect();
        let (imax, nmax) =
            norms.iter().cloned().enumerate().fold((0, 0.0), |a, (i, x)| if x > a.1 { (i, x) } else { a });
        let step = lams[1] - lams[0];
        // Golden-section minimization of |det| around the peak.
        let det = |l: f64| ls_determinant(&v, l, Sign::Plus, &g).unwrap();
        let (mut a, mut b) = (lams[imax] - 2.0 * step, lams[imax] + 2.0 * step);
        let r = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..60 {
            let (c, d) = (b - r * (b - a), a + r * (b - a));
            if det(c) < det(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let lmin = 0.5 * (a + b);
        assert!((lmin - lams[imax]).abs() <= 1.5 * step, "peak {} det min {lmin}", lams[imax]);
        let median = {
            let mut s = norms.clone();
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            s[s.len() / 2]
        };
        assert!(nmax > 20.0 * median, "peak {nmax} median {median}");
        let flagged = lap_condition_scan(&v, &g, WeightExponent(1.0), &scan_grid, 10.0 * median).unwrap();
        assert!(flagged.exclusions.iter().any(|&l| (l - lmin).abs() <= 1.5 * step));
    }

    #[test]
    fn zero_potential_smoothing_reduces_to_free() {
        let g = SpatialGrid::new(6.0, 128).unwrap();
        let sf = SpectralFunction::parse("(1+lambda)^0.25", "lambda", Window::new(0.1, 1e3).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch: Vec<GridFunction> = (0..4)
            .map(|_| {
                let c: f64 = rng.random_range(-1.0..1.0);
                GridFunction::from_fn(g, |x| C64::new((-(x - c).powi(2)).exp(), 0.0))
            })
            .collect();
        let free = perturbed_smoothing_check(&OperatorModel::free(g), &sf, WeightExponent(1.0), &batch, 24).unwrap();
        let zero = OperatorModel::perturbed(g, PotentialSpec::zero(&g)).unwrap();
        let pert = perturbed_smoothing_check(&zero, &sf, WeightExponent(1.0), &batch, 24).unwrap();
        assert_eq!(free.ratios, pert.ratios);
        assert_eq!(free.bound, pert.bound);
        assert!(free.pass);
        let _ = Smoothing::default();
    }
}
