//! Computable operator representations and weighted operator norms.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{fourier, inverse_fourier, pairing, FrequencyFunction, GridFunction, SpatialGrid, WeightExponent};
use crate::error::{Error, Result};

/// An operator acting on grid samples.
///
/// Dense and kernel forms both act on value vectors; the kernel form carries
/// the quadrature weight `spacing`, so `(K f)_i = Σ_j K_ij f_j dx`.
#[derive(Debug, Clone)]
pub enum OperatorRep {
    DenseMatrix(DMatrix<C64>),
    /// Real multiplier `m(ξ)` sampled on the frequency grid.
    FourierMultiplier(Vec<f64>),
    /// `f ↦ Σ_{j,l} C_jl (f, u_l) u_j`.
    RankKFactored {
        vectors: Vec<GridFunction>,
        coeffs: DMatrix<C64>,
    },
    IntegralKernel(DMatrix<C64>),
}

impl OperatorRep {
    pub fn apply(&self, grid: &SpatialGrid, f: &[C64]) -> Vec<C64> {
        match self {
            OperatorRep::DenseMatrix(m) => mat_vec(m, f, 1.0),
            OperatorRep::IntegralKernel(k) => mat_vec(k, f, grid.spacing()),
            OperatorRep::FourierMultiplier(mult) => {
                let g = GridFunction::from_values_unchecked(*grid, f.to_vec());
                let mut fh = fourier(&g);
                for (v, m) in fh.values_mut().iter_mut().zip(mult) {
                    *v *= m;
                }
                inverse_fourier(&fh).into_values()
            }
            OperatorRep::RankKFactored { vectors, coeffs } => rank_k_apply(grid.spacing(), vectors, coeffs, f, false),
        }
    }

    /// Adjoint with respect to the grid L² pairing.
    pub fn apply_adjoint(&self, grid: &SpatialGrid, f: &[C64]) -> Vec<C64> {
        match self {
            OperatorRep::DenseMatrix(m) => mat_vec(&m.adjoint(), f, 1.0),
            OperatorRep::IntegralKernel(k) => mat_vec(&k.adjoint(), f, grid.spacing()),
            OperatorRep::FourierMultiplier(_) => self.apply(grid, f),
            OperatorRep::RankKFactored { vectors, coeffs } => rank_k_apply(grid.spacing(), vectors, coeffs, f, true),
        }
    }

    pub fn apply_fn(&self, f: &GridFunction) -> GridFunction {
        GridFunction::from_values_unchecked(*f.grid(), self.apply(f.grid(), f.values()))
    }

    /// Matrix acting on value vectors.
    pub fn to_dense(&self, grid: &SpatialGrid) -> DMatrix<C64> {
        match self {
            OperatorRep::DenseMatrix(m) => m.clone(),
            OperatorRep::IntegralKernel(k) => k * C64::new(grid.spacing(), 0.0),
            _ => {
                let n = grid.len();
                let mut out = DMatrix::zeros(n, n);
                let mut e = vec![C64::new(0.0, 0.0); n];
                for j in 0..n {
                    e[j] = C64::new(1.0, 0.0);
                    let col = self.apply(grid, &e);
                    for (i, v) in col.into_iter().enumerate() {
                        out[(i, j)] = v;
                    }
                    e[j] = C64::new(0.0, 0.0);
                }
                out
            }
        }
    }
}

fn mat_vec(m: &DMatrix<C64>, f: &[C64], scale: f64) -> Vec<C64> {
    let v = DVector::from_column_slice(f);
    let out = m * v;
    out.iter().map(|z| z * scale).collect()
}

fn rank_k_apply(dx: f64, vectors: &[GridFunction], coeffs: &DMatrix<C64>, f: &[C64], adjoint: bool) -> Vec<C64> {
    let k = vectors.len();
    let proj: Vec<C64> = vectors.iter().map(|u| pairing(dx, f, u.values())).collect();
    let n = f.len();
    let mut out = vec![C64::new(0.0, 0.0); n];
    for j in 0..k {
        let mut c = C64::new(0.0, 0.0);
        for (l, p) in proj.iter().enumerate() {
            let cjl = if adjoint { coeffs[(l, j)].conj() } else { coeffs[(j, l)] };
            c += cjl * p;
        }
        for (o, u) in out.iter_mut().zip(vectors[j].values()) {
            *o += c * u;
        }
    }
    out
}

/// Relative Hermitian defect `max|M - M*| / max|M|`.
pub fn hermitian_defect(m: &DMatrix<C64>) -> f64 {
    let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    let mut dev: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev / scale
}

#[derive(Debug, Clone, Copy)]
pub struct PowerIterationOptions {
    pub rel_tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for PowerIterationOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-8, max_iter: 10_000, seed: 0xC0FFEE }
    }
}

/// Top eigenpair of a Hermitian positive semidefinite operator on `C^dim`.
pub fn power_iteration(
    dim: usize,
    apply: impl Fn(&[C64]) -> Vec<C64>,
    opts: PowerIterationOptions,
) -> Result<(f64, Vec<C64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut v: Vec<C64> = (0..dim).map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
    normalize(&mut v);
    let mut mu_prev = f64::NAN;
    let mut gap = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let mut w = apply(&v);
        let mu: f64 = v.iter().zip(&w).map(|(a, b)| (a.conj() * b).re).sum();
        let wn = norm(&w);
        if wn == 0.0 {
            return Ok((0.0, v));
        }
        if mu_prev.is_finite() {
            gap = (mu - mu_prev).abs();
            if gap <= opts.rel_tol * mu.abs() {
                return Ok((mu, v));
            }
        }
        mu_prev = mu;
        w.iter_mut().for_each(|z| *z /= wn);
        v = w;
    }
    Err(Error::NoConvergence { iterations: opts.max_iter, gap })
}

fn norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn normalize(v: &mut [C64]) {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|z| *z /= n);
    }
}

/// Operator norm of `<x>^{s_out} ∘ rep ∘ <x>^{s_in}` on the grid L² space.
pub fn op_norm_weighted(
    rep: &OperatorRep,
    grid: &SpatialGrid,
    s_in: WeightExponent,
    s_out: WeightExponent,
) -> Result<f64> {
    op_norm_weighted_with(rep, grid, s_in, s_out, PowerIterationOptions::default())
}

pub fn op_norm_weighted_with(
    rep: &OperatorRep,
    grid: &SpatialGrid,
    s_in: WeightExponent,
    s_out: WeightExponent,
    opts: PowerIterationOptions,
) -> Result<f64> {
    let w_in: Vec<f64> = grid.nodes().iter().map(|&x| s_in.weight(x)).collect();
    let w_out: Vec<f64> = grid.nodes().iter().map(|&x| s_out.weight(x)).collect();
    let normal = |v: &[C64]| {
        let a: Vec<C64> = v.iter().zip(&w_in).map(|(z, w)| z * w).collect();
        let b: Vec<C64> = rep.apply(grid, &a).into_iter().zip(&w_out).map(|(z, w)| z * w * w).collect();
        rep.apply_adjoint(grid, &b).into_iter().zip(&w_in).map(|(z, w)| z * w).collect()
    };
    let (mu, _) = power_iteration(grid.len(), normal, opts)?;
    Ok(mu.max(0.0).sqrt())
}

/// Value and maximizer of `sup_{‖f‖_{L²_s}=1} <A f, f>` for a factored form.
#[derive(Debug, Clone)]
pub struct FormSup {
    /// The supremum of the form (the square of the `sup <Af,f>^{1/2}` convention).
    pub value: f64,
    /// A unit vector of `L²_s` attaining the supremum.
    pub maximizer: GridFunction,
}

/// Sup of the nonnegative form of a rank-k factored operator over unit `L²_s` vectors,
/// via the k×k problem `C^{1/2} G C^{1/2}` with `G` the `<x>^{-2s}` Gram matrix.
pub fn dual_norm_rank_k(vectors: &[GridFunction], coeffs: &DMatrix<C64>, s: WeightExponent) -> Result<f64> {
    Ok(form_maximizer(vectors, coeffs, s)?.value)
}

pub fn form_maximizer(vectors: &[GridFunction], coeffs: &DMatrix<C64>, s: WeightExponent) -> Result<FormSup> {
    let k = vectors.len();
    if coeffs.nrows() != k || coeffs.ncols() != k {
        return Err(Error::LengthMismatch { expected: k, got: coeffs.nrows() });
    }
    let grid =
        *vectors.first().ok_or_else(|| Error::InvalidGrid("rank-k form needs at least one vector".into()))?.grid();
    if hermitian_defect(coeffs) > 1e-12 {
        return Err(Error::NotNonnegative { min_eig: f64::NAN });
    }
    let eig = SymmetricEigen::new(coeffs.clone());
    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig < -1e-12 * max_eig.max(1.0) {
        return Err(Error::NotNonnegative { min_eig });
    }
    let sqrt_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|e| C64::new(e.max(0.0).sqrt(), 0.0)));
    let c_half = &eig.eigenvectors * sqrt_diag * eig.eigenvectors.adjoint();

    let weighted: Vec<GridFunction> = vectors.iter().map(|u| u.weighted(-s)).collect();
    // gram[(j, l)] = (w_l, w_j)
    let gram = DMatrix::from_fn(k, k, |j, l| weighted[l].inner(&weighted[j]));
    let reduced = &c_half * gram * &c_half;
    let reduced = (&reduced + reduced.adjoint()) * C64::new(0.5, 0.0);
    let red = SymmetricEigen::new(reduced);
    let (imax, value) =
        red.eigenvalues
            .iter()
            .cloned()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, e)| if e > acc.1 { (i, e) } else { acc });
    let value = value.max(0.0);

    let y = red.eigenvectors.column(imax).into_owned();
    let coef = &c_half * y;
    let mut g = GridFunction::zeros(grid);
    for (j, w) in weighted.iter().enumerate() {
        g = g.add(&w.scaled(coef[j]));
    }
    let gn = g.norm();
    let maximizer = if gn > 0.0 { g.scaled(C64::new(1.0 / gn, 0.0)).weighted(-s) } else { g };
    Ok(FormSup { value, maximizer })
}

#[allow(dead_code)]
pub(crate) fn to_frequency(grid: &SpatialGrid, values: Vec<C64>) -> FrequencyFunction {
    FrequencyFunction::from_values(*grid, values)
}
