//! Time side and spectral side of the smoothing identities, and the a priori bound.
//!
//! On the free line the time side is a Fourier integral in `η = a(λ)`,
//! `F(t) = ∫ e^{itη} G(η) dη` with `G = σ p / a'`, evaluated on the whole time
//! grid at once: `G` is sampled on a uniform `η` lattice whose spacing matches an
//! FFT length, and each panel is integrated exactly against `e^{itη}` after
//! linear interpolation (Filon). Matrix models go through the same transform
//! with their Lorentzian-smoothed density in place of `A(λ)`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::density::{density_norms, lorentzian, PairingOracle};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::models::{sample_points, ModelKind, OperatorModel, SpectralFunction};
use crate::quad::{adaptive_simpson, log_space, CompositeRule};
use crate::spaces::{bracket, fourier_at, GridFunction, SpatialGrid, WeightExponent};

/// Uniform nodes `t_j = (j - m/2) Δt`, `Δt = 2 t_max / m`, on `[-t_max, t_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_max: f64,
    pub m_points: usize,
}

impl TimeGrid {
    pub fn new(t_max: f64, m_points: usize) -> Result<Self> {
        if !(t_max.is_finite() && t_max > 0.0) {
            return Err(Error::Config(format!("t_max must be positive, got {t_max}")));
        }
        if m_points < 2 || m_points % 2 != 0 {
            return Err(Error::Config(format!("time grid needs an even point count, got {m_points}")));
        }
        Ok(Self { t_max, m_points })
    }

    pub fn dt(&self) -> f64 {
        2.0 * self.t_max / self.m_points as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        (j as f64 - (self.m_points / 2) as f64) * self.dt()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.m_points).map(|j| self.node(j)).collect()
    }

    /// `π m / (2 t_max)`, the largest `|a|` the grid resolves.
    pub fn nyquist_limit(&self) -> f64 {
        PI * self.m_points as f64 / (2.0 * self.t_max)
    }

    pub fn check_nyquist(&self, sf: &SpectralFunction) -> Result<()> {
        let max_a = sf.segments().iter().flat_map(|&(lo, hi)| [sf.a(lo).abs(), sf.a(hi).abs()]).fold(0.0, f64::max);
        let limit = self.nyquist_limit();
        if max_a > limit {
            return Err(Error::Nyquist { max_a, limit });
        }
        Ok(())
    }
}

/// Time grid, Filon step in `η` and relative tolerance of the spectral-side quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub time: TimeGrid,
    pub filon_step: f64,
    pub rhs_tol: f64,
}

impl Resolution {
    /// Level `k` halves `Δt`, the Filon step and the tolerance of level `k - 1`
    /// and doubles `t_max`. Level 0 has `Δt = 0.025`, `t_max = 409.6`.
    pub fn level(k: u32) -> Self {
        let f = 2f64.powi(k as i32);
        let t_max = 409.6 * f;
        let dt = 0.025 / f;
        let m = (2.0 * t_max / dt).round() as usize;
        Self { time: TimeGrid { t_max, m_points: m }, filon_step: 2e-3 / f, rhs_tol: 1e-6 / f }
    }
}

impl Default for Resolution {
    fn default() -> Self {
        Self::level(0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentityReport {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    /// Estimated `∫_{|t| > t_max}` contribution to `lhs²`, already included in `lhs`.
    pub truncation_tail_estimate: f64,
    pub resolution: Resolution,
}

impl IdentityReport {
    fn new(body: f64, tail: f64, rhs: f64, resolution: Resolution) -> Result<Self> {
        let total = body + tail;
        if tail > 0.1 * total {
            return Err(Error::TMaxTooSmall { tail, total });
        }
        let lhs = total.sqrt();
        let residual = (lhs - rhs).abs() / rhs.max(1e-300);
        Ok(Self { lhs, rhs, residual, truncation_tail_estimate: tail, resolution })
    }
}

// ---------------------------------------------------------------------------
// Filon rule on a uniform η lattice

struct Filon {
    times: Vec<f64>,
    big_m: usize,
    h: f64,
    fft: Arc<dyn Fft<f64>>,
}

impl Filon {
    fn new(tg: &TimeGrid, h_target: f64) -> Self {
        let dt = tg.dt();
        let need = (2.0 * PI / (dt * h_target)).ceil() as usize;
        let big_m = need.max(tg.m_points).next_power_of_two();
        let h = 2.0 * PI / (big_m as f64 * dt);
        let fft = FftPlanner::new().plan_fft_inverse(big_m);
        Self { times: tg.nodes(), big_m, h, fft }
    }

    /// Full panels and the width of a trailing partial panel.
    fn layout(&self, lo: f64, hi: f64) -> (usize, Option<f64>) {
        let span = hi - lo;
        let n = (span / self.h).floor() as usize;
        let rest = span - n as f64 * self.h;
        if rest > 1e-9 * self.h {
            (n, Some(rest))
        } else {
            (n, None)
        }
    }

    fn nodes(&self, lo: f64, hi: f64) -> Vec<f64> {
        let (n, partial) = self.layout(lo, hi);
        let mut out: Vec<f64> = (0..=n).map(|i| lo + i as f64 * self.h).collect();
        if partial.is_some() {
            out.push(hi);
        }
        out
    }

    /// `∫_lo^hi e^{itη} G(η) dη` for every grid time, `G` linear between the samples.
    fn transform(&self, lo: f64, hi: f64, g: &[C64]) -> Vec<C64> {
        let (n, partial) = self.layout(lo, hi);
        debug_assert_eq!(g.len(), n + 1 + partial.is_some() as usize);
        let mm = self.big_m;
        let mut buf = vec![C64::new(0.0, 0.0); mm];
        for (i, v) in g[..=n].iter().enumerate() {
            buf[i % mm] += v;
        }
        self.fft.process(&mut buf);
        let m = self.times.len() as i64;
        let eta_n = lo + n as f64 * self.h;
        self.times
            .iter()
            .enumerate()
            .map(|(j, &t)| {
                // t_j i h = (j - m/2) i 2π / M
                let idx = (j as i64 - m / 2).rem_euclid(mm as i64) as usize;
                let e0 = C64::from_polar(1.0, t * lo);
                let en = C64::from_polar(1.0, t * eta_n);
                let s = buf[idx] * e0;
                let mut total = C64::new(0.0, 0.0);
                if n > 0 {
                    let theta = t * self.h;
                    let (i0, i1) = filon_weights(theta);
                    total = self.h * (i0 * (s - g[n] * en) + i1 * C64::from_polar(1.0, -theta) * (s - g[0] * e0));
                }
                if let Some(hp) = partial {
                    let (p0, p1) = filon_weights(t * hp);
                    total += hp * en * (g[n] * p0 + g[n + 1] * p1);
                }
                total
            })
            .collect()
    }
}

/// `(∫_0^1 (1-u) e^{iθu} du, ∫_0^1 u e^{iθu} du)`.
fn filon_weights(theta: f64) -> (C64, C64) {
    let z = C64::new(0.0, theta);
    if theta.abs() < 0.5 {
        let mut term = C64::new(1.0, 0.0);
        let (mut e, mut i1) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0));
        for n in 0..20 {
            e += term / (n + 1) as f64;
            i1 += term / (n + 2) as f64;
            term = term * z / (n + 1) as f64;
        }
        (e - i1, i1)
    } else {
        let ez = z.exp();
        let e = (ez - 1.0) / z;
        let i1 = ez / z - (ez - 1.0) / (z * z);
        (e - i1, i1)
    }
}

/// `λ(η)` for increasing `a` on `[lo, hi]`, by bisection from the previous node.
fn invert_a(sf: &SpectralFunction, lo: f64, hi: f64, etas: &[f64]) -> Vec<f64> {
    if *sf.a_expr() == Expr::var() {
        return etas.iter().map(|&e| e.clamp(lo, hi)).collect();
    }
    let mut out = Vec::with_capacity(etas.len());
    let mut left = lo;
    for &eta in etas {
        let (mut a, mut b) = (left, hi);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if sf.a(mid) < eta {
                a = mid;
            } else {
                b = mid;
            }
        }
        out.push(0.5 * (a + b));
        left = a;
    }
    out
}

/// Filon time transform summed over the segments; `g(λ)` must return the samples
/// of `σ p / a'` for every channel.
fn filon_channels(
    sf: &SpectralFunction,
    filon: &Filon,
    channels: usize,
    g: impl Fn(f64) -> Result<Vec<C64>> + Sync,
) -> Result<Vec<Vec<C64>>> {
    let m = filon.times.len();
    let mut out = vec![vec![C64::new(0.0, 0.0); m]; channels];
    for (lo, hi) in sf.segments() {
        let (elo, ehi) = (sf.a(lo), sf.a(hi));
        let etas = filon.nodes(elo, ehi);
        let lams = invert_a(sf, lo, hi, &etas);
        let samples: Vec<Vec<C64>> = lams.par_iter().map(|&l| g(l)).collect::<Result<_>>()?;
        for (c, acc) in out.iter_mut().enumerate() {
            let col: Vec<C64> = samples.iter().map(|v| v[c]).collect();
            if col.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
                return Err(Error::Quadrature("time-side integrand is not finite".into()));
            }
            for (a, b) in acc.iter_mut().zip(filon.transform(elo, ehi, &col)) {
                *a += b;
            }
        }
        edge_correction(sf, filon, (lo, hi), &etas, &lams, &samples, &g, &mut out)?;
    }
    Ok(out)
}

/// Panels replaced near a lower edge sitting close to `λ = 0`. The interpolation
/// error of the remaining panels scales like `h^{1/2} K^{-3/2}`.
const EDGE_PANELS: usize = 2048;

/// Near `λ = 0` the density grows like `λ^{-1/2}` and linear interpolation in `η`
/// is poor. When the edge sits within four panel widths of the origin, the Filon
/// contribution of the first panels is swapped for Gauss–Legendre in `k = √λ`.
#[allow(clippy::too_many_arguments)]
fn edge_correction(
    sf: &SpectralFunction,
    filon: &Filon,
    (lo, hi): (f64, f64),
    etas: &[f64],
    lams: &[f64],
    samples: &[Vec<C64>],
    g: &(impl Fn(f64) -> Result<Vec<C64>> + Sync),
    out: &mut [Vec<C64>],
) -> Result<()> {
    let panels = EDGE_PANELS.min(etas.len() - 1);
    if !(lo >= 0.0) || panels == 0 {
        return Ok(());
    }
    let l1 = lams[panels].min(hi);
    if lo >= (lams[1.min(panels)] - lo) * 4.0 {
        return Ok(());
    }
    let (k0, k1) = (lo.sqrt(), l1.sqrt());
    let span = etas[panels] - etas[0];
    let osc = (filon.times.last().map_or(0.0, |t| t.abs()).max(filon.times[0].abs()) * span / PI).ceil() as usize;
    let split = k1 / 16.0;
    let mut rules = Vec::new();
    let start = if k0 < split {
        let a = if k0 > 0.0 { k0 } else { split * 1e-6 };
        if k0 == 0.0 {
            rules.push(CompositeRule::new(0.0, a, 1, 8));
        }
        rules.extend(log_space(a, split, 9).windows(2).map(|w| CompositeRule::new(w[0], w[1], 1, 8)));
        split
    } else {
        k0
    };
    rules.push(CompositeRule::new(start, k1, osc + 4, 8));
    let rule = CompositeRule::concat(rules);
    let nodes: Vec<(f64, f64)> =
        rule.nodes.iter().zip(&rule.weights).map(|(&k, &w)| (sf.a(k * k), w * 2.0 * k * sf.a_prime(k * k))).collect();
    let exact: Vec<Vec<C64>> = rule.nodes.par_iter().map(|&k| g(k * k)).collect::<Result<_>>()?;
    if exact.iter().flatten().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::Quadrature("time-side integrand is not finite near the lower edge".into()));
    }
    let h = filon.h;
    let delta: Vec<Vec<C64>> = filon
        .times
        .par_iter()
        .map(|&t| {
            let (i0, i1) = filon_weights(t * h);
            let mut d = vec![C64::new(0.0, 0.0); out.len()];
            for i in 0..panels {
                let e = C64::from_polar(h, t * etas[i]);
                for (c, dc) in d.iter_mut().enumerate() {
                    *dc -= e * (samples[i][c] * i0 + samples[i + 1][c] * i1);
                }
            }
            for (&(eta, w), v) in nodes.iter().zip(&exact) {
                let e = C64::from_polar(w, t * eta);
                for (c, dc) in d.iter_mut().enumerate() {
                    *dc += e * v[c];
                }
            }
            d
        })
        .collect();
    for (j, d) in delta.into_iter().enumerate() {
        for (c, v) in d.into_iter().enumerate() {
            out[c][j] += v;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Truncation tail

/// Value and first two `η`-derivatives of `G` at each segment edge, every channel.
type Jet = [Vec<C64>; 3];

fn edge_jets(sf: &SpectralFunction, step: f64, g: &(dyn Fn(f64) -> Result<Vec<C64>> + Sync)) -> Result<Vec<Jet>> {
    let mut out = Vec::new();
    for (lo, hi) in sf.segments() {
        let (elo, ehi) = (sf.a(lo), sf.a(hi));
        let d = step.min((ehi - elo) / 4.0);
        for (etas, dir) in [([elo, elo + d, elo + 2.0 * d], 1.0), ([ehi - 2.0 * d, ehi - d, ehi], -1.0)] {
            let lams = invert_a(sf, lo, hi, &etas);
            let v: Vec<Vec<C64>> = lams.iter().map(|&l| g(l)).collect::<Result<_>>()?;
            // (a, b, c) ordered away from the edge
            let (a, b, c) = if dir > 0.0 { (&v[0], &v[1], &v[2]) } else { (&v[2], &v[1], &v[0]) };
            let g1 = (0..a.len()).map(|i| (-3.0 * a[i] + 4.0 * b[i] - c[i]) * (dir / (2.0 * d))).collect();
            let g2 = (0..a.len()).map(|i| (a[i] - 2.0 * b[i] + c[i]) / (d * d)).collect();
            out.push([a.clone(), g1, g2]);
        }
    }
    Ok(out)
}

/// `∫_{|t|>T} ‖F‖² dt` from the edge expansion
/// `F(t) ~ Σ_edges ± e^{itη_e} (G/(it) - G'/(it)² + G''/(it)³)`;
/// cross terms between distinct edges oscillate and are dropped.
/// `form(u, v)` is the sesquilinear form whose diagonal is `‖·‖²`.
/// Edges whose leading term is below `1e-6 body + floor` skip the validity check.
fn edge_tail(jets: &[Jet], t_max: f64, body: f64, floor: f64, form: impl Fn(&[C64], &[C64]) -> C64) -> Result<f64> {
    let mut tail = 0.0;
    for [g0, g1, g2] in jets {
        if g0.iter().chain(g1).chain(g2).any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::Quadrature("edge values of the time-side integrand are not finite".into()));
        }
        let lead = form(g0, g0).re;
        let slope = form(g1, g1).re;
        // The expansion is only meaningful once t_max resolves the edge structure.
        if 2.0 * lead / t_max > 1e-6 * body + floor && slope > 0.25 * t_max * t_max * lead {
            return Err(Error::TMaxTooSmall { tail: f64::INFINITY, total: f64::NAN });
        }
        let next = slope - 2.0 * form(g0, g2).re;
        tail += 2.0 * lead / t_max + 2.0 * next / (3.0 * t_max.powi(3));
    }
    Ok(tail.max(0.0))
}

fn plain_form(u: &[C64], v: &[C64]) -> C64 {
    u.iter().zip(v).map(|(a, b)| a.conj() * b).sum()
}

// ---------------------------------------------------------------------------
// Spectral-side integrals

/// `∫_{J∖𝒩} f(λ) dλ` to relative tolerance `tol`, in `k = √λ` on positive segments.
/// `floor` is an absolute tolerance below which the integrand is treated as rounding noise.
fn spectral_integral(sf: &SpectralFunction, tol: f64, floor: f64, f: impl Fn(f64) -> f64) -> Result<f64> {
    let mut pieces: Vec<(f64, f64, bool)> = Vec::new();
    for (lo, hi) in sf.segments() {
        if lo >= 0.0 {
            pieces.push((lo.sqrt(), hi.sqrt(), true));
        } else {
            pieces.push((lo, hi, false));
        }
    }
    let g = |x: f64, in_k: bool| if in_k { 2.0 * x * f(x * x) } else { f(x) };
    let rough: f64 = pieces.iter().map(|&(a, b, k)| CompositeRule::new(a, b, 16, 8).integrate(|x| g(x, k)).abs()).sum();
    if !rough.is_finite() {
        return Err(Error::Quadrature("spectral-side integrand is not finite".into()));
    }
    if rough == 0.0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for &(a, b, k) in &pieces {
        total += adaptive_simpson(|x| g(x, k), a, b, tol * rough + floor)?;
    }
    Ok(total)
}

/// Relative size of rounding noise in the spectral-side integrands.
const NOISE: f64 = 1e-15;

/// `max σ²/a'` over a coarse sample of `J∖𝒩`.
fn sup_weight(sf: &SpectralFunction) -> f64 {
    default_lambda_grid(sf, 32).into_iter().map(|l| sf.weight(l).abs()).filter(|w| w.is_finite()).fold(0.0, f64::max)
}

/// `λ ↦ ‖A(λ)φ‖²_{-s}` with setup shared across evaluations.
pub(crate) enum DualOracle<'a> {
    Free { phi: &'a GridFunction, w2: Vec<f64>, xs: Vec<f64> },
    Perturbed { model: &'a OperatorModel, phi: &'a GridFunction, w2: Vec<f64> },
    Matrix { model: &'a OperatorModel, coeffs: Vec<C64>, gram: DMatrix<C64> },
}

fn weights_sq(grid: &SpatialGrid, s: WeightExponent) -> Vec<f64> {
    grid.nodes().iter().map(|&x| bracket(x).powf(-2.0 * s.0)).collect()
}

impl<'a> DualOracle<'a> {
    pub(crate) fn new(model: &'a OperatorModel, phi: &'a GridFunction, s: WeightExponent) -> Result<Self> {
        if phi.grid() != model.grid() {
            return Err(Error::InvalidGrid("function and model grids differ".into()));
        }
        let grid = model.grid();
        Ok(match model.kind() {
            ModelKind::FreeLaplacian1D => DualOracle::Free { phi, w2: weights_sq(grid, s), xs: grid.nodes() },
            ModelKind::PerturbedSchrodinger1D => DualOracle::Perturbed { model, phi, w2: weights_sq(grid, s) },
            _ => {
                let eig = model.eigen().expect("matrix model");
                let w2 = weights_sq(grid, s);
                DualOracle::Matrix { model, coeffs: eig.coefficients(phi.values()), gram: eig.weighted_gram(&w2) }
            }
        })
    }

    pub(crate) fn at(&self, l: f64) -> Result<f64> {
        match self {
            DualOracle::Free { phi, w2, xs } => {
                let k = l.sqrt();
                let c = 1.0 / ((2.0 * PI).sqrt() * 2.0 * k);
                let (ap, am) = (fourier_at(phi, k) * c, fourier_at(phi, -k) * c);
                let dx = phi.grid().spacing();
                Ok(xs
                    .iter()
                    .zip(w2)
                    .map(|(&x, &w)| {
                        let e = C64::from_polar(1.0, k * x);
                        (ap * e + am * e.conj()).norm_sqr() * w
                    })
                    .sum::<f64>()
                    * dx)
            }
            DualOracle::Perturbed { model, phi, w2 } => {
                let v = crate::density::density_apply(model, l, phi)?;
                let dx = phi.grid().spacing();
                Ok(v.values().iter().zip(w2).map(|(z, w)| z.norm_sqr() * w).sum::<f64>() * dx)
            }
            DualOracle::Matrix { model, coeffs, gram } => {
                let eps = model
                    .epsilon_at(l)
                    .filter(|e| *e > 0.0)
                    .ok_or_else(|| Error::Unsupported("model has no smoothed density route".into()))?;
                let eig = model.eigen().expect("matrix model");
                let n = coeffs.len();
                let dx = model.grid().spacing();
                let v = DVector::from_iterator(
                    n,
                    eig.values.iter().zip(coeffs).map(|(&lk, c)| c * lorentzian(l - lk, eps)),
                );
                // A_ε φ = V (L ∘ c) on values; its weighted norm carries one dx.
                Ok((v.adjoint() * gram * &v)[(0, 0)].re * dx)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Public operations

/// `F(t_j) = (σ(H) e^{it_j a(H)} P_ac E(J) φ, ψ)` on the time grid.
pub fn evolve_signal(
    model: &OperatorModel,
    sf: &SpectralFunction,
    phi: &GridFunction,
    psi: &GridFunction,
    res: &Resolution,
) -> Result<Vec<C64>> {
    Ok(signal_with_tail(model, sf, phi, psi, res, false)?.0)
}

fn signal_with_tail(
    model: &OperatorModel,
    sf: &SpectralFunction,
    phi: &GridFunction,
    psi: &GridFunction,
    res: &Resolution,
    with_tail: bool,
) -> Result<(Vec<C64>, f64)> {
    res.time.check_nyquist(sf)?;
    let oracle = PairingOracle::new(model, phi, psi)?;
    let filon = Filon::new(&res.time, res.filon_step);
    let g = |l: f64| Ok(vec![oracle.at(l)? * (sf.sigma(l) / sf.a_prime(l))]);
    let f = filon_channels(sf, &filon, 1, g)?.pop().expect("one channel");
    let mut tail = 0.0;
    if with_tail {
        let body = res.time.dt() * f.iter().map(|z| z.norm_sqr()).sum::<f64>();
        tail = edge_tail(
            &edge_jets(sf, filon.h, &g)?,
            res.time.t_max,
            body,
            NOISE * sup_weight(sf) * (phi.norm() * psi.norm()).powi(2),
            plain_form,
        )?;
    }
    Ok((f, tail))
}

/// Both sides of `‖F‖_{L²(R_t)} = √(2π) ‖(σ/a'^{1/2}) <A(λ)φ, ψ>‖_{L²(J)}`.
pub fn identity_scalar(
    model: &OperatorModel,
    sf: &SpectralFunction,
    phi: &GridFunction,
    psi: &GridFunction,
    res: &Resolution,
) -> Result<IdentityReport> {
    let (f, tail) = signal_with_tail(model, sf, phi, psi, res, true)?;
    let body = res.time.dt() * f.iter().map(|z| z.norm_sqr()).sum::<f64>();
    IdentityReport::new(body, tail, scalar_spectral_side(model, sf, phi, psi, res.rhs_tol)?, *res)
}

/// `√(2π) ‖(σ/a'^{1/2}) <A(λ)φ, ψ>‖_{L²(J)}` by adaptive quadrature to relative tolerance `tol`.
pub fn scalar_spectral_side(
    model: &OperatorModel,
    sf: &SpectralFunction,
    phi: &GridFunction,
    psi: &GridFunction,
    tol: f64,
) -> Result<f64> {
    let oracle = PairingOracle::new(model, phi, psi)?;
    let floor = NOISE * sup_weight(sf) * (phi.norm() * psi.norm()).powi(2);
    let integral =
        spectral_integral(sf, tol, floor, |l| oracle.at(l).map(|p| sf.weight(l) * p.norm_sqr()).unwrap_or(f64::NAN))?;
    Ok((2.0 * PI * integral).sqrt())
}

/// `Q(t_j) = ‖σ(H) e^{it_j a(H)} P_ac E(J) φ‖²_{-s}` on the time grid.
pub fn evolve_weighted(
    model: &OperatorModel,
    sf: &SpectralFunction,
    phi: &GridFunction,
    s: WeightExponent,
    res: &Resolution,
) -> Result<Vec<f64>> {
    Ok(weighted_with_tail(model, sf, phi, s, res)?.0)
}

fn weighted_with_tail(
    model: &OperatorModel,
    sf: &SpectralFunction,
    phi: &GridFunction,
    s: WeightExponent,
    res: &Resolution,
) -> Result<(Vec<f64>, f64)> {
    res.time.check_nyquist(sf)?;
    if phi.grid() != model.grid() {
        return Err(Error::InvalidGrid("function and model grids differ".into()));
    }
    let grid = model.grid();
    let dx = grid.spacing();
    let w2 = weights_sq(grid, s);
    let filon = Filon::new(&res.time, res.filon_step);
    let m = filon.times.len();
    match model.kind() {
        ModelKind::FreeLaplacian1D => {
            // Per segment: η nodes with k and the two plane-wave amplitudes of σ A(λ)φ / a'.
            let mut segs = Vec::new();
            for (lo, hi) in sf.segments() {
                let (elo, ehi) = (sf.a(lo), sf.a(hi));
                let lams = invert_a(sf, lo, hi, &filon.nodes(elo, ehi));
                let coefs: Vec<(f64, C64, C64)> = lams
                    .par_iter()
                    .map(|&l| {
                        let k = l.sqrt();
                        let c = sf.sigma(l) / sf.a_prime(l) / ((2.0 * PI).sqrt() * 2.0 * k);
                        (k, fourier_at(phi, k) * c, fourier_at(phi, -k) * c)
                    })
                    .collect();
                if coefs.iter().any(|(_, a, b)| !(a.norm().is_finite() && b.norm().is_finite())) {
                    return Err(Error::Quadrature("time-side integrand is not finite".into()));
                }
                segs.push((elo, ehi, coefs));
            }
            let xs = grid.nodes();
            let mut q = vec![0.0; m];
            // Chunks of nodes in parallel, summed in node order for determinism.
            for chunk in xs.iter().zip(&w2).collect::<Vec<_>>().chunks(8) {
                let parts: Vec<Vec<f64>> = chunk
                    .par_iter()
                    .map(|&(&x, &w)| {
                        let mut u = vec![C64::new(0.0, 0.0); m];
                        for (elo, ehi, coefs) in &segs {
                            let g: Vec<C64> = coefs
                                .iter()
                                .map(|&(k, ap, am)| {
                                    let e = C64::from_polar(1.0, k * x);
                                    ap * e + am * e.conj()
                                })
                                .collect();
                            for (a, b) in u.iter_mut().zip(filon.transform(*elo, *ehi, &g)) {
                                *a += b;
                            }
                        }
                        u.iter().map(|z| z.norm_sqr() * w * dx).collect()
                    })
                    .collect();
                for part in parts {
                    for (a, b) in q.iter_mut().zip(part) {
                        *a += b;
                    }
                }
            }
            let g = |l: f64| {
                let k = l.sqrt();
                let c = sf.sigma(l) / sf.a_prime(l) / ((2.0 * PI).sqrt() * 2.0 * k);
                let (ap, am) = (fourier_at(phi, k) * c, fourier_at(phi, -k) * c);
                Ok(xs
                    .iter()
                    .map(|&x| {
                        let e = C64::from_polar(1.0, k * x);
                        ap * e + am * e.conj()
                    })
                    .collect())
            };
            let body = res.time.dt() * q.iter().sum::<f64>();
            let tail = edge_tail(
                &edge_jets(sf, filon.h, &g)?,
                res.time.t_max,
                body,
                NOISE * sup_weight(sf) * phi.norm().powi(2),
                |u, v| u.iter().zip(v).zip(&w2).map(|((a, b), w)| a.conj() * b * (w * dx)).sum(),
            )?;
            Ok((q, tail))
        }
        ModelKind::PerturbedSchrodinger1D => {
            Err(Error::Unsupported("time side of the weighted identity on the perturbed line".into()))
        }
        _ => {
            // A_ε(λ)φ = V (L_ε(λ - λ_k) c_k)_k: one time transform per eigenvector,
            // then Q(t) = dx T(t)* (V* W² V) T(t).
            let eig = model.eigen().expect("matrix model");
            let c = eig.coefficients(phi.values());
            let n = c.len();
            let g = |l: f64| {
                let eps = model
                    .epsilon_at(l)
                    .filter(|e| *e > 0.0)
                    .ok_or_else(|| Error::Unsupported("model has no smoothed density route".into()))?;
                let f = sf.sigma(l) / sf.a_prime(l);
                Ok(eig.values.iter().zip(&c).map(|(&lk, ck)| ck * (f * lorentzian(l - lk, eps))).collect())
            };
            let transforms = filon_channels(sf, &filon, n, g)?;
            let gram = eig.weighted_gram(&w2);
            let q = (0..m)
                .into_par_iter()
                .map(|j| {
                    let v = DVector::from_iterator(n, transforms.iter().map(|col| col[j]));
                    (v.adjoint() * &gram * &v)[(0, 0)].re * dx
                })
                .collect::<Vec<f64>>();
            let body = res.time.dt() * q.iter().sum::<f64>();
            let tail = edge_tail(
                &edge_jets(sf, filon.h, &g)?,
                res.time.t_max,
                body,
                NOISE * sup_weight(sf) * phi.norm().powi(2),
                |u, v| {
                    let (u, v) = (DVector::from_column_slice(u), DVector::from_column_slice(v));
                    (u.adjoint() * &gram * v)[(0, 0)] * dx
                },
            )?;
            Ok((q, tail))
        }
    }
}

/// Both sides of `‖σ(H)e^{ita(H)}P_ac E(J)φ‖_{L²(R_t, X*)} = √(2π) ‖(σ/a'^{1/2}) A(λ)φ‖_{L²(J, X*)}`.
pub fn identity_dual(
    model: &OperatorModel,
    sf: &SpectralFunction,
    phi: &GridFunction,
    s: WeightExponent,
    res: &Resolution,
) -> Result<IdentityReport> {
    if !s.is_smoothing_admissible() {
        return Err(Error::WeightTooWeak { s: s.0 });
    }
    let (q, tail) = weighted_with_tail(model, sf, phi, s, res)?;
    let body = res.time.dt() * q.iter().sum::<f64>();
    IdentityReport::new(body, tail, dual_spectral_side(model, sf, phi, s, res.rhs_tol)?, *res)
}

/// `√(2π) ‖(σ/a'^{1/2}) A(λ)φ‖_{L²(J, X*)}` by adaptive quadrature to relative tolerance `tol`.
pub fn dual_spectral_side(
    model: &OperatorModel,
    sf: &SpectralFunction,
    phi: &GridFunction,
    s: WeightExponent,
    tol: f64,
) -> Result<f64> {
    let oracle = DualOracle::new(model, phi, s)?;
    let floor = NOISE * sup_weight(sf) * phi.norm().powi(2);
    let integral = spectral_integral(sf, tol, floor, |l| oracle.at(l).map(|v| sf.weight(l) * v).unwrap_or(f64::NAN))?;
    Ok((2.0 * PI * integral).sqrt())
}

/// `‖A(λ)φ‖²_{-s}` at a single point.
pub fn density_dual_norm_sq(model: &OperatorModel, l: f64, phi: &GridFunction, s: WeightExponent) -> Result<f64> {
    DualOracle::new(model, phi, s)?.at(l)
}

/// Gauss–Legendre `(λ, weight)` pairs over `J∖𝒩`, graded in `k = √λ` on positive
/// segments spanning more than a factor 16 in `λ`. Nodes above `cap` are dropped.
pub fn spectral_rule(sf: &SpectralFunction, panels: usize, order: usize, cap: Option<f64>) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for (lo, hi) in sf.segments() {
        let hi = cap.map_or(hi, |c| hi.min(c));
        if hi <= lo {
            continue;
        }
        if lo >= 0.0 {
            let (a, b) = (lo.sqrt(), hi.sqrt());
            let rules: Vec<CompositeRule> = if a > 0.0 && b / a > 4.0 {
                log_space(a, b, panels + 1).windows(2).map(|w| CompositeRule::new(w[0], w[1], 1, order)).collect()
            } else {
                vec![CompositeRule::new(a, b, panels, order)]
            };
            let rule = CompositeRule::concat(rules);
            out.extend(rule.nodes.iter().zip(&rule.weights).map(|(&k, &w)| (k * k, 2.0 * k * w)));
        } else {
            let rule = CompositeRule::new(lo, hi, panels, order);
            out.extend(rule.nodes.iter().zip(&rule.weights).map(|(&l, &w)| (l, w)));
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyGrid);
    }
    Ok(out)
}

/// Spectral side `√(2π) (∫ σ²/a' ‖A(λ)φ‖²_{-s})^{1/2}` and `‖E(J)φ‖` for a batch,
/// on a fixed rule.
pub fn batch_spectral_side(
    model: &OperatorModel,
    sf: &SpectralFunction,
    s: WeightExponent,
    batch: &[GridFunction],
    rule: &[(f64, f64)],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let grid = model.grid();
    for phi in batch {
        if phi.grid() != grid {
            return Err(Error::InvalidGrid("function and model grids differ".into()));
        }
    }
    let dx = grid.spacing();
    let w2 = weights_sq(grid, s);
    let mut lhs2 = vec![0.0; batch.len()];
    let mut proj2 = vec![0.0; batch.len()];
    match model.kind() {
        ModelKind::FreeLaplacian1D | ModelKind::PerturbedSchrodinger1D => {
            // Rank 2: A(λ)φ = Σ_a (φ, v_a)/(2k) v_a, so only a 2×2 weighted Gram per node is needed.
            let per_node: Vec<(f64, Vec<f64>, Vec<f64>)> = rule
                .par_iter()
                .map(|&(l, wl)| {
                    let k = l.sqrt();
                    let v = match model.kind() {
                        ModelKind::FreeLaplacian1D => crate::density::plane_pair(*grid, k),
                        _ => crate::perturbation::distorted_plane_pair(model, l)?,
                    };
                    let mut g = [[C64::new(0.0, 0.0); 2]; 2];
                    for a in 0..2 {
                        for b in 0..2 {
                            g[a][b] = v[a]
                                .values()
                                .iter()
                                .zip(v[b].values())
                                .zip(&w2)
                                .map(|((x, y), w)| x * y.conj() * *w)
                                .sum::<C64>()
                                * dx;
                        }
                    }
                    let (mut dual, mut proj) = (Vec::with_capacity(batch.len()), Vec::with_capacity(batch.len()));
                    for phi in batch {
                        let c = [phi.inner(&v[0]) / (2.0 * k), phi.inner(&v[1]) / (2.0 * k)];
                        let mut n2 = C64::new(0.0, 0.0);
                        for a in 0..2 {
                            for b in 0..2 {
                                n2 += c[a] * c[b].conj() * g[a][b];
                            }
                        }
                        dual.push(n2.re);
                        // <A φ, φ> = Σ |(φ, v_a)|² / (2k)
                        proj.push((c[0].norm_sqr() + c[1].norm_sqr()) * 2.0 * k);
                    }
                    Ok((wl, dual, proj))
                })
                .collect::<Result<_>>()?;
            for ((l, _), (wl, dual, proj)) in rule.iter().zip(per_node) {
                let weight = sf.weight(*l) * wl;
                for i in 0..batch.len() {
                    lhs2[i] += weight * dual[i];
                    proj2[i] += wl * proj[i];
                }
            }
        }
        _ => {
            // ε-smoothed: the projection is the smoothed mass ∫_J <A_ε φ, φ>, the quantity
            // the sup bound controls; the sharp ‖E(J)φ‖ misses the Lorentzian leakage.
            let eig = model.eigen().expect("matrix model");
            let gram = eig.weighted_gram(&w2);
            let real_gram = gram.iter().all(|z| z.im == 0.0).then(|| gram.map(|z| z.re));
            let n = eig.values.len();
            let profiles: Vec<Vec<f64>> = rule
                .iter()
                .map(|&(l, _)| {
                    let eps = model
                        .epsilon_at(l)
                        .filter(|e| *e > 0.0)
                        .ok_or_else(|| Error::Unsupported("model has no smoothed density route".into()))?;
                    Ok(eig.values.iter().map(|&lk| lorentzian(l - lk, eps)).collect())
                })
                .collect::<Result<_>>()?;
            let sums: Vec<(f64, f64)> = batch
                .par_iter()
                .map(|phi| {
                    let c = eig.coefficients(phi.values());
                    // One column per rule node, so the quadratic forms share a single product.
                    let v = DMatrix::from_fn(n, rule.len(), |k, j| c[k] * profiles[j][k]);
                    let forms: Vec<f64> = match &real_gram {
                        // v* G v = aᵀGa + bᵀGb for real symmetric G and v = a + ib.
                        Some(g) => {
                            let (re, im) = (v.map(|z| z.re), v.map(|z| z.im));
                            let (gre, gim) = (g * &re, g * &im);
                            (0..rule.len())
                                .map(|j| re.column(j).dot(&gre.column(j)) + im.column(j).dot(&gim.column(j)))
                                .collect()
                        }
                        None => {
                            let gv = &gram * &v;
                            (0..rule.len()).map(|j| v.column(j).dotc(&gv.column(j)).re).collect()
                        }
                    };
                    let (mut a, mut b) = (0.0, 0.0);
                    for ((&(l, wl), prof), form) in rule.iter().zip(&profiles).zip(forms) {
                        a += sf.weight(l) * wl * form * dx;
                        b += wl * dx * c.iter().zip(prof).map(|(c, p)| c.norm_sqr() * p).sum::<f64>();
                    }
                    (a, b)
                })
                .collect();
            for (i, (a, b)) in sums.into_iter().enumerate() {
                lhs2[i] = a;
                proj2[i] = b;
            }
        }
    }
    let lhs = lhs2.iter().map(|v| (2.0 * PI * v.max(0.0)).sqrt()).collect();
    let proj = proj2.iter().map(|v| v.max(0.0).sqrt()).collect();
    Ok((lhs, proj))
}

/// Default λ-grid: `per_segment` points on each admissible segment, log-spaced on positive ones.
pub fn default_lambda_grid(sf: &SpectralFunction, per_segment: usize) -> Vec<f64> {
    sf.segments().into_iter().flat_map(|(lo, hi)| sample_points(lo, hi, per_segment)).collect()
}

/// `√(2π) max_λ (|σ|/a'^{1/2}) N(λ)^{1/2}` over the admitted grid points, with its argmax.
pub fn sup_bound(
    model: &OperatorModel,
    sf: &SpectralFunction,
    s: WeightExponent,
    lambdas: &[f64],
) -> Result<(f64, f64)> {
    let pts = sf.filter_grid(lambdas);
    if pts.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let norms = density_norms(model, s, &pts)?;
    let mut best = (0.0, pts[0]);
    for (&l, &n) in pts.iter().zip(&norms) {
        let v = sf.amplitude(l) * n.max(0.0).sqrt();
        if v > best.0 {
            best = (v, l);
        }
    }
    Ok(((2.0 * PI).sqrt() * best.0, best.1))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AprioriReport {
    pub lhs: f64,
    pub bound: f64,
    /// `√(2π) sup (|σ|/a'^{1/2}) ‖A(λ)‖^{1/2}` on the scan grid.
    pub constant: f64,
    pub argmax: f64,
    /// `‖E(J)φ‖`.
    pub projected_norm: f64,
    pub pass: bool,
}

/// Slack allowed in the a priori inequality.
pub const APRIORI_SLACK: f64 = 0.01;

/// The time-side weighted norm of one `φ` against the sup bound.
pub fn apriori_check(
    model: &OperatorModel,
    sf: &SpectralFunction,
    s: WeightExponent,
    phi: &GridFunction,
    res: &Resolution,
) -> Result<AprioriReport> {
    let id = identity_dual(model, sf, phi, s, res)?;
    let (constant, argmax) = sup_bound(model, sf, s, &default_lambda_grid(sf, 64))?;
    let rule = spectral_rule(sf, 24, 8, None)?;
    let (_, proj) = batch_spectral_side(model, sf, s, std::slice::from_ref(phi), &rule)?;
    let bound = constant * proj[0];
    Ok(AprioriReport {
        lhs: id.lhs,
        bound,
        constant,
        argmax,
        projected_norm: proj[0],
        pass: id.lhs <= bound * (1.0 + APRIORI_SLACK),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub constant: f64,
    /// `lhs(φ) / ‖E(J)φ‖` per batch member (0 when the projection vanishes).
    pub ratios: Vec<f64>,
    pub worst_ratio: f64,
    pub violations: usize,
    pub pass_rate: f64,
    pub pass: bool,
}

/// A priori inequality over a batch with spectral-side left-hand sides.
pub fn apriori_sweep(
    model: &OperatorModel,
    sf: &SpectralFunction,
    s: WeightExponent,
    batch: &[GridFunction],
    rule: &[(f64, f64)],
    constant: f64,
    slack: f64,
) -> Result<SweepReport> {
    let (lhs, proj) = batch_spectral_side(model, sf, s, batch, rule)?;
    let mut violations = 0;
    let ratios: Vec<f64> = lhs
        .iter()
        .zip(&proj)
        .map(|(&l, &p)| {
            if l > constant * p * (1.0 + slack) {
                violations += 1;
            }
            if p > 0.0 {
                l / p
            } else {
                0.0
            }
        })
        .collect();
    let worst_ratio = ratios.iter().cloned().fold(0.0, f64::max);
    let pass_rate = if batch.is_empty() { 1.0 } else { 1.0 - violations as f64 / batch.len() as f64 };
    Ok(SweepReport { constant, ratios, worst_ratio, violations, pass_rate, pass: violations == 0 })
}

/// Seeded sums of one to three modulated Gaussians sized to the grid.
pub fn random_batch(grid: &SpatialGrid, count: usize, seed: u64) -> Vec<GridFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reach = (grid.x_max() / 4.0).min(4.0);
    let wmax = (grid.x_max() / 8.0).clamp(0.5, 2.0);
    let kmax = (grid.nyquist() / 4.0).min(3.0);
    (0..count)
        .map(|_| {
            let terms = rng.random_range(1..=3);
            let params: Vec<(f64, f64, f64, C64)> = (0..terms)
                .map(|_| {
                    (
                        rng.random_range(-reach..reach),
                        rng.random_range(0.4..wmax),
                        rng.random_range(-kmax..kmax),
                        C64::from_polar(rng.random_range(0.2..1.0), rng.random_range(0.0..2.0 * PI)),
                    )
                })
                .collect();
            GridFunction::from_fn(*grid, |x| {
                params
                    .iter()
                    .map(|&(c, w, k, a)| a * C64::from_polar((-(x - c).powi(2) / (2.0 * w * w)).exp(), k * x))
                    .sum()
            })
        })
        .collect()
}
