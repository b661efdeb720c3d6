//! Two-sided certification of the best constant
//! `‖𝔥_J‖ = √(2π) sup_λ (|σ|/a'^{1/2}) ‖A(λ)‖^{1/2}`.
//!
//! The upper side is a refined scan of the sup. The lower side follows the
//! wave-packet argument: for `ψ` nearly maximizing `<A(λ0)ψ, ψ>` and
//! `D_h = (λ0 - h/2, λ0 + h/2)`,
//! `K_h = h^{-1/2} ‖E(D_h)ψ‖^{-1} ∫_{D_h} (|σ|/a'^{1/2}) <A(λ)ψ, ψ> dλ`
//! tends to the integrand of the sup at `λ0`, and `√(2π) K_h ≤ ‖𝔥_J‖`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::density::{density_norms, density_rep, lorentzian, PairingOracle};
use crate::error::{Error, Result};
use crate::models::{sample_points, spectral_projector, ModelKind, OperatorModel, SpectralFunction, Window};
use crate::quad::CompositeRule;
use crate::spaces::{form_maximizer, weighted_norm, FormSup, GridFunction, OperatorRep, WeightExponent};

/// Points of the initial sup scan on each segment.
pub const DEFAULT_SCAN_POINTS: usize = 64;
const REFINE_ROUNDS: usize = 3;
const REFINE_POINTS: usize = 8;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RhsSup {
    pub value: f64,
    pub argmax: f64,
    /// Argmax after each refinement round, starting with the coarse scan.
    pub argmax_history: Vec<f64>,
    /// The argmax stayed on the first or last scan point in every round: the sup
    /// is approached at the boundary and not attained inside the grid.
    pub at_edge: bool,
}

/// `√(2π) max (|σ|/a'^{1/2}) N(λ)^{1/2}` over `lambdas` and three rounds of local refinement.
pub fn rhs_sup(model: &OperatorModel, sf: &SpectralFunction, s: WeightExponent, lambdas: &[f64]) -> Result<RhsSup> {
    let mut pts = sf.filter_grid(lambdas);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    if pts.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if pts.len() < 32 {
        return Err(Error::Config(format!("sup scan needs at least 32 admissible points, got {}", pts.len())));
    }
    let score = |ls: &[f64]| -> Result<Vec<f64>> {
        let n = density_norms(model, s, ls)?;
        Ok(ls.iter().zip(n).map(|(&l, n)| sf.amplitude(l) * n.max(0.0).sqrt()).collect())
    };
    let mut vals = score(&pts)?;
    let argmax = |v: &[f64]| v.iter().enumerate().fold(0, |b, (i, &x)| if x > v[b] { i } else { b });
    let mut i = argmax(&vals);
    let mut history = vec![pts[i]];
    let mut at_edge = i == 0 || i == pts.len() - 1;
    for _ in 0..REFINE_ROUNDS {
        let lo = pts[i.saturating_sub(1)];
        let hi = pts[(i + 1).min(pts.len() - 1)];
        let fresh: Vec<f64> = sf
            .filter_grid(&sample_points(lo, hi, REFINE_POINTS + 2)[1..=REFINE_POINTS])
            .into_iter()
            .filter(|l| pts.binary_search_by(|p| p.total_cmp(l)).is_err())
            .collect();
        let fresh_vals = score(&fresh)?;
        for (l, v) in fresh.into_iter().zip(fresh_vals) {
            let at = pts.partition_point(|p| *p < l);
            pts.insert(at, l);
            vals.insert(at, v);
        }
        i = argmax(&vals);
        history.push(pts[i]);
        at_edge &= i == 0 || i == pts.len() - 1;
    }
    Ok(RhsSup { value: (2.0 * PI).sqrt() * vals[i], argmax: pts[i], argmax_history: history, at_edge })
}

/// Default sup-scan grid: [`DEFAULT_SCAN_POINTS`] log-spaced points per segment.
pub fn default_scan_grid(sf: &SpectralFunction) -> Vec<f64> {
    sf.segments().into_iter().flat_map(|(lo, hi)| sample_points(lo, hi, DEFAULT_SCAN_POINTS)).collect()
}

/// Unit-`X` maximizer of `<A(λ)f, f>` and the value `N(λ)`.
pub fn density_maximizer(model: &OperatorModel, l: f64, s: WeightExponent) -> Result<FormSup> {
    let rep = density_rep(model, l)?;
    match rep.rep {
        OperatorRep::RankKFactored { vectors, coeffs } => form_maximizer(&vectors, &coeffs, s),
        _ => {
            // V L V* with grid weight dx equals Σ dx L_k (·, u_k) u_k for u_k = v_k / √dx.
            let eig = model.eigen().expect("matrix model");
            let eps = model.epsilon_at(l).unwrap_or(0.0);
            let grid = *model.grid();
            let dx = grid.spacing();
            let vectors: Vec<GridFunction> = (0..eig.values.len())
                .map(|k| {
                    GridFunction::new(grid, eig.vectors.column(k).iter().map(|z| z / dx.sqrt()).collect())
                        .expect("eigenvector length")
                })
                .collect();
            let coeffs = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                vectors.len(),
                eig.values.iter().map(|&lk| C64::new(dx * lorentzian(l - lk, eps), 0.0)),
            ));
            form_maximizer(&vectors, &coeffs, s)
        }
    }
}

/// `E(D_h)ψ / ‖E(D_h)ψ‖` with `D_h = (λ0 - h/2, λ0 + h/2)`.
pub fn wavepacket(model: &OperatorModel, lambda0: f64, h: f64, psi: &GridFunction) -> Result<GridFunction> {
    let window = Window::new(lambda0 - 0.5 * h, lambda0 + 0.5 * h)?;
    let p = spectral_projector(model, window, psi)?;
    let norm = p.norm();
    if !(norm > 1e-12) {
        return Err(Error::SpectrallyDisjoint { norm });
    }
    Ok(p.scaled(C64::new(1.0 / norm, 0.0)))
}

/// `(h, K_h)` for each `h`; `ψ` is used as given.
pub fn lhs_lower(
    model: &OperatorModel,
    sf: &SpectralFunction,
    lambda0: f64,
    hs: &[f64],
    psi: &GridFunction,
) -> Result<Vec<(f64, f64)>> {
    let oracle = PairingOracle::new(model, psi, psi)?;
    hs.iter()
        .map(|&h| {
            let (lo, hi) = (lambda0 - 0.5 * h, lambda0 + 0.5 * h);
            if !(h > 0.0) || !sf.admits(lo) || !sf.admits(hi) {
                return Err(Error::Config(format!("D_h = ({lo}, {hi}) is not inside J minus the excluded set")));
            }
            let rule = CompositeRule::new(lo, hi, 4, 16);
            let (mut mass, mut weighted) = (0.0, 0.0);
            for (&l, &w) in rule.nodes.iter().zip(&rule.weights) {
                let p = oracle.at(l)?.re;
                mass += w * p;
                weighted += w * sf.amplitude(l) * p;
            }
            if !(mass > 1e-300) {
                return Err(Error::Inconsistent(format!("packet normalization collapsed at h = {h}")));
            }
            Ok((h, weighted / (h.sqrt() * mass.sqrt())))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifyConfig {
    /// Relative gap allowed between the two sides.
    pub tolerance: f64,
    /// Number of halvings in the `h` sequence.
    pub h_count: usize,
    /// Smallest admissible `|J|`.
    pub h_min: f64,
}

impl CertifyConfig {
    /// 5% on exact routes, 20% on ε-smoothed ones.
    pub fn for_model(model: &OperatorModel) -> Self {
        let tolerance = match model.kind() {
            ModelKind::FreeLaplacian1D | ModelKind::PerturbedSchrodinger1D => 0.05,
            _ => 0.20,
        };
        Self { tolerance, h_count: 7, h_min: 1e-9 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BestConstantReport {
    pub rhs_sup: f64,
    pub argmax: f64,
    pub at_edge: bool,
    /// Centre of the packets; equals the argmax unless that sits on the window edge.
    pub lambda0: f64,
    /// `N(λ0)` reached by the packet profile `ψ`.
    pub psi_form_value: f64,
    pub lhs_lower_sequence: Vec<(f64, f64)>,
    /// `√(2π) max_h K_h`.
    pub lhs_best: f64,
    /// `(|σ|/a'^{1/2})(λ0) <A(λ0)ψ, ψ>^{1/2}`, the limit of `K_h`.
    pub predicted_limit: f64,
    /// Richardson extrapolation from the two smallest `h`.
    pub extrapolated_limit: f64,
    pub gap: f64,
    pub pass: bool,
}

/// Scan, packet construction and comparison.
pub fn certify(
    model: &OperatorModel,
    sf: &SpectralFunction,
    s: WeightExponent,
    lambdas: &[f64],
    cfg: &CertifyConfig,
) -> Result<BestConstantReport> {
    let win = sf.window();
    if win.width() < cfg.h_min {
        return Err(Error::Config(format!("window width {} is below h_min = {}", win.width(), cfg.h_min)));
    }
    let sup = rhs_sup(model, sf, s, lambdas)?;
    // The segment holding the argmax bounds the packets.
    let (seg_lo, seg_hi) =
        sf.segments().into_iter().find(|&(a, b)| a <= sup.argmax && sup.argmax <= b).ok_or(Error::EmptyGrid)?;
    let width = seg_hi - seg_lo;
    // Pull λ0 off a boundary argmax so that D_h fits inside the segment.
    let mut lambda0 = sup.argmax;
    let near_lo = lambda0 - seg_lo < width / 64.0;
    let near_hi = seg_hi - lambda0 < width / 64.0;
    if near_lo {
        lambda0 = seg_lo + (width / 64.0).min(if seg_lo > 0.0 { seg_lo } else { width / 64.0 });
    } else if near_hi {
        lambda0 = seg_hi - width / 64.0;
    }
    let room = (lambda0 - seg_lo).min(seg_hi - lambda0);
    let h0 = (width / 16.0).min(1.9 * room);
    if h0 < cfg.h_min {
        return Err(Error::Config(format!("packet width {h0} is below h_min = {}", cfg.h_min)));
    }
    let hs: Vec<f64> = (0..cfg.h_count).map(|k| h0 * 0.5f64.powi(k as i32)).collect();
    let FormSup { value: n0, maximizer } = density_maximizer(model, lambda0, s)?;
    let unit = weighted_norm(&maximizer, s);
    if !(unit > 0.0) {
        return Err(Error::Inconsistent("density maximizer vanished".into()));
    }
    let psi = maximizer.scaled(C64::new(1.0 / unit, 0.0));
    let seq = lhs_lower(model, sf, lambda0, &hs, &psi)?;
    let kmax = seq.iter().map(|&(_, k)| k).fold(0.0, f64::max);
    let lhs_best = (2.0 * PI).sqrt() * kmax;
    let p0 = PairingOracle::new(model, &psi, &psi)?.at(lambda0)?.re;
    let predicted_limit = sf.amplitude(lambda0) * p0.max(0.0).sqrt();
    let extrapolated_limit = match seq.as_slice() {
        [.., (_, a), (_, b)] => (4.0 * b - a) / 3.0,
        [(_, a)] => *a,
        [] => 0.0,
    };
    let gap = if sup.value > 0.0 { (sup.value - lhs_best) / sup.value } else { 0.0 };
    let pass = gap <= cfg.tolerance && gap >= -0.01;
    Ok(BestConstantReport {
        rhs_sup: sup.value,
        argmax: sup.argmax,
        at_edge: sup.at_edge,
        lambda0,
        psi_form_value: n0,
        lhs_lower_sequence: seq,
        lhs_best,
        predicted_limit,
        extrapolated_limit,
        gap,
        pass,
    })
}
