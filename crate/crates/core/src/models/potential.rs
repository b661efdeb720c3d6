//! Short-range potentials and their grid realizations.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::linear_fit;
use crate::spaces::{bracket, fourier, inverse_fourier, GridFunction, SpatialGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PotentialKind {
    /// Real samples `V(x_i)` on the grid.
    Multiplicative(Vec<f64>),
    /// `V = <x>^{-s} (I - Δ)^β <x>^{-s}`.
    FactoredPseudo { beta: f64, s: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    /// `ε` of the decay condition `|V(x)| <= C <x>^{-1-ε}`.
    pub decay_epsilon: f64,
}

impl PotentialSpec {
    pub fn zero(grid: &SpatialGrid) -> Self {
        Self { kind: PotentialKind::Multiplicative(vec![0.0; grid.len()]), decay_epsilon: 1.0 }
    }

    pub fn from_fn(grid: &SpatialGrid, v: impl Fn(f64) -> f64, decay_epsilon: f64) -> Self {
        Self { kind: PotentialKind::Multiplicative(grid.nodes().into_iter().map(v).collect()), decay_epsilon }
    }

    pub fn factored(beta: f64, s: f64) -> Result<Self> {
        if !(beta < 0.5) {
            return Err(Error::InvalidPotential(format!("factored potential needs beta < 1/2, got {beta}")));
        }
        Ok(Self { kind: PotentialKind::FactoredPseudo { beta, s }, decay_epsilon: 2.0 * s - 1.0 })
    }

    pub fn is_zero(&self) -> bool {
        matches!(&self.kind, PotentialKind::Multiplicative(v) if v.iter().all(|&x| x == 0.0))
    }

    /// Symmetric matrix acting on grid values.
    pub fn matrix(&self, grid: &SpatialGrid) -> Result<DMatrix<C64>> {
        match &self.kind {
            PotentialKind::Multiplicative(v) => {
                if v.len() != grid.len() {
                    return Err(Error::LengthMismatch { expected: grid.len(), got: v.len() });
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidPotential("non-finite sample".into()));
                }
                Ok(DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                    v.len(),
                    v.iter().map(|&x| C64::new(x, 0.0)),
                )))
            }
            PotentialKind::FactoredPseudo { beta, s } => {
                if !(*beta < 0.5) {
                    return Err(Error::InvalidPotential(format!("beta = {beta} must be < 1/2")));
                }
                let n = grid.len();
                let w: Vec<f64> = grid.nodes().iter().map(|&x| bracket(x).powf(-s)).collect();
                let mut m = DMatrix::zeros(n, n);
                for j in 0..n {
                    let mut e = vec![C64::new(0.0, 0.0); n];
                    e[j] = C64::new(w[j], 0.0);
                    let mut fh = fourier(&GridFunction::new(*grid, e)?);
                    for (k, v) in fh.values_mut().iter_mut().enumerate() {
                        let xi = grid.freq_node(k);
                        *v *= (1.0 + xi * xi).powf(*beta);
                    }
                    let col = inverse_fourier(&fh);
                    for (i, v) in col.values().iter().enumerate() {
                        m[(i, j)] = v * w[i];
                    }
                }
                // Symmetrize away FFT rounding.
                let m = (&m + m.adjoint()) * C64::new(0.5, 0.0);
                Ok(m)
            }
        }
    }

    /// Grid nodes carrying the potential: rows whose mass exceeds `1e-10` of the total
    /// after the outermost rows holding less than `1e-10` in aggregate are trimmed.
    pub fn support(&self, grid: &SpatialGrid) -> Result<Vec<usize>> {
        let m = self.matrix(grid)?;
        let n = grid.len();
        let row: Vec<f64> = (0..n).map(|i| m.row(i).iter().map(|z| z.norm()).sum::<f64>()).collect();
        let total: f64 = row.iter().sum();
        if total == 0.0 {
            return Ok(Vec::new());
        }
        // Symmetric radius: drop |x| beyond R while the dropped mass stays below 1e-10·total.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| grid.node(b).abs().partial_cmp(&grid.node(a).abs()).unwrap());
        let mut dropped = 0.0;
        let mut cut = 0;
        for &i in &order {
            if dropped + row[i] > 1e-10 * total {
                break;
            }
            dropped += row[i];
            cut += 1;
        }
        let mut keep: Vec<usize> = order[cut..].to_vec();
        keep.sort_unstable();
        Ok(keep)
    }
}

/// Outcome of the decay check `|V(x)| <= C <x>^{-1-ε}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShortRangeReport {
    pub holds: bool,
    /// `max_i |V(x_i)| <x_i>^{1+ε}`.
    pub constant: f64,
    /// Log-log slope of the binned envelope of `|V| <x>^{1+ε}` over the outer decade.
    pub envelope_slope: f64,
}

/// Slope above which the weighted envelope is treated as growing.
const GROWTH_SLOPE: f64 = 0.05;

pub fn shortrange_check(v: &PotentialSpec, grid: &SpatialGrid) -> ShortRangeReport {
    let samples = match &v.kind {
        PotentialKind::FactoredPseudo { beta, .. } => {
            return ShortRangeReport { holds: *beta < 0.5, constant: f64::NAN, envelope_slope: f64::NAN };
        }
        PotentialKind::Multiplicative(s) => s,
    };
    let p = 1.0 + v.decay_epsilon;
    let weighted: Vec<(f64, f64)> =
        grid.nodes().iter().zip(samples).map(|(&x, &val)| (x.abs(), val.abs() * bracket(x).powf(p))).collect();
    let constant = weighted.iter().map(|w| w.1).fold(0.0, f64::max);
    if constant == 0.0 {
        return ShortRangeReport { holds: true, constant, envelope_slope: 0.0 };
    }
    // Upper envelope on log bins of the outer decade.
    let lo = grid.x_max() / 10.0;
    let bins = 16;
    let mut env = vec![0.0f64; bins];
    for &(r, w) in &weighted {
        if r < lo {
            continue;
        }
        let t = ((r / lo).ln() / 10f64.ln() * bins as f64).floor() as usize;
        let t = t.min(bins - 1);
        env[t] = env[t].max(w);
    }
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (t, &e) in env.iter().enumerate() {
        if e > 0.0 {
            xs.push((lo * 10f64.powf((t as f64 + 0.5) / bins as f64)).ln());
            ys.push(e.ln());
        }
    }
    let slope = linear_fit(&xs, &ys).map(|(s, _)| s).unwrap_or(0.0);
    ShortRangeReport { holds: constant.is_finite() && slope <= GROWTH_SLOPE, constant, envelope_slope: slope }
}

/// Reads a two-column `x V` table and interpolates linearly onto the grid nodes.
/// Blank lines and `#` comments are ignored; nodes outside the table get 0.
pub fn load_potential_table(text: &str, grid: &SpatialGrid) -> Result<Vec<f64>> {
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty()).collect();
        if cols.len() != 2 {
            return Err(Error::InvalidPotential(format!("line {}: expected two columns", lineno + 1)));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::InvalidPotential(format!("line {}: bad number {s:?}", lineno + 1)))
        };
        pts.push((parse(cols[0])?, parse(cols[1])?));
    }
    if pts.len() < 2 {
        return Err(Error::InvalidPotential("table needs at least two rows".into()));
    }
    if pts.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::InvalidPotential("x column must be strictly increasing".into()));
    }
    Ok(grid
        .nodes()
        .iter()
        .map(|&x| {
            if x < pts[0].0 || x > pts[pts.len() - 1].0 {
                return 0.0;
            }
            let i = pts.partition_point(|p| p.0 <= x).clamp(1, pts.len() - 1);
            let (x0, v0) = pts[i - 1];
            let (x1, v1) = pts[i];
            v0 + (v1 - v0) * (x - x0) / (x1 - x0)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_potential_is_short_range() {
        let g = SpatialGrid::new(50.0, 1000).unwrap();
        let r = shortrange_check(&PotentialSpec::zero(&g), &g);
        assert!(r.holds);
        assert_eq!(r.constant, 0.0);
    }

    #[test]
    fn lorentzian_is_exact_power() {
        let g = SpatialGrid::new(50.0, 1000).unwrap();
        let v = PotentialSpec::from_fn(&g, |x| 1.0 / (1.0 + x * x), 1.0);
        let r = shortrange_check(&v, &g);
        assert!(r.holds);
        assert_relative_eq!(r.constant, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn slow_decay_is_flagged_and_constant_grows() {
        let c = |x_max: f64| {
            let g = SpatialGrid::new(x_max, 2000).unwrap();
            let r = shortrange_check(&PotentialSpec::from_fn(&g, |x| 1.0 / (1.0 + x.abs()), 0.5), &g);
            assert!(!r.holds);
            // (1+|x|)^{-1} <x>^{3/2} has local slope 0.5 + O(1/x) on the outer decade.
            assert!(r.envelope_slope > 0.45 && r.envelope_slope < 0.6, "{}", r.envelope_slope);
            r.constant
        };
        assert!(c(200.0) > 1.9 * c(50.0));
    }

    #[test]
    fn factored_requires_small_beta() {
        assert!(PotentialSpec::factored(0.6, 1.0).is_err());
        let v = PotentialSpec::factored(0.25, 1.0).unwrap();
        let g = SpatialGrid::new(8.0, 64).unwrap();
        let m = v.matrix(&g).unwrap();
        assert!((&m - m.adjoint()).norm() < 1e-14 * m.norm());
        assert!(shortrange_check(&v, &g).holds);
    }

    #[test]
    fn gaussian_support_is_trimmed() {
        let g = SpatialGrid::new(20.0, 400).unwrap();
        let v = PotentialSpec::from_fn(&g, |x| 0.3 * (-x * x).exp(), 1.0);
        let s = v.support(&g).unwrap();
        let r = s.iter().map(|&i| g.node(i).abs()).fold(0.0, f64::max);
        assert!(r > 4.0 && r < 6.0, "radius {r}");
    }

    #[test]
    fn table_interpolates_linearly() {
        let g = SpatialGrid::new(2.0, 4).unwrap();
        // nodes -1.5 -0.5 0.5 1.5
        let v = load_potential_table("# x V\n-1 0\n0 2\n1 0\n", &g).unwrap();
        assert_eq!(v, vec![0.0, 1.0, 1.0, 0.0]);
        assert!(load_potential_table("0 1 2\n1 2 3\n", &g).is_err());
        assert!(load_potential_table("1 0\n0 1\n", &g).is_err());
    }
}
