//! Concrete self-adjoint models: the exact free line, a Stark finite-difference
//! matrix, caller-supplied Hermitian matrices and the free line plus a potential.

mod potential;
mod spectral;

pub use potential::{load_potential_table, shortrange_check, PotentialKind, PotentialSpec, ShortRangeReport};
pub(crate) use spectral::sample_points;
pub use spectral::{SpectralFunction, Window, DEFAULT_DELTA};

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spaces::{fourier, inverse_fourier, GridFunction, SpatialGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    FreeLaplacian1D,
    StarkFD,
    GenericHermitian,
    PerturbedSchrodinger1D,
}

/// Width of the Lorentzian used to smooth point spectra.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Smoothing {
    Fixed(f64),
    /// Multiple of the mean eigenvalue gap near `λ`.
    GapMultiple(f64),
}

impl Default for Smoothing {
    fn default() -> Self {
        Smoothing::GapMultiple(10.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SpectralRoute {
    Exact,
    EpsilonSmoothed(Smoothing),
}

/// Ascending eigenvalues with orthonormal eigenvectors in the columns.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<C64>,
}

impl Eigen {
    fn of_hermitian(m: &DMatrix<C64>) -> Self {
        let e = SymmetricEigen::new(m.clone());
        sorted(e.eigenvalues.as_slice(), &e.eigenvectors)
    }

    fn of_real_symmetric(m: &DMatrix<f64>) -> Self {
        let e = SymmetricEigen::new(m.clone());
        sorted(e.eigenvalues.as_slice(), &e.eigenvectors.map(|x| C64::new(x, 0.0)))
    }

    /// `max |V Λ V* - M| / max |M|`.
    pub fn reconstruction_error(&self, m: &DMatrix<C64>) -> f64 {
        let lam = DMatrix::from_diagonal(&DVector::from_iterator(
            self.values.len(),
            self.values.iter().map(|&v| C64::new(v, 0.0)),
        ));
        let r = &self.vectors * lam * self.vectors.adjoint();
        let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        (r - m).iter().map(|z| z.norm()).fold(0.0, f64::max) / scale
    }

    /// `V* diag(w2) V`. Real eigenvectors (the Stark family) take the real product,
    /// which is several times faster than the complex one.
    pub fn weighted_gram(&self, w2: &[f64]) -> DMatrix<C64> {
        if self.vectors.iter().all(|z| z.im == 0.0) {
            let v = self.vectors.map(|z| z.re);
            let mut wv = v.clone();
            for (i, w) in w2.iter().enumerate() {
                wv.row_mut(i).scale_mut(*w);
            }
            return (v.transpose() * wv).map(|x| C64::new(x, 0.0));
        }
        let mut wv = self.vectors.clone();
        for (i, w) in w2.iter().enumerate() {
            wv.row_mut(i).scale_mut(*w);
        }
        self.vectors.adjoint() * wv
    }

    /// Coefficients `v_k* f`.
    pub fn coefficients(&self, f: &[C64]) -> Vec<C64> {
        (self.vectors.adjoint() * DVector::from_column_slice(f)).iter().copied().collect()
    }

    /// `Σ_k g_k c_k v_k`.
    pub fn synthesize(&self, g: &[C64]) -> Vec<C64> {
        (&self.vectors * DVector::from_column_slice(g)).iter().copied().collect()
    }

    /// Mean gap over the ten gaps surrounding `λ`.
    pub fn mean_gap_near(&self, l: f64) -> f64 {
        let n = self.values.len();
        if n < 2 {
            return 1.0;
        }
        let i = self.values.partition_point(|&v| v < l).min(n - 1);
        let lo = i.saturating_sub(5);
        let hi = (lo + 10).min(n - 1);
        let lo = hi.saturating_sub(10);
        (self.values[hi] - self.values[lo]) / (hi - lo) as f64
    }
}

fn sorted(values: &[f64], vectors: &DMatrix<C64>) -> Eigen {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let vals = idx.iter().map(|&i| values[i]).collect();
    let vecs = DMatrix::from_fn(vectors.nrows(), idx.len(), |r, c| vectors[(r, idx[c])]);
    Eigen { values: vals, vectors: vecs }
}

#[derive(Debug)]
enum Payload {
    Free,
    Matrix { matrix: DMatrix<C64>, eig: Eigen },
    Perturbed { potential: PotentialSpec, v: DMatrix<C64>, support: Vec<usize>, eig: OnceLock<Eigen> },
}

/// A self-adjoint operator with its spectral access route.
#[derive(Debug)]
pub struct OperatorModel {
    kind: ModelKind,
    grid: SpatialGrid,
    route: SpectralRoute,
    payload: Payload,
}

/// Relative tolerance for the Hermiticity check of input matrices.
const HERMITIAN_TOL: f64 = 1e-12;

impl OperatorModel {
    /// `H = -d²/dx²`, diagonalized exactly by the Fourier transform.
    pub fn free(grid: SpatialGrid) -> Self {
        Self { kind: ModelKind::FreeLaplacian1D, grid, route: SpectralRoute::Exact, payload: Payload::Free }
    }

    /// Dirichlet central differences for `-d²/dx² - x`.
    pub fn stark_fd(grid: SpatialGrid, smoothing: Smoothing) -> Self {
        let n = grid.len();
        let h2 = grid.spacing().powi(2);
        let m = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                2.0 / h2 - grid.node(i)
            } else if i.abs_diff(j) == 1 {
                -1.0 / h2
            } else {
                0.0
            }
        });
        let eig = Eigen::of_real_symmetric(&m);
        Self {
            kind: ModelKind::StarkFD,
            grid,
            route: SpectralRoute::EpsilonSmoothed(smoothing),
            payload: Payload::Matrix { matrix: m.map(|x| C64::new(x, 0.0)), eig },
        }
    }

    pub fn generic_hermitian(grid: SpatialGrid, matrix: DMatrix<C64>, smoothing: Smoothing) -> Result<Self> {
        if matrix.nrows() != grid.len() || matrix.ncols() != grid.len() {
            return Err(Error::LengthMismatch { expected: grid.len(), got: matrix.nrows() });
        }
        let deviation = crate::spaces::hermitian_defect(&matrix);
        if deviation > HERMITIAN_TOL {
            return Err(Error::NotHermitian { deviation });
        }
        let matrix = (&matrix + matrix.adjoint()) * C64::new(0.5, 0.0);
        let eig = Eigen::of_hermitian(&matrix);
        Ok(Self {
            kind: ModelKind::GenericHermitian,
            grid,
            route: SpectralRoute::EpsilonSmoothed(smoothing),
            payload: Payload::Matrix { matrix, eig },
        })
    }

    /// `H̃ = -d²/dx² + V` over the free model.
    pub fn perturbed(grid: SpatialGrid, potential: PotentialSpec) -> Result<Self> {
        let v = potential.matrix(&grid)?;
        let deviation = crate::spaces::hermitian_defect(&v);
        if deviation > HERMITIAN_TOL {
            return Err(Error::NotHermitian { deviation });
        }
        let support = potential.support(&grid)?;
        Ok(Self {
            kind: ModelKind::PerturbedSchrodinger1D,
            grid,
            route: SpectralRoute::Exact,
            payload: Payload::Perturbed { potential, v, support, eig: OnceLock::new() },
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn route(&self) -> SpectralRoute {
        self.route
    }

    /// Matrix of the operator on grid values, when the model has one.
    pub fn matrix(&self) -> Option<&DMatrix<C64>> {
        match &self.payload {
            Payload::Matrix { matrix, .. } => Some(matrix),
            _ => None,
        }
    }

    /// Eigendecomposition used by the functional calculus of non-free models.
    pub fn eigen(&self) -> Option<&Eigen> {
        match &self.payload {
            Payload::Free => None,
            Payload::Matrix { eig, .. } => Some(eig),
            Payload::Perturbed { v, eig, .. } => {
                Some(eig.get_or_init(|| Eigen::of_hermitian(&self.grid_hamiltonian(v))))
            }
        }
    }

    /// Potential data of the perturbed model: spec, matrix and support nodes.
    pub fn potential(&self) -> Option<(&PotentialSpec, &DMatrix<C64>, &[usize])> {
        match &self.payload {
            Payload::Perturbed { potential, v, support, .. } => Some((potential, v, support)),
            _ => None,
        }
    }

    fn grid_hamiltonian(&self, v: &DMatrix<C64>) -> DMatrix<C64> {
        let xi2: Vec<f64> = self.grid.freq_nodes().iter().map(|x| x * x).collect();
        let lap = crate::spaces::OperatorRep::FourierMultiplier(xi2).to_dense(&self.grid);
        let h = lap + v;
        (&h + h.adjoint()) * C64::new(0.5, 0.0)
    }

    /// Lorentzian width at `λ` for smoothed routes.
    pub fn epsilon_at(&self, l: f64) -> Option<f64> {
        match (self.route, &self.payload) {
            (SpectralRoute::EpsilonSmoothed(Smoothing::Fixed(e)), _) => Some(e),
            (SpectralRoute::EpsilonSmoothed(Smoothing::GapMultiple(m)), Payload::Matrix { eig, .. }) => {
                Some(m * eig.mean_gap_near(l))
            }
            _ => None,
        }
    }

    /// Points of the spectrum used for finiteness checks.
    pub fn spectrum_sample(&self) -> Vec<f64> {
        match self.kind {
            ModelKind::FreeLaplacian1D => self.grid.freq_nodes().iter().map(|x| x * x).collect(),
            _ => self.eigen().map(|e| e.values.clone()).unwrap_or_default(),
        }
    }
}

/// Functional calculus `g(H) φ`.
pub fn apply_function(model: &OperatorModel, g: impl Fn(f64) -> C64, phi: &GridFunction) -> Result<GridFunction> {
    if phi.grid() != model.grid() {
        return Err(Error::InvalidGrid("function and model grids differ".into()));
    }
    match model.kind {
        ModelKind::FreeLaplacian1D => {
            let mut fh = fourier(phi);
            let grid = *model.grid();
            for (k, v) in fh.values_mut().iter_mut().enumerate() {
                let xi = grid.freq_node(k);
                let gv = g(xi * xi);
                if !(gv.re.is_finite() && gv.im.is_finite()) {
                    return Err(Error::NotFiniteOnSpectrum { at: xi * xi });
                }
                *v *= gv;
            }
            Ok(inverse_fourier(&fh))
        }
        _ => {
            let eig = model.eigen().expect("matrix-backed model");
            let mut c = eig.coefficients(phi.values());
            for (ck, &l) in c.iter_mut().zip(&eig.values) {
                let gv = g(l);
                if !(gv.re.is_finite() && gv.im.is_finite()) {
                    return Err(Error::NotFiniteOnSpectrum { at: l });
                }
                *ck *= gv;
            }
            GridFunction::new(*phi.grid(), eig.synthesize(&c))
        }
    }
}

/// `E(J) φ` for the open interval `J = (lo, hi)`.
pub fn spectral_projector(model: &OperatorModel, window: Window, phi: &GridFunction) -> Result<GridFunction> {
    apply_function(model, |l| C64::new(if window.contains(l) { 1.0 } else { 0.0 }, 0.0), phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_fn(grid: SpatialGrid, seed: u64) -> GridFunction {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c: f64 = rng.random_range(-2.0..2.0);
        let w: f64 = rng.random_range(0.5..1.5);
        let k: f64 = rng.random_range(-2.0..2.0);
        GridFunction::from_fn(grid, |x| C64::from_polar((-(x - c).powi(2) / (2.0 * w * w)).exp(), k * x))
    }

    fn hermitian(n: usize, seed: u64) -> DMatrix<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        (&a + a.adjoint()) * C64::new(0.5, 0.0)
    }

    #[test]
    fn diagonal_generic_has_exact_eigenvalues() {
        // The grid needs an even point count; diag(1,2,3,4) stands in for diag(1,2,3).
        let g = SpatialGrid::new(1.0, 4).unwrap();
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0])).map(|x| C64::new(x, 0.0));
        let m = OperatorModel::generic_hermitian(g, d, Smoothing::default()).unwrap();
        assert_eq!(m.eigen().unwrap().values, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn non_hermitian_input_is_rejected() {
        let g = SpatialGrid::new(1.0, 2).unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]).map(|x| C64::new(x, 0.0));
        assert!(matches!(
            OperatorModel::generic_hermitian(g, m, Smoothing::default()),
            Err(Error::NotHermitian { .. })
        ));
    }

    #[test]
    fn eigendecomposition_reconstructs() {
        let g = SpatialGrid::new(4.0, 32).unwrap();
        let h = hermitian(32, 3);
        let m = OperatorModel::generic_hermitian(g, h.clone(), Smoothing::default()).unwrap();
        assert!(m.eigen().unwrap().reconstruction_error(&h) < 1e-10);
    }

    #[test]
    fn stark_matrix_is_symmetric_with_real_spectrum() {
        let g = SpatialGrid::new(20.0, 800).unwrap();
        let m = OperatorModel::stark_fd(g, Smoothing::default());
        let mat = m.matrix().unwrap();
        assert!(crate::spaces::hermitian_defect(mat) < 1e-12);
        let e = m.eigen().unwrap();
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        // Lowest states sit near the deep end of the tilted well, above -x_max.
        assert!(e.values[0] > -20.0 && e.values[0] < -15.0);
        assert!(e.reconstruction_error(mat) < 1e-10);
    }

    #[test]
    fn free_identity_function_is_identity() {
        let g = SpatialGrid::new(12.0, 256).unwrap();
        let f = random_fn(g, 1);
        let m = OperatorModel::free(g);
        let out = apply_function(&m, |_| C64::new(1.0, 0.0), &f).unwrap();
        assert!(out.max_abs_diff(&f) < 1e-12);
    }

    #[test]
    fn free_lambda_matches_second_difference() {
        // -f'' of a modulated Gaussian against the three-point stencil.
        let fine = |n: usize| {
            let g = SpatialGrid::new(16.0, n).unwrap();
            let f = GridFunction::from_fn(g, |x| C64::from_polar((-x * x / 2.0).exp(), 1.5 * x));
            let hf = apply_function(&OperatorModel::free(g), |l| C64::new(l, 0.0), &f).unwrap();
            let h = g.spacing();
            let v = f.values();
            let mut err: f64 = 0.0;
            for i in 1..n - 1 {
                let fd = -(v[i + 1] - 2.0 * v[i] + v[i - 1]) / (h * h);
                err = err.max((fd - hf.values()[i]).norm());
            }
            err
        };
        let (e1, e2) = (fine(256), fine(512));
        assert!(e1 < 0.05, "{e1}");
        // Second order: halving the spacing quarters the discrepancy.
        assert_relative_eq!(e1 / e2, 4.0, max_relative = 0.05);
    }

    #[test]
    fn generic_lambda_acts_on_eigencoefficients() {
        let g = SpatialGrid::new(1.0, 2).unwrap();
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0])).map(|x| C64::new(x, 0.0));
        let m = OperatorModel::generic_hermitian(g, d, Smoothing::default()).unwrap();
        let f = GridFunction::new(g, vec![C64::new(3.0, 0.0), C64::new(0.0, 5.0)]).unwrap();
        let out = apply_function(&m, |l| C64::new(l, 0.0), &f).unwrap();
        assert!((out.values()[0] - C64::new(3.0, 0.0)).norm() < 1e-14);
        assert!((out.values()[1] - C64::new(0.0, 10.0)).norm() < 1e-14);
    }

    #[test]
    fn unitary_group_preserves_norm() {
        let g = SpatialGrid::new(12.0, 256).unwrap();
        let f = random_fn(g, 7);
        let free = OperatorModel::free(g);
        let gen = OperatorModel::generic_hermitian(
            SpatialGrid::new(4.0, 32).unwrap(),
            hermitian(32, 9),
            Smoothing::default(),
        )
        .unwrap();
        let f32 = random_fn(*gen.grid(), 8);
        for t in [0.3, 5.0, 40.0] {
            let u = apply_function(&free, |l| C64::from_polar(1.0, t * l), &f).unwrap();
            assert_relative_eq!(u.norm(), f.norm(), max_relative = 1e-10);
            let u = apply_function(&gen, |l| C64::from_polar(1.0, t * l), &f32).unwrap();
            assert_relative_eq!(u.norm(), f32.norm(), max_relative = 1e-10);
        }
    }

    #[test]
    fn non_finite_function_is_rejected() {
        let g = SpatialGrid::new(12.0, 64).unwrap();
        let f = random_fn(g, 1);
        let err = apply_function(&OperatorModel::free(g), |l| C64::new(1.0 / (l - l), 0.0), &f).unwrap_err();
        assert!(matches!(err, Error::NotFiniteOnSpectrum { .. }));
    }

    #[test]
    fn free_projector_masks_frequencies() {
        let g = SpatialGrid::new(12.0, 256).unwrap();
        let f = GridFunction::from_fn(g, |x| C64::new((-x * x / 4.0).exp(), 0.0));
        let w = Window::new(1.0, 4.0).unwrap();
        let p = spectral_projector(&OperatorModel::free(g), w, &f).unwrap();
        let ph = fourier(&p);
        let fh = fourier(&f);
        for k in 0..g.len() {
            let xi = g.freq_node(k);
            let expect = if w.contains(xi * xi) { fh.values()[k] } else { C64::new(0.0, 0.0) };
            assert!((ph.values()[k] - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn perturbed_model_uses_grid_hamiltonian() {
        let g = SpatialGrid::new(8.0, 64).unwrap();
        let v = PotentialSpec::from_fn(&g, |x| 0.3 * (-x * x).exp(), 1.0);
        let m = OperatorModel::perturbed(g, v).unwrap();
        let f = random_fn(g, 2);
        let u = apply_function(&m, |l| C64::from_polar(1.0, 2.0 * l), &f).unwrap();
        assert_relative_eq!(u.norm(), f.norm(), max_relative = 1e-10);
        assert!(m.eigen().unwrap().values[0] > 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn calculus_is_multiplicative(seed in 0u64..1000, t in -5.0f64..5.0) {
                let g = SpatialGrid::new(10.0, 128).unwrap();
                let f = random_fn(g, seed);
                let gen = OperatorModel::generic_hermitian(SpatialGrid::new(4.0, 16).unwrap(), hermitian(16, seed), Smoothing::default()).unwrap();
                let f16 = random_fn(*gen.grid(), seed + 1);
                for (model, phi) in [(&OperatorModel::free(g), &f), (&gen, &f16)] {
                    let g1 = |l: f64| C64::from_polar(1.0, t * l);
                    let g2 = |l: f64| C64::new(1.0 / (1.0 + l * l), 0.0);
                    let two = apply_function(model, g1, &apply_function(model, g2, phi).unwrap()).unwrap();
                    let one = apply_function(model, |l| g1(l) * g2(l), phi).unwrap();
                    prop_assert!(two.max_abs_diff(&one) < 1e-10);
                }
            }

            #[test]
            fn projector_is_idempotent_and_commutes(seed in 0u64..1000, lo in 0.0f64..2.0, w in 0.1f64..3.0) {
                let g = SpatialGrid::new(10.0, 128).unwrap();
                let f = random_fn(g, seed);
                let m = OperatorModel::free(g);
                let win = Window::new(lo, lo + w).unwrap();
                let p = spectral_projector(&m, win, &f).unwrap();
                let pp = spectral_projector(&m, win, &p).unwrap();
                prop_assert!(pp.max_abs_diff(&p) < 1e-12);
                let ev = |h: &GridFunction| apply_function(&m, |l| C64::from_polar(1.0, 0.7 * l), h).unwrap();
                let a = ev(&p);
                let b = spectral_projector(&m, win, &ev(&f)).unwrap();
                prop_assert!(a.max_abs_diff(&b) < 1e-10);
                // Self-adjoint: (Pf, h) = (f, Ph).
                let h = random_fn(g, seed + 17);
                let ph = spectral_projector(&m, win, &h).unwrap();
                prop_assert!((p.inner(&h) - f.inner(&ph)).norm() < 1e-12);
            }
        }
    }
}
