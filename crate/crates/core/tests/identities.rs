use num_complex::Complex64 as C64;
use smoothlab_core::evolution::{identity_dual, identity_scalar, Resolution};
use smoothlab_core::models::{OperatorModel, SpectralFunction, Window};
use smoothlab_core::spaces::{GridFunction, SpatialGrid, WeightExponent};

fn setup() -> (OperatorModel, SpectralFunction, GridFunction, GridFunction) {
    let g = SpatialGrid::new(12.0, 128).unwrap();
    let sf = SpectralFunction::parse("lambda^0.25", "lambda", Window::new(0.01, 100.0).unwrap()).unwrap();
    let phi = GridFunction::from_fn(g, |x| C64::new((-(x - 0.5) * (x - 0.5) / 2.0).exp(), 0.0));
    let psi = GridFunction::from_fn(g, |x| C64::from_polar((-(x + 0.3) * (x + 0.3) / 1.5).exp(), 0.7 * x));
    (OperatorModel::free(g), sf, phi, psi)
}

#[test]
fn scalar_identity_converges_under_refinement() {
    let (m, sf, phi, psi) = setup();
    let mut last = f64::INFINITY;
    for k in 0..3 {
        let r = identity_scalar(&m, &sf, &phi, &psi, &Resolution::level(k)).unwrap();
        eprintln!("scalar level {k}: {r:?}");
        if k == 0 {
            assert!(r.residual <= 1e-3);
        }
        assert!(r.residual <= last + 1e-12);
        last = r.residual;
    }
}

#[test]
fn dual_identity_converges_under_refinement() {
    let (m, sf, phi, _) = setup();
    let mut last = f64::INFINITY;
    for k in 0..3 {
        let r = identity_dual(&m, &sf, &phi, WeightExponent(1.0), &Resolution::level(k)).unwrap();
        eprintln!("dual level {k}: {r:?}");
        if k == 0 {
            assert!(r.residual <= 1e-3);
        }
        assert!(r.residual <= last + 1e-12);
        last = r.residual;
    }
}
