//! Acceptance suite. Runs without the libtest harness and prints one verdict line per
//! criterion; the process fails if any criterion fails.

use std::f64::consts::PI;
use std::process::{Command, ExitCode};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smoothlab_core::best_constant::{certify, default_scan_grid, CertifyConfig};
use smoothlab_core::comparison::{check_uniform, nyquist_cap, powers_weight, ComparisonConfig, ComparisonMode};
use smoothlab_core::density::{
    agmon_scan, density_rep, fit_power_law, free_density_norm, smoothed_envelope_fit, smoothed_matrix, Sign,
};
use smoothlab_core::evolution::{
    apriori_sweep, identity_dual, identity_scalar, random_batch, spectral_rule, Resolution,
};
use smoothlab_core::expr::Expr;
use smoothlab_core::models::{OperatorModel, PotentialSpec, Smoothing, SpectralFunction, Window};
use smoothlab_core::perturbation::{
    free_resolvent_kernel, lap_condition_scan, perturbed_density, perturbed_smoothing_check, smoothed_chain,
    stone_density, DEFAULT_EXCLUSION_THRESHOLD,
};
use smoothlab_core::quad::log_space;
use smoothlab_core::spaces::{op_norm_weighted, GridFunction, OperatorRep, SpatialGrid, WeightExponent};
use smoothlab_core::{Result, C64};

const SEED: u64 = 0xC0FFEE;
const S1: WeightExponent = WeightExponent(1.0);

struct Verdict {
    pass: bool,
    summary: String,
}

fn verdict(pass: bool, summary: String) -> Result<Verdict> {
    Ok(Verdict { pass, summary })
}

fn gaussian(grid: SpatialGrid, c: f64, two_w2: f64, k: f64) -> GridFunction {
    GridFunction::from_fn(grid, |x| C64::from_polar((-(x - c).powi(2) / two_w2).exp(), k * x))
}

fn sci(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>().join(" > ")
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn identity_suite() -> Result<Verdict> {
    let g = SpatialGrid::new(12.0, 128)?;
    let m = OperatorModel::free(g);
    let sf = SpectralFunction::parse("lambda^0.25", "lambda", Window::new(0.01, 100.0)?)?;
    let phi = gaussian(g, 0.5, 2.0, 0.0);
    let psi = gaussian(g, -0.3, 1.5, 0.7);
    let (mut scalar, mut dual) = (Vec::new(), Vec::new());
    for level in 0..3 {
        let res = Resolution::level(level);
        scalar.push(identity_scalar(&m, &sf, &phi, &psi, &res)?.residual);
        dual.push(identity_dual(&m, &sf, &phi, S1, &res)?.residual);
    }
    let decreasing = |r: &[f64]| r.windows(2).all(|w| w[1] < w[0]);
    let pass = scalar[0] <= 1e-3 && dual[0] <= 1e-3 && decreasing(&scalar) && decreasing(&dual);
    verdict(
        pass,
        format!("scalar residuals {}, dual residuals {} (level 0 <= 1e-3, decreasing)", sci(&scalar), sci(&dual)),
    )
}

fn closed_form_density_norm() -> Result<Verdict> {
    let mut worst: f64 = 0.0;
    for l in log_space(1e-3, 1e3, 61) {
        let gram = l.sqrt() * free_density_norm(l, S1)?;
        let exact = (1.0 + (-2.0 * l.sqrt()).exp()) / 4.0;
        worst = worst.max(rel(gram, exact));
    }
    verdict(worst <= 1e-6, format!("max relative error {worst:.2e} over 61 points in [1e-3, 1e3] (<= 1e-6)"))
}

fn best_constant() -> Result<Verdict> {
    let sf = SpectralFunction::parse("lambda^0.25", "lambda", Window::new(1e-4, 1e4)?)?;
    let big = OperatorModel::free(SpatialGrid::new(1000.0, 4096)?);
    let r = certify(&big, &sf, S1, &default_scan_grid(&sf), &CertifyConfig::for_model(&big))?;
    let sup_err = rel(r.rhs_sup, PI.sqrt());
    // 1000 random φ on a smaller grid; the rule stops at the grid Nyquist energy.
    let g = SpatialGrid::new(40.0, 512)?;
    let m = OperatorModel::free(g);
    let batch = random_batch(&g, 1000, SEED);
    let rule = spectral_rule(&sf, 24, 8, Some(nyquist_cap(&m)))?;
    let sweep = apriori_sweep(&m, &sf, S1, &batch, &rule, r.rhs_sup, 0.01)?;
    let pass = sup_err <= 0.01 && r.gap <= 0.05 && r.gap >= -0.01 && sweep.violations == 0;
    verdict(
        pass,
        format!(
            "rhs_sup {:.5} (sqrt(pi) off by {:.2}%), packet lower bound {:.5} (gap {:.2}%), worst ratio {:.4} over 1000 phi, {} violations",
            r.rhs_sup,
            100.0 * sup_err,
            r.lhs_best,
            100.0 * r.gap,
            sweep.worst_ratio,
            sweep.violations
        ),
    )
}

fn agmon_exponent() -> Result<Verdict> {
    let m = OperatorModel::free(SpatialGrid::new(10.0, 64)?);
    let density = agmon_scan(&m, S1, &log_space(10.0, 1e3, 24))?.slope;
    let g = SpatialGrid::new(8.0, 512)?;
    let lams = log_space(10.0, 1e3, 8);
    let norms = lams
        .iter()
        .map(|&l| op_norm_weighted(&free_resolvent_kernel(l, Sign::Plus, &g)?, &g, -S1, -S1))
        .collect::<Result<Vec<_>>>()?;
    let resolvent = fit_power_law(&lams, &norms)?.slope;
    let pass = (density + 0.5).abs() <= 0.05 && (resolvent + 0.5).abs() <= 0.05;
    verdict(pass, format!("density slope {density:.4}, resolvent slope {resolvent:.4} (target -0.5 +- 0.05)"))
}

fn random_hermitian(n: usize, rng: &mut ChaCha8Rng, scale: f64) -> DMatrix<C64> {
    let a = DMatrix::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    (&a + a.adjoint()) * C64::new(0.5 * scale, 0.0)
}

fn perturbation_algebra() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let g = SpatialGrid::new(6.0, 64)?;
    let eps = 1e-2;
    let (mut chain_err, mut zero_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..4 {
        let model = OperatorModel::generic_hermitian(g, random_hermitian(64, &mut rng, 1.0), Smoothing::Fixed(eps))?;
        let h = model.matrix().expect("matrix model").clone();
        let v = random_hermitian(64, &mut rng, 0.3);
        for l in [-0.5, 0.1, 0.7] {
            let direct = stone_density(&(&h + &v), l, eps)?;
            chain_err = chain_err.max((smoothed_chain(&h, &v, l, eps)? - &direct).norm() / direct.norm());
            let unperturbed = smoothed_matrix(model.eigen().expect("matrix model"), l, eps);
            let zero = smoothed_chain(&h, &DMatrix::zeros(64, 64), l, eps)?;
            zero_err = zero_err.max((zero - &unperturbed).norm() / unperturbed.norm());
        }
    }
    // V = 0 on the line: Ã = A and ‖(I + VR±)^{-1}‖ = 1.
    let line = SpatialGrid::new(6.0, 128)?;
    let zero_v = PotentialSpec::zero(&line);
    for l in [0.5, 2.0, 30.0] {
        let pd = perturbed_density(&line, &zero_v, l, S1)?;
        let a = density_rep(&OperatorModel::free(line), l)?.rep.to_dense(&line);
        let OperatorRep::DenseMatrix(at) = &pd.density.rep else { unreachable!("dense chain") };
        zero_err = zero_err.max((at - &a).norm() / a.norm()).max((pd.ratio - 1.0).abs());
    }
    let scan = lap_condition_scan(&zero_v, &line, S1, &log_space(0.1, 1e3, 8), DEFAULT_EXCLUSION_THRESHOLD)?;
    zero_err = zero_err.max((scan.sup_inv_norm - 1.0).abs());
    verdict(
        chain_err <= 1e-10 && zero_err <= 1e-12,
        format!("chain vs direct density {chain_err:.2e} (<= 1e-10), V = 0 reduction {zero_err:.2e} (<= 1e-12)"),
    )
}

fn gaussian_potential(g: &SpatialGrid) -> PotentialSpec {
    PotentialSpec::from_fn(g, |x| 0.3 * (-x * x).exp(), 1.0)
}

fn lap_scan() -> Result<Verdict> {
    let lams = log_space(0.1, 1e3, 32);
    let run = |n: usize| -> Result<_> {
        let g = SpatialGrid::new(6.0, n)?;
        lap_condition_scan(&gaussian_potential(&g), &g, S1, &lams, DEFAULT_EXCLUSION_THRESHOLD)
    };
    let (a, b) = (run(128)?, run(256)?);
    let drift = rel(b.sup_inv_norm, a.sup_inv_norm);
    let pass = a.sup_inv_norm.is_finite() && a.exclusions.is_empty() && drift <= 0.01 && a.limsup_ok && b.limsup_ok;
    verdict(
        pass,
        format!(
            "sup ||(I+VR)^-1|| {:.6} -> {:.6} under grid doubling ({:.2e}, <= 1e-2), top-decade ||VR|| {:.3e} (< 1)",
            a.sup_inv_norm,
            b.sup_inv_norm,
            drift,
            a.top_decade_vr.max(b.top_decade_vr)
        ),
    )
}

fn perturbed_smoothing() -> Result<Verdict> {
    let sf = SpectralFunction::parse("(1+lambda)^0.25", "lambda", Window::new(0.1, 1e3)?)?;
    let run = |n: usize, panels: usize| -> Result<_> {
        let g = SpatialGrid::new(6.0, n)?;
        let model = OperatorModel::perturbed(g, gaussian_potential(&g))?;
        perturbed_smoothing_check(&model, &sf, S1, &random_batch(&g, 100, SEED), panels)
    };
    let base = run(128, 24)?;
    let finer_rule = run(128, 48)?;
    let finer_grid = run(256, 24)?;
    let drift = rel(finer_rule.empirical_constant, base.empirical_constant)
        .max(rel(finer_grid.empirical_constant, base.empirical_constant));
    let within = [&base, &finer_rule, &finer_grid].iter().all(|r| r.empirical_constant <= r.bound);
    verdict(
        within && drift <= 0.05,
        format!(
            "empirical C {:.5} vs bound {:.5}, drift under refinement {:.2e} (<= 5e-2)",
            base.empirical_constant, base.bound, drift
        ),
    )
}

fn comparison_transfer() -> Result<Verdict> {
    let g = SpatialGrid::new(20.0, 256)?;
    let m = OperatorModel::free(g);
    let w = Window::new(0.05, 20.0)?;
    let sf = SpectralFunction::parse("lambda^0.25", "lambda", w)?;
    let tilde = powers_weight(&sf, &Expr::parse("lambda^2")?)?;
    let grid = default_scan_grid(&sf);
    let batch = random_batch(&g, 100, SEED);
    let ok = check_uniform(
        &m,
        &m,
        &ComparisonConfig::new(sf.clone(), tilde.clone(), ComparisonMode::Uniform)?,
        S1,
        &grid,
        &batch,
    )?;
    let inflated = SpectralFunction::new(
        Expr::Mul(Box::new(Expr::constant(1.5)), Box::new(tilde.sigma_expr().clone())),
        tilde.a_expr().clone(),
        w,
    )?;
    let bad = check_uniform(&m, &m, &ComparisonConfig::new(sf, inflated, ComparisonMode::Uniform)?, S1, &grid, &batch)?;
    let pass = ok.condition_holds && ok.transferred && !bad.condition_holds;
    verdict(
        pass,
        format!(
            "worst ratio {:.4} vs C0 {:.4} over 100 phi ({} beyond 2%), 1.5x inflation margin {:.3} (flagged: {})",
            ok.worst_ratio, ok.c0, ok.violations, bad.worst_margin, !bad.condition_holds
        ),
    )
}

fn stark() -> Result<Verdict> {
    let m = OperatorModel::stark_fd(SpatialGrid::new(20.0, 800)?, Smoothing::default());
    let fit = smoothed_envelope_fit(&m, WeightExponent(0.75), 5.0, 200.0, 40.0, 6)?;
    verdict(
        (-0.7..=-0.3).contains(&fit.slope),
        format!("envelope slope {:.4} over {} windows in [5, 200] (target [-0.7, -0.3])", fit.slope, fit.lambdas.len()),
    )
}

fn determinism_and_contracts() -> Result<Verdict> {
    let tmp = std::env::temp_dir().join(format!("smoothlab-acceptance-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&tmp);
    let run = |args: &[&str]| -> i32 {
        Command::new(env!("CARGO_BIN_EXE_smoothlab"))
            .args(args)
            .output()
            .map(|o| o.status.code().unwrap_or(-1))
            .unwrap_or(-1)
    };
    let out = |n: &str| tmp.join(n).to_string_lossy().into_owned();
    let a = run(&["powers", "--preset", "fractional-laplacian", "--seed", "0xC0FFEE", "--out", &out("a")]);
    let b = run(&[
        "powers",
        "--preset",
        "fractional-laplacian",
        "--seed",
        "0xC0FFEE",
        "--threads",
        "1",
        "--out",
        &out("b"),
    ]);
    let mut identical = true;
    let mut files = 0;
    for entry in std::fs::read_dir(tmp.join("a")).map_err(|e| smoothlab_core::Error::Config(e.to_string()))? {
        let name = entry.map_err(|e| smoothlab_core::Error::Config(e.to_string()))?.file_name();
        if name == "metadata.json" {
            continue;
        }
        files += 1;
        identical &= std::fs::read(tmp.join("a").join(&name)).ok() == std::fs::read(tmp.join("b").join(&name)).ok();
    }
    // Failing check: inflated σ̃. Configuration error: malformed expression.
    let base = smoothlab::presets::find("fractional-laplacian").expect("shipped preset").config();
    let mut inflated = base.clone();
    inflated.compare.as_mut().expect("compare section").sigma_scale = 1.5;
    let mut broken = base;
    broken.sigma = "lambda^".into();
    std::fs::write(tmp.join("inflated.json"), serde_json::to_string(&inflated).expect("serializable")).ok();
    std::fs::write(tmp.join("broken.json"), serde_json::to_string(&broken).expect("serializable")).ok();
    let fail = run(&["compare", "--config", &out("inflated.json"), "--out", &out("c")]);
    let parse = run(&["compare", "--config", &out("broken.json"), "--out", &out("d")]);
    let no_partial = !tmp.join("d").exists();
    let _ = std::fs::remove_dir_all(&tmp);
    let pass = a == 0 && b == 0 && identical && files >= 3 && fail == 1 && parse == 2 && no_partial;
    verdict(
        pass,
        format!(
            "{files} output files byte-identical: {identical}; exit codes pass/fail/parse = {a}/{fail}/{parse} (want 0/1/2), no partial outputs: {no_partial}"
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Result<Verdict>); 10] = [
        ("identity suite", identity_suite),
        ("closed-form density norm", closed_form_density_norm),
        ("best constant", best_constant),
        ("Agmon exponent", agmon_exponent),
        ("perturbation algebra", perturbation_algebra),
        ("LAP scan", lap_scan),
        ("perturbed smoothing", perturbed_smoothing),
        ("comparison transfer", comparison_transfer),
        ("Stark envelope", stark),
        ("determinism and exit codes", determinism_and_contracts),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let (pass, summary) = match f() {
            Ok(v) => (v.pass, v.summary),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!(
            "criterion {:>2} {} {name}: {summary} [{:.1} s]",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
