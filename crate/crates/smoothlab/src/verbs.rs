//! One function per verb. Each returns its checks, a JSON summary and the tabular artifacts.

use std::f64::consts::PI;
use std::path::Path;

use serde_json::json;
use smoothlab_core::best_constant::{certify, CertifyConfig};
use smoothlab_core::comparison::{
    check_global, check_local, check_uniform, nyquist_cap, powers_weight, reweight, ComparisonConfig, ComparisonMode,
};
use smoothlab_core::density::{agmon_scan, density_norms, smoothed_envelope_fit, PowerFit};
use smoothlab_core::evolution::{
    apriori_check, apriori_sweep, default_lambda_grid, evolve_signal, identity_dual, identity_scalar, random_batch,
    spectral_rule, Resolution,
};
use smoothlab_core::expr::Expr;
use smoothlab_core::models::{ModelKind, SpectralFunction};
use smoothlab_core::perturbation::{lap_condition_scan, perturbed_smoothing_check, DEFAULT_EXCLUSION_THRESHOLD};
use smoothlab_core::quad::log_space;
use smoothlab_core::Result;

use crate::config::{CompareMode, ModelConfig, Scenario, ScenarioConfig, Tolerances};
use crate::report::{Artifacts, Check};

pub struct Ctx<'a> {
    pub cfg: &'a ScenarioConfig,
    pub sc: &'a Scenario,
    pub tol: Tolerances,
    pub seed: u64,
    pub base: Option<&'a Path>,
}

pub type VerbOutput = (Vec<Check>, serde_json::Value, Artifacts);

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn scan_rows(sf: &SpectralFunction, lambdas: &[f64], norms: &[f64]) -> Vec<Vec<f64>> {
    lambdas
        .iter()
        .zip(norms)
        .map(|(&l, &n)| vec![l, n, (2.0 * PI).sqrt() * sf.amplitude(l) * n.max(0.0).sqrt()])
        .collect()
}

pub fn identity(ctx: &Ctx) -> Result<VerbOutput> {
    let Scenario { model, sf, s, phi, psi, .. } = ctx.sc;
    let res = Resolution::level(ctx.cfg.resolution_level);
    let tol = ctx.tol.identity_residual;
    let mut checks = Vec::new();
    let mut art = Artifacts::default();
    let scalar = identity_scalar(model, sf, phi, psi, &res)?;
    checks.push(Check::new("identity-scalar", scalar.lhs, scalar.rhs, scalar.residual, tol, scalar.residual <= tol));
    let mut dual = None;
    if model.kind() != ModelKind::PerturbedSchrodinger1D && s.is_smoothing_admissible() {
        let d = identity_dual(model, sf, phi, *s, &res)?;
        checks.push(Check::new("identity-dual", d.lhs, d.rhs, d.residual, tol, d.residual <= tol));
        dual = Some(d);
    }
    let signal = evolve_signal(model, sf, phi, psi, &res)?;
    let ts = res.time.nodes();
    art.csv(
        "time_signal",
        &["t", "re_F", "im_F", "abs_F"],
        ts.iter().zip(&signal).map(|(&t, z)| vec![t, z.re, z.im, z.norm()]),
    );
    art.dat("time_signal", "t |F(t)|", ts.iter().zip(&signal).map(|(&t, z)| (t, z.norm())));
    let data = json!({ "resolution": res, "scalar": scalar, "dual": dual });
    Ok((checks, data, art))
}

pub fn apriori(ctx: &Ctx) -> Result<VerbOutput> {
    let Scenario { model, sf, s, phi, .. } = ctx.sc;
    let pts = sf.filter_grid(&default_lambda_grid(sf, ctx.cfg.lambda_points));
    let norms = density_norms(model, *s, &pts)?;
    let scan = scan_rows(sf, &pts, &norms);
    let (constant, argmax) = scan.iter().fold((0.0, f64::NAN), |b, r| if r[2] > b.0 { (r[2], r[0]) } else { b });
    let batch = random_batch(model.grid(), ctx.cfg.batch_size, ctx.seed);
    let rule = spectral_rule(sf, 24, 8, Some(nyquist_cap(model)))?;
    let slack = ctx.tol.apriori_slack;
    let sweep = apriori_sweep(model, sf, *s, &batch, &rule, constant, slack)?;
    let mut checks = vec![Check::new(
        "apriori-sweep",
        sweep.worst_ratio,
        constant,
        sweep.worst_ratio / constant - 1.0,
        slack,
        sweep.pass,
    )
    .with_note(format!("{} of {} functions violate the bound", sweep.violations, batch.len()))];
    let mut art = Artifacts::default();
    let mut time_side = None;
    if model.kind() == ModelKind::FreeLaplacian1D && s.is_smoothing_admissible() {
        let res = Resolution::level(ctx.cfg.resolution_level);
        let r = apriori_check(model, sf, *s, phi, &res)?;
        let pass = r.lhs <= r.bound * (1.0 + slack);
        checks.push(Check::new("apriori-time-side", r.lhs, r.bound, r.lhs / r.bound - 1.0, slack, pass));
        time_side = Some(r);
    }
    art.dat("bound_scan", "lambda sqrt(2pi)|sigma|/a'^(1/2) N^(1/2)", scan.iter().map(|r| (r[0], r[2])));
    art.csv("bound_scan", &["lambda", "density_norm", "bound_density"], scan);
    art.csv("ratios", &["index", "ratio"], sweep.ratios.iter().enumerate().map(|(i, &r)| vec![i as f64, r]));
    let mut decay_fit = None;
    if let Some(d) = ctx.cfg.decay {
        let [lo, hi] = d.lambda_range;
        let fit: PowerFit = match model.kind() {
            ModelKind::StarkFD | ModelKind::GenericHermitian => {
                smoothed_envelope_fit(model, *s, lo, hi, d.envelope_gaps, d.envelope_samples)?
            }
            _ => agmon_scan(model, *s, &log_space(lo, hi, 24))?,
        };
        let [a, b] = d.slope_range;
        checks.push(
            Check::new(
                "decay-slope",
                fit.slope,
                0.5 * (a + b),
                fit.slope,
                0.5 * (b - a),
                fit.slope >= a && fit.slope <= b,
            )
            .with_note(format!("accepted slope range [{a}, {b}]")),
        );
        art.csv("decay", &["lambda", "norm"], fit.lambdas.iter().zip(&fit.values).map(|(&l, &v)| vec![l, v]));
        decay_fit = Some(json!({ "slope": fit.slope, "constant": fit.constant }));
    }
    let data = json!({
        "constant": constant,
        "argmax": argmax,
        "worst_ratio": sweep.worst_ratio,
        "violations": sweep.violations,
        "batch_size": batch.len(),
        "time_side": time_side,
        "decay": decay_fit,
    });
    Ok((checks, data, art))
}

pub fn best_constant(ctx: &Ctx) -> Result<VerbOutput> {
    let Scenario { model, sf, s, .. } = ctx.sc;
    let lambdas = default_lambda_grid(sf, ctx.cfg.lambda_points);
    let mut cc = CertifyConfig::for_model(model);
    if let Some(g) = ctx.tol.best_constant_gap {
        cc.tolerance = g;
    }
    let r = certify(model, sf, *s, &lambdas, &cc)?;
    let mut checks = vec![Check::new("best-constant-gap", r.lhs_best, r.rhs_sup, r.gap, cc.tolerance, r.pass)];
    if let Some([value, t]) = ctx.tol.expect_rhs_sup {
        let e = rel(r.rhs_sup, value);
        checks.push(Check::new("rhs-sup-expected", r.rhs_sup, value, e, t, e <= t));
    }
    let mut art = Artifacts::default();
    art.csv(
        "k_sequence",
        &["h", "K_h", "sqrt2pi_K_h"],
        r.lhs_lower_sequence.iter().map(|&(h, k)| vec![h, k, (2.0 * PI).sqrt() * k]),
    );
    art.dat("k_sequence", "h sqrt(2pi)K_h", r.lhs_lower_sequence.iter().map(|&(h, k)| (h, (2.0 * PI).sqrt() * k)));
    let pts = sf.filter_grid(&lambdas);
    let norms = density_norms(model, *s, &pts)?;
    art.csv("rhs_scan", &["lambda", "density_norm", "bound_density"], scan_rows(sf, &pts, &norms));
    Ok((checks, serde_json::to_value(&r).expect("serializable"), art))
}

fn weight_rows(sf: &SpectralFunction, st: &SpectralFunction, lambdas: &[f64]) -> Vec<Vec<f64>> {
    lambdas
        .iter()
        .map(|&l| vec![l, sf.sigma(l), sf.a_prime(l), sf.weight(l), st.sigma(l), st.a_prime(l), st.weight(l)])
        .collect()
}

const WEIGHT_HEADER: &[&str] =
    &["lambda", "sigma", "a_prime", "weight", "sigma_tilde", "a_tilde_prime", "weight_tilde"];

fn uniform_checks(
    ctx: &Ctx,
    sf_tilde: &SpectralFunction,
    art: &mut Artifacts,
) -> Result<(Vec<Check>, serde_json::Value)> {
    let Scenario { model, sf, s, .. } = ctx.sc;
    let lambdas = default_lambda_grid(sf, ctx.cfg.lambda_points);
    let batch = random_batch(model.grid(), ctx.cfg.batch_size, ctx.seed);
    let cc = ComparisonConfig::new(sf.clone(), sf_tilde.clone(), ComparisonMode::Uniform)?;
    let r = check_uniform(model, model, &cc, *s, &lambdas, &batch)?;
    let slack = ctx.tol.transfer_slack;
    let violations = r.ratios.iter().filter(|&&q| q > r.c0 * (1.0 + slack)).count();
    art.csv("ratios", &["index", "ratio"], r.ratios.iter().enumerate().map(|(i, &q)| vec![i as f64, q]));
    let checks = vec![
        Check::new("uniform-condition", r.worst_margin, 0.0, r.worst_margin, 0.0, r.condition_holds)
            .with_note(format!("smallest relative margin at lambda = {}", r.worst_lambda)),
        Check::new("uniform-transfer", r.worst_ratio, r.c0, r.worst_ratio / r.c0 - 1.0, slack, violations == 0)
            .with_note(format!("{violations} of {} functions exceed the transferred constant", batch.len())),
    ];
    let data = json!({
        "c0": r.c0,
        "worst_ratio": r.worst_ratio,
        "worst_margin": r.worst_margin,
        "worst_lambda": r.worst_lambda,
        "violations": violations,
    });
    Ok((checks, data))
}

pub fn compare(ctx: &Ctx) -> Result<VerbOutput> {
    let Scenario { model, sf, s, phi, psi, .. } = ctx.sc;
    let c = ctx.cfg.compare.as_ref().expect("checked before dispatch");
    let a_t = Expr::parse(&c.a_tilde)?;
    let mut sf_t = match &c.sigma_tilde {
        Some(st) => SpectralFunction::new(Expr::parse(st)?, a_t, sf.window())?,
        None => reweight(sf, &a_t)?,
    };
    if c.sigma_scale != 1.0 {
        let scaled = Expr::Mul(Box::new(Expr::constant(c.sigma_scale)), Box::new(sf_t.sigma_expr().clone()));
        sf_t = SpectralFunction::new(scaled, sf_t.a_expr().clone(), sf.window())?;
    }
    let lambdas = default_lambda_grid(sf, ctx.cfg.lambda_points);
    let mut art = Artifacts::default();
    art.csv("weights", WEIGHT_HEADER, weight_rows(sf, &sf_t, &sf.filter_grid(&lambdas)));
    let res = Resolution::level(ctx.cfg.resolution_level);
    let time = c.time_side.then_some(&res);
    let (checks, data) = match c.mode {
        CompareMode::Uniform => uniform_checks(ctx, &sf_t, &mut art)?,
        mode => {
            let cc = ComparisonConfig::new(
                sf.clone(),
                sf_t.clone(),
                if mode == CompareMode::Local { ComparisonMode::Local } else { ComparisonMode::Global },
            )?;
            let r = if mode == CompareMode::Local {
                check_local(model, model, &cc, phi, psi, &lambdas, time)?
            } else {
                check_global(model, model, &cc, phi, *s, &lambdas, time)?
            };
            let mut checks = vec![
                Check::new("pointwise-condition", r.worst_margin, 0.0, r.worst_margin, 0.0, r.condition_holds)
                    .with_note(format!("smallest relative margin at lambda = {}", r.worst_lambda)),
                Check::new(
                    "norm-conclusion",
                    r.lhs_norm,
                    r.rhs_norm,
                    rel(r.rhs_norm, r.lhs_norm),
                    0.0,
                    r.conclusion_holds,
                ),
            ];
            if let Some((a, b)) = r.time_norms {
                // The time sides carry the identity residual on top of the spectral comparison.
                let tol = ctx.tol.identity_residual;
                checks.push(Check::new("time-side-conclusion", a, b, b / a - 1.0, tol, b <= a * (1.0 + tol)));
            }
            (checks, serde_json::to_value(&r).expect("serializable"))
        }
    };
    Ok((checks, data, art))
}

pub fn powers(ctx: &Ctx) -> Result<VerbOutput> {
    let sf = &ctx.sc.sf;
    let alpha = ctx.cfg.powers.expect("checked before dispatch").alpha;
    let sf_t = powers_weight(sf, &Expr::var().powf(alpha))?;
    let lambdas = sf.filter_grid(&default_lambda_grid(sf, ctx.cfg.lambda_points));
    // σ̃ = σ α^{1/2} λ^{(α-1)/2}
    let worst = lambdas
        .iter()
        .map(|&l| rel(sf_t.sigma(l), sf.sigma(l) * alpha.sqrt() * l.powf(0.5 * (alpha - 1.0))))
        .fold(0.0, f64::max);
    let mut checks = vec![Check::new("powers-weight-closed-form", worst, 0.0, worst, 1e-10, worst <= 1e-10)];
    let mut art = Artifacts::default();
    art.csv("weights", WEIGHT_HEADER, weight_rows(sf, &sf_t, &lambdas));
    let (more, summary) = uniform_checks(ctx, &sf_t, &mut art)?;
    checks.extend(more);
    let data = json!({
        "alpha": alpha,
        "weight_prefactor": alpha,
        "display_prefactor": alpha * alpha,
        "sigma_tilde": sf_t.sigma_expr().to_string(),
        "a_tilde": sf_t.a_expr().to_string(),
        "transfer": summary,
    });
    Ok((checks, data, art))
}

pub fn perturb(ctx: &Ctx) -> Result<VerbOutput> {
    let Scenario { model, sf, s, .. } = ctx.sc;
    let batch = random_batch(model.grid(), ctx.cfg.batch_size, ctx.seed);
    let coarse = perturbed_smoothing_check(model, sf, *s, &batch, 24)?;
    let fine = perturbed_smoothing_check(model, sf, *s, &batch, 48)?;
    let slack = ctx.tol.apriori_slack;
    let drift = rel(fine.empirical_constant, coarse.empirical_constant);
    let checks = vec![
        Check::new(
            "perturbed-bound",
            fine.empirical_constant,
            fine.bound,
            fine.empirical_constant / fine.bound - 1.0,
            slack,
            fine.empirical_constant <= fine.bound * (1.0 + slack),
        ),
        Check::new(
            "perturbed-refinement",
            fine.empirical_constant,
            coarse.empirical_constant,
            drift,
            ctx.tol.refinement,
            drift <= ctx.tol.refinement,
        ),
    ];
    let mut art = Artifacts::default();
    art.csv("ratios", &["index", "ratio"], fine.ratios.iter().enumerate().map(|(i, &q)| vec![i as f64, q]));
    let data = json!({
        "empirical_constant": fine.empirical_constant,
        "bound": fine.bound,
        "bound_argmax": fine.bound_argmax,
        "coarse_empirical_constant": coarse.empirical_constant,
    });
    Ok((checks, data, art))
}

pub fn lap_scan(ctx: &Ctx) -> Result<VerbOutput> {
    let Scenario { model, sf, s, potential, .. } = ctx.sc;
    let v = potential.as_ref().expect("checked before dispatch");
    let w = sf.window();
    let lambdas = log_space(w.lo, w.hi, ctx.cfg.lambda_points);
    let r = lap_condition_scan(v, model.grid(), *s, &lambdas, DEFAULT_EXCLUSION_THRESHOLD)?;
    // Same potential on a grid with twice the points.
    let mut doubled = ctx.cfg.clone();
    if let ModelConfig::Schrodinger { n_points, .. } = &mut doubled.model {
        *n_points *= 2;
    }
    let sc2 = doubled.build(ctx.base).map_err(|e| smoothlab_core::Error::Config(e.to_string()))?;
    let r2 = lap_condition_scan(
        sc2.potential.as_ref().expect("same model kind"),
        sc2.model.grid(),
        *s,
        &lambdas,
        DEFAULT_EXCLUSION_THRESHOLD,
    )?;
    let drift = rel(r2.sup_inv_norm, r.sup_inv_norm);
    let tol = ctx.tol.lap_refinement;
    let checks = vec![
        Check::new(
            "lap-sup-finite",
            r.sup_inv_norm,
            DEFAULT_EXCLUSION_THRESHOLD,
            r.sup_inv_norm,
            DEFAULT_EXCLUSION_THRESHOLD,
            r.sup_inv_norm.is_finite() && r.exclusions.is_empty(),
        )
        .with_note(format!("{} excluded lambdas", r.exclusions.len())),
        Check::new("lap-refinement", r2.sup_inv_norm, r.sup_inv_norm, drift, tol, drift <= tol),
        Check::new("vr-top-decade", r.top_decade_vr, 1.0, r.top_decade_vr, 1.0, r.limsup_ok),
    ];
    let mut art = Artifacts::default();
    art.csv(
        "lap_scan",
        &["lambda", "inv_norm_plus", "inv_norm_minus", "vr_norm_plus", "vr_norm_minus"],
        r.rows.iter().map(|x| vec![x.lambda, x.inv_norm_plus, x.inv_norm_minus, x.vr_norm_plus, x.vr_norm_minus]),
    );
    art.dat(
        "lap_scan",
        "lambda max ||(I+VR)^-1||_{s,s}",
        r.rows.iter().map(|x| (x.lambda, x.inv_norm_plus.max(x.inv_norm_minus))),
    );
    let data = json!({
        "sup_inv_norm": r.sup_inv_norm,
        "argmax": r.argmax,
        "top_decade_vr": r.top_decade_vr,
        "exclusions": r.exclusions,
        "refined_sup_inv_norm": r2.sup_inv_norm,
    });
    Ok((checks, data, art))
}
