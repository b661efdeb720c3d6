//! Experiment harness for `smoothlab-core`: scenario configs, verbs and report emission.
//!
//! Exit-code contract of the binary: 0 when every check passes, 1 when a check
//! fails (or a numerical routine gives up), 2 for configuration errors. A
//! configuration error writes nothing.

pub mod config;
pub mod presets;
pub mod report;
pub mod verbs;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::ValueEnum;
use smoothlab_core::models::ModelKind;
use smoothlab_core::Error as CoreError;

use config::{ScenarioConfig, DEFAULT_SEED};
use report::{Artifacts, Check, EstimateReport, Fingerprint, Metadata, REPORT_SCHEMA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Verb {
    Identity,
    Apriori,
    BestConstant,
    Compare,
    Powers,
    Perturb,
    LapScan,
    ListPresets,
}

impl Verb {
    pub fn name(self) -> String {
        self.to_possible_value().expect("no skipped variants").get_name().to_string()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Io(_) => 1,
        }
    }
}

/// Core errors caused by the scenario rather than by the numerics.
fn is_config_error(e: &CoreError) -> bool {
    matches!(
        e,
        CoreError::Config(_)
            | CoreError::Expression { .. }
            | CoreError::InvalidSpectralFunction(_)
            | CoreError::InvalidGrid(_)
            | CoreError::InvalidPotential(_)
            | CoreError::WeightTooWeak { .. }
            | CoreError::Nyquist { .. }
            | CoreError::EmptyGrid
            | CoreError::InvalidLambda { .. }
            | CoreError::Truncation { .. }
            | CoreError::Unsupported(_)
    )
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub verb: Verb,
    pub config: Option<PathBuf>,
    pub preset: Option<String>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub tolerance_scale: f64,
}

pub struct Outcome {
    pub report: EstimateReport,
    pub artifacts: Artifacts,
    pub out_dir: PathBuf,
}

impl Outcome {
    pub fn exit_code(&self) -> u8 {
        if self.report.all_pass {
            0
        } else {
            1
        }
    }
}

/// Resolves the scenario, checks that the verb has what it needs and runs it.
/// Nothing is written to disk here.
pub fn run(opts: &RunOptions) -> Result<Outcome, HarnessError> {
    if !(opts.tolerance_scale.is_finite() && opts.tolerance_scale > 0.0) {
        return Err(HarnessError::Config(format!("--tolerance-scale must be positive, got {}", opts.tolerance_scale)));
    }
    let (cfg, base): (ScenarioConfig, Option<PathBuf>) = match (&opts.config, &opts.preset) {
        (Some(_), Some(_)) => return Err(HarnessError::Config("give either --config or --preset, not both".into())),
        (Some(path), None) => (config::load(path)?, path.parent().map(Path::to_path_buf)),
        (None, Some(name)) => (presets::find(name)?.config(), None),
        (None, None) => {
            return Err(HarnessError::Config("a scenario is required: --config <path> or --preset <name>".into()))
        }
    };
    let sc = cfg.build(base.as_deref())?;
    let verb = opts.verb;
    let missing = match verb {
        Verb::Compare if cfg.compare.is_none() => Some("the compare verb needs a `compare` section"),
        Verb::Powers if cfg.powers.is_none() => Some("the powers verb needs a `powers` section"),
        Verb::LapScan if sc.potential.is_none() => Some("lap-scan needs a schrodinger model"),
        Verb::Perturb if !matches!(sc.model.kind(), ModelKind::PerturbedSchrodinger1D | ModelKind::FreeLaplacian1D) => {
            Some("perturb needs a free or schrodinger model")
        }
        Verb::ListPresets => Some("list-presets takes no scenario"),
        _ => None,
    };
    if let Some(m) = missing {
        return Err(HarnessError::Config(m.into()));
    }
    let seed = opts.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
    let ctx = verbs::Ctx {
        cfg: &cfg,
        sc: &sc,
        tol: cfg.tolerances.scaled(opts.tolerance_scale),
        seed,
        base: base.as_deref(),
    };
    let result = match verb {
        Verb::Identity => verbs::identity(&ctx),
        Verb::Apriori => verbs::apriori(&ctx),
        Verb::BestConstant => verbs::best_constant(&ctx),
        Verb::Compare => verbs::compare(&ctx),
        Verb::Powers => verbs::powers(&ctx),
        Verb::Perturb => verbs::perturb(&ctx),
        Verb::LapScan => verbs::lap_scan(&ctx),
        Verb::ListPresets => unreachable!(),
    };
    let scenario_name = cfg.name.clone().unwrap_or_else(|| "unnamed".into());
    let (checks, data, mut artifacts) = match result {
        Ok(v) => v,
        Err(e) if is_config_error(&e) => {
            return Err(HarnessError::Config(format!("scenario `{scenario_name}`, verb {}: {e}", verb.name())))
        }
        Err(e) => (
            vec![Check::flag("module-error", false, format!("scenario `{scenario_name}`, verb {}: {e}", verb.name()))],
            serde_json::Value::Null,
            Artifacts::default(),
        ),
    };
    let all_pass = checks.iter().all(|c| c.pass);
    let report = EstimateReport {
        schema: REPORT_SCHEMA.into(),
        verb: verb.name(),
        scenario: cfg.clone(),
        seed,
        tolerance_scale: opts.tolerance_scale,
        checks,
        all_pass,
        data,
        environment: Fingerprint::current(),
    };
    artifacts.json("report.json", &report);
    let out_dir = opts
        .out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| "smoothlab-out".into());
    Ok(Outcome { report, artifacts, out_dir })
}

/// Runs, writes the artifacts plus `metadata.json`, and returns the exit code.
pub fn run_and_write(opts: &RunOptions, threads: usize) -> Result<Outcome, HarnessError> {
    let started = Instant::now();
    let outcome = run(opts)?;
    let metadata = Metadata {
        started_unix_seconds: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        wall_time_seconds: started.elapsed().as_secs_f64(),
        threads,
    };
    outcome
        .artifacts
        .write_all(&outcome.out_dir)
        .map_err(|e| HarnessError::Io(format!("{}: {e}", outcome.out_dir.display())))?;
    let meta = serde_json::to_vec_pretty(&metadata).expect("serializable");
    std::fs::write(outcome.out_dir.join("metadata.json"), meta).map_err(|e| HarnessError::Io(e.to_string()))?;
    Ok(outcome)
}

/// Accepts decimal or `0x`-prefixed hexadecimal.
pub fn parse_seed(s: &str) -> Result<u64, String> {
    let r = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => s.parse(),
    };
    r.map_err(|e| format!("invalid seed `{s}`: {e}"))
}
