//! Scenario configuration: versioned JSON, validated into core objects before any work starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use smoothlab_core::models::{
    load_potential_table, OperatorModel, PotentialKind, PotentialSpec, Smoothing, SpectralFunction, Window,
};
use smoothlab_core::spaces::{GridFunction, SpatialGrid, WeightExponent};
use smoothlab_core::C64;

use crate::HarnessError;

pub const SCHEMA: &str = "smoothlab/v1";
pub const DEFAULT_SEED: u64 = 0xC0FFEE;
/// Mass allowed outside the inner 90% of the grid for configured test functions.
pub const DECAY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema: String,
    #[serde(default)]
    pub name: Option<String>,
    pub model: ModelConfig,
    pub sigma: String,
    pub a: String,
    /// Energy window `J = (lo, hi)`.
    pub window: [f64; 2],
    #[serde(default = "one")]
    pub s: f64,
    #[serde(default)]
    pub resolution_level: u32,
    /// Points per admissible segment of the λ scans.
    #[serde(default = "default_lambda_points")]
    pub lambda_points: usize,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_phi")]
    pub phi: Vec<Packet>,
    #[serde(default = "default_psi")]
    pub psi: Vec<Packet>,
    #[serde(default)]
    pub compare: Option<CompareConfig>,
    #[serde(default)]
    pub powers: Option<PowersConfig>,
    #[serde(default)]
    pub decay: Option<DecayConfig>,
    #[serde(default)]
    pub output_dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    Free {
        x_max: f64,
        n_points: usize,
    },
    StarkFd {
        x_max: f64,
        n_points: usize,
        #[serde(default)]
        smoothing: Option<SmoothingConfig>,
    },
    Schrodinger {
        x_max: f64,
        n_points: usize,
        potential: PotentialConfig,
    },
}

impl ModelConfig {
    pub fn grid_params(&self) -> (f64, usize) {
        match *self {
            ModelConfig::Free { x_max, n_points }
            | ModelConfig::StarkFd { x_max, n_points, .. }
            | ModelConfig::Schrodinger { x_max, n_points, .. } => (x_max, n_points),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SmoothingConfig {
    Fixed { epsilon: f64 },
    GapMultiple { multiple: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PotentialConfig {
    /// `Σ amplitude · exp(-(x - center)² / width²)`.
    Gaussians {
        terms: Vec<GaussianTerm>,
        #[serde(default = "one")]
        decay_epsilon: f64,
    },
    /// Two-column `x V` table, path relative to the config file.
    Table {
        path: String,
        #[serde(default = "one")]
        decay_epsilon: f64,
    },
    /// `<x>^{-s} (I - Δ)^β <x>^{-s}`.
    Factored { beta: f64, s: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianTerm {
    pub amplitude: f64,
    #[serde(default)]
    pub center: f64,
    #[serde(default = "one")]
    pub width: f64,
}

/// `amplitude · exp(-(x - center)² / (2 width²)) · e^{ikx}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Packet {
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default)]
    pub center: f64,
    #[serde(default = "one")]
    pub width: f64,
    #[serde(default)]
    pub k: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_identity_residual")]
    pub identity_residual: f64,
    #[serde(default = "default_apriori_slack")]
    pub apriori_slack: f64,
    /// Relative gap between the best-constant sides; the model default when absent.
    #[serde(default)]
    pub best_constant_gap: Option<f64>,
    /// Expected `rhs_sup` and its relative tolerance.
    #[serde(default)]
    pub expect_rhs_sup: Option<[f64; 2]>,
    #[serde(default = "default_transfer_slack")]
    pub transfer_slack: f64,
    /// Relative change allowed under grid or quadrature refinement.
    #[serde(default = "default_refinement")]
    pub refinement: f64,
    /// Relative change allowed in the LAP supremum under grid doubling.
    #[serde(default = "default_lap_refinement")]
    pub lap_refinement: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            identity_residual: default_identity_residual(),
            apriori_slack: default_apriori_slack(),
            best_constant_gap: None,
            expect_rhs_sup: None,
            transfer_slack: default_transfer_slack(),
            refinement: default_refinement(),
            lap_refinement: default_lap_refinement(),
        }
    }
}

impl Tolerances {
    pub fn scaled(&self, f: f64) -> Self {
        Self {
            identity_residual: self.identity_residual * f,
            apriori_slack: self.apriori_slack * f,
            best_constant_gap: self.best_constant_gap.map(|g| g * f),
            expect_rhs_sup: self.expect_rhs_sup.map(|[v, t]| [v, t * f]),
            transfer_slack: self.transfer_slack * f,
            refinement: self.refinement * f,
            lap_refinement: self.lap_refinement * f,
        }
    }

    fn all_positive(&self) -> bool {
        let mut v =
            vec![self.identity_residual, self.apriori_slack, self.transfer_slack, self.refinement, self.lap_refinement];
        v.extend(self.best_constant_gap);
        v.extend(self.expect_rhs_sup.map(|e| e[1]));
        v.iter().all(|x| x.is_finite() && *x > 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompareMode {
    Local,
    Global,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub mode: CompareMode,
    /// `ã(λ)`.
    pub a_tilde: String,
    /// `σ̃(λ)`; defaults to `σ (|ã'| / a')^{1/2}`, the weight that keeps `σ²/a'` fixed.
    #[serde(default)]
    pub sigma_tilde: Option<String>,
    /// Multiplies `σ̃`.
    #[serde(default = "one")]
    pub sigma_scale: f64,
    /// Also evaluate the time sides (local and global modes).
    #[serde(default)]
    pub time_side: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowersConfig {
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayConfig {
    /// Fit range in λ.
    pub lambda_range: [f64; 2],
    /// Accepted slope interval.
    pub slope_range: [f64; 2],
    /// Envelope window width in mean eigenvalue gaps (matrix models).
    #[serde(default = "default_envelope_gaps")]
    pub envelope_gaps: f64,
    #[serde(default = "default_envelope_samples")]
    pub envelope_samples: usize,
}

fn one() -> f64 {
    1.0
}
fn default_lambda_points() -> usize {
    64
}
fn default_batch() -> usize {
    100
}
fn default_identity_residual() -> f64 {
    1e-3
}
fn default_apriori_slack() -> f64 {
    0.01
}
fn default_transfer_slack() -> f64 {
    0.02
}
fn default_refinement() -> f64 {
    0.05
}
fn default_lap_refinement() -> f64 {
    0.01
}
fn default_envelope_gaps() -> f64 {
    40.0
}
fn default_envelope_samples() -> usize {
    16
}
pub(crate) fn default_phi() -> Vec<Packet> {
    vec![Packet { amplitude: 1.0, center: 0.5, width: 1.0, k: 0.0 }]
}
pub(crate) fn default_psi() -> Vec<Packet> {
    vec![Packet { amplitude: 1.0, center: -0.3, width: 0.75f64.sqrt(), k: 0.7 }]
}

/// Reads and parses a config file; errors carry the field path and position.
pub fn load(path: &Path) -> Result<ScenarioConfig, HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<ScenarioConfig, HarnessError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        HarnessError::Config(format!("field `{path}`: {inner}"))
    })?;
    if cfg.schema != SCHEMA {
        return Err(HarnessError::Config(format!("field `schema`: expected \"{SCHEMA}\", got \"{}\"", cfg.schema)));
    }
    Ok(cfg)
}

/// Core objects built from a config.
pub struct Scenario {
    pub model: OperatorModel,
    pub sf: SpectralFunction,
    pub s: WeightExponent,
    pub phi: GridFunction,
    pub psi: GridFunction,
    pub potential: Option<PotentialSpec>,
}

fn field<T, E: std::fmt::Display>(name: &str, r: Result<T, E>) -> Result<T, HarnessError> {
    r.map_err(|e| HarnessError::Config(format!("field `{name}`: {e}")))
}

pub fn packets(grid: SpatialGrid, ps: &[Packet]) -> GridFunction {
    GridFunction::from_fn(grid, |x| {
        ps.iter()
            .map(|p| {
                C64::from_polar(p.amplitude * (-(x - p.center).powi(2) / (2.0 * p.width * p.width)).exp(), p.k * x)
            })
            .sum()
    })
}

impl ScenarioConfig {
    /// Validates every field and builds the model; `base` resolves relative table paths.
    pub fn build(&self, base: Option<&Path>) -> Result<Scenario, HarnessError> {
        if !self.tolerances.all_positive() {
            return Err(HarnessError::Config("field `tolerances`: all tolerances must be positive".into()));
        }
        if self.lambda_points < 8 {
            return Err(HarnessError::Config("field `lambda_points`: need at least 8".into()));
        }
        if self.phi.is_empty() || self.psi.is_empty() {
            return Err(HarnessError::Config("fields `phi`, `psi`: need at least one packet".into()));
        }
        if self.phi.iter().chain(&self.psi).any(|p| !(p.width > 0.0)) {
            return Err(HarnessError::Config("fields `phi`, `psi`: packet widths must be positive".into()));
        }
        let (x_max, n) = self.model.grid_params();
        let grid = field("model", SpatialGrid::new(x_max, n))?;
        let mut potential = None;
        let model = match &self.model {
            ModelConfig::Free { .. } => OperatorModel::free(grid),
            ModelConfig::StarkFd { smoothing, .. } => {
                let sm = match smoothing {
                    None => Smoothing::default(),
                    Some(SmoothingConfig::Fixed { epsilon }) if *epsilon > 0.0 => Smoothing::Fixed(*epsilon),
                    Some(SmoothingConfig::GapMultiple { multiple }) if *multiple > 0.0 => {
                        Smoothing::GapMultiple(*multiple)
                    }
                    Some(_) => return Err(HarnessError::Config("field `model.smoothing`: must be positive".into())),
                };
                OperatorModel::stark_fd(grid, sm)
            }
            ModelConfig::Schrodinger { potential: p, .. } => {
                let v = match p {
                    PotentialConfig::Gaussians { terms, decay_epsilon } => {
                        if terms.iter().any(|t| !(t.width > 0.0 && t.amplitude.is_finite())) {
                            return Err(HarnessError::Config("field `model.potential.terms`: bad term".into()));
                        }
                        PotentialSpec::from_fn(
                            &grid,
                            |x| terms.iter().map(|t| t.amplitude * (-((x - t.center) / t.width).powi(2)).exp()).sum(),
                            *decay_epsilon,
                        )
                    }
                    PotentialConfig::Table { path, decay_epsilon } => {
                        let full = match base {
                            Some(b) => b.join(path),
                            None => PathBuf::from(path),
                        };
                        let text = std::fs::read_to_string(&full).map_err(|e| {
                            HarnessError::Config(format!("field `model.potential.path`: {}: {e}", full.display()))
                        })?;
                        let values = field("model.potential.path", load_potential_table(&text, &grid))?;
                        PotentialSpec { kind: PotentialKind::Multiplicative(values), decay_epsilon: *decay_epsilon }
                    }
                    PotentialConfig::Factored { beta, s } => {
                        field("model.potential", PotentialSpec::factored(*beta, *s))?
                    }
                };
                potential = Some(v.clone());
                field("model.potential", OperatorModel::perturbed(grid, v))?
            }
        };
        let window = field("window", Window::new(self.window[0], self.window[1]))?;
        let sf = field("sigma/a", SpectralFunction::parse(&self.sigma, &self.a, window))?;
        if !(self.s.is_finite() && self.s >= 0.0) {
            return Err(HarnessError::Config("field `s`: must be a nonnegative number".into()));
        }
        let phi = packets(grid, &self.phi);
        let psi = packets(grid, &self.psi);
        field("phi", phi.validate_decay(DECAY_TOLERANCE))?;
        field("psi", psi.validate_decay(DECAY_TOLERANCE))?;
        if let Some(c) = &self.compare {
            field("compare.a_tilde", smoothlab_core::expr::Expr::parse(&c.a_tilde))?;
            if let Some(st) = &c.sigma_tilde {
                field("compare.sigma_tilde", smoothlab_core::expr::Expr::parse(st))?;
            }
            if !(c.sigma_scale.is_finite() && c.sigma_scale >= 0.0) {
                return Err(HarnessError::Config("field `compare.sigma_scale`: must be nonnegative".into()));
            }
        }
        if let Some(p) = &self.powers {
            if !(p.alpha > 0.0 && p.alpha.is_finite()) {
                return Err(HarnessError::Config("field `powers.alpha`: must be positive".into()));
            }
        }
        if let Some(d) = &self.decay {
            let [lo, hi] = d.lambda_range;
            if !(lo < hi && d.slope_range[0] <= d.slope_range[1] && d.envelope_gaps > 0.0 && d.envelope_samples > 0) {
                return Err(HarnessError::Config("field `decay`: inconsistent ranges".into()));
            }
        }
        Ok(Scenario { model, sf, s: WeightExponent(self.s), phi, psi, potential })
    }
}
