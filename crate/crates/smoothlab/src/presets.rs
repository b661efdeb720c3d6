//! Named scenarios shipped with the binary. The JSON sources live in `presets/`.

use crate::config::{self, ScenarioConfig};
use crate::{HarnessError, Verb};

pub struct Preset {
    pub name: &'static str,
    /// The worked example the scenario reproduces.
    pub anchor: &'static str,
    pub default_verb: Verb,
    pub source: &'static str,
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "free-identity",
        anchor: "time/energy duality on the free line, σ = λ^{1/4}, J = (0.01, 100)",
        default_verb: Verb::Identity,
        source: include_str!("../presets/free-identity.json"),
    },
    Preset {
        name: "free-best-constant",
        anchor: "best constant of the free line, sup = √π",
        default_verb: Verb::BestConstant,
        source: include_str!("../presets/free-best-constant.json"),
    },
    Preset {
        name: "fractional-laplacian",
        anchor: "powers of the Laplacian, (-Δ)^α with α = 1/2",
        default_verb: Verb::Powers,
        source: include_str!("../presets/fractional-laplacian.json"),
    },
    Preset {
        name: "stark-fd",
        anchor: "Stark Hamiltonian -d²/dx² - x, (1+|λ|)^{-1/2} envelope",
        default_verb: Verb::Apriori,
        source: include_str!("../presets/stark-fd.json"),
    },
    Preset {
        name: "schrodinger-potential",
        anchor: "-d²/dx² + 0.3 e^{-x²}, limiting absorption and VR± < 1",
        default_verb: Verb::LapScan,
        source: include_str!("../presets/schrodinger-potential.json"),
    },
];

pub fn find(name: &str) -> Result<&'static Preset, HarnessError> {
    PRESETS.iter().find(|p| p.name == name).ok_or_else(|| {
        let names: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
        HarnessError::Config(format!("unknown preset `{name}` (known: {})", names.join(", ")))
    })
}

impl Preset {
    pub fn config(&self) -> ScenarioConfig {
        config::parse(self.source).expect("shipped presets parse")
    }
}

/// One block per preset: name, anchor, default verb and the main parameters.
pub fn catalog() -> String {
    let mut out = String::new();
    for p in PRESETS {
        let c = p.config();
        let (x_max, n) = c.model.grid_params();
        out.push_str(&format!(
            "{}\n  example: {}\n  verb: {}\n  model: {} (x_max = {x_max}, n = {n})\n  sigma = {}, a = {}, J = ({}, {}), s = {}\n",
            p.name,
            p.anchor,
            p.default_verb.name(),
            model_name(&c.model),
            c.sigma,
            c.a,
            c.window[0],
            c.window[1],
            c.s,
        ));
    }
    out
}

fn model_name(m: &config::ModelConfig) -> &'static str {
    match m {
        config::ModelConfig::Free { .. } => "free",
        config::ModelConfig::StarkFd { .. } => "stark-fd",
        config::ModelConfig::Schrodinger { .. } => "schrodinger",
    }
}
