//! Experiment configuration: a TOML file with the sections `[model]`,
//! `[grids]`, `[mfg]`, `[simulate]`, `[study]` and `[output]` plus a top-level
//! `seed`. Everything except the model has a default.
//!
//! The model is given either by `preset = "<name>"`, by the full list of
//! coefficient families, or by a preset with some fields overridden:
//!
//! ```toml
//! seed = 7
//!
//! [model]
//! preset = "weakly_coupled"
//! sigma = 0.6
//! drift = { family = "ou_pull", rate = 1.0, target = 1.0, loss = -0.2, mean = 0.1 }
//! ```

use std::collections::BTreeSet;
use std::path::Path;

use mfglab::model::{ActionSet, ControlCost, Drift, InitialLaw, RunningCost, TerminalCost, Weight};
use mfglab::{presets, Model};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const OUTPUT_DIR_ENV: &str = "MFGLAB_OUTPUT_DIR";
pub const FORMATS: [&str; 3] = ["csv", "jsonl", "bin"];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<Drift<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_cost: Option<ControlCost<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub running_cost: Option<RunningCost<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal_cost: Option<TerminalCost<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<Weight<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actions: Option<ActionSet<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialLaw<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    /// Declared growth constant `C`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth_c: Option<f64>,
    /// Declared Lipschitz constant `L`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz_l: Option<f64>,
}

impl ModelSection {
    fn from_model(m: &Model) -> Self {
        Self {
            preset: None,
            drift: Some(m.drift),
            control_cost: Some(m.control_cost),
            running_cost: Some(m.running_cost),
            terminal_cost: Some(m.terminal_cost),
            weight: Some(m.weight),
            sigma: Some(m.sigma),
            actions: Some(m.actions),
            horizon: Some(m.horizon),
            initial: Some(m.initial),
            threshold: Some(m.threshold),
            growth_c: Some(m.growth_c),
            lipschitz_l: Some(m.lipschitz_l),
        }
    }

    /// Fills missing fields from the preset and builds the model.
    pub fn build(&self) -> Result<Model, CliError> {
        let base = match &self.preset {
            Some(name) => Some(presets::by_name::<f64>(name).ok_or_else(|| {
                let known: Vec<&str> = presets::catalog::<f64>().into_iter().map(|(n, _)| n).collect();
                CliError::config(format!("model.preset: unknown preset `{name}` (known: {})", known.join(", ")))
            })?),
            None => None,
        };
        macro_rules! pick {
            ($field:ident) => {
                match (self.$field, base.as_ref()) {
                    (Some(v), _) => v,
                    (None, Some(b)) => b.$field,
                    (None, None) => {
                        return Err(CliError::config(concat!(
                            "model.",
                            stringify!($field),
                            ": missing (give it or a preset)"
                        )))
                    }
                }
            };
        }
        let model = Model {
            drift: pick!(drift),
            control_cost: pick!(control_cost),
            running_cost: pick!(running_cost),
            terminal_cost: pick!(terminal_cost),
            weight: pick!(weight),
            sigma: pick!(sigma),
            actions: pick!(actions),
            horizon: pick!(horizon),
            initial: pick!(initial),
            threshold: pick!(threshold),
            growth_c: pick!(growth_c),
            lipschitz_l: pick!(lipschitz_l),
            truncation: None,
        };
        model.validate().map_err(|e| CliError::config(format!("model: {e}")))?;
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridsSection {
    pub dt: f64,
    /// Number of state cells `J`.
    pub cells: usize,
    /// Upper edge of the state box; default `sup ν + 6σ√T`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_max: Option<f64>,
}

impl Default for GridsSection {
    fn default() -> Self {
        Self { dt: 0.01, cells: 300, x_max: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfgSection {
    /// Explicit truncation levels; default `2ⁿ·K₁` from the coefficient range.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<f64>>,
    /// Number of levels of the default schedule.
    pub levels: usize,
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Weight of the time discount in the residual; default `σ⁻²L²/√2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

impl Default for MfgSection {
    fn default() -> Self {
        Self { schedule: None, levels: 4, damping: 0.5, tol: 1e-3, max_iter: 50, alpha: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateSection {
    pub n: usize,
    pub replications: usize,
    pub bridge: bool,
    /// `uncontrolled` or `mfg` (solve the game first).
    pub policy: String,
    pub store_paths: bool,
    /// Paths of the Monte Carlo audits.
    pub n_mc: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            n: 1000,
            replications: 20,
            bridge: true,
            policy: "uncontrolled".into(),
            store_paths: false,
            n_mc: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySection {
    pub n_list: Vec<usize>,
    pub alpha_list: Vec<u32>,
}

impl Default for StudySection {
    fn default() -> Self {
        Self { n_list: vec![50, 100, 200, 400, 800, 1600, 3200], alpha_list: vec![1, 2, 4] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSection {
    pub directory: String,
    pub formats: Vec<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { directory: "mfglab-out".into(), formats: FORMATS.iter().map(|s| s.to_string()).collect() }
    }
}

impl OutputSection {
    pub fn wants(&self, format: &str) -> bool {
        self.formats.iter().any(|f| f == format)
    }
}

/// As read from disk; sections may be missing.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct RawConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    model: Option<ModelSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grids: Option<PartialGrids>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mfg: Option<PartialMfg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    simulate: Option<PartialSimulate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    study: Option<PartialStudy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output: Option<PartialOutput>,
}

macro_rules! partial {
    ($name:ident => $full:ident { $($field:ident : $ty:ty),* $(,)? }) => {
        #[derive(Debug, Clone, Default, Serialize, Deserialize)]
        struct $name {
            $(
                #[serde(default, skip_serializing_if = "Option::is_none")]
                $field: Option<$ty>,
            )*
        }

        impl $name {
            fn resolve(self) -> $full {
                let d = $full::default();
                $full { $($field: resolve_field(self.$field, d.$field),)* }
            }
        }
    };
}

trait ResolveField<T> {
    fn pick(given: Option<T>, default: Self) -> Self;
}

impl<T> ResolveField<T> for T {
    fn pick(given: Option<T>, default: T) -> T {
        given.unwrap_or(default)
    }
}

impl<T> ResolveField<T> for Option<T> {
    fn pick(given: Option<T>, default: Option<T>) -> Option<T> {
        given.or(default)
    }
}

fn resolve_field<T, F: ResolveField<T>>(given: Option<T>, default: F) -> F {
    F::pick(given, default)
}

partial!(PartialGrids => GridsSection { dt: f64, cells: usize, x_max: f64 });
partial!(PartialMfg => MfgSection {
    schedule: Vec<f64>, levels: usize, damping: f64, tol: f64, max_iter: usize, alpha: f64,
});
partial!(PartialSimulate => SimulateSection {
    n: usize, replications: usize, bridge: bool, policy: String, store_paths: bool, n_mc: usize,
});
partial!(PartialStudy => StudySection { n_list: Vec<usize>, alpha_list: Vec<u32> });
partial!(PartialOutput => OutputSection { directory: String, formats: Vec<String> });

/// Fully resolved and validated configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub model: ModelSection,
    pub grids: GridsSection,
    pub mfg: MfgSection,
    pub simulate: SimulateSection,
    pub study: StudySection,
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn model(&self) -> Result<Model, CliError> {
        self.model.build()
    }

    /// Resolved TOML: the model written out in full, every default filled.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::config(e.message().to_string()))?;
        let raw: RawConfig = RawConfig::deserialize(toml::Value::Table(table.clone()))
            .map_err(|e| CliError::config(e.message().to_string()))?;
        let echoed = toml::Value::try_from(&raw).map_err(|e| CliError::config(e.to_string()))?;
        if let Some(key) = first_unknown_key(&toml::Value::Table(table), &echoed, "") {
            return Err(CliError::config(format!("unknown key: {key}")));
        }
        let model = raw.model.ok_or_else(|| CliError::config("missing [model] section"))?;
        let built = model.build()?;
        let cfg = Self {
            seed: raw.seed.unwrap_or(0),
            model: ModelSection::from_model(&built),
            grids: raw.grids.unwrap_or_default().resolve(),
            mfg: raw.mfg.unwrap_or_default().resolve(),
            simulate: raw.simulate.unwrap_or_default().resolve(),
            study: raw.study.unwrap_or_default().resolve(),
            output: raw.output.unwrap_or_default().resolve(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| e.with_context(format!("config {}", path.display())))
    }

    fn validate(&self) -> Result<(), CliError> {
        let range = |field: &str, bound: &str| CliError::config(format!("{field} out of range: must be {bound}"));
        let g = &self.grids;
        if !(g.dt > 0.0) || !g.dt.is_finite() {
            return Err(range("grids.dt", "> 0"));
        }
        if g.cells < 4 {
            return Err(range("grids.cells", ">= 4"));
        }
        if let Some(x) = g.x_max {
            if !x.is_finite() {
                return Err(range("grids.x_max", "finite"));
            }
        }
        let m = &self.mfg;
        if let Some(s) = &m.schedule {
            if s.is_empty() || s.iter().any(|k| !(*k > 0.0)) || s.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(range("mfg.schedule", "non-empty, positive and strictly increasing"));
            }
        }
        if m.levels == 0 {
            return Err(range("mfg.levels", ">= 1"));
        }
        if !(m.damping > 0.0 && m.damping <= 1.0) {
            return Err(range("mfg.damping", "in (0, 1]"));
        }
        if !(m.tol > 0.0) {
            return Err(range("mfg.tol", "> 0"));
        }
        if m.max_iter == 0 {
            return Err(range("mfg.max_iter", ">= 1"));
        }
        if let Some(a) = m.alpha {
            if !(a > 0.0) || !a.is_finite() {
                return Err(range("mfg.alpha", "> 0"));
            }
        }
        let s = &self.simulate;
        if s.n == 0 {
            return Err(range("simulate.n", ">= 1"));
        }
        if s.replications < 2 {
            return Err(range("simulate.replications", ">= 2"));
        }
        if s.n_mc < 1000 {
            return Err(range("simulate.n_mc", ">= 1000"));
        }
        if !["uncontrolled", "mfg"].contains(&s.policy.as_str()) {
            return Err(range("simulate.policy", "`uncontrolled` or `mfg`"));
        }
        let st = &self.study;
        if st.n_list.is_empty() || st.n_list[0] < 2 || st.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(range("study.n_list", "non-empty, >= 2 and strictly increasing"));
        }
        if st.alpha_list.is_empty() || st.alpha_list.iter().any(|a| ![1, 2, 4].contains(a)) {
            return Err(range("study.alpha_list", "a subset of {1, 2, 4}"));
        }
        let o = &self.output;
        if o.directory.is_empty() {
            return Err(range("output.directory", "non-empty"));
        }
        if let Some(f) = o.formats.iter().find(|f| !FORMATS.contains(&f.as_str())) {
            return Err(CliError::config(format!("output.formats: unknown format `{f}` (known: csv, jsonl, bin)")));
        }
        let unique: BTreeSet<&String> = o.formats.iter().collect();
        if unique.len() != o.formats.len() {
            return Err(range("output.formats", "free of duplicates"));
        }
        Ok(())
    }
}

/// Dotted path of the first key of `given` that did not survive a
/// deserialise/serialise round trip.
fn first_unknown_key(given: &toml::Value, echoed: &toml::Value, prefix: &str) -> Option<String> {
    let path = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match (given, echoed) {
        (toml::Value::Table(g), toml::Value::Table(e)) => {
            for (k, v) in g {
                match e.get(k) {
                    None => return Some(path(k)),
                    Some(ev) => {
                        if let Some(found) = first_unknown_key(v, ev, &path(k)) {
                            return Some(found);
                        }
                    }
                }
            }
            None
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "seed = 3\n[model]\npreset = \"brownian\"\n";

    #[test]
    fn minimal_file_fills_defaults() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.grids, GridsSection::default());
        assert_eq!(c.model().unwrap(), presets::brownian());
    }

    #[test]
    fn unknown_keys_are_named() {
        let e = ExperimentConfig::from_toml("seed = 1\n[modle]\nx = 1\n[model]\npreset = \"brownian\"\n").unwrap_err();
        assert_eq!(e.to_string(), "configuration error: unknown key: modle");
        let e = ExperimentConfig::from_toml(&format!("{MINIMAL}[grids]\nstep = 0.1\n")).unwrap_err();
        assert!(e.to_string().contains("unknown key: grids.step"), "{e}");
        let nested = format!("{MINIMAL}drift = {{ family = \"constant\", value = 1.0, typo = 2.0 }}\n");
        let e = ExperimentConfig::from_toml(&nested).unwrap_err();
        assert!(e.to_string().contains("unknown key: model.drift.typo"), "{e}");
    }

    #[test]
    fn range_errors_name_field_and_bound() {
        let e = ExperimentConfig::from_toml(&format!("{MINIMAL}[grids]\ndt = 0.0\n")).unwrap_err();
        assert!(e.to_string().contains("grids.dt out of range: must be > 0"), "{e}");
        let e = ExperimentConfig::from_toml(&format!("{MINIMAL}[mfg]\ndamping = 2.0\n")).unwrap_err();
        assert!(e.to_string().contains("mfg.damping"), "{e}");
        let e = ExperimentConfig::from_toml(&format!("{MINIMAL}[study]\nalpha_list = [3]\n")).unwrap_err();
        assert!(e.to_string().contains("study.alpha_list"), "{e}");
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = ExperimentConfig::from_toml(&format!("{MINIMAL}sigma = 0.5\n[mfg]\nalpha = 2.0\n")).unwrap();
        let again = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.model().unwrap().sigma, 0.5);
    }

    #[test]
    fn missing_model_fields_without_preset() {
        let e = ExperimentConfig::from_toml("[model]\nsigma = 1.0\n").unwrap_err();
        assert!(e.to_string().contains("model.drift"), "{e}");
        assert!(ExperimentConfig::from_toml("seed = 1\n").is_err());
    }
}
