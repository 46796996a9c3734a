//! TOML configuration shared by every CLI subcommand.
//!
//! Minimal fitting config:
//!
//! ```toml
//! [input]
//! path = "queries.csv"
//!
//! [[input.periods]]
//! name = "2014"
//! members = ["2014-07", "2014-09", "2014-11"]
//!
//! [model]
//! variant = "B"
//! ```
//!
//! Sections and defaults:
//!
//! - `[input]`: `path` (CSV, resolved relative to the config file) and
//!   optional `[[input.periods]]` blocks (`name`, `members`); without them
//!   each distinct `period` value in the CSV is fitted on its own.
//! - `[model]`: `variant = "A" | "B"` (default `"A"`).
//! - `[fit]`: `max_iterations` (500), `gradient_tolerance` (1e-6),
//!   `loglik_tolerance` (1e-10), `se_methods` (`["naive", "mlm", "mlr"]`).
//! - `[loess]`: `span` (0.75), `degree` (2), `grid_size` (100),
//!   `x_scale = "raw" | "standardized"` (default `"raw"`).
//! - `[score]`: optional `precomputed` CSV (`unit,period,index`) that skips
//!   the fit and ranks the given index values directly.
//! - `[sim]`: generator settings for `simulate`/`recover` (`n`, `seed`,
//!   `lambda`, `beta`, `theta`, `sigma`, `error_distribution = "normal" |
//!   "scaled_t"`, `t_df`, `replications`).

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::estimate::FitConfig;
use crate::ingest::ModelVariant;
use crate::model::{ModelSpec, ParameterSet};
use crate::sim::{NoiseDistribution, SimConfig};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: Option<InputConfig>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub fit: FitSettings,
    #[serde(default)]
    pub loess: LoessSettings,
    #[serde(default)]
    pub score: ScoreSettings,
    pub sim: Option<SimSettings>,
    /// Directory of the config file; relative paths resolve against it.
    #[serde(skip)]
    base_dir: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub path: String,
    #[serde(default)]
    pub periods: Vec<PeriodDef>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodDef {
    pub name: String,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub variant: Variant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
pub enum Variant {
    #[default]
    A,
    B,
}

impl Variant {
    pub fn to_model_variant(self) -> ModelVariant {
        match self {
            Variant::A => ModelVariant::A,
            Variant::B => ModelVariant::B,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSettings {
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_gradient_tolerance")]
    pub gradient_tolerance: f64,
    #[serde(default = "default_loglik_tolerance")]
    pub loglik_tolerance: f64,
    #[serde(default = "default_se_methods")]
    pub se_methods: Vec<SeMethodName>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeMethodName {
    Naive,
    Mlm,
    Mlr,
}

fn default_max_iterations() -> usize {
    500
}
fn default_gradient_tolerance() -> f64 {
    1e-6
}
fn default_loglik_tolerance() -> f64 {
    1e-10
}
fn default_se_methods() -> Vec<SeMethodName> {
    vec![SeMethodName::Naive, SeMethodName::Mlm, SeMethodName::Mlr]
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            max_iterations: default_max_iterations(),
            gradient_tolerance: default_gradient_tolerance(),
            loglik_tolerance: default_loglik_tolerance(),
            se_methods: default_se_methods(),
        }
    }
}

impl FitSettings {
    pub fn to_fit_config(&self) -> FitConfig {
        FitConfig {
            max_iterations: self.max_iterations,
            gradient_tolerance: self.gradient_tolerance,
            loglik_tolerance: self.loglik_tolerance,
            compute_naive: self.se_methods.contains(&SeMethodName::Naive),
            compute_mlm: self.se_methods.contains(&SeMethodName::Mlm),
            compute_mlr: self.se_methods.contains(&SeMethodName::Mlr),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoessSettings {
    #[serde(default = "default_span")]
    pub span: f64,
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default)]
    pub x_scale: XScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum XScale {
    /// Plot against income in its original units.
    #[default]
    Raw,
    /// Plot against the standardized income cause.
    Standardized,
}

fn default_span() -> f64 {
    0.75
}
fn default_degree() -> usize {
    2
}
fn default_grid_size() -> usize {
    100
}

impl Default for LoessSettings {
    fn default() -> Self {
        Self {
            span: default_span(),
            degree: default_degree(),
            grid_size: default_grid_size(),
            x_scale: XScale::Raw,
        }
    }
}

impl LoessSettings {
    pub fn to_loess_config(&self) -> crate::ekc::LoessConfig {
        crate::ekc::LoessConfig {
            span: self.span,
            degree: self.degree,
            grid_size: self.grid_size,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ScoreSettings {
    /// CSV of precomputed scores (`unit,period,index`); when set, scoring
    /// skips the model fit and ranks these values.
    pub precomputed: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSettings {
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    pub lambda: Vec<f64>,
    pub beta: Vec<f64>,
    pub theta: Vec<f64>,
    pub sigma: f64,
    #[serde(default)]
    pub error_distribution: ErrorDistribution,
    /// Degrees of freedom when `error_distribution = "scaled_t"`.
    pub t_df: Option<f64>,
    #[serde(default = "default_replications")]
    pub replications: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ErrorDistribution {
    #[default]
    Normal,
    ScaledT,
}

fn default_replications() -> usize {
    200
}

impl SimSettings {
    pub fn to_sim_config(&self) -> Result<SimConfig> {
        let p = self.lambda.len();
        let k = self.beta.len();
        if p < 2 || k < 1 {
            return Err(Error::Config(format!(
                "[sim] needs at least 2 loadings and 1 beta, got p = {p}, k = {k}"
            )));
        }
        let spec = ModelSpec::new(
            (1..=p).map(|i| format!("y{i}")).collect::<Vec<_>>(),
            (1..=k).map(|i| format!("x{i}")).collect::<Vec<_>>(),
        )?;
        let params = ParameterSet::new(
            self.lambda.clone(),
            self.beta.clone(),
            self.theta.clone(),
            self.sigma,
        )?;
        let noise = match self.error_distribution {
            ErrorDistribution::Normal => NoiseDistribution::Normal,
            ErrorDistribution::ScaledT => {
                let df = self.t_df.ok_or_else(|| {
                    Error::Config("[sim] error_distribution = \"scaled_t\" requires t_df".into())
                })?;
                NoiseDistribution::ScaledT { df }
            }
        };
        SimConfig::new(spec, params, self.n, noise, self.seed)
    }
}

impl PipelineConfig {
    /// Parses a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok(cfg)
    }

    /// Resolves a config-relative path.
    pub fn resolve(&self, p: &str) -> PathBuf {
        let path = Path::new(p);
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn input_required(&self) -> Result<&InputConfig> {
        self.input
            .as_ref()
            .ok_or_else(|| Error::Config("this command needs an [input] section".into()))
    }

    pub fn sim_required(&self) -> Result<&SimSettings> {
        self.sim
            .as_ref()
            .ok_or_else(|| Error::Config("this command needs a [sim] section".into()))
    }

    pub fn period_definitions(&self) -> Vec<(String, Vec<String>)> {
        self.input
            .as_ref()
            .map(|i| i.periods.iter().map(|p| (p.name.clone(), p.members.clone())).collect())
            .unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn load_str(content: &str) -> Result<PipelineConfig> {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        PipelineConfig::load(f.path())
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = load_str("[input]\npath = \"data.csv\"\n").unwrap();
        assert_eq!(cfg.model.variant, Variant::A);
        assert_eq!(cfg.fit.max_iterations, 500);
        assert_eq!(cfg.fit.gradient_tolerance, 1e-6);
        assert_eq!(cfg.loess.span, 0.75);
        assert_eq!(cfg.loess.degree, 2);
        assert_eq!(cfg.loess.x_scale, XScale::Raw);
        let fc = cfg.fit.to_fit_config();
        assert!(fc.compute_naive && fc.compute_mlm && fc.compute_mlr);
    }

    #[test]
    fn full_config_round_trip() {
        let cfg = load_str(
            r#"
[input]
path = "q.csv"

[[input.periods]]
name = "2014"
members = ["2014-07", "2014-09", "2014-11"]

[[input.periods]]
name = "2015"
members = ["2015-01", "2015-03", "2015-05"]

[model]
variant = "B"

[fit]
max_iterations = 100
se_methods = ["naive", "mlr"]

[loess]
span = 0.5
degree = 1
x_scale = "standardized"

[sim]
n = 500
seed = 7
lambda = [1.0, 0.8]
beta = [0.5]
theta = [0.9, 0.8]
sigma = 0.6
error_distribution = "scaled_t"
t_df = 5.0
replications = 50
"#,
        )
        .unwrap();
        assert_eq!(cfg.model.variant, Variant::B);
        let defs = cfg.period_definitions();
        assert_eq!(defs.len(), 2);
        assert_eq!(defs[0].1.len(), 3);
        let fc = cfg.fit.to_fit_config();
        assert!(fc.compute_naive && !fc.compute_mlm && fc.compute_mlr);
        assert_eq!(cfg.loess.x_scale, XScale::Standardized);
        let sim = cfg.sim.as_ref().unwrap().to_sim_config().unwrap();
        assert_eq!(sim.n, 500);
        assert!(matches!(sim.noise, NoiseDistribution::ScaledT { df } if df == 5.0));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(load_str("[input]\npath = \"x\"\nbogus = 1\n").is_err());
        assert!(load_str("[typo_section]\n").is_err());
    }

    #[test]
    fn scaled_t_requires_df() {
        let cfg = load_str(
            "[sim]\nn = 100\nlambda = [1.0, 0.5]\nbeta = [0.3]\ntheta = [1.0, 1.0]\nsigma = 0.5\nerror_distribution = \"scaled_t\"\n",
        )
        .unwrap();
        assert!(cfg.sim.unwrap().to_sim_config().is_err());
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("cfg.toml");
        std::fs::write(&cfg_path, "[input]\npath = \"data/in.csv\"\n").unwrap();
        let cfg = PipelineConfig::load(&cfg_path).unwrap();
        assert_eq!(cfg.resolve("data/in.csv"), dir.path().join("data/in.csv"));
        assert_eq!(cfg.resolve("/abs/x.csv"), PathBuf::from("/abs/x.csv"));
    }
}
