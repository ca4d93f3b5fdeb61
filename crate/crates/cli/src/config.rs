//! One declarative TOML document configures every subcommand. All sections
//! are optional and default to the library defaults; unknown keys are
//! rejected before any work starts.

use std::path::Path;

use photodepth::augment::AugmentPolicy;
use photodepth::gradcheck::GradcheckConfig;
use photodepth::optimizer::OptimizerConfig;
use photodepth::synth::SceneRecipe;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentMode {
    Lstsq,
    Median,
}

impl Default for AlignmentMode {
    fn default() -> Self {
        AlignmentMode::Lstsq
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub delta_threshold: f64,
    /// Point-cloud correctness radius, scene units.
    pub fscore_threshold: f64,
    pub alignment: AlignmentMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            delta_threshold: photodepth::eval::DELTA_THRESHOLD,
            fscore_threshold: photodepth::eval::FSCORE_THRESHOLD,
            alignment: AlignmentMode::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.delta_threshold > 1.0 && self.delta_threshold.is_finite()) {
            return Err(CliError::Input(
                "eval.delta_threshold must be finite and above 1".into(),
            ));
        }
        if !(self.fscore_threshold > 0.0 && self.fscore_threshold.is_finite()) {
            return Err(CliError::Input(
                "eval.fscore_threshold must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    /// Fallback seed for sections that do not set their own.
    pub seed: Option<u64>,
    pub optimizer: OptimizerConfig,
    pub augment: AugmentPolicy,
    pub gradcheck: GradcheckConfig,
    pub scene: SceneRecipe,
    pub eval: EvalConfig,
}

/// Load and validate, or hand back pure defaults when no file is given.
/// Every section validates eagerly so a typo fails before any work runs.
pub fn load_config(path: Option<&Path>) -> Result<AppConfig, CliError> {
    let mut config = match path {
        None => AppConfig::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            toml::from_str(&text)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        }
    };
    if let Some(seed) = config.seed {
        apply_seed(&mut config, seed);
    }
    config
        .optimizer
        .validate()
        .map_err(|e| CliError::Input(e.to_string()))?;
    config
        .augment
        .validate()
        .map_err(|e| CliError::Input(e.to_string()))?;
    config
        .scene
        .validate()
        .map_err(|e| CliError::Input(e.to_string()))?;
    config.eval.validate()?;
    Ok(config)
}

/// Force one seed on every section; used for the `--seed` override.
pub fn apply_seed(config: &mut AppConfig, seed: u64) {
    config.seed = Some(seed);
    config.optimizer.seed = seed;
    config.augment.seed = seed;
    config.gradcheck.seed = seed;
}
