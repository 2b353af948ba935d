use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::audit::AuditConfig;
use crate::domain::{AttributeSchema, Dataset};
use crate::enhance::{train_margin, EnhanceConfig};
use crate::error::{Error, Result};
use crate::function::DecisionFunction;
use crate::rule::RuleSpec;
use crate::scenario::{ScenarioConfig, DEFAULT_REG};
use crate::selector::{DEFAULT_ETA, DEFAULT_TAU};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectorConfig {
    pub eta: f64,
    pub tau: f64,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        SelectorConfig {
            eta: DEFAULT_ETA,
            tau: DEFAULT_TAU,
        }
    }
}

/// One portfolio member. Learned kinds are trained on the portfolio's
/// training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionSpec {
    FixedRule {
        id: String,
        rule: RuleSpec,
    },
    RetrainableBlackbox {
        id: String,
        #[serde(default = "default_reg")]
        reg: f64,
    },
    ConstrainedMargin {
        id: String,
        #[serde(default = "default_reg")]
        reg: f64,
    },
}

fn default_reg() -> f64 {
    DEFAULT_REG
}

impl FunctionSpec {
    pub fn id(&self) -> &str {
        match self {
            FunctionSpec::FixedRule { id, .. }
            | FunctionSpec::RetrainableBlackbox { id, .. }
            | FunctionSpec::ConstrainedMargin { id, .. } => id,
        }
    }

    pub fn needs_training(&self) -> bool {
        !matches!(self, FunctionSpec::FixedRule { .. })
    }

    pub fn build(&self, schema: &Arc<AttributeSchema>, training: Option<&Arc<Dataset>>) -> Result<DecisionFunction> {
        let need = || {
            training.cloned().ok_or_else(|| {
                Error::Config(format!("function `{}` needs training data", self.id()))
            })
        };
        match self {
            FunctionSpec::FixedRule { id, rule } => DecisionFunction::fixed_rule(id.as_str(), schema.clone(), rule),
            FunctionSpec::RetrainableBlackbox { id, reg } => DecisionFunction::blackbox(id.as_str(), need()?, *reg),
            FunctionSpec::ConstrainedMargin { id, reg } => train_margin(id, need()?, *reg),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_document(path, &text)
    }
}

/// Parse a TOML document, or JSON when the file ends in `.json`.
pub(crate) fn parse_document<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    let is_json = path.extension().is_some_and(|e| e == "json");
    if is_json {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    } else {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PortfolioSpec {
    /// `"default"` builds the scenario's default portfolio. Ignored when
    /// `functions` is nonempty.
    pub preset: String,
    pub functions: Vec<FunctionSpec>,
    /// CSV of labeled rows for learned members. Defaults to the scenario's
    /// generated history.
    pub training: Option<PathBuf>,
}

impl Default for PortfolioSpec {
    fn default() -> Self {
        PortfolioSpec {
            preset: "default".into(),
            functions: Vec::new(),
            training: None,
        }
    }
}

/// Replay a dataset file instead of generating a scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    pub path: PathBuf,
    /// Sidecar with the ZIP grouping; defaults to `<path>.meta.json` when
    /// that file exists.
    #[serde(default)]
    pub meta: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub steps: usize,
    /// Master seed. Overrides `scenario.seed`.
    pub seed: u64,
    /// Instances between a decision and the arrival of its ground truth.
    pub reveal_delay: usize,
    /// Window, in steps, of the rolling accuracy and parity metrics.
    pub metrics_window: usize,
    pub output_dir: PathBuf,
    pub scenario: ScenarioConfig,
    pub dataset: Option<DatasetSource>,
    pub portfolio: PortfolioSpec,
    pub selector: SelectorConfig,
    pub audit: AuditConfig,
    pub enhancement: EnhanceConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            steps: 5000,
            seed: 0,
            reveal_delay: 0,
            metrics_window: 1000,
            output_dir: PathBuf::from("out"),
            scenario: ScenarioConfig::default(),
            dataset: None,
            portfolio: PortfolioSpec::default(),
            selector: SelectorConfig::default(),
            audit: AuditConfig::default(),
            enhancement: EnhanceConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = parse_document(path, &text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if self.metrics_window == 0 {
            return Err(Error::Config("metrics_window must be >= 1".into()));
        }
        if !(self.selector.eta > 0.0 && self.selector.eta <= 0.5) {
            return Err(Error::Config(format!(
                "selector.eta must be in (0, 1/2], got {}",
                self.selector.eta
            )));
        }
        if !(self.selector.tau >= 0.0) {
            return Err(Error::Config("selector.tau must be >= 0".into()));
        }
        if self.portfolio.functions.is_empty() && self.portfolio.preset != "default" {
            return Err(Error::Config(format!(
                "unknown portfolio preset `{}`",
                self.portfolio.preset
            )));
        }
        if self.dataset.is_some()
            && self.portfolio.training.is_none()
            && (self.portfolio.functions.is_empty()
                || self.portfolio.functions.iter().any(FunctionSpec::needs_training))
        {
            return Err(Error::Config(
                "learned portfolio members need portfolio.training when running from a dataset file".into(),
            ));
        }
        self.audit.validate()?;
        self.enhancement.validate()?;
        self.scenario_for_run().validate()
    }

    /// The scenario with the master seed applied.
    pub fn scenario_for_run(&self) -> ScenarioConfig {
        ScenarioConfig {
            seed: self.seed,
            ..self.scenario.clone()
        }
    }
}
