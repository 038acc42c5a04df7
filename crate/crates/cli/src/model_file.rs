//! The saved model: a versioned JSON document holding the fitted model and
//! how it was trained.

use std::path::Path;

use serde::{Deserialize, Serialize};
use svgp::models::{DGPModel, GPRModel, SVGPModel, UncertainSVGP};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model")]
pub enum StoredModel {
    #[serde(rename = "gpr")]
    Gpr(GPRModel),
    #[serde(rename = "svgp")]
    Svgp(SVGPModel),
    #[serde(rename = "dgp")]
    Dgp(DGPModel),
    #[serde(rename = "svgp+uncertain")]
    Uncertain(UncertainSVGP),
}

impl StoredModel {
    pub fn kind(&self) -> &'static str {
        match self {
            StoredModel::Gpr(_) => "gpr",
            StoredModel::Svgp(_) => "svgp",
            StoredModel::Dgp(_) => "dgp",
            StoredModel::Uncertain(_) => "svgp+uncertain",
        }
    }

    pub fn validate(&self) -> svgp::Result<()> {
        match self {
            StoredModel::Gpr(m) => m.validate(),
            StoredModel::Svgp(m) => m.validate(),
            StoredModel::Dgp(m) => m.validate(),
            StoredModel::Uncertain(u) => {
                u.model.validate()?;
                UncertainSVGP::new(u.model.clone(), u.inputs.clone(), u.num_samples).map(|_| ())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub steps: usize,
    pub final_elbo: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    #[serde(flatten)]
    pub model: StoredModel,
    pub whiten: bool,
    pub training: TrainingMeta,
}

impl ModelFile {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| CliError::Config(format!("cannot encode model: {e}")))?;
        s.push('\n');
        Ok(s)
    }

    /// Parses and validates a model document.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid model file: {e}")))?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "model file schema version {} is not supported (expected {SCHEMA_VERSION})",
                file.schema_version
            )));
        }
        file.model.validate().map_err(|e| CliError::Config(format!("invalid model file: {e} ({})", e.name())))?;
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }
}
