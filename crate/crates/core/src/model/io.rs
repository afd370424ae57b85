use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::{Architecture, Classifier, DomainBox};

const FORMAT: &str = "intentlab-classifier";

/// On-disk model: architecture descriptor plus flat parameter array
/// (`W₁`, `b₁`, `W₂`, `b₂`, row-major), as JSON text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub activation: String,
    pub architecture: Architecture,
    pub domain: DomainBox,
    pub params: Vec<f64>,
}

impl ModelFile {
    pub fn from_model<T: Real>(m: &Classifier<T>) -> Self {
        ModelFile {
            format: FORMAT.into(),
            version: 1,
            activation: if m.architecture().hidden == 0 { "none" } else { "tanh" }.into(),
            architecture: m.architecture(),
            domain: m.domain(),
            params: m.to_flat().into_iter().map(Real::as_f64).collect(),
        }
    }

    pub fn into_model<T: Real>(self) -> Result<Classifier<T>> {
        if self.format != FORMAT || self.version != 1 {
            return Err(Error::ModelFormat(format!("unsupported format {} v{}", self.format, self.version)));
        }
        let params: Vec<T> = self.params.iter().map(|&v| T::lit(v)).collect();
        Classifier::from_flat(self.architecture, self.domain, &params)
    }
}

pub fn save_model<T: Real>(m: &Classifier<T>, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(&ModelFile::from_model(m)).map_err(|e| Error::ModelFormat(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_model<T: Real>(path: &Path) -> Result<Classifier<T>> {
    let text = std::fs::read_to_string(path)?;
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| Error::ModelFormat(e.to_string()))?;
    file.into_model()
}
