use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

pub const DEFAULT_NOISE: f64 = 0.01;

fn default_noise() -> f64 {
    DEFAULT_NOISE
}

/// One benchmark case. Paths are relative to the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
    /// Pre-blurred observation. When absent it is synthesized from the
    /// ground truth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blurred: Option<PathBuf>,
    pub kernel: PathBuf,
    /// Noise standard deviation for synthesis, as a fraction of the range.
    #[serde(default = "default_noise")]
    pub noise: f64,
}

impl CaseSpec {
    pub fn label(&self, index: usize) -> String {
        match &self.name {
            Some(n) => n.clone(),
            None => format!("case{index:03}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub cases: Vec<CaseSpec>,
    /// Directory that relative case paths resolve against. Set on load.
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(cases: Vec<CaseSpec>, root: impl Into<PathBuf>) -> Self {
        Self {
            version: MANIFEST_VERSION,
            cases,
            root: root.into(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Self = serde_json::from_str(&text)?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported manifest version {} (expected {MANIFEST_VERSION})",
                self.version
            )));
        }
        if self.cases.is_empty() {
            return Err(Error::InvalidInput("manifest has no cases".into()));
        }
        for (i, c) in self.cases.iter().enumerate() {
            if c.ground_truth.is_none() && c.blurred.is_none() {
                return Err(Error::InvalidInput(format!(
                    "case {} needs a ground_truth or a blurred image",
                    c.label(i)
                )));
            }
            if !(c.noise >= 0.0 && c.noise.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "case {} has invalid noise {}",
                    c.label(i),
                    c.noise
                )));
            }
        }
        let mut labels: Vec<String> = self
            .cases
            .iter()
            .enumerate()
            .map(|(i, c)| c.label(i))
            .collect();
        labels.sort();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput(format!("duplicate case name {}", w[0])));
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }
}
