//! Survey corpus manifest: one JSON document per dataset directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{FbError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurveyEntry {
    pub survey_id: String,
    /// Gather files relative to the manifest's directory.
    pub gathers: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub surveys: Vec<SurveyEntry>,
}

impl Manifest {
    /// Reads a manifest file, or `manifest.json` inside a directory.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let m: Manifest = serde_json::from_slice(&fs::read(&file)?)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for s in &self.surveys {
            if !seen.insert(s.survey_id.as_str()) {
                return Err(FbError::Format {
                    field: "survey_id".into(),
                    msg: format!("survey {:?} listed twice", s.survey_id),
                });
            }
        }
        let mut paths = std::collections::HashSet::new();
        for g in self.surveys.iter().flat_map(|s| &s.gathers) {
            if !paths.insert(g.as_str()) {
                return Err(FbError::Format {
                    field: "gathers".into(),
                    msg: format!("gather {g:?} listed twice"),
                });
            }
        }
        Ok(())
    }

    pub fn survey(&self, id: &str) -> Option<&SurveyEntry> {
        self.surveys.iter().find(|s| s.survey_id == id)
    }

    /// Survey id to gather identifiers (the relative paths), as consumed by `make_split`.
    pub fn survey_map(&self) -> BTreeMap<String, Vec<String>> {
        self.surveys
            .iter()
            .map(|s| (s.survey_id.clone(), s.gathers.clone()))
            .collect()
    }

    /// Survey that lists the given gather identifier.
    pub fn survey_of(&self, gather: &str) -> Option<&str> {
        self.surveys
            .iter()
            .find(|s| s.gathers.iter().any(|g| g == gather))
            .map(|s| s.survey_id.as_str())
    }
}

/// Path of a manifest-relative gather entry.
pub fn resolve(root: &Path, gather: &str) -> PathBuf {
    root.join(gather)
}
