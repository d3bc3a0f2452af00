//! The controller version ladder.
//!
//! Versions are stored as one JSON document: a base configuration plus an
//! ordered list of versions, each applying its `changes` on top of the
//! previous version.

use std::path::Path;
use std::sync::OnceLock;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::config::{merge_json, ConfigError, ControllerConfig};

const BUNDLED_LADDER: &str = include_str!("../../data/versions.json");

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LadderFile {
    base: serde_json::Value,
    ladder: Vec<LadderEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LadderEntry {
    id: String,
    #[serde(default)]
    description: String,
    requirements: Vec<String>,
    #[serde(default)]
    changes: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VersionInfo {
    pub id: String,
    pub description: String,
    pub requirements: Vec<String>,
    pub config: ControllerConfig,
}

/// Resolved version ladder, keyed by version id in ladder order.
#[derive(Debug, Clone, PartialEq)]
pub struct VersionLadder {
    versions: IndexMap<String, VersionInfo>,
}

impl VersionLadder {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let file: LadderFile = serde_json::from_str(text)?;
        let mut current = file.base;
        let mut versions = IndexMap::new();
        for entry in file.ladder {
            if !entry.changes.is_null() {
                merge_json(&mut current, &entry.changes);
            }
            let config: ControllerConfig = serde_json::from_value(current.clone())?;
            config
                .validate()
                .map_err(|e| ConfigError::Invalid(format!("version {}: {e}", entry.id)))?;
            versions.insert(
                entry.id.clone(),
                VersionInfo {
                    id: entry.id,
                    description: entry.description,
                    requirements: entry.requirements,
                    config,
                },
            );
        }
        Ok(Self { versions })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }

    pub fn bundled() -> &'static VersionLadder {
        static LADDER: OnceLock<VersionLadder> = OnceLock::new();
        LADDER.get_or_init(|| {
            VersionLadder::from_json(BUNDLED_LADDER).expect("bundled version ladder is valid")
        })
    }

    pub fn get(&self, id: &str) -> Result<&VersionInfo, ConfigError> {
        self.versions
            .get(id)
            .ok_or_else(|| ConfigError::UnknownVersion(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.versions.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = &VersionInfo> {
        self.versions.values()
    }

    pub fn len(&self) -> usize {
        self.versions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.versions.is_empty()
    }
}

pub fn config_for_version(id: &str) -> Result<ControllerConfig, ConfigError> {
    Ok(VersionLadder::bundled().get(id)?.config.clone())
}

/// Requirement ids checked for a version (`F1` only before drivability was introduced).
pub fn requirements_for_version(id: &str) -> Result<Vec<String>, ConfigError> {
    Ok(VersionLadder::bundled().get(id)?.requirements.clone())
}
