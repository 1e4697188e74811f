//! JSON artifacts: the per-command report envelope, the threshold-table
//! file, and the mask sidecar.
//!
//! Reports contain no timestamps, and all maps are ordered, so identical
//! commands on identical inputs produce byte-identical JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tailcut_core::sparsity::{ThresholdProvenance, ThresholdTable};

use crate::error::{CliError, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

impl Default for ToolInfo {
    fn default() -> Self {
        Self {
            name: "tailcut".into(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.display().to_string(),
            sha256: crate::digest::file_digest(path)?,
        })
    }
}

/// Envelope shared by every subcommand report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report<M> {
    pub schema_version: u32,
    pub tool: ToolInfo,
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub outputs: Vec<FileDigest>,
    pub metrics: M,
}

impl<M: Serialize> Report<M> {
    pub fn new(command: &str, seed: Option<u64>, metrics: M) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            tool: ToolInfo::default(),
            command: command.into(),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            metrics,
        }
    }

    pub fn with_input(mut self, path: &Path) -> Result<Self> {
        self.inputs.push(FileDigest::of(path)?);
        Ok(self)
    }

    pub fn with_inputs(mut self, paths: &[std::path::PathBuf]) -> Result<Self> {
        for p in paths {
            self.inputs.push(FileDigest::of(p)?);
        }
        Ok(self)
    }

    pub fn with_output(mut self, path: &Path) -> Result<Self> {
        self.outputs.push(FileDigest::of(path)?);
        Ok(self)
    }

    /// Serialize to pretty JSON and either print to stdout or write to `out`.
    pub fn emit(&self, out: Option<&Path>) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        match out {
            Some(path) => std::fs::write(path, json + "\n")?,
            None => println!("{json}"),
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// threshold table artifact
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdTableFile {
    pub schema_version: u32,
    pub bound: f64,
    pub provenance: String,
    pub epsilons: Vec<f64>,
}

impl ThresholdTableFile {
    pub fn from_table(table: &ThresholdTable<f32>) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            bound: table.bound as f64,
            provenance: table.provenance.name().into(),
            epsilons: table.epsilons.iter().map(|&e| e as f64).collect(),
        }
    }

    pub fn to_table(&self) -> Result<ThresholdTable<f32>> {
        let provenance = match self.provenance.as_str() {
            "alg1" => ThresholdProvenance::Algorithm1,
            "exact" => ThresholdProvenance::ExactScan,
            "manual" => ThresholdProvenance::Manual,
            other => {
                return Err(CliError::Usage(format!(
                    "unknown threshold provenance {other:?}"
                )))
            }
        };
        Ok(ThresholdTable::new(
            self.epsilons.iter().map(|&e| e as f32).collect(),
            self.bound as f32,
            provenance,
        )?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

// ---------------------------------------------------------------------------
// bitmask sidecar
// ---------------------------------------------------------------------------

/// Activation sets are threshold-dependent, so mask files carry a sidecar
/// recording the thresholds they were cut at.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskSidecar {
    pub schema_version: u32,
    pub bound: f64,
    pub provenance: String,
    pub epsilons: Vec<f64>,
    pub source_weights: Vec<FileDigest>,
    pub source_inputs: Option<FileDigest>,
}

impl MaskSidecar {
    pub fn path_for(mask_path: &Path) -> std::path::PathBuf {
        let mut p = mask_path.as_os_str().to_owned();
        p.push(".meta.json");
        std::path::PathBuf::from(p)
    }

    pub fn save(&self, mask_path: &Path) -> Result<()> {
        std::fs::write(
            Self::path_for(mask_path),
            serde_json::to_string_pretty(self)? + "\n",
        )?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_table_file_round_trips() {
        let table =
            ThresholdTable::new(vec![0.5f32, 0.25], 0.2, ThresholdProvenance::Algorithm1).unwrap();
        let file = ThresholdTableFile::from_table(&table);
        let back = file.to_table().unwrap();
        assert_eq!(back, table);
    }

    #[test]
    fn sidecar_path_appends_suffix() {
        assert_eq!(
            MaskSidecar::path_for(Path::new("work/mask.nat1")),
            Path::new("work/mask.nat1.meta.json")
        );
    }
}
