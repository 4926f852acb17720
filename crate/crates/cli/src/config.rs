use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mriembed::synthetic::{SyntheticSpec, BRATS_SHAPE};
use mriembed::{Combination, ElementKind, EmbedConfig, PipelineConfig};
use serde::{Deserialize, Serialize};

/// File name the effective configuration is echoed under.
pub const ECHO_NAME: &str = "config.toml";

/// Everything a run needs, loaded from TOML and then overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub combo: Combination,
    /// Read patients from disk; synthetic patients are generated otherwise.
    pub dataset: Option<DatasetSection>,
    pub synthetic: SyntheticSection,
    pub pipeline: PipelineConfig,
    pub embed: EmbedConfig,
    pub export: ExportSection,
    pub bench: BenchSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("out"),
            combo: Combination::M9,
            dataset: None,
            synthetic: SyntheticSection::default(),
            pipeline: PipelineConfig::default(),
            embed: EmbedConfig::default(),
            export: ExportSection::default(),
            bench: BenchSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub root: PathBuf,
    #[serde(default = "default_pattern")]
    pub pattern: String,
}

fn default_pattern() -> String {
    mriembed::dataset::DEFAULT_PATTERN.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub patients: usize,
    pub shape: [usize; 3],
    pub kind: ElementKind,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        SyntheticSection {
            patients: 2,
            shape: BRATS_SHAPE,
            kind: ElementKind::I16,
        }
    }
}

impl SyntheticSection {
    pub fn spec(&self, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            shape: self.shape,
            kind: self.kind,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportSection {
    pub nifti: bool,
    pub png: bool,
    pub compress: bool,
}

impl Default for ExportSection {
    fn default() -> Self {
        ExportSection {
            nifti: true,
            png: false,
            compress: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub reps: usize,
    pub combos: Vec<Combination>,
    pub with_io: bool,
    /// Synthetic samples per row, or the patient cap for a dataset.
    pub samples: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            reps: 5,
            combos: Combination::ALL.to_vec(),
            with_io: false,
            samples: 1,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Writes the effective configuration into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let text = toml::to_string_pretty(self).context("serializing config")?;
        let path = dir.join(ECHO_NAME);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
