//! TOML run configuration. Every key is optional; command-line flags win.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use crate::augment::{ExportVariant, ParaphraseStyle};
use crate::corpus::Portion;
use crate::lexicon::SelectionRule;
use crate::modelgate::BackendSpec;
use crate::prompting::PromptMode;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
    pub backend: Option<BackendSpec>,
    #[serde(default)]
    pub report: ReportSection,
    #[serde(default)]
    pub lexicon: LexiconSection,
    #[serde(default)]
    pub augment: AugmentSection,
    #[serde(default)]
    pub export: ExportSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub stereoset: Option<PathBuf>,
    pub crowspairs: Option<PathBuf>,
    pub portion: Option<Portion>,
    #[serde(default)]
    pub categories: Vec<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub stereoset_per_category: Option<usize>,
    pub crowspairs_per_category: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    pub items: Option<PathBuf>,
    pub mode: Option<PromptMode>,
    pub seed: Option<u64>,
    pub parallelism: Option<usize>,
    pub cache_dir: Option<PathBuf>,
    pub label: Option<String>,
    pub include_blank_context: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    #[serde(default)]
    pub formats: Vec<String>,
    pub plot: Option<bool>,
    pub parseable_only: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LexiconSection {
    pub k: Option<usize>,
    pub alpha: Option<f64>,
    pub rule: Option<SelectionRule>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSection {
    pub style: Option<ParaphraseStyle>,
    pub min_ratio: Option<f64>,
    pub max_ratio: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportSection {
    pub variant: Option<ExportVariant>,
    pub mode: Option<PromptMode>,
}

impl RunConfig {
    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config: Self =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(inner) = p {
                if inner.is_relative() {
                    *inner = base.join(&*inner);
                }
            }
        };
        fix(&mut config.out);
        fix(&mut config.data.stereoset);
        fix(&mut config.data.crowspairs);
        fix(&mut config.evaluate.items);
        fix(&mut config.evaluate.cache_dir);
        Ok(config)
    }
}

pub fn require_exists(path: &Path) -> Result<()> {
    if !path.exists() {
        bail!("input path {} does not exist", path.display());
    }
    Ok(())
}
