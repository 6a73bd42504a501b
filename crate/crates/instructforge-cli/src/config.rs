//! Project configuration: one JSON file with environment-variable
//! interpolation for secrets. Seeds are explicit; commands refuse to run
//! without one.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use instructforge::corpus::{SegmentationPolicy, SplitMode};
use instructforge::synth::GenSettings;
use instructforge::tokenize::{FileVocabTokenizer, Tokenizer, WhitespaceTokenizer};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectConfig {
    /// Master seed; every stage derives its own sub-seeds from it.
    pub seed: u64,
    pub paths: Paths,
    #[serde(default)]
    pub tokenizer: TokenizerSpec,
    #[serde(default)]
    pub segmentation: SegmentationPolicy,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub generation: GenSettings,
    #[serde(default)]
    pub provider: ProviderConfig,
    #[serde(default)]
    pub judge: JudgeConfig,
    #[serde(default)]
    pub sources: IndexMap<String, SourceConfig>,
    #[serde(default)]
    pub mixes: Vec<instructforge::dataset::MixSpec>,
    #[serde(default)]
    pub long: LongConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Paths {
    pub corpus_dir: PathBuf,
    pub output_dir: PathBuf,
    pub cache_dir: PathBuf,
    #[serde(default)]
    pub header_patterns: Option<PathBuf>,
    #[serde(default)]
    pub acronym_dict: Option<PathBuf>,
    #[serde(default)]
    pub translation_dict: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TokenizerSpec {
    #[default]
    Whitespace,
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitConfig {
    pub ratios: (f64, f64, f64),
    #[serde(default = "default_split_mode")]
    pub mode: SplitMode,
}

fn default_split_mode() -> SplitMode {
    SplitMode::Segment
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            ratios: (0.8, 0.1, 0.1),
            mode: SplitMode::Segment,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub endpoint: String,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

fn default_retries() -> u32 {
    3
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            api_key: None,
            max_retries: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeConfig {
    pub model: String,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        JudgeConfig {
            model: "judge-model".into(),
            endpoint: None,
            cache_dir: None,
        }
    }
}

/// A logical instruction source feeding `mix`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceConfig {
    /// Records file, relative to the output directory unless absolute.
    pub path: PathBuf,
    /// Keep only records whose main language matches (stop-word detector).
    #[serde(default)]
    pub filter_language: Option<String>,
    /// Treat records without a split as train (external corpora).
    #[serde(default)]
    pub train_only: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LongConfig {
    pub n_acronym_combos: usize,
    pub n_translation_combos: usize,
    pub combo_range: (usize, usize),
}

impl Default for LongConfig {
    fn default() -> Self {
        LongConfig {
            n_acronym_combos: 10,
            n_translation_combos: 10,
            combo_range: instructforge::patterns::DEFAULT_COMBO_RANGE,
        }
    }
}

/// Replace `${VAR}` with the environment value in every string of the JSON
/// tree. Unset variables interpolate to the empty string.
fn interpolate_env(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::String(s) => {
            if s.contains("${") {
                let mut out = String::with_capacity(s.len());
                let mut rest = s.as_str();
                while let Some(start) = rest.find("${") {
                    out.push_str(&rest[..start]);
                    match rest[start + 2..].find('}') {
                        Some(end) => {
                            let var = &rest[start + 2..start + 2 + end];
                            out.push_str(&std::env::var(var).unwrap_or_default());
                            rest = &rest[start + 2 + end + 1..];
                        }
                        None => {
                            out.push_str(&rest[start..]);
                            rest = "";
                        }
                    }
                }
                out.push_str(rest);
                *s = out;
            }
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(interpolate_env),
        serde_json::Value::Object(map) => map.values_mut().for_each(interpolate_env),
        _ => {}
    }
}

impl ProjectConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut value: serde_json::Value =
            serde_json::from_str(&raw).context("config is not valid JSON")?;
        interpolate_env(&mut value);
        let config: ProjectConfig =
            serde_json::from_value(value).context("config does not match the expected shape")?;
        config.segmentation.validate().map_err(anyhow::Error::from)?;
        Ok(config)
    }

    pub fn build_tokenizer(&self) -> Result<Box<dyn Tokenizer>> {
        Ok(match &self.tokenizer {
            TokenizerSpec::Whitespace => Box::new(WhitespaceTokenizer::new()),
            TokenizerSpec::File { path } => Box::new(
                FileVocabTokenizer::from_file(path)
                    .with_context(|| format!("cannot load tokenizer {}", path.display()))?,
            ),
        })
    }

    pub fn out(&self, rel: &str) -> PathBuf {
        self.paths.output_dir.join(rel)
    }

    pub fn source_path(&self, source: &SourceConfig) -> PathBuf {
        if source.path.is_absolute() {
            source.path.clone()
        } else {
            self.paths.output_dir.join(&source.path)
        }
    }

    /// Paths every command relies on must exist up front.
    pub fn check_paths(&self, need_corpus: bool) -> Result<()> {
        if need_corpus && !self.paths.corpus_dir.is_dir() {
            bail!(
                "corpus directory {} does not exist",
                self.paths.corpus_dir.display()
            );
        }
        if let Some(p) = &self.paths.header_patterns {
            if !p.is_file() {
                bail!("header pattern file {} does not exist", p.display());
            }
        }
        Ok(())
    }
}

/// Load the header-strip patterns file: one expression per line, `#` starts
/// a comment.
pub fn load_header_patterns(path: &Path) -> Result<Vec<String>> {
    let raw = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read patterns {}", path.display()))?;
    Ok(raw
        .lines()
        .map(str::trim_end)
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(str::to_string)
        .collect())
}

/// Parse simple `key=value` override flags.
pub fn parse_overrides(pairs: &[String]) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for pair in pairs {
        let (k, v) = pair
            .split_once('=')
            .with_context(|| format!("override {pair:?} is not key=value"))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}
