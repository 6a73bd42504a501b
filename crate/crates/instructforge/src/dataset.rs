//! Instruction mixes per run configuration, system-prompt assignment,
//! language filtering, dataset statistics and chat-format serialization.

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Split;
use crate::grammar::{expand, Grammar, GrammarError};
use crate::seeding::derive_seed;
use crate::synth::InstructionRecord;
use crate::tokenize::Tokenizer;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("mix includes source {0:?} but it was not provided")]
    MissingSource(String),
    #[error("mix must include at least one source")]
    EmptySpec,
    #[error("split ratios must be non-negative and sum to 1: {0:?}")]
    BadRatios((f64, f64, f64)),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
}

/// Named instruction sources with include flags for one run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixSpec {
    pub run: String,
    pub sources: IndexMap<String, bool>,
}

impl MixSpec {
    pub fn included(&self) -> impl Iterator<Item = &str> {
        self.sources
            .iter()
            .filter(|(_, on)| **on)
            .map(|(name, _)| name.as_str())
    }
}

/// Concatenate the train partitions of the included sources, in source order
/// then record order. Nothing is shuffled, duplicated or dropped.
pub fn mix(
    spec: &MixSpec,
    sources: &IndexMap<String, Vec<InstructionRecord>>,
) -> Result<Vec<InstructionRecord>, DatasetError> {
    if spec.included().next().is_none() {
        return Err(DatasetError::EmptySpec);
    }
    let mut out = Vec::new();
    for name in spec.included() {
        let records = sources
            .get(name)
            .ok_or_else(|| DatasetError::MissingSource(name.to_string()))?;
        out.extend(records.iter().filter(|r| r.split == Split::Train).cloned());
    }
    Ok(out)
}

/// Give every record with an empty system prompt an independent uniform
/// expansion of the system-prompt grammar (possibly the empty string, which
/// stays `None`). Records with a preset system prompt are untouched. The
/// per-record seed derives from the record id, so assignment is
/// order-independent and deterministic.
pub fn assign_system_prompts(
    records: Vec<InstructionRecord>,
    grammar: &Grammar,
    seed: u64,
) -> Result<Vec<InstructionRecord>, DatasetError> {
    records
        .into_iter()
        .map(|mut record| {
            let empty = record.system.as_deref().is_none_or(str::is_empty);
            if empty {
                let text = expand(grammar, derive_seed(seed, &record.id), &Default::default())?.text;
                record.system = if text.is_empty() { None } else { Some(text) };
            }
            Ok(record)
        })
        .collect()
}

/// Assign splits to records that do not inherit one from a source segment
/// (patron and combo instructions). Same scheme as the corpus split: ids
/// sorted, seeded shuffle, sliced by ratio.
pub fn assign_record_splits(
    mut records: Vec<InstructionRecord>,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<Vec<InstructionRecord>, DatasetError> {
    let (rt, rv, rs) = ratios;
    if rt < 0.0 || rv < 0.0 || rs < 0.0 || (rt + rv + rs - 1.0).abs() > 1e-9 {
        return Err(DatasetError::BadRatios(ratios));
    }
    let mut ids: Vec<String> = records
        .iter()
        .filter(|r| r.split == Split::Unassigned)
        .map(|r| r.id.clone())
        .collect();
    ids.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n = ids.len();
    let n_train = ((rt * n as f64).round() as usize).min(n);
    let n_val = ((rv * n as f64).round() as usize).min(n - n_train);
    let assignment: std::collections::BTreeMap<String, Split> = ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Validation
            } else {
                Split::Test
            };
            (id, split)
        })
        .collect();
    for record in records.iter_mut() {
        if record.split == Split::Unassigned {
            record.split = assignment[&record.id];
        }
    }
    Ok(records)
}

/// Classifies text into a language tag.
pub trait LanguageDetector: Send + Sync {
    fn detect(&self, text: &str) -> String;
}

const FRENCH_STOPWORDS: &[&str] = &[
    "le", "la", "les", "de", "des", "du", "un", "une", "et", "est", "dans", "que", "qui", "pour",
    "sur", "avec", "pas", "ce", "cette", "ces", "au", "aux", "il", "elle", "nous", "vous", "ils",
    "sont", "par", "plus", "mais", "ou", "son", "sa", "ses", "être", "a", "à",
];

const ENGLISH_STOPWORDS: &[&str] = &[
    "the", "of", "and", "to", "in", "is", "that", "it", "for", "on", "with", "as", "this", "are",
    "was", "be", "at", "by", "from", "or", "an", "not", "but", "have", "has", "they", "you",
    "their", "its", "which",
];

/// Deliberately simple stop-word-ratio detector used as the default; swap in
/// a real detector through the [`LanguageDetector`] trait for production.
#[derive(Debug, Default, Clone, Copy)]
pub struct StopwordDetector;

impl LanguageDetector for StopwordDetector {
    fn detect(&self, text: &str) -> String {
        let normalized = crate::evalharness::normalize_text(text);
        let mut fr = 0usize;
        let mut en = 0usize;
        for word in normalized.split(' ') {
            if FRENCH_STOPWORDS.contains(&word) {
                fr += 1;
            }
            if ENGLISH_STOPWORDS.contains(&word) {
                en += 1;
            }
        }
        if fr > en {
            "fr".to_string()
        } else if en > fr {
            "en".to_string()
        } else {
            "unknown".to_string()
        }
    }
}

/// Keep records whose concatenated user+assistant text is detected as
/// `lang`. Order preserved; mixed-language records go whichever way the
/// detector calls their main language.
pub fn filter_by_language(
    records: Vec<InstructionRecord>,
    detector: &dyn LanguageDetector,
    lang: &str,
) -> Vec<InstructionRecord> {
    records
        .into_iter()
        .filter(|r| detector.detect(&format!("{}\n{}", r.user, r.assistant)) == lang)
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InstructionStats {
    pub n_total: usize,
    pub n_train: usize,
    /// Tokens over system+user+assistant of every record.
    pub total_tokens: usize,
    /// Mean user tokens over the train partition.
    pub mean_input_tokens: f64,
    /// Mean assistant tokens over the train partition.
    pub mean_output_tokens: f64,
}

pub fn dataset_stats(records: &[InstructionRecord], tok: &dyn Tokenizer) -> InstructionStats {
    let n_total = records.len();
    let train: Vec<&InstructionRecord> = records.iter().filter(|r| r.split == Split::Train).collect();
    let n_train = train.len();
    let total_tokens = records
        .iter()
        .map(|r| {
            tok.count(r.system.as_deref().unwrap_or(""))
                + tok.count(&r.user)
                + tok.count(&r.assistant)
        })
        .sum();
    let mean = |f: &dyn Fn(&InstructionRecord) -> usize| -> f64 {
        if train.is_empty() {
            0.0
        } else {
            train.iter().map(|r| f(r)).sum::<usize>() as f64 / train.len() as f64
        }
    };
    InstructionStats {
        n_total,
        n_train,
        total_tokens,
        mean_input_tokens: mean(&|r| tok.count(&r.user)),
        mean_output_tokens: mean(&|r| tok.count(&r.assistant)),
    }
}

/// Chat-format export: the three-dictionary message list plus metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatFormatRecord {
    pub messages: Vec<ChatTurn>,
    pub meta: ChatMeta,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatMeta {
    pub id: String,
    pub task: crate::synth::RecordKind,
    pub split: Split,
    pub generator: crate::synth::GeneratorKind,
}

/// Render a record as the 3-element chat message list. The system turn is
/// always present; an absent system prompt serializes as empty content.
pub fn to_chat_format(record: &InstructionRecord) -> ChatFormatRecord {
    ChatFormatRecord {
        messages: vec![
            ChatTurn {
                role: "system".into(),
                content: record.system.clone().unwrap_or_default(),
            },
            ChatTurn {
                role: "user".into(),
                content: record.user.clone(),
            },
            ChatTurn {
                role: "assistant".into(),
                content: record.assistant.clone(),
            },
        ],
        meta: ChatMeta {
            id: record.id.clone(),
            task: record.task,
            split: record.split,
            generator: record.provenance.generator,
        },
    }
}
