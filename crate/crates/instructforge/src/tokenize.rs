//! Tokenizer abstraction used by segmentation, packing and statistics.
//!
//! Token counts everywhere in the pipeline are relative to a chosen tokenizer.
//! Two implementations ship with the crate: [`WhitespaceTokenizer`], a
//! self-contained tokenizer used as the test and default policy tokenizer, and
//! [`FileVocabTokenizer`], which loads a fixed vocabulary from a JSON file for
//! production runs against a real model vocabulary.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid vocabulary file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("vocabulary error: {0}")]
    BadVocab(String),
}

/// Interface every tokenizer must provide.
///
/// `decode(encode(t))` reproduces `t` up to the tokenizer's documented
/// normalization; `eos_id` and `pad_id` are always distinct.
pub trait Tokenizer: Send + Sync {
    fn encode(&self, text: &str) -> Vec<u32>;
    fn decode(&self, ids: &[u32]) -> String;
    fn eos_id(&self) -> u32;
    fn pad_id(&self) -> u32;
    fn name(&self) -> &str;

    /// Number of tokens in `text`.
    fn count(&self, text: &str) -> usize {
        self.encode(text).len()
    }
}

/// A token in the whitespace model: either a run of non-whitespace characters
/// or a single newline. Newlines are tokens in their own right so that line
/// and section boundaries stay visible to token budgets; spaces and tabs are
/// separators and are not counted.
fn split_tokens(text: &str) -> Vec<&str> {
    let mut tokens = Vec::new();
    let mut word_start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = word_start.take() {
                tokens.push(&text[s..i]);
            }
            if c == '\n' {
                tokens.push(&text[i..i + 1]);
            }
        } else if word_start.is_none() {
            word_start = Some(i);
        }
    }
    if let Some(s) = word_start {
        tokens.push(&text[s..]);
    }
    tokens
}

/// Join tokens back into text: words separated by single spaces, newline
/// tokens emitted verbatim with no surrounding spaces.
fn join_tokens<'a>(tokens: impl Iterator<Item = &'a str>) -> String {
    let mut out = String::new();
    for tok in tokens {
        if tok == "\n" {
            out.push('\n');
        } else {
            if !out.is_empty() && !out.ends_with('\n') {
                out.push(' ');
            }
            out.push_str(tok);
        }
    }
    out
}

const EOS_ID: u32 = 0;
const PAD_ID: u32 = 1;
const NEWLINE_ID: u32 = 2;
const FIRST_WORD_ID: u32 = 3;

#[derive(Default)]
struct Vocab {
    ids: HashMap<String, u32>,
    words: Vec<String>,
}

/// Whitespace tokenizer with a growable vocabulary.
///
/// Words are runs of non-whitespace characters; each newline is its own
/// token. Ids are assigned in first-encounter order, so a fixed processing
/// order yields identical ids across runs. Normalization on round-trip:
/// space/tab runs collapse to a single space and spaces adjacent to newlines
/// are dropped.
pub struct WhitespaceTokenizer {
    vocab: Mutex<Vocab>,
}

impl Default for WhitespaceTokenizer {
    fn default() -> Self {
        Self::new()
    }
}

impl WhitespaceTokenizer {
    pub fn new() -> Self {
        WhitespaceTokenizer {
            vocab: Mutex::new(Vocab::default()),
        }
    }
}

impl Tokenizer for WhitespaceTokenizer {
    fn encode(&self, text: &str) -> Vec<u32> {
        let mut vocab = self.vocab.lock().expect("tokenizer vocab poisoned");
        split_tokens(text)
            .into_iter()
            .map(|tok| {
                if tok == "\n" {
                    return NEWLINE_ID;
                }
                if let Some(&id) = vocab.ids.get(tok) {
                    return id;
                }
                let id = FIRST_WORD_ID + vocab.words.len() as u32;
                vocab.ids.insert(tok.to_string(), id);
                vocab.words.push(tok.to_string());
                id
            })
            .collect()
    }

    fn decode(&self, ids: &[u32]) -> String {
        let vocab = self.vocab.lock().expect("tokenizer vocab poisoned");
        join_tokens(ids.iter().map(|&id| match id {
            EOS_ID => "<eos>",
            PAD_ID => "<pad>",
            NEWLINE_ID => "\n",
            _ => vocab
                .words
                .get((id - FIRST_WORD_ID) as usize)
                .map(String::as_str)
                .unwrap_or("<unk>"),
        }))
    }

    fn eos_id(&self) -> u32 {
        EOS_ID
    }

    fn pad_id(&self) -> u32 {
        PAD_ID
    }

    fn name(&self) -> &str {
        "whitespace"
    }

    // Counting never needs the vocabulary.
    fn count(&self, text: &str) -> usize {
        split_tokens(text).len()
    }
}

#[derive(Deserialize)]
struct VocabFile {
    name: String,
    tokens: Vec<String>,
    eos: String,
    pad: String,
    unk: String,
}

/// Tokenizer with a fixed vocabulary loaded from a JSON file:
/// `{"name": ..., "tokens": [...], "eos": ..., "pad": ..., "unk": ...}`.
///
/// Text is split like [`WhitespaceTokenizer`]; words outside the vocabulary
/// map to the `unk` token (round-trip is lossy on unknown words, which is the
/// documented normalization of this tokenizer).
pub struct FileVocabTokenizer {
    name: String,
    ids: HashMap<String, u32>,
    tokens: Vec<String>,
    eos: u32,
    pad: u32,
    unk: u32,
}

impl FileVocabTokenizer {
    pub fn from_file(path: &Path) -> Result<Self, TokenizerError> {
        let raw = std::fs::read_to_string(path)?;
        let file: VocabFile = serde_json::from_str(&raw)?;
        Self::from_parts(file)
    }

    fn from_parts(file: VocabFile) -> Result<Self, TokenizerError> {
        let mut ids = HashMap::new();
        for (i, tok) in file.tokens.iter().enumerate() {
            if ids.insert(tok.clone(), i as u32).is_some() {
                return Err(TokenizerError::BadVocab(format!("duplicate token {tok:?}")));
            }
        }
        let lookup = |t: &str| {
            ids.get(t)
                .copied()
                .ok_or_else(|| TokenizerError::BadVocab(format!("special token {t:?} not in vocabulary")))
        };
        let eos = lookup(&file.eos)?;
        let pad = lookup(&file.pad)?;
        let unk = lookup(&file.unk)?;
        if eos == pad {
            return Err(TokenizerError::BadVocab(
                "eos and pad must be distinct tokens".into(),
            ));
        }
        Ok(FileVocabTokenizer {
            name: file.name,
            ids,
            tokens: file.tokens,
            eos,
            pad,
            unk,
        })
    }
}

impl Tokenizer for FileVocabTokenizer {
    fn encode(&self, text: &str) -> Vec<u32> {
        split_tokens(text)
            .into_iter()
            .map(|tok| self.ids.get(tok).copied().unwrap_or(self.unk))
            .collect()
    }

    fn decode(&self, ids: &[u32]) -> String {
        join_tokens(
            ids.iter()
                .map(|&id| self.tokens.get(id as usize).map(String::as_str).unwrap_or("<unk>")),
        )
    }

    fn eos_id(&self) -> u32 {
        self.eos
    }

    fn pad_id(&self) -> u32 {
        self.pad
    }

    fn name(&self) -> &str {
        &self.name
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_up_to_whitespace_normalization() {
        let tok = WhitespaceTokenizer::new();
        let ids = tok.encode("un  deux\ntrois");
        assert_eq!(tok.decode(&ids), "un deux\ntrois");
    }

    #[test]
    fn newlines_count_as_tokens() {
        let tok = WhitespaceTokenizer::new();
        assert_eq!(tok.count("L1\nL2\nL3"), 5);
        assert_eq!(tok.count("L1\n"), 2);
        assert_eq!(tok.count("a b c"), 3);
    }

    #[test]
    fn ids_are_stable_within_an_instance() {
        let tok = WhitespaceTokenizer::new();
        let first = tok.encode("alpha beta alpha");
        let second = tok.encode("alpha beta alpha");
        assert_eq!(first, second);
        assert_eq!(first[0], first[2]);
    }

    #[test]
    fn eos_and_pad_distinct() {
        let tok = WhitespaceTokenizer::new();
        assert_ne!(tok.eos_id(), tok.pad_id());
    }

    #[test]
    fn file_vocab_rejects_shared_eos_pad() {
        let file = VocabFile {
            name: "bad".into(),
            tokens: vec!["<s>".into(), "<unk>".into()],
            eos: "<s>".into(),
            pad: "<s>".into(),
            unk: "<unk>".into(),
        };
        assert!(FileVocabTokenizer::from_parts(file).is_err());
    }

    #[test]
    fn file_vocab_maps_unknown_words() {
        let file = VocabFile {
            name: "tiny".into(),
            tokens: vec!["</s>".into(), "[PAD]".into(), "<unk>".into(), "rafale".into()],
            eos: "</s>".into(),
            pad: "[PAD]".into(),
            unk: "<unk>".into(),
        };
        let tok = FileVocabTokenizer::from_parts(file).unwrap();
        assert_eq!(tok.encode("rafale mirage"), vec![3, 2]);
        assert_eq!(tok.decode(&[3, 2]), "rafale <unk>");
    }
}
