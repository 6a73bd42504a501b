//! Training-input materialization: packing with per-document EOS, chat
//! template rendering, completion-only loss masks, and emission of training
//! configuration files.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Segment;
use crate::synth::InstructionRecord;
use crate::tokenize::Tokenizer;

#[derive(Debug, Error)]
pub enum TrainPrepError {
    #[error("window of {0} tokens is too small")]
    BadWindow(usize),
    #[error("response marker not found exactly once: {0}")]
    MarkerNotFound(String),
    #[error("record {record_id:?} cannot fit the window: assistant spans {len} of {window} tokens")]
    AssistantTooLong {
        record_id: String,
        len: usize,
        window: usize,
    },
    #[error("unknown training parameter {0:?}")]
    UnknownParameter(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid sidecar header: {0}")]
    BadSidecar(String),
}

/// Textual separators around each role block. `response_marker` is the exact
/// text sitting between the end of the user content and the start of the
/// assistant content; it locates the loss-mask boundary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTemplate {
    pub system_prefix: String,
    pub system_suffix: String,
    pub user_prefix: String,
    pub user_suffix: String,
    pub assistant_prefix: String,
    pub assistant_suffix: String,
    pub response_marker: String,
}

impl Default for ChatTemplate {
    /// Compact explicit markers, not tied to any particular model.
    fn default() -> Self {
        ChatTemplate {
            system_prefix: "<|system|>".into(),
            system_suffix: "<|end|>".into(),
            user_prefix: "<|user|>".into(),
            user_suffix: "<|end|>".into(),
            assistant_prefix: "<|assistant|>".into(),
            assistant_suffix: "<|end|>".into(),
            response_marker: "<|assistant|>".into(),
        }
    }
}

impl ChatTemplate {
    /// Variant with spaces around every marker so that whitespace tokenizers
    /// see the markers as standalone tokens.
    pub fn spaced() -> Self {
        ChatTemplate {
            system_prefix: "<|system|> ".into(),
            system_suffix: " <|end|> ".into(),
            user_prefix: "<|user|> ".into(),
            user_suffix: " <|end|> ".into(),
            assistant_prefix: "<|assistant|> ".into(),
            assistant_suffix: " <|end|>".into(),
            response_marker: "<|assistant|>".into(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, TrainPrepError> {
        let raw = std::fs::read_to_string(path)?;
        serde_json::from_str(&raw).map_err(|e| TrainPrepError::BadSidecar(e.to_string()))
    }
}

/// Render a record as a single string. The system block is omitted entirely
/// when the system prompt is empty or absent.
pub fn render_chat(record: &InstructionRecord, tmpl: &ChatTemplate) -> String {
    let mut out = String::new();
    if let Some(system) = record.system.as_deref() {
        if !system.is_empty() {
            out.push_str(&tmpl.system_prefix);
            out.push_str(system);
            out.push_str(&tmpl.system_suffix);
        }
    }
    out.push_str(&tmpl.user_prefix);
    out.push_str(&record.user);
    out.push_str(&tmpl.user_suffix);
    out.push_str(&tmpl.assistant_prefix);
    out.push_str(&record.assistant);
    out.push_str(&tmpl.assistant_suffix);
    out
}

fn dummy_record() -> InstructionRecord {
    use crate::corpus::Split;
    use crate::synth::{GeneratorKind, Provenance, RecordKind};
    InstructionRecord {
        id: "marker-probe".into(),
        task: RecordKind::Summary,
        source_segment_id: None,
        system: Some("SYSPROBE".into()),
        user: "USERPROBE".into(),
        assistant: "ASSISTANTPROBE".into(),
        provenance: Provenance {
            generator: GeneratorKind::External,
            model: None,
            derivation: None,
        },
        split: Split::Train,
    }
}

fn find_subsequence(haystack: &[u32], needle: &[u32]) -> Vec<usize> {
    if needle.is_empty() || haystack.len() < needle.len() {
        return Vec::new();
    }
    (0..=haystack.len() - needle.len())
        .filter(|&i| &haystack[i..i + needle.len()] == needle)
        .collect()
}

/// Token ids realizing the response marker under this tokenizer, verified to
/// occur exactly once in the encoding of a dummy record. Fails when the
/// tokenizer merges the marker with surrounding content; the caller must
/// then pick marker text that tokenizes stably.
pub fn find_response_marker_tokens(
    tmpl: &ChatTemplate,
    tok: &dyn Tokenizer,
) -> Result<Vec<u32>, TrainPrepError> {
    let marker_ids = tok.encode(&tmpl.response_marker);
    if marker_ids.is_empty() {
        return Err(TrainPrepError::MarkerNotFound("marker encodes to nothing".into()));
    }
    let rendered = render_chat(&dummy_record(), tmpl);
    let encoded = tok.encode(&rendered);
    let hits = find_subsequence(&encoded, &marker_ids);
    match hits.len() {
        1 => Ok(marker_ids),
        n => Err(TrainPrepError::MarkerNotFound(format!(
            "marker {:?} occurs {n} times in the probe encoding",
            tmpl.response_marker
        ))),
    }
}

/// Half-open token span attributed to a segment or record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanRef {
    pub id: String,
    pub start: usize,
    pub end: usize,
}

/// One model window of concatenated documents, each terminated by EOS.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedSequence {
    pub token_ids: Vec<u32>,
    pub boundaries: Vec<SpanRef>,
}

/// Encode each segment, append EOS, and pack greedily first-fit-in-order
/// into sequences of at most `max_seq_len` tokens. A segment too long for an
/// empty window is hard-split, with EOS only after its final piece. No token
/// is dropped: total packed tokens equal the sum of per-segment encoded
/// length plus one.
pub fn pack_documents(
    segments: &[Segment],
    tok: &dyn Tokenizer,
    max_seq_len: usize,
) -> Result<Vec<PackedSequence>, TrainPrepError> {
    if max_seq_len < 2 {
        return Err(TrainPrepError::BadWindow(max_seq_len));
    }
    let mut sequences: Vec<PackedSequence> = Vec::new();
    for segment in segments {
        let mut ids = tok.encode(&segment.text);
        ids.push(tok.eos_id());
        if ids.len() <= max_seq_len {
            let slot = sequences
                .iter()
                .position(|s| s.token_ids.len() + ids.len() <= max_seq_len);
            let seq = match slot {
                Some(i) => &mut sequences[i],
                None => {
                    sequences.push(PackedSequence {
                        token_ids: Vec::new(),
                        boundaries: Vec::new(),
                    });
                    sequences.last_mut().expect("just pushed")
                }
            };
            let start = seq.token_ids.len();
            seq.token_ids.extend_from_slice(&ids);
            seq.boundaries.push(SpanRef {
                id: segment.id.clone(),
                start,
                end: start + ids.len(),
            });
        } else {
            // hard split across fresh windows; only the last piece ends in EOS
            for chunk in ids.chunks(max_seq_len) {
                sequences.push(PackedSequence {
                    token_ids: chunk.to_vec(),
                    boundaries: vec![SpanRef {
                        id: segment.id.clone(),
                        start: 0,
                        end: chunk.len(),
                    }],
                });
            }
        }
    }
    Ok(sequences)
}

/// One training window with a completion-only loss mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedExample {
    pub token_ids: Vec<u32>,
    pub loss_mask: Vec<bool>,
    pub record_spans: Vec<SpanRef>,
}

struct EncodedRecord {
    id: String,
    ids: Vec<u32>,
    mask: Vec<bool>,
}

/// Render and encode each record, mask true exactly on the tokens after the
/// response marker through the record's final token (assistant content plus
/// its terminal separator), and pack whole records first-fit into windows.
/// Records never cross a window boundary; over-long records lose user tokens
/// from the left, never assistant tokens. Window tails are padded with the
/// pad id, mask false.
pub fn build_masked_batch(
    records: &[InstructionRecord],
    tmpl: &ChatTemplate,
    tok: &dyn Tokenizer,
    max_seq_len: usize,
) -> Result<Vec<MaskedExample>, TrainPrepError> {
    if max_seq_len < 2 {
        return Err(TrainPrepError::BadWindow(max_seq_len));
    }
    let marker = find_response_marker_tokens(tmpl, tok)?;

    let mut encoded = Vec::with_capacity(records.len());
    for record in records {
        let ids = encode_record_within(record, tmpl, tok, max_seq_len)?;
        let hits = find_subsequence(&ids, &marker);
        if hits.len() != 1 {
            return Err(TrainPrepError::MarkerNotFound(format!(
                "record {:?}: marker occurs {} times",
                record.id,
                hits.len()
            )));
        }
        let content_start = hits[0] + marker.len();
        let mut mask = vec![false; ids.len()];
        for slot in mask.iter_mut().skip(content_start) {
            *slot = true;
        }
        encoded.push(EncodedRecord {
            id: record.id.clone(),
            ids,
            mask,
        });
    }

    let mut windows: Vec<MaskedExample> = Vec::new();
    for enc in encoded {
        let slot = windows
            .iter()
            .position(|w| w.token_ids.len() + enc.ids.len() <= max_seq_len);
        let window = match slot {
            Some(i) => &mut windows[i],
            None => {
                windows.push(MaskedExample {
                    token_ids: Vec::new(),
                    loss_mask: Vec::new(),
                    record_spans: Vec::new(),
                });
                windows.last_mut().expect("just pushed")
            }
        };
        let start = window.token_ids.len();
        window.token_ids.extend_from_slice(&enc.ids);
        window.loss_mask.extend_from_slice(&enc.mask);
        window.record_spans.push(SpanRef {
            id: enc.id,
            start,
            end: start + enc.ids.len(),
        });
    }

    for window in &mut windows {
        window.token_ids.resize(max_seq_len, tok.pad_id());
        window.loss_mask.resize(max_seq_len, false);
    }
    Ok(windows)
}

/// Encode one record, truncating user content from the left until the whole
/// rendering fits the window.
fn encode_record_within(
    record: &InstructionRecord,
    tmpl: &ChatTemplate,
    tok: &dyn Tokenizer,
    max_seq_len: usize,
) -> Result<Vec<u32>, TrainPrepError> {
    let ids = tok.encode(&render_chat(record, tmpl));
    if ids.len() <= max_seq_len {
        return Ok(ids);
    }
    let user_ids = tok.encode(&record.user);
    let mut drop = ids.len() - max_seq_len;
    while drop <= user_ids.len() {
        let mut shortened = record.clone();
        shortened.user = tok.decode(&user_ids[drop..]);
        let ids = tok.encode(&render_chat(&shortened, tmpl));
        if ids.len() <= max_seq_len {
            return Ok(ids);
        }
        drop += 1;
    }
    let mut empty_user = record.clone();
    empty_user.user = String::new();
    let minimal = tok.encode(&render_chat(&empty_user, tmpl));
    Err(TrainPrepError::AssistantTooLong {
        record_id: record.id.clone(),
        len: minimal.len(),
        window: max_seq_len,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainStage {
    Cpt,
    Ift,
}

impl std::str::FromStr for TrainStage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cpt" => Ok(TrainStage::Cpt),
            "ift" => Ok(TrainStage::Ift),
            other => Err(format!("unknown stage {other:?}")),
        }
    }
}

/// Which hyper-parameter block to render: the full reference files, or the
/// shorter inline presets (which differ in the IFT weight decay).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigVariant {
    Full,
    Inline,
}

type Params = &'static [(&'static str, &'static str)];

const CPT_FULL: Params = &[
    ("dataset_text_field", "\"content\""),
    ("bf16", "true"),
    ("fp16", "false"),
    ("dataloader_num_workers", "4"),
    ("dataloader_persistent_workers", "true"),
    ("dataloader_pin_memory", "true"),
    ("dataloader_prefetch_factor", "2"),
    ("disable_tqdm", "true"),
    ("eval_strategy", "steps"),
    ("eval_steps", "1"),
    ("eval_accumulation_steps", "1"),
    ("logging_steps", "1"),
    ("logging_strategy", "steps"),
    ("report_to", "tensorboard"),
    ("gradient_accumulation_steps", "64"),
    ("gradient_checkpointing", "true"),
    ("per_device_eval_batch_size", "1"),
    ("per_device_train_batch_size", "2"),
    ("group_by_length", "false"),
    ("learning_rate", "2.0e-05"),
    ("lr_scheduler_type", "cosine"),
    ("log_level", "warning"),
    ("max_grad_norm", "1.0"),
    ("max_steps", "-1"),
    ("num_train_epochs", "3"),
    ("optim", "paged_adamw_32bit"),
    ("push_to_hub", "false"),
    ("save_steps", "0"),
    ("save_strategy", "epoch"),
    ("save_total_limit", "1"),
    ("torch_compile", "false"),
    ("use_liger_kernel", "false"),
    ("warmup_ratio", "0.05"),
    ("weight_decay", "0.1"),
];

const IFT_FULL: Params = &[
    ("bf16", "true"),
    ("dataloader_num_workers", "6"),
    ("dataloader_persistent_workers", "false"),
    ("dataloader_pin_memory", "false"),
    ("dataloader_prefetch_factor", "2"),
    ("disable_tqdm", "true"),
    ("eval_accumulation_steps", "1"),
    ("eval_steps", "10"),
    ("eval_strategy", "steps"),
    ("fp16", "false"),
    ("gradient_accumulation_steps", "16"),
    ("gradient_checkpointing", "true"),
    ("group_by_length", "false"),
    ("learning_rate", "2.0e-06"),
    ("log_level", "warning"),
    ("logging_steps", "10"),
    ("lr_scheduler_type", "cosine"),
    ("max_grad_norm", "1.0"),
    ("max_steps", "-1"),
    ("num_train_epochs", "2"),
    ("optim", "paged_adamw_32bit"),
    ("per_device_eval_batch_size", "4"),
    ("per_device_train_batch_size", "16"),
    ("push_to_hub", "false"),
    ("report_to", "tensorboard"),
    ("save_steps", "0"),
    ("save_strategy", "epoch"),
    ("save_total_limit", "5"),
    ("torch_compile", "false"),
    ("use_liger_kernel", "false"),
    ("warmup_ratio", "0.05"),
    ("weight_decay", "0.1"),
];

const CPT_INLINE: Params = &[
    ("gradient_accumulation_steps", "64"),
    ("gradient_checkpointing", "true"),
    ("group_by_length", "false"),
    ("learning_rate", "2.0e-05"),
    ("lr_scheduler_type", "cosine"),
    ("max_grad_norm", "1.0"),
    ("num_train_epochs", "3"),
    ("optim", "paged_adamw_32bit"),
    ("per_device_train_batch_size", "2"),
    ("warmup_ratio", "0.05"),
    ("weight_decay", "0.1"),
];

const IFT_INLINE: Params = &[
    ("learning_rate", "2.0e-06"),
    ("lr_scheduler_type", "cosine"),
    ("num_train_epochs", "2"),
    ("optim", "paged_adamw_32bit"),
    ("per_device_train_batch_size", "16"),
    ("warmup_ratio", "0.05"),
    ("weight_decay", "0.01"),
];

/// The ZeRO stage-3 offload configuration emitted alongside the parameter
/// files.
pub const DEEPSPEED_OFFLOAD_CONFIG: &str = r#"{
    "fp16": {
      "enabled": "auto",
      "loss_scale": 0,
      "loss_scale_window": 1000,
      "initial_scale_power": 16,
      "hysteresis": 2,
      "min_loss_scale": 1
    },
    "bf16": {
      "enabled": "auto"
    },
    "zero_optimization": {
    "stage": 3,
    "offload_optimizer": {
        "device": "cpu",
        "pin_memory": true
    },
    "offload_param": {
        "device": "cpu",
        "pin_memory": true
    },
    "overlap_comm": true,
    "contiguous_gradients": true,
    "sub_group_size": 1e9,
    "reduce_bucket_size": "auto",
    "stage3_prefetch_bucket_size": "auto",
    "stage3_param_persistence_threshold": "auto",
    "stage3_max_live_parameters": 1e9,
    "stage3_max_reuse_distance": 1e9,
    "stage3_gather_16bit_weights_on_model_save": true
  },
  "gradient_accumulation_steps": "auto",
  "gradient_clipping": "auto",
  "steps_per_print": 2000,
  "train_batch_size": "auto",
  "train_micro_batch_size_per_gpu": "auto",
  "wall_clock_breakdown": false
}
"#;

/// Render the key/value parameter file for a stage, overrides applied
/// key-wise. Override keys must belong to the stage's known parameter set.
pub fn emit_training_config(
    stage: TrainStage,
    overrides: &BTreeMap<String, String>,
) -> Result<String, TrainPrepError> {
    emit_training_config_variant(stage, ConfigVariant::Full, overrides)
}

pub fn emit_training_config_variant(
    stage: TrainStage,
    variant: ConfigVariant,
    overrides: &BTreeMap<String, String>,
) -> Result<String, TrainPrepError> {
    let params: Params = match (stage, variant) {
        (TrainStage::Cpt, ConfigVariant::Full) => CPT_FULL,
        (TrainStage::Ift, ConfigVariant::Full) => IFT_FULL,
        (TrainStage::Cpt, ConfigVariant::Inline) => CPT_INLINE,
        (TrainStage::Ift, ConfigVariant::Inline) => IFT_INLINE,
    };
    for key in overrides.keys() {
        if !params.iter().any(|(k, _)| k == key) {
            return Err(TrainPrepError::UnknownParameter(key.clone()));
        }
    }
    let mut out = String::new();
    for (key, default) in params {
        let value = overrides.get(*key).map(String::as_str).unwrap_or(default);
        out.push_str(key);
        out.push_str(": ");
        out.push_str(value);
        out.push('\n');
    }
    Ok(out)
}

/// Binary sidecar for bulk export: one JSON header line describing the
/// sequences, then the token ids as little-endian u32 words.
pub fn write_packed_binary(path: &Path, sequences: &[PackedSequence]) -> Result<(), TrainPrepError> {
    #[derive(Serialize)]
    struct Header<'a> {
        format: &'static str,
        sequences: Vec<HeaderSeq<'a>>,
    }
    #[derive(Serialize)]
    struct HeaderSeq<'a> {
        len: usize,
        spans: &'a [SpanRef],
    }
    let header = Header {
        format: "packed-u32-le",
        sequences: sequences
            .iter()
            .map(|s| HeaderSeq {
                len: s.token_ids.len(),
                spans: &s.boundaries,
            })
            .collect(),
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut out, &header).map_err(|e| TrainPrepError::BadSidecar(e.to_string()))?;
    out.write_all(b"\n")?;
    for seq in sequences {
        for id in &seq.token_ids {
            out.write_all(&id.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_packed_binary(path: &Path) -> Result<Vec<PackedSequence>, TrainPrepError> {
    #[derive(Deserialize)]
    struct Header {
        format: String,
        sequences: Vec<HeaderSeq>,
    }
    #[derive(Deserialize)]
    struct HeaderSeq {
        len: usize,
        spans: Vec<SpanRef>,
    }
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut header_line = String::new();
    std::io::BufRead::read_line(&mut file, &mut header_line)?;
    let header: Header = serde_json::from_str(&header_line)
        .map_err(|e| TrainPrepError::BadSidecar(e.to_string()))?;
    if header.format != "packed-u32-le" {
        return Err(TrainPrepError::BadSidecar(format!(
            "unexpected format {:?}",
            header.format
        )));
    }
    let mut sequences = Vec::with_capacity(header.sequences.len());
    for seq in header.sequences {
        let mut buf = vec![0u8; seq.len * 4];
        file.read_exact(&mut buf)?;
        let token_ids = buf
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        sequences.push(PackedSequence {
            token_ids,
            boundaries: seq.spans,
        });
    }
    Ok(sequences)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;
    use crate::synth::{GeneratorKind, Provenance, RecordKind};
    use crate::tokenize::WhitespaceTokenizer;

    fn record(id: &str, system: Option<&str>, user: &str, assistant: &str) -> InstructionRecord {
        InstructionRecord {
            id: id.to_string(),
            task: RecordKind::Summary,
            source_segment_id: None,
            system: system.map(str::to_string),
            user: user.to_string(),
            assistant: assistant.to_string(),
            provenance: Provenance {
                generator: GeneratorKind::Llm,
                model: None,
                derivation: None,
            },
            split: Split::Train,
        }
    }

    fn segment(id: &str, text: &str) -> Segment {
        Segment {
            id: id.to_string(),
            doc_id: format!("{id}-doc"),
            index_in_doc: 0,
            text: text.to_string(),
            char_count: text.chars().count(),
            token_count: 0,
            split: Split::Train,
            collection: "c1".into(),
        }
    }

    fn words(n: usize, tag: &str) -> String {
        (0..n).map(|i| format!("{tag}{i}")).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn default_template_renders_exactly() {
        let r = record("r", Some("S"), "U", "A");
        assert_eq!(
            render_chat(&r, &ChatTemplate::default()),
            "<|system|>S<|end|><|user|>U<|end|><|assistant|>A<|end|>"
        );
    }

    #[test]
    fn empty_system_block_is_omitted() {
        let r = record("r", None, "U", "A");
        assert_eq!(
            render_chat(&r, &ChatTemplate::default()),
            "<|user|>U<|end|><|assistant|>A<|end|>"
        );
        let r = record("r", Some(""), "U", "A");
        assert!(render_chat(&r, &ChatTemplate::default()).starts_with("<|user|>"));
    }

    #[test]
    fn render_is_injective_on_differing_records() {
        let tmpl = ChatTemplate::default();
        let a = render_chat(&record("r", Some("S"), "U", "A"), &tmpl);
        let b = render_chat(&record("r", Some("S"), "U", "B"), &tmpl);
        let c = render_chat(&record("r", Some("S"), "V", "A"), &tmpl);
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn marker_is_a_single_whitespace_token() {
        let tok = WhitespaceTokenizer::new();
        let tmpl = ChatTemplate::spaced();
        let marker = find_response_marker_tokens(&tmpl, &tok).unwrap();
        assert_eq!(marker.len(), 1);
        assert!(tok.decode(&marker).contains("<|assistant|>"));
    }

    #[test]
    fn ambiguous_marker_is_rejected() {
        let tok = WhitespaceTokenizer::new();
        let mut tmpl = ChatTemplate::spaced();
        // user suffix now contains the marker too, so the probe sees it twice
        tmpl.user_suffix = " <|assistant|> ".into();
        assert!(matches!(
            find_response_marker_tokens(&tmpl, &tok),
            Err(TrainPrepError::MarkerNotFound(_))
        ));
    }

    #[test]
    fn packing_two_short_documents_shares_a_window() {
        let tok = WhitespaceTokenizer::new();
        let segs = vec![segment("a", &words(10, "a")), segment("b", &words(20, "b"))];
        let packed = pack_documents(&segs, &tok, 64).unwrap();
        assert_eq!(packed.len(), 1);
        assert_eq!(packed[0].token_ids.len(), 32);
        assert_eq!(packed[0].boundaries.len(), 2);
        for span in &packed[0].boundaries {
            assert_eq!(packed[0].token_ids[span.end - 1], tok.eos_id());
        }
    }

    #[test]
    fn oversized_document_hard_splits_with_final_eos() {
        let tok = WhitespaceTokenizer::new();
        let segs = vec![segment("big", &words(10, "w"))];
        let packed = pack_documents(&segs, &tok, 8).unwrap();
        assert_eq!(packed.len(), 2);
        assert_eq!(packed[0].token_ids.len(), 8);
        assert_eq!(packed[1].token_ids.len(), 3);
        assert_eq!(*packed[1].token_ids.last().unwrap(), tok.eos_id());
        assert!(!packed[0].token_ids.contains(&tok.eos_id()));
    }

    #[test]
    fn packing_conserves_tokens() {
        let tok = WhitespaceTokenizer::new();
        let segs: Vec<Segment> = (0..17)
            .map(|i| segment(&format!("s{i}"), &words(3 + i * 2, &format!("t{i}x"))))
            .collect();
        let expected: usize = segs.iter().map(|s| tok.count(&s.text) + 1).sum();
        let packed = pack_documents(&segs, &tok, 16).unwrap();
        let total: usize = packed.iter().map(|p| p.token_ids.len()).sum();
        assert_eq!(total, expected);
        for p in &packed {
            assert!(p.token_ids.len() <= 16);
        }
    }

    #[test]
    fn window_too_small_is_rejected() {
        let tok = WhitespaceTokenizer::new();
        assert!(matches!(
            pack_documents(&[], &tok, 1),
            Err(TrainPrepError::BadWindow(1))
        ));
    }

    #[test]
    fn mask_covers_assistant_and_terminal_separator() {
        let tok = WhitespaceTokenizer::new();
        let tmpl = ChatTemplate::spaced();
        let r = record("r", Some("sys"), "question un", "rep1 rep2 rep3 rep4 rep5");
        let batch = build_masked_batch(&[r.clone()], &tmpl, &tok, 64).unwrap();
        assert_eq!(batch.len(), 1);
        let window = &batch[0];
        let masked: Vec<u32> = window
            .token_ids
            .iter()
            .zip(&window.loss_mask)
            .filter(|(_, m)| **m)
            .map(|(t, _)| *t)
            .collect();
        // 5 assistant tokens + the terminal separator
        assert_eq!(masked.len(), 6);
        let decoded = tok.decode(&masked);
        assert_eq!(decoded, "rep1 rep2 rep3 rep4 rep5 <|end|>");
    }

    #[test]
    fn packed_records_never_cross_windows() {
        let tok = WhitespaceTokenizer::new();
        let tmpl = ChatTemplate::spaced();
        let records: Vec<InstructionRecord> = (0..12)
            .map(|i| {
                record(
                    &format!("r{i}"),
                    None,
                    &words(4 + i % 5, &format!("q{i}x")),
                    &words(3, &format!("a{i}x")),
                )
            })
            .collect();
        let batch = build_masked_batch(&records, &tmpl, &tok, 32).unwrap();
        let mut seen = 0;
        for window in &batch {
            assert_eq!(window.token_ids.len(), 32);
            for span in &window.record_spans {
                assert!(span.end <= 32);
                seen += 1;
            }
            // mask-true equals the union of assistant spans, so padding is false
            let pad_start = window.record_spans.last().unwrap().end;
            assert!(window.loss_mask[pad_start..].iter().all(|m| !m));
        }
        assert_eq!(seen, records.len());
    }

    #[test]
    fn mask_true_count_adds_up_when_packed() {
        let tok = WhitespaceTokenizer::new();
        let tmpl = ChatTemplate::spaced();
        let a = record("a", None, "q", "x1 x2");
        let b = record("b", None, "q", "y1 y2 y3");
        let batch = build_masked_batch(&[a, b], &tmpl, &tok, 64).unwrap();
        let total_true: usize = batch
            .iter()
            .map(|w| w.loss_mask.iter().filter(|m| **m).count())
            .sum();
        // (2 + separator) + (3 + separator)
        assert_eq!(total_true, 7);
    }

    #[test]
    fn long_user_is_truncated_from_the_left() {
        let tok = WhitespaceTokenizer::new();
        let tmpl = ChatTemplate::spaced();
        let r = record("r", None, &words(100, "u"), "fin");
        let batch = build_masked_batch(&[r], &tmpl, &tok, 24).unwrap();
        let window = &batch[0];
        let span = &window.record_spans[0];
        assert!(span.end <= 24);
        let text = tok.decode(&window.token_ids[span.start..span.end]);
        // late user words survive, early ones are gone, the answer is intact
        assert!(text.contains("u99"));
        assert!(!text.contains("u0 "));
        assert!(text.contains("fin"));
    }

    #[test]
    fn assistant_alone_too_long_is_an_error() {
        let tok = WhitespaceTokenizer::new();
        let tmpl = ChatTemplate::spaced();
        let r = record("r", None, "q", &words(50, "a"));
        assert!(matches!(
            build_masked_batch(&[r], &tmpl, &tok, 16),
            Err(TrainPrepError::AssistantTooLong { .. })
        ));
    }

    #[test]
    fn cpt_config_has_reference_values() {
        let text = emit_training_config(TrainStage::Cpt, &BTreeMap::new()).unwrap();
        assert!(text.contains("learning_rate: 2.0e-05"));
        assert!(text.contains("num_train_epochs: 3"));
        assert!(text.contains("gradient_accumulation_steps: 64"));
        assert!(text.contains("weight_decay: 0.1"));
    }

    #[test]
    fn ift_config_has_reference_values() {
        let text = emit_training_config(TrainStage::Ift, &BTreeMap::new()).unwrap();
        assert!(text.contains("learning_rate: 2.0e-06"));
        assert!(text.contains("num_train_epochs: 2"));
        assert!(text.contains("per_device_train_batch_size: 16"));
    }

    #[test]
    fn overrides_replace_only_their_key() {
        let mut overrides = BTreeMap::new();
        overrides.insert("learning_rate".to_string(), "1.0e-05".to_string());
        let text = emit_training_config(TrainStage::Cpt, &overrides).unwrap();
        assert!(text.contains("learning_rate: 1.0e-05"));
        assert!(text.contains("num_train_epochs: 3"));
        assert!(matches!(
            emit_training_config(
                TrainStage::Cpt,
                &BTreeMap::from([("nope".to_string(), "1".to_string())])
            ),
            Err(TrainPrepError::UnknownParameter(_))
        ));
    }

    #[test]
    fn inline_ift_variant_has_the_lighter_weight_decay() {
        let text =
            emit_training_config_variant(TrainStage::Ift, ConfigVariant::Inline, &BTreeMap::new())
                .unwrap();
        assert!(text.contains("weight_decay: 0.01"));
        assert_eq!(text.lines().count(), 7);
    }

    #[test]
    fn deepspeed_config_is_valid_json_with_stage_3() {
        let parsed: serde_json::Value = serde_json::from_str(DEEPSPEED_OFFLOAD_CONFIG).unwrap();
        assert_eq!(parsed["zero_optimization"]["stage"], 3);
    }

    #[test]
    fn binary_sidecar_roundtrip() {
        let tok = WhitespaceTokenizer::new();
        let segs = vec![segment("a", &words(5, "a")), segment("b", &words(9, "b"))];
        let packed = pack_documents(&segs, &tok, 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("packed.bin");
        write_packed_binary(&path, &packed).unwrap();
        let back = read_packed_binary(&path).unwrap();
        assert_eq!(back, packed);
    }
}
