//! Document ingestion, segmentation, filtering, split assignment and corpus
//! statistics.
//!
//! Ingestion accepts pre-extracted text only (plain text, markdown, or
//! page-delimited text with form-feed separators); PDF and OCR extraction
//! happen upstream of this crate.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::RegexBuilder;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::seeding::derive_seed;
use crate::tokenize::Tokenizer;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("document is not valid UTF-8")]
    InvalidEncoding,
    #[error("document has no non-whitespace content")]
    EmptyDocument,
    #[error("invalid header pattern: {0}")]
    PatternError(#[from] regex::Error),
    #[error("invalid segmentation policy: {0}")]
    BadPolicy(String),
    #[error("split ratios must be non-negative and sum to 1: {0:?}")]
    BadRatios((f64, f64, f64)),
    #[error("segment references unknown document {0}")]
    UnknownDocument(String),
}

/// Page delimiter for pre-extracted paged text (`.pages.txt` files).
pub const PAGE_DELIMITER: char = '\u{000C}';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocFormat {
    Markdown,
    PlainText,
    PagedText,
}

/// A source document. `content` holds one entry per page for paged text and a
/// single entry otherwise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub collection: String,
    pub format: DocFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub content: Vec<String>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Unassigned,
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Segment {
    pub id: String,
    pub doc_id: String,
    #[serde(rename = "index")]
    pub index_in_doc: usize,
    pub text: String,
    pub char_count: usize,
    pub token_count: usize,
    pub split: Split,
    pub collection: String,
}

/// Per-format segmentation rules: paged text splits per page; markdown and
/// plain text split into greedy blocks of at most `max_tokens` tokens, cut at
/// the last section heading (markdown) or line break (plain text) that keeps
/// the block within budget. Segments shorter than `min_chars` characters are
/// discarded by [`filter_segments`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentationPolicy {
    pub max_tokens: usize,
    pub min_chars: usize,
}

impl Default for SegmentationPolicy {
    fn default() -> Self {
        SegmentationPolicy {
            max_tokens: 8192,
            min_chars: 350,
        }
    }
}

impl SegmentationPolicy {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.max_tokens < 1 {
            return Err(CorpusError::BadPolicy("max_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

/// Ingest one pre-extracted document. The id is deterministic: the collection
/// tag plus a digest of the raw bytes, so the same bytes always ingest to the
/// same id. Paged text is split on form-feed characters.
pub fn ingest_document(
    raw: &[u8],
    format: DocFormat,
    collection: &str,
    metadata: BTreeMap<String, String>,
) -> Result<Document, CorpusError> {
    let text = std::str::from_utf8(raw).map_err(|_| CorpusError::InvalidEncoding)?;
    if text.trim().is_empty() {
        return Err(CorpusError::EmptyDocument);
    }
    let digest = Sha256::digest(raw);
    let id = format!("{}-{}", collection, hex::encode(&digest[..8]));
    let content = match format {
        DocFormat::PagedText => text.split(PAGE_DELIMITER).map(str::to_string).collect(),
        DocFormat::Markdown | DocFormat::PlainText => vec![text.to_string()],
    };
    let title = metadata.get("title").cloned();
    Ok(Document {
        id,
        collection: collection.to_string(),
        format,
        title,
        content,
        metadata,
    })
}

/// Remove every match of every pattern, applied in list order. Patterns are
/// compiled with multiline anchoring so `^`/`$` match at line boundaries.
pub fn strip_headers(text: &str, patterns: &[String]) -> Result<String, CorpusError> {
    let mut out = text.to_string();
    for pat in patterns {
        let re = RegexBuilder::new(pat).multi_line(true).build()?;
        out = re.replace_all(&out, "").into_owned();
    }
    Ok(out)
}

/// Candidate cut positions (byte offsets into `text`, exclusive of 0 and len).
/// Plain text cuts after each newline; markdown cuts at the start of each
/// heading line, so a heading opens the block that follows it.
fn boundary_positions(text: &str, format: DocFormat) -> Vec<usize> {
    let mut cuts = Vec::new();
    match format {
        DocFormat::PlainText => {
            for (i, b) in text.bytes().enumerate() {
                if b == b'\n' && i + 1 < text.len() {
                    cuts.push(i + 1);
                }
            }
        }
        DocFormat::Markdown => {
            let mut offset = 0;
            for line in text.split_inclusive('\n') {
                if offset > 0 && line.starts_with('#') {
                    cuts.push(offset);
                }
                offset += line.len();
            }
        }
        DocFormat::PagedText => {}
    }
    cuts
}

/// Byte offset covering exactly the first `max_tokens` tokens of `text`.
fn hard_cut_position(text: &str, max_tokens: usize) -> usize {
    let mut seen = 0;
    let mut word_start: Option<usize> = None;
    let mut last_end = text.len();
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if word_start.take().is_some() {
                seen += 1;
                last_end = i;
                if seen == max_tokens {
                    return last_end;
                }
            }
            if c == '\n' {
                seen += 1;
                last_end = i + 1;
                if seen == max_tokens {
                    return last_end;
                }
            }
        } else if word_start.is_none() {
            word_start = Some(i);
        }
    }
    last_end
}

/// Split a document into segments under the policy. Paged documents yield one
/// segment per page. Block formats are cut greedily left to right: each block
/// ends at the last permissible boundary that keeps its token count within
/// `max_tokens`; a window with no usable boundary is hard-cut at exactly
/// `max_tokens` tokens. Concatenating the segment texts reproduces the source
/// exactly.
pub fn segment_document(
    doc: &Document,
    policy: &SegmentationPolicy,
    tok: &dyn Tokenizer,
) -> Result<Vec<Segment>, CorpusError> {
    policy.validate()?;
    let texts: Vec<String> = match doc.format {
        DocFormat::PagedText => doc.content.clone(),
        DocFormat::Markdown | DocFormat::PlainText => {
            let text = doc.content.join("");
            greedy_blocks(&text, doc.format, policy, tok)
        }
    };
    Ok(texts
        .into_iter()
        .enumerate()
        .map(|(i, text)| {
            let char_count = text.chars().count();
            let token_count = tok.count(&text);
            Segment {
                id: format!("{}-s{:04}", doc.id, i),
                doc_id: doc.id.clone(),
                index_in_doc: i,
                text,
                char_count,
                token_count,
                split: Split::Unassigned,
                collection: doc.collection.clone(),
            }
        })
        .collect())
}

fn greedy_blocks(
    text: &str,
    format: DocFormat,
    policy: &SegmentationPolicy,
    tok: &dyn Tokenizer,
) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut start = 0;
    while start < text.len() {
        let rest = &text[start..];
        if tok.count(rest) <= policy.max_tokens {
            blocks.push(rest.to_string());
            break;
        }
        let cuts = boundary_positions(rest, format);
        // Token counts are monotone in the prefix length, so binary-search the
        // largest boundary still within budget.
        let feasible = cuts.partition_point(|&p| tok.count(&rest[..p]) <= policy.max_tokens);
        let cut = if feasible > 0 {
            cuts[feasible - 1]
        } else {
            hard_cut_position(rest, policy.max_tokens)
        };
        debug_assert!(cut > 0 && cut < rest.len());
        blocks.push(rest[..cut].to_string());
        start += cut;
    }
    blocks
}

/// Partition segments into (kept, discarded) by the minimum character count.
/// The boundary is inclusive: a segment of exactly `min_chars` characters is
/// kept.
pub fn filter_segments(segments: Vec<Segment>, min_chars: usize) -> (Vec<Segment>, Vec<Segment>) {
    segments
        .into_iter()
        .partition(|s| s.char_count >= min_chars)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// The split of the reference corpus: segments of one document may land in
    /// different partitions.
    Segment,
    /// Optional stricter mode: all segments of a document share one partition.
    Document,
}

/// Assign train/validation/test splits. The assignment is a pure function of
/// the segment id set, the ratios and the seed: ids are sorted, shuffled with
/// a seeded RNG and sliced. Each collection is partitioned independently, so
/// per-collection counts deviate from the exact ratios by at most one element.
pub fn split_corpus(
    segments: Vec<Segment>,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<Vec<Segment>, CorpusError> {
    split_corpus_mode(segments, ratios, seed, SplitMode::Segment)
}

/// [`split_corpus`] with an explicit granularity mode.
pub fn split_corpus_mode(
    mut segments: Vec<Segment>,
    ratios: (f64, f64, f64),
    seed: u64,
    mode: SplitMode,
) -> Result<Vec<Segment>, CorpusError> {
    let (rt, rv, rs) = ratios;
    if rt < 0.0 || rv < 0.0 || rs < 0.0 || (rt + rv + rs - 1.0).abs() > 1e-9 {
        return Err(CorpusError::BadRatios(ratios));
    }

    let mut collections: BTreeSet<String> = BTreeSet::new();
    for seg in &segments {
        collections.insert(seg.collection.clone());
    }

    for collection in collections {
        let keys: BTreeSet<String> = segments
            .iter()
            .filter(|s| s.collection == collection)
            .map(|s| match mode {
                SplitMode::Segment => s.id.clone(),
                SplitMode::Document => s.doc_id.clone(),
            })
            .collect();
        let mut keys: Vec<String> = keys.into_iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &collection));
        keys.shuffle(&mut rng);

        let n = keys.len();
        let n_train = ((rt * n as f64).round() as usize).min(n);
        let n_val = ((rv * n as f64).round() as usize).min(n - n_train);
        let mut assignment: BTreeMap<String, Split> = BTreeMap::new();
        for (i, key) in keys.into_iter().enumerate() {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Validation
            } else {
                Split::Test
            };
            assignment.insert(key, split);
        }
        for seg in segments.iter_mut().filter(|s| s.collection == collection) {
            let key = match mode {
                SplitMode::Segment => &seg.id,
                SplitMode::Document => &seg.doc_id,
            };
            seg.split = assignment[key];
        }
    }
    Ok(segments)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CollectionStats {
    pub n_segments: usize,
    pub n_discarded: usize,
    /// Discarded share of all produced segments, in percent.
    pub discard_pct: f64,
    pub mean_tokens_per_segment: f64,
    pub segments_per_document: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CorpusTotals {
    pub n_segments: usize,
    pub n_words: usize,
    pub n_tokens: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CorpusStats {
    pub per_collection: BTreeMap<String, CollectionStats>,
    pub totals: CorpusTotals,
}

/// Aggregate per-collection and corpus-level statistics over kept and
/// discarded segments. `discard_pct = discarded / (kept + discarded)`;
/// segments-per-document divides kept segments by the number of distinct
/// documents that still have at least one kept segment.
pub fn corpus_stats(
    docs: &[Document],
    kept: &[Segment],
    discarded: &[Segment],
    _tok: &dyn Tokenizer,
) -> Result<CorpusStats, CorpusError> {
    let known: BTreeSet<&str> = docs.iter().map(|d| d.id.as_str()).collect();
    for seg in kept.iter().chain(discarded) {
        if !known.contains(seg.doc_id.as_str()) {
            return Err(CorpusError::UnknownDocument(seg.doc_id.clone()));
        }
    }

    let mut per_collection: BTreeMap<String, CollectionStats> = BTreeMap::new();
    let mut token_sums: BTreeMap<String, usize> = BTreeMap::new();
    let mut docs_with_kept: BTreeMap<String, BTreeSet<&str>> = BTreeMap::new();

    for seg in kept {
        let entry = per_collection.entry(seg.collection.clone()).or_default();
        entry.n_segments += 1;
        *token_sums.entry(seg.collection.clone()).or_default() += seg.token_count;
        docs_with_kept
            .entry(seg.collection.clone())
            .or_default()
            .insert(seg.doc_id.as_str());
    }
    for seg in discarded {
        per_collection
            .entry(seg.collection.clone())
            .or_default()
            .n_discarded += 1;
    }

    for (collection, stats) in per_collection.iter_mut() {
        let produced = stats.n_segments + stats.n_discarded;
        stats.discard_pct = if produced == 0 {
            0.0
        } else {
            stats.n_discarded as f64 / produced as f64 * 100.0
        };
        stats.mean_tokens_per_segment = if stats.n_segments == 0 {
            0.0
        } else {
            token_sums.get(collection).copied().unwrap_or(0) as f64 / stats.n_segments as f64
        };
        let n_docs = docs_with_kept.get(collection).map_or(0, BTreeSet::len);
        stats.segments_per_document = if n_docs == 0 {
            0.0
        } else {
            stats.n_segments as f64 / n_docs as f64
        };
    }

    let totals = CorpusTotals {
        n_segments: kept.len(),
        n_words: kept.iter().map(|s| s.text.split_whitespace().count()).sum(),
        n_tokens: kept.iter().map(|s| s.token_count).sum(),
    };
    Ok(CorpusStats {
        per_collection,
        totals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenize::WhitespaceTokenizer;

    fn doc(format: DocFormat, text: &str) -> Document {
        ingest_document(text.as_bytes(), format, "c1", BTreeMap::new()).unwrap()
    }

    #[test]
    fn ingest_minimal_document() {
        let d = doc(DocFormat::PlainText, "abc");
        assert_eq!(d.content, vec!["abc".to_string()]);
        assert!(!d.id.is_empty());
    }

    #[test]
    fn ingest_splits_pages_on_form_feed() {
        let d = doc(DocFormat::PagedText, "p1\u{000C}p2");
        assert_eq!(d.content, vec!["p1".to_string(), "p2".to_string()]);
    }

    #[test]
    fn ingest_is_deterministic() {
        let a = doc(DocFormat::PlainText, "same bytes");
        let b = doc(DocFormat::PlainText, "same bytes");
        assert_eq!(a.id, b.id);
    }

    #[test]
    fn ingest_rejects_empty_and_non_utf8() {
        assert!(matches!(
            ingest_document(b"  \n ", DocFormat::PlainText, "c", BTreeMap::new()),
            Err(CorpusError::EmptyDocument)
        ));
        assert!(matches!(
            ingest_document(&[0xff, 0xfe], DocFormat::PlainText, "c", BTreeMap::new()),
            Err(CorpusError::InvalidEncoding)
        ));
    }

    #[test]
    fn strip_headers_removes_matches_in_order() {
        let out = strip_headers("MENU\nBody", &["^MENU\n".to_string()]).unwrap();
        assert_eq!(out, "Body");
        let out = strip_headers("Body", &["^MENU\n".to_string()]).unwrap();
        assert_eq!(out, "Body");
    }

    #[test]
    fn strip_headers_multiline_anchor() {
        // Frozen against Python: re.sub(r'^A\n', '', "A\nA\nBody", flags=re.M) == "Body"
        let out = strip_headers("A\nA\nBody", &["^A\n".to_string()]).unwrap();
        assert_eq!(out, "Body");
    }

    #[test]
    fn strip_headers_reports_bad_pattern() {
        assert!(matches!(
            strip_headers("x", &["(".to_string()]),
            Err(CorpusError::PatternError(_))
        ));
    }

    #[test]
    fn paged_document_segments_per_page() {
        let tok = WhitespaceTokenizer::new();
        let d = doc(DocFormat::PagedText, "x\u{000C}y");
        let segs = segment_document(&d, &SegmentationPolicy::default(), &tok).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].text, "x");
        assert_eq!(segs[1].text, "y");
        assert_eq!(segs[0].index_in_doc, 0);
        assert_eq!(segs[1].index_in_doc, 1);
    }

    #[test]
    fn under_budget_text_is_one_segment() {
        let tok = WhitespaceTokenizer::new();
        let d = doc(DocFormat::PlainText, "dix mots pas plus que ca ici la fin ok");
        let segs = segment_document(&d, &SegmentationPolicy::default(), &tok).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].text, d.content[0]);
    }

    #[test]
    fn plain_text_cuts_at_line_breaks() {
        let tok = WhitespaceTokenizer::new();
        let d = doc(DocFormat::PlainText, "L1\nL2\nL3");
        let policy = SegmentationPolicy {
            max_tokens: 2,
            min_chars: 0,
        };
        let segs = segment_document(&d, &policy, &tok).unwrap();
        let texts: Vec<&str> = segs.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(texts, vec!["L1\n", "L2\n", "L3"]);
    }

    #[test]
    fn markdown_cuts_before_headings() {
        let tok = WhitespaceTokenizer::new();
        let d = doc(
            DocFormat::Markdown,
            "# T1\na b c\n# T2\nd e f\n# T3\ng h i",
        );
        let policy = SegmentationPolicy {
            max_tokens: 8,
            min_chars: 0,
        };
        let segs = segment_document(&d, &policy, &tok).unwrap();
        let texts: Vec<&str> = segs.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(texts, vec!["# T1\na b c\n", "# T2\nd e f\n", "# T3\ng h i"]);
        let joined: String = texts.concat();
        assert_eq!(joined, d.content[0]);
    }

    #[test]
    fn hard_cut_when_no_boundary() {
        let tok = WhitespaceTokenizer::new();
        let d = doc(DocFormat::PlainText, "a b c d e f g");
        let policy = SegmentationPolicy {
            max_tokens: 3,
            min_chars: 0,
        };
        let segs = segment_document(&d, &policy, &tok).unwrap();
        for s in &segs {
            assert!(s.token_count <= 3);
        }
        let joined: String = segs.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(joined, d.content[0]);
    }

    #[test]
    fn filter_boundary_is_inclusive() {
        let tok = WhitespaceTokenizer::new();
        let short = doc(DocFormat::PlainText, &"x".repeat(349));
        let exact = doc(DocFormat::PlainText, &"y".repeat(350));
        let mut segs = segment_document(&short, &SegmentationPolicy::default(), &tok).unwrap();
        segs.extend(segment_document(&exact, &SegmentationPolicy::default(), &tok).unwrap());
        let (kept, discarded) = filter_segments(segs, 350);
        assert_eq!(kept.len(), 1);
        assert_eq!(discarded.len(), 1);
        assert_eq!(kept[0].char_count, 350);
        assert_eq!(discarded[0].char_count, 349);
    }

    #[test]
    fn filter_zero_keeps_everything() {
        let tok = WhitespaceTokenizer::new();
        let d = doc(DocFormat::PlainText, "court");
        let segs = segment_document(&d, &SegmentationPolicy::default(), &tok).unwrap();
        let (kept, discarded) = filter_segments(segs, 0);
        assert_eq!(kept.len(), 1);
        assert!(discarded.is_empty());
    }

    fn synthetic_segments(n: usize, collection: &str) -> Vec<Segment> {
        (0..n)
            .map(|i| Segment {
                id: format!("{collection}-doc-s{i:05}"),
                doc_id: format!("{collection}-doc"),
                index_in_doc: i,
                text: "t".into(),
                char_count: 1,
                token_count: 1,
                split: Split::Unassigned,
                collection: collection.to_string(),
            })
            .collect()
    }

    #[test]
    fn split_sizes_exact_for_ten() {
        let segs = split_corpus(synthetic_segments(10, "c1"), (0.8, 0.1, 0.1), 42).unwrap();
        let count = |s: Split| segs.iter().filter(|x| x.split == s).count();
        assert_eq!(count(Split::Train), 8);
        assert_eq!(count(Split::Validation), 1);
        assert_eq!(count(Split::Test), 1);
    }

    #[test]
    fn split_is_deterministic() {
        let a = split_corpus(synthetic_segments(100, "c1"), (0.8, 0.1, 0.1), 7).unwrap();
        let b = split_corpus(synthetic_segments(100, "c1"), (0.8, 0.1, 0.1), 7).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.split, y.split);
        }
    }

    #[test]
    fn split_rejects_bad_ratios() {
        assert!(matches!(
            split_corpus(synthetic_segments(4, "c1"), (0.5, 0.1, 0.1), 1),
            Err(CorpusError::BadRatios(_))
        ));
    }

    #[test]
    fn document_mode_keeps_documents_together() {
        let mut segs = Vec::new();
        for d in 0..20 {
            for i in 0..5 {
                segs.push(Segment {
                    id: format!("c1-d{d}-s{i}"),
                    doc_id: format!("c1-d{d}"),
                    index_in_doc: i,
                    text: "t".into(),
                    char_count: 1,
                    token_count: 1,
                    split: Split::Unassigned,
                    collection: "c1".into(),
                });
            }
        }
        let segs = split_corpus_mode(segs, (0.8, 0.1, 0.1), 3, SplitMode::Document).unwrap();
        let mut per_doc: BTreeMap<&str, BTreeSet<Split>> = BTreeMap::new();
        for s in &segs {
            per_doc.entry(&s.doc_id).or_default().insert(s.split);
        }
        assert!(per_doc.values().all(|splits| splits.len() == 1));
    }

    /// Brute-force oracle: enumerate every boundary-subset split whose blocks
    /// all fit the budget and keep the ones where each successive block is
    /// maximal. The greedy cutter must produce exactly that split.
    fn greedy_feasible_splits(
        text: &str,
        max_tokens: usize,
        tok: &dyn crate::tokenize::Tokenizer,
    ) -> Vec<Vec<String>> {
        let mut cuts = boundary_positions(text, DocFormat::PlainText);
        cuts.push(text.len());
        fn explore(
            text: &str,
            start: usize,
            cuts: &[usize],
            max_tokens: usize,
            tok: &dyn crate::tokenize::Tokenizer,
            acc: &mut Vec<String>,
            out: &mut Vec<Vec<String>>,
        ) {
            if start == text.len() {
                out.push(acc.clone());
                return;
            }
            // maximal feasible next cut only: this enumerates exactly the
            // greedy-feasible splits
            let next = cuts
                .iter()
                .copied()
                .filter(|&c| c > start && tok.count(&text[start..c]) <= max_tokens)
                .max();
            if let Some(cut) = next {
                acc.push(text[start..cut].to_string());
                explore(text, cut, cuts, max_tokens, tok, acc, out);
                acc.pop();
            }
        }
        let mut out = Vec::new();
        explore(text, 0, &cuts, max_tokens, tok, &mut Vec::new(), &mut out);
        out
    }

    #[test]
    fn greedy_cutter_matches_brute_force_oracle() {
        use rand::Rng;
        use rand::SeedableRng;
        let tok = WhitespaceTokenizer::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1234);
        for case in 0..200 {
            let lines = rng.random_range(1..=8);
            let text = (0..lines)
                .map(|l| {
                    let words = rng.random_range(1..=3);
                    (0..words)
                        .map(|w| format!("c{case}l{l}w{w}"))
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .collect::<Vec<_>>()
                .join("\n");
            // keep every single line within budget so boundary-only splits
            // are always feasible
            let max_line = text.lines().map(|l| tok.count(l) + 1).max().unwrap();
            let max_tokens = rng.random_range(max_line..=max_line + 6);

            let expected = greedy_feasible_splits(&text, max_tokens, &tok);
            assert_eq!(expected.len(), 1, "greedy-feasible split is unique");

            let d = doc(DocFormat::PlainText, &text);
            let policy = SegmentationPolicy {
                max_tokens,
                min_chars: 0,
            };
            let got: Vec<String> = segment_document(&d, &policy, &tok)
                .unwrap()
                .into_iter()
                .map(|s| s.text)
                .collect();
            assert_eq!(got, expected[0], "case {case}: text {text:?} budget {max_tokens}");
        }
    }

    #[test]
    fn split_large_corpus_stays_within_one_of_exact() {
        let mut segments = synthetic_segments(50_000, "c1");
        segments.extend(synthetic_segments(50_000, "c2"));
        let split = split_corpus(segments, (0.8, 0.1, 0.1), 11).unwrap();
        for collection in ["c1", "c2"] {
            let of = |s: Split| {
                split
                    .iter()
                    .filter(|x| x.collection == collection && x.split == s)
                    .count() as i64
            };
            assert!((of(Split::Train) - 40_000).abs() <= 1);
            assert!((of(Split::Validation) - 5_000).abs() <= 1);
            assert!((of(Split::Test) - 5_000).abs() <= 1);
            // empirical proportions well within 2%
            let train_share = of(Split::Train) as f64 / 50_000.0;
            assert!((train_share - 0.8).abs() < 0.02);
        }
    }

    #[test]
    fn stats_basic_arithmetic() {
        let tok = WhitespaceTokenizer::new();
        let d1 = doc(DocFormat::PlainText, "un deux trois");
        let d2 = ingest_document(b"quatre cinq", DocFormat::PlainText, "c1", BTreeMap::new())
            .unwrap();
        let mk = |id: &str, doc_id: &str, tokens: usize, chars: usize| Segment {
            id: id.into(),
            doc_id: doc_id.into(),
            index_in_doc: 0,
            text: "mot ".repeat(tokens).trim_end().to_string(),
            char_count: chars,
            token_count: tokens,
            split: Split::Unassigned,
            collection: "c1".into(),
        };
        let kept = vec![
            mk("s1", &d1.id, 10, 400),
            mk("s2", &d1.id, 20, 400),
            mk("s3", &d2.id, 30, 400),
            mk("s4", &d2.id, 40, 400),
        ];
        let discarded = vec![mk("s5", &d2.id, 1, 10)];
        let stats = corpus_stats(&[d1, d2], &kept, &discarded, &tok).unwrap();
        let c = &stats.per_collection["c1"];
        assert_eq!(c.n_segments, 4);
        assert_eq!(c.n_discarded, 1);
        assert!((c.discard_pct - 20.0).abs() < 1e-9);
        assert!((c.segments_per_document - 2.0).abs() < 1e-9);
        assert!((c.mean_tokens_per_segment - 25.0).abs() < 1e-9);
        assert_eq!(stats.totals.n_tokens, 100);
    }

    #[test]
    fn stats_reject_unknown_document() {
        let tok = WhitespaceTokenizer::new();
        let seg = Segment {
            id: "s".into(),
            doc_id: "ghost".into(),
            index_in_doc: 0,
            text: "t".into(),
            char_count: 1,
            token_count: 1,
            split: Split::Unassigned,
            collection: "c1".into(),
        };
        assert!(matches!(
            corpus_stats(&[], &[seg], &[], &tok),
            Err(CorpusError::UnknownDocument(_))
        ));
    }

    #[test]
    fn stats_empty_collection_no_division_by_zero() {
        let tok = WhitespaceTokenizer::new();
        let stats = corpus_stats(&[], &[], &[], &tok).unwrap();
        assert_eq!(stats.totals.n_segments, 0);
        assert!(stats.per_collection.is_empty());
    }
}
