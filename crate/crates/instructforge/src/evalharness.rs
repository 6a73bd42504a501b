//! Normalization-tolerant answer matching, MCQ letter extraction, an LLM
//! judge, and rank aggregation across models and tasks.

pub mod variants;

use std::collections::{BTreeMap, BTreeSet};

use regex::RegexBuilder;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::llmclient::{ChatClient, ChatMessage, ChatRequest, ClientError, StructuredSchema};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("unparseable date {0:?}")]
    UnparseableDate(String),
    #[error("unparseable number {0:?}")]
    UnparseableNumber(String),
    #[error("invalid pattern: {0}")]
    PatternError(#[from] regex::Error),
    #[error("missing score cell for model {model:?}, task {task:?}")]
    MissingCell { model: String, task: String },
    #[error("no answer for item {0:?}")]
    MissingAnswer(String),
    #[error("reference variant does not match task for item {0:?}")]
    ReferenceMismatch(String),
    #[error("judge error: {0}")]
    Judge(#[from] ClientError),
    #[error("judge payload invalid: {0}")]
    JudgePayload(String),
}

/// Normalize text for tolerant matching: diacritics stripped to ASCII where a
/// decomposition exists, lowercased, control characters removed, punctuation
/// mapped to single spaces, whitespace runs collapsed, trimmed. Idempotent.
pub fn normalize_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut pending_space = false;
    for c in s.nfd() {
        if is_combining_mark(c) {
            continue;
        }
        if c.is_whitespace() {
            pending_space = true;
            continue;
        }
        if c.is_control() {
            continue;
        }
        if c.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            match c {
                'œ' | 'Œ' => out.push_str("oe"),
                'æ' | 'Æ' => out.push_str("ae"),
                _ => out.extend(c.to_lowercase()),
            }
        } else {
            // punctuation and symbols separate words
            pending_space = true;
        }
    }
    out
}

/// A reference fact: the value as produced by structured generation (string,
/// integer or decimal) and its free-form type tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactRef {
    pub value: Value,
    #[serde(rename = "type")]
    pub fact_type: String,
}

impl FactRef {
    pub fn new(value: impl Into<Value>, fact_type: &str) -> Self {
        FactRef {
            value: value.into(),
            fact_type: fact_type.to_string(),
        }
    }

    pub fn value_text(&self) -> String {
        match &self.value {
            Value::String(s) => s.clone(),
            v => v.to_string(),
        }
    }
}

/// Accepted renderings of a fact, already normalized. Dates fan out through
/// [`variants::date_variants`], numerics through
/// [`variants::number_variants`]; anything else matches as a normalized
/// literal.
pub fn fact_variants(fact: &FactRef) -> BTreeSet<String> {
    let value = fact.value_text();
    let type_norm = normalize_text(&fact.fact_type);
    // Slash-formed values are unambiguously dates even under a loose type tag;
    // bare numbers only take the date path when the type says so.
    let date_typed = type_norm.contains("date") || value.contains('/');
    if date_typed {
        if let Ok(set) = variants::date_variants(&value) {
            return set;
        }
    }
    if let Ok(set) = variants::number_variants(&value) {
        return set;
    }
    let lit = normalize_text(&value);
    let mut set = BTreeSet::new();
    if !lit.is_empty() {
        set.insert(lit);
    }
    set
}

/// Substring check with token-boundary guards for purely numeric variants: a
/// variant "5" must not match inside "2025".
fn contains_variant(normalized_text: &str, variant: &str) -> bool {
    if variant.is_empty() {
        return false;
    }
    let numeric = variant.chars().all(|c| c.is_ascii_digit() || c == ' ');
    if !numeric {
        return normalized_text.contains(variant);
    }
    let bytes = normalized_text.as_bytes();
    let mut from = 0;
    while let Some(pos) = normalized_text[from..].find(variant) {
        let start = from + pos;
        let end = start + variant.len();
        let left_ok = start == 0 || !bytes[start - 1].is_ascii_alphanumeric();
        let right_ok = end == bytes.len() || !bytes[end].is_ascii_alphanumeric();
        if left_ok && right_ok {
            return true;
        }
        from = start + 1;
    }
    false
}

/// True iff the answer contains any accepted rendering of the fact.
pub fn match_factual(answer: &str, fact: &FactRef) -> bool {
    let text = normalize_text(answer);
    fact_variants(fact).iter().any(|v| contains_variant(&text, v))
}

/// True iff at least one of the meanings appears in the answer, both sides
/// normalized.
pub fn match_acronym(answer: &str, meanings: &[String]) -> bool {
    let text = normalize_text(answer);
    meanings.iter().any(|m| {
        let m = normalize_text(m);
        !m.is_empty() && text.contains(&m)
    })
}

/// True iff the pattern matches anywhere in the raw answer. Case-insensitive
/// by default.
pub fn match_regex(answer: &str, pattern: &str) -> Result<bool, EvalError> {
    let re = RegexBuilder::new(pattern).case_insensitive(true).build()?;
    Ok(re.is_match(answer))
}

/// Deterministic MCQ letter extraction cascade:
/// 1. the canonical sentence "la bonne réponse est la lettre X";
/// 2. a leading "X)" / "X." / "X -" marker on the first non-empty line;
/// 3. a lone letter token a-e, accepted only when exactly one candidate
///    letter appears.
pub fn extract_mcq_letter(answer: &str) -> Option<char> {
    let norm = normalize_text(answer);

    if let Some(pos) = norm.find("la bonne reponse est la lettre ") {
        let tail = &norm[pos + "la bonne reponse est la lettre ".len()..];
        let mut chars = tail.chars();
        if let Some(c) = chars.next() {
            if ('a'..='e').contains(&c) && chars.next().map_or(true, |n| n == ' ') {
                return Some(c);
            }
        }
    }

    if let Some(line) = answer.lines().map(str::trim).find(|l| !l.is_empty()) {
        let lower = line.to_lowercase();
        let mut chars = lower.chars();
        if let (Some(first), rest) = (chars.next(), chars.as_str()) {
            if ('a'..='e').contains(&first)
                && (rest.starts_with(')') || rest.starts_with('.') || rest.starts_with(" -"))
            {
                return Some(first);
            }
        }
    }

    let candidates: BTreeSet<char> = norm
        .split(' ')
        .filter(|t| t.len() == 1)
        .filter_map(|t| t.chars().next())
        .filter(|c| ('a'..='e').contains(c))
        .collect();
    if candidates.len() == 1 {
        candidates.into_iter().next()
    } else {
        None
    }
}

/// Version tag of the judging prompt; recorded fixtures are only valid for
/// the version they were recorded with.
pub const JUDGE_PROMPT_VERSION: &str = "mos-fr-v1";

const JUDGE_SYSTEM_PROMPT: &str = "Vous êtes un évaluateur impartial. Vous notez la réponse d'un \
modèle en la comparant à une réponse de référence.";

fn judge_schema() -> StructuredSchema {
    StructuredSchema {
        id: format!("mos_judgment_{JUDGE_PROMPT_VERSION}"),
        json_schema: serde_json::json!({
            "type": "object",
            "properties": {
                "score": {"type": "integer", "minimum": 0, "maximum": 5},
                "rationale": {"type": "string"}
            },
            "required": ["score", "rationale"],
            "additionalProperties": false
        }),
    }
}

/// Build the fixed judging request for a candidate/reference pair.
pub fn judge_request(model: &str, candidate: &str, reference: &str) -> ChatRequest {
    let user = format!(
        "Notez la pertinence de la réponse candidate par rapport à la réponse de référence, \
par une note entière de 0 à 5 (0 : sans rapport avec la référence, 5 : équivalente à la référence).\n\n\
Réponse de référence :\n{reference}\n\nRéponse candidate :\n{candidate}\n\n\
Répondez en JSON en respectant le schéma demandé."
    );
    ChatRequest {
        model: model.to_string(),
        messages: vec![
            ChatMessage::system(JUDGE_SYSTEM_PROMPT),
            ChatMessage::user(user),
        ],
        schema: Some(judge_schema()),
        temperature: 0.0,
        max_output_tokens: 512,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MosJudgment {
    pub score: u8,
    /// Set when the raw score fell outside 0-5 and was clamped.
    pub clamped: bool,
    /// Digest of the judge rationale, for audit without storing free text.
    pub rationale_digest: String,
}

/// Score a candidate against a reference with the configured judge model,
/// 0 (unrelated) to 5 (equivalent). Out-of-range scores are clamped and
/// flagged.
pub fn judge_mos(
    candidate: &str,
    reference: &str,
    client: &ChatClient,
    model: &str,
) -> Result<MosJudgment, EvalError> {
    let req = judge_request(model, candidate, reference);
    let (payload, _) = client.complete(&req)?;
    let raw_score = payload["score"]
        .as_i64()
        .ok_or_else(|| EvalError::JudgePayload("missing integer score".into()))?;
    let rationale = payload["rationale"].as_str().unwrap_or_default();
    let clamped = !(0..=5).contains(&raw_score);
    let score = raw_score.clamp(0, 5) as u8;
    Ok(MosJudgment {
        score,
        clamped,
        rationale_digest: hex::encode(&Sha256::digest(rationale.as_bytes())[..8]),
    })
}

/// Exact accuracy as a fraction, computed as a rational before any percent
/// formatting.
pub fn accuracy(correct: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}

/// Format a fraction as a percentage. Machine output uses dot decimals;
/// `french_comma` switches to the comma-decimal report style.
pub fn format_percent(fraction: f64, decimals: usize, french_comma: bool) -> String {
    let s = format!("{:.*}", decimals, fraction * 100.0);
    if french_comma {
        s.replace('.', ",")
    } else {
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTask {
    Mcqa,
    Factual,
    Acronym,
    RegexGold,
    SummaryMos,
    TitlingMos,
}

impl EvalTask {
    pub fn metric(&self) -> &'static str {
        match self {
            EvalTask::Mcqa | EvalTask::Factual | EvalTask::Acronym | EvalTask::RegexGold => {
                "accuracy"
            }
            EvalTask::SummaryMos | EvalTask::TitlingMos => "mos",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Reference {
    Letter { letter: char },
    Fact { fact: FactRef },
    Meanings { meanings: Vec<String> },
    Pattern { pattern: String },
    Text { text: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalItem {
    pub id: String,
    pub task: EvalTask,
    pub prompt: String,
    pub reference: Reference,
}

impl EvalItem {
    pub fn validate(&self) -> Result<(), EvalError> {
        let ok = matches!(
            (&self.task, &self.reference),
            (EvalTask::Mcqa, Reference::Letter { .. })
                | (EvalTask::Factual, Reference::Fact { .. })
                | (EvalTask::Acronym, Reference::Meanings { .. })
                | (EvalTask::RegexGold, Reference::Pattern { .. })
                | (EvalTask::SummaryMos, Reference::Text { .. })
                | (EvalTask::TitlingMos, Reference::Text { .. })
        );
        if ok {
            Ok(())
        } else {
            Err(EvalError::ReferenceMismatch(self.id.clone()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Verdict {
    Correct { correct: bool },
    Score { score: u8 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub item_id: String,
    pub answer: String,
    pub verdict: Verdict,
    pub detail: String,
}

/// Judge configuration for the MOS tasks.
pub struct MosJudge<'a> {
    pub client: &'a ChatClient,
    pub model: String,
}

/// Score one answer against one item.
pub fn evaluate_item(
    item: &EvalItem,
    answer: &str,
    judge: Option<&MosJudge>,
) -> Result<EvalOutcome, EvalError> {
    item.validate()?;
    let (verdict, detail) = match (&item.task, &item.reference) {
        (EvalTask::Mcqa, Reference::Letter { letter }) => {
            let extracted = extract_mcq_letter(answer);
            let correct = extracted == Some(*letter);
            (
                Verdict::Correct { correct },
                match extracted {
                    Some(c) => format!("extracted letter {c}"),
                    None => "no letter extracted".to_string(),
                },
            )
        }
        (EvalTask::Factual, Reference::Fact { fact }) => {
            let correct = match_factual(answer, fact);
            (
                Verdict::Correct { correct },
                format!("fact value {:?}", fact.value_text()),
            )
        }
        (EvalTask::Acronym, Reference::Meanings { meanings }) => {
            let correct = match_acronym(answer, meanings);
            let which = meanings
                .iter()
                .find(|m| normalize_text(answer).contains(&normalize_text(m)))
                .cloned()
                .unwrap_or_default();
            (
                Verdict::Correct { correct },
                if correct {
                    format!("matched meaning {which:?}")
                } else {
                    "no meaning matched".to_string()
                },
            )
        }
        (EvalTask::RegexGold, Reference::Pattern { pattern }) => {
            let correct = match_regex(answer, pattern)?;
            (Verdict::Correct { correct }, format!("pattern {pattern:?}"))
        }
        (EvalTask::SummaryMos | EvalTask::TitlingMos, Reference::Text { text }) => {
            let judge = judge.ok_or_else(|| {
                EvalError::JudgePayload("MOS task evaluated without a judge".into())
            })?;
            let judgment = judge_mos(answer, text, judge.client, &judge.model)?;
            (
                Verdict::Score { score: judgment.score },
                format!(
                    "rationale {}{}",
                    judgment.rationale_digest,
                    if judgment.clamped { " (clamped)" } else { "" }
                ),
            )
        }
        _ => return Err(EvalError::ReferenceMismatch(item.id.clone())),
    };
    Ok(EvalOutcome {
        item_id: item.id.clone(),
        answer: answer.to_string(),
        verdict,
        detail,
    })
}

/// Evaluate a full item set against an id-keyed answer map.
pub fn evaluate_all(
    items: &[EvalItem],
    answers: &BTreeMap<String, String>,
    judge: Option<&MosJudge>,
) -> Result<Vec<EvalOutcome>, EvalError> {
    items
        .iter()
        .map(|item| {
            let answer = answers
                .get(&item.id)
                .ok_or_else(|| EvalError::MissingAnswer(item.id.clone()))?;
            evaluate_item(item, answer, judge)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskReport {
    pub metric: String,
    pub n: usize,
    /// Accuracy tasks report percent; MOS tasks report the 0-5 mean.
    pub score: f64,
}

/// Aggregate outcomes per task.
pub fn report(items: &[EvalItem], outcomes: &[EvalOutcome]) -> BTreeMap<String, TaskReport> {
    let task_of: BTreeMap<&str, EvalTask> = items
        .iter()
        .map(|i| (i.id.as_str(), i.task))
        .collect();
    let mut grouped: BTreeMap<String, Vec<&EvalOutcome>> = BTreeMap::new();
    for out in outcomes {
        if let Some(task) = task_of.get(out.item_id.as_str()) {
            let key = serde_json::to_value(task)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            grouped.entry(key).or_default().push(out);
        }
    }
    grouped
        .into_iter()
        .map(|(task, outs)| {
            let n = outs.len();
            let is_mos = outs
                .iter()
                .any(|o| matches!(o.verdict, Verdict::Score { .. }));
            let score = if is_mos {
                let sum: f64 = outs
                    .iter()
                    .map(|o| match o.verdict {
                        Verdict::Score { score } => score as f64,
                        Verdict::Correct { correct } => {
                            if correct {
                                5.0
                            } else {
                                0.0
                            }
                        }
                    })
                    .sum();
                sum / n.max(1) as f64
            } else {
                let correct = outs
                    .iter()
                    .filter(|o| matches!(o.verdict, Verdict::Correct { correct: true }))
                    .count();
                accuracy(correct, n) * 100.0
            };
            (
                task,
                TaskReport {
                    metric: if is_mos { "mos" } else { "accuracy" }.to_string(),
                    n,
                    score,
                },
            )
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub models: Vec<String>,
    pub tasks: Vec<String>,
    /// Row-major: `scores[model][task]`.
    pub scores: Vec<Vec<Option<f64>>>,
    /// Per-column direction; defaults to higher-is-better everywhere.
    #[serde(default)]
    pub lower_better: Vec<bool>,
}

impl ScoreMatrix {
    pub fn new(models: Vec<String>, tasks: Vec<String>, scores: Vec<Vec<f64>>) -> Self {
        let scores = scores
            .into_iter()
            .map(|row| row.into_iter().map(Some).collect())
            .collect();
        ScoreMatrix {
            models,
            tasks,
            scores,
            lower_better: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankTable {
    pub models: Vec<String>,
    pub tasks: Vec<String>,
    pub scores: Vec<Vec<f64>>,
    /// Competition ranking per column: tied scores share the minimum rank.
    pub ranks: Vec<Vec<u32>>,
    pub mean_ranks: Vec<f64>,
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Rank every column with competition ranking (best score gets rank 1, ties
/// share the minimum rank) and average ranks per row.
pub fn rank_table(matrix: &ScoreMatrix) -> Result<RankTable, EvalError> {
    let mut scores = Vec::with_capacity(matrix.models.len());
    for (mi, row) in matrix.scores.iter().enumerate() {
        let mut out_row = Vec::with_capacity(matrix.tasks.len());
        for (ti, cell) in row.iter().enumerate() {
            out_row.push(cell.ok_or_else(|| EvalError::MissingCell {
                model: matrix.models[mi].clone(),
                task: matrix.tasks[ti].clone(),
            })?);
        }
        if out_row.len() != matrix.tasks.len() {
            return Err(EvalError::MissingCell {
                model: matrix.models[mi].clone(),
                task: "<row too short>".to_string(),
            });
        }
        scores.push(out_row);
    }

    let n_tasks = matrix.tasks.len();
    let mut ranks = vec![vec![0u32; n_tasks]; scores.len()];
    for t in 0..n_tasks {
        let lower_better = matrix.lower_better.get(t).copied().unwrap_or(false);
        for m in 0..scores.len() {
            let mine = scores[m][t];
            let better = scores
                .iter()
                .filter(|row| {
                    if lower_better {
                        row[t] < mine
                    } else {
                        row[t] > mine
                    }
                })
                .count();
            ranks[m][t] = better as u32 + 1;
        }
    }
    let mean_ranks = ranks
        .iter()
        .map(|row| row.iter().map(|&r| r as f64).sum::<f64>() / n_tasks.max(1) as f64)
        .collect();
    Ok(RankTable {
        models: matrix.models.clone(),
        tasks: matrix.tasks.clone(),
        scores,
        ranks,
        mean_ranks,
    })
}

impl RankTable {
    /// Mean rank rounded to one decimal, as reported.
    pub fn mean_rank_1dp(&self, model: &str) -> Option<f64> {
        self.models
            .iter()
            .position(|m| m == model)
            .map(|i| round1(self.mean_ranks[i]))
    }

    /// Aligned plain-text rendering: scores with computed ranks and the mean
    /// rank column.
    pub fn render_text(&self) -> String {
        let mut widths: Vec<usize> = self.tasks.iter().map(|t| t.len()).collect();
        let mut cells: Vec<Vec<String>> = Vec::new();
        for (m, row) in self.scores.iter().enumerate() {
            let mut line = Vec::new();
            for (t, score) in row.iter().enumerate() {
                let cell = format!("{score} [{}]", self.ranks[m][t]);
                widths[t] = widths[t].max(cell.len());
                line.push(cell);
            }
            cells.push(line);
        }
        let model_width = self
            .models
            .iter()
            .map(String::len)
            .max()
            .unwrap_or(5)
            .max("model".len());
        let mut out = String::new();
        out.push_str(&format!("{:model_width$}", "model"));
        for (t, task) in self.tasks.iter().enumerate() {
            out.push_str(&format!("  {:>width$}", task, width = widths[t]));
        }
        out.push_str("  mean_rank\n");
        for (m, model) in self.models.iter().enumerate() {
            out.push_str(&format!("{model:model_width$}"));
            for (t, cell) in cells[m].iter().enumerate() {
                out.push_str(&format!("  {:>width$}", cell, width = widths[t]));
            }
            out.push_str(&format!("  {:>9.1}\n", self.mean_ranks[m]));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RankInconsistency {
    /// A printed per-cell rank disagrees with competition ranking of the
    /// printed scores.
    CellRank {
        model: String,
        task: String,
        printed: u32,
        computed: u32,
    },
    /// Printed per-cell ranks are consistent but the printed mean is not
    /// their mean.
    MeanRank {
        model: String,
        printed: f64,
        computed: f64,
    },
}

/// Check a published table (scores, per-cell ranks and mean ranks) against
/// competition ranking. Rows whose printed ranks or means cannot be
/// reproduced are flagged rather than silently accepted.
pub fn verify_printed_ranks(
    matrix: &ScoreMatrix,
    printed_ranks: &[Vec<u32>],
    printed_means: &[f64],
) -> Result<Vec<RankInconsistency>, EvalError> {
    let table = rank_table(matrix)?;
    let mut flags = Vec::new();
    for (m, model) in table.models.iter().enumerate() {
        let mut row_consistent = true;
        for (t, task) in table.tasks.iter().enumerate() {
            let printed = printed_ranks[m][t];
            let computed = table.ranks[m][t];
            if printed != computed {
                row_consistent = false;
                flags.push(RankInconsistency::CellRank {
                    model: model.clone(),
                    task: task.clone(),
                    printed,
                    computed,
                });
            }
        }
        if row_consistent && round1(table.mean_ranks[m]) != printed_means[m] {
            flags.push(RankInconsistency::MeanRank {
                model: model.clone(),
                printed: printed_means[m],
                computed: round1(table.mean_ranks[m]),
            });
        }
    }
    Ok(flags)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_strips_diacritics_and_punctuation() {
        assert_eq!(normalize_text("Armée de l'Air"), "armee de l air");
        assert_eq!(normalize_text("abc"), "abc");
    }

    #[test]
    fn normalize_unifies_combining_and_precomposed() {
        assert_eq!(normalize_text("A\u{0301}"), normalize_text("Á"));
    }

    #[test]
    fn normalize_is_idempotent_on_samples() {
        for s in [
            "Armée de l'Air",
            "  très\t\técarté !!  ",
            "İstanbul — cœur",
            "ligne\r\ncontrôle\u{0007}finale",
        ] {
            let once = normalize_text(s);
            assert_eq!(normalize_text(&once), once);
        }
    }

    #[test]
    fn factual_match_accepts_date_rendering() {
        let fact = FactRef::new("28/03/2023", "date");
        assert!(match_factual(
            "L'expérimentation a été lancée le 28 mars 2023.",
            &fact
        ));
        assert!(!match_factual("aucune idée", &fact));
    }

    #[test]
    fn factual_match_accepts_grouped_number() {
        let fact = FactRef::new(120000, "montant");
        assert!(match_factual("coûte 120 000 euros", &fact));
        assert!(match_factual("coûte 120000 euros", &fact));
    }

    #[test]
    fn numeric_variant_needs_token_boundaries() {
        let fact = FactRef::new(5, "nombre");
        assert!(!match_factual("en 2025", &fact));
        assert!(match_factual("il y en a 5.", &fact));
    }

    #[test]
    fn acronym_match_is_normalization_tolerant() {
        let meanings = vec!["Organisation du traité de l'Atlantique Nord".to_string()];
        assert!(match_acronym(
            "OTAN signifie organisation du traite de l'atlantique nord",
            &meanings
        ));
        assert!(!match_acronym("", &meanings));
    }

    #[test]
    fn acronym_match_accepts_any_meaning() {
        let meanings = vec!["premier sens".to_string(), "second sens".to_string()];
        assert!(match_acronym("c'est le second sens", &meanings));
    }

    #[test]
    fn mcq_letter_cascade() {
        assert_eq!(
            extract_mcq_letter("La bonne réponse est la lettre e). L'aéroport…"),
            Some('e')
        );
        assert_eq!(extract_mcq_letter("b"), Some('b'));
        assert_eq!(extract_mcq_letter("c) parce que"), Some('c'));
        assert_eq!(extract_mcq_letter("d - la réponse"), Some('d'));
        assert_eq!(
            extract_mcq_letter("Les réponses a et c sont proches…"),
            None
        );
    }

    #[test]
    fn regex_match_is_case_insensitive_by_default() {
        assert!(match_regex("Le Rafale est un avion", "rafale").unwrap());
        assert!(match_regex("RAFALE", "rafale").unwrap());
        assert!(!match_regex("", ".").unwrap());
        assert!(match_regex("abc", "(").is_err());
    }

    #[test]
    fn accuracy_is_exact() {
        assert_eq!(accuracy(1, 3), 1.0 / 3.0);
        assert_eq!(format_percent(accuracy(1, 3), 1, false), "33.3");
        assert_eq!(format_percent(accuracy(1, 3), 1, true), "33,3");
    }

    #[test]
    fn competition_ranking_with_ties() {
        let matrix = ScoreMatrix::new(
            vec!["m1".into(), "m2".into(), "m3".into()],
            vec!["t".into()],
            vec![vec![2.0], vec![2.0], vec![1.0]],
        );
        let table = rank_table(&matrix).unwrap();
        assert_eq!(table.ranks, vec![vec![1], vec![1], vec![3]]);
    }

    #[test]
    fn all_equal_scores_all_rank_one() {
        let matrix = ScoreMatrix::new(
            vec!["a".into(), "b".into()],
            vec!["t".into()],
            vec![vec![7.0], vec![7.0]],
        );
        let table = rank_table(&matrix).unwrap();
        assert_eq!(table.ranks, vec![vec![1], vec![1]]);
    }

    #[test]
    fn missing_cell_is_reported() {
        let matrix = ScoreMatrix {
            models: vec!["a".into()],
            tasks: vec!["t".into()],
            scores: vec![vec![None]],
            lower_better: vec![],
        };
        assert!(matches!(
            rank_table(&matrix),
            Err(EvalError::MissingCell { .. })
        ));
    }

    #[test]
    fn judge_replays_from_sealed_cache() {
        let dir = tempfile::tempdir().unwrap();
        let client = ChatClient::replay(dir.path());
        let req = judge_request("judge-model", "même texte", "même texte");
        crate::llmclient::seal_cache_entry(
            &client.cache,
            &req,
            serde_json::json!({"score": 5, "rationale": "identique"}),
            10,
            5,
        )
        .unwrap();
        let judgment = judge_mos("même texte", "même texte", &client, "judge-model").unwrap();
        assert_eq!(judgment.score, 5);
        assert!(!judgment.clamped);
    }

    #[test]
    fn judge_clamps_out_of_range_scores() {
        let dir = tempfile::tempdir().unwrap();
        let client = ChatClient::replay(dir.path());
        let req = judge_request("judge-model", "texte", "référence");
        crate::llmclient::seal_cache_entry(
            &client.cache,
            &req,
            serde_json::json!({"score": 9, "rationale": "trop"}),
            10,
            5,
        )
        .unwrap();
        let judgment = judge_mos("texte", "référence", &client, "judge-model").unwrap();
        assert_eq!(judgment.score, 5);
        assert!(judgment.clamped);
    }

    #[test]
    fn batch_mos_mean() {
        let scores = [4u8, 3, 5];
        let mean = scores.iter().map(|&s| s as f64).sum::<f64>() / scores.len() as f64;
        assert!((mean - 4.0).abs() < 1e-12);
    }

    #[test]
    fn reference_variant_must_match_task() {
        let item = EvalItem {
            id: "x".into(),
            task: EvalTask::Mcqa,
            prompt: "p".into(),
            reference: Reference::Text { text: "t".into() },
        };
        assert!(item.validate().is_err());
    }
}
