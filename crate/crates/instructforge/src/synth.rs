//! Per-task generation requests, structured-output validation, conversion to
//! instruction records, and curation filters.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::corpus::{Segment, Split};
use crate::evalharness::{match_factual, FactRef};
use crate::grammar::{builtin, expand, BuiltinGrammar, GrammarError};
use crate::llmclient::{ChatMessage, ChatRequest, StructuredSchema};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("task {task:?} does not apply to collection {collection:?}")]
    TaskCollectionMismatch { task: String, collection: String },
    #[error("payload does not match the task schema: {0}")]
    SchemaViolation(String),
    #[error("payload violates a task invariant: {0}")]
    InvariantViolation(String),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
}

/// The five generation tasks. `FactualSummaryOf` is specific to journalistic
/// collections (the `of_` collection tag).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Summary,
    Titling,
    Mcqa,
    FactualQa,
    FactualSummaryOf,
}

impl TaskKind {
    pub const ALL: &'static [TaskKind] = &[
        TaskKind::Summary,
        TaskKind::Titling,
        TaskKind::Mcqa,
        TaskKind::FactualQa,
        TaskKind::FactualSummaryOf,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::Summary => "summary",
            TaskKind::Titling => "titling",
            TaskKind::Mcqa => "mcqa",
            TaskKind::FactualQa => "factual_qa",
            TaskKind::FactualSummaryOf => "factual_summary_of",
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown task {s:?}"))
    }
}

/// Collections with the `of_` prefix hold journalistic articles; the
/// fact-listing summary task only applies to those.
pub fn is_journalistic(collection: &str) -> bool {
    collection == "of" || collection.starts_with("of_")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChoiceLetter {
    A,
    B,
    C,
    D,
    E,
}

impl ChoiceLetter {
    pub const IN_ORDER: [ChoiceLetter; 5] = [
        ChoiceLetter::A,
        ChoiceLetter::B,
        ChoiceLetter::C,
        ChoiceLetter::D,
        ChoiceLetter::E,
    ];

    pub fn as_char(&self) -> char {
        match self {
            ChoiceLetter::A => 'a',
            ChoiceLetter::B => 'b',
            ChoiceLetter::C => 'c',
            ChoiceLetter::D => 'd',
            ChoiceLetter::E => 'e',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Choice {
    pub letter: ChoiceLetter,
    pub answer_content: String,
    pub is_true: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McqaOutput {
    pub question: String,
    pub choices: Vec<Choice>,
    pub justification: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FactValue {
    Int(i64),
    Float(f64),
    Text(String),
}

impl FactValue {
    pub fn render(&self) -> String {
        match self {
            FactValue::Int(v) => v.to_string(),
            FactValue::Float(v) => v.to_string(),
            FactValue::Text(s) => s.clone(),
        }
    }

    fn as_json(&self) -> Value {
        match self {
            FactValue::Int(v) => Value::from(*v),
            FactValue::Float(v) => Value::from(*v),
            FactValue::Text(s) => Value::from(s.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fact {
    pub fact_target_value: FactValue,
    pub fact_target_type: String,
}

impl Fact {
    pub fn as_fact_ref(&self) -> FactRef {
        FactRef {
            value: self.fact_target_value.as_json(),
            fact_type: self.fact_target_type.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactualQaOutput {
    pub identified_fact: Fact,
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummaryOutput {
    pub summarization_question: String,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TitlingOutput {
    pub titling_question: String,
    pub title: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfFact {
    pub fact: String,
    pub question: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfSummaryOutput {
    pub summary: Vec<OfFact>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskOutput {
    Summary(SummaryOutput),
    Titling(TitlingOutput),
    Mcqa(McqaOutput),
    FactualQa(FactualQaOutput),
    FactualSummaryOf(OfSummaryOutput),
}

/// Which pipeline produced an instruction record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Llm,
    Patron,
    Long,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: GeneratorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derivation: Option<String>,
}

/// Task tag of a record: the five generation tasks plus the patron and long
/// instruction families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Summary,
    Titling,
    Mcqa,
    FactualQa,
    FactualSummaryOf,
    Acronym,
    Translation,
    LongAcronyms,
    LongTranslations,
    InvertedSummary,
}

impl From<TaskKind> for RecordKind {
    fn from(task: TaskKind) -> Self {
        match task {
            TaskKind::Summary => RecordKind::Summary,
            TaskKind::Titling => RecordKind::Titling,
            TaskKind::Mcqa => RecordKind::Mcqa,
            TaskKind::FactualQa => RecordKind::FactualQa,
            TaskKind::FactualSummaryOf => RecordKind::FactualSummaryOf,
        }
    }
}

/// A single (system, user, assistant) training triple with provenance and
/// split assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub id: String,
    pub task: RecordKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_segment_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    pub user: String,
    pub assistant: String,
    pub provenance: Provenance,
    pub split: Split,
}

const PERSONA: &str = "a senior expert specializing in the defense industry and military affairs. \
Your expertise covers weapon systems (land, naval, air), emerging technologies (AI, robotics, \
cyber, space), industrial processes, military R&D, operational doctrines and strategies, \
intelligence, as well as the economic aspects of the sector (markets, actors, regulations). \
You have a thorough understanding of geopolitical issues, international relations, and defense \
policies";

const OF_SYSTEM_PROMPT: &str = "Vous êtes un assistant AI spécialisé NLP et en extraction \
d'information.\nVous devez analyser des contenus journalistiques spécialisés dans le domaine en \
défense et affaires militaires.\nFournissez des informations structurées en adaptant votre \
langage à l'interlocuteur et en respectant le format demandé.";

const OF_USER_PROMPT: &str = "Lister de faits importants pour résumer l'article suivant.\nChaque \
fait doit être associé à une question factuelle. Les faits et questions doivent préciser un \
contexte suffisant (entités, dates...) pour être compris sans lire l'article original. Formater \
la réponse en JSON en respectant le schéma donné.";

fn instruction_type(task: TaskKind) -> &'static str {
    match task {
        TaskKind::Summary => "summarization",
        TaskKind::Titling => "titling",
        TaskKind::Mcqa => "MCQA",
        TaskKind::FactualQa => "factual question answering",
        TaskKind::FactualSummaryOf => unreachable!("OF summaries use their own prompts"),
    }
}

fn additional_information_grammar(task: TaskKind) -> Option<BuiltinGrammar> {
    match task {
        TaskKind::Summary => Some(BuiltinGrammar::SummaryInfo),
        TaskKind::Titling => Some(BuiltinGrammar::TitlingInfo),
        TaskKind::Mcqa => Some(BuiltinGrammar::QcmInfo),
        TaskKind::FactualQa | TaskKind::FactualSummaryOf => None,
    }
}

/// Generation settings carried by the pipeline configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenSettings {
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for GenSettings {
    fn default() -> Self {
        GenSettings {
            model: "generation-model".into(),
            temperature: 1.0,
            max_output_tokens: 2048,
        }
    }
}

/// Build the provider request for one (task, segment) pair. Deterministic in
/// (task, segment, seed): the additional-information grammar is expanded with
/// the given seed.
pub fn build_request(
    task: TaskKind,
    segment: &Segment,
    rng_seed: u64,
    settings: &GenSettings,
) -> Result<ChatRequest, SynthError> {
    if task == TaskKind::FactualSummaryOf && !is_journalistic(&segment.collection) {
        return Err(SynthError::TaskCollectionMismatch {
            task: task.name().to_string(),
            collection: segment.collection.clone(),
        });
    }

    let (system, user) = if task == TaskKind::FactualSummaryOf {
        (
            OF_SYSTEM_PROMPT.to_string(),
            format!("{OF_USER_PROMPT}\n\n{}", segment.text),
        )
    } else {
        let additional = match additional_information_grammar(task) {
            Some(name) => expand(&builtin(name), rng_seed, &Default::default())?.text,
            None => String::new(),
        };
        let system = format!(
            "You are {PERSONA}, with an exhaustive knowledge of LLM instructions generation, \
your role is to create a set of high-quality {} instructions on the text input provided by the \
user. All your outputs should be written in french. {additional}",
            instruction_type(task)
        );
        (system.trim_end().to_string(), segment.text.clone())
    };

    Ok(ChatRequest {
        model: settings.model.clone(),
        messages: vec![ChatMessage::system(system), ChatMessage::user(user)],
        schema: Some(task_schema(task)),
        temperature: settings.temperature,
        max_output_tokens: settings.max_output_tokens,
    })
}

/// The published JSON schema for a task's structured output.
pub fn task_schema(task: TaskKind) -> StructuredSchema {
    let (id, schema) = match task {
        TaskKind::Summary => (
            "summarization_instruction_v1",
            serde_json::json!({
                "type": "object",
                "properties": {
                    "summarization_question": {
                        "type": "string",
                        "description": "A question asking the user to summarize the text. This question must be kept short and to the point. Example: 'Résumer le texte', 'Peux-tu synthétiser le texte?', 'De quoi parle le texte?'"
                    },
                    "summary": {
                        "type": "string",
                        "description": "The summary of the text provided by the user. This field CANNOT be empty."
                    }
                },
                "required": ["summarization_question", "summary"],
                "additionalProperties": false
            }),
        ),
        TaskKind::Titling => (
            "titling_instruction_v1",
            serde_json::json!({
                "type": "object",
                "properties": {
                    "titling_question": {
                        "type": "string",
                        "description": "In this field, you will write a question asking to title a document. Example: 'Titrer le document çi-dessus'. You can (and should!) be more creative and think about other ways to phrase it."
                    },
                    "title": {
                        "type": "string",
                        "description": "The generated title for the document, following all conditions given in the titling question."
                    }
                },
                "required": ["titling_question", "title"],
                "additionalProperties": false
            }),
        ),
        TaskKind::Mcqa => (
            "mcqa_instruction_v1",
            serde_json::json!({
                "type": "object",
                "properties": {
                    "question": {
                        "type": "string",
                        "description": "The question to ask in the MCQA test"
                    },
                    "choices": {
                        "type": "array",
                        "description": "The possible choices. All must be false except one that is true.",
                        "items": {
                            "type": "object",
                            "properties": {
                                "letter": {
                                    "type": "string",
                                    "enum": ["a", "b", "c", "d", "e"],
                                    "description": "The letter of the choice"
                                },
                                "answer_content": {
                                    "type": "string",
                                    "description": "A possible answer for the MCQA"
                                },
                                "is_true": {
                                    "type": "boolean",
                                    "description": "Whether the answer is true or not."
                                }
                            },
                            "required": ["letter", "answer_content", "is_true"],
                            "additionalProperties": false
                        }
                    },
                    "justification": {
                        "type": "string",
                        "description": "The justification behind the correct answer"
                    }
                },
                "required": ["question", "choices", "justification"],
                "additionalProperties": false
            }),
        ),
        TaskKind::FactualQa => (
            "factual_qa_instruction_v1",
            serde_json::json!({
                "type": "object",
                "properties": {
                    "identified_fact": {
                        "type": "object",
                        "description": "The atomic fact that was identified in the text as important, containing its value as well as its type",
                        "properties": {
                            "fact_target_value": {
                                "type": ["string", "integer", "number"],
                                "description": "The atomic fact that will be the answer to the question (can be a name, date, amount, location, person, organization, event, nationality [...]). Format constraints: Numbers: if your fact concerns a number or amount, will should only write the number as a float or integer and nothing else. Dates: dates are expected to be formated as the following: DD/MM/YYYY or MM/YYYY or YYYY"
                            },
                            "fact_target_type": {
                                "type": "string",
                                "description": "The type of fact that is being evaluated"
                            }
                        },
                        "required": ["fact_target_value", "fact_target_type"],
                        "additionalProperties": false
                    },
                    "question": {
                        "type": "string",
                        "description": "The question asked to the user. The answer to that question should contain the identified fact."
                    },
                    "answer": {
                        "type": "string",
                        "description": "The answer to the answer, in natural language, containing the identified atomic fact. Note the emphasis on 'natural language', you must construct a full sentence that sounds natural to the reader."
                    }
                },
                "required": ["identified_fact", "question", "answer"],
                "additionalProperties": false
            }),
        ),
        TaskKind::FactualSummaryOf => (
            "of_summary_v1",
            serde_json::json!({
                "type": "object",
                "properties": {
                    "summary": {
                        "type": "array",
                        "description": "faits importants résumant l'article",
                        "items": {
                            "type": "object",
                            "properties": {
                                "fact": {
                                    "type": "string",
                                    "description": "fait résumant un élément important de l'article analysé"
                                },
                                "question": {
                                    "type": "string",
                                    "description": "question posée à propos du fait"
                                }
                            },
                            "required": ["fact", "question"],
                            "additionalProperties": false
                        }
                    }
                },
                "required": ["summary"],
                "additionalProperties": false
            }),
        ),
    };
    StructuredSchema {
        id: id.to_string(),
        json_schema: schema,
    }
}

/// Validate a structured payload against the task schema and its invariants.
/// Unknown fields are rejected.
pub fn parse_output(task: TaskKind, payload: &Value) -> Result<TaskOutput, SynthError> {
    let schema_err = |e: serde_json::Error| SynthError::SchemaViolation(e.to_string());
    let output = match task {
        TaskKind::Summary => {
            TaskOutput::Summary(serde_json::from_value(payload.clone()).map_err(schema_err)?)
        }
        TaskKind::Titling => {
            TaskOutput::Titling(serde_json::from_value(payload.clone()).map_err(schema_err)?)
        }
        TaskKind::Mcqa => {
            TaskOutput::Mcqa(serde_json::from_value(payload.clone()).map_err(schema_err)?)
        }
        TaskKind::FactualQa => {
            TaskOutput::FactualQa(serde_json::from_value(payload.clone()).map_err(schema_err)?)
        }
        TaskKind::FactualSummaryOf => {
            TaskOutput::FactualSummaryOf(serde_json::from_value(payload.clone()).map_err(schema_err)?)
        }
    };
    validate_output(&output)?;
    Ok(output)
}

fn require_non_empty(field: &str, value: &str) -> Result<(), SynthError> {
    if value.trim().is_empty() {
        Err(SynthError::SchemaViolation(format!(
            "field {field:?} must not be empty"
        )))
    } else {
        Ok(())
    }
}

fn validate_output(output: &TaskOutput) -> Result<(), SynthError> {
    match output {
        TaskOutput::Summary(out) => {
            require_non_empty("summarization_question", &out.summarization_question)?;
            require_non_empty("summary", &out.summary)?;
        }
        TaskOutput::Titling(out) => {
            require_non_empty("titling_question", &out.titling_question)?;
            require_non_empty("title", &out.title)?;
        }
        TaskOutput::Mcqa(out) => {
            if !(4..=5).contains(&out.choices.len()) {
                return Err(SynthError::InvariantViolation(format!(
                    "expected 4 or 5 choices, found {}",
                    out.choices.len()
                )));
            }
            for (i, choice) in out.choices.iter().enumerate() {
                if choice.letter != ChoiceLetter::IN_ORDER[i] {
                    return Err(SynthError::InvariantViolation(format!(
                        "choice {i} has letter {:?}; letters must form a prefix of a..e in order",
                        choice.letter.as_char()
                    )));
                }
            }
            let true_count = out.choices.iter().filter(|c| c.is_true).count();
            if true_count != 1 {
                return Err(SynthError::InvariantViolation(format!(
                    "expected exactly one true choice, found {true_count}"
                )));
            }
        }
        TaskOutput::FactualQa(out) => {
            require_non_empty("question", &out.question)?;
            require_non_empty("answer", &out.answer)?;
            let fact_ref = out.identified_fact.as_fact_ref();
            let type_norm = crate::evalharness::normalize_text(&out.identified_fact.fact_target_type);
            if type_norm.contains("date") {
                if let FactValue::Text(v) = &out.identified_fact.fact_target_value {
                    if crate::evalharness::variants::parse_date(v).is_err() {
                        return Err(SynthError::InvariantViolation(format!(
                            "date-typed fact {v:?} is not in DD/MM/YYYY, MM/YYYY or YYYY form"
                        )));
                    }
                }
            }
            if !match_factual(&out.answer, &fact_ref) {
                return Err(SynthError::InvariantViolation(format!(
                    "answer does not contain a rendering of the fact {:?}",
                    out.identified_fact.fact_target_value.render()
                )));
            }
        }
        TaskOutput::FactualSummaryOf(out) => {
            if out.summary.is_empty() {
                return Err(SynthError::InvariantViolation(
                    "fact list must contain at least one fact".into(),
                ));
            }
            for fact in &out.summary {
                require_non_empty("fact", &fact.fact)?;
                require_non_empty("question", &fact.question)?;
            }
        }
    }
    Ok(())
}

/// Convert a validated output to an instruction record. The split is
/// inherited from the source segment.
pub fn to_record(task: TaskKind, output: &TaskOutput, segment: &Segment) -> InstructionRecord {
    let (user, assistant) = match output {
        TaskOutput::Summary(out) => (
            format!("{}\n{}", segment.text, out.summarization_question),
            out.summary.clone(),
        ),
        TaskOutput::Titling(out) => (
            format!("{}\n{}", segment.text, out.titling_question),
            out.title.clone(),
        ),
        TaskOutput::Mcqa(out) => {
            let mut user = out.question.clone();
            for choice in &out.choices {
                user.push('\n');
                user.push_str(&format!(
                    "{} - {}",
                    choice.letter.as_char(),
                    choice.answer_content
                ));
            }
            let winner = out
                .choices
                .iter()
                .find(|c| c.is_true)
                .expect("validated output has one true choice");
            let assistant = format!(
                "La bonne réponse est la lettre {}). {}",
                winner.letter.as_char(),
                out.justification
            );
            (user, assistant)
        }
        TaskOutput::FactualQa(out) => (out.question.clone(), out.answer.clone()),
        TaskOutput::FactualSummaryOf(out) => {
            let user = format!("Lister les faits importants du texte suivant: {}", segment.text);
            let assistant = out
                .summary
                .iter()
                .map(|f| format!("-{}", f.fact))
                .collect::<Vec<_>>()
                .join("\n");
            (user, assistant)
        }
    };
    InstructionRecord {
        id: format!("{}-{}", task.name(), segment.id),
        task: task.into(),
        source_segment_id: Some(segment.id.clone()),
        system: None,
        user,
        assistant,
        provenance: Provenance {
            generator: GeneratorKind::Llm,
            model: None,
            derivation: None,
        },
        split: segment.split,
    }
}

/// The context-reference phrases that disqualify a context-free instruction.
pub const FORBIDDEN_PHRASES: [&str; 7] = [
    "mentionne",
    "selon le",
    "d'après le",
    "le document",
    "ce document",
    "le texte",
    "ce texte",
];

/// Case-insensitive matching text: NFC-normalized, lowercased, typographic
/// apostrophes unified with the ASCII one.
fn curation_key(text: &str) -> String {
    text.nfc()
        .flat_map(char::to_lowercase)
        .map(|c| match c {
            '\u{2019}' | '\u{02BC}' => '\'',
            c => c,
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RejectedRecord {
    pub record: InstructionRecord,
    pub reason: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CurationOutcome {
    pub kept: Vec<InstructionRecord>,
    pub rejected: Vec<RejectedRecord>,
}

/// Reject MCQA and factual-QA records whose user text references the source
/// document through one of the forbidden phrases; every other task passes
/// untouched.
pub fn curate(records: Vec<InstructionRecord>) -> CurationOutcome {
    let mut outcome = CurationOutcome::default();
    for record in records {
        let filtered_task = matches!(record.task, RecordKind::Mcqa | RecordKind::FactualQa);
        let hit = if filtered_task {
            let key = curation_key(&record.user);
            FORBIDDEN_PHRASES.iter().find(|p| key.contains(**p)).copied()
        } else {
            None
        };
        match hit {
            Some(phrase) => outcome.rejected.push(RejectedRecord {
                record,
                reason: format!("user text contains forbidden phrase {phrase:?}"),
            }),
            None => outcome.kept.push(record),
        }
    }
    outcome
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;

    fn segment(collection: &str, text: &str) -> Segment {
        Segment {
            id: format!("{collection}-d-s0000"),
            doc_id: format!("{collection}-d"),
            index_in_doc: 0,
            text: text.to_string(),
            char_count: text.chars().count(),
            token_count: text.split_whitespace().count(),
            split: Split::Train,
            collection: collection.to_string(),
        }
    }

    #[test]
    fn mcqa_request_ends_with_choice_count_directive() {
        let seg = segment("minarm_adt", "Un texte sur la défense.");
        for seed in 0..20 {
            let req = build_request(TaskKind::Mcqa, &seg, seed, &GenSettings::default()).unwrap();
            let system = &req.messages[0].content;
            assert!(
                system.ends_with("4 different choices: a, b, c, d.")
                    || system.ends_with("5 different choices: a, b, c, d, e."),
                "unexpected system tail: {system:?}"
            );
            assert_eq!(req.messages[1].content, seg.text);
        }
    }

    #[test]
    fn factual_request_has_no_additional_information() {
        let seg = segment("minarm_adt", "Un texte.");
        let a = build_request(TaskKind::FactualQa, &seg, 1, &GenSettings::default()).unwrap();
        let b = build_request(TaskKind::FactualQa, &seg, 999, &GenSettings::default()).unwrap();
        // seed-independent because there is no grammar to expand
        assert_eq!(a.messages[0].content, b.messages[0].content);
        assert!(a.messages[0].content.ends_with("written in french."));
    }

    #[test]
    fn build_request_is_deterministic() {
        let seg = segment("minarm_adt", "Texte.");
        let a = build_request(TaskKind::Summary, &seg, 5, &GenSettings::default()).unwrap();
        let b = build_request(TaskKind::Summary, &seg, 5, &GenSettings::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn of_task_requires_journalistic_collection() {
        let seg = segment("minarm_adt", "Texte.");
        assert!(matches!(
            build_request(TaskKind::FactualSummaryOf, &seg, 0, &GenSettings::default()),
            Err(SynthError::TaskCollectionMismatch { .. })
        ));
        let seg = segment("of_articles", "Article.");
        let req =
            build_request(TaskKind::FactualSummaryOf, &seg, 0, &GenSettings::default()).unwrap();
        assert!(req.messages[0].content.starts_with("Vous êtes un assistant AI"));
        assert!(req.messages[1].content.contains("Article."));
    }

    fn mcqa_payload(n_choices: usize, true_index: usize) -> Value {
        let letters = ["a", "b", "c", "d", "e"];
        let choices: Vec<Value> = (0..n_choices)
            .map(|i| {
                serde_json::json!({
                    "letter": letters[i],
                    "answer_content": format!("réponse {}", letters[i]),
                    "is_true": i == true_index,
                })
            })
            .collect();
        serde_json::json!({
            "question": "Quelle île accueille l'aéroport ?",
            "choices": choices,
            "justification": "L'aéroport est situé sur l'île de Petite Terre.",
        })
    }

    #[test]
    fn mcqa_five_choices_one_true_is_accepted() {
        let out = parse_output(TaskKind::Mcqa, &mcqa_payload(5, 4)).unwrap();
        assert!(matches!(out, TaskOutput::Mcqa(_)));
    }

    #[test]
    fn mcqa_two_true_choices_is_invariant_violation() {
        let mut payload = mcqa_payload(5, 0);
        payload["choices"][2]["is_true"] = Value::Bool(true);
        assert!(matches!(
            parse_output(TaskKind::Mcqa, &payload),
            Err(SynthError::InvariantViolation(_))
        ));
    }

    #[test]
    fn mcqa_letters_must_be_prefix_in_order() {
        let mut payload = mcqa_payload(4, 0);
        payload["choices"][3]["letter"] = Value::String("e".into());
        assert!(matches!(
            parse_output(TaskKind::Mcqa, &payload),
            Err(SynthError::InvariantViolation(_))
        ));
    }

    #[test]
    fn empty_summary_is_schema_violation() {
        let payload = serde_json::json!({
            "summarization_question": "Résumer le texte",
            "summary": ""
        });
        assert!(matches!(
            parse_output(TaskKind::Summary, &payload),
            Err(SynthError::SchemaViolation(_))
        ));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let payload = serde_json::json!({
            "summarization_question": "Résumer le texte",
            "summary": "Un résumé.",
            "extra": 1
        });
        assert!(matches!(
            parse_output(TaskKind::Summary, &payload),
            Err(SynthError::SchemaViolation(_))
        ));
    }

    #[test]
    fn factual_answer_must_contain_fact() {
        let payload = serde_json::json!({
            "identified_fact": {"fact_target_value": "28/03/2023", "fact_target_type": "date"},
            "question": "Quelle est la date de lancement ?",
            "answer": "L'expérimentation a été lancée le 28 mars 2023.",
        });
        assert!(parse_output(TaskKind::FactualQa, &payload).is_ok());
        let bad = serde_json::json!({
            "identified_fact": {"fact_target_value": "28/03/2023", "fact_target_type": "date"},
            "question": "Quelle est la date de lancement ?",
            "answer": "Aucune idée.",
        });
        assert!(matches!(
            parse_output(TaskKind::FactualQa, &bad),
            Err(SynthError::InvariantViolation(_))
        ));
    }

    #[test]
    fn parse_serialize_roundtrip() {
        let out = parse_output(TaskKind::Mcqa, &mcqa_payload(4, 2)).unwrap();
        if let TaskOutput::Mcqa(mcqa) = &out {
            let back = parse_output(TaskKind::Mcqa, &serde_json::to_value(mcqa).unwrap()).unwrap();
            assert_eq!(back, out);
        } else {
            panic!("wrong variant");
        }
    }

    #[test]
    fn mcqa_record_follows_the_answer_template() {
        let seg = segment("minarm_adt", "Contexte.");
        let out = parse_output(TaskKind::Mcqa, &mcqa_payload(5, 4)).unwrap();
        let record = to_record(TaskKind::Mcqa, &out, &seg);
        assert!(record
            .assistant
            .starts_with("La bonne réponse est la lettre e)."));
        assert!(record.user.contains("\na - réponse a"));
        assert_eq!(record.split, Split::Train);
    }

    #[test]
    fn of_record_lists_facts_with_dash_lines() {
        let seg = segment("of_articles", "Article complet.");
        let payload = serde_json::json!({
            "summary": [
                {"fact": "Fait un.", "question": "Q1 ?"},
                {"fact": "Fait deux.", "question": "Q2 ?"},
                {"fact": "Fait trois.", "question": "Q3 ?"},
                {"fact": "Fait quatre.", "question": "Q4 ?"},
            ]
        });
        let out = parse_output(TaskKind::FactualSummaryOf, &payload).unwrap();
        let record = to_record(TaskKind::FactualSummaryOf, &out, &seg);
        assert!(record
            .user
            .starts_with("Lister les faits importants du texte suivant: "));
        let lines: Vec<&str> = record.assistant.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines.iter().all(|l| l.starts_with('-')));
    }

    #[test]
    fn factual_record_is_direct_mapping() {
        let seg = segment("minarm_adt", "Contexte.");
        let payload = serde_json::json!({
            "identified_fact": {"fact_target_value": 120000, "fact_target_type": "montant"},
            "question": "Combien coûte le projet ?",
            "answer": "Le projet coûte 120 000 euros.",
        });
        let out = parse_output(TaskKind::FactualQa, &payload).unwrap();
        let record = to_record(TaskKind::FactualQa, &out, &seg);
        assert_eq!(record.user, "Combien coûte le projet ?");
        assert_eq!(record.assistant, "Le projet coûte 120 000 euros.");
    }

    fn record(task: RecordKind, user: &str) -> InstructionRecord {
        InstructionRecord {
            id: format!("{task:?}-{}", user.len()),
            task,
            source_segment_id: None,
            system: None,
            user: user.to_string(),
            assistant: "réponse".into(),
            provenance: Provenance {
                generator: GeneratorKind::Llm,
                model: None,
                derivation: None,
            },
            split: Split::Train,
        }
    }

    #[test]
    fn curation_rejects_context_references_in_filtered_tasks() {
        let outcome = curate(vec![record(
            RecordKind::Mcqa,
            "D'après le texte, qui commande l'opération ?",
        )]);
        assert!(outcome.kept.is_empty());
        assert_eq!(outcome.rejected.len(), 1);
        assert!(outcome.rejected[0].reason.contains("d'après le"));
    }

    #[test]
    fn curation_keeps_other_tasks_untouched() {
        let outcome = curate(vec![record(
            RecordKind::Summary,
            "Résume le texte ci-dessus.",
        )]);
        assert_eq!(outcome.kept.len(), 1);
    }

    #[test]
    fn curation_keeps_clean_records() {
        let outcome = curate(vec![record(
            RecordKind::Mcqa,
            "Qui commande l'opération Barkhane ?",
        )]);
        assert_eq!(outcome.kept.len(), 1);
    }

    #[test]
    fn curation_is_case_and_apostrophe_insensitive() {
        let outcome = curate(vec![record(
            RecordKind::FactualQa,
            "D\u{2019}APRÈS LE passage, combien… ?",
        )]);
        assert_eq!(outcome.rejected.len(), 1);
    }
}
