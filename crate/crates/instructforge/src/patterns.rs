//! Patron (template) instructions from acronym and translation dictionaries,
//! plus the long generative instruction families: multi-item combos and
//! inverted summaries.

use std::path::Path;

use indexmap::IndexMap;
use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Segment, Split};
use crate::grammar::{builtin, expand, Atom, BuiltinGrammar, Grammar, GrammarError};
use crate::seeding::derive_seed;
use crate::synth::{GeneratorKind, InstructionRecord, Provenance, RecordKind};

#[derive(Debug, Error)]
pub enum PatternsError {
    #[error("dictionary is empty")]
    EmptyDict,
    #[error("dictionary has {found} entries; long combos need at least {needed}")]
    DictTooSmall { needed: usize, found: usize },
    #[error("expected a {expected:?} record, found {found:?}")]
    TaskMismatch { expected: String, found: String },
    #[error("record {record_id:?} was not generated from segment {segment_id:?}")]
    SourceMismatch { record_id: String, segment_id: String },
    #[error("invalid dictionary: {0}")]
    BadDict(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
}

/// Acronym → meanings. Multiple meanings are allowed and all of them are
/// kept.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AcronymDict(pub IndexMap<String, Vec<String>>);

impl AcronymDict {
    pub fn from_json_str(raw: &str) -> Result<Self, PatternsError> {
        let map: IndexMap<String, Vec<String>> = serde_json::from_str(raw)
            .map_err(|e| PatternsError::BadDict(format!("invalid acronym JSON: {e}")))?;
        let dict = AcronymDict(map);
        dict.validate()?;
        Ok(dict.deduplicated())
    }

    pub fn from_file(path: &Path) -> Result<Self, PatternsError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<(), PatternsError> {
        for (acro, meanings) in &self.0 {
            if acro.trim().is_empty() {
                return Err(PatternsError::BadDict("empty acronym key".into()));
            }
            if meanings.iter().all(|m| m.trim().is_empty()) {
                return Err(PatternsError::BadDict(format!(
                    "acronym {acro:?} has no meaning"
                )));
            }
        }
        Ok(())
    }

    fn deduplicated(mut self) -> Self {
        for meanings in self.0.values_mut() {
            let mut seen = indexmap::IndexSet::new();
            meanings.retain(|m| !m.trim().is_empty() && seen.insert(m.clone()));
        }
        self
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Ordered (french, english) pairs.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TranslationDict(pub Vec<(String, String)>);

impl TranslationDict {
    /// Parse the tab-separated two-column format; `#` starts a comment line.
    pub fn from_tsv_str(raw: &str) -> Result<Self, PatternsError> {
        let mut pairs = Vec::new();
        for (lineno, line) in raw.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (fr, en) = line.split_once('\t').ok_or_else(|| {
                PatternsError::BadDict(format!("line {}: expected fr\\ten", lineno + 1))
            })?;
            if fr.trim().is_empty() || en.trim().is_empty() {
                return Err(PatternsError::BadDict(format!(
                    "line {}: both sides must be non-empty",
                    lineno + 1
                )));
            }
            pairs.push((fr.trim().to_string(), en.trim().to_string()));
        }
        Ok(TranslationDict(pairs))
    }

    pub fn from_file(path: &Path) -> Result<Self, PatternsError> {
        Self::from_tsv_str(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranslationDirection {
    FrToEn,
    EnToFr,
}

impl TranslationDirection {
    fn patron(&self) -> BuiltinGrammar {
        match self {
            TranslationDirection::FrToEn => BuiltinGrammar::TranslationFrToEn,
            TranslationDirection::EnToFr => BuiltinGrammar::TranslationEnToFr,
        }
    }

    fn tag(&self) -> &'static str {
        match self {
            TranslationDirection::FrToEn => "fr_en",
            TranslationDirection::EnToFr => "en_fr",
        }
    }
}

fn short_digest(key: &str) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(&Sha256::digest(key.as_bytes())[..6])
}

fn meaning_sentence(acronym: &str, meanings: &[String]) -> String {
    format!("{} signifie {}.", acronym, meanings.join(" ou "))
}

fn patron_record(
    id: String,
    task: RecordKind,
    generator: GeneratorKind,
    user: String,
    assistant: String,
    derivation: String,
) -> InstructionRecord {
    InstructionRecord {
        id,
        task,
        source_segment_id: None,
        system: None,
        user,
        assistant,
        provenance: Provenance {
            generator,
            model: None,
            derivation: Some(derivation),
        },
        split: Split::Unassigned,
    }
}

/// One instruction per acronym, the question drawn from the acronym patron.
/// The answer gives the meaning; all meanings are listed when there are
/// several, separated by " ou ".
pub fn gen_acronym_instructions(
    dict: &AcronymDict,
    seed: u64,
) -> Result<Vec<InstructionRecord>, PatternsError> {
    if dict.is_empty() {
        return Err(PatternsError::EmptyDict);
    }
    let grammar = builtin(BuiltinGrammar::AcronymPatron);
    dict.0
        .iter()
        .map(|(acronym, meanings)| {
            let item_seed = derive_seed(seed, acronym);
            let mut slots = std::collections::BTreeMap::new();
            slots.insert("acronym".to_string(), acronym.clone());
            let derivation = expand(&grammar, item_seed, &slots)?;
            Ok(patron_record(
                format!("acronym-{}", short_digest(acronym)),
                RecordKind::Acronym,
                GeneratorKind::Patron,
                derivation.text,
                meaning_sentence(acronym, meanings),
                format!("acronym_patron seed={item_seed}"),
            ))
        })
        .collect()
}

/// One instruction per translation pair through the directional patron; the
/// source side fills the `{sentence}` slot, the target side is the answer.
pub fn gen_translation_instructions(
    dict: &TranslationDict,
    direction: TranslationDirection,
    seed: u64,
) -> Result<Vec<InstructionRecord>, PatternsError> {
    if dict.is_empty() {
        return Err(PatternsError::EmptyDict);
    }
    let grammar = builtin(direction.patron());
    dict.0
        .iter()
        .map(|(fr, en)| {
            let (source, target) = match direction {
                TranslationDirection::FrToEn => (fr, en),
                TranslationDirection::EnToFr => (en, fr),
            };
            let pair_key = format!("{fr}\t{en}");
            let item_seed = derive_seed(seed, &pair_key);
            let mut slots = std::collections::BTreeMap::new();
            slots.insert("sentence".to_string(), source.clone());
            let derivation = expand(&grammar, item_seed, &slots)?;
            Ok(patron_record(
                format!("translation-{}-{}", direction.tag(), short_digest(&pair_key)),
                RecordKind::Translation,
                GeneratorKind::Patron,
                derivation.text,
                target.clone(),
                format!("{} seed={item_seed}", direction.patron().name()),
            ))
        })
        .collect()
}

/// Dictionary behind a long combo instruction.
pub enum LongComboSource<'a> {
    Acronyms(&'a AcronymDict),
    Translations(&'a TranslationDict),
}

/// Default sampling range for long combos: 2 to 30 items.
pub const DEFAULT_COMBO_RANGE: (usize, usize) = (2, 30);

/// Build one multi-item instruction: k entries sampled without replacement,
/// k uniform in `[count_range.0, min(count_range.1, dict size)]`. The user
/// message enumerates the items; the answer enumerates the solutions in the
/// same order.
pub fn gen_long_combo(
    source: &LongComboSource,
    seed: u64,
    count_range: (usize, usize),
) -> Result<InstructionRecord, PatternsError> {
    let n = match source {
        LongComboSource::Acronyms(d) => d.len(),
        LongComboSource::Translations(d) => d.len(),
    };
    if n < count_range.0.max(2) {
        return Err(PatternsError::DictTooSmall {
            needed: count_range.0.max(2),
            found: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = count_range.0.max(2);
    let hi = count_range.1.min(n);
    let k = rng.random_range(lo..=hi);
    let picked = sample(&mut rng, n, k);

    match source {
        LongComboSource::Acronyms(dict) => {
            let mut user = String::from("Explique les acronymes suivants :");
            let mut assistant = String::new();
            for (rank, idx) in picked.iter().enumerate() {
                let (acronym, meanings) = dict.0.get_index(idx).expect("index sampled in range");
                user.push_str(&format!("\n{}. {}", rank + 1, acronym));
                if rank > 0 {
                    assistant.push('\n');
                }
                assistant.push_str(&format!(
                    "{}. {}",
                    rank + 1,
                    meaning_sentence(acronym, meanings)
                ));
            }
            Ok(patron_record(
                format!("long-acronyms-{seed}"),
                RecordKind::LongAcronyms,
                GeneratorKind::Long,
                user,
                assistant,
                format!("combo k={k} seed={seed}"),
            ))
        }
        LongComboSource::Translations(dict) => {
            let direction = if rng.random_bool(0.5) {
                TranslationDirection::FrToEn
            } else {
                TranslationDirection::EnToFr
            };
            let header = match direction {
                TranslationDirection::FrToEn => "Traduis les textes suivants en anglais :",
                TranslationDirection::EnToFr => "Traduis les textes suivants en français :",
            };
            let mut user = String::from(header);
            let mut assistant = String::new();
            for (rank, idx) in picked.iter().enumerate() {
                let (fr, en) = &dict.0[idx];
                let (source_text, target_text) = match direction {
                    TranslationDirection::FrToEn => (fr, en),
                    TranslationDirection::EnToFr => (en, fr),
                };
                user.push_str(&format!("\n{}. {}", rank + 1, source_text));
                if rank > 0 {
                    assistant.push('\n');
                }
                assistant.push_str(&format!("{}. {}", rank + 1, target_text));
            }
            Ok(patron_record(
                format!("long-translations-{seed}"),
                RecordKind::LongTranslations,
                GeneratorKind::Long,
                user,
                assistant,
                format!("combo k={k} direction={} seed={seed}", direction.tag()),
            ))
        }
    }
}

/// Phrasing wheel for inverted summaries. Not one of the transcribed
/// grammars; it diversifies the expansion instruction.
fn inversion_grammar() -> Grammar {
    let mut rules = IndexMap::new();
    rules.insert(
        "Prompt".to_string(),
        vec![
            vec![Atom::t("Rédige un paragraphe complet à partir du résumé suivant :")],
            vec![Atom::t("Développe le résumé ci-dessous en un texte complet :")],
            vec![Atom::t("À partir de ce résumé, rédige le paragraphe d'origine :")],
            vec![Atom::t("Écris un texte détaillé correspondant au résumé suivant :")],
        ],
    );
    Grammar {
        start: "Prompt".to_string(),
        rules,
    }
}

/// Invert a summary instruction: the user presents the summary and asks for
/// the full paragraph; the answer is the source segment text, byte for byte.
pub fn gen_inverted_summary(
    record: &InstructionRecord,
    segment: &Segment,
) -> Result<InstructionRecord, PatternsError> {
    if record.task != RecordKind::Summary {
        return Err(PatternsError::TaskMismatch {
            expected: "summary".into(),
            found: format!("{:?}", record.task).to_lowercase(),
        });
    }
    if record.source_segment_id.as_deref() != Some(segment.id.as_str()) {
        return Err(PatternsError::SourceMismatch {
            record_id: record.id.clone(),
            segment_id: segment.id.clone(),
        });
    }
    let seed = derive_seed(0x1f, &record.id);
    let phrase = expand(&inversion_grammar(), seed, &Default::default())?.text;
    Ok(InstructionRecord {
        id: format!("inverted_summary-{}", segment.id),
        task: RecordKind::InvertedSummary,
        source_segment_id: Some(segment.id.clone()),
        system: None,
        user: format!("{phrase}\n{}", record.assistant),
        assistant: segment.text.clone(),
        provenance: Provenance {
            generator: GeneratorKind::Long,
            model: None,
            derivation: Some(format!("inversion seed={seed}")),
        },
        split: segment.split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{enumerate, expand_symbolic};

    fn acronyms() -> AcronymDict {
        AcronymDict::from_json_str(
            r#"{
                "OTAN": ["Organisation du Traité de l'Atlantique Nord"],
                "DGA": ["Direction Générale de l'Armement", "Division Générale Adjointe"]
            }"#,
        )
        .unwrap()
    }

    fn translations() -> TranslationDict {
        TranslationDict::from_tsv_str(
            "# vocabulaire\nbataillon\tbattalion\nchar de combat\tmain battle tank\nfusil\trifle\n",
        )
        .unwrap()
    }

    #[test]
    fn acronym_records_carry_acronym_and_meaning() {
        let records = gen_acronym_instructions(&acronyms(), 7).unwrap();
        assert_eq!(records.len(), 2);
        let otan = &records[0];
        assert!(otan.user.contains("OTAN"));
        assert!(otan
            .assistant
            .contains("Organisation du Traité de l'Atlantique Nord"));
    }

    #[test]
    fn multi_meaning_acronyms_list_all_meanings() {
        let records = gen_acronym_instructions(&acronyms(), 7).unwrap();
        let dga = &records[1];
        assert!(dga.assistant.contains("Direction Générale de l'Armement"));
        assert!(dga.assistant.contains("Division Générale Adjointe"));
        assert!(dga.assistant.contains(" ou "));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen_acronym_instructions(&acronyms(), 7).unwrap();
        let b = gen_acronym_instructions(&acronyms(), 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_dict_is_rejected() {
        assert!(matches!(
            gen_acronym_instructions(&AcronymDict::default(), 1),
            Err(PatternsError::EmptyDict)
        ));
    }

    #[test]
    fn translation_direction_swaps_sides() {
        let dict = translations();
        let fr_en = gen_translation_instructions(&dict, TranslationDirection::FrToEn, 3).unwrap();
        assert!(fr_en[0].user.contains("bataillon"));
        assert_eq!(fr_en[0].assistant, "battalion");
        let en_fr = gen_translation_instructions(&dict, TranslationDirection::EnToFr, 3).unwrap();
        assert!(en_fr[0].user.contains("battalion"));
        assert_eq!(en_fr[0].assistant, "bataillon");
    }

    #[test]
    fn patron_users_stay_inside_the_grammar_language() {
        // Re-abstract the slot and check membership in the enumerated set.
        let grammar = builtin(BuiltinGrammar::AcronymPatron);
        let language: std::collections::HashSet<String> =
            enumerate(&grammar, 10_000).unwrap().into_iter().collect();
        for record in gen_acronym_instructions(&acronyms(), 99).unwrap() {
            let acro = if record.user.contains("OTAN") { "OTAN" } else { "DGA" };
            let abstracted = record.user.replace(acro, "{acronym}");
            assert!(language.contains(&abstracted), "{abstracted:?}");
        }
        // punctuation wheel of the translation patron reaches all three forms
        let g = builtin(BuiltinGrammar::TranslationEnToFr);
        let mut endings = std::collections::HashSet::new();
        for seed in 0..200 {
            let text = expand_symbolic(&g, seed).unwrap().text;
            if text.ends_with(" ?") {
                endings.insert("?");
            } else if text.ends_with('.') {
                endings.insert(".");
            } else if text.ends_with("{sentence}") || text.ends_with('\'') {
                endings.insert("");
            }
        }
        assert_eq!(endings.len(), 3);
    }

    #[test]
    fn combo_with_minimal_dict_uses_both_entries() {
        let dict = AcronymDict::from_json_str(r#"{"A1": ["sens un"], "A2": ["sens deux"]}"#).unwrap();
        let record =
            gen_long_combo(&LongComboSource::Acronyms(&dict), 5, DEFAULT_COMBO_RANGE).unwrap();
        assert!(record.user.contains("A1"));
        assert!(record.user.contains("A2"));
        assert_eq!(record.task, RecordKind::LongAcronyms);
    }

    #[test]
    fn combo_items_and_answers_align() {
        let dict = translations();
        for seed in 0..20 {
            let record =
                gen_long_combo(&LongComboSource::Translations(&dict), seed, DEFAULT_COMBO_RANGE)
                    .unwrap();
            let user_items = record.user.lines().count() - 1;
            let answer_items = record.assistant.lines().count();
            assert_eq!(user_items, answer_items);
        }
    }

    #[test]
    fn combo_rejects_tiny_dicts() {
        let dict = AcronymDict::from_json_str(r#"{"A1": ["sens"]}"#).unwrap();
        assert!(matches!(
            gen_long_combo(&LongComboSource::Acronyms(&dict), 1, DEFAULT_COMBO_RANGE),
            Err(PatternsError::DictTooSmall { .. })
        ));
    }

    fn summary_record(segment: &Segment) -> InstructionRecord {
        InstructionRecord {
            id: format!("summary-{}", segment.id),
            task: RecordKind::Summary,
            source_segment_id: Some(segment.id.clone()),
            system: None,
            user: format!("{}\nRésumer le texte", segment.text),
            assistant: "Un résumé bref.".into(),
            provenance: Provenance {
                generator: GeneratorKind::Llm,
                model: None,
                derivation: None,
            },
            split: segment.split,
        }
    }

    fn segment() -> Segment {
        Segment {
            id: "c1-d-s0000".into(),
            doc_id: "c1-d".into(),
            index_in_doc: 0,
            text: "Le paragraphe complet d'origine, avec tous ses détails.".into(),
            char_count: 55,
            token_count: 9,
            split: Split::Validation,
            collection: "c1".into(),
        }
    }

    #[test]
    fn inversion_swaps_summary_and_paragraph() {
        let seg = segment();
        let record = summary_record(&seg);
        let inverted = gen_inverted_summary(&record, &seg).unwrap();
        assert!(inverted.user.contains("Un résumé bref."));
        assert_eq!(inverted.assistant, seg.text);
        assert_eq!(inverted.split, seg.split);
    }

    #[test]
    fn inversion_rejects_non_summary_records() {
        let seg = segment();
        let mut record = summary_record(&seg);
        record.task = RecordKind::Titling;
        assert!(matches!(
            gen_inverted_summary(&record, &seg),
            Err(PatternsError::TaskMismatch { .. })
        ));
    }

    #[test]
    fn inversion_rejects_foreign_segments() {
        let seg = segment();
        let mut record = summary_record(&seg);
        record.source_segment_id = Some("autre".into());
        assert!(matches!(
            gen_inverted_summary(&record, &seg),
            Err(PatternsError::SourceMismatch { .. })
        ));
    }

    #[test]
    fn combo_k_spans_range_over_many_seeds() {
        let mut dict_map = IndexMap::new();
        for i in 0..50 {
            dict_map.insert(format!("AC{i}"), vec![format!("sens {i}")]);
        }
        let dict = AcronymDict(dict_map);
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..1000 {
            let record =
                gen_long_combo(&LongComboSource::Acronyms(&dict), seed, DEFAULT_COMBO_RANGE)
                    .unwrap();
            let k = record.user.lines().count() - 1;
            assert!((2..=30).contains(&k));
            seen.insert(k);
        }
        assert!(seen.contains(&2));
        assert!(seen.contains(&30));
        assert!(seen.len() >= 25, "k coverage too thin: {seen:?}");
    }
}
