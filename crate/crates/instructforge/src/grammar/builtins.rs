//! Built-in grammars used by the generation pipeline: the per-task
//! additional-information grammars, the acronym and translation patrons, and
//! the system-prompt grammar. Alternative texts are transcribed literally,
//! including their leading/trailing spaces; see the unit tests for the
//! frozen counts.

use indexmap::IndexMap;

use super::{Alternative, Atom, Grammar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BuiltinGrammar {
    /// Additional MCQA generation directives (choice-count wheel).
    QcmInfo,
    /// Additional summary generation directives (context or nothing).
    SummaryInfo,
    /// Additional titling generation directives (constraint wheel).
    TitlingInfo,
    /// Acronym-explanation question patron, slot `{acronym}`.
    AcronymPatron,
    /// French-to-English translation patron, slot `{sentence}`.
    TranslationFrToEn,
    /// English-to-French translation patron, slot `{sentence}`.
    TranslationEnToFr,
    /// System-prompt diversification grammar.
    SystemPrompt,
}

impl BuiltinGrammar {
    pub const ALL: &'static [BuiltinGrammar] = &[
        BuiltinGrammar::QcmInfo,
        BuiltinGrammar::SummaryInfo,
        BuiltinGrammar::TitlingInfo,
        BuiltinGrammar::AcronymPatron,
        BuiltinGrammar::TranslationFrToEn,
        BuiltinGrammar::TranslationEnToFr,
        BuiltinGrammar::SystemPrompt,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            BuiltinGrammar::QcmInfo => "qcm_info",
            BuiltinGrammar::SummaryInfo => "summary_info",
            BuiltinGrammar::TitlingInfo => "titling_info",
            BuiltinGrammar::AcronymPatron => "acronym_patron",
            BuiltinGrammar::TranslationFrToEn => "translation_fr_to_en",
            BuiltinGrammar::TranslationEnToFr => "translation_en_to_fr",
            BuiltinGrammar::SystemPrompt => "system_prompt",
        }
    }
}

fn t(s: &str) -> Atom {
    Atom::t(s)
}
fn nt(s: &str) -> Atom {
    Atom::nt(s)
}
fn slot(s: &str) -> Atom {
    Atom::slot(s)
}

fn terminals(texts: &[&str]) -> Vec<Alternative> {
    texts.iter().map(|s| vec![t(s)]).collect()
}

pub(super) fn build(name: BuiltinGrammar) -> Grammar {
    let grammar = match name {
        BuiltinGrammar::QcmInfo => qcm_info(),
        BuiltinGrammar::SummaryInfo => summary_info(),
        BuiltinGrammar::TitlingInfo => titling_info(),
        BuiltinGrammar::AcronymPatron => acronym_patron(),
        BuiltinGrammar::TranslationFrToEn => translation_patron(FR_TO_EN_PREFIXES),
        BuiltinGrammar::TranslationEnToFr => translation_patron(EN_TO_FR_PREFIXES),
        BuiltinGrammar::SystemPrompt => system_prompt(),
    };
    grammar.validate().expect("builtin grammar is valid");
    grammar
}

fn grammar(start: &str, rules: Vec<(&str, Vec<Alternative>)>) -> Grammar {
    let mut map = IndexMap::new();
    for (name, alts) in rules {
        map.insert(name.to_string(), alts);
    }
    Grammar {
        start: start.to_string(),
        rules: map,
    }
}

fn qcm_info() -> Grammar {
    grammar(
        "Prompt",
        vec![
            (
                "Prompt",
                vec![vec![
                    nt("InitialInstruction"),
                    t("Important instruction to follow: You will generate "),
                    nt("NumberOfChoices"),
                ]],
            ),
            (
                "InitialInstruction",
                terminals(&["Your question must be context-free: this means it should be answerable even without seeing the input text. Your question should concern an atomic fact and the answers should be short & easily verifiable. The different options provided to the user must all be sensible (but all but one should be actually true). In your justification, you will not refer to the original text."]),
            ),
            (
                "NumberOfChoices",
                terminals(&[
                    "4 different choices: a, b, c, d.",
                    "5 different choices: a, b, c, d, e.",
                ]),
            ),
        ],
    )
}

fn summary_info() -> Grammar {
    grammar(
        "Prompt",
        vec![
            ("Prompt", vec![vec![nt("Context")], vec![t("")]]),
            (
                "Context",
                terminals(&["You will ask the user a summarization question. Your summarization question must only ask the user to summarize and not mention the subject of the text."]),
            ),
        ],
    )
}

fn titling_info() -> Grammar {
    grammar(
        "Prompt",
        vec![
            (
                "Prompt",
                vec![vec![
                    t("The question asked must follow this constraint: "),
                    nt("constraint"),
                ]],
            ),
            (
                "constraint",
                terminals(&[
                    "It must be short and to the point ('Titrer ce document')",
                    "It must be short and to the point ('Générer un titre pertinent pour le document-ci dessus' or slight alternatives)",
                    "You must specify a certain titling style",
                    "You must specify that the title should be suitable for a document of type [YOUR CHOICE]",
                    "You must specify a target style for the title and that the title should be suitable for a document of type [YOUR CHOICE]",
                ]),
            ),
        ],
    )
}

fn acronym_patron() -> Grammar {
    grammar(
        "Prompt",
        vec![
            (
                "Prompt",
                vec![
                    vec![
                        nt("AmorceGenerale"),
                        nt("QuestionType1WithDelimiterAndAcronym"),
                    ],
                    vec![nt("QuestionType2WithDelimiterAndAcronym")],
                ],
            ),
            (
                "AmorceGenerale",
                terminals(&[
                    "",
                    "A partir de tes connaissances, répond à cette question : ",
                    "Peux-tu m'expliquer ce ",
                    "J'aimerais comprendre ce ",
                    "Je cherche à savoir ce ",
                ]),
            ),
            (
                "DenominationAcronymeLe",
                terminals(&["le sigle", "l'acronyme"]),
            ),
            (
                "DenominationAcronymeDu",
                terminals(&["du sigle", "de l'acronyme"]),
            ),
            (
                "DenominationAcronymeCe",
                terminals(&["ce sigle", "cet acronyme"]),
            ),
            ("Suivant", terminals(&[" suivant ", ""])),
            (
                "QuestionType1",
                vec![
                    vec![t("que veut dire "), nt("DenominationAcronymeLe")],
                    vec![t("quelle est la signification "), nt("DenominationAcronymeDu")],
                    vec![t("que signifie "), nt("DenominationAcronymeLe")],
                ],
            ),
            ("Delimiter", terminals(&[":", "?", "->"])),
            (
                "QuestionType1WithDelimiter",
                vec![vec![nt("QuestionType1"), nt("Suivant"), nt("Delimiter")]],
            ),
            (
                "QuestionType1WithDelimiterAndAcronym",
                vec![vec![nt("QuestionType1WithDelimiter"), t(" "), slot("acronym")]],
            ),
            (
                "QuestionType2",
                vec![vec![
                    t("quel est le sens de "),
                    nt("DenominationAcronymeCe"),
                    t(" ?"),
                ]],
            ),
            (
                "QuestionType2WithDelimiterAndAcronym",
                vec![vec![t("'"), slot("acronym"), t("' -> "), nt("QuestionType2")]],
            ),
        ],
    )
}

/// Prefixes of the patron asking for a translation into English. The first
/// entry reads "en français" in the source material; it is transcribed
/// verbatim.
const FR_TO_EN_PREFIXES: &[&str] = &[
    "Peux-tu me traduire en français ",
    "Pourrais-tu traduire en anglais ",
    "J'aimerais savoir comment on dit en anglais ",
    "Comment dire en anglais ",
    "Traduis en anglais ",
    "Merci de traduire en anglais ",
    "Pourrais-tu m'aider à traduire en anglais ",
    "Aide-moi à traduire en anglais ",
];

const EN_TO_FR_PREFIXES: &[&str] = &[
    "Peux-tu me traduire en français ",
    "Pourrais-tu traduire en français ",
    "J'aimerais savoir comment on dit en français ",
    "Comment dire en français ",
    "Traduis en français ",
    "Merci de traduire en français ",
    "Pourrais-tu m'aider à traduire en français ",
    "Aide-moi à traduire en français ",
];

fn translation_patron(prefixes: &[&str]) -> Grammar {
    grammar(
        "Prompt",
        vec![
            (
                "Prompt",
                vec![vec![nt("general_prefix"), nt("Question_type"), nt("punctuation")]],
            ),
            ("general_prefix", terminals(prefixes)),
            (
                "Denomination_le",
                terminals(&[
                    "",
                    "la phrase ",
                    "la phrase suivante ",
                    "les mots ",
                    "les mots suivants ",
                    "cette expression ",
                    "le passage ",
                ]),
            ),
            (
                "Denomination_ce",
                terminals(&[
                    "",
                    "cette phrase ",
                    "ces mots ",
                    "cette expression ",
                    "ce passage ",
                ]),
            ),
            (
                "quote_wrapper",
                vec![
                    vec![t("'"), slot("sentence"), t("'")],
                    vec![slot("sentence")],
                    vec![t(": "), slot("sentence")],
                    vec![t("\n "), slot("sentence")],
                ],
            ),
            (
                "Question_type",
                vec![
                    vec![nt("Denomination_le"), nt("quote_wrapper")],
                    vec![nt("Denomination_ce"), nt("quote_wrapper")],
                ],
            ),
            ("punctuation", terminals(&["", ".", " ?"])),
        ],
    )
}

const GENERALIST_OPENERS: &[&str] = &[
    "Vous êtes un assistant dont le but est d'aider un utilisateur à répondre à des questions.",
    "En tant qu'assistant, votre mission consiste à aider les utilisateurs à trouver des réponses à leurs questions.",
    "Votre objectif est de venir en aide à un utilisateur.",
    "Votre rôle est d'assister les utilisateurs afin de répondre aux questions que ces derniers pourraient se poser sur une multitude de sujets.",
];

const DEFENSE_OPENERS: &[&str] = &[
    "Vous êtes un expert senior spécialisé dans l'industrie de la défense et les affaires militaires.",
    "Vous êtes un spécialiste chevronné dans le domaine militaire et l'industrie de l'armement.",
    "Vous possédez une connaissance approfondie et une longue expérience dans l'industrie de l'armement et les affaires militaires.",
    "Vous êtes un expert de longue date dans le secteur militaire et l'industrie de la défense.",
];

const DEFENSE_FOLLOWUPS: &[&str] = &[
    "Vous maîtrisez tous les aspects des armements - qu'ils soient terrestres, navals ou aériens - ainsi que les technologies de pointe comme l'IA, la robotique, le cyber et le spatial. Votre expertise couvre aussi bien les processus industriels que la R&D militaire, les stratégies opérationnelles, le renseignement et les réalités économiques du secteur. Vous avez une compréhension approfondie des enjeux géopolitiques et des politiques de défense.",
    "Vous êtes incollable sur les systèmes d'armement terrestres et aériens, ainsi que sur les technologies de rupture comme l'IA et le spatial. Les rouages économiques du secteur défense et les subtilités des relations internationales font partie de votre expertise quotidienne.",
    "Vous maîtrisez l'écosystème complet de la R&D militaire et du renseignement. Les technologies émergentes n'ont pas de secret pour vous, pas plus que les complexités des relations entre États en matière de défense.",
    "En tant qu'expert, vous comprenez les subtilités des armements de nouvelle génération et leurs implications stratégiques. Votre connaissance approfondie des acteurs industriels s'accompagne d'une vision claire des dynamiques géopolitiques qui façonnent le secteur.",
];

const FORMAT_DIRECTIVES: &[&str] = &[
    "Vous ferez attention à respecter le format attendu par l'utilisateur lorsque cette demande est explicitée.",
    "Si l'utilisateur vous demande de formuler votre réponse sous un certain format, vous le suivrez à la lettre.",
];

fn system_prompt() -> Grammar {
    let mut amorces_defense = vec![""];
    amorces_defense.extend(GENERALIST_OPENERS);
    amorces_defense.extend(DEFENSE_OPENERS);
    let mut followups = vec![""];
    followups.extend(DEFENSE_FOLLOWUPS);
    let mut formats = vec![""];
    formats.extend(FORMAT_DIRECTIVES);
    grammar(
        "Prompt",
        vec![
            (
                "Prompt",
                vec![
                    vec![t("")],
                    vec![nt("PromptGeneraliste")],
                    vec![nt("PromptDefense")],
                ],
            ),
            (
                "PromptGeneraliste",
                vec![vec![nt("Amorces"), nt("Format")]],
            ),
            (
                "PromptDefense",
                vec![vec![nt("AmorcesDefense"), nt("FollowUpDefense"), nt("Format")]],
            ),
            ("Amorces", terminals(GENERALIST_OPENERS)),
            ("AmorcesDefense", terminals(&amorces_defense)),
            ("FollowUpDefense", terminals(&followups)),
            ("Format", terminals(&formats)),
        ],
    )
}
