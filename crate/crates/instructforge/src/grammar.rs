//! Finite generative grammars with slot substitution, reproducible random
//! expansion and exhaustive enumeration.
//!
//! A grammar maps nonterminal names to ordered lists of alternatives; an
//! alternative is a sequence of atoms (terminal text, nonterminal reference,
//! or named slot). Reference graphs must be acyclic, so every grammar derives
//! a finite set of strings. Adjacent atoms concatenate with no implicit
//! spacing: alternatives carry their own whitespace.
//!
//! The prompt grammars used by the generation pipeline ship as
//! [`BuiltinGrammar`] variants.

mod builtins;

pub use builtins::BuiltinGrammar;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::str::FromStr;

use indexmap::{IndexMap, IndexSet};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GrammarError {
    #[error("nonterminal {0:?} has no rule")]
    UndefinedNonTerminal(String),
    #[error("rule {0:?} has no alternatives")]
    EmptyRule(String),
    #[error("grammar is cyclic through {0:?}")]
    CyclicGrammar(String),
    #[error("slot {0:?} has no value")]
    MissingSlot(String),
    #[error("derivation count {count} exceeds limit {limit}")]
    EnumerationOverflow { count: u128, limit: u128 },
    #[error("derivation count overflows")]
    CountOverflow,
    #[error("unknown builtin grammar {0:?}")]
    UnknownGrammar(String),
    #[error("derivation replay does not fit the grammar: {0}")]
    ReplayMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Atom {
    Terminal { t: String },
    NonTerminal { nt: String },
    Slot { slot: String },
}

impl Atom {
    pub fn t(text: &str) -> Atom {
        Atom::Terminal { t: text.to_string() }
    }
    pub fn nt(name: &str) -> Atom {
        Atom::NonTerminal { nt: name.to_string() }
    }
    pub fn slot(name: &str) -> Atom {
        Atom::Slot { slot: name.to_string() }
    }
}

pub type Alternative = Vec<Atom>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Grammar {
    pub start: String,
    pub rules: IndexMap<String, Vec<Alternative>>,
}

/// A reproducible expansion: replaying `choices` and `slot_values` through
/// the same grammar reproduces `text` exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Derivation {
    pub text: String,
    pub choices: Vec<(String, usize)>,
    pub slot_values: BTreeMap<String, String>,
}

impl Grammar {
    pub fn new(start: &str, rules: IndexMap<String, Vec<Alternative>>) -> Result<Grammar, GrammarError> {
        let g = Grammar {
            start: start.to_string(),
            rules,
        };
        g.validate()?;
        Ok(g)
    }

    /// Check rule references, non-empty alternatives and acyclicity.
    pub fn validate(&self) -> Result<(), GrammarError> {
        if !self.rules.contains_key(&self.start) {
            return Err(GrammarError::UndefinedNonTerminal(self.start.clone()));
        }
        for (name, alts) in &self.rules {
            if alts.is_empty() {
                return Err(GrammarError::EmptyRule(name.clone()));
            }
            for alt in alts {
                for atom in alt {
                    if let Atom::NonTerminal { nt } = atom {
                        if !self.rules.contains_key(nt) {
                            return Err(GrammarError::UndefinedNonTerminal(nt.clone()));
                        }
                    }
                }
            }
        }
        // Cycle detection over the reference graph.
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Visiting,
            Done,
        }
        fn visit(
            g: &Grammar,
            name: &str,
            marks: &mut HashMap<String, Mark>,
        ) -> Result<(), GrammarError> {
            match marks.get(name) {
                Some(Mark::Done) => return Ok(()),
                Some(Mark::Visiting) => return Err(GrammarError::CyclicGrammar(name.to_string())),
                None => {}
            }
            marks.insert(name.to_string(), Mark::Visiting);
            for alt in &g.rules[name] {
                for atom in alt {
                    if let Atom::NonTerminal { nt } = atom {
                        visit(g, nt, marks)?;
                    }
                }
            }
            marks.insert(name.to_string(), Mark::Done);
            Ok(())
        }
        let mut marks = HashMap::new();
        for name in self.rules.keys() {
            visit(self, name, &mut marks)?;
        }
        Ok(())
    }

    /// All slot names reachable in the grammar.
    pub fn slot_names(&self) -> BTreeSet<String> {
        let mut names = BTreeSet::new();
        for alts in self.rules.values() {
            for alt in alts {
                for atom in alt {
                    if let Atom::Slot { slot } = atom {
                        names.insert(slot.clone());
                    }
                }
            }
        }
        names
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("grammar serializes")
    }

    pub fn from_json(raw: &str) -> Result<Grammar, GrammarError> {
        let g: Grammar = serde_json::from_str(raw)
            .map_err(|e| GrammarError::ReplayMismatch(format!("invalid grammar JSON: {e}")))?;
        g.validate()?;
        Ok(g)
    }
}

/// Expand the grammar with a seeded RNG, choosing uniformly and independently
/// among alternatives at each nonterminal occurrence. Deterministic for a
/// fixed seed. Every slot reached by the sampled derivation must be present
/// in `slots`.
pub fn expand(
    g: &Grammar,
    seed: u64,
    slots: &BTreeMap<String, String>,
) -> Result<Derivation, GrammarError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = String::new();
    let mut choices = Vec::new();
    let mut used = BTreeMap::new();
    walk(g, &g.start, &mut rng, slots, &mut text, &mut choices, &mut used, 0)?;
    Ok(Derivation {
        text,
        choices,
        slot_values: used,
    })
}

/// Expand with every slot left symbolic (`{name}`), matching the rendering
/// used by [`enumerate`].
pub fn expand_symbolic(g: &Grammar, seed: u64) -> Result<Derivation, GrammarError> {
    let slots: BTreeMap<String, String> = g
        .slot_names()
        .into_iter()
        .map(|n| {
            let v = format!("{{{n}}}");
            (n, v)
        })
        .collect();
    expand(g, seed, &slots)
}

// Constructors validate references and acyclicity; the depth guard catches
// hand-built cyclic rule maps that bypassed them.
const MAX_DERIVATION_DEPTH: usize = 1_000;

#[allow(clippy::too_many_arguments)]
fn walk(
    g: &Grammar,
    name: &str,
    rng: &mut ChaCha8Rng,
    slots: &BTreeMap<String, String>,
    text: &mut String,
    choices: &mut Vec<(String, usize)>,
    used: &mut BTreeMap<String, String>,
    depth: usize,
) -> Result<(), GrammarError> {
    if depth > MAX_DERIVATION_DEPTH {
        return Err(GrammarError::CyclicGrammar(name.to_string()));
    }
    let alts = g
        .rules
        .get(name)
        .ok_or_else(|| GrammarError::UndefinedNonTerminal(name.to_string()))?;
    if alts.is_empty() {
        return Err(GrammarError::EmptyRule(name.to_string()));
    }
    let idx = if alts.len() == 1 {
        0
    } else {
        rng.random_range(0..alts.len())
    };
    choices.push((name.to_string(), idx));
    for atom in &alts[idx] {
        match atom {
            Atom::Terminal { t } => text.push_str(t),
            Atom::NonTerminal { nt } => walk(g, nt, rng, slots, text, choices, used, depth + 1)?,
            Atom::Slot { slot } => {
                let value = slots
                    .get(slot)
                    .ok_or_else(|| GrammarError::MissingSlot(slot.clone()))?;
                used.insert(slot.clone(), value.clone());
                text.push_str(value);
            }
        }
    }
    Ok(())
}

/// Re-derive the text of a recorded derivation. Fails if the recorded
/// choices do not fit the grammar.
pub fn replay(g: &Grammar, derivation: &Derivation) -> Result<String, GrammarError> {
    let mut text = String::new();
    let mut cursor = 0usize;
    replay_walk(g, &g.start, derivation, &mut cursor, &mut text)?;
    if cursor != derivation.choices.len() {
        return Err(GrammarError::ReplayMismatch(format!(
            "{} unused choices",
            derivation.choices.len() - cursor
        )));
    }
    Ok(text)
}

fn replay_walk(
    g: &Grammar,
    name: &str,
    derivation: &Derivation,
    cursor: &mut usize,
    text: &mut String,
) -> Result<(), GrammarError> {
    let (recorded, idx) = derivation
        .choices
        .get(*cursor)
        .ok_or_else(|| GrammarError::ReplayMismatch("choice list exhausted".into()))?;
    if recorded != name {
        return Err(GrammarError::ReplayMismatch(format!(
            "expected choice for {name:?}, found {recorded:?}"
        )));
    }
    let alts = g
        .rules
        .get(name)
        .ok_or_else(|| GrammarError::UndefinedNonTerminal(name.to_string()))?;
    let alt = alts
        .get(*idx)
        .ok_or_else(|| GrammarError::ReplayMismatch(format!("alternative {idx} out of range")))?;
    *cursor += 1;
    for atom in alt {
        match atom {
            Atom::Terminal { t } => text.push_str(t),
            Atom::NonTerminal { nt } => replay_walk(g, nt, derivation, cursor, text)?,
            Atom::Slot { slot } => {
                let value = derivation
                    .slot_values
                    .get(slot)
                    .ok_or_else(|| GrammarError::MissingSlot(slot.clone()))?;
                text.push_str(value);
            }
        }
    }
    Ok(())
}

/// Number of derivations (not deduplicated) via product-sum recursion.
pub fn count(g: &Grammar) -> Result<u128, GrammarError> {
    g.validate()?;
    let mut memo: HashMap<String, u128> = HashMap::new();
    count_symbol(g, &g.start, &mut memo)
}

fn count_symbol(
    g: &Grammar,
    name: &str,
    memo: &mut HashMap<String, u128>,
) -> Result<u128, GrammarError> {
    if let Some(&c) = memo.get(name) {
        return Ok(c);
    }
    let mut total: u128 = 0;
    for alt in &g.rules[name] {
        let mut product: u128 = 1;
        for atom in alt {
            let c = match atom {
                Atom::Terminal { .. } | Atom::Slot { .. } => 1,
                Atom::NonTerminal { nt } => count_symbol(g, nt, memo)?,
            };
            product = product.checked_mul(c).ok_or(GrammarError::CountOverflow)?;
        }
        total = total.checked_add(product).ok_or(GrammarError::CountOverflow)?;
    }
    memo.insert(name.to_string(), total);
    Ok(total)
}

/// All distinct derivation texts, in depth-first alternative order with
/// first occurrences kept, slots rendered symbolically as `{name}`. Errors
/// if the grammar derives more than `limit` strings before deduplication.
pub fn enumerate(g: &Grammar, limit: u128) -> Result<Vec<String>, GrammarError> {
    let total = count(g)?;
    if total > limit {
        return Err(GrammarError::EnumerationOverflow { count: total, limit });
    }
    let mut memo: HashMap<String, Vec<String>> = HashMap::new();
    let all = enumerate_symbol(g, &g.start, &mut memo);
    let mut distinct: IndexSet<String> = IndexSet::new();
    for s in all {
        distinct.insert(s);
    }
    Ok(distinct.into_iter().collect())
}

fn enumerate_symbol(g: &Grammar, name: &str, memo: &mut HashMap<String, Vec<String>>) -> Vec<String> {
    if let Some(cached) = memo.get(name) {
        return cached.clone();
    }
    let mut out = Vec::new();
    for alt in &g.rules[name] {
        let mut acc = vec![String::new()];
        for atom in alt {
            let parts: Vec<String> = match atom {
                Atom::Terminal { t } => vec![t.clone()],
                Atom::Slot { slot } => vec![format!("{{{slot}}}")],
                Atom::NonTerminal { nt } => enumerate_symbol(g, nt, memo),
            };
            let mut next = Vec::with_capacity(acc.len() * parts.len());
            for prefix in &acc {
                for part in &parts {
                    let mut s = prefix.clone();
                    s.push_str(part);
                    next.push(s);
                }
            }
            acc = next;
        }
        out.extend(acc);
    }
    memo.insert(name.to_string(), out.clone());
    out
}

/// Look up one of the built-in grammars by name.
pub fn builtin(name: BuiltinGrammar) -> Grammar {
    builtins::build(name)
}

impl FromStr for BuiltinGrammar {
    type Err = GrammarError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BuiltinGrammar::ALL
            .iter()
            .copied()
            .find(|b| b.name() == s)
            .ok_or_else(|| GrammarError::UnknownGrammar(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single() -> Grammar {
        let mut rules = IndexMap::new();
        rules.insert("S".to_string(), vec![vec![Atom::t("a")]]);
        Grammar::new("S", rules).unwrap()
    }

    #[test]
    fn single_derivation_for_any_seed() {
        let g = single();
        for seed in [0u64, 1, 99] {
            let d = expand(&g, seed, &BTreeMap::new()).unwrap();
            assert_eq!(d.text, "a");
        }
        assert_eq!(count(&g).unwrap(), 1);
        assert_eq!(enumerate(&g, 10).unwrap(), vec!["a"]);
    }

    #[test]
    fn equal_seeds_give_identical_derivations() {
        let g = builtin(BuiltinGrammar::SystemPrompt);
        let a = expand(&g, 1234, &BTreeMap::new()).unwrap();
        let b = expand(&g, 1234, &BTreeMap::new()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn two_alternatives_enumerate_in_order() {
        let mut rules = IndexMap::new();
        rules.insert(
            "S".to_string(),
            vec![vec![Atom::t("a")], vec![Atom::t("b")]],
        );
        let g = Grammar::new("S", rules).unwrap();
        assert_eq!(enumerate(&g, 10).unwrap(), vec!["a", "b"]);
    }

    #[test]
    fn product_of_nonterminals() {
        let mut rules = IndexMap::new();
        rules.insert("S".to_string(), vec![vec![Atom::nt("A"), Atom::nt("B")]]);
        rules.insert(
            "A".to_string(),
            vec![vec![Atom::t("x")], vec![Atom::t("y")]],
        );
        rules.insert(
            "B".to_string(),
            vec![vec![Atom::t("1")], vec![Atom::t("2")]],
        );
        let g = Grammar::new("S", rules).unwrap();
        assert_eq!(enumerate(&g, 10).unwrap(), vec!["x1", "x2", "y1", "y2"]);
    }

    #[test]
    fn repeated_nonterminal_counts_independently() {
        let mut rules = IndexMap::new();
        rules.insert("S".to_string(), vec![vec![Atom::nt("A"), Atom::nt("A")]]);
        rules.insert(
            "A".to_string(),
            vec![vec![Atom::t("x")], vec![Atom::t("y")]],
        );
        let g = Grammar::new("S", rules).unwrap();
        assert_eq!(count(&g).unwrap(), 4);
    }

    #[test]
    fn self_reference_is_rejected() {
        let mut rules = IndexMap::new();
        rules.insert("S".to_string(), vec![vec![Atom::nt("S")]]);
        assert!(matches!(
            Grammar::new("S", rules),
            Err(GrammarError::CyclicGrammar(_))
        ));
    }

    #[test]
    fn missing_slot_is_reported() {
        let mut rules = IndexMap::new();
        rules.insert("S".to_string(), vec![vec![Atom::slot("x")]]);
        let g = Grammar::new("S", rules).unwrap();
        assert!(matches!(
            expand(&g, 0, &BTreeMap::new()),
            Err(GrammarError::MissingSlot(_))
        ));
    }

    #[test]
    fn slot_substitution_lands_in_text() {
        let g = builtin(BuiltinGrammar::AcronymPatron);
        let mut slots = BTreeMap::new();
        slots.insert("acronym".to_string(), "OTAN".to_string());
        for seed in 0..50 {
            let d = expand(&g, seed, &slots).unwrap();
            assert!(d.text.contains("OTAN"), "no acronym in {:?}", d.text);
        }
    }

    #[test]
    fn replay_reproduces_text() {
        for name in BuiltinGrammar::ALL {
            let g = builtin(*name);
            for seed in 0..200 {
                let d = expand_symbolic(&g, seed).unwrap();
                assert_eq!(replay(&g, &d).unwrap(), d.text);
            }
        }
    }

    #[test]
    fn expansion_is_member_of_enumeration() {
        for name in BuiltinGrammar::ALL {
            let g = builtin(*name);
            let all: std::collections::HashSet<String> =
                enumerate(&g, 1_000_000).unwrap().into_iter().collect();
            for seed in 0..200 {
                let d = expand_symbolic(&g, seed).unwrap();
                assert!(all.contains(&d.text));
            }
        }
    }

    #[test]
    fn count_bounds_distinct_strings() {
        for name in BuiltinGrammar::ALL {
            let g = builtin(*name);
            let n = count(&g).unwrap();
            let distinct = enumerate(&g, 1_000_000).unwrap().len() as u128;
            assert!(n >= distinct, "{name:?}: count {n} < distinct {distinct}");
        }
    }

    #[test]
    fn enumeration_overflow_is_reported() {
        let g = builtin(BuiltinGrammar::TranslationFrToEn);
        assert!(matches!(
            enumerate(&g, 10),
            Err(GrammarError::EnumerationOverflow { .. })
        ));
    }

    #[test]
    fn json_roundtrip() {
        let g = builtin(BuiltinGrammar::QcmInfo);
        let back = Grammar::from_json(&g.to_json()).unwrap();
        assert_eq!(back.start, g.start);
        assert_eq!(
            enumerate(&back, 100).unwrap(),
            enumerate(&g, 100).unwrap()
        );
    }
}
