//! File-driven semantic lexicon: (verb, syntax pattern) rules that state a
//! participant's change and before/after locations, plus the complement
//! rules that deduce changes from location evidence alone.
//!
//! Rule file format: one rule per line, five pipe-separated fields
//! `verb | pattern | change | before_slot | after_slot`. Pattern slots are
//! space-separated over `S V O PREP:<word>`; `-` marks an absent slot and
//! `#` starts a comment line.

use crate::annotate::SyntaxTuple;
use crate::corpus::{StateChange, Token};
use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

/// A pattern slot of the (S, V, O, (PREP NP)*) shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Slot {
    Subject,
    Verb,
    Object,
    Prep(String),
}

impl Slot {
    fn parse(s: &str) -> Option<Slot> {
        match s {
            "S" => Some(Slot::Subject),
            "V" => Some(Slot::Verb),
            "O" => Some(Slot::Object),
            _ => s
                .strip_prefix("PREP:")
                .filter(|w| !w.is_empty())
                .map(|w| Slot::Prep(w.to_lowercase())),
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Slot::Subject => f.write_str("S"),
            Slot::Verb => f.write_str("V"),
            Slot::Object => f.write_str("O"),
            Slot::Prep(w) => write!(f, "PREP:{w}"),
        }
    }
}

/// One lexicon rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconRule {
    pub verb_lemma: String,
    pub pattern: Vec<Slot>,
    pub change: StateChange,
    pub before_slot: Option<Slot>,
    pub after_slot: Option<Slot>,
    /// Position in the rule file, used to break specificity ties.
    pub order: usize,
}

/// Where an attribute came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Lexicon,
    Complement,
}

/// An inferred state-change attribute for one step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attribute {
    pub sent_index: usize,
    pub change: StateChange,
    pub before_loc: Option<String>,
    pub after_loc: Option<String>,
    pub provenance: Provenance,
}

impl Attribute {
    /// Checks the class/location consistency invariants.
    pub fn check(&self) -> Result<()> {
        match self.change {
            StateChange::Create if self.before_loc.is_some() => Err(Error::validation(
                "CREATE attribute carries a before location",
            )),
            StateChange::Destroy if self.after_loc.is_some() => Err(Error::validation(
                "DESTROY attribute carries an after location",
            )),
            StateChange::None
                if self.before_loc.is_some()
                    && self.after_loc.is_some()
                    && self.before_loc != self.after_loc =>
            {
                Err(Error::validation(
                    "NONE attribute with differing before/after locations",
                ))
            }
            _ => Ok(()),
        }
    }
}

/// Per-step location evidence gathered from factual tuples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LocEvidence {
    /// No location, or the participant does not exist.
    Absent,
    /// The participant exists but its location is not stated.
    Unknown,
    Span(String),
}

impl LocEvidence {
    fn span(&self) -> Option<&str> {
        match self {
            LocEvidence::Span(s) => Some(s),
            _ => None,
        }
    }
}

/// The loaded rule base, indexed by verb lemma.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    by_verb: BTreeMap<String, Vec<LexiconRule>>,
    rule_count: usize,
}

/// Result of a successful lexicon query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryHit {
    pub change: StateChange,
    pub before_loc: Option<String>,
    pub after_loc: Option<String>,
}

impl Lexicon {
    /// The rule base shipped with the crate, covering the generator's verb
    /// inventory and the worked examples in the docs.
    pub fn seed() -> Lexicon {
        Lexicon::parse(include_str!("../assets/seed_lexicon.txt"))
            .expect("shipped seed lexicon must parse")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Lexicon> {
        let text = std::fs::read_to_string(path)?;
        Lexicon::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Lexicon> {
        let mut lex = Lexicon::default();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let rule = parse_rule(trimmed, line_no, lex.rule_count)?;
            let rules = lex.by_verb.entry(rule.verb_lemma.clone()).or_default();
            if rules.iter().any(|r| r.pattern == rule.pattern) {
                return Err(Error::validation(format!(
                    "duplicate lexicon rule for verb '{}' pattern '{}' at line {line_no}",
                    rule.verb_lemma,
                    pattern_string(&rule.pattern),
                )));
            }
            rules.push(rule);
            lex.rule_count += 1;
        }
        Ok(lex)
    }

    pub fn len(&self) -> usize {
        self.rule_count
    }

    pub fn is_empty(&self) -> bool {
        self.rule_count == 0
    }

    /// Looks up the best-matching rule for a tuple: every pattern slot must
    /// be fillable, the match with the most slots wins, and ties fall back
    /// to file order.
    pub fn query(&self, tuple: &SyntaxTuple) -> Option<QueryHit> {
        let rules = self.by_verb.get(&tuple.verb_lemma)?;
        let best = rules
            .iter()
            .filter(|r| r.pattern.iter().all(|slot| slot_fillable(slot, tuple)))
            .min_by(|a, b| {
                b.pattern
                    .len()
                    .cmp(&a.pattern.len())
                    .then(a.order.cmp(&b.order))
            })?;
        Some(QueryHit {
            change: best.change,
            before_loc: best.before_slot.as_ref().and_then(|s| slot_text(s, tuple)),
            after_loc: best.after_slot.as_ref().and_then(|s| slot_text(s, tuple)),
        })
    }
}

fn pattern_string(pattern: &[Slot]) -> String {
    pattern
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_rule(line: &str, line_no: usize, order: usize) -> Result<LexiconRule> {
    let fields: Vec<&str> = line.split('|').map(str::trim).collect();
    if fields.len() != 5 {
        return Err(Error::parse(
            line_no,
            format!("expected 5 pipe-separated fields, found {}", fields.len()),
        ));
    }
    let verb_lemma = fields[0].to_lowercase();
    if verb_lemma.is_empty() {
        return Err(Error::parse(line_no, "empty verb field"));
    }
    let mut pattern = Vec::new();
    for part in fields[1].split_whitespace() {
        let slot = Slot::parse(part)
            .ok_or_else(|| Error::parse(line_no, format!("unknown slot name '{part}'")))?;
        pattern.push(slot);
    }
    if pattern.iter().filter(|s| **s == Slot::Verb).count() != 1 {
        return Err(Error::parse(
            line_no,
            "pattern must contain exactly one V slot",
        ));
    }
    let change = match fields[2] {
        "CREATE" => StateChange::Create,
        "DESTROY" => StateChange::Destroy,
        "MOVE" => StateChange::Move,
        "NONE" => StateChange::None,
        other => {
            return Err(Error::parse(
                line_no,
                format!("unknown state change '{other}'"),
            ))
        }
    };
    let parse_loc_slot = |field: &str| -> Result<Option<Slot>> {
        if field == "-" {
            return Ok(None);
        }
        let slot = Slot::parse(field)
            .ok_or_else(|| Error::parse(line_no, format!("unknown slot name '{field}'")))?;
        if slot == Slot::Verb {
            return Err(Error::parse(line_no, "V cannot supply a location"));
        }
        if !pattern.contains(&slot) {
            return Err(Error::parse(
                line_no,
                format!("location slot '{slot}' is not in the pattern"),
            ));
        }
        Ok(Some(slot))
    };
    let before_slot = parse_loc_slot(fields[3])?;
    let after_slot = parse_loc_slot(fields[4])?;
    match change {
        StateChange::Create if before_slot.is_some() => {
            return Err(Error::parse(line_no, "CREATE rule cannot name a before slot"))
        }
        StateChange::Destroy if after_slot.is_some() => {
            return Err(Error::parse(line_no, "DESTROY rule cannot name an after slot"))
        }
        StateChange::None if before_slot != after_slot => {
            return Err(Error::parse(
                line_no,
                "NONE rule must use the same slot for both locations",
            ))
        }
        _ => {}
    }
    Ok(LexiconRule {
        verb_lemma,
        pattern,
        change,
        before_slot,
        after_slot,
        order,
    })
}

fn slot_fillable(slot: &Slot, tuple: &SyntaxTuple) -> bool {
    match slot {
        Slot::Verb => true,
        Slot::Subject => tuple.subject.is_some(),
        Slot::Object => tuple.object.is_some(),
        Slot::Prep(w) => tuple.prep_phrases.iter().any(|(p, _)| p == w),
    }
}

fn slot_text(slot: &Slot, tuple: &SyntaxTuple) -> Option<String> {
    match slot {
        Slot::Subject => tuple.subject.as_ref().map(|p| p.text.clone()),
        Slot::Object => tuple.object.as_ref().map(|p| p.text.clone()),
        Slot::Prep(w) => tuple
            .prep_phrases
            .iter()
            .find(|(p, _)| p == w)
            .map(|(_, s)| s.text.clone()),
        Slot::Verb => None,
    }
}

/// Applies the complement rules to steps that the lexicon left uncovered:
/// equal before/after spans give NONE, two differing spans give MOVE, and a
/// span appearing where nothing existed before gives CREATE. Evidence
/// involving unknown or absent values fires no rule beyond these.
pub fn complement(
    attributes: &[Attribute],
    evidence: &[(LocEvidence, LocEvidence)],
) -> Vec<Attribute> {
    let mut out = Vec::new();
    for (step, (before, after)) in evidence.iter().enumerate() {
        if attributes.iter().any(|a| a.sent_index == step) {
            continue;
        }
        let attr = match (before, after) {
            (LocEvidence::Span(b), LocEvidence::Span(a)) if b == a => Attribute {
                sent_index: step,
                change: StateChange::None,
                before_loc: Some(b.clone()),
                after_loc: Some(a.clone()),
                provenance: Provenance::Complement,
            },
            (LocEvidence::Span(b), LocEvidence::Span(a)) => Attribute {
                sent_index: step,
                change: StateChange::Move,
                before_loc: Some(b.clone()),
                after_loc: Some(a.clone()),
                provenance: Provenance::Complement,
            },
            (LocEvidence::Absent, LocEvidence::Span(a)) => Attribute {
                sent_index: step,
                change: StateChange::Create,
                before_loc: None,
                after_loc: Some(a.clone()),
                provenance: Provenance::Complement,
            },
            _ => continue,
        };
        out.push(attr);
    }
    out
}

/// Builds per-step `(before, after)` location evidence for a participant
/// from its matched tuples. After-evidence comes from directional
/// prepositional phrases; "from" phrases state the before side; known
/// locations carry forward as the next step's before side.
pub fn gather_evidence(
    sentences: &[Vec<Token>],
    participant: &str,
    tuples: &[SyntaxTuple],
) -> Vec<(LocEvidence, LocEvidence)> {
    const AFTER_PREPS: [&str; 7] = ["to", "into", "in", "on", "onto", "at", "under"];
    let mut out = Vec::with_capacity(sentences.len());
    let mut carried = LocEvidence::Absent;
    for (sent_index, sentence) in sentences.iter().enumerate() {
        let mut before = carried.clone();
        let mut after = LocEvidence::Absent;
        for tuple in tuples.iter().filter(|t| t.sent_index == sent_index) {
            if !tuple_matches_participant(tuple, sentence, participant) {
                continue;
            }
            for (prep, phrase) in &tuple.prep_phrases {
                if prep == "from" && before.span().is_none() {
                    before = LocEvidence::Span(phrase.text.clone());
                } else if AFTER_PREPS.contains(&prep.as_str())
                    && matches!(after, LocEvidence::Absent)
                {
                    after = LocEvidence::Span(phrase.text.clone());
                }
            }
        }
        if let LocEvidence::Span(_) = &after {
            carried = after.clone();
        }
        out.push((before, after));
    }
    out
}

/// Whether a tuple's subject or object aligns with the participant.
pub fn tuple_matches_participant(
    tuple: &SyntaxTuple,
    sentence: &[Token],
    participant: &str,
) -> bool {
    let check = |phrase: &Option<crate::annotate::Phrase>| {
        phrase
            .as_ref()
            .map(|p| crate::annotate::is_match(participant, p.tokens(sentence)))
            .unwrap_or(false)
    };
    check(&tuple.subject) || check(&tuple.object)
}

/// Runs the lexicon over a participant's tuples and complements uncovered
/// steps, emitting at most one attribute per step.
pub fn infer_attributes(
    sentences: &[Vec<Token>],
    participant: &str,
    tuples: &[SyntaxTuple],
    lexicon: &Lexicon,
) -> Vec<Attribute> {
    let mut attributes = Vec::new();
    for (sent_index, sentence) in sentences.iter().enumerate() {
        for tuple in tuples.iter().filter(|t| t.sent_index == sent_index) {
            if !tuple_matches_participant(tuple, sentence, participant) {
                continue;
            }
            if let Some(hit) = lexicon.query(tuple) {
                attributes.push(Attribute {
                    sent_index,
                    change: hit.change,
                    before_loc: hit.before_loc,
                    after_loc: hit.after_loc,
                    provenance: Provenance::Lexicon,
                });
                break;
            }
        }
    }
    let evidence = gather_evidence(sentences, participant, tuples);
    attributes.extend(complement(&attributes, &evidence));
    attributes.sort_by_key(|a| a.sent_index);
    attributes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::extract_tuples;
    use crate::corpus::Pos;
    use crate::testutil::{sentence, sunlight_paragraph, water_paragraph};

    fn tuple_for(words: &[(&str, &str, Pos)]) -> SyntaxTuple {
        let sent = sentence(words, 0, 0);
        let mut tuples = extract_tuples(&sent);
        assert_eq!(tuples.len(), 1, "expected one tuple");
        tuples.remove(0)
    }

    #[test]
    fn parse_and_query_move_rule() {
        let lex = Lexicon::parse("move | S V PREP:to | MOVE | - | PREP:to").unwrap();
        let tuple = tuple_for(&[
            ("Water", "water", Pos::Noun),
            ("moves", "move", Pos::Verb),
            ("to", "to", Pos::Adp),
            ("the", "the", Pos::Det),
            ("river", "river", Pos::Noun),
            (".", ".", Pos::Other),
        ]);
        let hit = lex.query(&tuple).unwrap();
        assert_eq!(hit.change, StateChange::Move);
        assert_eq!(hit.before_loc, None);
        assert_eq!(hit.after_loc.as_deref(), Some("river"));
    }

    #[test]
    fn duplicate_rule_rejected() {
        let text = "go | S V PREP:to | MOVE | - | PREP:to\ngo | S V PREP:to | MOVE | - | PREP:to";
        assert!(Lexicon::parse(text).is_err());
    }

    #[test]
    fn empty_lexicon_misses() {
        let lex = Lexicon::parse("").unwrap();
        assert!(lex.is_empty());
        let tuple = tuple_for(&[
            ("Water", "water", Pos::Noun),
            ("moves", "move", Pos::Verb),
            (".", ".", Pos::Other),
        ]);
        assert!(lex.query(&tuple).is_none());
    }

    #[test]
    fn unknown_slot_is_a_parse_error() {
        let err = Lexicon::parse("go | S V X | MOVE | - | -").unwrap_err();
        assert!(err.to_string().contains("unknown slot"), "{err}");
    }

    #[test]
    fn location_slot_must_be_in_pattern() {
        assert!(Lexicon::parse("go | S V | MOVE | - | PREP:to").is_err());
    }

    #[test]
    fn seed_lexicon_matches_water_case() {
        let lex = Lexicon::seed();
        let p = water_paragraph();
        let tuples = extract_tuples(&p.sentences[1]);
        let hit = lex.query(&tuples[0]).unwrap();
        assert_eq!(hit.change, StateChange::Move);
        assert_eq!(hit.after_loc.as_deref(), Some("houses"));
        assert_eq!(hit.before_loc, None);
    }

    #[test]
    fn seed_lexicon_matches_sunlight_case() {
        let lex = Lexicon::seed();
        let p = sunlight_paragraph();
        let tuples = extract_tuples(&p.sentences[0]);
        let hit = lex.query(&tuples[0]).unwrap();
        assert_eq!(hit.change, StateChange::Move);
        assert_eq!(hit.after_loc.as_deref(), Some("greenhouse"));
    }

    #[test]
    fn most_specific_pattern_wins() {
        let lex = Lexicon::seed();
        let tuple = tuple_for(&[
            ("Water", "water", Pos::Noun),
            ("flows", "flow", Pos::Verb),
            ("from", "from", Pos::Adp),
            ("the", "the", Pos::Det),
            ("soil", "soil", Pos::Noun),
            ("to", "to", Pos::Adp),
            ("the", "the", Pos::Det),
            ("root", "root", Pos::Noun),
            (".", ".", Pos::Other),
        ]);
        let hit = lex.query(&tuple).unwrap();
        assert_eq!(hit.before_loc.as_deref(), Some("soil"));
        assert_eq!(hit.after_loc.as_deref(), Some("root"));
    }

    #[test]
    fn unknown_verb_misses() {
        let lex = Lexicon::seed();
        let tuple = tuple_for(&[
            ("Wind", "wind", Pos::Noun),
            ("crosses", "cross", Pos::Verb),
            ("the", "the", Pos::Det),
            ("valley", "valley", Pos::Noun),
            (".", ".", Pos::Other),
        ]);
        assert!(lex.query(&tuple).is_none());
    }

    #[test]
    fn different_verb_rules_do_not_interfere() {
        let base = Lexicon::parse("go | S V PREP:into | MOVE | - | PREP:into").unwrap();
        let extended = Lexicon::parse(
            "go | S V PREP:into | MOVE | - | PREP:into\nfall | S V | DESTROY | - | -",
        )
        .unwrap();
        let tuple = tuple_for(&[
            ("Water", "water", Pos::Noun),
            ("goes", "go", Pos::Verb),
            ("into", "into", Pos::Adp),
            ("houses", "houses", Pos::Noun),
            (".", ".", Pos::Other),
        ]);
        assert_eq!(base.query(&tuple), extended.query(&tuple));
    }

    #[test]
    fn complement_rule_table_cells() {
        let span = |s: &str| LocEvidence::Span(s.to_string());
        // R1: same before/after -> NONE
        let attrs = complement(&[], &[(span("soil"), span("soil"))]);
        assert_eq!(attrs.len(), 1);
        assert_eq!(attrs[0].change, StateChange::None);
        assert_eq!(attrs[0].provenance, Provenance::Complement);
        // R2: differing locations -> MOVE
        let attrs = complement(&[], &[(span("sky"), span("ground"))]);
        assert_eq!(attrs[0].change, StateChange::Move);
        // R3: absent before, present after -> CREATE
        let attrs = complement(&[], &[(LocEvidence::Absent, span("leaf"))]);
        assert_eq!(attrs[0].change, StateChange::Create);
        assert_eq!(attrs[0].before_loc, None);
        // unknown evidence fires nothing
        let attrs = complement(&[], &[(LocEvidence::Unknown, span("leaf"))]);
        assert!(attrs.is_empty());
        let attrs = complement(&[], &[(span("leaf"), LocEvidence::Absent)]);
        assert!(attrs.is_empty());
    }

    #[test]
    fn complement_never_overwrites_lexicon_attribute() {
        let existing = Attribute {
            sent_index: 0,
            change: StateChange::Move,
            before_loc: None,
            after_loc: Some("houses".into()),
            provenance: Provenance::Lexicon,
        };
        let span = |s: &str| LocEvidence::Span(s.to_string());
        let attrs = complement(&[existing], &[(span("soil"), span("soil"))]);
        assert!(attrs.is_empty());
    }

    #[test]
    fn water_example_attributes() {
        let p = water_paragraph();
        let tuples: Vec<_> = p.sentences.iter().flat_map(|s| extract_tuples(s)).collect();
        let attrs = infer_attributes(&p.sentences, "water", &tuples, &Lexicon::seed());
        // "covers" has no rule and no prep evidence, so only step 2 gets an
        // attribute, from the lexicon.
        assert_eq!(attrs.len(), 1);
        assert_eq!(attrs[0].sent_index, 1);
        assert_eq!(attrs[0].change, StateChange::Move);
        assert_eq!(attrs[0].provenance, Provenance::Lexicon);
        for a in &attrs {
            a.check().unwrap();
        }
    }

    #[test]
    fn seed_rules_emit_valid_attributes() {
        let lex = Lexicon::seed();
        assert!(lex.len() >= 35, "seed lexicon has {} rules", lex.len());
        for p in crate::corpus::generate_mini_corpus(31, 20) {
            let tuples: Vec<_> = p.sentences.iter().flat_map(|s| extract_tuples(s)).collect();
            for participant in &p.participants {
                for a in infer_attributes(&p.sentences, participant, &tuples, &lex) {
                    a.check().unwrap();
                }
            }
        }
    }
}
