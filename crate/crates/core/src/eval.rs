//! Document-level (inputs/outputs/conversions/moves) and sentence-level
//! (Cat-1/2/3) scoring over location grids.
//!
//! Both evaluators consume aligned location rows of length `T+1`, either
//! gold grids or rows decoded from predictions. Location comparison is
//! exact string match after case folding and whitespace normalization.

use crate::corpus::{derive_gold_state_changes, LocationValue, StateChange};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

/// One movement event: step, participant, and its before/after locations.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct MoveEvent {
    pub step: usize,
    pub participant: String,
    pub from: String,
    pub to: String,
}

/// One conversion event: a step where participants are destroyed and others
/// created, with the created participants' locations.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ConversionEvent {
    pub step: usize,
    pub destroyed: Vec<String>,
    pub created: Vec<String>,
    pub locations: Vec<String>,
}

/// Document-level events derived from a set of grid rows.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DocEvents {
    pub inputs: BTreeSet<String>,
    pub outputs: BTreeSet<String>,
    pub conversions: BTreeSet<ConversionEvent>,
    pub moves: BTreeSet<MoveEvent>,
}

fn normalized_rows(rows: &[(String, Vec<LocationValue>)]) -> Result<Vec<(String, Vec<LocationValue>)>> {
    let Some(first) = rows.first() else {
        return Ok(Vec::new());
    };
    let len = first.1.len();
    for (name, row) in rows {
        if row.len() != len {
            return Err(Error::validation(format!(
                "ragged grid rows: '{name}' has {} entries, expected {len}",
                row.len()
            )));
        }
    }
    Ok(rows
        .iter()
        .map(|(name, row)| (name.clone(), row.iter().map(|v| v.normalized()).collect()))
        .collect())
}

/// Derives inputs, outputs, conversions, and moves from grid rows.
pub fn events_from_rows(rows: &[(String, Vec<LocationValue>)]) -> Result<DocEvents> {
    let rows = normalized_rows(rows)?;
    let mut events = DocEvents::default();
    let mut changes_by_row: Vec<Vec<StateChange>> = Vec::with_capacity(rows.len());
    for (name, row) in &rows {
        let changes = derive_gold_state_changes(row);
        let destroyed = changes.iter().any(|c| *c == StateChange::Destroy);
        let created = changes.iter().any(|c| *c == StateChange::Create);
        if row[0].exists() && destroyed {
            events.inputs.insert(name.clone());
        }
        if created && row[row.len() - 1].exists() {
            events.outputs.insert(name.clone());
        }
        for (i, c) in changes.iter().enumerate() {
            if *c == StateChange::Move {
                events.moves.insert(MoveEvent {
                    step: i + 1,
                    participant: name.clone(),
                    from: row[i].as_grid_str().to_string(),
                    to: row[i + 1].as_grid_str().to_string(),
                });
            }
        }
        changes_by_row.push(changes);
    }
    let step_count = rows.first().map(|(_, r)| r.len() - 1).unwrap_or(0);
    for t in 1..=step_count {
        let mut destroyed = Vec::new();
        let mut created = Vec::new();
        let mut locations = BTreeSet::new();
        for ((name, row), changes) in rows.iter().zip(&changes_by_row) {
            match changes[t - 1] {
                StateChange::Destroy => destroyed.push(name.clone()),
                StateChange::Create => {
                    created.push(name.clone());
                    locations.insert(row[t].as_grid_str().to_string());
                }
                _ => {}
            }
        }
        if !destroyed.is_empty() && !created.is_empty() {
            destroyed.sort();
            created.sort();
            events.conversions.insert(ConversionEvent {
                step: t,
                destroyed,
                created,
                locations: locations.into_iter().collect(),
            });
        }
    }
    Ok(events)
}

/// Precision/recall/F1 for the document-level task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DocScores {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
}

fn doc_counts(pred: &DocEvents, gold: &DocEvents) -> (usize, usize, usize) {
    let matched = pred.inputs.intersection(&gold.inputs).count()
        + pred.outputs.intersection(&gold.outputs).count()
        + pred.conversions.intersection(&gold.conversions).count()
        + pred.moves.intersection(&gold.moves).count();
    let pred_total =
        pred.inputs.len() + pred.outputs.len() + pred.conversions.len() + pred.moves.len();
    let gold_total =
        gold.inputs.len() + gold.outputs.len() + gold.conversions.len() + gold.moves.len();
    (matched, pred_total, gold_total)
}

fn doc_scores_from_counts(matched: usize, pred_total: usize, gold_total: usize) -> DocScores {
    let p = if pred_total == 0 {
        1.0
    } else {
        matched as f64 / pred_total as f64
    };
    let r = if gold_total == 0 {
        1.0
    } else {
        matched as f64 / gold_total as f64
    };
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    DocScores { p, r, f1 }
}

/// Micro-averaged tuple match over the four event categories. An empty
/// prediction set scores perfect precision; an empty gold set perfect
/// recall.
pub fn doc_eval(pred: &DocEvents, gold: &DocEvents) -> DocScores {
    let (m, p, g) = doc_counts(pred, gold);
    doc_scores_from_counts(m, p, g)
}

/// Corpus-level document scores: tuple counts pooled over paragraphs.
pub fn doc_eval_corpus<'a>(
    pairs: impl IntoIterator<Item = (&'a DocEvents, &'a DocEvents)>,
) -> DocScores {
    let mut totals = (0, 0, 0);
    for (pred, gold) in pairs {
        let (m, p, g) = doc_counts(pred, gold);
        totals.0 += m;
        totals.1 += p;
        totals.2 += g;
    }
    doc_scores_from_counts(totals.0, totals.1, totals.2)
}

/// Per-participant answers to the sentence-level questions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParticipantAnswers {
    /// Steps at which the participant is created, with the locations it is
    /// created at.
    pub create_steps: BTreeSet<usize>,
    pub create_locations: BTreeSet<String>,
    pub destroy_steps: BTreeSet<usize>,
    pub destroy_locations: BTreeSet<String>,
    pub move_steps: BTreeSet<usize>,
    /// (from, to) pairs in step order.
    pub move_locations: Vec<(String, String)>,
}

impl ParticipantAnswers {
    pub fn ever_created(&self) -> bool {
        !self.create_steps.is_empty()
    }
    pub fn ever_destroyed(&self) -> bool {
        !self.destroy_steps.is_empty()
    }
    pub fn ever_moved(&self) -> bool {
        !self.move_steps.is_empty()
    }
}

/// Sentence-level answers for every participant of a paragraph.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SentAnswers {
    pub participants: BTreeMap<String, ParticipantAnswers>,
}

/// Derives Cat-1/2/3 answers from grid rows.
pub fn answers_from_rows(rows: &[(String, Vec<LocationValue>)]) -> Result<SentAnswers> {
    let rows = normalized_rows(rows)?;
    let mut out = SentAnswers::default();
    for (name, row) in &rows {
        let mut answers = ParticipantAnswers::default();
        for (i, change) in derive_gold_state_changes(row).iter().enumerate() {
            let step = i + 1;
            match change {
                StateChange::Create => {
                    answers.create_steps.insert(step);
                    answers
                        .create_locations
                        .insert(row[step].as_grid_str().to_string());
                }
                StateChange::Destroy => {
                    answers.destroy_steps.insert(step);
                    answers
                        .destroy_locations
                        .insert(row[step - 1].as_grid_str().to_string());
                }
                StateChange::Move => {
                    answers.move_steps.insert(step);
                    answers.move_locations.push((
                        row[step - 1].as_grid_str().to_string(),
                        row[step].as_grid_str().to_string(),
                    ));
                }
                StateChange::None => {}
            }
        }
        out.participants.insert(name.clone(), answers);
    }
    Ok(out)
}

/// Sentence-level accuracies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentScores {
    pub cat1: f64,
    pub cat2: f64,
    pub cat3: f64,
    pub macro_avg: f64,
    pub micro_avg: f64,
}

fn ratio(correct: usize, total: usize) -> f64 {
    if total == 0 {
        1.0
    } else {
        correct as f64 / total as f64
    }
}

type Counts = ((usize, usize), (usize, usize), (usize, usize));

fn sent_counts(pred: &SentAnswers, gold: &SentAnswers) -> Result<Counts> {
    let pred_names: Vec<&String> = pred.participants.keys().collect();
    let gold_names: Vec<&String> = gold.participants.keys().collect();
    if pred_names != gold_names {
        return Err(Error::validation(format!(
            "participant sets differ: {pred_names:?} vs {gold_names:?}"
        )));
    }
    let mut c1 = (0usize, 0usize);
    let mut c2 = (0usize, 0usize);
    let mut c3 = (0usize, 0usize);
    for (name, g) in &gold.participants {
        let p = &pred.participants[name];
        for (gold_flag, pred_flag) in [
            (g.ever_created(), p.ever_created()),
            (g.ever_destroyed(), p.ever_destroyed()),
            (g.ever_moved(), p.ever_moved()),
        ] {
            c1.1 += 1;
            if gold_flag == pred_flag {
                c1.0 += 1;
            }
        }
        if g.ever_created() {
            c2.1 += 1;
            if p.create_steps == g.create_steps {
                c2.0 += 1;
            }
            c3.1 += 1;
            if p.create_locations == g.create_locations {
                c3.0 += 1;
            }
        }
        if g.ever_destroyed() {
            c2.1 += 1;
            if p.destroy_steps == g.destroy_steps {
                c2.0 += 1;
            }
            c3.1 += 1;
            if p.destroy_locations == g.destroy_locations {
                c3.0 += 1;
            }
        }
        if g.ever_moved() {
            c2.1 += 1;
            if p.move_steps == g.move_steps {
                c2.0 += 1;
            }
            c3.1 += 1;
            if p.move_locations == g.move_locations {
                c3.0 += 1;
            }
        }
    }
    Ok((c1, c2, c3))
}

fn sent_scores_from_counts((c1, c2, c3): Counts) -> SentScores {
    let cat1 = ratio(c1.0, c1.1);
    let cat2 = ratio(c2.0, c2.1);
    let cat3 = ratio(c3.0, c3.1);
    SentScores {
        cat1,
        cat2,
        cat3,
        macro_avg: (cat1 + cat2 + cat3) / 3.0,
        micro_avg: ratio(c1.0 + c2.0 + c3.0, c1.1 + c2.1 + c3.1),
    }
}

/// Cat-1 is boolean accuracy over (participant, event-kind) questions;
/// Cat-2 scores step sets on gold-true events; Cat-3 scores exact location
/// strings on gold-true events. Macro averages the three; micro weights by
/// question counts.
pub fn sent_eval(pred: &SentAnswers, gold: &SentAnswers) -> Result<SentScores> {
    Ok(sent_scores_from_counts(sent_counts(pred, gold)?))
}

/// Corpus-level sentence scores: question counts pooled over paragraphs.
pub fn sent_eval_corpus<'a>(
    pairs: impl IntoIterator<Item = (&'a SentAnswers, &'a SentAnswers)>,
) -> Result<SentScores> {
    let mut totals: Counts = ((0, 0), (0, 0), (0, 0));
    for (pred, gold) in pairs {
        let (c1, c2, c3) = sent_counts(pred, gold)?;
        totals.0 .0 += c1.0;
        totals.0 .1 += c1.1;
        totals.1 .0 += c2.0;
        totals.1 .1 += c2.1;
        totals.2 .0 += c3.0;
        totals.2 .1 += c3.1;
    }
    Ok(sent_scores_from_counts(totals))
}

/// A complete score report with the configuration that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreReport {
    pub doc: DocScores,
    pub sent: SentScores,
    pub config: serde_json::Value,
}

impl ScoreReport {
    pub fn new(doc: DocScores, sent: SentScores, config: serde_json::Value) -> ScoreReport {
        ScoreReport { doc, sent, config }
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "doc": {"p": self.doc.p, "r": self.doc.r, "f1": self.doc.f1},
            "sent": {
                "cat1": self.sent.cat1,
                "cat2": self.sent.cat2,
                "cat3": self.sent.cat3,
                "macro": self.sent.macro_avg,
                "micro": self.sent.micro_avg,
            },
            "config": self.config,
        })
    }

    fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("document-level\n");
        s.push_str(&format!("  precision {:.4}\n", self.doc.p));
        s.push_str(&format!("  recall    {:.4}\n", self.doc.r));
        s.push_str(&format!("  f1        {:.4}\n", self.doc.f1));
        s.push_str("sentence-level\n");
        s.push_str(&format!("  cat1      {:.4}\n", self.sent.cat1));
        s.push_str(&format!("  cat2      {:.4}\n", self.sent.cat2));
        s.push_str(&format!("  cat3      {:.4}\n", self.sent.cat3));
        s.push_str(&format!("  macro     {:.4}\n", self.sent.macro_avg));
        s.push_str(&format!("  micro     {:.4}\n", self.sent.micro_avg));
        s.push_str(&format!("config: {}\n", self.config));
        s
    }
}

/// Writes `<prefix>.json` and `<prefix>.txt`; identical scores produce
/// identical bytes.
pub fn report(scores: &ScoreReport, prefix: impl AsRef<Path>) -> Result<()> {
    let prefix = prefix.as_ref();
    let json_path = prefix.with_extension("json");
    let txt_path = prefix.with_extension("txt");
    let mut jf = std::fs::File::create(&json_path)?;
    serde_json::to_writer_pretty(&mut jf, &scores.to_json())?;
    jf.write_all(b"\n")?;
    std::fs::write(&txt_path, scores.to_text())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(spec: &[(&str, &[&str])]) -> Vec<(String, Vec<LocationValue>)> {
        spec.iter()
            .map(|(name, vals)| {
                (
                    name.to_string(),
                    vals.iter().map(|v| LocationValue::parse(v).unwrap()).collect(),
                )
            })
            .collect()
    }

    #[test]
    fn created_surviving_participant_is_an_output() {
        let events = events_from_rows(&rows(&[("x", &["-", "x1", "x1"])])).unwrap();
        assert!(events.outputs.contains("x"));
        assert!(events.inputs.is_empty());
    }

    #[test]
    fn destroy_and_create_at_same_step_is_a_conversion() {
        let events = events_from_rows(&rows(&[
            ("a", &["soil", "soil", "-", "-"]),
            ("b", &["-", "-", "rock", "rock"]),
        ]))
        .unwrap();
        assert_eq!(events.conversions.len(), 1);
        let conv = events.conversions.iter().next().unwrap();
        assert_eq!(conv.step, 2);
        assert_eq!(conv.destroyed, vec!["a".to_string()]);
        assert_eq!(conv.created, vec!["b".to_string()]);
        assert_eq!(conv.locations, vec!["rock".to_string()]);
        assert!(events.inputs.contains("a"));
        assert!(events.outputs.contains("b"));
    }

    #[test]
    fn all_none_grid_has_no_events() {
        let events = events_from_rows(&rows(&[("a", &["soil", "soil", "soil"])])).unwrap();
        assert!(events.inputs.is_empty());
        assert!(events.outputs.is_empty());
        assert!(events.moves.is_empty());
        assert!(events.conversions.is_empty());
    }

    #[test]
    fn ragged_rows_error() {
        assert!(events_from_rows(&rows(&[("a", &["-", "x"]), ("b", &["-"])])).is_err());
    }

    #[test]
    fn doc_eval_perfect_and_empty_conventions() {
        let gold = events_from_rows(&rows(&[("a", &["soil", "rock", "-"])])).unwrap();
        let s = doc_eval(&gold, &gold);
        assert_eq!((s.p, s.r, s.f1), (1.0, 1.0, 1.0));
        let empty = DocEvents::default();
        let s = doc_eval(&empty, &gold);
        assert_eq!((s.p, s.r, s.f1), (1.0, 0.0, 0.0));
        let s = doc_eval(&gold, &empty);
        assert_eq!(s.r, 1.0);
        assert!(s.f1 > 0.0 || s.p == 0.0);
    }

    #[test]
    fn locations_compare_case_folded() {
        let a = events_from_rows(&rows(&[("x", &["Dry Soil", "rock"])])).unwrap();
        let b = events_from_rows(&rows(&[("x", &["dry  soil", "Rock"])])).unwrap();
        assert_eq!(doc_eval(&a, &b).f1, 1.0);
    }

    #[test]
    fn sent_eval_perfect_is_all_ones() {
        let answers =
            answers_from_rows(&rows(&[("a", &["-", "soil", "rock", "-"])])).unwrap();
        let s = sent_eval(&answers, &answers).unwrap();
        assert_eq!(s.cat1, 1.0);
        assert_eq!(s.cat2, 1.0);
        assert_eq!(s.cat3, 1.0);
        assert_eq!(s.macro_avg, 1.0);
        assert_eq!(s.micro_avg, 1.0);
    }

    #[test]
    fn sent_eval_step_off_by_one_zeroes_cat2_event() {
        let gold = answers_from_rows(&rows(&[("a", &["-", "soil", "soil"])])).unwrap();
        let pred = answers_from_rows(&rows(&[("a", &["-", "-", "soil"])])).unwrap();
        let s = sent_eval(&pred, &gold).unwrap();
        // Cat-1 agrees (created), Cat-2 disagrees on the step.
        assert_eq!(s.cat1, 1.0);
        assert_eq!(s.cat2, 0.0);
    }

    #[test]
    fn sent_eval_rejects_mismatched_participants() {
        let a = answers_from_rows(&rows(&[("a", &["-", "x"])])).unwrap();
        let b = answers_from_rows(&rows(&[("b", &["-", "x"])])).unwrap();
        assert!(sent_eval(&a, &b).is_err());
    }

    #[test]
    fn report_bytes_are_deterministic() {
        let gold = events_from_rows(&rows(&[("a", &["soil", "rock", "-"])])).unwrap();
        let doc = doc_eval(&gold, &gold);
        let answers = answers_from_rows(&rows(&[("a", &["soil", "rock", "-"])])).unwrap();
        let sent = sent_eval(&answers, &answers).unwrap();
        let report_data = ScoreReport::new(doc, sent, json!({"no_mask": false}));
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("r1");
        let p2 = dir.path().join("r2");
        report(&report_data, &p1).unwrap();
        report(&report_data, &p2).unwrap();
        let a = std::fs::read(p1.with_extension("json")).unwrap();
        let b = std::fs::read(p2.with_extension("json")).unwrap();
        assert_eq!(a, b);
        let parsed: serde_json::Value = serde_json::from_slice(&a).unwrap();
        assert_eq!(parsed["doc"]["f1"], 1.0);
        assert_eq!(parsed["config"]["no_mask"], false);
        let txt = std::fs::read_to_string(p1.with_extension("txt")).unwrap();
        assert!(txt.contains("f1"));
    }
}
