//! Canonical data model: annotated paragraphs, gold grids, label derivation,
//! corpus file ingestion and splitting.
//!
//! The corpus file is UTF-8 JSON lines, one paragraph per line:
//! `{"id", "sentences": [[{"text","pos","lemma"}, ...], ...],
//!   "participants": [...], "grid": [[...], ...]}`.
//! Grid row `i` belongs to participant `i` and holds `T+1` values: the state
//! before step 1 through the state after step `T`. `"-"` marks non-existence
//! and `"?"` an unknown location; anything else is a location span.

mod generator;

pub use generator::generate_mini_corpus;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Coarse part-of-speech tags carried by the corpus file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Pos {
    Noun,
    Verb,
    Adj,
    Adp,
    Pron,
    Det,
    Other,
}

/// One word of a paragraph. `sent_index` and `doc_index` are assigned at
/// load time and are not part of the file format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub pos: Pos,
    pub lemma: String,
    pub sent_index: usize,
    pub doc_index: usize,
}

/// The four state-change classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum StateChange {
    Create,
    Destroy,
    Move,
    None,
}

impl StateChange {
    pub const ALL: [StateChange; 4] = [
        StateChange::Create,
        StateChange::Destroy,
        StateChange::Move,
        StateChange::None,
    ];

    pub fn index(self) -> usize {
        match self {
            StateChange::Create => 0,
            StateChange::Destroy => 1,
            StateChange::Move => 2,
            StateChange::None => 3,
        }
    }
}

impl fmt::Display for StateChange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StateChange::Create => "CREATE",
            StateChange::Destroy => "DESTROY",
            StateChange::Move => "MOVE",
            StateChange::None => "NONE",
        };
        f.write_str(s)
    }
}

/// The three coarse location-state classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocationState {
    NotExist,
    Unknown,
    Known,
}

impl LocationState {
    pub const ALL: [LocationState; 3] = [
        LocationState::NotExist,
        LocationState::Unknown,
        LocationState::Known,
    ];

    pub fn index(self) -> usize {
        match self {
            LocationState::NotExist => 0,
            LocationState::Unknown => 1,
            LocationState::Known => 2,
        }
    }
}

/// One cell of a gold or predicted location grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum LocationValue {
    NonExist,
    Unknown,
    Span(String),
}

impl LocationValue {
    /// Parses a grid cell. Empty span strings are rejected.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "-" => Ok(LocationValue::NonExist),
            "?" => Ok(LocationValue::Unknown),
            other if other.trim().is_empty() => {
                Err(Error::validation("empty location span in grid"))
            }
            other => Ok(LocationValue::Span(other.to_string())),
        }
    }

    /// The grid-file representation of this value.
    pub fn as_grid_str(&self) -> &str {
        match self {
            LocationValue::NonExist => "-",
            LocationValue::Unknown => "?",
            LocationValue::Span(s) => s,
        }
    }

    pub fn exists(&self) -> bool {
        !matches!(self, LocationValue::NonExist)
    }

    pub fn location_state(&self) -> LocationState {
        match self {
            LocationValue::NonExist => LocationState::NotExist,
            LocationValue::Unknown => LocationState::Unknown,
            LocationValue::Span(_) => LocationState::Known,
        }
    }

    /// Case-folded, whitespace-normalized copy used for location comparison.
    pub fn normalized(&self) -> LocationValue {
        match self {
            LocationValue::Span(s) => {
                let folded = s.to_lowercase();
                LocationValue::Span(folded.split_whitespace().collect::<Vec<_>>().join(" "))
            }
            other => other.clone(),
        }
    }
}

/// Per-participant rows of `T+1` location values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldGrid {
    pub rows: Vec<Vec<LocationValue>>,
}

/// A procedural paragraph with its participants and gold grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedParagraph {
    pub id: String,
    pub sentences: Vec<Vec<Token>>,
    pub participants: Vec<String>,
    pub gold: GoldGrid,
}

impl AnnotatedParagraph {
    /// Number of time steps (sentences).
    pub fn step_count(&self) -> usize {
        self.sentences.len()
    }

    /// Tokens in document order.
    pub fn tokens(&self) -> impl Iterator<Item = &Token> {
        self.sentences.iter().flatten()
    }

    /// Total token count |D|.
    pub fn doc_len(&self) -> usize {
        self.sentences.iter().map(|s| s.len()).sum()
    }

    pub fn gold_row(&self, participant: &str) -> Option<&[LocationValue]> {
        let idx = self.participants.iter().position(|p| p == participant)?;
        self.gold.rows.get(idx).map(|r| r.as_slice())
    }

    fn validate(&self) -> Result<()> {
        let t = self.sentences.len();
        if t == 0 {
            return Err(Error::validation(format!(
                "paragraph {}: no sentences",
                self.id
            )));
        }
        if self.participants.is_empty() {
            return Err(Error::validation(format!(
                "paragraph {}: no participants",
                self.id
            )));
        }
        if self.participants.iter().any(|p| p.trim().is_empty()) {
            return Err(Error::validation(format!(
                "paragraph {}: empty participant string",
                self.id
            )));
        }
        if self.gold.rows.len() != self.participants.len() {
            return Err(Error::validation(format!(
                "paragraph {}: {} grid rows for {} participants",
                self.id,
                self.gold.rows.len(),
                self.participants.len()
            )));
        }
        for (i, row) in self.gold.rows.iter().enumerate() {
            if row.len() != t + 1 {
                return Err(Error::validation(format!(
                    "paragraph {}: grid row {} has {} entries, expected {}",
                    self.id,
                    i,
                    row.len(),
                    t + 1
                )));
            }
        }
        for sent in &self.sentences {
            if sent.iter().any(|tok| tok.text.is_empty()) {
                return Err(Error::validation(format!(
                    "paragraph {}: empty token text",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawToken {
    text: String,
    pos: Pos,
    lemma: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawParagraph {
    id: String,
    sentences: Vec<Vec<RawToken>>,
    participants: Vec<String>,
    grid: Vec<Vec<String>>,
}

impl RawParagraph {
    fn into_paragraph(self) -> Result<AnnotatedParagraph> {
        let mut doc_index = 0;
        let mut sentences = Vec::with_capacity(self.sentences.len());
        for (sent_index, raw_sent) in self.sentences.into_iter().enumerate() {
            let mut sent = Vec::with_capacity(raw_sent.len());
            for raw in raw_sent {
                sent.push(Token {
                    text: raw.text,
                    pos: raw.pos,
                    lemma: raw.lemma,
                    sent_index,
                    doc_index,
                });
                doc_index += 1;
            }
            sentences.push(sent);
        }
        let mut rows = Vec::with_capacity(self.grid.len());
        for row in &self.grid {
            let parsed: Result<Vec<_>> = row.iter().map(|v| LocationValue::parse(v)).collect();
            rows.push(parsed.map_err(|e| {
                Error::validation(format!("paragraph {}: {}", self.id, e))
            })?);
        }
        let paragraph = AnnotatedParagraph {
            id: self.id,
            sentences,
            participants: self.participants,
            gold: GoldGrid { rows },
        };
        paragraph.validate()?;
        Ok(paragraph)
    }

    fn from_paragraph(p: &AnnotatedParagraph) -> Self {
        RawParagraph {
            id: p.id.clone(),
            sentences: p
                .sentences
                .iter()
                .map(|s| {
                    s.iter()
                        .map(|t| RawToken {
                            text: t.text.clone(),
                            pos: t.pos,
                            lemma: t.lemma.clone(),
                        })
                        .collect()
                })
                .collect(),
            participants: p.participants.clone(),
            grid: p
                .gold
                .rows
                .iter()
                .map(|row| row.iter().map(|v| v.as_grid_str().to_string()).collect())
                .collect(),
        }
    }
}

/// Loads a JSON-lines corpus file. Parse failures name the offending line;
/// invariant violations name the paragraph id.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<AnnotatedParagraph>> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawParagraph = serde_json::from_str(&line)
            .map_err(|e| Error::parse(i + 1, e.to_string()))?;
        out.push(raw.into_paragraph()?);
    }
    Ok(out)
}

/// Writes a corpus in the JSON-lines format read back by [`load_corpus`].
pub fn save_corpus(corpus: &[AnnotatedParagraph], path: impl AsRef<Path>) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    for p in corpus {
        let raw = RawParagraph::from_paragraph(p);
        serde_json::to_writer(&mut file, &raw)?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

/// Serializes one paragraph to its corpus-file line.
pub fn paragraph_to_json(p: &AnnotatedParagraph) -> Result<String> {
    Ok(serde_json::to_string(&RawParagraph::from_paragraph(p))?)
}

/// Derives per-step state changes from a grid row of `T+1` location values.
///
/// Transition table per step: gaining existence is CREATE, losing it is
/// DESTROY, two existing values that differ as strings are MOVE, anything
/// else is NONE.
pub fn derive_gold_state_changes(row: &[LocationValue]) -> Vec<StateChange> {
    row.windows(2)
        .map(|w| match (&w[0], &w[1]) {
            (LocationValue::NonExist, after) if after.exists() => StateChange::Create,
            (before, LocationValue::NonExist) if before.exists() => StateChange::Destroy,
            (before, after) if before.exists() && after.exists() => {
                if before.as_grid_str() != after.as_grid_str() {
                    StateChange::Move
                } else {
                    StateChange::None
                }
            }
            _ => StateChange::None,
        })
        .collect()
}

/// Maps each grid value to its coarse location state.
pub fn derive_gold_location_states(row: &[LocationValue]) -> Vec<LocationState> {
    row.iter().map(|v| v.location_state()).collect()
}

/// Splits a corpus into disjoint, order-preserving (train, dev, test) parts
/// with largest-remainder rounding of the target sizes.
pub fn split_corpus(
    corpus: &[AnnotatedParagraph],
    fractions: (f64, f64, f64),
) -> Result<(
    Vec<AnnotatedParagraph>,
    Vec<AnnotatedParagraph>,
    Vec<AnnotatedParagraph>,
)> {
    if corpus.is_empty() {
        return Err(Error::validation("cannot split an empty corpus"));
    }
    let fracs = [fractions.0, fractions.1, fractions.2];
    let sum: f64 = fracs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::validation(format!(
            "split fractions sum to {sum}, expected 1"
        )));
    }
    if fracs.iter().any(|f| *f < 0.0) {
        return Err(Error::validation("split fractions must be non-negative"));
    }
    let n = corpus.len();
    let quotas: Vec<f64> = fracs.iter().map(|f| f * n as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    // Hand the leftover seats to the largest fractional remainders,
    // ties broken by split order.
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for k in 0..(n - assigned) {
        sizes[order[k % 3]] += 1;
    }
    let train = corpus[..sizes[0]].to_vec();
    let dev = corpus[sizes[0]..sizes[0] + sizes[1]].to_vec();
    let test = corpus[sizes[0] + sizes[1]..].to_vec();
    Ok((train, dev, test))
}
