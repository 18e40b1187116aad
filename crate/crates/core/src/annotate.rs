//! Shallow deterministic extraction over POS-tagged tokens: per-sentence
//! (S, V, O, (PREP NP)*) tuples and participant mention alignment.

use crate::corpus::{AnnotatedParagraph, Pos, Token};
use std::collections::BTreeSet;

/// Distances to the nearest mention are capped here; it is also the sentinel
/// for participants that are never mentioned.
pub const MAX_MENTION_DISTANCE: usize = 40;

/// A contiguous token index range within one sentence. `end` is exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenSpan {
    pub sent_index: usize,
    pub start: usize,
    pub end: usize,
}

impl TokenSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }

    pub fn tokens<'a>(&self, sentence: &'a [Token]) -> &'a [Token] {
        &sentence[self.start..self.end]
    }
}

/// A span with its resolved surface text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Phrase {
    pub span: TokenSpan,
    pub text: String,
}

impl Phrase {
    fn new(span: TokenSpan, sentence: &[Token]) -> Phrase {
        let text = span
            .tokens(sentence)
            .iter()
            .map(|t| t.text.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        Phrase { span, text }
    }

    pub fn tokens<'a>(&self, sentence: &'a [Token]) -> &'a [Token] {
        self.span.tokens(sentence)
    }
}

/// One verb-centered syntactic tuple.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntaxTuple {
    pub sent_index: usize,
    pub verb_lemma: String,
    /// Token index of the verb within its sentence.
    pub verb_index: usize,
    /// Document position of the verb token.
    pub verb_doc_index: usize,
    pub subject: Option<Phrase>,
    pub object: Option<Phrase>,
    pub prep_phrases: Vec<(String, Phrase)>,
}

/// Participant mention spans and per-token distances to the nearest mention.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MentionMap {
    pub participant: String,
    /// Mention spans per sentence, in sentence order.
    pub mentions: Vec<Vec<TokenSpan>>,
    /// Distance (in words, by document position) from each token to the
    /// nearest mention token, capped at [`MAX_MENTION_DISTANCE`].
    pub distances: Vec<usize>,
}

impl MentionMap {
    pub fn has_mentions(&self) -> bool {
        self.mentions.iter().any(|m| !m.is_empty())
    }

    /// Mention spans in sentence `sent_index`.
    pub fn mentions_in(&self, sent_index: usize) -> &[TokenSpan] {
        self.mentions
            .get(sent_index)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }
}

fn is_noun_run_pos(pos: Pos) -> bool {
    matches!(pos, Pos::Noun | Pos::Adj)
}

/// Maximal NOUN/ADJ run starting at or after `from`, skipping leading
/// determiners.
fn noun_run_after(sentence: &[Token], sent_index: usize, from: usize) -> Option<TokenSpan> {
    let mut i = from;
    while i < sentence.len() && sentence[i].pos == Pos::Det {
        i += 1;
    }
    if i >= sentence.len() || !is_noun_run_pos(sentence[i].pos) {
        return None;
    }
    let start = i;
    while i < sentence.len() && is_noun_run_pos(sentence[i].pos) {
        i += 1;
    }
    Some(TokenSpan { sent_index, start, end: i })
}

/// Rightmost maximal NOUN/ADJ/DET run that ends before `verb_index`.
fn subject_run_before(sentence: &[Token], sent_index: usize, verb_index: usize) -> Option<TokenSpan> {
    let subject_pos = |p: Pos| matches!(p, Pos::Noun | Pos::Adj | Pos::Det);
    let mut end = verb_index;
    while end > 0 {
        if subject_pos(sentence[end - 1].pos) {
            let mut start = end - 1;
            while start > 0 && subject_pos(sentence[start - 1].pos) {
                start -= 1;
            }
            return Some(TokenSpan { sent_index, start, end });
        }
        end -= 1;
    }
    None
}

/// Extracts one tuple per VERB token: the rightmost pre-verb noun run as
/// subject, the noun run immediately after the verb as object, and one
/// phrase per post-verb preposition.
pub fn extract_tuples(sentence: &[Token]) -> Vec<SyntaxTuple> {
    let sent_index = sentence.first().map(|t| t.sent_index).unwrap_or(0);
    let mut tuples = Vec::new();
    for (vi, tok) in sentence.iter().enumerate() {
        if tok.pos != Pos::Verb {
            continue;
        }
        let subject = subject_run_before(sentence, sent_index, vi)
            .map(|span| Phrase::new(span, sentence));
        // Object must start immediately after the verb, allowing only
        // determiners in between; a preposition there means no object.
        let object = {
            let mut j = vi + 1;
            while j < sentence.len() && sentence[j].pos == Pos::Det {
                j += 1;
            }
            if j < sentence.len() && is_noun_run_pos(sentence[j].pos) {
                noun_run_after(sentence, sent_index, vi + 1).map(|span| Phrase::new(span, sentence))
            } else {
                None
            }
        };
        let mut prep_phrases = Vec::new();
        for (pi, p) in sentence.iter().enumerate().skip(vi + 1) {
            if p.pos == Pos::Adp {
                if let Some(np) = noun_run_after(sentence, sent_index, pi + 1) {
                    prep_phrases.push((p.lemma.to_lowercase(), Phrase::new(np, sentence)));
                }
            }
        }
        tuples.push(SyntaxTuple {
            sent_index,
            verb_lemma: tok.lemma.to_lowercase(),
            verb_index: vi,
            verb_doc_index: tok.doc_index,
            subject,
            object,
            prep_phrases,
        });
    }
    tuples
}

fn lemma_set(words: impl Iterator<Item = String>) -> BTreeSet<String> {
    words.map(|w| w.to_lowercase()).collect()
}

/// Lemma-overlap score between a participant string and a token span:
/// |intersection| / |participant lemma set|. A match is declared at >= 0.5.
pub fn soft_match(participant: &str, span_tokens: &[Token]) -> f64 {
    let p_set = lemma_set(participant.split_whitespace().map(str::to_string));
    if p_set.is_empty() || span_tokens.is_empty() {
        return 0.0;
    }
    let s_set = lemma_set(span_tokens.iter().map(|t| t.lemma.clone()));
    let shared = p_set.intersection(&s_set).count();
    shared as f64 / p_set.len() as f64
}

/// Threshold above which a span counts as a participant mention.
pub const SOFT_MATCH_THRESHOLD: f64 = 0.5;

pub fn is_match(participant: &str, span_tokens: &[Token]) -> bool {
    soft_match(participant, span_tokens) >= SOFT_MATCH_THRESHOLD
}

/// Finds mention spans (maximal runs of participant-word tokens that pass
/// the soft match) and per-token distances to the nearest mention.
pub fn build_mention_map(paragraph: &AnnotatedParagraph, participant: &str) -> MentionMap {
    let p_words = lemma_set(participant.split_whitespace().map(str::to_string));
    let mut mentions: Vec<Vec<TokenSpan>> = Vec::with_capacity(paragraph.sentences.len());
    let mut mention_docs: Vec<usize> = Vec::new();

    for (sent_index, sentence) in paragraph.sentences.iter().enumerate() {
        let mut spans = Vec::new();
        let mut i = 0;
        while i < sentence.len() {
            if p_words.contains(&sentence[i].lemma.to_lowercase()) {
                let start = i;
                while i < sentence.len() && p_words.contains(&sentence[i].lemma.to_lowercase()) {
                    i += 1;
                }
                let span = TokenSpan { sent_index, start, end: i };
                if is_match(participant, span.tokens(sentence)) {
                    for t in span.tokens(sentence) {
                        mention_docs.push(t.doc_index);
                    }
                    spans.push(span);
                }
            } else {
                i += 1;
            }
        }
        mentions.push(spans);
    }

    let doc_len = paragraph.doc_len();
    let distances = if mention_docs.is_empty() {
        vec![MAX_MENTION_DISTANCE; doc_len]
    } else {
        (0..doc_len)
            .map(|d| {
                mention_docs
                    .iter()
                    .map(|m| m.abs_diff(d))
                    .min()
                    .unwrap()
                    .min(MAX_MENTION_DISTANCE)
            })
            .collect()
    };

    MentionMap {
        participant: participant.to_string(),
        mentions,
        distances,
    }
}
