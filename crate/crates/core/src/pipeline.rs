//! Ties the symbolic stages together: tuple extraction, lexicon inference,
//! mention alignment, graph assembly.

use crate::annotate::{build_mention_map, extract_tuples, MentionMap, SyntaxTuple};
use crate::corpus::AnnotatedParagraph;
use crate::error::{Error, Result};
use crate::graph::{build_graph, ParticipantGraph};
use crate::lexicon::{infer_attributes, Attribute, Lexicon};

/// Symbolic analysis of one (paragraph, participant) pair.
#[derive(Debug, Clone)]
pub struct ParticipantAnalysis {
    pub tuples: Vec<SyntaxTuple>,
    pub attributes: Vec<Attribute>,
    pub graph: ParticipantGraph,
    pub mention: MentionMap,
}

/// Tuples of every sentence in document order.
pub fn extract_all_tuples(paragraph: &AnnotatedParagraph) -> Vec<SyntaxTuple> {
    paragraph
        .sentences
        .iter()
        .flat_map(|s| extract_tuples(s))
        .collect()
}

/// Runs the full symbolic pipeline for one participant.
pub fn analyze(
    paragraph: &AnnotatedParagraph,
    participant: &str,
    lexicon: &Lexicon,
) -> Result<ParticipantAnalysis> {
    if !paragraph.participants.iter().any(|p| p == participant) {
        return Err(Error::validation(format!(
            "unknown participant '{participant}' in paragraph {}",
            paragraph.id
        )));
    }
    let tuples = extract_all_tuples(paragraph);
    let attributes = infer_attributes(&paragraph.sentences, participant, &tuples, lexicon);
    let graph = build_graph(paragraph, participant, &tuples, &attributes)?;
    let mention = build_mention_map(paragraph, participant);
    Ok(ParticipantAnalysis {
        tuples,
        attributes,
        graph,
        mention,
    })
}
