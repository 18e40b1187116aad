//! The participant-specific heterogeneous graph: participant nodes chained
//! by temporal edges, entity nodes attached by verb-labeled factual edges,
//! and attribute nodes attached by logical edges.

use crate::annotate::{Phrase, SyntaxTuple};
use crate::corpus::{AnnotatedParagraph, Token};
use crate::error::{Error, Result};
use crate::lexicon::{tuple_matches_participant, Attribute};
use serde_json::json;

/// A noun phrase related to the participant at one step. Keyed by
/// (text, sentence), so the same words in two sentences are two nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityNode {
    pub text: String,
    pub sent_index: usize,
    /// Document positions of the span tokens.
    pub positions: Vec<usize>,
}

/// Participant-entity edge, labeled by the governing verb.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactualEdge {
    /// 1-based step of the participant endpoint.
    pub step: usize,
    pub entity: usize,
    pub verb_lemma: String,
    pub verb_doc_index: usize,
}

/// Participant-attribute edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogicalEdge {
    pub step: usize,
    pub attribute: usize,
}

/// A node reference as returned by [`ParticipantGraph::neighbors`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRef {
    Participant(usize),
    Entity(usize),
    Attribute(usize),
}

/// An edge reference as returned by [`ParticipantGraph::co_edges`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeRef {
    Factual(usize),
    /// Incoming temporal edge, identified by its target step.
    Temporal(usize),
    Logical(usize),
}

/// A named invariant violation found by [`ParticipantGraph::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub kind: &'static str,
    pub detail: String,
}

/// The assembled graph for one (paragraph, participant) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticipantGraph {
    pub participant: String,
    /// Step count T; participant nodes are steps 1..=T.
    pub steps: usize,
    pub entities: Vec<EntityNode>,
    pub attributes: Vec<Attribute>,
    pub factual_edges: Vec<FactualEdge>,
    /// Consecutive (t-1, t) pairs forming the temporal chain.
    pub temporal_edges: Vec<(usize, usize)>,
    pub logical_edges: Vec<LogicalEdge>,
}

fn doc_positions(phrase: &Phrase, sentence: &[Token]) -> Vec<usize> {
    phrase.tokens(sentence).iter().map(|t| t.doc_index).collect()
}

/// Builds the graph from the annotation pipeline's outputs. Tuples whose
/// subject or object soft-matches the participant contribute their other
/// argument spans and prepositional phrases as entity nodes.
pub fn build_graph(
    paragraph: &AnnotatedParagraph,
    participant: &str,
    tuples: &[SyntaxTuple],
    attributes: &[Attribute],
) -> Result<ParticipantGraph> {
    let steps = paragraph.step_count();
    if steps == 0 {
        return Err(Error::validation("cannot build a graph over zero steps"));
    }

    let mut graph = ParticipantGraph {
        participant: participant.to_string(),
        steps,
        entities: Vec::new(),
        attributes: attributes.to_vec(),
        factual_edges: Vec::new(),
        temporal_edges: (2..=steps).map(|t| (t - 1, t)).collect(),
        logical_edges: Vec::new(),
    };

    for tuple in tuples {
        let sentence = &paragraph.sentences[tuple.sent_index];
        if !tuple_matches_participant(tuple, sentence, participant) {
            continue;
        }
        let subject_is_participant = tuple
            .subject
            .as_ref()
            .map(|p| crate::annotate::is_match(participant, p.tokens(sentence)))
            .unwrap_or(false);
        let object_is_participant = tuple
            .object
            .as_ref()
            .map(|p| crate::annotate::is_match(participant, p.tokens(sentence)))
            .unwrap_or(false);

        let mut candidates: Vec<&Phrase> = Vec::new();
        if !subject_is_participant {
            if let Some(s) = &tuple.subject {
                candidates.push(s);
            }
        }
        if !object_is_participant {
            if let Some(o) = &tuple.object {
                candidates.push(o);
            }
        }
        for (_, np) in &tuple.prep_phrases {
            candidates.push(np);
        }

        let step = tuple.sent_index + 1;
        for phrase in candidates {
            let entity = graph.intern_entity(phrase, sentence, tuple.sent_index);
            graph.factual_edges.push(FactualEdge {
                step,
                entity,
                verb_lemma: tuple.verb_lemma.clone(),
                verb_doc_index: tuple.verb_doc_index,
            });
        }
    }

    for (i, attr) in graph.attributes.iter().enumerate() {
        graph.logical_edges.push(LogicalEdge {
            step: attr.sent_index + 1,
            attribute: i,
        });
    }

    Ok(graph)
}

impl ParticipantGraph {
    fn intern_entity(&mut self, phrase: &Phrase, sentence: &[Token], sent_index: usize) -> usize {
        if let Some(i) = self
            .entities
            .iter()
            .position(|e| e.text == phrase.text && e.sent_index == sent_index)
        {
            return i;
        }
        self.entities.push(EntityNode {
            text: phrase.text.clone(),
            sent_index,
            positions: doc_positions(phrase, sentence),
        });
        self.entities.len() - 1
    }

    /// Entity indices linked at step `t`.
    pub fn entities_at(&self, t: usize) -> Vec<usize> {
        let mut seen = Vec::new();
        for e in self.factual_edges.iter().filter(|e| e.step == t) {
            if !seen.contains(&e.entity) {
                seen.push(e.entity);
            }
        }
        seen
    }

    /// Attribute indices linked at step `t`.
    pub fn attributes_at(&self, t: usize) -> Vec<usize> {
        self.logical_edges
            .iter()
            .filter(|e| e.step == t)
            .map(|e| e.attribute)
            .collect()
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            return Err(Error::validation(format!(
                "step {t} out of range 1..={}",
                self.steps
            )));
        }
        Ok(())
    }

    /// Neighborhood of the participant node at step `t`: the previous
    /// participant node (when t > 1) plus linked entities and attributes.
    pub fn neighbors(&self, t: usize) -> Result<Vec<NodeRef>> {
        self.check_step(t)?;
        let mut out = Vec::new();
        if t > 1 {
            out.push(NodeRef::Participant(t - 1));
        }
        out.extend(self.entities_at(t).into_iter().map(NodeRef::Entity));
        out.extend(self.attributes_at(t).into_iter().map(NodeRef::Attribute));
        Ok(out)
    }

    /// Edges incident to the participant node at step `t`, mirroring
    /// [`Self::neighbors`].
    pub fn co_edges(&self, t: usize) -> Result<Vec<EdgeRef>> {
        self.check_step(t)?;
        let mut out = Vec::new();
        if t > 1 {
            out.push(EdgeRef::Temporal(t));
        }
        out.extend(
            self.factual_edges
                .iter()
                .enumerate()
                .filter(|(_, e)| e.step == t)
                .map(|(i, _)| EdgeRef::Factual(i)),
        );
        out.extend(
            self.logical_edges
                .iter()
                .enumerate()
                .filter(|(_, e)| e.step == t)
                .map(|(i, _)| EdgeRef::Logical(i)),
        );
        Ok(out)
    }

    /// Checks every structural invariant, collecting all violations.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.steps == 0 {
            out.push(Violation {
                kind: "empty-graph",
                detail: "graph has zero steps".into(),
            });
        }
        let expected: Vec<(usize, usize)> = (2..=self.steps).map(|t| (t - 1, t)).collect();
        if self.temporal_edges != expected {
            out.push(Violation {
                kind: "temporal-chain",
                detail: format!(
                    "temporal edges {:?} do not form the path over 1..={}",
                    self.temporal_edges, self.steps
                ),
            });
        }
        for (i, e) in self.factual_edges.iter().enumerate() {
            if e.step == 0 || e.step > self.steps {
                out.push(Violation {
                    kind: "edge-step-mismatch",
                    detail: format!("factual edge {i} step {} out of range", e.step),
                });
                continue;
            }
            match self.entities.get(e.entity) {
                None => out.push(Violation {
                    kind: "edge-step-mismatch",
                    detail: format!("factual edge {i} references missing entity {}", e.entity),
                }),
                Some(ent) if ent.sent_index != e.step - 1 => out.push(Violation {
                    kind: "edge-step-mismatch",
                    detail: format!(
                        "factual edge {i} at step {} references entity from sentence {}",
                        e.step, ent.sent_index
                    ),
                }),
                _ => {}
            }
        }
        for (i, e) in self.logical_edges.iter().enumerate() {
            match self.attributes.get(e.attribute) {
                None => out.push(Violation {
                    kind: "edge-step-mismatch",
                    detail: format!("logical edge {i} references missing attribute {}", e.attribute),
                }),
                Some(attr) if attr.sent_index + 1 != e.step => out.push(Violation {
                    kind: "edge-step-mismatch",
                    detail: format!(
                        "logical edge {i} at step {} references attribute at sentence {}",
                        e.step, attr.sent_index
                    ),
                }),
                _ => {}
            }
        }
        for (i, attr) in self.attributes.iter().enumerate() {
            if let Err(e) = attr.check() {
                out.push(Violation {
                    kind: "attribute-invariant",
                    detail: format!("attribute {i}: {e}"),
                });
            }
            if !self.logical_edges.iter().any(|e| e.attribute == i) {
                out.push(Violation {
                    kind: "attribute-unlinked",
                    detail: format!("attribute {i} has no logical edge"),
                });
            }
        }
        for (i, ent) in self.entities.iter().enumerate() {
            if !self.factual_edges.iter().any(|e| e.entity == i) {
                out.push(Violation {
                    kind: "entity-unreferenced",
                    detail: format!("entity {i} ({}) has no factual edge", ent.text),
                });
            }
            if ent.positions.is_empty() {
                out.push(Violation {
                    kind: "entity-positions",
                    detail: format!("entity {i} ({}) has no source positions", ent.text),
                });
            }
        }
        out
    }

    /// JSON debug dump: the graph doubles as the rationale for a prediction.
    pub fn to_debug_json(&self) -> serde_json::Value {
        let mut nodes = Vec::new();
        for t in 1..=self.steps {
            nodes.push(json!({"id": format!("p{t}"), "type": "participant", "step": t}));
        }
        for (i, e) in self.entities.iter().enumerate() {
            nodes.push(json!({
                "id": format!("e{i}"),
                "type": "entity",
                "text": e.text,
                "sent_index": e.sent_index,
                "positions": e.positions,
            }));
        }
        for (i, a) in self.attributes.iter().enumerate() {
            nodes.push(json!({
                "id": format!("a{i}"),
                "type": "attribute",
                "sent_index": a.sent_index,
                "change": a.change.to_string(),
                "before_loc": a.before_loc,
                "after_loc": a.after_loc,
                "provenance": match a.provenance {
                    crate::lexicon::Provenance::Lexicon => "lexicon",
                    crate::lexicon::Provenance::Complement => "complement",
                },
            }));
        }
        let mut edges = Vec::new();
        for (from, to) in &self.temporal_edges {
            edges.push(json!({"type": "temporal", "from": format!("p{from}"), "to": format!("p{to}")}));
        }
        for e in &self.factual_edges {
            edges.push(json!({
                "type": "factual",
                "from": format!("p{}", e.step),
                "to": format!("e{}", e.entity),
                "verb": e.verb_lemma,
            }));
        }
        for e in &self.logical_edges {
            edges.push(json!({
                "type": "logical",
                "from": format!("p{}", e.step),
                "to": format!("a{}", e.attribute),
            }));
        }
        json!({"participant": self.participant, "steps": self.steps, "nodes": nodes, "edges": edges})
    }
}
