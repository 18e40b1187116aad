//! The neural network over the participant graph: step-indexed contextual
//! encoding, a gated propagation stream with relational attention over
//! attribute nodes, and three prediction heads (state change, location
//! state, location span) with a symbolic location mask.

use crate::annotate::MentionMap;
use crate::autodiff::layers::{self, GruIds, LstmIds};
use crate::autodiff::{Params, Tape, TensorId};
use crate::corpus::{AnnotatedParagraph, LocationState, Pos, StateChange, Token};
use crate::error::{Error, Result};
use crate::graph::ParticipantGraph;
use crate::pipeline;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

pub const PAD_ID: usize = 0;
pub const OOV_ID: usize = 1;
/// Rows in the position-embedding table: distances 0..=40.
const DISTANCE_ROWS: usize = crate::annotate::MAX_MENTION_DISTANCE + 1;
/// Attribute-embedding rows: the four changes plus a null-attribute query.
const ATTRIBUTE_ROWS: usize = 5;
const NULL_ATTRIBUTE_ROW: usize = 4;
/// Decoded spans run from the start position to the best end within this
/// many tokens.
pub const SPAN_WINDOW: usize = 5;

/// Model dimensions. `hidden` is used for the encoder directions, the
/// gated participant cell, the attention output, and the span recurrences;
/// `embed` for the word, position, and sentence-indicator tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub embed: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 32,
            embed: 16,
        }
    }
}

impl ModelConfig {
    /// Contextual dimension: two encoder directions.
    pub fn contextual_dim(&self) -> usize {
        2 * self.hidden
    }
}

/// Ablation switches mirroring the ablation table rows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub no_mask: bool,
    pub no_attributes: bool,
    pub no_graph: bool,
}

/// Lemma vocabulary with a fixed padding row and an out-of-vocabulary
/// bucket.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    lemmas: Vec<String>,
}

impl Vocab {
    pub fn from_corpus(paragraphs: &[AnnotatedParagraph]) -> Vocab {
        let set: BTreeSet<String> = paragraphs
            .iter()
            .flat_map(|p| p.tokens())
            .map(|t| t.lemma.to_lowercase())
            .collect();
        Vocab {
            lemmas: set.into_iter().collect(),
        }
    }

    pub fn from_lemmas(lemmas: Vec<String>) -> Vocab {
        Vocab { lemmas }
    }

    pub fn lemmas(&self) -> &[String] {
        &self.lemmas
    }

    /// Table size including PAD and OOV rows.
    pub fn table_rows(&self) -> usize {
        self.lemmas.len() + 2
    }

    pub fn id(&self, lemma: &str) -> usize {
        let folded = lemma.to_lowercase();
        match self.lemmas.binary_search(&folded) {
            Ok(i) => i + 2,
            Err(_) => OOV_ID,
        }
    }
}

/// Everything the forward pass needs for one (paragraph, participant) pair.
#[derive(Debug, Clone)]
pub struct ModelInputs {
    pub id: String,
    pub participant: String,
    pub step_count: usize,
    pub mention: MentionMap,
    pub graph: ParticipantGraph,
    /// Location mask over document positions, already fail-open.
    pub mask: Vec<bool>,
    pub lemma_ids: Vec<usize>,
    pub distance_ids: Vec<usize>,
    pub sent_of: Vec<usize>,
    pub token_texts: Vec<String>,
    pub token_pos: Vec<Pos>,
}

impl ModelInputs {
    pub fn build(
        paragraph: &AnnotatedParagraph,
        participant: &str,
        lexicon: &crate::lexicon::Lexicon,
        vocab: &Vocab,
    ) -> Result<ModelInputs> {
        let analysis = pipeline::analyze(paragraph, participant, lexicon)?;
        let mask = location_mask(paragraph, &analysis.graph);
        let tokens: Vec<&Token> = paragraph.tokens().collect();
        Ok(ModelInputs {
            id: paragraph.id.clone(),
            participant: participant.to_string(),
            step_count: paragraph.step_count(),
            mask,
            lemma_ids: tokens.iter().map(|t| vocab.id(&t.lemma)).collect(),
            distance_ids: analysis.mention.distances.clone(),
            sent_of: tokens.iter().map(|t| t.sent_index).collect(),
            token_texts: tokens.iter().map(|t| t.text.clone()).collect(),
            token_pos: tokens.iter().map(|t| t.pos).collect(),
            mention: analysis.mention,
            graph: analysis.graph,
        })
    }

    pub fn doc_len(&self) -> usize {
        self.lemma_ids.len()
    }
}

/// Positions allowed by the location mask: inside an entity-node span of
/// the graph, or tagged NOUN/ADJ. An all-false mask fails open.
pub fn location_mask(paragraph: &AnnotatedParagraph, graph: &ParticipantGraph) -> Vec<bool> {
    let mut mask: Vec<bool> = paragraph
        .tokens()
        .map(|t| matches!(t.pos, Pos::Noun | Pos::Adj))
        .collect();
    for entity in &graph.entities {
        for p in &entity.positions {
            if let Some(m) = mask.get_mut(*p) {
                *m = true;
            }
        }
    }
    if mask.iter().all(|m| !m) {
        mask.iter_mut().for_each(|m| *m = true);
    }
    mask
}

/// Recurrent probability inputs for one pass: gold one-hots during
/// training, absent at inference.
#[derive(Debug, Clone)]
pub struct Teacher {
    /// Gold state change per step (length T).
    pub changes: Vec<StateChange>,
    /// Gold location state per grid cell (length T+1).
    pub loc_states: Vec<LocationState>,
    /// Matched gold span per grid cell as inclusive document positions.
    pub spans: Vec<Option<(usize, usize)>>,
}

/// A previous-step span distribution: a constant vector under teacher
/// forcing, a tape tensor when chaining the model's own predictions.
enum SpanPrev {
    Constant(Vec<f64>),
    Tensor(TensorId),
}

/// Per-step tensor streams produced by propagation.
pub struct ParticipantStates {
    /// Gated stream for t = 0..=T.
    pub gru_stream: Vec<TensorId>,
    /// Attention stream for t = 1..=T (zeros when attributes are off).
    pub attn_stream: Vec<TensorId>,
    /// Final per-step representation for t = 0..=T.
    pub final_states: Vec<TensorId>,
}

/// All tensors of one forward pass.
pub struct Forward {
    pub tape: Tape,
    pub step_count: usize,
    /// The mask the span heads actually used (all-true under `no_mask`).
    pub mask: Vec<bool>,
    /// Contextual encodings, indexed [t][doc position] for t = 0..=T.
    pub encodings: Vec<Vec<TensorId>>,
    pub states: ParticipantStates,
    /// State-change distributions for t = 1..=T (index 0 is step 1).
    pub change_dists: Vec<TensorId>,
    /// Location-state distributions for t = 0..=T.
    pub locstate_dists: Vec<TensorId>,
    /// Span start/end distributions for t = 0..=T.
    pub start_dists: Vec<TensorId>,
    pub end_dists: Vec<TensorId>,
}

/// The trained network: configuration, vocabulary, parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: Params,
}

impl Model {
    /// Initializes all parameters from a seeded generator. The padding
    /// embedding row stays zero.
    pub fn new(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Model> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden;
        let e = config.embed;
        let d = config.contextual_dim();
        let mut params = Params::new();

        params.add_uniform("embed.word", &[vocab.table_rows(), e], &mut rng)?;
        params.add_uniform("embed.position", &[DISTANCE_ROWS, e], &mut rng)?;
        params.add_uniform("embed.indicator", &[3, e], &mut rng)?;
        params.add_uniform("embed.attribute", &[ATTRIBUTE_ROWS, h], &mut rng)?;
        layers::lstm_params(&mut params, "enc.fwd", 3 * e, h, &mut rng)?;
        layers::lstm_params(&mut params, "enc.bwd", 3 * e, h, &mut rng)?;
        layers::gru_params(&mut params, "pgru", 3 * d, h, &mut rng)?;
        params.add_uniform("pgru.h0", &[h], &mut rng)?;
        params.add_uniform("attn.w", &[h, h], &mut rng)?;
        params.add_zeros("attn.b", &[h])?;
        layers::lstm_params(&mut params, "span_start.lstm", 2 * d + 2 * h, h, &mut rng)?;
        params.add_uniform("span_start.w", &[d + h, 1], &mut rng)?;
        params.add_zeros("span_start.b", &[1])?;
        layers::lstm_params(&mut params, "span_end.lstm", 3 * d + 2 * h, h, &mut rng)?;
        params.add_uniform("span_end.w", &[d + h, 1], &mut rng)?;
        params.add_zeros("span_end.b", &[1])?;
        params.add_uniform("head.change.w", &[d + 4, 4], &mut rng)?;
        params.add_zeros("head.change.b", &[4])?;
        params.add_uniform("head.locstate.w", &[d + 3, 3], &mut rng)?;
        params.add_zeros("head.locstate.b", &[3])?;
        params.add_uniform("head.init.w", &[h + d, 3], &mut rng)?;
        params.add_zeros("head.init.b", &[3])?;

        // Padding embedding is fixed at zero.
        let word_index = params.index_of("embed.word").unwrap();
        for v in params.item_mut(word_index).values[..e].iter_mut() {
            *v = 0.0;
        }
        Ok(Model {
            config,
            vocab,
            params,
        })
    }

    /// Contextual encoding of the whole document for step `t` in 1..=T.
    pub fn encode_step(
        &self,
        tape: &mut Tape,
        inputs: &ModelInputs,
        t: usize,
    ) -> Result<Vec<TensorId>> {
        if t == 0 || t > inputs.step_count {
            return Err(Error::validation(format!(
                "encode_step: step {t} out of range 1..={}",
                inputs.step_count
            )));
        }
        self.encode_step_at(tape, inputs, t)
    }

    // Internal variant that also accepts t = 0, where every sentence counts
    // as lying after the step.
    fn encode_step_at(
        &self,
        tape: &mut Tape,
        inputs: &ModelInputs,
        t: usize,
    ) -> Result<Vec<TensorId>> {
        let word = tape.param(&self.params, "embed.word")?;
        let position = tape.param(&self.params, "embed.position")?;
        let indicator = tape.param(&self.params, "embed.indicator")?;
        let fwd = LstmIds::bind(tape, &self.params, "enc.fwd")?;
        let bwd = LstmIds::bind(tape, &self.params, "enc.bwd")?;

        let mut xs = Vec::with_capacity(inputs.doc_len());
        for i in 0..inputs.doc_len() {
            let w = tape.lookup(word, inputs.lemma_ids[i])?;
            let d = tape.lookup(position, inputs.distance_ids[i])?;
            let ind_row = match (inputs.sent_of[i] as isize).cmp(&(t as isize - 1)) {
                std::cmp::Ordering::Less => 0,
                std::cmp::Ordering::Equal => 1,
                std::cmp::Ordering::Greater => 2,
            };
            let s = tape.lookup(indicator, ind_row)?;
            xs.push(tape.concat(&[w, d, s])?);
        }
        layers::birnn_encode(tape, &fwd, &bwd, &xs)
    }

    /// Representation of a graph node over one step's encoding: text nodes
    /// sum their contextual rows, attribute nodes use the attribute table.
    pub fn node_representation(
        &self,
        tape: &mut Tape,
        inputs: &ModelInputs,
        encoding: &[TensorId],
        node: crate::graph::NodeRef,
    ) -> Result<TensorId> {
        match node {
            crate::graph::NodeRef::Entity(i) => {
                let entity = inputs
                    .graph
                    .entities
                    .get(i)
                    .ok_or_else(|| Error::validation(format!("entity {i} out of range")))?;
                if entity.positions.is_empty() {
                    return Err(Error::validation(format!(
                        "entity node {i} has no source positions"
                    )));
                }
                let rows: Vec<TensorId> = entity.positions.iter().map(|p| encoding[*p]).collect();
                tape.add_n(&rows)
            }
            crate::graph::NodeRef::Participant(t) => {
                let positions = mention_positions(inputs, t);
                if positions.is_empty() {
                    return Err(Error::validation(format!(
                        "participant node at step {t} has no mention positions"
                    )));
                }
                let rows: Vec<TensorId> = positions.into_iter().map(|p| encoding[p]).collect();
                tape.add_n(&rows)
            }
            crate::graph::NodeRef::Attribute(i) => {
                let attr = inputs
                    .graph
                    .attributes
                    .get(i)
                    .ok_or_else(|| Error::validation(format!("attribute {i} out of range")))?;
                let table = tape.param(&self.params, "embed.attribute")?;
                tape.lookup(table, attr.change.index())
            }
        }
    }

    /// Runs the gated stream over temporal and factual edges, then the
    /// relational attention over attribute nodes.
    pub fn propagate(
        &self,
        tape: &mut Tape,
        inputs: &ModelInputs,
        encodings: &[Vec<TensorId>],
        no_attributes: bool,
    ) -> Result<ParticipantStates> {
        let violations = inputs.graph.validate();
        if !violations.is_empty() {
            return Err(Error::validation(format!(
                "invalid graph: {}",
                violations[0].detail
            )));
        }
        let h = self.config.hidden;
        let d = self.config.contextual_dim();
        let t_count = inputs.step_count;
        let gru = GruIds::bind(tape, &self.params, "pgru")?;
        let h0 = tape.param(&self.params, "pgru.h0")?;
        let attn_w = tape.param(&self.params, "attn.w")?;
        let attn_b = tape.param(&self.params, "attn.b")?;
        let attr_table = tape.param(&self.params, "embed.attribute")?;

        let mut gru_stream = vec![h0];
        for t in 1..=t_count {
            let enc = &encodings[t];
            let p_rep = sum_rows_or_zero(tape, enc, mention_positions(inputs, t), d)?;
            let entity_positions: Vec<usize> = inputs
                .graph
                .entities_at(t)
                .into_iter()
                .flat_map(|e| inputs.graph.entities[e].positions.clone())
                .collect();
            let e_rep = sum_rows_or_zero(tape, enc, entity_positions, d)?;
            let verb_positions: Vec<usize> = {
                let mut seen = BTreeSet::new();
                inputs
                    .graph
                    .factual_edges
                    .iter()
                    .filter(|e| e.step == t)
                    .map(|e| e.verb_doc_index)
                    .filter(|p| seen.insert(*p))
                    .collect()
            };
            let v_rep = sum_rows_or_zero(tape, enc, verb_positions, d)?;
            let h_ps = tape.concat(&[p_rep, e_rep, v_rep])?;
            let prev = gru_stream[t - 1];
            gru_stream.push(layers::gru_cell(tape, &gru, h_ps, prev)?);
        }

        let mut attn_stream = Vec::with_capacity(t_count);
        for t in 1..=t_count {
            if no_attributes {
                attn_stream.push(tape.zeros(h));
                continue;
            }
            let memory = &gru_stream[..t];
            let attrs = inputs.graph.attributes_at(t);
            let contexts: Result<Vec<TensorId>> = if attrs.is_empty() {
                let query = tape.lookup(attr_table, NULL_ATTRIBUTE_ROW)?;
                layers::attention(tape, query, memory, attn_w, attn_b).map(|(_, c)| vec![c])
            } else {
                attrs
                    .iter()
                    .map(|a| {
                        let change = inputs.graph.attributes[*a].change;
                        let query = tape.lookup(attr_table, change.index())?;
                        layers::attention(tape, query, memory, attn_w, attn_b).map(|(_, c)| c)
                    })
                    .collect()
            };
            let contexts = contexts?;
            let pooled = if contexts.len() == 1 {
                contexts[0]
            } else {
                let sum = tape.add_n(&contexts)?;
                tape.scalar_mul(sum, 1.0 / contexts.len() as f64)
            };
            attn_stream.push(pooled);
        }

        let mut final_states = Vec::with_capacity(t_count + 1);
        let zero_attn = tape.zeros(h);
        final_states.push(tape.concat(&[gru_stream[0], zero_attn])?);
        for t in 1..=t_count {
            final_states.push(tape.concat(&[gru_stream[t], attn_stream[t - 1]])?);
        }
        Ok(ParticipantStates {
            gru_stream,
            attn_stream,
            final_states,
        })
    }

    /// State-change head: softmax over `W1 [H ; p1_prev] + b1`.
    pub fn predict_state_change(
        &self,
        tape: &mut Tape,
        state: TensorId,
        p_prev: TensorId,
    ) -> Result<TensorId> {
        let w = tape.param(&self.params, "head.change.w")?;
        let b = tape.param(&self.params, "head.change.b")?;
        let x = tape.concat(&[state, p_prev])?;
        let logits = layers::affine(tape, x, w, b)?;
        tape.softmax(logits, 0)
    }

    /// Location-state head: softmax over `W2 [H ; p2_prev] + b2`.
    pub fn predict_location_state(
        &self,
        tape: &mut Tape,
        state: TensorId,
        p_prev: TensorId,
    ) -> Result<TensorId> {
        let w = tape.param(&self.params, "head.locstate.w")?;
        let b = tape.param(&self.params, "head.locstate.b")?;
        let x = tape.concat(&[state, p_prev])?;
        let logits = layers::affine(tape, x, w, b)?;
        tape.softmax(logits, 0)
    }

    /// Initial location-state classifier: the learned start vector joined
    /// with a max-pool over the step-0 encoding, which carries the
    /// participant through its mention-distance embeddings.
    fn predict_initial_state(&self, tape: &mut Tape, encoding: &[TensorId]) -> Result<TensorId> {
        let h0 = tape.param(&self.params, "pgru.h0")?;
        let w = tape.param(&self.params, "head.init.w")?;
        let b = tape.param(&self.params, "head.init.b")?;
        let pooled = tape.max_n(encoding)?;
        let x = tape.concat(&[h0, pooled])?;
        let logits = layers::affine(tape, x, w, b)?;
        tape.softmax(logits, 0)
    }

    fn weighted_rows(
        &self,
        tape: &mut Tape,
        encoding: &[TensorId],
        prev: &SpanPrev,
    ) -> Result<TensorId> {
        match prev {
            SpanPrev::Constant(weights) => {
                let parts: Vec<TensorId> = weights
                    .iter()
                    .enumerate()
                    .filter(|(_, w)| **w != 0.0)
                    .map(|(i, w)| tape.scalar_mul(encoding[i], *w))
                    .collect();
                tape.add_n(&parts)
            }
            SpanPrev::Tensor(prev_id) => {
                let parts: Result<Vec<TensorId>> = encoding
                    .iter()
                    .enumerate()
                    .map(|(i, row)| {
                        let wi = tape.pick(*prev_id, i)?;
                        tape.scale(*row, wi)
                    })
                    .collect();
                tape.add_n(&parts?)
            }
        }
    }

    /// Span head for one step: an anchor built from the previous start
    /// distribution, a recurrent pass over positions, affine scoring, and a
    /// masked softmax. The end pass additionally conditions on the start
    /// distribution through its own parameters.
    fn predict_span_internal(
        &self,
        tape: &mut Tape,
        state: TensorId,
        encoding: &[TensorId],
        prev: &SpanPrev,
        mask: &[bool],
    ) -> Result<(TensorId, TensorId)> {
        let anchor = self.weighted_rows(tape, encoding, prev)?;

        let start_lstm = LstmIds::bind(tape, &self.params, "span_start.lstm")?;
        let w_s = tape.param(&self.params, "span_start.w")?;
        let b_s = tape.param(&self.params, "span_start.b")?;
        let inputs_start: Result<Vec<TensorId>> = encoding
            .iter()
            .map(|row| tape.concat(&[*row, anchor, state]))
            .collect();
        let phi_start = layers::lstm_pass(tape, &start_lstm, &inputs_start?)?;
        let logits_start: Result<Vec<TensorId>> = encoding
            .iter()
            .zip(&phi_start)
            .map(|(row, phi)| {
                let x = tape.concat(&[*row, *phi])?;
                layers::affine(tape, x, w_s, b_s)
            })
            .collect();
        let stacked_start = tape.concat(&logits_start?)?;
        let start = tape.masked_softmax(stacked_start, mask)?;

        let start_anchor = self.weighted_rows(tape, encoding, &SpanPrev::Tensor(start))?;
        let end_lstm = LstmIds::bind(tape, &self.params, "span_end.lstm")?;
        let w_e = tape.param(&self.params, "span_end.w")?;
        let b_e = tape.param(&self.params, "span_end.b")?;
        let inputs_end: Result<Vec<TensorId>> = encoding
            .iter()
            .map(|row| tape.concat(&[*row, anchor, start_anchor, state]))
            .collect();
        let phi_end = layers::lstm_pass(tape, &end_lstm, &inputs_end?)?;
        let logits_end: Result<Vec<TensorId>> = encoding
            .iter()
            .zip(&phi_end)
            .map(|(row, phi)| {
                let x = tape.concat(&[*row, *phi])?;
                layers::affine(tape, x, w_e, b_e)
            })
            .collect();
        let stacked_end = tape.concat(&logits_end?)?;
        let end = tape.masked_softmax(stacked_end, mask)?;
        Ok((start, end))
    }

    /// Public span head; `prev` is the previous step's start distribution.
    pub fn predict_span(
        &self,
        tape: &mut Tape,
        state: TensorId,
        encoding: &[TensorId],
        prev: TensorId,
        mask: &[bool],
    ) -> Result<(TensorId, TensorId)> {
        if tape.value(prev).len() != encoding.len() {
            return Err(Error::shape(
                "predict_span",
                format!(
                    "previous distribution has {} entries for {} positions",
                    tape.value(prev).len(),
                    encoding.len()
                ),
            ));
        }
        self.predict_span_internal(tape, state, encoding, &SpanPrev::Tensor(prev), mask)
    }

    /// Full forward pass. With a `Teacher`, recurrent probability inputs
    /// are gold one-hots; otherwise the model consumes its own predictions.
    pub fn forward(
        &self,
        inputs: &ModelInputs,
        ablation: &Ablation,
        teacher: Option<&Teacher>,
    ) -> Result<Forward> {
        let t_count = inputs.step_count;
        let doc_len = inputs.doc_len();
        if doc_len == 0 {
            return Err(Error::validation("empty document".to_string()));
        }
        let mut tape = Tape::new();

        let mut encodings = Vec::with_capacity(t_count + 1);
        for t in 0..=t_count {
            encodings.push(self.encode_step_at(&mut tape, inputs, t)?);
        }

        let states = if ablation.no_graph {
            let h0 = tape.param(&self.params, "pgru.h0")?;
            let mut final_states = Vec::with_capacity(t_count + 1);
            for enc in encodings.iter() {
                final_states.push(tape.max_n(enc)?);
            }
            ParticipantStates {
                gru_stream: vec![h0],
                attn_stream: Vec::new(),
                final_states,
            }
        } else {
            self.propagate(&mut tape, inputs, &encodings, ablation.no_attributes)?
        };

        let mask: Vec<bool> = if ablation.no_mask {
            vec![true; doc_len]
        } else {
            inputs.mask.clone()
        };

        // Location-state chain, seeded by the initial classifier; the
        // state-change chain starts from one-hot NONE.
        let mut locstate_dists = Vec::with_capacity(t_count + 1);
        locstate_dists.push(self.predict_initial_state(&mut tape, &encodings[0])?);
        let mut change_dists: Vec<TensorId> = Vec::with_capacity(t_count);

        for t in 1..=t_count {
            let state = states.final_states[t];
            let p1_prev = match (teacher, t) {
                (_, 1) => {
                    let v = one_hot(4, StateChange::None.index());
                    tape.vector(v)
                }
                (Some(teach), _) => {
                    let v = one_hot(4, teach.changes[t - 2].index());
                    tape.vector(v)
                }
                (None, _) => change_dists[t - 2],
            };
            change_dists.push(self.predict_state_change(&mut tape, state, p1_prev)?);

            let p2_prev = match teacher {
                Some(teach) => {
                    let v = one_hot(3, teach.loc_states[t - 1].index());
                    tape.vector(v)
                }
                None => locstate_dists[t - 1],
            };
            locstate_dists.push(self.predict_location_state(&mut tape, state, p2_prev)?);
        }

        // Span chain over t = 0..=T; step 1 always starts from uniform.
        let uniform = vec![1.0 / doc_len as f64; doc_len];
        let mut start_dists: Vec<TensorId> = Vec::with_capacity(t_count + 1);
        let mut end_dists = Vec::with_capacity(t_count + 1);
        let mut teacher_prev = uniform.clone();
        for t in 0..=t_count {
            let prev = match (teacher, t) {
                (_, 0) | (_, 1) => SpanPrev::Constant(uniform.clone()),
                (Some(teach), _) => {
                    if let Some((s, _)) = teach.spans[t - 1] {
                        teacher_prev = one_hot(doc_len, s);
                    }
                    SpanPrev::Constant(teacher_prev.clone())
                }
                (None, _) => SpanPrev::Tensor(start_dists[t - 1]),
            };
            let (start, end) = self.predict_span_internal(
                &mut tape,
                states.final_states[t],
                &encodings[t],
                &prev,
                &mask,
            )?;
            start_dists.push(start);
            end_dists.push(end);
        }

        Ok(Forward {
            tape,
            step_count: t_count,
            mask,
            encodings,
            states,
            change_dists,
            locstate_dists,
            start_dists,
            end_dists,
        })
    }
}

fn sum_rows_or_zero(
    tape: &mut Tape,
    encoding: &[TensorId],
    positions: Vec<usize>,
    dim: usize,
) -> Result<TensorId> {
    if positions.is_empty() {
        return Ok(tape.zeros(dim));
    }
    let rows: Vec<TensorId> = positions.into_iter().map(|p| encoding[p]).collect();
    tape.add_n(&rows)
}

/// Document positions of the participant's mentions in step `t`'s sentence.
fn mention_positions(inputs: &ModelInputs, t: usize) -> Vec<usize> {
    let sent_index = t - 1;
    let Some(base) = inputs.sent_of.iter().position(|s| *s == sent_index) else {
        return Vec::new();
    };
    inputs
        .mention
        .mentions_in(sent_index)
        .iter()
        .flat_map(|span| (span.start..span.end).map(move |k| base + k))
        .collect()
}

pub fn one_hot(n: usize, index: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[index] = 1.0;
    v
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Decodes one step's location string from its distributions, enforcing
/// the state/location consistency rule.
pub fn decode_location(
    loc_state_dist: &[f64],
    start_dist: &[f64],
    end_dist: &[f64],
    token_texts: &[String],
) -> (LocationState, String) {
    let state = LocationState::ALL[argmax(loc_state_dist)];
    let location = match state {
        LocationState::NotExist => "null".to_string(),
        LocationState::Unknown => "unk".to_string(),
        LocationState::Known => {
            let s = argmax(start_dist);
            let hi = (s + SPAN_WINDOW).min(end_dist.len());
            let e = s + argmax(&end_dist[s..hi]);
            token_texts[s..=e].join(" ")
        }
    };
    (state, location)
}

/// One step of a prediction grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepPrediction {
    pub change: StateChange,
    pub loc_state: LocationState,
    pub location: String,
    #[serde(skip)]
    pub change_dist: Vec<f64>,
    #[serde(skip)]
    pub loc_state_dist: Vec<f64>,
    #[serde(skip)]
    pub start_dist: Vec<f64>,
    #[serde(skip)]
    pub end_dist: Vec<f64>,
}

/// The predicted state before step 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InitialPrediction {
    pub loc_state: LocationState,
    pub location: String,
    #[serde(skip)]
    pub loc_state_dist: Vec<f64>,
    #[serde(skip)]
    pub start_dist: Vec<f64>,
    #[serde(skip)]
    pub end_dist: Vec<f64>,
}

/// Per-participant prediction output: the initial state plus one entry per
/// step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionGrid {
    pub id: String,
    pub participant: String,
    pub initial: InitialPrediction,
    pub steps: Vec<StepPrediction>,
}

impl PredictionGrid {
    /// The `T+1` location values of this prediction, aligned with gold
    /// grid rows.
    pub fn location_row(&self) -> Vec<crate::corpus::LocationValue> {
        std::iter::once(&self.initial.location)
            .chain(self.steps.iter().map(|s| &s.location))
            .map(|loc| match loc.as_str() {
                "null" => crate::corpus::LocationValue::NonExist,
                "unk" => crate::corpus::LocationValue::Unknown,
                other => crate::corpus::LocationValue::Span(other.to_string()),
            })
            .collect()
    }
}

impl Forward {
    /// Extracts distributions, decodes locations, and applies the
    /// consistency rule.
    pub fn prediction_grid(&self, inputs: &ModelInputs) -> PredictionGrid {
        let texts = &inputs.token_texts;
        let initial_dist = self.tape.value(self.locstate_dists[0]).to_vec();
        let init_start = self.tape.value(self.start_dists[0]).to_vec();
        let init_end = self.tape.value(self.end_dists[0]).to_vec();
        let (init_state, init_loc) = decode_location(&initial_dist, &init_start, &init_end, texts);
        let mut steps = Vec::with_capacity(self.step_count);
        for t in 1..=self.step_count {
            let change_dist = self.tape.value(self.change_dists[t - 1]).to_vec();
            let loc_state_dist = self.tape.value(self.locstate_dists[t]).to_vec();
            let start_dist = self.tape.value(self.start_dists[t]).to_vec();
            let end_dist = self.tape.value(self.end_dists[t]).to_vec();
            let (loc_state, location) =
                decode_location(&loc_state_dist, &start_dist, &end_dist, texts);
            steps.push(StepPrediction {
                change: StateChange::ALL[argmax(&change_dist)],
                loc_state,
                location,
                change_dist,
                loc_state_dist,
                start_dist,
                end_dist,
            });
        }
        PredictionGrid {
            id: inputs.id.clone(),
            participant: inputs.participant.clone(),
            initial: InitialPrediction {
                loc_state: init_state,
                location: init_loc,
                loc_state_dist: initial_dist,
                start_dist: init_start,
                end_dist: init_end,
            },
            steps,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_mini_corpus;
    use crate::graph::NodeRef;
    use crate::lexicon::Lexicon;
    use crate::testutil::{sentence, sunlight_paragraph, water_paragraph};

    fn small_model(corpus: &[AnnotatedParagraph]) -> Model {
        let vocab = Vocab::from_corpus(corpus);
        Model::new(ModelConfig { hidden: 6, embed: 4 }, vocab, 11).unwrap()
    }

    fn water_setup() -> (AnnotatedParagraph, Model, ModelInputs) {
        let p = water_paragraph();
        let model = small_model(std::slice::from_ref(&p));
        let inputs = ModelInputs::build(&p, "water", &Lexicon::seed(), &model.vocab).unwrap();
        (p, model, inputs)
    }

    fn assert_simplex(dist: &[f64]) {
        let sum: f64 = dist.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6, "sums to {sum}");
        assert!(dist.iter().all(|p| *p >= 0.0));
    }

    #[test]
    fn forward_distributions_lie_on_simplices() {
        let (_, model, inputs) = water_setup();
        let fwd = model.forward(&inputs, &Ablation::default(), None).unwrap();
        for id in fwd
            .change_dists
            .iter()
            .chain(&fwd.locstate_dists)
            .chain(&fwd.start_dists)
            .chain(&fwd.end_dists)
        {
            assert_simplex(fwd.tape.value(*id));
        }
    }

    #[test]
    fn masked_positions_have_exactly_zero_probability() {
        let (_, model, inputs) = water_setup();
        let fwd = model.forward(&inputs, &Ablation::default(), None).unwrap();
        for (i, allowed) in fwd.mask.iter().enumerate() {
            if !allowed {
                for t in 0..=fwd.step_count {
                    assert_eq!(fwd.tape.value(fwd.start_dists[t])[i], 0.0);
                    assert_eq!(fwd.tape.value(fwd.end_dists[t])[i], 0.0);
                }
            }
        }
        assert!(fwd.mask.iter().any(|m| !m), "test needs a masked position");
    }

    #[test]
    fn forward_is_deterministic() {
        let (_, model, inputs) = water_setup();
        let a = model.forward(&inputs, &Ablation::default(), None).unwrap();
        let b = model.forward(&inputs, &Ablation::default(), None).unwrap();
        for (x, y) in a.change_dists.iter().zip(&b.change_dists) {
            assert_eq!(a.tape.value(*x), b.tape.value(*y));
        }
        for (x, y) in a.start_dists.iter().zip(&b.start_dists) {
            assert_eq!(a.tape.value(*x), b.tape.value(*y));
        }
    }

    #[test]
    fn no_attributes_leaves_other_streams_bitwise_unchanged() {
        let (_, model, inputs) = water_setup();
        let full = model.forward(&inputs, &Ablation::default(), None).unwrap();
        let ablated = model
            .forward(
                &inputs,
                &Ablation {
                    no_attributes: true,
                    ..Ablation::default()
                },
                None,
            )
            .unwrap();
        for (a, b) in full
            .states
            .gru_stream
            .iter()
            .zip(&ablated.states.gru_stream)
        {
            let va = full.tape.value(*a);
            let vb = ablated.tape.value(*b);
            for (x, y) in va.iter().zip(vb) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        for t in 0..=full.step_count {
            for (a, b) in full.encodings[t].iter().zip(&ablated.encodings[t]) {
                assert_eq!(full.tape.value(*a), ablated.tape.value(*b));
            }
        }
        for id in &ablated.states.attn_stream {
            assert!(ablated.tape.value(*id).iter().all(|v| *v == 0.0));
        }
        assert!(full
            .states
            .attn_stream
            .iter()
            .any(|id| full.tape.value(*id).iter().any(|v| *v != 0.0)));
    }

    #[test]
    fn no_graph_replaces_states_with_max_pool() {
        let (_, model, inputs) = water_setup();
        let fwd = model
            .forward(
                &inputs,
                &Ablation {
                    no_graph: true,
                    ..Ablation::default()
                },
                None,
            )
            .unwrap();
        for t in 0..=fwd.step_count {
            let state = fwd.tape.value(fwd.states.final_states[t]);
            let rows: Vec<&[f64]> = fwd.encodings[t].iter().map(|r| fwd.tape.value(*r)).collect();
            for (k, v) in state.iter().enumerate() {
                let expect = rows.iter().map(|r| r[k]).fold(f64::NEG_INFINITY, f64::max);
                assert_eq!(*v, expect);
            }
        }
    }

    #[test]
    fn no_mask_uses_all_positions() {
        let (_, model, inputs) = water_setup();
        let fwd = model
            .forward(
                &inputs,
                &Ablation {
                    no_mask: true,
                    ..Ablation::default()
                },
                None,
            )
            .unwrap();
        assert!(fwd.mask.iter().all(|m| *m));
        for t in 0..=fwd.step_count {
            assert!(fwd.tape.value(fwd.start_dists[t]).iter().all(|p| *p > 0.0));
        }
    }

    #[test]
    fn encode_step_rejects_out_of_range() {
        let (_, model, inputs) = water_setup();
        let mut tape = Tape::new();
        assert!(model.encode_step(&mut tape, &inputs, 0).is_err());
        assert!(model.encode_step(&mut tape, &inputs, 3).is_err());
        let rows = model.encode_step(&mut tape, &inputs, 1).unwrap();
        assert_eq!(rows.len(), inputs.doc_len());
        assert_eq!(tape.value(rows[0]).len(), model.config.contextual_dim());
    }

    #[test]
    fn node_representations_sum_rows() {
        let (_, model, inputs) = water_setup();
        let mut tape = Tape::new();
        let enc = model.encode_step(&mut tape, &inputs, 1).unwrap();
        // entity 0 is "streets", a single token at doc position 2
        let e = model
            .node_representation(&mut tape, &inputs, &enc, NodeRef::Entity(0))
            .unwrap();
        assert_eq!(tape.value(e), tape.value(enc[2]));
        // participant at step 1 is "Water" at doc position 0
        let p = model
            .node_representation(&mut tape, &inputs, &enc, NodeRef::Participant(1))
            .unwrap();
        assert_eq!(tape.value(p), tape.value(enc[0]));
        // attribute 0 is the MOVE row of the attribute table
        let a = model
            .node_representation(&mut tape, &inputs, &enc, NodeRef::Attribute(0))
            .unwrap();
        let table = model.params.get("embed.attribute").unwrap();
        let h = model.config.hidden;
        let move_row = &table.values[StateChange::Move.index() * h..][..h];
        assert_eq!(tape.value(a), move_row);
    }

    #[test]
    fn multi_token_node_representation_is_row_sum() {
        let mut p = water_paragraph();
        // Make the object two tokens: "city streets".
        p.sentences[0] = sentence(
            &[
                ("Water", "water", Pos::Noun),
                ("covers", "cover", Pos::Verb),
                ("city", "city", Pos::Noun),
                ("streets", "streets", Pos::Noun),
                (".", ".", Pos::Other),
            ],
            0,
            0,
        );
        p.sentences[1] = sentence(
            &[
                ("Water", "water", Pos::Noun),
                ("goes", "go", Pos::Verb),
                ("into", "into", Pos::Adp),
                ("houses", "houses", Pos::Noun),
                (".", ".", Pos::Other),
            ],
            1,
            5,
        );
        let model = small_model(std::slice::from_ref(&p));
        let inputs = ModelInputs::build(&p, "water", &Lexicon::seed(), &model.vocab).unwrap();
        assert_eq!(inputs.graph.entities[0].text, "city streets");
        let mut tape = Tape::new();
        let enc = model.encode_step(&mut tape, &inputs, 1).unwrap();
        let e = model
            .node_representation(&mut tape, &inputs, &enc, NodeRef::Entity(0))
            .unwrap();
        let expect: Vec<f64> = tape
            .value(enc[2])
            .iter()
            .zip(tape.value(enc[3]))
            .map(|(a, b)| a + b)
            .collect();
        assert_eq!(tape.value(e), expect.as_slice());
    }

    #[test]
    fn single_step_paragraph_propagates() {
        let p = sunlight_paragraph();
        let model = small_model(std::slice::from_ref(&p));
        let inputs = ModelInputs::build(&p, "sunlight", &Lexicon::seed(), &model.vocab).unwrap();
        let fwd = model.forward(&inputs, &Ablation::default(), None).unwrap();
        assert_eq!(fwd.states.gru_stream.len(), 2);
        assert_eq!(fwd.change_dists.len(), 1);
        let grid = fwd.prediction_grid(&inputs);
        assert_eq!(grid.steps.len(), 1);
    }

    #[test]
    fn zero_head_weights_give_uniform_distributions() {
        let (_, mut model, inputs) = {
            let (p, m, i) = water_setup();
            (p, m, i)
        };
        for name in ["head.change.w", "head.change.b", "head.locstate.w", "head.locstate.b"] {
            let idx = model.params.index_of(name).unwrap();
            for v in model.params.item_mut(idx).values.iter_mut() {
                *v = 0.0;
            }
        }
        let fwd = model.forward(&inputs, &Ablation::default(), None).unwrap();
        for id in &fwd.change_dists {
            for p in fwd.tape.value(*id) {
                assert!((p - 0.25).abs() < 1e-12);
            }
        }
        for id in &fwd.locstate_dists[1..] {
            for p in fwd.tape.value(*id) {
                assert!((p - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn location_mask_rules() {
        let p = water_paragraph();
        let inputs = {
            let model = small_model(std::slice::from_ref(&p));
            ModelInputs::build(&p, "water", &Lexicon::seed(), &model.vocab).unwrap()
        };
        let mask = &inputs.mask;
        // nouns allowed, verbs and periods masked
        assert!(mask[0] && mask[2] && mask[4] && mask[7]);
        assert!(!mask[1] && !mask[3] && !mask[5] && !mask[6] && !mask[8]);
    }

    #[test]
    fn all_verb_paragraph_fails_open() {
        use crate::corpus::{GoldGrid, LocationValue};
        let s = sentence(
            &[("melts", "melt", Pos::Verb), ("freezes", "freeze", Pos::Verb)],
            0,
            0,
        );
        let p = AnnotatedParagraph {
            id: "verbs".into(),
            sentences: vec![s],
            participants: vec!["water".into()],
            gold: GoldGrid {
                rows: vec![vec![LocationValue::Unknown, LocationValue::Unknown]],
            },
        };
        let tuples = crate::pipeline::extract_all_tuples(&p);
        let graph = crate::graph::build_graph(&p, "water", &tuples, &[]).unwrap();
        let mask = location_mask(&p, &graph);
        assert!(mask.iter().all(|m| *m));
    }

    #[test]
    fn decode_rules() {
        let texts: Vec<String> = ["Water", "goes", "into", "houses"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let (state, loc) = decode_location(&[1.0, 0.0, 0.0], &[0.25; 4], &[0.25; 4], &texts);
        assert_eq!(state, LocationState::NotExist);
        assert_eq!(loc, "null");
        let (state, loc) = decode_location(&[0.0, 1.0, 0.0], &[0.25; 4], &[0.25; 4], &texts);
        assert_eq!(state, LocationState::Unknown);
        assert_eq!(loc, "unk");
        let (_, loc) = decode_location(
            &[0.0, 0.0, 1.0],
            &[0.0, 0.0, 0.0, 1.0],
            &[0.0, 0.0, 0.0, 1.0],
            &texts,
        );
        assert_eq!(loc, "houses");
        // end mass before the start clamps to the start position
        let (_, loc) = decode_location(
            &[0.0, 0.0, 1.0],
            &[0.0, 0.0, 0.0, 1.0],
            &[1.0, 0.0, 0.0, 0.0],
            &texts,
        );
        assert_eq!(loc, "houses");
        // argmax ties break to the lowest index
        let (_, loc) = decode_location(
            &[0.0, 0.0, 1.0],
            &[0.5, 0.0, 0.0, 0.5],
            &[1.0, 0.0, 0.0, 0.0],
            &texts,
        );
        assert_eq!(loc, "Water");
    }

    #[test]
    fn vocab_ids_are_stable_and_oov_buckets() {
        let corpus = generate_mini_corpus(19, 3);
        let vocab = Vocab::from_corpus(&corpus);
        let known = &corpus[0].sentences[0][0].lemma;
        assert!(vocab.id(known) >= 2);
        assert_eq!(vocab.id("zzz-never-seen"), OOV_ID);
        assert_eq!(vocab.id(known), vocab.id(&known.to_uppercase()));
    }

    #[test]
    fn different_steps_differ_only_through_indicators() {
        let (_, model, inputs) = water_setup();
        let mut tape = Tape::new();
        let e1 = model.encode_step(&mut tape, &inputs, 1).unwrap();
        let e2 = model.encode_step(&mut tape, &inputs, 2).unwrap();
        // Outputs differ because the indicator embedding differs.
        assert_ne!(tape.value(e1[0]), tape.value(e2[0]));
    }
}
