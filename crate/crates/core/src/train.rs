//! End-to-end training: summed negative log likelihood over the three
//! heads, gradient-clipped adaptive-moment updates, teacher forcing for the
//! recurrent probability inputs, and best-dev checkpointing.

use crate::autodiff::{ParamPayload, Params, Tape, TensorId};
use crate::corpus::{
    derive_gold_location_states, derive_gold_state_changes, AnnotatedParagraph, LocationState,
    LocationValue,
};
use crate::error::{Error, Result};
use crate::lexicon::Lexicon;
use crate::model::{Ablation, Forward, Model, ModelConfig, ModelInputs, PredictionGrid, Teacher, Vocab};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Training configuration; also the CLI-visible config file schema
/// (`key = value` lines, `#` comments).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub clip: f64,
    pub no_mask: bool,
    pub no_attributes: bool,
    pub no_graph: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 17,
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 8,
            hidden_dim: 32,
            embed_dim: 16,
            clip: 5.0,
            no_mask: false,
            no_attributes: false,
            no_graph: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0
            || self.epochs == 0
            || self.batch_size == 0
            || self.hidden_dim == 0
            || self.embed_dim == 0
            || self.clip <= 0.0
        {
            return Err(Error::validation(
                "train config requires positive numeric fields",
            ));
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path)?;
        TrainConfig::parse(&text)
    }

    pub fn parse(text: &str) -> Result<TrainConfig> {
        let mut config = TrainConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| Error::parse(line_no, "expected 'key = value'"))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| Error::parse(line_no, format!("invalid {what}: '{value}'"));
            match key {
                "seed" => config.seed = value.parse().map_err(|_| bad("seed"))?,
                "learning_rate" => {
                    config.learning_rate = value.parse().map_err(|_| bad("learning_rate"))?
                }
                "epochs" => config.epochs = value.parse().map_err(|_| bad("epochs"))?,
                "batch_size" => config.batch_size = value.parse().map_err(|_| bad("batch_size"))?,
                "hidden_dim" => config.hidden_dim = value.parse().map_err(|_| bad("hidden_dim"))?,
                "embed_dim" => config.embed_dim = value.parse().map_err(|_| bad("embed_dim"))?,
                "clip" => config.clip = value.parse().map_err(|_| bad("clip"))?,
                "no_mask" => config.no_mask = value.parse().map_err(|_| bad("no_mask"))?,
                "no_attributes" => {
                    config.no_attributes = value.parse().map_err(|_| bad("no_attributes"))?
                }
                "no_graph" => config.no_graph = value.parse().map_err(|_| bad("no_graph"))?,
                other => {
                    return Err(Error::parse(line_no, format!("unknown config key '{other}'")))
                }
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            hidden: self.hidden_dim,
            embed: self.embed_dim,
        }
    }

    pub fn ablation(&self) -> Ablation {
        Ablation {
            no_mask: self.no_mask,
            no_attributes: self.no_attributes,
            no_graph: self.no_graph,
        }
    }
}

/// Finds the first occurrence of `gold` as a token sequence, case folded.
/// Returns inclusive (start, end) document positions.
pub fn find_span(token_texts: &[String], gold: &str) -> Option<(usize, usize)> {
    let words: Vec<String> = gold.split_whitespace().map(|w| w.to_lowercase()).collect();
    if words.is_empty() || words.len() > token_texts.len() {
        return None;
    }
    for start in 0..=(token_texts.len() - words.len()) {
        if words
            .iter()
            .enumerate()
            .all(|(k, w)| token_texts[start + k].to_lowercase() == *w)
        {
            return Some((start, start + words.len() - 1));
        }
    }
    None
}

/// Builds gold teacher labels for one participant. Returns the labels and
/// the number of known-location cells whose span was not found in the text.
pub fn build_teacher(paragraph: &AnnotatedParagraph, participant: &str) -> Result<(Teacher, usize)> {
    let row = paragraph
        .gold_row(participant)
        .ok_or_else(|| {
            Error::validation(format!(
                "unknown participant '{participant}' in paragraph {}",
                paragraph.id
            ))
        })?;
    let token_texts: Vec<String> = paragraph.tokens().map(|t| t.text.clone()).collect();
    let mut unmatched = 0;
    let spans = row
        .iter()
        .map(|v| match v {
            LocationValue::Span(s) => {
                let found = find_span(&token_texts, s);
                if found.is_none() {
                    unmatched += 1;
                }
                found
            }
            _ => None,
        })
        .collect();
    Ok((
        Teacher {
            changes: derive_gold_state_changes(row),
            loc_states: derive_gold_location_states(row),
            spans,
        },
        unmatched,
    ))
}

fn nll(tape: &mut Tape, dist: TensorId, target: usize) -> Result<TensorId> {
    let p = tape.pick(dist, target)?;
    let lp = tape.log(p);
    Ok(tape.neg(lp))
}

/// Builds the summed NLL loss of one forward pass on its tape: state-change
/// and location-state terms for every step, the initial-state term, and
/// span terms wherever the gold location is known, matched in the text,
/// and inside the mask.
pub fn forward_loss(fwd: &mut Forward, teacher: &Teacher) -> Result<TensorId> {
    let mut terms = Vec::new();
    terms.push(nll(&mut fwd.tape, fwd.locstate_dists[0], teacher.loc_states[0].index())?);
    for t in 1..=fwd.step_count {
        terms.push(nll(
            &mut fwd.tape,
            fwd.change_dists[t - 1],
            teacher.changes[t - 1].index(),
        )?);
        terms.push(nll(
            &mut fwd.tape,
            fwd.locstate_dists[t],
            teacher.loc_states[t].index(),
        )?);
    }
    for t in 0..=fwd.step_count {
        if teacher.loc_states[t] != LocationState::Known {
            continue;
        }
        if let Some((s, e)) = teacher.spans[t] {
            if fwd.mask[s] && fwd.mask[e] {
                terms.push(nll(&mut fwd.tape, fwd.start_dists[t], s)?);
                terms.push(nll(&mut fwd.tape, fwd.end_dists[t], e)?);
            }
        }
    }
    fwd.tape.add_n(&terms)
}

/// Summed NLL recomputed from a decoded prediction grid; the value-level
/// counterpart of [`forward_loss`] used for reporting and tests.
pub fn loss(grid: &PredictionGrid, teacher: &Teacher) -> Result<f64> {
    let mut total = 0.0;
    let mut add = |dist: &[f64], target: usize| {
        total += -dist[target].ln();
    };
    add(&grid.initial.loc_state_dist, teacher.loc_states[0].index());
    for (i, step) in grid.steps.iter().enumerate() {
        add(&step.change_dist, teacher.changes[i].index());
        add(&step.loc_state_dist, teacher.loc_states[i + 1].index());
    }
    for t in 0..=grid.steps.len() {
        if teacher.loc_states[t] != LocationState::Known {
            continue;
        }
        if let Some((s, e)) = teacher.spans[t] {
            let (start_dist, end_dist) = if t == 0 {
                (&grid.initial.start_dist, &grid.initial.end_dist)
            } else {
                (&grid.steps[t - 1].start_dist, &grid.steps[t - 1].end_dist)
            };
            if start_dist[s] > 0.0 && end_dist[e] > 0.0 {
                total += -start_dist[s].ln() - end_dist[e].ln();
            }
        }
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("loss".to_string()));
    }
    Ok(total)
}

/// Adaptive-moment optimizer state.
struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    fn new(lr: f64, params: &Params) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.values.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.values.len()]).collect(),
        }
    }

    fn step(&mut self, params: &mut Params) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            for (k, g) in p.grad.iter().enumerate() {
                let m = &mut self.m[i][k];
                let v = &mut self.v[i][k];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                p.values[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// One training example with cached pipeline outputs.
pub struct Example {
    pub inputs: ModelInputs,
    pub teacher: Teacher,
    pub gold_row: Vec<LocationValue>,
}

/// Builds cached examples for every (paragraph, participant) pair.
pub fn build_examples(
    corpus: &[AnnotatedParagraph],
    lexicon: &Lexicon,
    vocab: &Vocab,
) -> Result<(Vec<Example>, usize)> {
    let mut examples = Vec::new();
    let mut unmatched = 0;
    for paragraph in corpus {
        for participant in &paragraph.participants {
            let inputs = ModelInputs::build(paragraph, participant, lexicon, vocab)?;
            let (teacher, missed) = build_teacher(paragraph, participant)?;
            unmatched += missed;
            examples.push(Example {
                inputs,
                teacher,
                gold_row: paragraph.gold_row(participant).unwrap().to_vec(),
            });
        }
    }
    Ok((examples, unmatched))
}

/// Accuracy summary over a set of examples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    /// Fraction of steps whose predicted state change matches gold.
    pub change_accuracy: f64,
    /// Fraction of grid cells (including the initial one) whose location
    /// string matches gold exactly after normalization.
    pub location_match: f64,
    /// Location match restricted to cells with a known gold location.
    pub span_accuracy: f64,
}

fn metrics_over(model: &Model, ablation: &Ablation, examples: &[Example]) -> Result<EvalSummary> {
    let mut change = (0usize, 0usize);
    let mut loc = (0usize, 0usize);
    let mut span = (0usize, 0usize);
    for ex in examples {
        let fwd = model.forward(&ex.inputs, ablation, None)?;
        let grid = fwd.prediction_grid(&ex.inputs);
        for (pred, gold) in grid.steps.iter().zip(&ex.teacher.changes) {
            change.1 += 1;
            if pred.change == *gold {
                change.0 += 1;
            }
        }
        for (pred, gold) in grid.location_row().iter().zip(&ex.gold_row) {
            let hit = pred.normalized() == gold.normalized();
            loc.1 += 1;
            if hit {
                loc.0 += 1;
            }
            if matches!(gold, LocationValue::Span(_)) {
                span.1 += 1;
                if hit {
                    span.0 += 1;
                }
            }
        }
    }
    let ratio = |(c, t): (usize, usize)| if t == 0 { 1.0 } else { c as f64 / t as f64 };
    Ok(EvalSummary {
        change_accuracy: ratio(change),
        location_match: ratio(loc),
        span_accuracy: ratio(span),
    })
}

/// Runs inference over a corpus and reports accuracy against gold.
pub fn evaluate_model(
    model: &Model,
    ablation: &Ablation,
    corpus: &[AnnotatedParagraph],
    lexicon: &Lexicon,
) -> Result<EvalSummary> {
    let (examples, _) = build_examples(corpus, lexicon, &model.vocab)?;
    metrics_over(model, ablation, &examples)
}

/// A trained model snapshot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub epoch: usize,
    pub dev_metric: f64,
    pub epoch_losses: Vec<f64>,
    pub vocab: Vec<String>,
    pub params: Vec<ParamPayload>,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer(&mut f, self)?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.version != 1 {
            return Err(Error::validation(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    pub fn to_model(&self) -> Result<Model> {
        Ok(Model {
            config: self.config.model_config(),
            vocab: Vocab::from_lemmas(self.vocab.clone()),
            params: Params::from_payload(self.params.clone())?,
        })
    }

    pub fn ablation(&self) -> Ablation {
        self.config.ablation()
    }
}

/// Trains on `train`, retaining the checkpoint with the best dev metric
/// (mean of state-change accuracy and location match). An empty `dev`
/// falls back to the train split. Deterministic given inputs and config.
pub fn fit(
    train: &[AnnotatedParagraph],
    dev: &[AnnotatedParagraph],
    config: &TrainConfig,
    lexicon: &Lexicon,
) -> Result<Checkpoint> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::validation("empty train split"));
    }
    let vocab = Vocab::from_corpus(train);
    let mut model = Model::new(config.model_config(), vocab, config.seed)?;
    let ablation = config.ablation();

    let (examples, unmatched) = build_examples(train, lexicon, &model.vocab)?;
    if unmatched > 0 {
        eprintln!("fit: {unmatched} gold spans not found in text; their span terms are skipped");
    }
    let dev_examples = if dev.is_empty() {
        None
    } else {
        Some(build_examples(dev, lexicon, &model.vocab)?.0)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9E37_79B9));
    let mut adam = Adam::new(config.learning_rate, &model.params);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut best: Option<(f64, Params, usize)> = None;
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            model.params.zero_grads();
            for idx in batch {
                let ex = &examples[*idx];
                let mut fwd = model.forward(&ex.inputs, &ablation, Some(&ex.teacher))?;
                let loss_id = forward_loss(&mut fwd, &ex.teacher)?;
                let value = fwd.tape.value(loss_id)[0];
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
                }
                epoch_loss += value;
                fwd.tape.backward(loss_id)?;
                fwd.tape.accumulate_param_grads(&mut model.params);
            }
            model.params.scale_grads(1.0 / batch.len() as f64);
            model.params.clip_grads(config.clip);
            adam.step(&mut model.params);
        }
        epoch_losses.push(epoch_loss / examples.len() as f64);

        let summary = metrics_over(
            &model,
            &ablation,
            dev_examples.as_deref().unwrap_or(&examples),
        )?;
        let metric = (summary.change_accuracy + summary.location_match) / 2.0;
        if best.as_ref().map(|(m, _, _)| metric > *m).unwrap_or(true) {
            best = Some((metric, model.params.clone(), epoch));
        }
    }

    let (dev_metric, params, epoch) = best.expect("at least one epoch ran");
    Ok(Checkpoint {
        version: 1,
        config: config.clone(),
        epoch,
        dev_metric,
        epoch_losses,
        vocab: model.vocab.lemmas().to_vec(),
        params: params.to_payload(),
    })
}

/// Full forward pass plus decoding for one participant, using the model's
/// own predictions for the recurrent inputs.
pub fn infer_with_model(
    model: &Model,
    ablation: &Ablation,
    paragraph: &AnnotatedParagraph,
    participant: &str,
    lexicon: &Lexicon,
) -> Result<PredictionGrid> {
    let inputs = ModelInputs::build(paragraph, participant, lexicon, &model.vocab)?;
    let fwd = model.forward(&inputs, ablation, None)?;
    Ok(fwd.prediction_grid(&inputs))
}

/// Loads the checkpointed model and runs inference.
pub fn infer(
    checkpoint: &Checkpoint,
    paragraph: &AnnotatedParagraph,
    participant: &str,
    lexicon: &Lexicon,
) -> Result<PredictionGrid> {
    let model = checkpoint.to_model()?;
    infer_with_model(&model, &checkpoint.ablation(), paragraph, participant, lexicon)
}
