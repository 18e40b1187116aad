//! Templated mini-corpus generator: short create/move/destroy narratives
//! with grids kept consistent with the text, sized to mirror the benchmark's
//! 6-7 sentences per paragraph.

use super::{AnnotatedParagraph, GoldGrid, LocationValue, Pos, Token};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

const PARTICIPANTS: &[&str] = &[
    "water",
    "sunlight",
    "magma",
    "oxygen",
    "sediment",
    "moisture",
    "steam",
    "pollen",
    "salt",
    "sand",
    "lava",
    "carbon",
    "dead plant",
    "iron ore",
];

const LOCATIONS: &[&str] = &[
    "ocean",
    "river",
    "sky",
    "soil",
    "ground",
    "leaf",
    "root",
    "rock",
    "swamp",
    "mountain",
    "greenhouse",
    "lake",
    "forest",
    "glacier",
    "valley",
    "stomach",
    "house",
    "street",
];

// Words tagged ADJ inside noun phrases; everything else in a phrase is NOUN.
const ADJECTIVES: &[&str] = &["dead"];

struct SentenceBuilder {
    tokens: Vec<(String, String, Pos)>,
}

impl SentenceBuilder {
    fn new() -> Self {
        SentenceBuilder { tokens: Vec::new() }
    }

    fn word(&mut self, text: &str, lemma: &str, pos: Pos) -> &mut Self {
        self.tokens.push((text.to_string(), lemma.to_string(), pos));
        self
    }

    fn verb(&mut self, surface: &str, lemma: &str) -> &mut Self {
        self.word(surface, lemma, Pos::Verb)
    }

    fn prep(&mut self, p: &str) -> &mut Self {
        self.word(p, p, Pos::Adp)
    }

    fn the(&mut self) -> &mut Self {
        self.word("the", "the", Pos::Det)
    }

    /// Multi-word noun phrase; each word keeps itself as lemma.
    fn phrase(&mut self, np: &str) -> &mut Self {
        for w in np.split_whitespace() {
            let pos = if ADJECTIVES.contains(&w) { Pos::Adj } else { Pos::Noun };
            self.word(w, w, pos);
        }
        self
    }

    fn period(&mut self) -> &mut Self {
        self.word(".", ".", Pos::Other)
    }

    fn finish(mut self) -> Vec<(String, String, Pos)> {
        if let Some(first) = self.tokens.first_mut() {
            let mut chars = first.0.chars();
            if let Some(c) = chars.next() {
                first.0 = c.to_uppercase().collect::<String>() + chars.as_str();
            }
        }
        self.tokens
    }
}

#[derive(Clone, Copy, PartialEq)]
enum EventKind {
    CreateAt,
    CreateUnknown,
    MoveTo,
    MoveFromTo,
    MoveScatter,
    Destroy,
    DestroyAt,
    DestroyByObject,
    StayAt,
    Persist,
    Transform,
}

/// Deterministically generates `n` paragraphs of templated narratives.
/// The same `(seed, n)` always yields byte-identical corpora.
pub fn generate_mini_corpus(seed: u64, n: usize) -> Vec<AnnotatedParagraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| generate_paragraph(&mut rng, format!("mini-{seed}-{i:04}")))
        .collect()
}

fn generate_paragraph(rng: &mut ChaCha8Rng, id: String) -> AnnotatedParagraph {
    let n_participants = rng.gen_range(2..=3);
    let mut pool: Vec<&str> = PARTICIPANTS.to_vec();
    pool.shuffle(rng);
    let participants: Vec<String> = pool[..n_participants].iter().map(|s| s.to_string()).collect();

    // Initial states: known location, unknown, or not yet existing.
    let mut states: Vec<LocationValue> = participants
        .iter()
        .map(|_| match rng.gen_range(0..10) {
            0..=3 => LocationValue::Span(pick_location(rng, None).to_string()),
            4..=6 => LocationValue::NonExist,
            _ => LocationValue::Unknown,
        })
        .collect();
    let mut rows: Vec<Vec<LocationValue>> = states.iter().map(|s| vec![s.clone()]).collect();
    let mut grounded: Vec<bool> = states
        .iter()
        .map(|s| !matches!(s, LocationValue::Span(_)))
        .collect();

    let t_count = rng.gen_range(5..=8);
    let n_distractors = if t_count >= 7 { rng.gen_range(1..=2) } else { rng.gen_range(0..=1) };
    let mut distractor_steps: Vec<usize> = (0..t_count).collect();
    distractor_steps.shuffle(rng);
    distractor_steps.truncate(n_distractors);

    // Round-robin the event slots over participants so everyone acts.
    let mut actor_order: Vec<usize> = (0..n_participants).collect();
    actor_order.shuffle(rng);
    let mut actors = Vec::new();
    let mut k = 0;
    for step in 0..t_count {
        if distractor_steps.contains(&step) {
            actors.push(None);
        } else {
            actors.push(Some(actor_order[k % n_participants]));
            k += 1;
        }
    }

    let mut sentences = Vec::with_capacity(t_count);
    for actor in actors {
        let sentence = match actor {
            None => {
                let tokens = distractor_sentence(rng);
                for (i, row) in rows.iter_mut().enumerate() {
                    row.push(states[i].clone());
                }
                tokens
            }
            Some(p) => {
                let kind = choose_event(rng, &states, p, grounded[p]);
                grounded[p] = true;
                apply_event(rng, kind, p, &participants, &mut states, &mut rows)
            }
        };
        sentences.push(sentence);
    }

    build_paragraph(id, sentences, participants, rows)
}

fn pick_location<'a>(rng: &mut ChaCha8Rng, not: Option<&str>) -> &'a str {
    loop {
        let loc = LOCATIONS[rng.gen_range(0..LOCATIONS.len())];
        if Some(loc) != not {
            return loc;
        }
    }
}

fn choose_event(
    rng: &mut ChaCha8Rng,
    states: &[LocationValue],
    p: usize,
    grounded: bool,
) -> EventKind {
    match &states[p] {
        LocationValue::NonExist => {
            if rng.gen_range(0..10) < 7 {
                EventKind::CreateAt
            } else {
                EventKind::CreateUnknown
            }
        }
        LocationValue::Span(_) => {
            // A participant introduced at a known location gets a first
            // sentence that states that location, so the grid is supported
            // by the text.
            if !grounded {
                return match rng.gen_range(0..3) {
                    0 => EventKind::MoveFromTo,
                    1 => EventKind::DestroyAt,
                    _ => EventKind::StayAt,
                };
            }
            let transform_ok = states
                .iter()
                .enumerate()
                .any(|(j, s)| j != p && matches!(s, LocationValue::NonExist));
            match rng.gen_range(0..20) {
                0..=4 => EventKind::MoveTo,
                5..=6 => EventKind::MoveFromTo,
                7..=8 => EventKind::MoveScatter,
                9..=10 => EventKind::StayAt,
                11..=12 => EventKind::DestroyAt,
                13..=14 => EventKind::Destroy,
                15..=16 => EventKind::DestroyByObject,
                _ if transform_ok => EventKind::Transform,
                _ => EventKind::MoveTo,
            }
        }
        LocationValue::Unknown => match rng.gen_range(0..10) {
            0..=4 => EventKind::MoveTo,
            5..=6 => EventKind::Destroy,
            7 => EventKind::DestroyByObject,
            _ => EventKind::Persist,
        },
    }
}

fn apply_event(
    rng: &mut ChaCha8Rng,
    kind: EventKind,
    p: usize,
    participants: &[String],
    states: &mut [LocationValue],
    rows: &mut [Vec<LocationValue>],
) -> Vec<(String, String, Pos)> {
    let name = participants[p].clone();
    let current = states[p].clone();
    let mut b = SentenceBuilder::new();
    let mut transformed_into: Option<usize> = None;

    let new_state = match kind {
        EventKind::CreateAt => {
            let loc = pick_location(rng, None);
            let (surface, lemma) = pick(rng, &[("forms", "form"), ("appears", "appear"), ("develops", "develop")]);
            subject(&mut b, rng, &name).verb(surface, lemma).prep("in").the().phrase(loc).period();
            LocationValue::Span(loc.to_string())
        }
        EventKind::CreateUnknown => {
            let (surface, lemma) = pick(rng, &[("forms", "form"), ("appears", "appear")]);
            subject(&mut b, rng, &name).verb(surface, lemma).period();
            LocationValue::Unknown
        }
        EventKind::MoveTo => {
            let from = current_span(&current);
            let to = pick_location(rng, from.as_deref());
            match rng.gen_range(0..8) {
                0 => {
                    b.the();
                    subject_bare(&mut b, &name).verb("enters", "enter").the().phrase(to).period();
                }
                1 => {
                    b.the();
                    subject_bare(&mut b, &name).verb("reaches", "reach").the().phrase(to).period();
                }
                v => {
                    let (surface, lemma, prep) = match v {
                        2 => ("moves", "move", "to"),
                        3 => ("goes", "go", "into"),
                        4 => ("flows", "flow", "to"),
                        5 => ("travels", "travel", "to"),
                        6 => ("sinks", "sink", "into"),
                        _ => ("rises", "rise", "to"),
                    };
                    subject(&mut b, rng, &name).verb(surface, lemma).prep(prep).the().phrase(to).period();
                }
            }
            LocationValue::Span(to.to_string())
        }
        EventKind::MoveFromTo => {
            let from = current_span(&current).unwrap_or_else(|| pick_location(rng, None).to_string());
            let to = pick_location(rng, Some(from.as_str()));
            subject(&mut b, rng, &name)
                .verb("flows", "flow")
                .prep("from")
                .the()
                .phrase(&from)
                .prep("to")
                .the()
                .phrase(to)
                .period();
            LocationValue::Span(to.to_string())
        }
        EventKind::MoveScatter => {
            let (surface, lemma) = pick(rng, &[("scatters", "scatter"), ("escapes", "escape")]);
            subject(&mut b, rng, &name).verb(surface, lemma).period();
            LocationValue::Unknown
        }
        EventKind::Destroy => {
            let (surface, lemma) = pick(
                rng,
                &[
                    ("decomposes", "decompose"),
                    ("decays", "decay"),
                    ("vanishes", "vanish"),
                    ("disappears", "disappear"),
                ],
            );
            subject(&mut b, rng, &name).verb(surface, lemma).period();
            LocationValue::NonExist
        }
        EventKind::DestroyAt => {
            let loc = current_span(&current).unwrap_or_else(|| pick_location(rng, None).to_string());
            subject(&mut b, rng, &name).verb("dissolves", "dissolve").prep("in").the().phrase(&loc).period();
            LocationValue::NonExist
        }
        EventKind::DestroyByObject => {
            match rng.gen_range(0..2) {
                0 => {
                    b.phrase("animals").verb("consume", "consume").the().phrase(&name).period();
                }
                _ => {
                    b.the().phrase("roots").verb("absorb", "absorb").the().phrase(&name).period();
                }
            }
            LocationValue::NonExist
        }
        EventKind::StayAt => {
            let loc = current_span(&current).unwrap_or_else(|| pick_location(rng, None).to_string());
            let (surface, lemma) = pick(rng, &[("remains", "remain"), ("stays", "stay"), ("rests", "rest")]);
            subject(&mut b, rng, &name).verb(surface, lemma).prep("in").the().phrase(&loc).period();
            LocationValue::Span(loc)
        }
        EventKind::Persist => {
            let (surface, lemma) = pick(rng, &[("persists", "persist"), ("lingers", "linger")]);
            subject(&mut b, rng, &name).verb(surface, lemma).period();
            LocationValue::Unknown
        }
        EventKind::Transform => {
            let target = states
                .iter()
                .enumerate()
                .find(|(j, s)| *j != p && matches!(s, LocationValue::NonExist))
                .map(|(j, _)| j)
                .expect("transform chosen without a creatable participant");
            transformed_into = Some(target);
            b.the();
            subject_bare(&mut b, &name).verb("turns", "turn").prep("into").phrase(&participants[target]).period();
            LocationValue::NonExist
        }
    };

    states[p] = new_state;
    if let Some(target) = transformed_into {
        // The product inherits the source's location when it was known.
        states[target] = match &current {
            LocationValue::Span(s) => LocationValue::Span(s.clone()),
            _ => LocationValue::Unknown,
        };
    }
    for (i, row) in rows.iter_mut().enumerate() {
        row.push(states[i].clone());
    }
    b.finish()
}

fn current_span(v: &LocationValue) -> Option<String> {
    match v {
        LocationValue::Span(s) => Some(s.clone()),
        _ => None,
    }
}

fn subject<'a>(b: &'a mut SentenceBuilder, rng: &mut ChaCha8Rng, name: &str) -> &'a mut SentenceBuilder {
    if rng.gen_bool(0.5) {
        b.the();
    }
    b.phrase(name);
    b
}

fn subject_bare<'a>(b: &'a mut SentenceBuilder, name: &str) -> &'a mut SentenceBuilder {
    b.phrase(name);
    b
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, options: &[T]) -> T {
    options[rng.gen_range(0..options.len())]
}

fn distractor_sentence(rng: &mut ChaCha8Rng) -> Vec<(String, String, Pos)> {
    let loc = pick_location(rng, None);
    let mut b = SentenceBuilder::new();
    match rng.gen_range(0..4) {
        0 => {
            b.the().phrase("wind").verb("crosses", "cross").the().phrase(loc).period();
        }
        1 => {
            b.the().phrase("farmer").verb("watches", "watch").the().phrase(loc).period();
        }
        2 => {
            b.the().phrase("sun").verb("warms", "warm").the().phrase(loc).period();
        }
        _ => {
            b.word("a", "a", Pos::Det).phrase("bird").verb("flies", "fly").prep("over").the().phrase(loc).period();
        }
    }
    b.finish()
}

fn build_paragraph(
    id: String,
    sentences: Vec<Vec<(String, String, Pos)>>,
    participants: Vec<String>,
    rows: Vec<Vec<LocationValue>>,
) -> AnnotatedParagraph {
    let mut doc_index = 0;
    let sentences = sentences
        .into_iter()
        .enumerate()
        .map(|(sent_index, sent)| {
            sent.into_iter()
                .map(|(text, lemma, pos)| {
                    let tok = Token { text, pos, lemma, sent_index, doc_index };
                    doc_index += 1;
                    tok
                })
                .collect()
        })
        .collect();
    AnnotatedParagraph {
        id,
        sentences,
        participants,
        gold: GoldGrid { rows },
    }
}
