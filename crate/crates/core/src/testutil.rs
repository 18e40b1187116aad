//! Shared fixtures for unit tests.

use crate::corpus::{AnnotatedParagraph, GoldGrid, LocationValue, Pos, Token};

pub fn sentence(words: &[(&str, &str, Pos)], sent_index: usize, doc_offset: usize) -> Vec<Token> {
    words
        .iter()
        .enumerate()
        .map(|(i, (text, lemma, pos))| Token {
            text: text.to_string(),
            lemma: lemma.to_string(),
            pos: *pos,
            sent_index,
            doc_index: doc_offset + i,
        })
        .collect()
}

/// "Water covers streets. Water goes into houses." with its gold row.
pub fn water_paragraph() -> AnnotatedParagraph {
    let s1 = sentence(
        &[
            ("Water", "water", Pos::Noun),
            ("covers", "cover", Pos::Verb),
            ("streets", "streets", Pos::Noun),
            (".", ".", Pos::Other),
        ],
        0,
        0,
    );
    let s2 = sentence(
        &[
            ("Water", "water", Pos::Noun),
            ("goes", "go", Pos::Verb),
            ("into", "into", Pos::Adp),
            ("houses", "houses", Pos::Noun),
            (".", ".", Pos::Other),
        ],
        1,
        4,
    );
    AnnotatedParagraph {
        id: "water-example".into(),
        sentences: vec![s1, s2],
        participants: vec!["water".into()],
        gold: GoldGrid {
            rows: vec![vec![
                LocationValue::Unknown,
                LocationValue::Span("streets".into()),
                LocationValue::Span("houses".into()),
            ]],
        },
    }
}

/// "Sunlight enters the greenhouse." single-step paragraph.
pub fn sunlight_paragraph() -> AnnotatedParagraph {
    let s1 = sentence(
        &[
            ("Sunlight", "sunlight", Pos::Noun),
            ("enters", "enter", Pos::Verb),
            ("the", "the", Pos::Det),
            ("greenhouse", "greenhouse", Pos::Noun),
            (".", ".", Pos::Other),
        ],
        0,
        0,
    );
    AnnotatedParagraph {
        id: "sunlight-example".into(),
        sentences: vec![s1],
        participants: vec!["sunlight".into()],
        gold: GoldGrid {
            rows: vec![vec![
                LocationValue::Unknown,
                LocationValue::Span("greenhouse".into()),
            ]],
        },
    }
}
