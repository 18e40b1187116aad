use stategraph::corpus::{generate_mini_corpus, LocationValue};
use stategraph::lexicon::Lexicon;
use stategraph::train::{fit, infer, TrainConfig};

fn main() {
    let corpus = generate_mini_corpus(5, 20);
    let lexicon = Lexicon::seed();
    let config = TrainConfig {
        seed: 5,
        learning_rate: 5e-3,
        epochs: 60,
        batch_size: 4,
        hidden_dim: 16,
        embed_dim: 8,
        ..TrainConfig::default()
    };
    let ckpt = fit(&corpus, &corpus[..4], &config, &lexicon).unwrap();
    let mut init = (0usize, 0usize);
    let mut steps = (0usize, 0usize);
    let mut by_kind = std::collections::BTreeMap::<&str, (usize, usize)>::new();
    for p in &corpus {
        for participant in &p.participants {
            let grid = infer(&ckpt, p, participant, &lexicon).unwrap();
            let gold = p.gold_row(participant).unwrap();
            for (t, (pred, g)) in grid.location_row().iter().zip(gold).enumerate() {
                let hit = pred.normalized() == g.normalized();
                let slot = if t == 0 { &mut init } else { &mut steps };
                slot.1 += 1;
                if hit { slot.0 += 1; }
                let kind = match g {
                    LocationValue::NonExist => "null",
                    LocationValue::Unknown => "unk",
                    LocationValue::Span(_) => "span",
                };
                let e = by_kind.entry(kind).or_default();
                e.1 += 1;
                if hit { e.0 += 1; }
            }
        }
    }
    println!("initial cells: {}/{}", init.0, init.1);
    println!("step cells:    {}/{} = {:.3}", steps.0, steps.1, steps.0 as f64 / steps.1 as f64);
    for (k, (c, t)) in by_kind {
        println!("  gold {k}: {c}/{t} = {:.3}", c as f64 / t as f64);
    }
}
