//! Learn a joint BPE model from token frequency profiles, apply it, and undo
//! it. Domain tags pass through unsplit.

use domixt::corpus::{ParallelCorpus, SentencePair, Side};
use domixt::subword::{learn_bpe, profile, undo_bpe, union_profiles, BpeMode};

fn main() {
    let corpus = ParallelCorpus {
        pairs: [
            ("lower lower lowest", "niedrig niedriger am niedrigsten"),
            ("newer newest new", "neuer am neuesten neu"),
            ("wider widest wide", "weiter am weitesten weit"),
        ]
        .iter()
        .map(|(s, t)| SentencePair::new(s, t, "demo"))
        .collect(),
        name: "demo".to_string(),
    };

    let joint = union_profiles(
        &profile(&corpus, Side::Source),
        &profile(&corpus, Side::Target),
    );
    let model = learn_bpe(&[&joint], 40, BpeMode::Joint).unwrap();
    println!("learned {} merges; first five:", model.merges.len());
    for (a, b) in model.merges.iter().take(5) {
        println!("  {a} + {b}");
    }

    let sentence: Vec<String> = ["<2demo>", "lowest", "newest", "unseen"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let pieces = model.apply(&sentence);
    println!("\napply:  {}", pieces.join(" "));
    let restored = undo_bpe(&pieces, &model.joiner);
    println!("undo:   {}", restored.join(" "));
    assert_eq!(restored, sentence, "round-trip is exact");
}
