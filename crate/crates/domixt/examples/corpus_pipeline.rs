//! Corpus preparation steps: length filtering, domain-tag injection,
//! oversampling to balance domains, mixing, and vocabulary construction.

use domixt::corpus::{
    build_vocabulary, filter_by_length, inject_tags, mix, oversample, ParallelCorpus,
    SentencePair, Side, VocabPolicy,
};

fn corpus(lines: &[(&str, &str)], domain: &str) -> ParallelCorpus {
    ParallelCorpus {
        pairs: lines
            .iter()
            .map(|(s, t)| SentencePair::new(s, t, domain))
            .collect(),
        name: domain.to_string(),
    }
}

fn main() {
    let out = corpus(
        &[
            ("the market rose", "der markt stieg"),
            ("the market fell sharply today", "der markt fiel heute stark"),
            ("shares closed higher", "aktien schlossen hoeher"),
            ("a very long sentence that should be dropped by the filter because it rambles on",
             "ein sehr langer satz"),
        ],
        "news",
    );
    let inn = corpus(
        &[("the cell divides", "die zelle teilt sich")],
        "medical",
    );

    let out = filter_by_length(&out, 10);
    println!("after length filter: {} out-of-domain pairs", out.pairs.len());

    let out_tagged = inject_tags(&out).unwrap();
    let in_tagged = inject_tags(&inn).unwrap();
    println!(
        "tagged source: {}",
        out_tagged.pairs[0].source.join(" ")
    );

    // oversample the small in-domain corpus to the out-of-domain size so both
    // domains get equal attention in the mixture
    let in_up = oversample(&in_tagged, out_tagged.pairs.len(), 0).unwrap();
    let mixed = mix(&out_tagged, &in_up, 0);
    println!(
        "mixed stage corpus: {} pairs ({} per domain)",
        mixed.pairs.len(),
        out_tagged.pairs.len()
    );

    let vocab = build_vocabulary(
        &[&out_tagged, &in_tagged],
        Side::Source,
        100,
        VocabPolicy::Mixed,
    )
    .unwrap();
    println!("source vocabulary: {} entries", vocab.len());
    println!("  id(\"<2news>\") = {}", vocab.id("<2news>"));
    println!("  id(\"market\")  = {}", vocab.id("market"));
    println!("  unknown token -> UNK id {}", vocab.id("zebra"));
}
