//! Corpus BLEU-4 and the paired bootstrap significance test, including the
//! bold-tie results table.

use domixt::eval::{bleu4, bootstrap_significance, render_report, EvalReport};

fn toks(lines: &[&str]) -> Vec<Vec<String>> {
    lines
        .iter()
        .map(|l| l.split_whitespace().map(String::from).collect())
        .collect()
}

fn main() {
    let hyp = toks(&["a b c d e f"]);
    let reference = toks(&["a b c d x y"]);
    let score = bleu4(&hyp, &reference).unwrap();
    println!("{score}");

    // paired bootstrap: system A perfect, system B with one garbled token per
    // sentence, 200 sentences
    let refs: Vec<Vec<String>> = (0..200)
        .map(|i| (0..8).map(|j| format!("w{}", (i * 7 + j * 3) % 30)).collect())
        .collect();
    let sys_a = refs.clone();
    let sys_b: Vec<Vec<String>> = refs
        .iter()
        .map(|s| {
            let mut c = s.clone();
            c[3] = "garbled".to_string();
            c
        })
        .collect();
    let res = bootstrap_significance(&sys_a, &sys_b, &refs, 1000, 1).unwrap();
    println!(
        "A = {:.2}, B = {:.2}, p = {:.4} -> {}",
        res.observed.0,
        res.observed.1,
        res.p_value,
        if res.significant { "significant" } else { "not significant" }
    );

    // bold convention: the best system and everything not significantly
    // different from it
    let report = EvalReport {
        systems: vec!["Fine tuning".into(), "Mixed fine tuning".into()],
        test_sets: vec!["test".into()],
        scores: vec![vec![16.41], vec![18.01]],
        bold: vec![vec![false], vec![true]],
    };
    println!("\n{}", render_report(&report));
}
