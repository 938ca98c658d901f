//! Corpus-level BLEU-4, paired bootstrap-resampling significance testing,
//! and the bold-tie results table.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("candidate/reference list length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
}

/// Corpus BLEU-4 with its n-gram precisions and brevity penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BleuScore {
    pub bleu: f64,
    pub precisions: [f64; 4],
    pub brevity_penalty: f64,
    pub candidate_len: usize,
    pub reference_len: usize,
}

impl std::fmt::Display for BleuScore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "BLEU4 = {:.2} ({:.1}/{:.1}/{:.1}/{:.1}, BP={:.3})",
            self.bleu,
            self.precisions[0] * 100.0,
            self.precisions[1] * 100.0,
            self.precisions[2] * 100.0,
            self.precisions[3] * 100.0,
            self.brevity_penalty
        )
    }
}

/// Clipped n-gram match and total counts for one sentence pair, n = 1..=4.
#[derive(Debug, Clone, Copy, Default)]
struct PairStats {
    matches: [u64; 4],
    totals: [u64; 4],
    candidate_len: usize,
    reference_len: usize,
}

fn ngram_counts<'a>(toks: &'a [String], n: usize) -> HashMap<&'a [String], u64> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for i in 0..=toks.len() - n {
            *m.entry(&toks[i..i + n]).or_insert(0) += 1;
        }
    }
    m
}

fn pair_stats(candidate: &[String], reference: &[String]) -> PairStats {
    let mut s = PairStats {
        candidate_len: candidate.len(),
        reference_len: reference.len(),
        ..Default::default()
    };
    for n in 1..=4 {
        let c = ngram_counts(candidate, n);
        let r = ngram_counts(reference, n);
        for (g, &cnt) in &c {
            s.totals[n - 1] += cnt;
            s.matches[n - 1] += cnt.min(r.get(g).copied().unwrap_or(0));
        }
    }
    s
}

fn score_from_stats(stats: impl Iterator<Item = PairStats>) -> BleuScore {
    let mut matches = [0u64; 4];
    let mut totals = [0u64; 4];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for s in stats {
        for n in 0..4 {
            matches[n] += s.matches[n];
            totals[n] += s.totals[n];
        }
        c_len += s.candidate_len;
        r_len += s.reference_len;
    }
    let mut precisions = [0.0; 4];
    for n in 0..4 {
        precisions[n] = if totals[n] > 0 {
            matches[n] as f64 / totals[n] as f64
        } else {
            0.0
        };
    }
    let brevity_penalty = if c_len == 0 {
        0.0
    } else {
        (1.0 - r_len as f64 / c_len as f64).exp().min(1.0)
    };
    // unsmoothed: any zero precision forces a zero score
    let bleu = if precisions.iter().any(|&p| p == 0.0) || c_len == 0 {
        0.0
    } else {
        brevity_penalty * (precisions.iter().map(|p| p.ln()).sum::<f64>() / 4.0).exp() * 100.0
    };
    BleuScore {
        bleu,
        precisions,
        brevity_penalty,
        candidate_len: c_len,
        reference_len: r_len,
    }
}

/// Corpus-level BLEU-4 (single reference, unsmoothed).
pub fn bleu4(candidates: &[Vec<String>], references: &[Vec<String>]) -> Result<BleuScore, EvalError> {
    if candidates.len() != references.len() {
        return Err(EvalError::LengthMismatch(candidates.len(), references.len()));
    }
    if candidates.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    Ok(score_from_stats(
        candidates
            .iter()
            .zip(references)
            .map(|(c, r)| pair_stats(c, r)),
    ))
}

/// Outcome of a paired bootstrap test between two systems.
#[derive(Debug, Clone)]
pub struct SignificanceResult {
    /// BLEU of each system on the full test set.
    pub observed: (f64, f64),
    /// Resamples in which the observed winner won again.
    pub winner_wins: usize,
    pub resamples: usize,
    /// Fraction of resamples in which the observed winner failed to win.
    pub p_value: f64,
    pub significant: bool,
}

/// Paired bootstrap resampling: resample sentence indices with replacement,
/// rescore both systems on each resample, and count how often the observed
/// winner fails to win. Significant when p < 0.05.
pub fn bootstrap_significance(
    sys_a: &[Vec<String>],
    sys_b: &[Vec<String>],
    references: &[Vec<String>],
    resamples: usize,
    seed: u64,
) -> Result<SignificanceResult, EvalError> {
    if sys_a.len() != references.len() {
        return Err(EvalError::LengthMismatch(sys_a.len(), references.len()));
    }
    if sys_b.len() != references.len() {
        return Err(EvalError::LengthMismatch(sys_b.len(), references.len()));
    }
    let full_a = bleu4(sys_a, references)?;
    let full_b = bleu4(sys_b, references)?;
    let a_wins_observed = full_a.bleu >= full_b.bleu;

    let stats_a: Vec<PairStats> = sys_a
        .iter()
        .zip(references)
        .map(|(c, r)| pair_stats(c, r))
        .collect();
    let stats_b: Vec<PairStats> = sys_b
        .iter()
        .zip(references)
        .map(|(c, r)| pair_stats(c, r))
        .collect();

    let n = references.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut winner_wins = 0;
    for _ in 0..resamples {
        let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        let a = score_from_stats(idx.iter().map(|&i| stats_a[i]));
        let b = score_from_stats(idx.iter().map(|&i| stats_b[i]));
        let winner_won = if a_wins_observed {
            a.bleu > b.bleu
        } else {
            b.bleu > a.bleu
        };
        if winner_won {
            winner_wins += 1;
        }
    }
    let p_value = 1.0 - winner_wins as f64 / resamples as f64;
    Ok(SignificanceResult {
        observed: (full_a.bleu, full_b.bleu),
        winner_wins,
        resamples,
        p_value,
        significant: p_value < 0.05,
    })
}

/// Scores of every system on every test set, plus the per-column bold sets
/// (best system and all systems not significantly different from it).
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub systems: Vec<String>,
    pub test_sets: Vec<String>,
    /// scores[system][test_set]
    pub scores: Vec<Vec<f64>>,
    /// bold[system][test_set]
    pub bold: Vec<Vec<bool>>,
}

impl EvalReport {
    /// Build the bold sets from system outputs: per column the best system is
    /// bold, along with every system whose paired bootstrap against the best
    /// is not significant.
    pub fn from_outputs(
        systems: &[String],
        test_sets: &[String],
        outputs: &[Vec<Vec<Vec<String>>>], // outputs[system][test_set][sentence]
        references: &[Vec<Vec<String>>],   // references[test_set][sentence]
        resamples: usize,
        seed: u64,
    ) -> Result<Self, EvalError> {
        let ns = systems.len();
        let nt = test_sets.len();
        let mut scores = vec![vec![0.0; nt]; ns];
        for s in 0..ns {
            for t in 0..nt {
                scores[s][t] = bleu4(&outputs[s][t], &references[t])?.bleu;
            }
        }
        let mut bold = vec![vec![false; nt]; ns];
        for t in 0..nt {
            let best = (0..ns)
                .max_by(|&a, &b| scores[a][t].partial_cmp(&scores[b][t]).unwrap())
                .expect("at least one system");
            for s in 0..ns {
                if s == best {
                    bold[s][t] = true;
                } else {
                    let sig = bootstrap_significance(
                        &outputs[best][t],
                        &outputs[s][t],
                        &references[t],
                        resamples,
                        seed,
                    )?;
                    bold[s][t] = !sig.significant;
                }
            }
        }
        Ok(EvalReport {
            systems: systems.to_vec(),
            test_sets: test_sets.to_vec(),
            scores,
            bold,
        })
    }
}

/// Render the results as a markdown table. With more than one test set an
/// average column is appended; its bold rule follows the per-column one on
/// mean scores (best mean bold, plus systems bold in every column).
pub fn render_report(report: &EvalReport) -> String {
    assert!(!report.systems.is_empty() && !report.test_sets.is_empty());
    let nt = report.test_sets.len();
    let with_avg = nt > 1;

    let mut out = String::new();
    out.push_str("| System |");
    for t in &report.test_sets {
        out.push_str(&format!(" {t} |"));
    }
    if with_avg {
        out.push_str(" average |");
    }
    out.push('\n');
    out.push_str("|---|");
    for _ in 0..nt + usize::from(with_avg) {
        out.push_str("---|");
    }
    out.push('\n');

    let means: Vec<f64> = report
        .scores
        .iter()
        .map(|row| row.iter().sum::<f64>() / nt as f64)
        .collect();
    let best_mean = (0..report.systems.len())
        .max_by(|&a, &b| means[a].partial_cmp(&means[b]).unwrap())
        .unwrap();

    for (s, name) in report.systems.iter().enumerate() {
        out.push_str(&format!("| {name} |"));
        for t in 0..nt {
            let cell = format!("{:.2}", report.scores[s][t]);
            if report.bold[s][t] {
                out.push_str(&format!(" **{cell}** |"));
            } else {
                out.push_str(&format!(" {cell} |"));
            }
        }
        if with_avg {
            let cell = format!("{:.2}", means[s]);
            let bold_avg = s == best_mean || report.bold[s].iter().all(|&b| b);
            if bold_avg {
                out.push_str(&format!(" **{cell}** |"));
            } else {
                out.push_str(&format!(" {cell} |"));
            }
        }
        out.push('\n');
    }
    out
}

/// Split whitespace-tokenized lines into token sequences.
pub fn to_token_lines(lines: &[String]) -> Vec<Vec<String>> {
    lines
        .iter()
        .map(|l| l.split_whitespace().map(|t| t.to_string()).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(lines: &[&str]) -> Vec<Vec<String>> {
        lines
            .iter()
            .map(|l| l.split_whitespace().map(|t| t.to_string()).collect())
            .collect()
    }

    #[test]
    fn perfect_match_scores_100() {
        let c = toks(&["the cat sat on the mat", "a b c d"]);
        let s = bleu4(&c, &c).unwrap();
        assert_eq!(s.bleu, 100.0);
        assert_eq!(s.brevity_penalty, 1.0);
    }

    // Expected values below were computed with an independent reference
    // implementation of corpus BLEU-4 (multi-bleu semantics) and frozen.

    #[test]
    fn hand_derived_precisions() {
        let c = toks(&["a b c d e f"]);
        let r = toks(&["a b c d x y"]);
        let s = bleu4(&c, &r).unwrap();
        assert!((s.precisions[0] - 4.0 / 6.0).abs() < 1e-12);
        assert!((s.precisions[1] - 3.0 / 5.0).abs() < 1e-12);
        assert!((s.precisions[2] - 2.0 / 4.0).abs() < 1e-12);
        assert!((s.precisions[3] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.brevity_penalty, 1.0);
        assert!((s.bleu - 50.813275).abs() < 0.01, "bleu {}", s.bleu);
    }

    #[test]
    fn reference_scorer_equivalence_multi_sentence() {
        let c = toks(&[
            "the cat sat on the mat",
            "there is a dog",
            "he reads a book quietly",
        ]);
        let r = toks(&[
            "the cat sat on a mat today",
            "there is a small dog",
            "he reads a good book quietly",
        ]);
        let s = bleu4(&c, &r).unwrap();
        assert!((s.bleu - 37.935345).abs() < 0.01, "bleu {}", s.bleu);
        assert!((s.brevity_penalty - 0.818731).abs() < 1e-4);
    }

    #[test]
    fn reference_scorer_equivalence_long_sentences() {
        let c = toks(&[
            "it is a guide to action which ensures that the military always obeys the commands of the party",
            "he read the book because he was interested in world history",
        ]);
        let r = toks(&[
            "it is a guide to action that ensures that the military will forever heed party commands",
            "he was interested in world history because he read the book",
        ]);
        let s = bleu4(&c, &r).unwrap();
        assert!((s.bleu - 53.734671).abs() < 0.01, "bleu {}", s.bleu);
    }

    #[test]
    fn short_candidate_without_fourgram_scores_zero() {
        let c = toks(&["a b c"]);
        let r = toks(&["a b c"]);
        // no 4-gram exists at length 3: p4 = 0 -> unsmoothed score 0
        assert_eq!(bleu4(&c, &r).unwrap().bleu, 0.0);
    }

    #[test]
    fn permutation_equivariant() {
        let c = toks(&["a b c d e", "f g h i j", "k l m n o"]);
        let r = toks(&["a b c d x", "f g h y j", "k z m n o"]);
        let s1 = bleu4(&c, &r).unwrap();
        let perm = [2usize, 0, 1];
        let cp: Vec<_> = perm.iter().map(|&i| c[i].clone()).collect();
        let rp: Vec<_> = perm.iter().map(|&i| r[i].clone()).collect();
        let s2 = bleu4(&cp, &rp).unwrap();
        assert_eq!(s1.bleu, s2.bleu);
    }

    #[test]
    fn extra_wrong_token_never_helps_p1_or_bp() {
        let c = toks(&["a b c d e"]);
        let r = toks(&["a b c d e"]);
        let s = bleu4(&c, &r).unwrap();
        let padded = toks(&["a b c d e zzz"]);
        let sp = bleu4(&padded, &r).unwrap();
        assert!(sp.precisions[0] <= s.precisions[0]);
        assert!(sp.brevity_penalty <= 1.0);
    }

    #[test]
    fn length_mismatch_and_empty_rejected() {
        let c = toks(&["a b"]);
        assert!(matches!(
            bleu4(&c, &toks(&["a", "b"])),
            Err(EvalError::LengthMismatch(1, 2))
        ));
        assert!(matches!(bleu4(&[], &[]), Err(EvalError::EmptyInput)));
    }

    #[test]
    fn identical_systems_never_significant() {
        let a = toks(&["a b c d e", "f g h i j", "k l m n o", "p q r s t"]);
        let r = toks(&["a b c d x", "f g h i j", "k l z n o", "p q r s t"]);
        for seed in 0..5 {
            let res = bootstrap_significance(&a, &a, &r, 1000, seed).unwrap();
            assert!(!res.significant);
            assert_eq!(res.p_value, 1.0);
        }
    }

    #[test]
    fn clearly_better_system_is_significant() {
        // A = references; B = same tokens reversed per sentence
        let r: Vec<Vec<String>> = (0..100)
            .map(|i| {
                (0..8)
                    .map(|j| format!("w{}", (i * 13 + j * 7) % 40))
                    .collect()
            })
            .collect();
        let a = r.clone();
        let b: Vec<Vec<String>> = r
            .iter()
            .map(|s| s.iter().rev().cloned().collect())
            .collect();
        let res = bootstrap_significance(&a, &b, &r, 1000, 3).unwrap();
        assert!(res.significant, "p = {}", res.p_value);
    }

    #[test]
    fn bootstrap_deterministic() {
        let a = toks(&["a b c d e", "f g h i j"]);
        let b = toks(&["a b c x e", "f g h i j"]);
        let r = toks(&["a b c d e", "f g h y j"]);
        let p1 = bootstrap_significance(&a, &b, &r, 500, 9).unwrap().p_value;
        let p2 = bootstrap_significance(&a, &b, &r, 500, 9).unwrap().p_value;
        assert_eq!(p1, p2);
    }

    #[test]
    fn report_bold_rules() {
        let report = EvalReport {
            systems: vec!["Fine tuning".into(), "Mixed fine tuning".into()],
            test_sets: vec!["test".into()],
            scores: vec![vec![16.41], vec![18.01]],
            bold: vec![vec![false], vec![true]],
        };
        let table = render_report(&report);
        assert!(table.contains("**18.01**"));
        assert!(table.contains(" 16.41 |"));
        assert!(!table.contains("**16.41**"));
    }

    #[test]
    fn report_single_system_is_bold() {
        let report = EvalReport {
            systems: vec!["only".into()],
            test_sets: vec!["t".into()],
            scores: vec![vec![42.0]],
            bold: vec![vec![true]],
        };
        assert!(render_report(&report).contains("**42.00**"));
    }

    #[test]
    fn report_tie_bolds_both() {
        let a = toks(&["a b c d e f g h"]);
        let outputs = vec![vec![a.clone()], vec![a.clone()]];
        let refs = vec![a.clone()];
        let report = EvalReport::from_outputs(
            &["s1".into(), "s2".into()],
            &["t".into()],
            &outputs,
            &refs,
            200,
            1,
        )
        .unwrap();
        // identical outputs tie exactly: both systems must be bold
        assert!(report.bold[0][0] && report.bold[1][0]);
        let table = render_report(&report);
        assert_eq!(table.matches("**").count(), 4);
    }
}
