//! Seeded synthetic two-domain parallel corpus generation.
//!
//! The generated task has a ground-truth lexicon per domain. Shared tokens
//! translate identically in both domains, ambiguous tokens translate
//! differently by domain (this is what makes domain tags informative), and
//! exclusive tokens appear only in one domain's sentences. Targets are
//! token-wise lexicon translations with local adjacent-pair reordering so the
//! attention mechanism has something to learn.

use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{ParallelCorpus, SentencePair};

pub const OUT_DOMAIN: &str = "out";
pub const IN_DOMAIN: &str = "in";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("token not in lexicon: {0}")]
    UnknownToken(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Specification of the synthetic task.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    /// Tokens translated identically in both domains.
    pub shared_vocab: usize,
    /// Tokens whose translation differs by domain.
    pub ambiguous_vocab: usize,
    /// Tokens per domain that appear only in that domain's sentences.
    pub domain_exclusive_vocab: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub out_size: usize,
    pub in_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
    /// Probability of corrupting a target token; applied to the in-domain
    /// training corpus only, modeling a low-quality in-domain corpus.
    pub noise_rate: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            shared_vocab: 40,
            ambiguous_vocab: 30,
            domain_exclusive_vocab: 15,
            min_len: 3,
            max_len: 6,
            out_size: 20_000,
            in_size: 1_000,
            dev_size: 200,
            test_size: 200,
            noise_rate: 0.0,
            seed: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.shared_vocab + self.ambiguous_vocab == 0 {
            return Err(SynthError::InvalidSpec("empty vocabulary".into()));
        }
        for (name, v) in [
            ("out_size", self.out_size),
            ("in_size", self.in_size),
            ("dev_size", self.dev_size),
            ("test_size", self.test_size),
            ("min_len", self.min_len),
        ] {
            if v == 0 {
                return Err(SynthError::InvalidSpec(format!("{name} must be positive")));
            }
        }
        if self.min_len > self.max_len {
            return Err(SynthError::InvalidSpec("min_len > max_len".into()));
        }
        if self.in_size > self.out_size {
            return Err(SynthError::InvalidSpec(
                "in_size must not exceed out_size (resource-poor setting)".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return Err(SynthError::InvalidSpec("noise_rate must be in [0,1)".into()));
        }
        Ok(())
    }
}

/// Ground-truth lexicon: source token -> (out-domain, in-domain) translation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    pub entries: IndexMap<String, (String, String)>,
}

impl Lexicon {
    pub fn translate(&self, domain: &str, token: &str) -> Result<&str, SynthError> {
        let (out_t, in_t) = self
            .entries
            .get(token)
            .ok_or_else(|| SynthError::UnknownToken(token.to_string()))?;
        Ok(if domain == IN_DOMAIN { in_t } else { out_t })
    }

    /// Source tokens whose translation differs between the domains.
    pub fn ambiguous_tokens(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|(_, (o, i))| o != i)
            .map(|(k, _)| k.as_str())
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), SynthError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (tok, (out_t, in_t)) in &self.entries {
            writeln!(f, "{tok}\t{out_t}\t{in_t}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let mut entries = IndexMap::new();
        for line in std::fs::read_to_string(path)?.lines() {
            let mut cols = line.split('\t');
            let (tok, out_t, in_t) = (cols.next(), cols.next(), cols.next());
            match (tok, out_t, in_t) {
                (Some(t), Some(o), Some(i)) => {
                    entries.insert(t.to_string(), (o.to_string(), i.to_string()));
                }
                _ => {
                    return Err(SynthError::InvalidSpec(format!(
                        "malformed lexicon line: {line}"
                    )))
                }
            }
        }
        Ok(Lexicon { entries })
    }
}

/// Everything `generate` produces.
#[derive(Debug, Clone)]
pub struct SynthCorpora {
    pub out_train: ParallelCorpus,
    pub in_train: ParallelCorpus,
    pub out_dev: ParallelCorpus,
    pub in_dev: ParallelCorpus,
    pub out_test: ParallelCorpus,
    pub in_test: ParallelCorpus,
    pub lexicon: Lexicon,
}

fn build_lexicon(spec: &SynthSpec) -> Lexicon {
    let mut entries = IndexMap::new();
    for i in 0..spec.shared_vocab {
        entries.insert(format!("s{i}"), (format!("t_s{i}"), format!("t_s{i}")));
    }
    for i in 0..spec.ambiguous_vocab {
        entries.insert(format!("k{i}"), (format!("a_k{i}"), format!("b_k{i}")));
    }
    // exclusives translate the same way but only occur in one domain's text
    for i in 0..spec.domain_exclusive_vocab {
        entries.insert(format!("xo{i}"), (format!("u_xo{i}"), format!("u_xo{i}")));
    }
    for i in 0..spec.domain_exclusive_vocab {
        entries.insert(format!("xi{i}"), (format!("u_xi{i}"), format!("u_xi{i}")));
    }
    Lexicon { entries }
}

fn source_pool(spec: &SynthSpec, domain: &str) -> Vec<String> {
    let mut pool = Vec::new();
    for i in 0..spec.shared_vocab {
        pool.push(format!("s{i}"));
    }
    for i in 0..spec.ambiguous_vocab {
        pool.push(format!("k{i}"));
    }
    let prefix = if domain == IN_DOMAIN { "xi" } else { "xo" };
    for i in 0..spec.domain_exclusive_vocab {
        pool.push(format!("{prefix}{i}"));
    }
    pool
}

/// One left-to-right pass of adjacent swaps at the given probability.
fn reorder(tokens: &mut [String], prob: f64, rng: &mut ChaCha8Rng) {
    let mut i = 0;
    while i + 1 < tokens.len() {
        if rng.gen_bool(prob) {
            tokens.swap(i, i + 1);
            i += 2;
        } else {
            i += 1;
        }
    }
}

const REORDER_PROB: f64 = 0.2;

fn gen_corpus(
    spec: &SynthSpec,
    lexicon: &Lexicon,
    domain: &str,
    size: usize,
    name: &str,
    noise_rate: f64,
    rng: &mut ChaCha8Rng,
) -> ParallelCorpus {
    let pool = source_pool(spec, domain);
    // noise draws replacement tokens from this domain's target vocabulary
    let target_pool: Vec<&str> = pool
        .iter()
        .map(|t| lexicon.translate(domain, t).expect("pool token in lexicon"))
        .collect();
    let mut pairs = Vec::with_capacity(size);
    for _ in 0..size {
        let len = rng.gen_range(spec.min_len..=spec.max_len);
        let src: Vec<String> = (0..len)
            .map(|_| pool[rng.gen_range(0..pool.len())].clone())
            .collect();
        let mut tgt: Vec<String> = src
            .iter()
            .map(|t| lexicon.translate(domain, t).unwrap().to_string())
            .collect();
        reorder(&mut tgt, REORDER_PROB, rng);
        if noise_rate > 0.0 {
            for t in &mut tgt {
                if rng.gen_bool(noise_rate) {
                    *t = target_pool[rng.gen_range(0..target_pool.len())].to_string();
                }
            }
        }
        pairs.push(SentencePair::new(&src.join(" "), &tgt.join(" "), domain));
    }
    ParallelCorpus {
        pairs,
        name: name.to_string(),
    }
}

/// Generate the full corpus set deterministically from `spec.seed`.
pub fn generate(spec: &SynthSpec) -> Result<SynthCorpora, SynthError> {
    spec.validate()?;
    let lexicon = build_lexicon(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let out_train = gen_corpus(spec, &lexicon, OUT_DOMAIN, spec.out_size, "out-train", 0.0, &mut rng);
    let in_train = gen_corpus(
        spec,
        &lexicon,
        IN_DOMAIN,
        spec.in_size,
        "in-train",
        spec.noise_rate,
        &mut rng,
    );
    let out_dev = gen_corpus(spec, &lexicon, OUT_DOMAIN, spec.dev_size, "out-dev", 0.0, &mut rng);
    let in_dev = gen_corpus(spec, &lexicon, IN_DOMAIN, spec.dev_size, "in-dev", 0.0, &mut rng);
    let out_test = gen_corpus(spec, &lexicon, OUT_DOMAIN, spec.test_size, "out-test", 0.0, &mut rng);
    let in_test = gen_corpus(spec, &lexicon, IN_DOMAIN, spec.test_size, "in-test", 0.0, &mut rng);
    Ok(SynthCorpora {
        out_train,
        in_train,
        out_dev,
        in_dev,
        out_test,
        in_test,
        lexicon,
    })
}

/// Ground-truth translation of a source sentence before reordering and noise.
pub fn oracle_translate(
    lexicon: &Lexicon,
    domain: &str,
    source: &[String],
) -> Result<Vec<String>, SynthError> {
    source
        .iter()
        .map(|t| lexicon.translate(domain, t).map(|s| s.to_string()))
        .collect()
}

/// Fraction of ambiguous source tokens whose oracle target translation
/// appears in the hypothesis. Scores the tag mechanism independently of BLEU.
pub fn ambiguous_accuracy(
    lexicon: &Lexicon,
    domain: &str,
    sources: &[Vec<String>],
    hypotheses: &[Vec<String>],
) -> Result<f64, SynthError> {
    assert_eq!(sources.len(), hypotheses.len());
    let mut total = 0usize;
    let mut correct = 0usize;
    for (src, hyp_tokens) in sources.iter().zip(hypotheses) {
        for tok in src {
            if crate::corpus::is_domain_tag(tok) {
                continue;
            }
            let (out_t, in_t) = lexicon
                .entries
                .get(tok)
                .ok_or_else(|| SynthError::UnknownToken(tok.to_string()))?;
            if out_t == in_t {
                continue;
            }
            total += 1;
            let want = if domain == IN_DOMAIN { in_t } else { out_t };
            if hyp_tokens.contains(want) {
                correct += 1;
            }
        }
    }
    if total == 0 {
        return Ok(0.0);
    }
    Ok(correct as f64 / total as f64)
}

/// Write all six corpora (corpus file format) plus `lexicon.tsv` into `dir`.
pub fn write_all(corpora: &SynthCorpora, dir: &Path) -> Result<(), SynthError> {
    std::fs::create_dir_all(dir)?;
    let save = |c: &ParallelCorpus| -> Result<(), SynthError> {
        crate::corpus::save_corpus(
            c,
            &dir.join(format!("{}.src", c.name)),
            &dir.join(format!("{}.tgt", c.name)),
        )
        .map_err(|e| SynthError::InvalidSpec(e.to_string()))
    };
    for c in [
        &corpora.out_train,
        &corpora.in_train,
        &corpora.out_dev,
        &corpora.in_dev,
        &corpora.out_test,
        &corpora.in_test,
    ] {
        save(c)?;
    }
    corpora.lexicon.save(&dir.join("lexicon.tsv"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SynthSpec {
        SynthSpec {
            shared_vocab: 10,
            ambiguous_vocab: 8,
            domain_exclusive_vocab: 4,
            out_size: 300,
            in_size: 60,
            dev_size: 20,
            test_size: 20,
            ..Default::default()
        }
    }

    #[test]
    fn sizes_match_spec() {
        let c = generate(&small_spec()).unwrap();
        assert_eq!(c.out_train.pairs.len(), 300);
        assert_eq!(c.in_train.pairs.len(), 60);
        assert_eq!(c.out_dev.pairs.len(), 20);
        assert_eq!(c.in_test.pairs.len(), 20);
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate(&small_spec()).unwrap();
        let b = generate(&small_spec()).unwrap();
        assert_eq!(a.out_train.pairs, b.out_train.pairs);
        assert_eq!(a.in_train.pairs, b.in_train.pairs);
        assert_eq!(a.lexicon, b.lexicon);
        let c = generate(&SynthSpec {
            seed: 2,
            ..small_spec()
        })
        .unwrap();
        assert_ne!(a.out_train.pairs, c.out_train.pairs);
    }

    #[test]
    fn ambiguous_tokens_differ_by_domain_only() {
        let lex = build_lexicon(&small_spec());
        assert_eq!(lex.translate(OUT_DOMAIN, "k3").unwrap(), "a_k3");
        assert_eq!(lex.translate(IN_DOMAIN, "k3").unwrap(), "b_k3");
        assert_eq!(lex.translate(OUT_DOMAIN, "s1").unwrap(), "t_s1");
        assert_eq!(lex.translate(IN_DOMAIN, "s1").unwrap(), "t_s1");
        // only k-tokens are ambiguous
        for t in lex.ambiguous_tokens() {
            assert!(t.starts_with('k'), "{t}");
        }
        assert_eq!(lex.ambiguous_tokens().len(), 8);
    }

    #[test]
    fn exclusives_stay_in_their_domain() {
        let c = generate(&small_spec()).unwrap();
        for p in c.out_train.pairs.iter().chain(&c.out_test.pairs) {
            assert!(!p.source.iter().any(|t| t.starts_with("xi")));
        }
        for p in c.in_train.pairs.iter().chain(&c.in_test.pairs) {
            assert!(!p.source.iter().any(|t| t.starts_with("xo")));
        }
    }

    #[test]
    fn noise_free_corpus_is_lexicon_consistent() {
        // with noise 0 the target is a permutation of the oracle translation
        let c = generate(&small_spec()).unwrap();
        for p in c.in_train.pairs.iter().chain(c.out_test.pairs.iter()) {
            let mut want = oracle_translate(&c.lexicon, &p.domain, &p.source).unwrap();
            let mut got = p.target.clone();
            got.sort_unstable();
            want.sort_unstable();
            assert_eq!(got, want, "src: {:?}", p.source);
        }
    }

    #[test]
    fn noise_corrupts_in_domain_train_only() {
        let spec = SynthSpec {
            noise_rate: 0.5,
            ..small_spec()
        };
        let c = generate(&spec).unwrap();
        let consistent = |corpus: &ParallelCorpus| {
            corpus.pairs.iter().all(|p| {
                let mut want = oracle_translate(&c.lexicon, &p.domain, &p.source).unwrap();
                let mut got = p.target.clone();
                got.sort_unstable();
                want.sort_unstable();
                got == want
            })
        };
        assert!(!consistent(&c.in_train), "noise should corrupt in-train");
        assert!(consistent(&c.out_train));
        assert!(consistent(&c.in_dev));
        assert!(consistent(&c.in_test));
    }

    #[test]
    fn oracle_rejects_unknown_token() {
        let lex = build_lexicon(&small_spec());
        let src = vec!["s1".to_string(), "zzz".to_string()];
        assert!(matches!(
            oracle_translate(&lex, IN_DOMAIN, &src),
            Err(SynthError::UnknownToken(t)) if t == "zzz"
        ));
    }

    #[test]
    fn ambiguous_accuracy_counts_only_ambiguous_tokens() {
        let lex = build_lexicon(&small_spec());
        let split = |s: &str| -> Vec<String> { s.split_whitespace().map(String::from).collect() };
        let sources = vec![split("s0 k0 k1")];
        // correct in-domain translation for k0, out-domain one for k1
        let hyps = vec![split("t_s0 b_k0 a_k1")];
        let acc = ambiguous_accuracy(&lex, IN_DOMAIN, &sources, &hyps).unwrap();
        assert!((acc - 0.5).abs() < 1e-12);
        let acc_out = ambiguous_accuracy(&lex, OUT_DOMAIN, &sources, &hyps).unwrap();
        assert!((acc_out - 0.5).abs() < 1e-12);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(generate(&SynthSpec {
            out_size: 0,
            ..small_spec()
        })
        .is_err());
        assert!(generate(&SynthSpec {
            min_len: 7,
            max_len: 6,
            ..small_spec()
        })
        .is_err());
        assert!(generate(&SynthSpec {
            noise_rate: 1.0,
            ..small_spec()
        })
        .is_err());
        assert!(generate(&SynthSpec {
            in_size: 500,
            out_size: 300,
            ..small_spec()
        })
        .is_err());
    }

    #[test]
    fn lexicon_roundtrip_and_write_all() {
        let dir = tempfile::tempdir().unwrap();
        let c = generate(&small_spec()).unwrap();
        write_all(&c, dir.path()).unwrap();
        let lex = Lexicon::load(&dir.path().join("lexicon.tsv")).unwrap();
        assert_eq!(lex, c.lexicon);
        let reload = crate::corpus::load_corpus(
            &dir.path().join("in-train.src"),
            &dir.path().join("in-train.tgt"),
            IN_DOMAIN,
        )
        .unwrap();
        assert_eq!(reload.pairs, c.in_train.pairs);
    }
}
