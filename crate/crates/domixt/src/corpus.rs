//! Parallel corpus handling: loading, length filtering, domain tags,
//! oversampling, mixing, and vocabulary construction.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Reserved vocabulary entries occupying ids 0..4.
pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED_TOKENS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line count mismatch: {source_lines} source lines vs {target_lines} target lines")]
    LineCountMismatch {
        source_lines: usize,
        target_lines: usize,
    },
    #[error("file is not valid UTF-8: {0}")]
    EncodingError(String),
    #[error("empty file: {0}")]
    EmptyFile(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus already tagged: first source token {0:?} is a domain tag")]
    AlreadyTagged(String),
    #[error("oversample target {target} smaller than corpus size {size}")]
    TargetTooSmall { target: usize, size: usize },
    #[error("vocabulary cap {cap} too small: {reserved} reserved + {tags} tag tokens")]
    CapTooSmall {
        cap: usize,
        reserved: usize,
        tags: usize,
    },
    #[error("empty corpus list passed to build_vocabulary")]
    NoCorpora,
}

/// One aligned sentence pair with its domain label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub source: Vec<String>,
    pub target: Vec<String>,
    pub domain: String,
}

impl SentencePair {
    pub fn new(source: &str, target: &str, domain: &str) -> Self {
        SentencePair {
            source: tokenize(source),
            target: tokenize(target),
            domain: domain.to_string(),
        }
    }
}

/// An ordered collection of sentence pairs. Order is load order until an
/// explicitly seeded shuffle.
#[derive(Debug, Clone, Default)]
pub struct ParallelCorpus {
    pub pairs: Vec<SentencePair>,
    pub name: String,
}

/// The paper's two vocabulary policies: fine-tuning reuses the vocabulary of
/// the out-of-domain data; multi-domain and mixed fine tuning build it from
/// the mixed data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum VocabPolicy {
    OutOfDomainOnly,
    Mixed,
}

impl fmt::Display for VocabPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VocabPolicy::OutOfDomainOnly => write!(f, "out-of-domain-only"),
            VocabPolicy::Mixed => write!(f, "mixed"),
        }
    }
}

/// Which side of a parallel corpus an operation reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
}

/// Token <-> id mapping with four reserved entries at ids 0..4.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    pub id_to_token: Vec<String>,
    pub token_to_id: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let token_to_id = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            id_to_token: tokens,
            token_to_id,
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    /// Token id, falling back to UNK for out-of-vocabulary tokens.
    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.id_to_token[id]
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.id_to_token[i].clone()).collect()
    }

    /// One token per line, line number = id.
    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let mut out = String::new();
        for t in &self.id_to_token {
            out.push_str(t);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| CorpusError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = read_utf8(path)?;
        let tokens: Vec<String> = text.lines().map(|l| l.to_string()).collect();
        if tokens.is_empty() {
            return Err(CorpusError::EmptyFile(path.display().to_string()));
        }
        Ok(Vocabulary::from_tokens(tokens))
    }
}

fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(|t| t.to_string()).collect()
}

fn read_utf8(path: &Path) -> Result<String, CorpusError> {
    let bytes = fs::read(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    String::from_utf8(bytes).map_err(|_| CorpusError::EncodingError(path.display().to_string()))
}

/// True if `token` has the shape of a domain tag, `<2domain>`.
pub fn is_domain_tag(token: &str) -> bool {
    token
        .strip_prefix("<2")
        .and_then(|rest| rest.strip_suffix('>'))
        .map(|name| {
            !name.is_empty()
                && name
                    .bytes()
                    .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'-')
        })
        .unwrap_or(false)
}

/// The tag token for a domain, e.g. `<2iwslt>`.
pub fn domain_tag(domain: &str) -> String {
    format!("<2{domain}>")
}

/// Load an aligned pair of one-sentence-per-line files.
pub fn load_corpus(
    source_path: &Path,
    target_path: &Path,
    domain: &str,
) -> Result<ParallelCorpus, CorpusError> {
    let src = read_utf8(source_path)?;
    let tgt = read_utf8(target_path)?;
    let src_lines: Vec<&str> = src.lines().collect();
    let tgt_lines: Vec<&str> = tgt.lines().collect();
    if src_lines.is_empty() {
        return Err(CorpusError::EmptyFile(source_path.display().to_string()));
    }
    if tgt_lines.is_empty() {
        return Err(CorpusError::EmptyFile(target_path.display().to_string()));
    }
    if src_lines.len() != tgt_lines.len() {
        return Err(CorpusError::LineCountMismatch {
            source_lines: src_lines.len(),
            target_lines: tgt_lines.len(),
        });
    }
    let pairs = src_lines
        .iter()
        .zip(&tgt_lines)
        .map(|(s, t)| SentencePair::new(s, t, domain))
        .collect();
    Ok(ParallelCorpus {
        pairs,
        name: domain.to_string(),
    })
}

/// Write a corpus back to `.src`/`.tgt` files (one sentence per line).
pub fn save_corpus(c: &ParallelCorpus, source_path: &Path, target_path: &Path) -> Result<(), CorpusError> {
    let mut src = String::new();
    let mut tgt = String::new();
    for p in &c.pairs {
        src.push_str(&p.source.join(" "));
        src.push('\n');
        tgt.push_str(&p.target.join(" "));
        tgt.push('\n');
    }
    fs::write(source_path, src).map_err(|e| CorpusError::Io {
        path: source_path.display().to_string(),
        source: e,
    })?;
    fs::write(target_path, tgt).map_err(|e| CorpusError::Io {
        path: target_path.display().to_string(),
        source: e,
    })
}

/// Drop every pair where either side exceeds `max_tokens`. Runs before tag
/// injection, so filtering is identical across tag/no-tag ablations.
pub fn filter_by_length(c: &ParallelCorpus, max_tokens: usize) -> ParallelCorpus {
    assert!(max_tokens >= 1, "max_tokens must be >= 1");
    ParallelCorpus {
        pairs: c
            .pairs
            .iter()
            .filter(|p| p.source.len() <= max_tokens && p.target.len() <= max_tokens)
            .cloned()
            .collect(),
        name: c.name.clone(),
    }
}

/// Prepend the `<2domain>` tag to every source sentence. Refuses corpora that
/// already carry a tag.
pub fn inject_tags(c: &ParallelCorpus) -> Result<ParallelCorpus, CorpusError> {
    let mut pairs = Vec::with_capacity(c.pairs.len());
    for p in &c.pairs {
        if let Some(first) = p.source.first() {
            if is_domain_tag(first) {
                return Err(CorpusError::AlreadyTagged(first.clone()));
            }
        }
        let mut source = Vec::with_capacity(p.source.len() + 1);
        source.push(domain_tag(&p.domain));
        source.extend(p.source.iter().cloned());
        pairs.push(SentencePair {
            source,
            target: p.target.clone(),
            domain: p.domain.clone(),
        });
    }
    Ok(ParallelCorpus {
        pairs,
        name: c.name.clone(),
    })
}

/// Grow `small` to exactly `target_size` pairs: full copies plus a seeded
/// uniform sample without replacement for the remainder.
pub fn oversample(
    small: &ParallelCorpus,
    target_size: usize,
    seed: u64,
) -> Result<ParallelCorpus, CorpusError> {
    let n = small.pairs.len();
    assert!(n > 0, "oversample requires a nonempty corpus");
    if target_size < n {
        return Err(CorpusError::TargetTooSmall {
            target: target_size,
            size: n,
        });
    }
    let copies = target_size / n;
    let remainder = target_size - copies * n;
    let mut pairs = Vec::with_capacity(target_size);
    for _ in 0..copies {
        pairs.extend(small.pairs.iter().cloned());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = rand::seq::index::sample(&mut rng, n, remainder);
    for i in idx.iter() {
        pairs.push(small.pairs[i].clone());
    }
    Ok(ParallelCorpus {
        pairs,
        name: small.name.clone(),
    })
}

/// Concatenate two corpora and shuffle with a seeded generator.
pub fn mix(a: &ParallelCorpus, b: &ParallelCorpus, seed: u64) -> ParallelCorpus {
    let mut pairs: Vec<SentencePair> = a.pairs.iter().chain(b.pairs.iter()).cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pairs.shuffle(&mut rng);
    ParallelCorpus {
        pairs,
        name: format!("{}+{}", a.name, b.name),
    }
}

/// Frequency-ranked vocabulary over one side of the given corpora, ties broken
/// lexicographically. Domain tags present in the data are force-included;
/// reserved tokens occupy ids 0..4; total size is capped at `cap`.
pub fn build_vocabulary(
    corpora: &[&ParallelCorpus],
    side: Side,
    cap: usize,
    _policy: VocabPolicy,
) -> Result<Vocabulary, CorpusError> {
    if corpora.is_empty() {
        return Err(CorpusError::NoCorpora);
    }
    let mut freq: HashMap<&str, u64> = HashMap::new();
    for c in corpora {
        for p in &c.pairs {
            let toks = match side {
                Side::Source => &p.source,
                Side::Target => &p.target,
            };
            for t in toks {
                *freq.entry(t.as_str()).or_insert(0) += 1;
            }
        }
    }
    let mut tags: Vec<&str> = freq
        .keys()
        .copied()
        .filter(|t| is_domain_tag(t))
        .collect();
    tags.sort_unstable();
    let reserved = RESERVED_TOKENS.len();
    if cap <= reserved + tags.len() {
        return Err(CorpusError::CapTooSmall {
            cap,
            reserved,
            tags: tags.len(),
        });
    }
    let mut ranked: Vec<(&str, u64)> = freq
        .iter()
        .filter(|(t, _)| !is_domain_tag(t))
        .map(|(&t, &f)| (t, f))
        .collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut tokens: Vec<String> = RESERVED_TOKENS.iter().map(|t| t.to_string()).collect();
    tokens.extend(tags.iter().map(|t| t.to_string()));
    let budget = cap - tokens.len();
    tokens.extend(ranked.iter().take(budget).map(|(t, _)| t.to_string()));
    Ok(Vocabulary::from_tokens(tokens))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn corpus(lines: &[(&str, &str)], domain: &str) -> ParallelCorpus {
        ParallelCorpus {
            pairs: lines
                .iter()
                .map(|(s, t)| SentencePair::new(s, t, domain))
                .collect(),
            name: domain.to_string(),
        }
    }

    fn write_lines(dir: &Path, name: &str, lines: &[&str]) -> std::path::PathBuf {
        let path = dir.join(name);
        let mut f = fs::File::create(&path).unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        path
    }

    #[test]
    fn load_corpus_pairs_lines() {
        let dir = tempfile::tempdir().unwrap();
        let s = write_lines(dir.path(), "a.src", &["a b", "c", "d e f"]);
        let t = write_lines(dir.path(), "a.tgt", &["x", "y z", "w"]);
        let c = load_corpus(&s, &t, "ted").unwrap();
        assert_eq!(c.pairs.len(), 3);
        assert_eq!(c.pairs[2].source, vec!["d", "e", "f"]);
        assert_eq!(c.pairs[0].domain, "ted");
    }

    #[test]
    fn load_corpus_mismatched_lines() {
        let dir = tempfile::tempdir().unwrap();
        let s = write_lines(dir.path(), "a.src", &["a", "b", "c", "d", "e"]);
        let t = write_lines(dir.path(), "a.tgt", &["1", "2", "3", "4"]);
        assert!(matches!(
            load_corpus(&s, &t, "d"),
            Err(CorpusError::LineCountMismatch { .. })
        ));
    }

    #[test]
    fn load_corpus_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let s = write_lines(dir.path(), "a.src", &[]);
        let t = write_lines(dir.path(), "a.tgt", &["x"]);
        assert!(matches!(
            load_corpus(&s, &t, "d"),
            Err(CorpusError::EmptyFile(_))
        ));
    }

    #[test]
    fn load_corpus_bad_encoding() {
        let dir = tempfile::tempdir().unwrap();
        let s = dir.path().join("bad.src");
        fs::write(&s, [0xff, 0xfe, 0x41]).unwrap();
        let t = write_lines(dir.path(), "a.tgt", &["x"]);
        assert!(matches!(
            load_corpus(&s, &t, "d"),
            Err(CorpusError::EncodingError(_))
        ));
    }

    #[test]
    fn filter_boundary() {
        let mk = |n: usize| (0..n).map(|i| format!("t{i}")).collect::<Vec<_>>().join(" ");
        let c = corpus(
            &[
                (mk(79).as_str(), "a b"),
                (mk(80).as_str(), "a b"),
                (mk(81).as_str(), "a b"),
            ],
            "d",
        );
        assert_eq!(filter_by_length(&c, 80).pairs.len(), 2);
    }

    #[test]
    fn filter_checks_both_sides() {
        let long = (0..81).map(|i| format!("t{i}")).collect::<Vec<_>>().join(" ");
        let c = corpus(&[("a b c", long.as_str())], "d");
        assert!(filter_by_length(&c, 80).pairs.is_empty());
    }

    #[test]
    fn filter_degenerate_bound() {
        let c = corpus(&[("a b", "x y"), ("c d e", "z w")], "d");
        assert!(filter_by_length(&c, 1).pairs.is_empty());
    }

    #[test]
    fn filter_idempotent() {
        let c = corpus(&[("a", "x"), ("a b c", "x y z"), ("a b", "x")], "d");
        let once = filter_by_length(&c, 2);
        let twice = filter_by_length(&once, 2);
        assert_eq!(once.pairs, twice.pairs);
    }

    #[test]
    fn inject_tags_prepends_once() {
        let c = corpus(&[("ni hao", "hello")], "iwslt");
        let tagged = inject_tags(&c).unwrap();
        assert_eq!(tagged.pairs[0].source, vec!["<2iwslt>", "ni", "hao"]);
        assert_eq!(tagged.pairs[0].target, vec!["hello"]);
        assert!(matches!(
            inject_tags(&tagged),
            Err(CorpusError::AlreadyTagged(_))
        ));
    }

    #[test]
    fn inject_tags_distinct_domains() {
        let a = inject_tags(&corpus(&[("s", "t")], "ntcir")).unwrap();
        let b = inject_tags(&corpus(&[("s", "t")], "iwslt")).unwrap();
        assert_eq!(a.pairs[0].source[0], "<2ntcir>");
        assert_eq!(b.pairs[0].source[0], "<2iwslt>");
    }

    #[test]
    fn oversample_exact_division() {
        let pairs: Vec<(String, String)> =
            (0..100).map(|i| (format!("s{i}"), format!("t{i}"))).collect();
        let refs: Vec<(&str, &str)> = pairs.iter().map(|(s, t)| (s.as_str(), t.as_str())).collect();
        let c = corpus(&refs, "d");
        let o = oversample(&c, 1000, 7).unwrap();
        assert_eq!(o.pairs.len(), 1000);
        // exact division: each pair appears exactly 10 times
        let count = o.pairs.iter().filter(|p| p.source == vec!["s0"]).count();
        assert_eq!(count, 10);
    }

    #[test]
    fn oversample_with_remainder() {
        let pairs: Vec<(String, String)> =
            (0..300).map(|i| (format!("s{i}"), format!("t{i}"))).collect();
        let refs: Vec<(&str, &str)> = pairs.iter().map(|(s, t)| (s.as_str(), t.as_str())).collect();
        let c = corpus(&refs, "d");
        let o = oversample(&c, 1000, 7).unwrap();
        assert_eq!(o.pairs.len(), 1000);
        // remainder sampled without replacement: every pair appears 3 or 4 times
        for i in 0..300 {
            let s = format!("s{i}");
            let count = o.pairs.iter().filter(|p| p.source[0] == s).count();
            assert!(count == 3 || count == 4, "pair {i} appears {count} times");
        }
    }

    #[test]
    fn oversample_deterministic() {
        let c = corpus(&[("a", "1"), ("b", "2"), ("c", "3")], "d");
        let x = oversample(&c, 10, 42).unwrap();
        let y = oversample(&c, 10, 42).unwrap();
        assert_eq!(x.pairs, y.pairs);
    }

    #[test]
    fn oversample_target_too_small() {
        let c = corpus(&[("a", "1"), ("b", "2")], "d");
        assert!(matches!(
            oversample(&c, 1, 0),
            Err(CorpusError::TargetTooSmall { .. })
        ));
    }

    #[test]
    fn mix_preserves_multiset() {
        let a = corpus(&[("a", "1"), ("b", "2")], "d1");
        let b = corpus(&[("c", "3")], "d2");
        let m = mix(&a, &b, 5);
        assert_eq!(m.pairs.len(), 3);
        let mut sources: Vec<String> = m.pairs.iter().map(|p| p.source[0].clone()).collect();
        sources.sort();
        assert_eq!(sources, vec!["a", "b", "c"]);
        assert_eq!(mix(&a, &b, 5).pairs, m.pairs);
    }

    #[test]
    fn mix_with_empty() {
        let a = corpus(&[("a", "1"), ("b", "2"), ("c", "3")], "d");
        let empty = ParallelCorpus::default();
        let m = mix(&a, &empty, 9);
        assert_eq!(m.pairs.len(), 3);
    }

    #[test]
    fn vocabulary_frequency_ranking_and_cap() {
        let c = corpus(&[("a a a b b c", "x")], "d");
        let v = build_vocabulary(&[&c], Side::Source, 6, VocabPolicy::Mixed).unwrap();
        assert_eq!(v.id_to_token, vec!["<pad>", "<bos>", "<eos>", "<unk>", "a", "b"]);
        assert_eq!(v.id("c"), UNK);
    }

    #[test]
    fn vocabulary_tag_forced_inclusion() {
        let c = inject_tags(&corpus(&[("a b", "x")], "iwslt")).unwrap();
        let v = build_vocabulary(&[&c], Side::Source, 100, VocabPolicy::Mixed).unwrap();
        assert!(v.token_to_id.contains_key("<2iwslt>"));
        assert_eq!(v.id("<2iwslt>"), 4);
    }

    #[test]
    fn vocabulary_lexicographic_tie_break() {
        let c = corpus(&[("y x y x", "t")], "d");
        let v = build_vocabulary(&[&c], Side::Source, 6, VocabPolicy::Mixed).unwrap();
        assert_eq!(v.token(4), "x");
        assert_eq!(v.token(5), "y");
    }

    #[test]
    fn vocabulary_cap_too_small() {
        let c = inject_tags(&corpus(&[("a", "x")], "d")).unwrap();
        assert!(matches!(
            build_vocabulary(&[&c], Side::Source, 5, VocabPolicy::Mixed),
            Err(CorpusError::CapTooSmall { .. })
        ));
    }

    #[test]
    fn vocabulary_shuffle_invariant() {
        let a = corpus(&[("a b c", "x"), ("b c d", "y"), ("c d e", "z")], "d1");
        let shuffled = mix(&a, &ParallelCorpus::default(), 13);
        let v1 = build_vocabulary(&[&a], Side::Source, 20, VocabPolicy::Mixed).unwrap();
        let v2 = build_vocabulary(&[&shuffled], Side::Source, 20, VocabPolicy::Mixed).unwrap();
        assert_eq!(v1.id_to_token, v2.id_to_token);
    }

    #[test]
    fn oversample_equalizes_domains() {
        let big: Vec<(String, String)> =
            (0..1000).map(|i| (format!("o{i}"), format!("t{i}"))).collect();
        let big_refs: Vec<(&str, &str)> = big.iter().map(|(s, t)| (s.as_str(), t.as_str())).collect();
        let out = corpus(&big_refs, "out");
        let small: Vec<(String, String)> =
            (0..77).map(|i| (format!("i{i}"), format!("t{i}"))).collect();
        let small_refs: Vec<(&str, &str)> =
            small.iter().map(|(s, t)| (s.as_str(), t.as_str())).collect();
        let ind = corpus(&small_refs, "in");
        let o = oversample(&ind, out.pairs.len(), 3).unwrap();
        let m = mix(&out, &o, 3);
        let n_in = m.pairs.iter().filter(|p| p.domain == "in").count();
        let n_out = m.pairs.iter().filter(|p| p.domain == "out").count();
        assert_eq!(n_in, n_out);
    }

    #[test]
    fn tag_shapes() {
        assert!(is_domain_tag("<2iwslt>"));
        assert!(is_domain_tag("<2a-b_1>"));
        assert!(!is_domain_tag("<2>"));
        assert!(!is_domain_tag("<2IWSLT>"));
        assert!(!is_domain_tag("iwslt"));
    }
}
