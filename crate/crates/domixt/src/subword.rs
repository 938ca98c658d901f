//! Byte pair encoding: learn merge rules from token frequency profiles and
//! apply them per word, with the `@@` joiner convention on non-final pieces.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::corpus::{is_domain_tag, ParallelCorpus, Side};

/// End-of-word marker used internally while learning and applying merges.
const EOW: &str = "</w>";

pub const DEFAULT_JOINER: &str = "@@";
pub const MODEL_HEADER: &str = "#version: domixt-bpe-1";

#[derive(Debug, Error)]
pub enum BpeError {
    #[error("empty token frequency profile")]
    EmptyProfile,
    #[error("bad model file {path}: {reason}")]
    BadModelFile { path: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Separate learns one model per profile; joint learns a single model over the
/// union of the source and target profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BpeMode {
    Separate,
    Joint,
}

/// An ordered list of merge rules; earlier rules have higher priority.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeModel {
    pub merges: Vec<(String, String)>,
    pub joiner: String,
    pub num_merges: usize,
}

pub type Profile = HashMap<String, u64>;

/// Token frequency profile of one side of a corpus. Domain tags are excluded:
/// they are atomic and never split.
pub fn profile(corpus: &ParallelCorpus, side: Side) -> Profile {
    let mut p = Profile::new();
    for pair in &corpus.pairs {
        let toks = match side {
            Side::Source => &pair.source,
            Side::Target => &pair.target,
        };
        for t in toks {
            if !is_domain_tag(t) {
                *p.entry(t.clone()).or_insert(0) += 1;
            }
        }
    }
    p
}

/// Sum of two profiles, for joint bilingual training.
pub fn union_profiles(a: &Profile, b: &Profile) -> Profile {
    let mut p = a.clone();
    for (k, v) in b {
        *p.entry(k.clone()).or_insert(0) += v;
    }
    p
}

fn split_word(word: &str) -> Vec<String> {
    let mut syms: Vec<String> = word.chars().map(|c| c.to_string()).collect();
    syms.push(EOW.to_string());
    syms
}

/// Greedy BPE learning: repeatedly merge the most frequent adjacent symbol
/// pair (ties broken lexicographically), stopping early when no pair occurs
/// at least twice.
pub fn learn_bpe(profiles: &[&Profile], num_merges: usize, mode: BpeMode) -> Result<BpeModel, BpeError> {
    let combined: Profile = match mode {
        BpeMode::Joint => {
            let mut p = Profile::new();
            for prof in profiles {
                for (k, v) in prof.iter() {
                    *p.entry(k.clone()).or_insert(0) += v;
                }
            }
            p
        }
        BpeMode::Separate => {
            assert_eq!(profiles.len(), 1, "separate mode learns one model per profile");
            profiles[0].clone()
        }
    };
    if combined.is_empty() || combined.values().all(|&v| v == 0) {
        return Err(BpeError::EmptyProfile);
    }

    let mut words: Vec<(Vec<String>, u64)> = {
        let mut v: Vec<(&String, &u64)> = combined.iter().collect();
        v.sort_unstable_by(|a, b| a.0.cmp(b.0));
        v.into_iter()
            .filter(|(_, &f)| f > 0)
            .map(|(w, &f)| (split_word(w), f))
            .collect()
    };

    let mut merges = Vec::new();
    for _ in 0..num_merges {
        let mut pair_freq: HashMap<(&str, &str), u64> = HashMap::new();
        for (syms, f) in &words {
            for w in syms.windows(2) {
                *pair_freq.entry((w[0].as_str(), w[1].as_str())).or_insert(0) += f;
            }
        }
        let best = pair_freq
            .into_iter()
            .filter(|(_, f)| *f >= 2)
            .min_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let Some(((a, b), _)) = best else { break };
        let rule = (a.to_string(), b.to_string());
        for (syms, _) in &mut words {
            merge_in_place(syms, &rule);
        }
        merges.push(rule);
    }

    Ok(BpeModel {
        merges,
        joiner: DEFAULT_JOINER.to_string(),
        num_merges,
    })
}

fn merge_in_place(syms: &mut Vec<String>, rule: &(String, String)) {
    let mut i = 0;
    while i + 1 < syms.len() {
        if syms[i] == rule.0 && syms[i + 1] == rule.1 {
            let b = syms.remove(i + 1);
            syms[i].push_str(&b);
        }
        i += 1;
    }
}

impl BpeModel {
    fn rank(&self) -> HashMap<(&str, &str), usize> {
        self.merges
            .iter()
            .enumerate()
            .map(|(i, (a, b))| ((a.as_str(), b.as_str()), i))
            .collect()
    }

    /// Split one word into subword pieces, replaying merges in priority order.
    fn encode_word(&self, word: &str, rank: &HashMap<(&str, &str), usize>) -> Vec<String> {
        let mut syms = split_word(word);
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| rank.get(&(w[0].as_str(), w[1].as_str())))
                .min()
                .copied();
            let Some(r) = best else { break };
            let rule = self.merges[r].clone();
            merge_in_place(&mut syms, &rule);
        }
        // externalize: strip the end-of-word marker, join non-final pieces
        if let Some(last) = syms.last_mut() {
            if last == EOW {
                syms.pop();
            } else if let Some(stripped) = last.strip_suffix(EOW) {
                *last = stripped.to_string();
            }
        }
        let n = syms.len();
        syms.into_iter()
            .enumerate()
            .map(|(i, s)| if i + 1 < n { format!("{s}{}", self.joiner) } else { s })
            .collect()
    }

    /// Apply the model to a token sequence. Domain tags pass through unsplit.
    pub fn apply(&self, sentence: &[String]) -> Vec<String> {
        let rank = self.rank();
        let mut cache: HashMap<&str, Vec<String>> = HashMap::new();
        let mut out = Vec::with_capacity(sentence.len());
        for tok in sentence {
            if is_domain_tag(tok) || tok.is_empty() {
                out.push(tok.clone());
                continue;
            }
            let pieces = cache
                .entry(tok.as_str())
                .or_insert_with(|| self.encode_word(tok, &rank));
            out.extend(pieces.iter().cloned());
        }
        out
    }

    /// Apply the model to every source and target sentence of a corpus.
    pub fn apply_corpus(&self, c: &ParallelCorpus) -> ParallelCorpus {
        let rank = self.rank();
        let mut cache: HashMap<String, Vec<String>> = HashMap::new();
        let encode = |toks: &[String], cache: &mut HashMap<String, Vec<String>>| {
            let mut out = Vec::with_capacity(toks.len());
            for tok in toks {
                if is_domain_tag(tok) || tok.is_empty() {
                    out.push(tok.clone());
                    continue;
                }
                if !cache.contains_key(tok) {
                    let pieces = self.encode_word(tok, &rank);
                    cache.insert(tok.clone(), pieces);
                }
                out.extend(cache[tok].iter().cloned());
            }
            out
        };
        ParallelCorpus {
            pairs: c
                .pairs
                .iter()
                .map(|p| crate::corpus::SentencePair {
                    source: encode(&p.source, &mut cache),
                    target: encode(&p.target, &mut cache),
                    domain: p.domain.clone(),
                })
                .collect(),
            name: c.name.clone(),
        }
    }

    /// Model file: header line, then one merge rule per line.
    pub fn save(&self, path: &Path) -> Result<(), BpeError> {
        let mut out = String::from(MODEL_HEADER);
        out.push('\n');
        for (a, b) in &self.merges {
            out.push_str(a);
            out.push(' ');
            out.push_str(b);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| BpeError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Self, BpeError> {
        let text = fs::read_to_string(path).map_err(|e| BpeError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == MODEL_HEADER => {}
            other => {
                return Err(BpeError::BadModelFile {
                    path: path.display().to_string(),
                    reason: format!("bad header {other:?}"),
                })
            }
        }
        let mut merges = Vec::new();
        for (i, line) in lines.enumerate() {
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                    merges.push((a.to_string(), b.to_string()))
                }
                _ => {
                    return Err(BpeError::BadModelFile {
                        path: path.display().to_string(),
                        reason: format!("bad rule on line {}", i + 2),
                    })
                }
            }
        }
        let num_merges = merges.len();
        Ok(BpeModel {
            merges,
            joiner: DEFAULT_JOINER.to_string(),
            num_merges,
        })
    }
}

/// Rejoin subword pieces: each maximal run of joiner-terminated pieces is
/// concatenated with the piece that follows it.
pub fn undo_bpe(sentence: &[String], joiner: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(sentence.len());
    let mut pending = String::new();
    for tok in sentence {
        if let Some(head) = tok.strip_suffix(joiner) {
            // a bare joiner token is not a continuation marker
            if tok.len() > joiner.len() || !pending.is_empty() {
                pending.push_str(head);
                continue;
            }
        }
        if pending.is_empty() {
            out.push(tok.clone());
        } else {
            pending.push_str(tok);
            out.push(std::mem::take(&mut pending));
        }
    }
    if !pending.is_empty() {
        // dangling joiner at end of sentence; emit what we have
        out.push(pending);
    }
    out
}
