//! Greedy, beam, and checkpoint-ensemble decoding. Finished hypotheses are
//! compared by length-normalized log probability.

use crate::corpus::{BOS, EOS};
use crate::nncore::{Real, Tensor};

use super::model::{DecoderSession, Seq2Seq, Seq2SeqError};

/// A (partial) decoder output: token ids, accumulated log probability, and
/// whether the hypothesis ended with EOS.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Sum of token log probabilities divided by length.
    pub fn normalized_score(&self) -> f64 {
        if self.tokens.is_empty() {
            f64::NEG_INFINITY
        } else {
            self.log_prob / self.tokens.len() as f64
        }
    }

    /// Token ids without the terminating EOS.
    pub fn surface(&self) -> &[usize] {
        match self.tokens.split_last() {
            Some((&last, rest)) if last == EOS => rest,
            _ => &self.tokens,
        }
    }
}

/// Default decoding length bound.
pub fn default_max_out_len(source_len: usize) -> usize {
    2 * source_len + 5
}

/// One decoding step over fixed parallel rows: previous tokens in,
/// per-row next-token probabilities out.
trait StepSource<R: Real> {
    fn rows(&self) -> usize;
    fn step(&mut self, prev: &[usize]) -> Result<Tensor<R>, Seq2SeqError>;
    fn reorder(&mut self, parents: &[usize]);
}

struct SingleSource<'m, R: Real>(DecoderSession<'m, R>);

impl<R: Real> StepSource<R> for SingleSource<'_, R> {
    fn rows(&self) -> usize {
        self.0.rows()
    }
    fn step(&mut self, prev: &[usize]) -> Result<Tensor<R>, Seq2SeqError> {
        Ok(self.0.step(prev)?.0)
    }
    fn reorder(&mut self, parents: &[usize]) {
        self.0.reorder(parents);
    }
}

/// Ensemble: the per-step distribution is the arithmetic mean of the member
/// distributions; each member keeps its own decoder state.
struct EnsembleSource<'m, R: Real> {
    members: Vec<DecoderSession<'m, R>>,
}

impl<R: Real> StepSource<R> for EnsembleSource<'_, R> {
    fn rows(&self) -> usize {
        self.members[0].rows()
    }
    fn step(&mut self, prev: &[usize]) -> Result<Tensor<R>, Seq2SeqError> {
        let mut acc: Option<Tensor<R>> = None;
        for m in &mut self.members {
            let (p, _) = m.step(prev)?;
            acc = Some(match acc {
                Some(a) => a + &p,
                None => p,
            });
        }
        let k = crate::nncore::real::<R>(self.members.len() as f64);
        Ok(acc.expect("nonempty ensemble").mapv(|x| x / k))
    }
    fn reorder(&mut self, parents: &[usize]) {
        for m in &mut self.members {
            m.reorder(parents);
        }
    }
}

#[derive(Clone)]
struct Beam {
    tokens: Vec<usize>,
    log_prob: f64,
    row: usize,
}

fn beam_core<R: Real>(
    source: &mut dyn StepSource<R>,
    beam_size: usize,
    max_out_len: usize,
) -> Result<Hypothesis, Seq2SeqError> {
    assert!(beam_size >= 1);
    assert!(max_out_len >= 1);
    let rows = source.rows();
    debug_assert_eq!(rows, beam_size);

    let mut live = vec![Beam {
        tokens: Vec::new(),
        log_prob: 0.0,
        row: 0,
    }];
    let mut pool: Vec<Hypothesis> = Vec::new();

    for _step in 0..max_out_len {
        let prev: Vec<usize> = (0..rows)
            .map(|r| {
                live.get(r)
                    .map(|b| b.tokens.last().copied().unwrap_or(BOS))
                    .unwrap_or(BOS)
            })
            .collect();
        let probs = source.step(&prev)?;
        let vocab = probs.ncols();

        // all single-token extensions of the live beams, ranked by raw score
        let mut cands: Vec<(f64, usize, usize)> = Vec::with_capacity(live.len() * vocab);
        for (i, b) in live.iter().enumerate() {
            for v in 0..vocab {
                let lp = probs[(i, v)].to_f64().max(1e-300).ln();
                cands.push((b.log_prob + lp, i, v));
            }
        }
        cands.sort_unstable_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        cands.truncate(beam_size);

        let mut next_live: Vec<Beam> = Vec::with_capacity(beam_size);
        let mut parents = vec![0usize; rows];
        for &(score, i, v) in &cands {
            let mut tokens = live[i].tokens.clone();
            tokens.push(v);
            if v == EOS {
                pool.push(Hypothesis {
                    tokens,
                    log_prob: score,
                    finished: true,
                });
            } else {
                parents[next_live.len()] = live[i].row;
                next_live.push(Beam {
                    tokens,
                    log_prob: score,
                    row: next_live.len(),
                });
            }
        }
        if next_live.is_empty() {
            break;
        }
        // rows beyond the live count carry on as copies of row 0
        for p in parents.iter_mut().skip(next_live.len()) {
            *p = 0;
        }
        source.reorder(&parents);
        for (i, b) in next_live.iter_mut().enumerate() {
            b.row = i;
        }
        live = next_live;
    }

    // length bound reached: remaining live beams finish without EOS
    for b in live {
        pool.push(Hypothesis {
            tokens: b.tokens,
            log_prob: b.log_prob,
            finished: false,
        });
    }
    Ok(pool
        .into_iter()
        .max_by(|a, b| a.normalized_score().partial_cmp(&b.normalized_score()).unwrap())
        .expect("at least one hypothesis"))
}

/// Beam search over one source sentence. `max_out_len` defaults to
/// 2 * source length + 5.
pub fn beam_search<R: Real>(
    model: &Seq2Seq<R>,
    src: &[usize],
    beam_size: usize,
    max_out_len: Option<usize>,
) -> Result<Hypothesis, Seq2SeqError> {
    let max_len = max_out_len.unwrap_or_else(|| default_max_out_len(src.len()));
    let sess = DecoderSession::start(model, src, beam_size)?;
    let mut source = SingleSource(sess);
    beam_core(&mut source, beam_size, max_len)
}

/// Beam search with beam size 1.
pub fn greedy_decode<R: Real>(model: &Seq2Seq<R>, src: &[usize]) -> Result<Hypothesis, Seq2SeqError> {
    beam_search(model, src, 1, None)
}

/// Beam search over the arithmetic mean of the member distributions.
pub fn ensemble_decode<R: Real>(
    members: &[&Seq2Seq<R>],
    src: &[usize],
    beam_size: usize,
    max_out_len: Option<usize>,
) -> Result<Hypothesis, Seq2SeqError> {
    assert!(!members.is_empty());
    if members.iter().any(|m| m.hp != members[0].hp) {
        return Err(Seq2SeqError::HyperParamMismatch);
    }
    let max_len = max_out_len.unwrap_or_else(|| default_max_out_len(src.len()));
    let sessions = members
        .iter()
        .map(|m| DecoderSession::start(m, src, beam_size))
        .collect::<Result<Vec<_>, _>>()?;
    let mut source = EnsembleSource { members: sessions };
    beam_core(&mut source, beam_size, max_len)
}
