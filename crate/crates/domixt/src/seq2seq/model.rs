//! Model parameters, the unrolled training graph, and the incremental
//! decoding session the beam search drives.

use indexmap::IndexMap;
use ndarray::Array2;
use rand::{distributions::Uniform, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{BOS, EOS, PAD};
use crate::nncore::{real, Graph, NodeId, Real, Tensor};

#[derive(Debug, Error)]
pub enum Seq2SeqError {
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    IdOutOfRange { id: usize, vocab: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("ensemble members must share hyperparameters")]
    HyperParamMismatch,
}

/// Architecture and training hyperparameters. The paper preset keeps the
/// published dimensions; the desk preset is small enough to train on a CPU.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub attn_dim: usize,
    pub maxout_units: usize,
    pub lstm_layers: usize,
    pub dropout_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_len: usize,
    pub beam_size: usize,
}

impl HyperParams {
    pub fn paper() -> Self {
        HyperParams {
            src_vocab: 32_000,
            tgt_vocab: 32_000,
            embed_dim: 620,
            hidden_dim: 1000,
            attn_dim: 1000,
            maxout_units: 500,
            lstm_layers: 2,
            dropout_rate: 0.20,
            weight_decay: 1e-6,
            batch_size: 64,
            max_len: 80,
            beam_size: 100,
        }
    }

    pub fn desk() -> Self {
        HyperParams {
            src_vocab: 2_000,
            tgt_vocab: 2_000,
            embed_dim: 64,
            hidden_dim: 128,
            attn_dim: 128,
            maxout_units: 64,
            lstm_layers: 2,
            dropout_rate: 0.20,
            weight_decay: 1e-6,
            batch_size: 32,
            max_len: 80,
            beam_size: 8,
        }
    }

    /// Named tensor shapes, derivable from the hyperparameters alone.
    pub fn shapes(&self) -> IndexMap<String, (usize, usize)> {
        let (e, h, a, mu) = (self.embed_dim, self.hidden_dim, self.attn_dim, self.maxout_units);
        let mut s = IndexMap::new();
        s.insert("src_embed".to_string(), (self.src_vocab, e));
        s.insert("tgt_embed".to_string(), (self.tgt_vocab, e));
        for side in ["enc", "dec"] {
            for l in 0..self.lstm_layers {
                let in_dim = if l == 0 { e } else { h };
                s.insert(format!("{side}_l{l}_wx"), (in_dim, 4 * h));
                s.insert(format!("{side}_l{l}_wh"), (h, 4 * h));
                s.insert(format!("{side}_l{l}_b"), (1, 4 * h));
            }
        }
        s.insert("attn_q".to_string(), (h, a));
        s.insert("attn_k".to_string(), (h, a));
        s.insert("maxout_w".to_string(), (2 * h, 2 * mu));
        s.insert("maxout_b".to_string(), (1, 2 * mu));
        s.insert("out_w".to_string(), (mu, self.tgt_vocab));
        s.insert("out_b".to_string(), (1, self.tgt_vocab));
        s
    }
}

/// Named tensor collection; the object checkpoints serialize.
#[derive(Debug, Clone)]
pub struct ModelParams<R: Real> {
    pub tensors: IndexMap<String, Tensor<R>>,
}

impl<R: Real> ModelParams<R> {
    /// Seeded uniform(-0.1, 0.1) initialization.
    pub fn init(hp: &HyperParams, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Uniform::new(real::<R>(-0.1), real::<R>(0.1));
        let tensors = hp
            .shapes()
            .into_iter()
            .map(|(name, (r, c))| (name, Array2::from_shape_fn((r, c), |_| rng.sample(&dist))))
            .collect();
        ModelParams { tensors }
    }
}

/// A model: hyperparameters plus parameter tensors.
#[derive(Debug, Clone)]
pub struct Seq2Seq<R: Real> {
    pub hp: HyperParams,
    pub params: ModelParams<R>,
}

/// Parameter tensors bound into a graph as leaves.
pub(crate) struct Binding {
    ids: IndexMap<String, NodeId>,
}

impl Binding {
    pub(crate) fn get(&self, name: &str) -> NodeId {
        *self.ids.get(name).unwrap_or_else(|| panic!("no parameter {name}"))
    }
}

/// Encoder output: per-position annotations, their attention keys, the
/// additive attention mask, and the masked final states used to initialize
/// the decoder.
pub(crate) struct EncOut<R: Real> {
    pub anns: Vec<NodeId>,
    pub keys: Vec<NodeId>,
    pub attn_mask: Tensor<R>,
    pub h_final: Vec<NodeId>,
    pub c_final: Vec<NodeId>,
}

/// Per-layer decoder LSTM state.
#[derive(Clone)]
pub(crate) struct DecState {
    pub h: Vec<NodeId>,
    pub c: Vec<NodeId>,
}

const NEG_MASK: f64 = -1e9;

impl<R: Real> Seq2Seq<R> {
    pub fn new(hp: HyperParams, seed: u64) -> Self {
        Seq2Seq {
            hp,
            params: ModelParams::init(&hp, seed),
        }
    }

    pub(crate) fn bind(&self, g: &mut Graph<R>) -> Binding {
        let ids = self
            .params
            .tensors
            .iter()
            .map(|(name, t)| (name.clone(), g.leaf(t.clone())))
            .collect();
        Binding { ids }
    }

    fn check_ids(&self, ids: &[usize], vocab: usize) -> Result<(), Seq2SeqError> {
        for &id in ids {
            if id >= vocab {
                return Err(Seq2SeqError::IdOutOfRange { id, vocab });
            }
        }
        Ok(())
    }

    fn lstm_cell(
        &self,
        g: &mut Graph<R>,
        ctx: &Binding,
        side: &str,
        layer: usize,
        x: NodeId,
        h: NodeId,
        c: NodeId,
    ) -> (NodeId, NodeId) {
        let hdim = self.hp.hidden_dim;
        let wx = ctx.get(&format!("{side}_l{layer}_wx"));
        let wh = ctx.get(&format!("{side}_l{layer}_wh"));
        let b = ctx.get(&format!("{side}_l{layer}_b"));
        let xz = g.matmul(x, wx);
        let hz = g.matmul(h, wh);
        let zsum = g.add(xz, hz);
        let z = g.add_bias(zsum, b);
        let zi = g.slice_cols(z, 0, hdim);
        let zf = g.slice_cols(z, hdim, 2 * hdim);
        let zo = g.slice_cols(z, 2 * hdim, 3 * hdim);
        let zu = g.slice_cols(z, 3 * hdim, 4 * hdim);
        let i = g.sigmoid(zi);
        let f = g.sigmoid(zf);
        let o = g.sigmoid(zo);
        let u = g.tanh(zu);
        let fc = g.mul(f, c);
        let iu = g.mul(i, u);
        let c_new = g.add(fc, iu);
        let tc = g.tanh(c_new);
        let h_new = g.mul(o, tc);
        (h_new, c_new)
    }

    /// Run the encoder over a padded batch. `srcs` are unpadded id sequences.
    pub(crate) fn encode_batch(
        &self,
        g: &mut Graph<R>,
        ctx: &Binding,
        srcs: &[&[usize]],
    ) -> Result<EncOut<R>, Seq2SeqError> {
        let hp = &self.hp;
        for s in srcs {
            self.check_ids(s, hp.src_vocab)?;
        }
        let b = srcs.len();
        let t_max = srcs.iter().map(|s| s.len()).max().unwrap_or(0);
        assert!(b > 0 && t_max > 0, "encoder needs nonempty input");
        let hdim = hp.hidden_dim;

        let zero = g.leaf(Array2::zeros((b, hdim)));
        let mut h: Vec<NodeId> = vec![zero; hp.lstm_layers];
        let mut c: Vec<NodeId> = vec![zero; hp.lstm_layers];
        let mut anns = Vec::with_capacity(t_max);
        let mut keys = Vec::with_capacity(t_max);
        let mut attn_mask = Array2::zeros((b, t_max));

        let embed = ctx.get("src_embed");
        let attn_k = ctx.get("attn_k");
        for t in 0..t_max {
            let ids: Vec<usize> = srcs
                .iter()
                .map(|s| if t < s.len() { s[t] } else { PAD })
                .collect();
            let x_t = g.rows(embed, &ids);
            // valid-position mask keeps the state of finished sequences frozen
            let mut m = Array2::zeros((b, hdim));
            let mut m_inv = Array2::zeros((b, hdim));
            for (r, s) in srcs.iter().enumerate() {
                let (v, vi) = if t < s.len() { (R::one(), R::zero()) } else { (R::zero(), R::one()) };
                m.row_mut(r).fill(v);
                m_inv.row_mut(r).fill(vi);
                if t >= s.len() {
                    attn_mask[(r, t)] = real(NEG_MASK);
                }
            }
            let mut input = x_t;
            for l in 0..hp.lstm_layers {
                if l > 0 {
                    input = g.dropout(input, hp.dropout_rate);
                }
                let (h_new, c_new) = self.lstm_cell(g, ctx, "enc", l, input, h[l], c[l]);
                let hk = g.mul_const(h_new, m.clone());
                let hp_ = g.mul_const(h[l], m_inv.clone());
                h[l] = g.add(hk, hp_);
                let ck = g.mul_const(c_new, m.clone());
                let cp = g.mul_const(c[l], m_inv.clone());
                c[l] = g.add(ck, cp);
                input = h[l];
            }
            let ann = h[hp.lstm_layers - 1];
            anns.push(ann);
            keys.push(g.matmul(ann, attn_k));
        }

        Ok(EncOut {
            anns,
            keys,
            attn_mask,
            h_final: h,
            c_final: c,
        })
    }

    /// One decoder step over a batch: previous target tokens in, next-token
    /// logits, attention weights, and the new state out.
    pub(crate) fn decode_step_graph(
        &self,
        g: &mut Graph<R>,
        ctx: &Binding,
        enc: &EncOut<R>,
        prev_ids: &[usize],
        state: &DecState,
    ) -> Result<(NodeId, NodeId, DecState), Seq2SeqError> {
        let hp = &self.hp;
        self.check_ids(prev_ids, hp.tgt_vocab)?;
        let x = {
            let embed = ctx.get("tgt_embed");
            g.rows(embed, prev_ids)
        };
        let mut h = state.h.clone();
        let mut c = state.c.clone();
        let mut input = x;
        for l in 0..hp.lstm_layers {
            if l > 0 {
                input = g.dropout(input, hp.dropout_rate);
            }
            let (h_new, c_new) = self.lstm_cell(g, ctx, "dec", l, input, h[l], c[l]);
            h[l] = h_new;
            c[l] = c_new;
            input = h[l];
        }
        let h_top = h[hp.lstm_layers - 1];

        // global attention over encoder annotations
        let attn_q = ctx.get("attn_q");
        let q = g.matmul(h_top, attn_q);
        let scores: Vec<NodeId> = enc.keys.iter().map(|&k| g.row_dot(q, k)).collect();
        let score_mat = g.concat_cols(&scores);
        let masked = g.add_const(score_mat, enc.attn_mask.clone());
        let alpha = g.softmax_rows(masked);
        let mut context: Option<NodeId> = None;
        for (j, &ann) in enc.anns.iter().enumerate() {
            let w = g.slice_cols(alpha, j, j + 1);
            let part = g.mul_col_broadcast(w, ann);
            context = Some(match context {
                Some(acc) => g.add(acc, part),
                None => part,
            });
        }
        let context = context.expect("nonempty source");

        let hc = g.concat_cols(&[h_top, context]);
        let hc = g.dropout(hc, hp.dropout_rate);
        let maxout_w = ctx.get("maxout_w");
        let maxout_b = ctx.get("maxout_b");
        let pre = g.matmul(hc, maxout_w);
        let pre = g.add_bias(pre, maxout_b);
        let mo = g.max_halves(pre);
        let out_w = ctx.get("out_w");
        let out_b = ctx.get("out_b");
        let logits = g.matmul(mo, out_w);
        let logits = g.add_bias(logits, out_b);

        Ok((logits, alpha, DecState { h, c }))
    }

    /// Build the teacher-forced loss graph over a batch of (source, target)
    /// id sequences; returns the mean per-token negative log likelihood node.
    pub(crate) fn batch_loss_graph(
        &self,
        g: &mut Graph<R>,
        ctx: &Binding,
        batch: &[(Vec<usize>, Vec<usize>)],
    ) -> Result<NodeId, Seq2SeqError> {
        if batch.is_empty() {
            return Err(Seq2SeqError::EmptyBatch);
        }
        for (_, tgt) in batch {
            self.check_ids(tgt, self.hp.tgt_vocab)?;
        }
        let srcs: Vec<&[usize]> = batch.iter().map(|(s, _)| s.as_slice()).collect();
        let enc = self.encode_batch(g, ctx, &srcs)?;

        let t_out = batch.iter().map(|(_, t)| t.len() + 1).max().unwrap();
        let total_tokens: usize = batch.iter().map(|(_, t)| t.len() + 1).sum();
        let mut state = DecState {
            h: enc.h_final.clone(),
            c: enc.c_final.clone(),
        };
        let mut loss_sum: Option<NodeId> = None;
        for t in 0..t_out {
            let prev: Vec<usize> = batch
                .iter()
                .map(|(_, tgt)| if t == 0 { BOS } else if t - 1 < tgt.len() { tgt[t - 1] } else { PAD })
                .collect();
            let targets: Vec<usize> = batch
                .iter()
                .map(|(_, tgt)| {
                    if t < tgt.len() {
                        tgt[t]
                    } else if t == tgt.len() {
                        EOS
                    } else {
                        PAD
                    }
                })
                .collect();
            let weights: Vec<R> = batch
                .iter()
                .map(|(_, tgt)| if t <= tgt.len() { R::one() } else { R::zero() })
                .collect();
            let (logits, _, new_state) = self.decode_step_graph(g, ctx, &enc, &prev, &state)?;
            state = new_state;
            let step_loss = g.softmax_xent_sum(logits, &targets, &weights);
            loss_sum = Some(match loss_sum {
                Some(acc) => g.add(acc, step_loss),
                None => step_loss,
            });
        }
        let total = loss_sum.expect("at least one step");
        Ok(g.scale(total, real::<R>(1.0) / real::<R>(total_tokens as f64)))
    }

    /// Mean per-token negative log likelihood in evaluation mode.
    pub fn batch_loss(&self, batch: &[(Vec<usize>, Vec<usize>)]) -> Result<R, Seq2SeqError> {
        let mut g = Graph::eval();
        let ctx = self.bind(&mut g);
        let loss = self.batch_loss_graph(&mut g, &ctx, batch)?;
        Ok(g.scalar(loss))
    }

    /// Training-mode loss and parameter gradients for one minibatch.
    pub fn loss_and_grads(
        &self,
        batch: &[(Vec<usize>, Vec<usize>)],
        dropout_seed: u64,
    ) -> Result<(R, IndexMap<String, Tensor<R>>), Seq2SeqError> {
        let mut g = Graph::train(dropout_seed);
        let ctx = self.bind(&mut g);
        let loss = self.batch_loss_graph(&mut g, &ctx, batch)?;
        let value = g.scalar(loss);
        let mut grads_by_node = g.backward(loss);
        let grads = ctx
            .ids
            .iter()
            .filter_map(|(name, &id)| grads_by_node.take(id).map(|t| (name.clone(), t)))
            .collect();
        Ok((value, grads))
    }

    /// Per-position annotation vectors for one source sentence (eval mode),
    /// one row per source position.
    pub fn encode(&self, src: &[usize]) -> Result<Tensor<R>, Seq2SeqError> {
        let mut g = Graph::eval();
        let ctx = self.bind(&mut g);
        let enc = self.encode_batch(&mut g, &ctx, &[src])?;
        let mut out = Array2::zeros((enc.anns.len(), self.hp.hidden_dim));
        for (t, &a) in enc.anns.iter().enumerate() {
            out.row_mut(t).assign(&g.value(a).row(0));
        }
        Ok(out)
    }
}

/// Incremental decoding session: encoder run once, decoder steps appended to
/// one eval-mode graph. All rows share the same source sentence.
pub struct DecoderSession<'m, R: Real> {
    model: &'m Seq2Seq<R>,
    g: Graph<R>,
    ctx: Binding,
    enc: EncOut<R>,
    state: DecState,
}

impl<'m, R: Real> DecoderSession<'m, R> {
    /// `rows` parallel hypotheses over a single source sentence.
    pub fn start(model: &'m Seq2Seq<R>, src: &[usize], rows: usize) -> Result<Self, Seq2SeqError> {
        assert!(rows > 0);
        let mut g = Graph::eval();
        let ctx = model.bind(&mut g);
        let srcs: Vec<&[usize]> = (0..rows).map(|_| src).collect();
        let enc = model.encode_batch(&mut g, &ctx, &srcs)?;
        let state = DecState {
            h: enc.h_final.clone(),
            c: enc.c_final.clone(),
        };
        Ok(DecoderSession { model, g, ctx, enc, state })
    }

    pub fn rows(&self) -> usize {
        self.g.value(self.state.h[0]).nrows()
    }

    /// Feed previous tokens (one per row); returns next-token probabilities
    /// and attention weights, one row each.
    pub fn step(&mut self, prev_ids: &[usize]) -> Result<(Tensor<R>, Tensor<R>), Seq2SeqError> {
        assert_eq!(prev_ids.len(), self.rows(), "one previous token per row");
        let (logits, alpha, new_state) =
            self.model
                .decode_step_graph(&mut self.g, &self.ctx, &self.enc, prev_ids, &self.state)?;
        self.state = new_state;
        let probs = self.g.softmax_rows(logits);
        Ok((self.g.value(probs).clone(), self.g.value(alpha).clone()))
    }

    /// Reorder hypothesis rows after beam pruning; `parents[i]` is the row the
    /// new row i continues from.
    pub fn reorder(&mut self, parents: &[usize]) {
        assert_eq!(parents.len(), self.rows(), "row count is fixed per session");
        let layers = self.state.h.len();
        for l in 0..layers {
            self.state.h[l] = self.g.rows(self.state.h[l], parents);
            self.state.c[l] = self.g.rows(self.state.c[l], parents);
        }
    }
}
