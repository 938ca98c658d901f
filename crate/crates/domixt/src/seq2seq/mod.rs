//! Attentional LSTM encoder-decoder: 2-layer LSTMs on both sides, global
//! attention, and a 2-piece maxout output layer, at configurable scale.

pub mod checkpoint;
pub mod decode;
pub mod model;

pub use checkpoint::{Checkpoint, CheckpointError, CheckpointTag};
pub use decode::{beam_search, default_max_out_len, ensemble_decode, greedy_decode, Hypothesis};
pub use model::{DecoderSession, HyperParams, ModelParams, Seq2Seq, Seq2SeqError};
