//! Desk-scale workbench for comparing neural-MT domain-adaptation strategies:
//! fine tuning, tag-based multi-domain training, and mixed fine tuning.
//!
//! The pipeline runs end to end on synthetic two-domain parallel corpora:
//! corpus preparation (filtering, domain tags, oversampling, mixing), subword
//! segmentation with byte pair encoding, staged training of a small attentional
//! LSTM encoder-decoder, checkpoint-ensembled beam decoding, and BLEU evaluation
//! with bootstrap significance testing.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod eval;
pub mod nncore;
pub mod schedules;
pub mod seq2seq;
pub mod subword;
pub mod synthgen;
