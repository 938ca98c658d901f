//! Beam search, greedy decoding, and checkpoint self-ensembling on a small
//! random model: wider beams never hurt the length-normalized score, and the
//! ensemble of identical models reproduces the single model exactly.

use domixt::seq2seq::{beam_search, ensemble_decode, greedy_decode, HyperParams, Seq2Seq};

fn main() {
    let hp = HyperParams {
        src_vocab: 12,
        tgt_vocab: 12,
        embed_dim: 8,
        hidden_dim: 8,
        attn_dim: 8,
        maxout_units: 8,
        lstm_layers: 2,
        dropout_rate: 0.0,
        weight_decay: 0.0,
        batch_size: 4,
        max_len: 20,
        beam_size: 4,
    };
    let model = Seq2Seq::<f32>::new(hp, 3);
    let src = vec![4usize, 7, 9, 5];

    let greedy = greedy_decode(&model, &src).unwrap();
    println!(
        "greedy:  tokens {:?}  normalized score {:.4}",
        greedy.surface(),
        greedy.normalized_score()
    );
    for beam in [2, 4, 8] {
        let hyp = beam_search(&model, &src, beam, None).unwrap();
        println!(
            "beam {beam}:  tokens {:?}  normalized score {:.4}",
            hyp.surface(),
            hyp.normalized_score()
        );
        assert!(hyp.normalized_score() >= greedy.normalized_score() - 1e-9);
    }

    // self-ensembling: with three identical members the averaged distribution
    // equals each member's, so the output matches plain beam search
    let members = [&model, &model, &model];
    let ens = ensemble_decode(&members, &src, 4, None).unwrap();
    let single = beam_search(&model, &src, 4, None).unwrap();
    assert_eq!(ens.tokens, single.tokens);
    println!("ensemble of identical members matches single-model beam search");
}
