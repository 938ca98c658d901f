//! Verify analytic gradients against central finite differences at f64, for
//! a hand-built graph and for the full sequence-to-sequence batch loss.

use domixt::nncore::gradcheck::max_relative_error;
use domixt::nncore::Graph;
use domixt::seq2seq::{HyperParams, Seq2Seq};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    // a small composite graph: tanh(x W1) W2 -> softmax cross-entropy
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut randn = |r: usize, c: usize| Array2::from_shape_fn((r, c), |_| rng.gen_range(-0.9..0.9));
    let inputs = [randn(3, 4), randn(4, 5), randn(5, 6)];
    let build = |g: &mut Graph<f64>, ids: &[domixt::nncore::NodeId]| {
        let h = g.matmul(ids[0], ids[1]);
        let h = g.tanh(h);
        let logits = g.matmul(h, ids[2]);
        g.softmax_xent_sum(logits, &[1, 4, 2], &[1.0, 1.0, 0.5])
    };
    let err = max_relative_error(&inputs, &build, 1e-5);
    println!("composite graph: max relative error {err:.2e}");
    assert!(err < 1e-6);

    // the full model loss: every parameter tensor of a tiny model
    let hp = HyperParams {
        src_vocab: 7,
        tgt_vocab: 7,
        embed_dim: 4,
        hidden_dim: 4,
        attn_dim: 4,
        maxout_units: 4,
        lstm_layers: 2,
        dropout_rate: 0.0,
        weight_decay: 0.0,
        batch_size: 2,
        max_len: 10,
        beam_size: 2,
    };
    let model = Seq2Seq::<f64>::new(hp, 11);
    let batch = vec![(vec![4, 5, 6], vec![5, 4]), (vec![6, 4], vec![6, 6, 5])];
    let (_, grads) = model.loss_and_grads(&batch, 0).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (name, tensor) in model.params.tensors.iter() {
        let analytic = grads
            .get(name)
            .cloned()
            .unwrap_or_else(|| Array2::zeros(tensor.dim()));
        // probe a few entries per tensor to keep runtime short
        for p in [0usize, tensor.len() / 2, tensor.len() - 1] {
            let (r, c) = (p / tensor.ncols(), p % tensor.ncols());
            let probe = |delta: f64| {
                let mut m = model.clone();
                *m.params.tensors.get_mut(name).unwrap().get_mut((r, c)).unwrap() += delta;
                m.batch_loss(&batch).unwrap()
            };
            let numeric = (probe(h) - probe(-h)) / (2.0 * h);
            let a = analytic[(r, c)];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    println!("full batch loss:  max relative error {worst:.2e}");
    assert!(worst < 1e-4);
    println!("gradients verified");
}
