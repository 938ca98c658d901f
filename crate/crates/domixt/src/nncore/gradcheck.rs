//! Central finite-difference gradient checking at f64. The numeric side only
//! ever calls graph forward construction, so it stays independent of the
//! `backward` implementation it verifies.

use ndarray::Array2;

use super::graph::{Graph, NodeId};

/// Builds a scalar loss from leaf nodes created for each input tensor.
pub type BuildFn<'a> = &'a dyn Fn(&mut Graph<f64>, &[NodeId]) -> NodeId;

fn forward(inputs: &[Array2<f64>], build: BuildFn) -> f64 {
    let mut g = Graph::eval();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = build(&mut g, &ids);
    g.scalar(loss)
}

/// Maximum relative error between analytic and central finite-difference
/// gradients over every entry of every input.
pub fn max_relative_error(inputs: &[Array2<f64>], build: BuildFn, h: f64) -> f64 {
    let mut g = Graph::eval();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = build(&mut g, &ids);
    let grads = g.backward(loss);

    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(ids[k])
            .cloned()
            .unwrap_or_else(|| Array2::zeros(input.dim()));
        for idx in 0..input.len() {
            let (r, c) = (idx / input.ncols(), idx % input.ncols());
            let mut plus = inputs.to_vec();
            plus[k][(r, c)] += h;
            let mut minus = inputs.to_vec();
            minus[k][(r, c)] -= h;
            let numeric = (forward(&plus, build) - forward(&minus, build)) / (2.0 * h);
            let a = analytic[(r, c)];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.gen_range(-0.9..0.9))
    }

    #[test]
    fn random_small_graph_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let a = randn(&mut rng, 2, 3);
            let w = randn(&mut rng, 3, 4);
            let b = randn(&mut rng, 1, 4);
            let err = max_relative_error(
                &[a, w, b],
                &|g, ids| {
                    let h = g.matmul(ids[0], ids[1]);
                    let hb = g.add_bias(h, ids[2]);
                    let t = g.tanh(hb);
                    let sm = g.softmax_rows(t);
                    g.softmax_xent_sum(sm, &[1, 3], &[1.0, 1.0])
                },
                1e-5,
            );
            assert!(err < 1e-4, "relative error {err}");
        }
    }

    #[test]
    fn max_and_slice_paths_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = randn(&mut rng, 3, 6);
        let y = randn(&mut rng, 3, 3);
        let err = max_relative_error(
            &[x, y],
            &|g, ids| {
                let m = g.max_halves(ids[0]);
                let d = g.row_dot(m, ids[1]);
                let s = g.sigmoid(d);
                let col = g.concat_cols(&[s]);
                let logits = g.concat_cols(&[col, d]);
                g.softmax_xent_sum(logits, &[0, 1, 0], &[1.0, 0.5, 2.0])
            },
            1e-5,
        );
        assert!(err < 1e-4, "relative error {err}");
    }
}
