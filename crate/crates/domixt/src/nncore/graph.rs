//! Eager tape-based computation graph. Forward values are computed as nodes
//! are pushed; `backward` replays the tape in reverse and accumulates
//! gradients. Shape errors are programming errors and panic.

use ndarray::{s, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{real, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op<R: Real> {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// (n,m) + (1,m), bias broadcast over rows.
    AddBias(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MulConst(NodeId, Tensor<R>),
    AddConst(NodeId),
    Scale(NodeId, R),
    Tanh(NodeId),
    Sigmoid(NodeId),
    SoftmaxRows(NodeId),
    ConcatCols(Vec<NodeId>),
    SliceCols(NodeId, usize, usize),
    /// Row gather; serves as embedding lookup and beam-state reordering.
    Rows(NodeId, Vec<usize>),
    /// (n,2u) -> (n,u), elementwise max of the two column halves.
    MaxHalves(NodeId),
    /// (n,m),(n,m) -> (n,1) per-row dot product.
    RowDot(NodeId, NodeId),
    /// (n,1) column broadcast-multiplied into (n,m).
    MulColBroadcast(NodeId, NodeId),
    /// Mask already folded with the 1/(1-rate) inverted-dropout scale.
    Dropout(NodeId),
    /// Sum over rows of weight_i * nll(softmax(logits_i), target_i) -> (1,1).
    SoftmaxXentSum {
        logits: NodeId,
        targets: Vec<usize>,
        weights: Vec<R>,
    },
}

struct Node<R: Real> {
    value: Tensor<R>,
    op: Op<R>,
    /// Cached intermediates needed by backward (softmax probs, dropout mask).
    aux: Option<Tensor<R>>,
}

pub struct Graph<R: Real> {
    nodes: Vec<Node<R>>,
    train: bool,
    rng: ChaCha8Rng,
}

fn softmax_rows<R: Real>(x: &Tensor<R>) -> Tensor<R> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(R::neg_infinity(), R::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

impl<R: Real> Graph<R> {
    /// Evaluation-mode graph: dropout is the identity.
    pub fn eval() -> Self {
        Graph {
            nodes: Vec::new(),
            train: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// Training-mode graph; the seed drives dropout masks.
    pub fn train(seed: u64) -> Self {
        Graph {
            nodes: Vec::new(),
            train: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<R> {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> R {
        let v = &self.nodes[id.0].value;
        assert_eq!(v.dim(), (1, 1), "scalar() on non-scalar node");
        v[(0, 0)]
    }

    fn push(&mut self, value: Tensor<R>, op: Op<R>, aux: Option<Tensor<R>>) -> NodeId {
        self.nodes.push(Node { value, op, aux });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<R>) -> NodeId {
        self.push(value, Op::Leaf, None)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ar, ac) = self.nodes[a.0].value.dim();
        let (br, bc) = self.nodes[b.0].value.dim();
        assert_eq!(ac, br, "matmul shape mismatch: ({ar},{ac}) x ({br},{bc})");
        let v = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        self.push(v, Op::MatMul(a, b), None)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(
            self.nodes[a.0].value.dim(),
            self.nodes[b.0].value.dim(),
            "add shape mismatch"
        );
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(v, Op::Add(a, b), None)
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let (_, ac) = self.nodes[a.0].value.dim();
        let (br, bc) = self.nodes[bias.0].value.dim();
        assert!(br == 1 && bc == ac, "add_bias shape mismatch");
        let v = &self.nodes[a.0].value + &self.nodes[bias.0].value;
        self.push(v, Op::AddBias(a, bias), None)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(
            self.nodes[a.0].value.dim(),
            self.nodes[b.0].value.dim(),
            "mul shape mismatch"
        );
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(v, Op::Mul(a, b), None)
    }

    pub fn mul_const(&mut self, a: NodeId, c: Tensor<R>) -> NodeId {
        assert_eq!(self.nodes[a.0].value.dim(), c.dim(), "mul_const shape mismatch");
        let v = &self.nodes[a.0].value * &c;
        self.push(v, Op::MulConst(a, c), None)
    }

    pub fn add_const(&mut self, a: NodeId, c: Tensor<R>) -> NodeId {
        assert_eq!(self.nodes[a.0].value.dim(), c.dim(), "add_const shape mismatch");
        let v = &self.nodes[a.0].value + &c;
        self.push(v, Op::AddConst(a), None)
    }

    pub fn scale(&mut self, a: NodeId, s: R) -> NodeId {
        let v = self.nodes[a.0].value.mapv(|x| x * s);
        self.push(v, Op::Scale(a, s), None)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.mapv(R::tanh);
        self.push(v, Op::Tanh(a), None)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let one = R::one();
        let v = self.nodes[a.0].value.mapv(|x| one / (one + (-x).exp()));
        self.push(v, Op::Sigmoid(a), None)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = softmax_rows(&self.nodes[a.0].value);
        self.push(v, Op::SoftmaxRows(a), None)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let n = self.nodes[parts[0].0].value.nrows();
        let total: usize = parts.iter().map(|p| self.nodes[p.0].value.ncols()).sum();
        let mut v = Array2::zeros((n, total));
        let mut off = 0;
        for p in parts {
            let pv = &self.nodes[p.0].value;
            assert_eq!(pv.nrows(), n, "concat_cols row mismatch");
            v.slice_mut(s![.., off..off + pv.ncols()]).assign(pv);
            off += pv.ncols();
        }
        self.push(v, Op::ConcatCols(parts.to_vec()), None)
    }

    pub fn slice_cols(&mut self, a: NodeId, lo: usize, hi: usize) -> NodeId {
        assert!(lo < hi && hi <= self.nodes[a.0].value.ncols(), "slice_cols out of range");
        let v = self.nodes[a.0].value.slice(s![.., lo..hi]).to_owned();
        self.push(v, Op::SliceCols(a, lo, hi), None)
    }

    pub fn rows(&mut self, a: NodeId, ids: &[usize]) -> NodeId {
        let av = &self.nodes[a.0].value;
        let m = av.ncols();
        let mut v = Array2::zeros((ids.len(), m));
        for (i, &r) in ids.iter().enumerate() {
            assert!(r < av.nrows(), "row index {r} out of range {}", av.nrows());
            v.row_mut(i).assign(&av.row(r));
        }
        self.push(v, Op::Rows(a, ids.to_vec()), None)
    }

    pub fn max_halves(&mut self, a: NodeId) -> NodeId {
        let av = &self.nodes[a.0].value;
        let (n, m) = av.dim();
        assert!(m % 2 == 0, "max_halves needs an even column count");
        let u = m / 2;
        let mut v = Array2::zeros((n, u));
        for i in 0..n {
            for j in 0..u {
                v[(i, j)] = av[(i, j)].max(av[(i, j + u)]);
            }
        }
        self.push(v, Op::MaxHalves(a), None)
    }

    pub fn row_dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        assert_eq!(av.dim(), bv.dim(), "row_dot shape mismatch");
        let n = av.nrows();
        let mut v = Array2::zeros((n, 1));
        for i in 0..n {
            v[(i, 0)] = av.row(i).dot(&bv.row(i));
        }
        self.push(v, Op::RowDot(a, b), None)
    }

    pub fn mul_col_broadcast(&mut self, col: NodeId, mat: NodeId) -> NodeId {
        let cv = &self.nodes[col.0].value;
        let mv = &self.nodes[mat.0].value;
        assert_eq!(cv.ncols(), 1, "mul_col_broadcast expects (n,1) column");
        assert_eq!(cv.nrows(), mv.nrows(), "mul_col_broadcast row mismatch");
        let v = mv * cv;
        self.push(v, Op::MulColBroadcast(col, mat), None)
    }

    /// Inverted dropout: zero with probability `rate`, scale survivors by
    /// 1/(1-rate). Identity in eval mode or at rate 0.
    pub fn dropout(&mut self, a: NodeId, rate: f64) -> NodeId {
        assert!((0.0..1.0).contains(&rate), "invalid dropout rate {rate}");
        if !self.train || rate == 0.0 {
            return a;
        }
        let dim = self.nodes[a.0].value.dim();
        let keep = real::<R>(1.0 / (1.0 - rate));
        let mask = Array2::from_shape_fn(dim, |_| {
            if self.rng.gen::<f64>() < rate {
                R::zero()
            } else {
                keep
            }
        });
        let v = &self.nodes[a.0].value * &mask;
        self.push(v, Op::Dropout(a), Some(mask))
    }

    /// Weighted sum of per-row softmax cross-entropy losses as a (1,1) node.
    pub fn softmax_xent_sum(&mut self, logits: NodeId, targets: &[usize], weights: &[R]) -> NodeId {
        let lv = &self.nodes[logits.0].value;
        let (n, m) = lv.dim();
        assert_eq!(targets.len(), n, "one target per row");
        assert_eq!(weights.len(), n, "one weight per row");
        assert!(targets.iter().all(|&t| t < m), "target id out of range");
        let probs = softmax_rows(lv);
        let mut total = R::zero();
        for i in 0..n {
            let p = probs[(i, targets[i])].max(real(1e-30));
            total += weights[i] * -p.ln();
        }
        let v = Array2::from_elem((1, 1), total);
        self.push(
            v,
            Op::SoftmaxXentSum {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
            Some(probs),
        )
    }

    /// Gradients of a scalar root with respect to every node, by reverse
    /// replay of the tape.
    pub fn backward(&self, root: NodeId) -> Gradients<R> {
        assert_eq!(self.nodes[root.0].value.dim(), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Tensor<R>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Array2::from_elem((1, 1), R::one()));

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.nodes[b.0].value.t());
                    let gb = self.nodes[a.0].value.t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::AddBias(a, bias) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *bias, gb);
                }
                Op::Mul(a, b) => {
                    let ga = &g * &self.nodes[b.0].value;
                    let gb = &g * &self.nodes[a.0].value;
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MulConst(a, c) => {
                    acc(&mut grads, *a, &g * c);
                }
                Op::AddConst(a) => {
                    acc(&mut grads, *a, g.clone());
                }
                Op::Scale(a, sc) => {
                    acc(&mut grads, *a, g.mapv(|x| x * *sc));
                }
                Op::Tanh(a) => {
                    let ga = &g * &node.value.mapv(|y| R::one() - y * y);
                    acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = &g * &node.value.mapv(|y| y * (R::one() - y));
                    acc(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Array2::zeros(y.dim());
                    for r in 0..y.nrows() {
                        let dot = g.row(r).dot(&y.row(r));
                        for c in 0..y.ncols() {
                            ga[(r, c)] = y[(r, c)] * (g[(r, c)] - dot);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.nodes[p.0].value.ncols();
                        let gp = g.slice(s![.., off..off + w]).to_owned();
                        acc(&mut grads, *p, gp);
                        off += w;
                    }
                }
                Op::SliceCols(a, lo, hi) => {
                    let mut ga = Array2::zeros(self.nodes[a.0].value.dim());
                    ga.slice_mut(s![.., *lo..*hi]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::Rows(a, ids) => {
                    let mut ga = Array2::zeros(self.nodes[a.0].value.dim());
                    for (r, &src) in ids.iter().enumerate() {
                        let mut row = ga.row_mut(src);
                        row += &g.row(r);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::MaxHalves(a) => {
                    let av = &self.nodes[a.0].value;
                    let u = av.ncols() / 2;
                    let mut ga = Array2::zeros(av.dim());
                    for r in 0..av.nrows() {
                        for c in 0..u {
                            if av[(r, c)] >= av[(r, c + u)] {
                                ga[(r, c)] = g[(r, c)];
                            } else {
                                ga[(r, c + u)] = g[(r, c)];
                            }
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::RowDot(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let ga = bv * &g;
                    let gb = av * &g;
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MulColBroadcast(col, mat) => {
                    let cv = &self.nodes[col.0].value;
                    let mv = &self.nodes[mat.0].value;
                    let gcol = (&g * mv).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let gmat = &g * cv;
                    acc(&mut grads, *col, gcol);
                    acc(&mut grads, *mat, gmat);
                }
                Op::Dropout(a) => {
                    let mask = node.aux.as_ref().expect("dropout mask cached");
                    acc(&mut grads, *a, &g * mask);
                }
                Op::SoftmaxXentSum {
                    logits,
                    targets,
                    weights,
                } => {
                    let probs = node.aux.as_ref().expect("softmax probs cached");
                    let gs = g[(0, 0)];
                    let mut gl = probs.clone();
                    for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        gl[(r, t)] -= R::one();
                        let mut row = gl.row_mut(r);
                        row.mapv_inplace(|x| x * w * gs);
                    }
                    acc(&mut grads, *logits, gl);
                }
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }
}

fn acc<R: Real>(grads: &mut [Option<Tensor<R>>], id: NodeId, g: Tensor<R>) {
    match &mut grads[id.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

/// Per-node gradients produced by `Graph::backward`.
pub struct Gradients<R: Real> {
    grads: Vec<Option<Tensor<R>>>,
}

impl<R: Real> Gradients<R> {
    /// Gradient for a node; zero-shaped `None` means the node was unreachable
    /// from the root.
    pub fn get(&self, id: NodeId) -> Option<&Tensor<R>> {
        self.grads[id.0].as_ref()
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<R>> {
        self.grads[id.0].take()
    }
}
