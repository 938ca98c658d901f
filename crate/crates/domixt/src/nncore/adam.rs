//! ADAM with classic (gradient-additive) L2 weight decay.

use indexmap::IndexMap;

use super::{real, Real, Tensor};

/// Optimizer state over a named parameter collection.
#[derive(Debug, Clone)]
pub struct AdamState<R: Real> {
    pub alpha: R,
    pub beta1: R,
    pub beta2: R,
    pub epsilon: R,
    pub weight_decay: R,
    pub step: u64,
    m: IndexMap<String, Tensor<R>>,
    v: IndexMap<String, Tensor<R>>,
}

impl<R: Real> AdamState<R> {
    pub fn new(weight_decay: f64) -> Self {
        AdamState {
            alpha: real(1e-3),
            beta1: real(0.9),
            beta2: real(0.999),
            epsilon: real(1e-8),
            weight_decay: real(weight_decay),
            step: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        }
    }

    /// One ADAM update with bias correction. The L2 term is folded into the
    /// gradient (g <- g + weight_decay * theta) before the moment updates.
    pub fn step(
        &mut self,
        params: &mut IndexMap<String, Tensor<R>>,
        grads: &IndexMap<String, Tensor<R>>,
    ) {
        self.step += 1;
        let t = self.step as i32;
        let one = R::one();
        let bc1 = one - self.beta1.powi(t);
        let bc2 = one - self.beta2.powi(t);
        for (name, theta) in params.iter_mut() {
            let Some(grad) = grads.get(name) else { continue };
            assert_eq!(grad.dim(), theta.dim(), "gradient shape mismatch for {name}");
            let g = grad + &theta.mapv(|x| x * self.weight_decay);
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(theta.dim()));
            *m = m.mapv(|x| x * self.beta1) + &g.mapv(|x| x * (one - self.beta1));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(theta.dim()));
            *v = v.mapv(|x| x * self.beta2) + &g.mapv(|x| x * x * (one - self.beta2));
            ndarray::Zip::from(theta)
                .and(&*m)
                .and(&*v)
                .for_each(|th, &mi, &vi| {
                    let mhat = mi / bc1;
                    let vhat = vi / bc2;
                    *th = *th - self.alpha * mhat / (vhat.sqrt() + self.epsilon);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn single(theta: f64) -> IndexMap<String, Tensor<f64>> {
        let mut p = IndexMap::new();
        p.insert("w".to_string(), array![[theta]]);
        p
    }

    #[test]
    fn zero_gradient_fixed_point() {
        let mut params = single(0.7);
        let grads = single(0.0);
        let mut st = AdamState::new(0.0);
        st.step(&mut params, &grads);
        st.step(&mut params, &grads);
        assert_eq!(params["w"][(0, 0)], 0.7);
        assert_eq!(st.step, 2);
    }

    #[test]
    fn hand_computed_first_two_updates() {
        // Scalar parameter theta=1, gradients g1=1, g2=0.5, defaults, no decay.
        let mut params = single(1.0);
        let mut st = AdamState::new(0.0);
        let (a, b1, b2, eps) = (1e-3, 0.9, 0.999, 1e-8);

        st.step(&mut params, &single(1.0));
        let m1: f64 = (1.0 - b1) * 1.0;
        let v1: f64 = (1.0 - b2) * 1.0;
        let th1 = 1.0 - a * (m1 / (1.0 - b1)) / ((v1 / (1.0 - b2)).sqrt() + eps);
        assert!((params["w"][(0, 0)] - th1).abs() < 1e-7);

        st.step(&mut params, &single(0.5));
        let m2 = b1 * m1 + (1.0 - b1) * 0.5;
        let v2 = b2 * v1 + (1.0 - b2) * 0.25;
        let th2 = th1
            - a * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps);
        assert!((params["w"][(0, 0)] - th2).abs() < 1e-7);
    }

    #[test]
    fn weight_decay_pulls_toward_zero() {
        let mut params = single(1.0);
        let grads = single(0.0);
        let mut st = AdamState::new(1e-6);
        st.step(&mut params, &grads);
        let w = params["w"][(0, 0)];
        assert!(w < 1.0 && w > 0.0, "decay moved theta to {w}");
    }
}
