use crate::network::ParamStore;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        Self::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Optimizer state for one parameter store.
#[derive(Debug, Clone)]
pub struct Optimizer<S> {
    kind: OptimizerKind,
    lr: S,
    step: i32,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> Optimizer<S> {
    pub fn new(kind: OptimizerKind, lr: f64, params: &ParamStore<S>) -> Self {
        let zeros = || params.ids().map(|id| vec![S::zero(); params.value(id).numel()]).collect();
        Self { kind, lr: S::lit(lr), step: 0, m: zeros(), v: zeros() }
    }

    /// Applies the accumulated gradients, then clears them.
    pub fn step(&mut self, params: &mut ParamStore<S>) {
        self.step += 1;
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Sgd => {
                for (value, grad) in params.values_and_grads_mut() {
                    for (p, g) in value.data_mut().iter_mut().zip(grad) {
                        *p = *p - lr * *g;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let (b1, b2, eps) = (S::lit(beta1), S::lit(beta2), S::lit(eps));
                let c1 = S::one() - b1.powi(self.step);
                let c2 = S::one() - b2.powi(self.step);
                for (((value, grad), m), v) in params.values_and_grads_mut().zip(&mut self.m).zip(&mut self.v) {
                    for (((p, g), m), v) in value.data_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = b1 * *m + (S::one() - b1) * *g;
                        *v = b2 * *v + (S::one() - b2) * *g * *g;
                        let mh = *m / c1;
                        let vh = *v / c2;
                        *p = *p - lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
        params.zero_grad();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn quadratic_descent(kind: OptimizerKind, lr: f64, steps: usize) -> f64 {
        let mut ps = ParamStore::<f64>::new();
        let id = ps.add("p", Tensor::new(vec![2], vec![3.0, -2.0]).unwrap());
        let mut opt = Optimizer::new(kind, lr, &ps);
        for _ in 0..steps {
            let mut g = crate::autodiff::Graph::new();
            let vars = ps.bind(&mut g).unwrap();
            let sq = g.mul(vars[0], vars[0]).unwrap();
            let loss = g.sum_all(sq).unwrap();
            g.backward(loss).unwrap();
            ps.accumulate(&g, &vars);
            opt.step(&mut ps);
        }
        ps.value(id).data().iter().map(|v| v * v).sum()
    }

    #[test]
    fn both_optimizers_descend() {
        assert!(quadratic_descent(OptimizerKind::Sgd, 0.1, 50) < 1e-6);
        assert!(quadratic_descent(OptimizerKind::default(), 0.1, 300) < 1e-3);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut ps = ParamStore::<f64>::new();
        let id = ps.add("p", Tensor::new(vec![1], vec![1.0]).unwrap());
        let mut opt = Optimizer::new(OptimizerKind::default(), 0.01, &ps);
        let mut g = crate::autodiff::Graph::new();
        let vars = ps.bind(&mut g).unwrap();
        let loss = g.scale(vars[0], 5.0).unwrap();
        let loss = g.sum_all(loss).unwrap();
        g.backward(loss).unwrap();
        ps.accumulate(&g, &vars);
        opt.step(&mut ps);
        assert!((ps.value(id).data()[0] - 0.99).abs() < 1e-9);
    }
}
