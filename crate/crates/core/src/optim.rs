use crate::autograd::ParamSet;
use crate::tensor::{Scalar, Tensor};

/// Stochastic gradient descent with classical momentum:
/// `v = momentum * v + grad`, then `param -= learning_rate * v`.
#[derive(Clone, Debug)]
pub struct Sgd<S = f32> {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<Tensor<S>>,
}

impl<S: Scalar> Sgd<S> {
    pub fn new(params: &ParamSet<S>, learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
        }
    }

    pub fn velocity(&self) -> &[Tensor<S>] {
        &self.velocity
    }

    pub fn step(&mut self, params: &mut ParamSet<S>) {
        assert_eq!(self.velocity.len(), params.len(), "optimizer built for a different parameter set");
        let (lr, mu) = (self.learning_rate, self.momentum);
        for (p, v) in params.iter_mut().zip(&mut self.velocity) {
            for ((w, vel), g) in p.value.data_mut().iter_mut().zip(v.data_mut()).zip(p.grad.data()) {
                let nv = mu * vel.widen() + g.widen();
                *vel = S::narrow(nv);
                *w = S::narrow(w.widen() - lr * nv);
            }
        }
    }
}
