//! Reverse-mode differentiation over a recorded operation tape.
//!
//! Network code is written once against [`Exec`]. [`Eager`] evaluates it
//! directly and drops intermediates as soon as they go out of scope;
//! [`Tape`] records every operation so that [`Tape::backward`] can replay it
//! in reverse. Both call the same kernels in [`crate::ops`], so their forward
//! values are bitwise identical.

use std::borrow::Cow;

use rand::Rng;

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{Scalar, Shape, Tensor};

/// Handle to a named trainable tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Param<S> {
    pub name: String,
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
}

/// Ordered collection of trainable tensors with their accumulated gradients.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<S = f32> {
    params: Vec<Param<S>>,
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<S> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<S> {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<S>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<S>> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(S::ZERO);
        }
    }

    /// Adds the parameter gradients from one backward pass to `grad`.
    pub fn accumulate(&mut self, grads: &Gradients<S>) {
        for (id, g) in &grads.params {
            let p = &mut self.params[id.0];
            p.grad.add_assign(g).expect("gradient shape matches parameter");
        }
    }

    /// Converts every parameter to another element type, e.g. for `f64`
    /// gradient checks of an `f32` model.
    pub fn cast<T: Scalar>(&self) -> ParamSet<T> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                })
                .collect(),
        }
    }
}

/// The operations network code may perform.
pub trait Exec<S: Scalar> {
    type Value;

    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor<S>;
    fn input(&mut self, t: Tensor<S>) -> Self::Value;
    fn param(&mut self, id: ParamId) -> Self::Value;

    fn conv2d(&mut self, x: &Self::Value, weight: &Self::Value, bias: &Self::Value) -> Result<Self::Value>;
    fn maxpool2(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn maxpool3_same(&mut self, x: &Self::Value) -> Self::Value;
    fn upsample2(&mut self, x: &Self::Value) -> Self::Value;
    fn relu(&mut self, x: &Self::Value) -> Self::Value;
    fn sigmoid(&mut self, x: &Self::Value) -> Self::Value;
    fn concat_channels(&mut self, xs: &[&Self::Value]) -> Result<Self::Value>;
    fn dropout<R: Rng + ?Sized>(&mut self, x: &Self::Value, rate: f64, training: bool, rng: &mut R) -> Result<Self::Value>;

    fn shape(&self, v: &Self::Value) -> Shape {
        self.value(v).shape()
    }
}

/// Direct evaluation without gradient bookkeeping.
pub struct Eager<'p, S: Scalar> {
    params: &'p ParamSet<S>,
}

impl<'p, S: Scalar> Eager<'p, S> {
    pub fn new(params: &'p ParamSet<S>) -> Self {
        Self { params }
    }
}

impl<'p, S: Scalar> Exec<S> for Eager<'p, S> {
    type Value = Cow<'p, Tensor<S>>;

    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor<S> {
        v
    }

    fn input(&mut self, t: Tensor<S>) -> Self::Value {
        Cow::Owned(t)
    }

    fn param(&mut self, id: ParamId) -> Self::Value {
        Cow::Borrowed(&self.params.get(id).value)
    }

    fn conv2d(&mut self, x: &Self::Value, weight: &Self::Value, bias: &Self::Value) -> Result<Self::Value> {
        ops::conv2d(x, weight, bias).map(Cow::Owned)
    }

    fn maxpool2(&mut self, x: &Self::Value) -> Result<Self::Value> {
        ops::maxpool2(x).map(|(y, _)| Cow::Owned(y))
    }

    fn maxpool3_same(&mut self, x: &Self::Value) -> Self::Value {
        Cow::Owned(ops::maxpool3_same(x).0)
    }

    fn upsample2(&mut self, x: &Self::Value) -> Self::Value {
        Cow::Owned(ops::upsample2(x))
    }

    fn relu(&mut self, x: &Self::Value) -> Self::Value {
        Cow::Owned(ops::relu(x))
    }

    fn sigmoid(&mut self, x: &Self::Value) -> Self::Value {
        Cow::Owned(ops::sigmoid(x))
    }

    fn concat_channels(&mut self, xs: &[&Self::Value]) -> Result<Self::Value> {
        let ts: Vec<&Tensor<S>> = xs.iter().map(|v| v.as_ref()).collect();
        ops::concat_channels(&ts).map(Cow::Owned)
    }

    fn dropout<R: Rng + ?Sized>(&mut self, x: &Self::Value, rate: f64, training: bool, rng: &mut R) -> Result<Self::Value> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::DropoutRate(rate));
        }
        if !training || rate == 0.0 {
            return Ok(x.clone());
        }
        let mask = ops::dropout_mask(x.shape(), rate, rng)?;
        ops::mul(x, &mask).map(Cow::Owned)
    }
}

/// Node handle on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<S> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var },
    MaxPool { x: Var, argmax: Vec<u32> },
    Upsample2 { x: Var },
    Relu { x: Var },
    Sigmoid { x: Var },
    Concat { xs: Vec<Var> },
    /// Elementwise product with a constant mask (dropout).
    Mask { x: Var, mask: Tensor<S> },
    Bce { p: Var, target: Tensor<S> },
    Sum { x: Var },
    Scale { x: Var, k: f64 },
    Add { a: Var, b: Var },
}

struct Node<'p, S: Scalar> {
    value: Cow<'p, Tensor<S>>,
    op: Op<S>,
    requires_grad: bool,
}

/// Gradients produced by one [`Tape::backward`] call.
pub struct Gradients<S> {
    nodes: Vec<Option<Tensor<S>>>,
    params: Vec<(ParamId, Tensor<S>)>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient with respect to a node, if it was reachable from the loss.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<S>> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<S>> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, g)| g)
    }
}

/// Records operations for reverse-mode differentiation.
///
/// Parameter leaves borrow their tensors from the [`ParamSet`], so recording a
/// forward pass never copies weights.
pub struct Tape<'p, S: Scalar> {
    nodes: Vec<Node<'p, S>>,
    params: Option<&'p ParamSet<S>>,
    bound: Vec<Option<Var>>,
}

impl<'p, S: Scalar> Default for Tape<'p, S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, S: Scalar> Tape<'p, S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: None,
            bound: Vec::new(),
        }
    }

    pub fn with_params(params: &'p ParamSet<S>) -> Self {
        Self {
            nodes: Vec::new(),
            params: Some(params),
            bound: vec![None; params.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'p, Tensor<S>>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn get(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, t: Tensor<S>, requires_grad: bool) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, requires_grad)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.get(x).sum();
        let rg = self.rg(x);
        self.push(Cow::Owned(Tensor::scalar(S::narrow(s))), Op::Sum { x }, rg)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let y = self.get(x).map(|v| S::narrow(v.widen() * k));
        let rg = self.rg(x);
        self.push(Cow::Owned(y), Op::Scale { x, k }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let mut y = self.get(a).clone();
        y.add_assign(self.get(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Cow::Owned(y), Op::Add { a, b }, rg))
    }

    /// Elementwise product with a constant tensor.
    pub fn mul_const(&mut self, x: Var, k: Tensor<S>) -> Result<Var> {
        let y = ops::mul(self.get(x), &k)?;
        let rg = self.rg(x);
        Ok(self.push(Cow::Owned(y), Op::Mask { x, mask: k }, rg))
    }

    /// Summed binary cross-entropy of `p` against a constant binary target.
    pub fn bce_loss(&mut self, p: Var, target: Tensor<S>) -> Result<Var> {
        let loss = ops::bce_loss(self.get(p), &target)?;
        let rg = self.rg(p);
        Ok(self.push(Cow::Owned(Tensor::scalar(S::narrow(loss))), Op::Bce { p, target }, rg))
    }

    /// Back-propagates from a scalar `loss`.
    ///
    /// The tape is left intact, so calling this twice yields the same
    /// gradients twice; accumulating both into a [`ParamSet`] doubles them.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        let shape = self.get(loss).shape();
        if shape.len() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(shape, S::ONE));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d { x, w, b } => {
                    let cg = ops::conv2d_backward(self.get(*x), self.get(*w), &g);
                    self.route(&mut grads, *x, cg.input);
                    self.route(&mut grads, *w, cg.weight);
                    self.route(&mut grads, *b, cg.bias);
                }
                Op::MaxPool { x, argmax } => {
                    let gi = ops::pool_backward(self.get(*x).shape(), argmax, &g);
                    self.route(&mut grads, *x, gi);
                }
                Op::Upsample2 { x } => self.route(&mut grads, *x, ops::upsample2_backward(&g)),
                Op::Relu { x } => {
                    let gi = ops::relu_backward(self.get(*x), &g);
                    self.route(&mut grads, *x, gi);
                }
                Op::Sigmoid { x } => {
                    let gi = ops::sigmoid_backward(&node.value, &g);
                    self.route(&mut grads, *x, gi);
                }
                Op::Concat { xs } => {
                    let shapes: Vec<Shape> = xs.iter().map(|v| self.get(*v).shape()).collect();
                    for (v, gi) in xs.iter().zip(ops::concat_backward(&shapes, &g)) {
                        self.route(&mut grads, *v, gi);
                    }
                }
                Op::Mask { x, mask } => {
                    let gi = ops::mul(&g, mask)?;
                    self.route(&mut grads, *x, gi);
                }
                Op::Bce { p, target } => {
                    let gi = ops::bce_backward(self.get(*p), target, g.data()[0].widen());
                    self.route(&mut grads, *p, gi);
                }
                Op::Sum { x } => {
                    let gi = Tensor::full(self.get(*x).shape(), g.data()[0]);
                    self.route(&mut grads, *x, gi);
                }
                Op::Scale { x, k } => {
                    let k = *k;
                    let gi = g.map(|v| S::narrow(v.widen() * k));
                    self.route(&mut grads, *x, gi);
                }
                Op::Add { a, b } => {
                    self.route(&mut grads, *a, g.clone());
                    self.route(&mut grads, *b, g.clone());
                }
            }
            // leaves keep their gradient for the caller
            if matches!(node.op, Op::Leaf) || idx == loss.0 {
                grads[idx] = Some(g);
            }
        }

        let params = self
            .bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let v = (*v)?;
                let g = grads[v.0].clone().unwrap_or_else(|| Tensor::zeros(self.get(v).shape()));
                Some((ParamId(i), g))
            })
            .collect();
        Ok(Gradients { nodes: grads, params })
    }

    fn route(&self, grads: &mut [Option<Tensor<S>>], to: Var, g: Tensor<S>) {
        if !self.rg(to) {
            return;
        }
        match &mut grads[to.0] {
            Some(acc) => acc.add_assign(&g).expect("gradient shape"),
            slot => *slot = Some(g),
        }
    }

    /// Fingerprint of every piecewise-linear branch taken in the recorded
    /// forward pass: the sign pattern of each ReLU input and the winner of
    /// each pooling window. Two passes with equal signatures lie on the same
    /// linear piece, which is what finite-difference checks need.
    pub fn kink_signature(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu { x } => {
                    for v in self.get(*x).data() {
                        (*v > S::ZERO).hash(&mut h);
                    }
                }
                Op::MaxPool { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }
}

impl<'p, S: Scalar> Exec<S> for Tape<'p, S> {
    type Value = Var;

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor<S> {
        self.get(*v)
    }

    fn input(&mut self, t: Tensor<S>) -> Var {
        self.leaf(t, false)
    }

    fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let params = self.params.expect("tape was created without a parameter set");
        let v = self.push(Cow::Borrowed(&params.get(id).value), Op::Leaf, true);
        self.bound[id.0] = Some(v);
        v
    }

    fn conv2d(&mut self, x: &Var, w: &Var, b: &Var) -> Result<Var> {
        let y = ops::conv2d(self.get(*x), self.get(*w), self.get(*b))?;
        let rg = self.rg(*x) || self.rg(*w) || self.rg(*b);
        Ok(self.push(Cow::Owned(y), Op::Conv2d { x: *x, w: *w, b: *b }, rg))
    }

    fn maxpool2(&mut self, x: &Var) -> Result<Var> {
        let (y, argmax) = ops::maxpool2(self.get(*x))?;
        let rg = self.rg(*x);
        Ok(self.push(Cow::Owned(y), Op::MaxPool { x: *x, argmax }, rg))
    }

    fn maxpool3_same(&mut self, x: &Var) -> Var {
        let (y, argmax) = ops::maxpool3_same(self.get(*x));
        let rg = self.rg(*x);
        self.push(Cow::Owned(y), Op::MaxPool { x: *x, argmax }, rg)
    }

    fn upsample2(&mut self, x: &Var) -> Var {
        let y = ops::upsample2(self.get(*x));
        let rg = self.rg(*x);
        self.push(Cow::Owned(y), Op::Upsample2 { x: *x }, rg)
    }

    fn relu(&mut self, x: &Var) -> Var {
        let y = ops::relu(self.get(*x));
        let rg = self.rg(*x);
        self.push(Cow::Owned(y), Op::Relu { x: *x }, rg)
    }

    fn sigmoid(&mut self, x: &Var) -> Var {
        let y = ops::sigmoid(self.get(*x));
        let rg = self.rg(*x);
        self.push(Cow::Owned(y), Op::Sigmoid { x: *x }, rg)
    }

    fn concat_channels(&mut self, xs: &[&Var]) -> Result<Var> {
        let ts: Vec<&Tensor<S>> = xs.iter().map(|v| self.get(**v)).collect();
        let y = ops::concat_channels(&ts)?;
        let rg = xs.iter().any(|v| self.rg(**v));
        let xs = xs.iter().map(|v| **v).collect();
        Ok(self.push(Cow::Owned(y), Op::Concat { xs }, rg))
    }

    fn dropout<R: Rng + ?Sized>(&mut self, x: &Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::DropoutRate(rate));
        }
        if !training || rate == 0.0 {
            return Ok(*x);
        }
        let mask = ops::dropout_mask(self.get(*x).shape(), rate, rng)?;
        let y = ops::mul(self.get(*x), &mask)?;
        let rg = self.rg(*x);
        Ok(self.push(Cow::Owned(y), Op::Mask { x: *x, mask }, rg))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::full(Shape::new(1, 2, 3, 3), 0.3), true);
        let loss = tape.sum(x);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &Tensor::full(Shape::new(1, 2, 3, 3), 1.0));
    }

    #[test]
    fn non_scalar_backward_fails() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros(Shape::new(1, 1, 2, 2)), true);
        let y = tape.relu(&x);
        assert!(matches!(tape.backward(y), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn accumulation_doubles() {
        let mut params = ParamSet::<f32>::new();
        let id = params.add("w", Tensor::full(Shape::new(1, 1, 1, 1), 2.0));
        let once;
        {
            let mut tape = Tape::with_params(&params);
            let x = tape.leaf(Tensor::full(Shape::new(1, 1, 3, 3), 1.5), false);
            let w = tape.param(id);
            let b = tape.leaf(Tensor::zeros(Shape::new(1, 1, 1, 1)), false);
            let y = tape.conv2d(&x, &w, &b).unwrap();
            let loss = tape.sum(y);
            let g1 = tape.backward(loss).unwrap();
            let g2 = tape.backward(loss).unwrap();
            once = g1.param(id).unwrap().clone();
            params.accumulate(&g1);
            params.accumulate(&g2);
        }
        assert_eq!(once.data(), &[13.5]);
        assert_eq!(params.get(id).grad.data(), &[27.0]);
        params.zero_grad();
        assert_eq!(params.get(id).grad.data(), &[0.0]);
    }

    #[test]
    fn unreached_param_gets_zero_grad() {
        let mut params = ParamSet::<f32>::new();
        let used = params.add("used", Tensor::full(Shape::scalar(), 1.0));
        let unused = params.add("unused", Tensor::full(Shape::scalar(), 1.0));
        let mut tape = Tape::with_params(&params);
        let u = tape.param(used);
        let _ = tape.param(unused);
        let loss = tape.sum(u);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.param(used).unwrap().data(), &[1.0]);
        assert_eq!(g.param(unused).unwrap().data(), &[0.0]);
    }

    #[test]
    fn eager_and_tape_agree() {
        let mut params = ParamSet::<f32>::new();
        let w = params.add(
            "w",
            Tensor::from_fn(Shape::new(2, 1, 3, 3), |[o, _, y, x]| (o as f32 - 0.5) * (y as f32 - x as f32)),
        );
        let b = params.add("b", Tensor::full(Shape::new(1, 2, 1, 1), 0.1));
        let input = Tensor::from_fn(Shape::new(1, 1, 4, 4), |[_, _, y, x]| (y * 4 + x) as f32 / 16.0);

        fn run<S: Scalar, E: Exec<S>>(e: &mut E, input: Tensor<S>, w: ParamId, b: ParamId) -> Tensor<S> {
            let x = e.input(input);
            let w = e.param(w);
            let b = e.param(b);
            let y = e.conv2d(&x, &w, &b).unwrap();
            let y = e.relu(&y);
            let y = e.maxpool2(&y).unwrap();
            let y = e.upsample2(&y);
            let y = e.sigmoid(&y);
            e.value(&y).clone()
        }
        let a = run(&mut Eager::new(&params), input.clone(), w, b);
        let t = run(&mut Tape::with_params(&params), input, w, b);
        assert_eq!(a, t);
    }
}
