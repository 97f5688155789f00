//! Define-by-run reverse-mode differentiation.
//!
//! Layers push their outputs onto a [`Tape`] together with a backward rule.
//! [`Tape::backward`] sweeps the recorded nodes in reverse and returns the
//! gradient of a scalar loss with respect to every variable; parameter
//! gradients are then added into [`Parameter::grad`].
//!
//! ```
//! use bcdnet_core::autograd::{Parameter, Tape};
//! use bcdnet_core::tensor::Tensor;
//!
//! let mut w = Parameter::new("w", Tensor::<f64>::new(&[3], vec![1.0, -2.0, 0.5]).unwrap());
//! let mut tape = Tape::new();
//! let v = tape.param(&w);
//! let sq = tape.mul(v, v).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! tape.backward(loss).unwrap().accumulate([&mut w]);
//! assert_eq!(w.grad.data(), &[2.0, -4.0, 1.0]);
//! ```

mod gradcheck;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub use gradcheck::{grad_check, GradCheckReport, KINK_TOLERANCE};

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

/// Maps the upstream gradient to one gradient per input. `needs[i]` is false
/// when input `i` does not lead to anything trainable; the rule may return
/// `None` for it.
pub type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

pub struct Node<T> {
    pub op: &'static str,
    pub inputs: Vec<Var>,
    pub output: Var,
    backward: Option<BackwardFn<T>>,
}

enum Origin {
    Leaf { param: Option<String> },
    Op(NodeId),
}

struct Entry<T> {
    value: Tensor<T>,
    origin: Origin,
    requires_grad: bool,
}

/// A trainable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }

    pub fn zero_grad(&mut self) {
        self.grad = Tensor::zeros(self.value.shape());
    }
}

/// Reset every gradient to zero.
pub fn zero_grad<'a, T: Scalar>(params: impl IntoIterator<Item = &'a mut Parameter<T>>) {
    for p in params {
        p.zero_grad();
    }
}

pub struct Tape<T = f32> {
    entries: Vec<Entry<T>>,
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape that records values only. Backward rules are dropped on
    /// `record`, so nothing is retained for a backward pass.
    pub fn no_grad() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    /// Number of recorded operation nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    fn push_leaf(&mut self, value: Tensor<T>, param: Option<String>, requires_grad: bool) -> Var {
        self.entries.push(Entry {
            value,
            origin: Origin::Leaf { param },
            requires_grad: requires_grad && self.grad_enabled,
        });
        Var(self.entries.len() - 1)
    }

    /// A differentiable leaf.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, None, true)
    }

    /// A leaf that never receives a gradient (e.g. input images).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, None, false)
    }

    /// Register a parameter; its gradient is reported under `param.name`.
    pub fn param(&mut self, param: &Parameter<T>) -> Var {
        self.push_leaf(param.value.clone(), Some(param.name.clone()), true)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.entries[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.entries[var.0].requires_grad
    }

    pub fn producer(&self, var: Var) -> Option<NodeId> {
        match self.entries.get(var.0)?.origin {
            Origin::Op(id) => Some(id),
            Origin::Leaf { .. } => None,
        }
    }

    /// Append a node producing `output` from `inputs`.
    pub fn record(
        &mut self,
        op: &'static str,
        inputs: &[Var],
        output: Tensor<T>,
        backward: BackwardFn<T>,
    ) -> Result<Var> {
        if let Some(bad) = inputs.iter().find(|v| v.0 >= self.entries.len()) {
            return Err(Error::UnknownVar(bad.0));
        }
        let requires_grad = self.grad_enabled && inputs.iter().any(|v| self.entries[v.0].requires_grad);
        let node_id = NodeId(self.nodes.len());
        self.entries.push(Entry {
            value: output,
            origin: Origin::Op(node_id),
            requires_grad,
        });
        let out = Var(self.entries.len() - 1);
        self.nodes.push(Node {
            op,
            inputs: inputs.to_vec(),
            output: out,
            backward: requires_grad.then_some(backward),
        });
        Ok(out)
    }

    /// Reverse sweep from a scalar `loss`, seeding d loss / d loss = 1.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let entry = self.entries.get(loss.0).ok_or(Error::UnknownVar(loss.0))?;
        if entry.value.numel() != 1 {
            return Err(Error::NotScalar(entry.value.numel()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.entries.len()];
        grads[loss.0] = Some(Tensor::ones(entry.value.shape()));
        let mut visited = 0;

        for node in self.nodes.iter().rev() {
            let Some(rule) = &node.backward else { continue };
            let Some(upstream) = grads[node.output.0].take() else {
                continue;
            };
            visited += 1;
            let needs: Vec<bool> = node.inputs.iter().map(|v| self.entries[v.0].requires_grad).collect();
            let input_grads = rule(&upstream, &needs);
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "op {}", node.op);
            for ((&input, g), &need) in node.inputs.iter().zip(input_grads).zip(&needs) {
                let Some(g) = g.filter(|_| need) else { continue };
                debug_assert_eq!(g.shape(), self.entries[input.0].value.shape(), "op {}", node.op);
                accumulate(&mut grads[input.0], g);
            }
        }

        let mut params = BTreeMap::new();
        for (entry, g) in self.entries.iter().zip(&grads) {
            if let (Origin::Leaf { param: Some(name) }, Some(g)) = (&entry.origin, g) {
                accumulate(params.entry(name.clone()).or_insert(None), g.clone());
            }
        }
        Ok(Gradients {
            grads,
            params: params.into_iter().filter_map(|(k, v)| v.map(|v| (k, v))).collect(),
            visited,
        })
    }

    // Elementary differentiable ops. Layers in `nn` record their own nodes.

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip(self.value(b), |x, y| x + y)?;
        self.record(
            "add",
            &[a, b],
            out,
            Box::new(|g, _| vec![Some(g.clone()), Some(g.clone())]),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a).clone(), self.value(b).clone());
        let out = av.zip(&bv, |x, y| x * y)?;
        self.record(
            "mul",
            &[a, b],
            out,
            Box::new(move |g, needs| {
                vec![
                    needs[0].then(|| g.zip(&bv, |g, y| g * y).expect("shape checked")),
                    needs[1].then(|| g.zip(&av, |g, x| g * x).expect("shape checked")),
                ]
            }),
        )
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var> {
        let out = self.value(a).map(|x| x * factor);
        self.record(
            "scale",
            &[a],
            out,
            Box::new(move |g, _| vec![Some(g.map(|g| g * factor))]),
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let shape = self.value(a).shape().to_vec();
        let out = Tensor::scalar(self.value(a).sum_all());
        self.record(
            "sum",
            &[a],
            out,
            Box::new(move |g, _| vec![Some(Tensor::full(&shape, g.data()[0]))]),
        )
    }

    /// `Σ a ⊙ weights` with constant `weights`.
    pub fn weighted_sum(&mut self, a: Var, weights: &Tensor<T>) -> Result<Var> {
        let prod = self.value(a).zip(weights, |x, w| x * w)?;
        let out = Tensor::scalar(prod.sum_all());
        let weights = weights.clone();
        self.record(
            "weighted_sum",
            &[a],
            out,
            Box::new(move |g, _| {
                let s = g.data()[0];
                vec![Some(weights.map(|w| w * s))]
            }),
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let in_shape = self.value(a).shape().to_vec();
        let out = self.value(a).reshape(shape)?;
        self.record(
            "reshape",
            &[a],
            out,
            Box::new(move |g, _| vec![Some(g.reshape(&in_shape).expect("numel preserved"))]),
        )
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        None => *slot = Some(g),
        Some(acc) => {
            for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
    }
}

/// Result of a backward sweep.
pub struct Gradients<T = f32> {
    grads: Vec<Option<Tensor<T>>>,
    params: BTreeMap<String, Tensor<T>>,
    visited: usize,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf. Intermediate gradients are released during the sweep.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0)?.as_ref()
    }

    /// Gradient of a registered parameter, summed over every registration.
    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    /// Number of nodes whose backward rule ran.
    pub fn nodes_visited(&self) -> usize {
        self.visited
    }

    /// Add (not assign) into each matching `Parameter::grad`.
    pub fn accumulate<'a>(&self, params: impl IntoIterator<Item = &'a mut Parameter<T>>) {
        for p in params {
            if let Some(g) = self.params.get(&p.name) {
                for (a, &b) in p.grad.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vec_t(data: &[f64]) -> Tensor<f64> {
        Tensor::new(&[data.len()], data.to_vec()).unwrap()
    }

    #[test]
    fn record_after_two_leaves() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(vec_t(&[1.0, 2.0]));
        let b = tape.leaf(vec_t(&[3.0, 4.0]));
        assert!(tape.is_empty());
        let c = tape.add(a, b).unwrap();
        assert_eq!(tape.len(), 1);
        assert_eq!(tape.producer(c), Some(NodeId(0)));
        assert_eq!(tape.producer(a), None);
    }

    #[test]
    fn diamond_shares_input() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(vec_t(&[1.0, -1.0]));
        let a = tape.scale(x, 2.0).unwrap();
        let b = tape.scale(x, 3.0).unwrap();
        assert_eq!(tape.len(), 2);
        assert_eq!(tape.nodes()[0].inputs, vec![x]);
        assert_eq!(tape.nodes()[1].inputs, vec![x]);
        let s = tape.add(a, b).unwrap();
        let loss = tape.sum(s).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[5.0, 5.0]);
    }

    #[test]
    fn record_rejects_unknown_inputs() {
        let mut tape = Tape::<f64>::new();
        let r = tape.record("bogus", &[Var(3)], vec_t(&[0.0]), Box::new(|_, _| vec![None]));
        assert!(matches!(r, Err(Error::UnknownVar(3))));
    }

    #[test]
    fn replayed_forward_is_bit_exact() {
        // Re-evaluate the recorded program op by op without a tape.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x0 = Tensor::<f64>::rand_uniform(&[6], -1.0, 1.0, &mut rng);
        let w0 = Tensor::<f64>::rand_uniform(&[6], -1.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let w = tape.leaf(w0.clone());
        let p = tape.mul(x, w).unwrap();
        let q = tape.add(p, x).unwrap();
        let r = tape.scale(q, 0.3).unwrap();
        let s = tape.sum(r).unwrap();

        let p_ref = x0.zip(&w0, |a, b| a * b).unwrap();
        let q_ref = p_ref.zip(&x0, |a, b| a + b).unwrap();
        let r_ref = q_ref.map(|v| v * 0.3);
        assert_eq!(tape.value(p), &p_ref);
        assert_eq!(tape.value(q), &q_ref);
        assert_eq!(tape.value(r), &r_ref);
        assert_eq!(tape.value(s).item().unwrap(), r_ref.sum_all());
    }

    #[test]
    fn sum_gives_ones() {
        let mut w = Parameter::new("w", vec_t(&[0.5, -3.0, 2.0]));
        let mut tape = Tape::new();
        let v = tape.param(&w);
        let loss = tape.sum(v).unwrap();
        tape.backward(loss).unwrap().accumulate([&mut w]);
        assert_eq!(w.grad.data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_gives_two_w_and_accumulates() {
        let mut w = Parameter::new("w", vec_t(&[0.5, -3.0, 2.0]));
        for _ in 0..2 {
            let mut tape = Tape::new();
            let v = tape.param(&w);
            let sq = tape.mul(v, v).unwrap();
            let loss = tape.sum(sq).unwrap();
            tape.backward(loss).unwrap().accumulate([&mut w]);
        }
        assert_eq!(w.grad.data(), &[2.0, -12.0, 8.0]);
        zero_grad([&mut w]);
        assert_eq!(w.grad.data(), &[0.0; 3]);
        zero_grad([&mut w]);
        assert_eq!(w.grad.data(), &[0.0; 3]);
    }

    #[test]
    fn zero_grad_on_fresh_params_is_noop() {
        let mut w = Parameter::new("w", vec_t(&[1.0, 2.0]));
        let before = w.clone();
        zero_grad([&mut w]);
        assert_eq!(w, before);
    }

    #[test]
    fn backward_needs_scalar() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(vec_t(&[1.0, 2.0]));
        let y = tape.scale(x, 2.0).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::NotScalar(2))));
    }

    #[test]
    fn each_node_visited_once() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(vec_t(&[1.0, 2.0]));
        let mut h = x;
        for _ in 0..10 {
            let a = tape.scale(h, 1.1).unwrap();
            h = tape.add(a, h).unwrap();
        }
        let loss = tape.sum(h).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.nodes_visited(), tape.len());
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(vec_t(&[1.0, 2.0]));
        let x = tape.leaf(vec_t(&[3.0, 4.0]));
        let y = tape.mul(c, x).unwrap();
        let loss = tape.sum(y).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn no_grad_tape_keeps_values_only() {
        let mut tape = Tape::<f64>::no_grad();
        let x = tape.leaf(vec_t(&[1.0]));
        let y = tape.scale(x, 2.0).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0]);
        assert!(!tape.requires_grad(y));
        let g = tape.backward(y).unwrap();
        assert!(g.get(x).is_none());
    }

    #[test]
    fn gradient_is_linear_in_the_loss() {
        // d(L1 + L2) == dL1 + dL2 on random small graphs.
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x0 = Tensor::<f64>::rand_uniform(&[5], -1.0, 1.0, &mut rng);
            let w1 = Tensor::<f64>::rand_uniform(&[5], -1.0, 1.0, &mut rng);
            let w2 = Tensor::<f64>::rand_uniform(&[5], -1.0, 1.0, &mut rng);
            let build = |tape: &mut Tape<f64>, which: u8| {
                let x = tape.leaf(x0.clone());
                let sq = tape.mul(x, x).unwrap();
                let l1 = tape.weighted_sum(sq, &w1).unwrap();
                let l2 = tape.weighted_sum(x, &w2).unwrap();
                let loss = match which {
                    0 => l1,
                    1 => l2,
                    _ => tape.add(l1, l2).unwrap(),
                };
                (x, loss)
            };
            let grad = |which| {
                let mut tape = Tape::new();
                let (x, loss) = build(&mut tape, which);
                tape.backward(loss).unwrap().get(x).unwrap().clone()
            };
            let (g1, g2, g12) = (grad(0), grad(1), grad(2));
            for i in 0..5 {
                let d = g12.data()[i] - (g1.data()[i] + g2.data()[i]);
                assert!(d.abs() < 1e-12, "seed {seed} elem {i}: {d}");
            }
        }
    }
}
