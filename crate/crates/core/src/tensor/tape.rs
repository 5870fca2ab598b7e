//! A small reverse-mode tape over the tensor kernels.
//!
//! Nodes are appended in execution order, so the node list is already a
//! topological order and the backward sweep is a single reverse pass.

use std::borrow::Cow;

use super::grad::{
    batch_norm_backward, batch_norm_infer_backward, concat_backward, conv2d_backward, relu_backward,
    sigmoid_backward, silu_backward, upsample_nearest_2x_backward,
};
use super::ops::{
    batch_norm_infer, batch_norm_train, check_conv, concat_channels, conv2d_unchecked, relu, sigmoid,
    silu, upsample_nearest_2x, BatchStats, ConvGeometry,
};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T: Scalar> {
    Leaf,
    Conv {
        x: usize,
        w: usize,
        b: Option<usize>,
        geom: ConvGeometry,
    },
    BnTrain {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Tensor<T>,
        invstd: Vec<T>,
    },
    BnInfer {
        x: usize,
        gamma: usize,
        beta: usize,
        running_mean: Vec<T>,
        running_var: Vec<T>,
        eps: T,
    },
    Silu(usize),
    Relu(usize),
    Sigmoid(usize),
    Add(usize, usize),
    Concat(usize, usize),
    Upsample(usize),
}

struct Node<'a, T: Scalar> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
}

pub struct Graph<'a, T: Scalar = f32> {
    nodes: Vec<Node<'a, T>>,
    recording: bool,
}

impl<'a, T: Scalar> Graph<'a, T> {
    /// A graph that keeps what the backward pass needs.
    pub fn recording() -> Self {
        Self {
            nodes: Vec::new(),
            recording: true,
        }
    }

    /// A forward-only graph; [`Graph::backward`] fails on it.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor<T>>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(Cow::Owned(value), Op::Leaf)
    }

    /// A leaf that borrows its value, used for model parameters.
    pub fn leaf_ref(&mut self, value: &'a Tensor<T>) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn val(&self, i: usize) -> &Tensor<T> {
        &self.nodes[i].value
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeometry) -> Result<Var> {
        let input = self.val(x.0);
        let kernel = self.val(w.0);
        let bias_t = b.map(|b| self.val(b.0));
        let bias = bias_t.map(|t| t.data());
        let (ho, wo) = check_conv(input, kernel, bias, &geom)?;
        let out = conv2d_unchecked(input, kernel, bias, &geom, ho, wo);
        Ok(self.push(
            Cow::Owned(out),
            Op::Conv {
                x: x.0,
                w: w.0,
                b: b.map(|b| b.0),
                geom,
            },
        ))
    }

    fn check_bn(&self, x: Var, gamma: Var, beta: Var) -> Result<()> {
        let c = self.val(x.0).channels();
        if self.val(gamma.0).len() != c || self.val(beta.0).len() != c {
            return Err(Error::Shape(format!(
                "batch-norm affine parameters do not match {c} channels"
            )));
        }
        Ok(())
    }

    /// Training-mode batch norm; returns the batch statistics so the caller
    /// can update running estimates.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, BatchStats<T>)> {
        self.check_bn(x, gamma, beta)?;
        let (y, stats, xhat) = batch_norm_train(
            self.val(x.0),
            self.val(gamma.0).data(),
            self.val(beta.0).data(),
            eps,
        );
        let op = if self.recording {
            Op::BnTrain {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                invstd: stats.invstd.clone(),
            }
        } else {
            Op::Leaf
        };
        Ok((self.push(Cow::Owned(y), op), stats))
    }

    pub fn batch_norm_infer(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: T,
    ) -> Result<Var> {
        self.check_bn(x, gamma, beta)?;
        let c = self.val(x.0).channels();
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::Shape(format!(
                "batch-norm running statistics do not match {c} channels"
            )));
        }
        let y = batch_norm_infer(
            self.val(x.0),
            self.val(gamma.0).data(),
            self.val(beta.0).data(),
            running_mean,
            running_var,
            eps,
        );
        let op = if self.recording {
            Op::BnInfer {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                running_mean: running_mean.to_vec(),
                running_var: running_var.to_vec(),
                eps,
            }
        } else {
            Op::Leaf
        };
        Ok(self.push(Cow::Owned(y), op))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let y = silu(self.val(x.0));
        self.push(Cow::Owned(y), Op::Silu(x.0))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = relu(self.val(x.0));
        self.push(Cow::Owned(y), Op::Relu(x.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = sigmoid(self.val(x.0));
        self.push(Cow::Owned(y), Op::Sigmoid(x.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = super::ops::add(self.val(a.0), self.val(b.0))?;
        Ok(self.push(Cow::Owned(y), Op::Add(a.0, b.0)))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = concat_channels(self.val(a.0), self.val(b.0))?;
        Ok(self.push(Cow::Owned(y), Op::Concat(a.0, b.0)))
    }

    pub fn upsample2x(&mut self, x: Var) -> Var {
        let y = upsample_nearest_2x(self.val(x.0));
        self.push(Cow::Owned(y), Op::Upsample(x.0))
    }

    /// Propagates the seed gradients back to every node. Seeds are
    /// `(output, d loss / d output)` pairs.
    pub fn backward(&self, seeds: Vec<(Var, Tensor<T>)>) -> Result<Gradients<T>> {
        if !self.recording {
            return Err(Error::State(
                "backward called on a graph that did not record its forward pass".into(),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            if v.0 >= self.nodes.len() {
                return Err(Error::State(format!("seed refers to unknown node {}", v.0)));
            }
            if g.dims() != self.val(v.0).dims() {
                return Err(Error::Shape(format!(
                    "seed gradient {:?} does not match value {:?}",
                    g.dims(),
                    self.val(v.0).dims()
                )));
            }
            accumulate(&mut grads, v.0, g);
        }

        for i in (0..self.nodes.len()).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Conv { x, w, b, geom } => {
                    let cg = conv2d_backward(self.val(*x), self.val(*w), &g, geom, b.is_some());
                    accumulate(&mut grads, *x, cg.input);
                    accumulate(&mut grads, *w, cg.kernel);
                    if let (Some(b), Some(gb)) = (b, cg.bias) {
                        accumulate(&mut grads, *b, Tensor::vector(gb));
                    }
                }
                Op::BnTrain {
                    x,
                    gamma,
                    beta,
                    xhat,
                    invstd,
                } => {
                    let bg = batch_norm_backward(&g, xhat, invstd, self.val(*gamma).data());
                    accumulate(&mut grads, *x, bg.input);
                    accumulate(&mut grads, *gamma, Tensor::vector(bg.gamma));
                    accumulate(&mut grads, *beta, Tensor::vector(bg.beta));
                }
                Op::BnInfer {
                    x,
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                    eps,
                } => {
                    let bg = batch_norm_infer_backward(
                        &g,
                        self.val(*x),
                        self.val(*gamma).data(),
                        running_mean,
                        running_var,
                        *eps,
                    );
                    accumulate(&mut grads, *x, bg.input);
                    accumulate(&mut grads, *gamma, Tensor::vector(bg.gamma));
                    accumulate(&mut grads, *beta, Tensor::vector(bg.beta));
                }
                Op::Silu(x) => {
                    let gx = silu_backward(self.val(*x), &g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Relu(x) => {
                    let gx = relu_backward(self.val(*x), &g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Sigmoid(x) => {
                    let gx = sigmoid_backward(&node.value, &g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Concat(a, b) => {
                    let (ga, gb) = concat_backward(&g, self.val(*a).channels());
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Upsample(x) => {
                    accumulate(&mut grads, *x, upsample_nearest_2x_backward(&g));
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], i: usize, g: Tensor<T>) {
    match &mut grads[i] {
        Some(existing) => {
            if existing.dims() == g.dims() {
                existing.add_assign(&g);
            } else {
                // bias/BN vectors arrive as (C,1,1,1) while the leaf may be stored differently
                let mut reshaped = g.into_data();
                for (a, b) in existing.data_mut().iter_mut().zip(reshaped.drain(..)) {
                    *a = *a + b;
                }
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Gradients of the leaves of a [`Graph`] after [`Graph::backward`].
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_requires_recording() {
        let mut g = Graph::<f64>::inference();
        let x = g.leaf(Tensor::full([1, 1, 2, 2], 1.0));
        let y = g.silu(x);
        let err = g.backward(vec![(y, Tensor::full([1, 1, 2, 2], 1.0))]).err().unwrap();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn add_passes_gradient_through() {
        let mut g = Graph::<f64>::recording();
        let a = g.leaf(Tensor::full([1, 2, 2, 2], 1.0));
        let b = g.leaf(Tensor::full([1, 2, 2, 2], 3.0));
        let y = g.add(a, b).unwrap();
        let seed = Tensor::from_fn([1, 2, 2, 2], |i| i as f64);
        let grads = g.backward(vec![(y, seed.clone())]).unwrap();
        assert_eq!(grads.get(a).unwrap(), &seed);
        assert_eq!(grads.get(b).unwrap(), &seed);
    }

    #[test]
    fn silu_derivative_at_zero() {
        let mut g = Graph::<f64>::recording();
        let x = g.leaf(Tensor::zeros([1, 1, 1, 1]));
        let y = g.silu(x);
        let grads = g.backward(vec![(y, Tensor::full([1, 1, 1, 1], 1.0))]).unwrap();
        assert_eq!(grads.get(x).unwrap().data()[0], 0.5);
    }

    #[test]
    fn shared_input_accumulates() {
        // y = x + x  →  dy/dx = 2
        let mut g = Graph::<f64>::recording();
        let x = g.leaf(Tensor::full([1, 1, 1, 3], 2.0));
        let y = g.add(x, x).unwrap();
        let grads = g.backward(vec![(y, Tensor::full([1, 1, 1, 3], 1.0))]).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 2.0, 2.0]);
    }
}
