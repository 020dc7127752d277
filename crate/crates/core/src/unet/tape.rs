//! Reverse-mode autodiff over a linear tape of tensor ops.

use super::tensor::{self as t, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv3d { x: Var, w: Var, b: Var },
    Relu { x: Var },
    MaxPool { x: Var, arg: Vec<usize> },
    UpConv { x: Var, w: Var, b: Var },
    Concat { a: Var, b: Var },
    Softmax { x: Var },
    Dice { p: Var, target: Tensor, smooth: f64 },
    WeightedSum { x: Var, weights: Tensor },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf without a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn conv3d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = t::conv3d(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(y, Op::Conv3d { x, w, b }, &[x, w, b]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = t::relu(self.value(x));
        self.push(y, Op::Relu { x }, &[x])
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let (y, arg) = t::maxpool2(self.value(x))?;
        Ok(self.push(y, Op::MaxPool { x, arg }, &[x]))
    }

    pub fn upconv2(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = t::upconv2(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(y, Op::UpConv { x, w, b }, &[x, w, b]))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = t::concat_channels(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::Concat { a, b }, &[a, b]))
    }

    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let y = t::softmax_channels(self.value(x))?;
        Ok(self.push(y, Op::Softmax { x }, &[x]))
    }

    pub fn dice_loss(&mut self, p: Var, target: Tensor, smooth: f64) -> Result<Var> {
        let l = t::dice_loss(self.value(p), &target, smooth)?;
        Ok(self.push(Tensor::scalar(l), Op::Dice { p, target, smooth }, &[p]))
    }

    /// `sum(x * weights)`, a scalar probe used for gradient checks.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape != weights.shape {
            return Err(Error::Shape {
                op: "weighted_sum",
                axis: "elements",
                expected: xv.len(),
                found: weights.len(),
            });
        }
        let s = xv.data.iter().zip(&weights.data).map(|(a, b)| a * b).sum();
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { x, weights }, &[x]))
    }

    /// Gradients of scalar `loss` with respect to every node that requires one.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape {
                op: "backward",
                axis: "elements",
                expected: 1,
                found: self.value(loss).len(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let accumulate = |grads: &mut Vec<Option<Tensor>>, v: Var, g: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&g),
                slot => *slot = Some(g),
            }
        };
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::Conv3d { x, w, b } => {
                    let need_x = self.nodes[x.0].requires_grad;
                    let (gx, gw, gb) = t::conv3d_backward(self.value(*x), self.value(*w), &g, need_x);
                    if let Some(gx) = gx {
                        accumulate(&mut grads, *x, gx);
                    }
                    accumulate(&mut grads, *w, gw);
                    accumulate(&mut grads, *b, reshape_like(gb, self.value(*b)));
                }
                Op::Relu { x } => {
                    let gx = t::relu_backward(self.value(*x), &g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::MaxPool { x, arg } => {
                    let gx = t::maxpool2_backward(self.value(*x).shape, arg, &g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::UpConv { x, w, b } => {
                    let need_x = self.nodes[x.0].requires_grad;
                    let (gx, gw, gb) = t::upconv2_backward(self.value(*x), self.value(*w), &g, need_x);
                    if let Some(gx) = gx {
                        accumulate(&mut grads, *x, gx);
                    }
                    accumulate(&mut grads, *w, gw);
                    accumulate(&mut grads, *b, reshape_like(gb, self.value(*b)));
                }
                Op::Concat { a, b } => {
                    let (ga, gb) = t::concat_backward(self.value(*a).shape, self.value(*b).shape, &g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Softmax { x } => {
                    let gx = t::softmax_backward(&node.value, &g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Dice { p, target, smooth } => {
                    let gp = t::dice_loss_backward(self.value(*p), target, *smooth, g.data[0]);
                    accumulate(&mut grads, *p, gp);
                }
                Op::WeightedSum { x, weights } => {
                    let s = g.data[0];
                    let gx = Tensor {
                        shape: weights.shape,
                        data: weights.data.iter().map(|w| w * s).collect(),
                    };
                    accumulate(&mut grads, *x, gx);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn reshape_like(mut g: Tensor, like: &Tensor) -> Tensor {
    g.shape = like.shape;
    g
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf, `None` if it did not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}
