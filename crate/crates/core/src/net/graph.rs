//! Minimal reverse-mode tape over [`Tensor4`] values.

use crate::error::Result;
use crate::net::ops::{conv2d, conv2d_backward, sigmoid, upsample_bilinear_x2, upsample_bilinear_x2_backward, ConvCache};
use crate::net::tensor::Tensor4;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

/// Output gradients that start a backward pass.
pub type Seeds<T> = Vec<(NodeId, Tensor4<T>)>;

enum Op<T> {
    Input,
    Param(usize),
    Conv { x: NodeId, w: NodeId, b: NodeId, cache: ConvCache<T> },
    Relu(NodeId),
    Sigmoid(NodeId),
    Add(NodeId, NodeId),
    Concat(NodeId, NodeId),
    Upsample(NodeId),
}

struct Node<T> {
    value: Tensor4<T>,
    op: Op<T>,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor4<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor4<T> {
        &self.nodes[id.0].value
    }

    pub fn input(&mut self, value: Tensor4<T>) -> NodeId {
        self.push(value, Op::Input)
    }

    /// A leaf whose gradient is reported under `index` by [`Graph::backward`].
    pub fn param(&mut self, index: usize, value: Tensor4<T>) -> NodeId {
        self.push(value, Op::Param(index))
    }

    pub fn conv(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize) -> Result<NodeId> {
        let (out, cache) = conv2d(self.value(x), self.value(w), self.value(b), stride)?;
        Ok(self.push(out, Op::Conv { x, w, b, cache }))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| v.max(T::zero()));
        self.push(out, Op::Relu(x))
    }

    /// Sign of every ReLU input (`true` where positive), in tape order.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => Some(self.value(x).data().iter().map(|&v| v > T::zero())),
                _ => None,
            })
            .flatten()
            .collect()
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    /// Channel-wise concatenation.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        let [n, ca, h, w] = va.shape();
        let cb = vb.channels();
        debug_assert_eq!(vb.shape(), [n, cb, h, w]);
        let mut data = Vec::with_capacity(va.len() + vb.len());
        for i in 0..n {
            data.extend_from_slice(va.item(i));
            data.extend_from_slice(vb.item(i));
        }
        let out = Tensor4::new([n, ca + cb, h, w], data).expect("consistent shapes");
        self.push(out, Op::Concat(a, b))
    }

    pub fn upsample(&mut self, x: NodeId) -> NodeId {
        let out = upsample_bilinear_x2(self.value(x));
        self.push(out, Op::Upsample(x))
    }

    /// Back-propagates the given output gradients. Returns `(param index,
    /// gradient)` pairs for every parameter leaf reached.
    pub fn backward(&self, seeds: Seeds<T>) -> Vec<(usize, Tensor4<T>)> {
        let mut grads: Vec<Option<Tensor4<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        fn acc<T: Scalar>(grads: &mut [Option<Tensor4<T>>], id: NodeId, g: Tensor4<T>) {
            match &mut grads[id.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
        for (id, g) in seeds {
            acc(&mut grads, id, g);
        }
        let mut params = Vec::new();
        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(p) => params.push((*p, g)),
                Op::Conv { x, w, b, cache } => {
                    let cg = conv2d_backward(cache, self.value(*w), &g);
                    acc(&mut grads, *x, cg.input);
                    acc(&mut grads, *w, cg.weight);
                    acc(&mut grads, *b, cg.bias);
                }
                Op::Relu(x) => {
                    let mut d = g;
                    for (dv, &y) in d.data_mut().iter_mut().zip(node.value.data()) {
                        if y <= T::zero() {
                            *dv = T::zero();
                        }
                    }
                    acc(&mut grads, *x, d);
                }
                Op::Sigmoid(x) => {
                    let mut d = g;
                    for (dv, &y) in d.data_mut().iter_mut().zip(node.value.data()) {
                        *dv *= y * (T::one() - y);
                    }
                    acc(&mut grads, *x, d);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Concat(a, b) => {
                    let sa = self.value(*a).shape();
                    let sb = self.value(*b).shape();
                    let mut da = Vec::with_capacity(self.value(*a).len());
                    let mut db = Vec::with_capacity(self.value(*b).len());
                    let la = self.value(*a).item_len();
                    for i in 0..sa[0] {
                        let item = g.item(i);
                        da.extend_from_slice(&item[..la]);
                        db.extend_from_slice(&item[la..]);
                    }
                    acc(&mut grads, *a, Tensor4::new(sa, da).expect("shape"));
                    acc(&mut grads, *b, Tensor4::new(sb, db).expect("shape"));
                }
                Op::Upsample(x) => acc(&mut grads, *x, upsample_bilinear_x2_backward(&g)),
            }
        }
        params
    }
}
