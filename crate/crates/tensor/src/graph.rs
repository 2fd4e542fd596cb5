//! Tape of tensor operations with reverse-mode differentiation.

use indexmap::IndexMap;

use crate::error::{invalid, shape_err, Result, TensorError};
use crate::kernels::conv::{conv2d_backward, conv2d_forward, ConvSpec};
use crate::kernels::elementwise::{binary_backward, binary_forward, broadcast_shape, BinaryKind, Unary};
use crate::kernels::freq::{focal_frequency_backward, focal_frequency_forward, FocalCache};
use crate::kernels::linalg::{bmm_backward, bmm_forward, softmax_backward, softmax_forward};
use crate::kernels::norm::{half_instance_norm_backward, half_instance_norm_forward, HinStats};
use crate::kernels::spatial::*;
use crate::params::ParamStore;
use crate::scalar::Float;
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv { spec: ConvSpec, bias: bool },
    Binary(BinaryKind),
    Unary(Unary),
    MaxPool2 { arg: Vec<u32> },
    Upsample2,
    HalfInstanceNorm { stats: HinStats<T> },
    GlobalAvgPool,
    ChannelMeanMax { arg: Vec<u32> },
    Bmm { ta: bool, tb: bool },
    Softmax,
    Reshape,
    SliceChannels { start: usize, end: usize },
    Stack,
    Blur { taps: Vec<f64> },
    Mean,
    MeanAbs,
    MaskedMeanAbs { mask: Tensor<T>, count: usize },
    FocalFrequency { cache: FocalCache<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    parents: Vec<usize>,
    needs_grad: bool,
}

/// A forward computation recorded for differentiation.
///
/// Values are computed eagerly as ops are added. Parameters pulled from a
/// [`ParamStore`] are cached by name so a module applied twice shares one leaf.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: IndexMap<String, Var>,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: IndexMap<String, Var>,
}

impl<T: Float> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of every trainable parameter that took part in the graph.
    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().filter_map(|(name, v)| self.get(*v).map(|g| (name.as_str(), g)))
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name).and_then(|v| self.get(*v))
    }
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: IndexMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: Vec<usize>) -> Var {
        let needs_grad = parents.iter().any(|&p| self.nodes[p].needs_grad);
        self.nodes.push(Node { value, op, parents, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, parents: vec![], needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, parents: vec![], needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Leaf bound to a named parameter. Frozen parameters enter as constants.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let p = store.get(name).ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        let v = if p.trainable { self.leaf(p.value.clone()) } else { self.constant(p.value.clone()) };
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn take_value(&self, v: Var) -> Tensor<T> {
        self.nodes[v.0].value.clone()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let y = conv2d_forward(self.val(x), self.val(w), b.map(|b| self.val(b)), spec)?;
        let mut parents = vec![x.0, w.0];
        if let Some(b) = b {
            parents.push(b.0);
        }
        Ok(self.push(y, Op::Conv { spec, bias: b.is_some() }, parents))
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let y = binary_forward(kind, self.val(a), self.val(b))?;
        Ok(self.push(y, Op::Binary(kind), vec![a.0, b.0]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn unary(&mut self, x: Var, f: Unary) -> Var {
        let y = self.val(x).map(|v| f.apply(v));
        self.push(y, Op::Unary(f), vec![x.0])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(x, Unary::LeakyRelu(slope))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn softplus(&mut self, x: Var, beta: f64) -> Var {
        self.unary(x, Unary::Softplus(beta))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Unary::Scale(c))
    }

    pub fn guided_clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Unary::GuidedClamp(lo, hi))
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let (y, arg) = maxpool2_forward(self.val(x))?;
        Ok(self.push(y, Op::MaxPool2 { arg }, vec![x.0]))
    }

    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let y = upsample2_forward(self.val(x))?;
        Ok(self.push(y, Op::Upsample2, vec![x.0]))
    }

    pub fn half_instance_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (y, stats) = half_instance_norm_forward(self.val(x), self.val(gamma), self.val(beta), HIN_EPS)?;
        Ok(self.push(y, Op::HalfInstanceNorm { stats }, vec![x.0, gamma.0, beta.0]))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let y = global_avg_pool_forward(self.val(x))?;
        Ok(self.push(y, Op::GlobalAvgPool, vec![x.0]))
    }

    pub fn channel_mean_max(&mut self, x: Var) -> Result<Var> {
        let (y, arg) = channel_mean_max_forward(self.val(x))?;
        Ok(self.push(y, Op::ChannelMeanMax { arg }, vec![x.0]))
    }

    /// Batched matrix product of rank-3 operands, optionally transposing either.
    pub fn bmm(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let y = bmm_forward(self.val(a), self.val(b), ta, tb)?;
        Ok(self.push(y, Op::Bmm { ta, tb }, vec![a.0, b.0]))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let y = softmax_forward(self.val(x));
        self.push(y, Op::Softmax, vec![x.0])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.val(x).clone().reshape(shape)?;
        Ok(self.push(y, Op::Reshape, vec![x.0]))
    }

    /// Channels `start..end` of an `N×C×…` tensor.
    pub fn slice_channels(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.val(x);
        if t.shape().len() < 2 || start >= end || end > t.shape()[1] {
            return shape_err("slice_channels", format!("{start}..{end} of {:?}", t.shape()));
        }
        let n = t.shape()[0];
        let c = t.shape()[1];
        let inner: usize = t.shape()[2..].iter().product();
        let mut data = Vec::with_capacity(n * (end - start) * inner);
        for b in 0..n {
            data.extend_from_slice(&t.data()[(b * c + start) * inner..(b * c + end) * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[1] = end - start;
        let y = Tensor::from_vec(&shape, data)?;
        Ok(self.push(y, Op::SliceChannels { start, end }, vec![x.0]))
    }

    /// Stacks equal-shape values along a new leading axis.
    pub fn stack(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(first) = xs.first() else { return invalid("stack", "no inputs") };
        let shape = self.val(*first).shape().to_vec();
        let mut data = Vec::with_capacity(xs.len() * self.val(*first).len());
        for x in xs {
            if self.val(*x).shape() != shape.as_slice() {
                return shape_err("stack", format!("{:?} vs {shape:?}", self.val(*x).shape()));
            }
            data.extend_from_slice(self.val(*x).data());
        }
        let mut out_shape = vec![xs.len()];
        out_shape.extend(shape);
        let y = Tensor::from_vec(&out_shape, data)?;
        Ok(self.push(y, Op::Stack, xs.iter().map(|v| v.0).collect()))
    }

    /// Separable depthwise filter over each `H×W` plane with reflect borders.
    pub fn blur(&mut self, x: Var, taps: &[f64]) -> Var {
        let y = separable_blur(self.val(x), taps);
        self.push(y, Op::Blur { taps: taps.to_vec() }, vec![x.0])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.val(x).mean());
        self.push(y, Op::Mean, vec![x.0])
    }

    /// Mean absolute value.
    pub fn mean_abs(&mut self, x: Var) -> Var {
        let t = self.val(x);
        let s: T = t.data().iter().map(|v| v.abs()).sum();
        let y = Tensor::scalar(s / T::lit(t.len().max(1) as f64));
        self.push(y, Op::MeanAbs, vec![x.0])
    }

    /// Mean absolute value over elements selected by a 0/1 mask that
    /// broadcasts against `x`.
    pub fn masked_mean_abs(&mut self, x: Var, mask: &Tensor<T>) -> Result<Var> {
        let t = self.val(x);
        let shape = broadcast_shape(t.shape(), mask.shape())?;
        if shape != t.shape() {
            return shape_err("masked_mean_abs", format!("mask {:?} does not broadcast to {:?}", mask.shape(), t.shape()));
        }
        let m = binary_forward(BinaryKind::Mul, &Tensor::full(t.shape(), T::one()), mask)?;
        let count = m.data().iter().filter(|&&v| v > T::zero()).count();
        if count == 0 {
            return invalid("masked_mean_abs", "mask selects no elements");
        }
        let s: T = t.data().iter().zip(m.data()).map(|(v, &w)| v.abs() * w).sum();
        let y = Tensor::scalar(s / T::lit(count as f64));
        Ok(self.push(y, Op::MaskedMeanAbs { mask: m, count }, vec![x.0]))
    }

    pub fn focal_frequency(&mut self, pred: Var, target: Var, alpha: f64) -> Result<Var> {
        let (v, cache) = focal_frequency_forward(self.val(pred), self.val(target), alpha)?;
        Ok(self.push(Tensor::scalar(v), Op::FocalFrequency { cache }, vec![pred.0, target.0]))
    }

    /// Reverse pass from a single-element output.
    pub fn backward(&self, out: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[out.0];
        if root.value.len() != 1 {
            return Err(TensorError::NonScalar(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=out.0).map(|_| None).collect();
        grads[out.0] = Some(Tensor::full(root.value.shape(), T::one()));
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || node.parents.is_empty() {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            let parent_grads = self.node_backward(node, &gy)?;
            for (&p, g) in node.parents.iter().zip(parent_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[p].needs_grad {
                    continue;
                }
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads, params: self.params.clone() })
    }

    fn node_backward(&self, node: &Node<T>, gy: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let p = |k: usize| &self.nodes[node.parents[k]].value;
        let wants = |k: usize| self.nodes[node.parents[k]].needs_grad;
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::Conv { spec, bias } => {
                let (gx, gw, gb) = conv2d_backward(p(0), p(1), *spec, gy, wants(0))?;
                let mut v = vec![gx, Some(gw)];
                if *bias {
                    v.push(Some(gb));
                }
                v
            }
            Op::Binary(kind) => {
                let (ga, gb) = binary_backward(*kind, p(0), p(1), gy);
                vec![Some(ga), Some(gb)]
            }
            Op::Unary(f) => {
                let x = p(0);
                let data = x
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .zip(gy.data())
                    .map(|((&x, &y), &g)| f.grad(x, y, g))
                    .collect();
                vec![Some(Tensor::from_vec(x.shape(), data)?)]
            }
            Op::MaxPool2 { arg } => vec![Some(maxpool2_backward(p(0).shape(), arg, gy))],
            Op::Upsample2 => vec![Some(upsample2_backward(gy))],
            Op::HalfInstanceNorm { stats } => {
                let (gx, gg, gb) = half_instance_norm_backward(p(0), p(1), stats, gy);
                vec![Some(gx), Some(gg), Some(gb)]
            }
            Op::GlobalAvgPool => vec![Some(global_avg_pool_backward(p(0).shape(), gy))],
            Op::ChannelMeanMax { arg } => vec![Some(channel_mean_max_backward(p(0).shape(), arg, gy))],
            Op::Bmm { ta, tb } => {
                let (ga, gb) = bmm_backward(p(0), p(1), *ta, *tb, gy);
                vec![Some(ga), Some(gb)]
            }
            Op::Softmax => vec![Some(softmax_backward(&node.value, gy))],
            Op::Reshape => vec![Some(gy.clone().reshape(p(0).shape())?)],
            Op::SliceChannels { start, end } => {
                let x = p(0);
                let (n, c) = (x.shape()[0], x.shape()[1]);
                let inner: usize = x.shape()[2..].iter().product();
                let mut g = vec![T::zero(); x.len()];
                let width = (end - start) * inner;
                for b in 0..n {
                    g[(b * c + start) * inner..(b * c + end) * inner]
                        .copy_from_slice(&gy.data()[b * width..(b + 1) * width]);
                }
                vec![Some(Tensor::from_vec(x.shape(), g)?)]
            }
            Op::Stack => {
                let each = p(0).len();
                (0..node.parents.len())
                    .map(|k| Tensor::from_vec(p(k).shape(), gy.data()[k * each..(k + 1) * each].to_vec()).ok())
                    .collect()
            }
            Op::Blur { taps } => vec![Some(separable_blur_backward(gy, taps))],
            Op::Mean => {
                let x = p(0);
                let g = gy.data()[0] / T::lit(x.len().max(1) as f64);
                vec![Some(Tensor::full(x.shape(), g))]
            }
            Op::MeanAbs => {
                let x = p(0);
                let g = gy.data()[0] / T::lit(x.len().max(1) as f64);
                vec![Some(x.map(|v| sign(v) * g))]
            }
            Op::MaskedMeanAbs { mask, count } => {
                let x = p(0);
                let g = gy.data()[0] / T::lit(*count as f64);
                let data = x.data().iter().zip(mask.data()).map(|(&v, &m)| sign(v) * m * g).collect();
                vec![Some(Tensor::from_vec(x.shape(), data)?)]
            }
            Op::FocalFrequency { cache } => {
                let gp = focal_frequency_backward(p(0).shape(), cache, gy.data()[0]);
                let gt = gp.map(|v| -v);
                vec![Some(gp), Some(gt)]
            }
        })
    }
}

/// Epsilon of the half instance normalization variance.
pub const HIN_EPS: f64 = 1e-5;

fn sign<T: Float>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}
