use std::cell::Cell;
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use super::kernels::{self, ConvDims};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

static NEXT_GRAPH_ID: AtomicU32 = AtomicU32::new(1);

thread_local! {
    static LIVE_NODES: Cell<usize> = const { Cell::new(0) };
    static PEAK_NODES: Cell<usize> = const { Cell::new(0) };
}

/// Instrumentation for the number of graph nodes alive on this thread.
pub mod meter {
    use super::{LIVE_NODES, PEAK_NODES};

    pub fn live_nodes() -> usize {
        LIVE_NODES.with(|c| c.get())
    }

    /// High-water mark since the last [`reset_peak`].
    pub fn peak_nodes() -> usize {
        PEAK_NODES.with(|c| c.get())
    }

    /// Resets the high-water mark to the current live count.
    pub fn reset_peak() {
        PEAK_NODES.with(|p| p.set(live_nodes()));
    }

    pub(super) fn add(n: usize) {
        let live = LIVE_NODES.with(|c| {
            let v = c.get() + n;
            c.set(v);
            v
        });
        PEAK_NODES.with(|p| p.set(p.get().max(live)));
    }

    pub(super) fn remove(n: usize) {
        LIVE_NODES.with(|c| c.set(c.get() - n));
    }
}

/// Handle to a node of one particular [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    graph: u32,
    index: u32,
}

impl Var {
    /// Position of the node in its graph. Graphs that register the same
    /// leaves in the same order give them the same index.
    pub fn index(self) -> usize {
        self.index as usize
    }
}

/// An operation defined outside this module (rendering, losses).
///
/// `backward` receives the gradient of the op's output and adds the
/// vector-Jacobian products into its parents through the [`GradSink`].
pub trait CustomOp {
    fn name(&self) -> &'static str;
    fn parents(&self) -> Vec<Var>;
    fn backward(&self, out_grad: &[f32], sink: &mut GradSink<'_>);
}

enum Op {
    Leaf,
    Constant,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Relu(Var),
    MaxPool2x2 {
        input: Var,
        argmax: Vec<u32>,
    },
    ChannelAffine {
        input: Var,
        scale: Vec<f32>,
    },
    ConcatChannels(Vec<Var>),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Sum(Var),
    Mean(Var),
    Custom(Box<dyn CustomOp>),
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Append-only computation graph recorded during a forward pass.
///
/// Parents always precede children, so reverse insertion order is a valid
/// topological order for [`Graph::backward`]. A graph is consumed by its
/// backward pass; build a fresh one for every forward evaluation.
pub struct Graph {
    id: u32,
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Drop for Graph {
    fn drop(&mut self) {
        meter::remove(self.nodes.len());
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Arc<Tensor>, op: Op, requires_grad: bool) -> Var {
        let index = self.nodes.len() as u32;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        meter::add(1);
        Var {
            graph: self.id,
            index,
        }
    }

    fn check(&self, var: Var) -> Result<()> {
        if var.graph != self.id || var.index() >= self.nodes.len() {
            return Err(Error::InvalidState(format!(
                "node {} does not belong to this graph",
                var.index
            )));
        }
        Ok(())
    }

    fn node(&self, var: Var) -> &Node {
        assert_eq!(var.graph, self.id, "variable from a different graph");
        &self.nodes[var.index()]
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.node(var).value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.value(var).shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.node(var).requires_grad
    }

    /// Builds a tensor from raw parts and records it, as a differentiable
    /// leaf when `requires_grad`, otherwise as a constant.
    pub fn tensor(&mut self, shape: &[usize], data: Vec<f32>, requires_grad: bool) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(if requires_grad {
            self.leaf(t)
        } else {
            self.constant(t)
        })
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Arc::new(value), Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Arc::new(value), Op::Constant, false)
    }

    /// Constant that shares its storage (e.g. frozen network weights).
    pub fn shared_constant(&mut self, value: Arc<Tensor>) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Records a [`CustomOp`] whose forward value was computed by the caller.
    pub fn custom(&mut self, op: Box<dyn CustomOp>, value: Tensor) -> Var {
        let requires_grad = op.parents().iter().any(|&p| self.requires_grad(p));
        self.push(Arc::new(value), Op::Custom(op), requires_grad)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.node(v).requires_grad)
    }

    /// 3×3, stride 1, zero-padding 1 convolution of a C×H×W input.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let &[c, h, wd] = x.shape() else {
            return Err(Error::invalid(format!(
                "conv2d input must be C×H×W, got {:?}",
                x.shape()
            )));
        };
        let &[o, wc, kh, kw] = w.shape() else {
            return Err(Error::invalid(format!(
                "conv2d weight must be O×C×3×3, got {:?}",
                w.shape()
            )));
        };
        if wc != c || kh != kernels::KSIZE || kw != kernels::KSIZE {
            return Err(Error::invalid(format!(
                "conv2d weight {:?} does not fit input {:?}",
                w.shape(),
                x.shape()
            )));
        }
        if b.shape() != [o] {
            return Err(Error::invalid(format!(
                "conv2d bias must have shape [{o}], got {:?}",
                b.shape()
            )));
        }
        let dims = ConvDims {
            in_channels: c,
            out_channels: o,
            height: h,
            width: wd,
        };
        let out = kernels::conv2d_forward(&dims, x.data(), w.data(), b.data());
        let value = Tensor::new(&[o, h, wd], out)?;
        let rg = self.any_grad(&[input, weight, bias]);
        Ok(self.push(
            Arc::new(value),
            Op::Conv2d {
                input,
                weight,
                bias,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let value = self.value(input).map(|v| v.max(0.0));
        let rg = self.requires_grad(input);
        self.push(Arc::new(value), Op::Relu(input), rg)
    }

    pub fn maxpool2x2(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let &[c, h, w] = x.shape() else {
            return Err(Error::invalid(format!(
                "maxpool input must be C×H×W, got {:?}",
                x.shape()
            )));
        };
        if h < 2 || w < 2 {
            return Err(Error::invalid(format!(
                "maxpool needs H,W ≥ 2, got {h}×{w}"
            )));
        }
        let (out, argmax) = kernels::maxpool2x2_forward(x.data(), c, h, w);
        let value = Tensor::new(&[c, h / 2, w / 2], out)?;
        let rg = self.requires_grad(input);
        Ok(self.push(Arc::new(value), Op::MaxPool2x2 { input, argmax }, rg))
    }

    /// Per-channel `x·scale[c] + shift[c]` on a C×H×W tensor.
    pub fn channel_affine(&mut self, input: Var, scale: &[f32], shift: &[f32]) -> Result<Var> {
        let x = self.value(input);
        let shape = x.shape();
        if shape.len() != 3 || shape[0] != scale.len() || shape[0] != shift.len() {
            return Err(Error::invalid(format!(
                "channel_affine with {} channels on shape {shape:?}",
                scale.len()
            )));
        }
        let plane = shape[1] * shape[2];
        let mut out = x.data().to_vec();
        for (c, chunk) in out.chunks_exact_mut(plane).enumerate() {
            for v in chunk {
                *v = *v * scale[c] + shift[c];
            }
        }
        let value = Tensor::new(shape, out)?;
        let rg = self.requires_grad(input);
        Ok(self.push(
            Arc::new(value),
            Op::ChannelAffine {
                input,
                scale: scale.to_vec(),
            },
            rg,
        ))
    }

    /// Concatenates C_i×H×W tensors along the channel axis.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return Err(Error::invalid("concat of zero tensors"));
        };
        let spatial = self.shape(first).get(1..).map(<[usize]>::to_vec);
        let mut channels = 0;
        let mut data = Vec::new();
        for &v in inputs {
            let t = self.value(v);
            if t.shape().len() != 3 || Some(t.shape()[1..].to_vec()) != spatial {
                return Err(Error::invalid(format!(
                    "concat spatial mismatch: {:?}",
                    t.shape()
                )));
            }
            channels += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let spatial = spatial.unwrap_or_default();
        let value = Tensor::new(&[channels, spatial[0], spatial[1]], data)?;
        let rg = self.any_grad(inputs);
        Ok(self.push(Arc::new(value), Op::ConcatChannels(inputs.to_vec()), rg))
    }

    fn binary(&mut self, a: Var, b: Var, what: &str) -> Result<Vec<(f32, f32)>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::invalid(format!(
                "{what}: shapes {:?} and {:?} differ",
                ta.shape(),
                tb.shape()
            )));
        }
        Ok(ta.data().iter().copied().zip(tb.data().iter().copied()).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let data = self.binary(a, b, "add")?.into_iter().map(|(x, y)| x + y).collect();
        let value = Tensor::new(self.shape(a), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Arc::new(value), Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let data = self.binary(a, b, "sub")?.into_iter().map(|(x, y)| x - y).collect();
        let value = Tensor::new(self.shape(a), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Arc::new(value), Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let data = self.binary(a, b, "mul")?.into_iter().map(|(x, y)| x * y).collect();
        let value = Tensor::new(self.shape(a), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Arc::new(value), Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, input: Var, factor: f32) -> Var {
        let value = self.value(input).map(|v| v * factor);
        let rg = self.requires_grad(input);
        self.push(Arc::new(value), Op::Scale(input, factor), rg)
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let value = Tensor::scalar(self.value(input).sum());
        let rg = self.requires_grad(input);
        self.push(Arc::new(value), Op::Sum(input), rg)
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let t = self.value(input);
        let value = Tensor::scalar(t.sum() / t.numel() as f32);
        let rg = self.requires_grad(input);
        self.push(Arc::new(value), Op::Mean(input), rg)
    }

    /// Reverse pass from a scalar root.
    pub fn backward(self, root: Var) -> Result<GradStore> {
        self.check(root)?;
        let value = self.value(root);
        if !value.is_scalar() {
            return Err(Error::invalid(format!(
                "backward root must be scalar, got shape {:?}",
                value.shape()
            )));
        }
        let seed = Tensor::full(value.shape(), 1.0);
        self.backward_with_seed(root, &seed)
    }

    /// Reverse pass seeded with an arbitrary upstream gradient for `root`
    /// (a vector-Jacobian product).
    pub fn backward_with_seed(self, root: Var, seed: &Tensor) -> Result<GradStore> {
        self.check(root)?;
        if seed.shape() != self.shape(root) {
            return Err(Error::invalid(format!(
                "seed shape {:?} does not match root shape {:?}",
                seed.shape(),
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.index()] = Some(seed.data().to_vec());
        let mut store = GradStore::default();

        for index in (0..=root.index()).rev() {
            let node = &self.nodes[index];
            if !node.requires_grad {
                continue;
            }
            let Some(grad) = grads[index].take() else {
                continue;
            };
            if let Op::Leaf = node.op {
                store.grads.insert(
                    index,
                    Tensor::new(node.value.shape(), grad).expect("gradient shape"),
                );
                continue;
            }
            let mut sink = GradSink {
                graph: &self,
                grads: &mut grads[..index],
            };
            sink.propagate(&node.op, &node.value, &grad);
        }
        Ok(store)
    }
}

/// Mutable access to parent gradients during the reverse pass. Buffers are
/// allocated lazily; parents that do not require gradients yield `None`.
pub struct GradSink<'a> {
    graph: &'a Graph,
    grads: &'a mut [Option<Vec<f32>>],
}

impl GradSink<'_> {
    pub fn grad_mut(&mut self, var: Var) -> Option<&mut [f32]> {
        let node = self.graph.node(var);
        if !node.requires_grad {
            return None;
        }
        let numel = node.value.numel();
        Some(self.grads[var.index()].get_or_insert_with(|| vec![0.0; numel]))
    }

    pub fn value(&self, var: Var) -> &Tensor {
        self.graph.value(var)
    }

    fn add_to(&mut self, var: Var, f: impl Fn(usize) -> f32) {
        if let Some(g) = self.grad_mut(var) {
            for (i, gi) in g.iter_mut().enumerate() {
                *gi += f(i);
            }
        }
    }

    fn propagate(&mut self, op: &Op, out: &Tensor, grad: &[f32]) {
        match op {
            Op::Leaf | Op::Constant => {}
            Op::Conv2d {
                input,
                weight,
                bias,
            } => {
                let graph = self.graph;
                let x = graph.value(*input);
                let w = graph.value(*weight);
                let dims = ConvDims {
                    in_channels: x.shape()[0],
                    out_channels: w.shape()[0],
                    height: x.shape()[1],
                    width: x.shape()[2],
                };
                // Disjoint indices, so take the buffers out one at a time.
                let mut take = |v: Var| {
                    self.grad_mut(v)?;
                    self.grads[v.index()].take()
                };
                let mut dx = take(*input);
                let mut dw = take(*weight);
                let mut db = take(*bias);
                kernels::conv2d_backward(
                    &dims,
                    x.data(),
                    w.data(),
                    grad,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                for (v, g) in [(*input, dx), (*weight, dw), (*bias, db)] {
                    if g.is_some() {
                        self.grads[v.index()] = g;
                    }
                }
            }
            Op::Relu(x) => {
                let xv = self.graph.value(*x).data();
                self.add_to(*x, |i| if xv[i] > 0.0 { grad[i] } else { 0.0 });
            }
            Op::MaxPool2x2 { input, argmax } => {
                if let Some(g) = self.grad_mut(*input) {
                    for (&src, &up) in argmax.iter().zip(grad) {
                        g[src as usize] += up;
                    }
                }
            }
            Op::ChannelAffine { input, scale } => {
                let plane = out.shape()[1] * out.shape()[2];
                self.add_to(*input, |i| grad[i] * scale[i / plane]);
            }
            Op::ConcatChannels(inputs) => {
                let mut offset = 0;
                for &v in inputs {
                    let n = self.graph.value(v).numel();
                    let part = &grad[offset..offset + n];
                    self.add_to(v, |i| part[i]);
                    offset += n;
                }
            }
            Op::Add(a, b) => {
                self.add_to(*a, |i| grad[i]);
                self.add_to(*b, |i| grad[i]);
            }
            Op::Sub(a, b) => {
                self.add_to(*a, |i| grad[i]);
                self.add_to(*b, |i| -grad[i]);
            }
            Op::Mul(a, b) => {
                let graph = self.graph;
                let (av, bv) = (graph.value(*a).data(), graph.value(*b).data());
                self.add_to(*a, |i| grad[i] * bv[i]);
                self.add_to(*b, |i| grad[i] * av[i]);
            }
            Op::Scale(x, factor) => self.add_to(*x, |i| grad[i] * factor),
            Op::Sum(x) => self.add_to(*x, |_| grad[0]),
            Op::Mean(x) => {
                let n = self.graph.value(*x).numel() as f32;
                self.add_to(*x, |_| grad[0] / n);
            }
            Op::Custom(op) => op.backward(grad, self),
        }
    }
}

/// Gradients of the differentiable leaves, keyed by node index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradStore {
    grads: BTreeMap<usize, Tensor>,
}

impl GradStore {
    pub fn get(&self, leaf: Var) -> Option<&Tensor> {
        self.grads.get(&leaf.index())
    }

    pub fn get_index(&self, index: usize) -> Option<&Tensor> {
        self.grads.get(&index)
    }

    pub fn take(&mut self, leaf: Var) -> Option<Tensor> {
        self.grads.remove(&leaf.index())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Tensor)> {
        self.grads.iter().map(|(&k, v)| (k, v))
    }

    pub fn insert_index(&mut self, index: usize, grad: Tensor) {
        self.grads.insert(index, grad);
    }

    /// Adds `other` into `self`, leaf by leaf (matched by index).
    pub fn accumulate(&mut self, other: &GradStore) {
        for (&k, g) in &other.grads {
            match self.grads.get_mut(&k) {
                Some(mine) => mine.add_assign(g),
                None => {
                    self.grads.insert(k, g.clone());
                }
            }
        }
    }
}
