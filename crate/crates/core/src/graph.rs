//! Computation record with reverse-mode differentiation.
//!
//! A [`Graph`] is a topologically ordered list of op applications. Every op
//! is evaluated eagerly when pushed, so the graph doubles as the forward
//! evaluator; [`Graph::backward`] walks it in reverse to produce gradients.
//! The op vocabulary is closed: only what the recommender needs.

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{self, Tensor};

static NO_PARAMS: ParamStore = ParamStore::new();

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub enum Op {
    Param(ParamId),
    Constant,
    /// `a * b`
    MatMul(NodeId, NodeId),
    /// `a * b^T`
    MatMulNT(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    /// `[m, n] + [1, n]`, the row added to every row.
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// Scalar node times tensor.
    ScaleBy(NodeId, NodeId),
    Affine {
        input: NodeId,
        scale: f64,
        shift: f64,
    },
    Sigmoid(NodeId),
    Tanh(NodeId),
    /// Row-wise softmax; the optional mask selects columns.
    Softmax {
        input: NodeId,
        mask: Option<Vec<bool>>,
    },
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    Row(NodeId, usize),
    Sum(NodeId),
    LogSumExp(NodeId),
    /// Tanh with a wrong derivative, for gradient-check negative controls.
    #[cfg(test)]
    BrokenTanh(NodeId),
}

impl Op {
    pub fn inputs(&self) -> Vec<NodeId> {
        use Op::*;
        match self {
            Param(_) | Constant => vec![],
            MatMul(a, b) | MatMulNT(a, b) | Add(a, b) | AddRow(a, b) | Mul(a, b) | ScaleBy(a, b) => {
                vec![*a, *b]
            }
            Transpose(a) | Sigmoid(a) | Tanh(a) | Row(a, _) | Sum(a) | LogSumExp(a) => vec![*a],
            Affine { input, .. } | Softmax { input, .. } => vec![*input],
            ConcatCols(v) | ConcatRows(v) => v.clone(),
            #[cfg(test)]
            BrokenTanh(a) => vec![*a],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    /// `None` for parameter leaves, which read through to the store.
    value: Option<Tensor>,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    bound: Vec<Option<NodeId>>,
}

impl Graph<'static> {
    /// A graph with no parameter store, for constant-only computations.
    pub fn detached() -> Self {
        Graph::new(&NO_PARAMS)
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            bound: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        let node = &self.nodes[id.0];
        match (&node.value, &node.op) {
            (Some(v), _) => v,
            (None, Op::Param(p)) => self.params.get(*p),
            (None, _) => unreachable!("non-parameter node without a value"),
        }
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.value(id).shape()
    }

    /// The leaf for parameter `id`, created on first use.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.bound[id.0] {
            return n;
        }
        let n = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        self.bound[id.0] = Some(n);
        n
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            op: Op::Constant,
            value: Some(value),
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op) -> Result<NodeId> {
        let value = eval_op(&op, |id| self.value(id))?;
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::MatMul(a, b))
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::MatMulNT(a, b))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Transpose(a))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        self.push(Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Mul(a, b))
    }

    pub fn scale_by(&mut self, scalar: NodeId, a: NodeId) -> Result<NodeId> {
        self.push(Op::ScaleBy(scalar, a))
    }

    pub fn affine(&mut self, a: NodeId, scale: f64, shift: f64) -> Result<NodeId> {
        self.push(Op::Affine {
            input: a,
            scale,
            shift,
        })
    }

    pub fn scale(&mut self, a: NodeId, scale: f64) -> Result<NodeId> {
        self.affine(a, scale, 0.0)
    }

    pub fn one_minus(&mut self, a: NodeId) -> Result<NodeId> {
        self.affine(a, -1.0, 1.0)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Tanh(a))
    }

    pub fn softmax_rows(&mut self, a: NodeId, mask: Option<&[bool]>) -> Result<NodeId> {
        self.push(Op::Softmax {
            input: a,
            mask: mask.map(<[bool]>::to_vec),
        })
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        self.push(Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        self.push(Op::ConcatRows(parts.to_vec()))
    }

    pub fn row(&mut self, a: NodeId, i: usize) -> Result<NodeId> {
        self.push(Op::Row(a, i))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sum(a))
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let m = self.mul(a, b)?;
        self.sum(m)
    }

    pub fn log_sum_exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::LogSumExp(a))
    }

    #[cfg(test)]
    pub(crate) fn broken_tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::BrokenTanh(a))
    }

    /// Inverted dropout as multiplication by a freshly sampled constant mask.
    ///
    /// Kept entries are scaled by `1 / (1 - rate)`; `rate == 0` is the identity.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: NodeId, rate: f64, rng: &mut R) -> Result<NodeId> {
        if rate <= 0.0 {
            return Ok(a);
        }
        let shape = self.shape(a).to_vec();
        let keep = 1.0 / (1.0 - rate);
        let mut mask = Tensor::zeros(&shape);
        for m in mask.data_mut() {
            if rng.gen::<f64>() >= rate {
                *m = keep;
            }
        }
        let m = self.constant(mask);
        self.mul(a, m)
    }

    /// Recomputes every node from the leaves.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Param(p) => self.params.get(p).clone(),
                Op::Constant => node.value.clone().expect("constant value"),
                ref op => eval_op(op, |id| &values[id.0])?,
            };
            values.push(v);
        }
        Ok(values)
    }

    /// True when [`Graph::replay`] reproduces every stored value bit-for-bit.
    pub fn replay_matches(&self) -> Result<bool> {
        let values = self.replay()?;
        Ok(values
            .iter()
            .enumerate()
            .all(|(i, v)| v.bit_eq(self.value(NodeId(i)))))
    }

    /// Gradients of a scalar node with respect to every node it depends on.
    pub fn backward(&self, loss: NodeId) -> Result<GradientMap> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(NodeId(i), &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(GradientMap { grads })
    }

    fn propagate(&self, id: NodeId, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let out = self.value(id);
        let mut acc = |target: NodeId, t: Tensor| match &mut grads[target.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        match &self.nodes[id.0].op {
            Op::Param(_) | Op::Constant => {}
            Op::MatMul(a, b) => {
                acc(*a, g.matmul_nt(self.value(*b))?);
                acc(*b, self.value(*a).matmul_tn(g)?);
            }
            Op::MatMulNT(a, b) => {
                acc(*a, g.matmul(self.value(*b))?);
                acc(*b, g.matmul_tn(self.value(*a))?);
            }
            Op::Transpose(a) => acc(*a, g.transpose()?),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRow(a, b) => {
                let (m, n) = g.rank2()?;
                let mut col = Tensor::zeros(&[1, n]);
                for i in 0..m {
                    for (c, v) in col.data_mut().iter_mut().zip(g.row_slice(i)) {
                        *c += v;
                    }
                }
                acc(*a, g.clone());
                acc(*b, col);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, zip_map(g, vb, |x, y| x * y));
                acc(*b, zip_map(g, va, |x, y| x * y));
            }
            Op::ScaleBy(s, b) => {
                let (vs, vb) = (self.value(*s).item(), self.value(*b));
                let ds = tensor::dot(g.data(), vb.data());
                acc(*s, Tensor::filled(self.value(*s).shape(), ds));
                acc(*b, g.map(|x| x * vs));
            }
            Op::Affine { input, scale, .. } => acc(*input, g.map(|x| x * scale)),
            Op::Sigmoid(a) => acc(*a, zip_map(g, out, |x, y| x * y * (1.0 - y))),
            Op::Tanh(a) => acc(*a, zip_map(g, out, |x, y| x * (1.0 - y * y))),
            #[cfg(test)]
            Op::BrokenTanh(a) => acc(*a, zip_map(g, out, |x, y| x * (1.0 - y))),
            Op::Softmax { input, .. } => {
                let (m, n) = out.rank2()?;
                let mut d = Tensor::zeros(&[m, n]);
                for i in 0..m {
                    let y = out.row_slice(i);
                    let gy = g.row_slice(i);
                    let inner = tensor::dot(y, gy);
                    let dr = &mut d.data_mut()[i * n..(i + 1) * n];
                    for j in 0..n {
                        dr[j] = y[j] * (gy[j] - inner);
                    }
                }
                acc(*input, d);
            }
            Op::ConcatCols(parts) => {
                let (m, n) = g.rank2()?;
                let mut offset = 0;
                for p in parts {
                    let (_, w) = self.value(*p).rank2()?;
                    let mut piece = Vec::with_capacity(m * w);
                    for i in 0..m {
                        piece.extend_from_slice(&g.data()[i * n + offset..i * n + offset + w]);
                    }
                    acc(*p, Tensor::matrix(m, w, piece)?);
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let (_, n) = g.rank2()?;
                let mut offset = 0;
                for p in parts {
                    let (r, _) = self.value(*p).rank2()?;
                    let piece = g.data()[offset * n..(offset + r) * n].to_vec();
                    acc(*p, Tensor::matrix(r, n, piece)?);
                    offset += r;
                }
            }
            Op::Row(a, i) => {
                let mut d = Tensor::zeros(self.value(*a).shape());
                let n = g.numel();
                d.data_mut()[i * n..(i + 1) * n].copy_from_slice(g.data());
                acc(*a, d);
            }
            Op::Sum(a) => acc(*a, Tensor::filled(self.value(*a).shape(), g.item())),
            Op::LogSumExp(a) => {
                let y = out.item();
                let gv = g.item();
                acc(*a, self.value(*a).map(|x| gv * (x - y).exp()));
            }
        }
        Ok(())
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        shape_err(format!("{what}: {:?} vs {:?}", a.shape(), b.shape()))
    }
}

fn eval_op<'a>(op: &Op, get: impl Fn(NodeId) -> &'a Tensor) -> Result<Tensor> {
    Ok(match op {
        Op::Param(_) | Op::Constant => unreachable!("leaves are not evaluated"),
        Op::MatMul(a, b) => get(*a).matmul(get(*b))?,
        Op::MatMulNT(a, b) => get(*a).matmul_nt(get(*b))?,
        Op::Transpose(a) => get(*a).transpose()?,
        Op::Add(a, b) => {
            let (a, b) = (get(*a), get(*b));
            same_shape(a, b, "add")?;
            zip_map(a, b, |x, y| x + y)
        }
        Op::AddRow(a, b) => {
            let (a, b) = (get(*a), get(*b));
            let (m, n) = a.rank2()?;
            if b.shape() != [1, n] {
                return shape_err(format!("add_row: [{m},{n}] + {:?}", b.shape()));
            }
            let mut out = a.clone();
            for i in 0..m {
                for (o, v) in out.data_mut()[i * n..(i + 1) * n].iter_mut().zip(b.data()) {
                    *o += v;
                }
            }
            out
        }
        Op::Mul(a, b) => {
            let (a, b) = (get(*a), get(*b));
            same_shape(a, b, "mul")?;
            zip_map(a, b, |x, y| x * y)
        }
        Op::ScaleBy(s, b) => {
            let s = get(*s);
            if !s.is_scalar() {
                return shape_err(format!("scale_by needs a scalar, got {:?}", s.shape()));
            }
            let s = s.item();
            get(*b).map(|x| s * x)
        }
        Op::Affine { input, scale, shift } => get(*input).map(|x| scale * x + shift),
        Op::Sigmoid(a) => get(*a).map(tensor::sigmoid),
        Op::Tanh(a) => get(*a).map(f64::tanh),
        #[cfg(test)]
        Op::BrokenTanh(a) => get(*a).map(f64::tanh),
        Op::Softmax { input, mask } => {
            let x = get(*input);
            let (m, n) = x.rank2()?;
            let mut out = Tensor::zeros(&[m, n]);
            for i in 0..m {
                tensor::softmax_into(
                    x.row_slice(i),
                    mask.as_deref(),
                    &mut out.data_mut()[i * n..(i + 1) * n],
                )?;
            }
            out
        }
        Op::ConcatCols(parts) => {
            let (m, _) = get(parts[0]).rank2()?;
            let mut widths = Vec::with_capacity(parts.len());
            for p in parts {
                let (r, w) = get(*p).rank2()?;
                if r != m {
                    return shape_err(format!("concat_cols: {r} rows vs {m}"));
                }
                widths.push(w);
            }
            let n: usize = widths.iter().sum();
            let mut data = Vec::with_capacity(m * n);
            for i in 0..m {
                for p in parts {
                    data.extend_from_slice(get(*p).row_slice(i));
                }
            }
            Tensor::matrix(m, n, data)?
        }
        Op::ConcatRows(parts) => {
            let (_, n) = get(parts[0]).rank2()?;
            let mut data = Vec::new();
            let mut m = 0;
            for p in parts {
                let (r, w) = get(*p).rank2()?;
                if w != n {
                    return shape_err(format!("concat_rows: width {w} vs {n}"));
                }
                data.extend_from_slice(get(*p).data());
                m += r;
            }
            Tensor::matrix(m, n, data)?
        }
        Op::Row(a, i) => {
            let a = get(*a);
            let (m, _) = a.rank2()?;
            if *i >= m {
                return shape_err(format!("row {i} of {m}"));
            }
            Tensor::row(a.row_slice(*i))
        }
        Op::Sum(a) => Tensor::scalar(get(*a).data().iter().sum()),
        Op::LogSumExp(a) => Tensor::scalar(tensor::log_sum_exp(get(*a).data())),
    })
}

/// Gradients indexed by node.
#[derive(Clone, Debug)]
pub struct GradientMap {
    grads: Vec<Option<Tensor>>,
}

impl GradientMap {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradients aligned with the graph's parameter store; parameters that do
    /// not reach the loss get zeros.
    pub fn param_grads(&self, graph: &Graph<'_>) -> Vec<Tensor> {
        graph
            .params
            .iter()
            .map(|(pid, _, t)| {
                graph.bound[pid.0]
                    .and_then(|n| self.get(n).cloned())
                    .unwrap_or_else(|| Tensor::zeros(t.shape()))
            })
            .collect()
    }

    /// Adds this map's parameter gradients into `into`.
    pub fn accumulate_param_grads(&self, graph: &Graph<'_>, into: &mut [Tensor]) {
        for (i, slot) in graph.bound.iter().enumerate() {
            if let Some(g) = slot.and_then(|n| self.get(n)) {
                into[i].add_assign(g);
            }
        }
    }
}
