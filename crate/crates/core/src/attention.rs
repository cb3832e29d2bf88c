//! Bilinear multi-head attention and additive attention pooling.
//!
//! Both layers take a sequence as an `[m, d]` matrix with one vector per
//! row, plus an optional validity mask over the `m` positions. Masked
//! positions receive exactly zero attention weight, so running on a masked
//! sequence is the same as running on the sequence with those rows removed.

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{Init, ParamId, ParamStore};

/// One attention head: bilinear score matrix `Q_k` (`d x d`) and value
/// projection (`d x d_h`).
#[derive(Clone, Debug)]
pub struct AttnHead {
    pub score: ParamId,
    pub value: ParamId,
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttnParams {
    pub heads: Vec<AttnHead>,
    /// Output projection, `(n * d_h) x d_out`.
    pub out: ParamId,
    pub dim: usize,
    pub head_dim: usize,
    pub out_dim: usize,
}

impl MultiHeadAttnParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        heads: usize,
        head_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || head_dim == 0 {
            return shape_err(format!("{prefix}: need at least one head of width >= 1"));
        }
        let heads = (0..heads)
            .map(|k| AttnHead {
                score: store.add(
                    format!("{prefix}.head{k}.score"),
                    Init::Scaled(1.0).build(&[dim, dim], rng),
                ),
                value: store.add(
                    format!("{prefix}.head{k}.value"),
                    Init::Scaled(1.0).build(&[dim, head_dim], rng),
                ),
            })
            .collect::<Vec<_>>();
        let out = store.add(
            format!("{prefix}.out"),
            Init::Scaled(1.0).build(&[heads.len() * head_dim, out_dim], rng),
        );
        Ok(Self {
            heads,
            out,
            dim,
            head_dim,
            out_dim,
        })
    }

    /// For head `k` and position `i`: weights over `j` are the softmax of
    /// `x_i^T Q_k x_j`; the head context is the weighted sum of value-projected
    /// inputs. Head contexts are concatenated and projected to `d_out`.
    pub fn apply(&self, g: &mut Graph<'_>, x: NodeId, mask: Option<&[bool]>) -> Result<NodeId> {
        let (m, d) = g.value(x).rank2()?;
        if d != self.dim {
            return shape_err(format!("attention expects width {}, got {d}", self.dim));
        }
        if let Some(mask) = mask {
            if mask.len() != m {
                return shape_err(format!("mask length {} for {m} positions", mask.len()));
            }
        }
        let mut contexts = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let q = g.param(head.score);
            let xq = g.matmul(x, q)?;
            let scores = g.matmul_nt(xq, x)?;
            let weights = g.softmax_rows(scores, mask)?;
            let v = g.param(head.value);
            let xv = g.matmul(x, v)?;
            contexts.push(g.matmul(weights, xv)?);
        }
        let cat = g.concat_cols(&contexts)?;
        let out = g.param(self.out);
        g.matmul(cat, out)
    }

    /// Per-head attention weight matrices (`[m, m]` each), for inspection.
    pub fn weights(&self, g: &mut Graph<'_>, x: NodeId, mask: Option<&[bool]>) -> Result<Vec<NodeId>> {
        self.heads
            .iter()
            .map(|head| {
                let q = g.param(head.score);
                let xq = g.matmul(x, q)?;
                let scores = g.matmul_nt(xq, x)?;
                g.softmax_rows(scores, mask)
            })
            .collect()
    }
}

/// Additive attention: query `q` (`1 x d_a`), projection `W` (`d x d_a`),
/// bias `b` (`1 x d_a`).
#[derive(Clone, Debug)]
pub struct AdditiveAttnParams {
    pub query: ParamId,
    pub proj: ParamId,
    pub bias: ParamId,
    pub dim: usize,
    pub attn_dim: usize,
}

impl AdditiveAttnParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        attn_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            query: store.add(
                format!("{prefix}.query"),
                Init::Normal(1.0 / (attn_dim as f64).sqrt()).build(&[1, attn_dim], rng),
            ),
            proj: store.add(
                format!("{prefix}.proj"),
                Init::Scaled(1.0).build(&[dim, attn_dim], rng),
            ),
            bias: store.add(format!("{prefix}.bias"), Init::Zeros.build(&[1, attn_dim], rng)),
            dim,
            attn_dim,
        }
    }

    /// Returns `(weights [1, m], pooled [1, d])` where
    /// `score_i = q^T tanh(W x_i + b)` and `pooled = sum_i weight_i x_i`.
    pub fn apply(&self, g: &mut Graph<'_>, x: NodeId, mask: Option<&[bool]>) -> Result<(NodeId, NodeId)> {
        let (m, d) = g.value(x).rank2()?;
        if d != self.dim {
            return shape_err(format!("additive attention expects width {}, got {d}", self.dim));
        }
        if let Some(mask) = mask {
            if mask.len() != m {
                return shape_err(format!("mask length {} for {m} positions", mask.len()));
            }
        }
        let w = g.param(self.proj);
        let b = g.param(self.bias);
        let q = g.param(self.query);
        let h = g.matmul(x, w)?;
        let h = g.add_row(h, b)?;
        let h = g.tanh(h)?;
        let scores = g.matmul_nt(q, h)?;
        let weights = g.softmax_rows(scores, mask)?;
        let pooled = g.matmul(weights, x)?;
        Ok((weights, pooled))
    }
}

/// Free-function form of [`MultiHeadAttnParams::apply`].
pub fn multi_head_attention(
    g: &mut Graph<'_>,
    x: NodeId,
    params: &MultiHeadAttnParams,
    mask: Option<&[bool]>,
) -> Result<NodeId> {
    params.apply(g, x, mask)
}

/// Free-function form of [`AdditiveAttnParams::apply`].
pub fn additive_attention(
    g: &mut Graph<'_>,
    x: NodeId,
    params: &AdditiveAttnParams,
    mask: Option<&[bool]>,
) -> Result<(NodeId, NodeId)> {
    params.apply(g, x, mask)
}
