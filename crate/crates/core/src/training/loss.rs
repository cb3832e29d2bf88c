use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::tensor::{log_sum_exp, Tensor};

/// Negative log softmax probability of the positive among itself and the
/// negatives.
pub fn nce_loss(positive: f64, negatives: &[f64]) -> f64 {
    let mut all = Vec::with_capacity(negatives.len() + 1);
    all.push(positive);
    all.extend_from_slice(negatives);
    log_sum_exp(&all) - positive
}

/// Graph form of [`nce_loss`] for a `[1, 1 + K]` score row whose first entry
/// is the positive.
pub fn nce_loss_node(g: &mut Graph<'_>, scores: NodeId) -> Result<NodeId> {
    let n = g.shape(scores)[1];
    let mut pick = vec![0.0; n];
    pick[0] = 1.0;
    let pick = g.constant(Tensor::row(&pick));
    let pos = g.dot(scores, pick)?;
    let lse = g.log_sum_exp(scores)?;
    let neg_pos = g.scale(pos, -1.0)?;
    g.add(lse, neg_pos)
}
