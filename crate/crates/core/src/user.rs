//! User modelling: an order-sensitive temporal vector from a GRU over the
//! self-attended click history, an order-free preference vector from
//! attention pooling, and the click score that mixes them.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::attention::{AdditiveAttnParams, MultiHeadAttnParams};
use crate::error::{shape_err, Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{Init, ParamId, ParamStore};
use crate::tensor::{self, Tensor};

/// Ordered click history, oldest first. Padding slots have `valid == false`.
#[derive(Clone, Debug, PartialEq)]
pub struct HistorySequence<T> {
    pub items: Vec<T>,
    pub valid: Vec<bool>,
}

impl<T: Clone> HistorySequence<T> {
    pub fn new(items: Vec<T>) -> Self {
        let valid = vec![true; items.len()];
        Self { items, valid }
    }

    /// Keeps the most recent `max_len` items.
    pub fn truncated(mut items: Vec<T>, max_len: usize) -> Self {
        if items.len() > max_len {
            items.drain(..items.len() - max_len);
        }
        Self::new(items)
    }

    /// Truncates to the most recent `max_len` items, then left-pads with
    /// masked copies of `pad` up to `max_len`.
    pub fn padded(items: Vec<T>, max_len: usize, pad: T) -> Self {
        let mut h = Self::truncated(items, max_len);
        let missing = max_len - h.items.len();
        h.items.splice(0..0, std::iter::repeat(pad).take(missing));
        h.valid.splice(0..0, std::iter::repeat(false).take(missing));
        h
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn valid_items(&self) -> impl Iterator<Item = &T> {
        self.items.iter().zip(&self.valid).filter(|(_, &v)| v).map(|(t, _)| t)
    }

    pub fn map<U, F: FnMut(&T) -> U>(&self, f: F) -> HistorySequence<U> {
        HistorySequence {
            items: self.items.iter().map(f).collect(),
            valid: self.valid.clone(),
        }
    }

    /// `None` when every slot is valid.
    pub fn mask(&self) -> Option<&[bool]> {
        (!self.valid.iter().all(|&v| v)).then_some(self.valid.as_slice())
    }
}

/// User-modelling variant; `Full` is the complete model, the others are
/// ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UserMode {
    /// No learned user encoder: the plain history mean stands in for `o1`.
    None,
    /// Unweighted mean of the history representations.
    Average,
    /// Temporal branch only.
    Gru,
    /// Preference branch only.
    SelfAtt,
    Full,
}

impl UserMode {
    pub const ABLATION_ROWS: [UserMode; 4] = [UserMode::None, UserMode::Average, UserMode::Gru, UserMode::SelfAtt];

    pub fn label(self) -> &'static str {
        match self {
            UserMode::None => "none",
            UserMode::Average => "average",
            UserMode::Gru => "GRU",
            UserMode::SelfAtt => "self-att",
            UserMode::Full => "full",
        }
    }
}

impl fmt::Display for UserMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for UserMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "none" => UserMode::None,
            "average" | "avg" => UserMode::Average,
            "gru" => UserMode::Gru,
            "self-att" | "selfatt" | "self_att" => UserMode::SelfAtt,
            "full" => UserMode::Full,
            _ => {
                return Err(Error::Config(format!(
                    "unknown user_mode `{s}` (none, average, gru, self-att, full)"
                )))
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserModelConfig {
    pub model_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub attn_dim: usize,
    pub mode: UserMode,
    /// Use the reset gate inside the candidate state (textbook GRU) instead
    /// of the update gate.
    pub gru_standard_reset: bool,
}

/// Gate weights act on the concatenation `[hid_prev, input]` (`2d x d`).
#[derive(Clone, Debug)]
pub struct GruParams {
    pub w_update: ParamId,
    pub w_reset: ParamId,
    pub w_cand: ParamId,
    pub b_update: ParamId,
    pub b_reset: ParamId,
    pub b_cand: ParamId,
    pub dim: usize,
    pub standard_reset: bool,
}

impl GruParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, d: usize, standard_reset: bool, rng: &mut R) -> Self {
        let mut w = |name: &str, rng: &mut R| store.add(format!("{prefix}.{name}"), Init::Scaled(1.0).build(&[2 * d, d], rng));
        let w_update = w("w_update", rng);
        let w_reset = w("w_reset", rng);
        let w_cand = w("w_cand", rng);
        let mut b = |name: &str| store.add(format!("{prefix}.{name}"), Tensor::zeros(&[1, d]));
        Self {
            w_update,
            w_reset,
            w_cand,
            b_update: b("b_update"),
            b_reset: b("b_reset"),
            b_cand: b("b_cand"),
            dim: d,
            standard_reset,
        }
    }
}

#[derive(Clone, Debug)]
pub struct UserModelParams {
    pub temporal_attn: MultiHeadAttnParams,
    pub gru: GruParams,
    pub pref_attn: MultiHeadAttnParams,
    pub pref_pool: AdditiveAttnParams,
    /// Pre-sigmoid fusion weight, `[1, 1]`.
    pub fusion_alpha_raw: ParamId,
    /// Learned representation of an injected masked-news slot.
    pub mask_token: ParamId,
    pub mode: UserMode,
    pub model_dim: usize,
}

impl UserModelParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &UserModelConfig, rng: &mut R) -> Result<Self> {
        let d = cfg.model_dim;
        let temporal_attn = MultiHeadAttnParams::new(store, "user.temporal_attn", d, cfg.heads, cfg.head_dim, d, rng)?;
        let gru = GruParams::new(store, "user.gru", d, cfg.gru_standard_reset, rng);
        let pref_attn = MultiHeadAttnParams::new(store, "user.pref_attn", d, cfg.heads, cfg.head_dim, d, rng)?;
        let pref_pool = AdditiveAttnParams::new(store, "user.pref_pool", d, cfg.attn_dim, rng);
        let fusion_alpha_raw = store.add("user.fusion_alpha_raw", Tensor::scalar(0.0));
        let mask_token = store.add("user.mask_token", Init::Normal(0.1).build(&[1, d], rng));
        Ok(Self {
            temporal_attn,
            gru,
            pref_attn,
            pref_pool,
            fusion_alpha_raw,
            mask_token,
            mode: cfg.mode,
            model_dim: d,
        })
    }

    pub fn alpha(&self, store: &ParamStore) -> f64 {
        match self.mode {
            UserMode::Full => tensor::sigmoid(store.get(self.fusion_alpha_raw).item()),
            UserMode::Gru | UserMode::None => 1.0,
            UserMode::SelfAtt | UserMode::Average => 0.0,
        }
    }
}

/// One GRU step on `[1, d]` rows:
///
/// ```text
/// z = sigmoid([hid, x] W_u + b_u)
/// r = sigmoid([hid, x] W_r + b_r)
/// c = tanh([z * hid, x] W_c + b)
/// hid' = z * hid + (1 - z) * c
/// ```
///
/// The candidate state gates `hid` with `z`; with `standard_reset` it uses
/// `r` instead. `r` is only built when it is used.
pub fn gru_step(g: &mut Graph<'_>, p: &GruParams, hid_prev: NodeId, input: NodeId) -> Result<NodeId> {
    for (what, id) in [("hidden", hid_prev), ("input", input)] {
        if g.shape(id) != [1, p.dim] {
            return shape_err(format!("gru {what} must be [1, {}], got {:?}", p.dim, g.shape(id)));
        }
    }
    let cat = g.concat_cols(&[hid_prev, input])?;
    let gate = |g: &mut Graph<'_>, w: ParamId, b: ParamId| -> Result<NodeId> {
        let w = g.param(w);
        let b = g.param(b);
        let a = g.matmul(cat, w)?;
        let a = g.add_row(a, b)?;
        g.sigmoid(a)
    };
    let z = gate(g, p.w_update, p.b_update)?;
    let gate_for_cand = if p.standard_reset {
        gate(g, p.w_reset, p.b_reset)?
    } else {
        z
    };
    let gated = g.mul(gate_for_cand, hid_prev)?;
    let cat2 = g.concat_cols(&[gated, input])?;
    let wc = g.param(p.w_cand);
    let bc = g.param(p.b_cand);
    let c = g.matmul(cat2, wc)?;
    let c = g.add_row(c, bc)?;
    let c = g.tanh(c)?;
    let keep = g.mul(z, hid_prev)?;
    let one_minus_z = g.one_minus(z)?;
    let fresh = g.mul(one_minus_z, c)?;
    g.add(keep, fresh)
}

fn check_history(g: &Graph<'_>, history: NodeId, valid: &[bool], d: usize) -> Result<()> {
    let (p, w) = g.value(history).rank2()?;
    if w != d || p != valid.len() {
        return shape_err(format!(
            "history must be [{}, {d}] to match its mask, got [{p}, {w}]",
            valid.len()
        ));
    }
    if !valid.iter().any(|&v| v) {
        return Err(Error::EmptyHistory);
    }
    Ok(())
}

fn mask_of(valid: &[bool]) -> Option<&[bool]> {
    (!valid.iter().all(|&v| v)).then_some(valid)
}

/// Temporal representation: self-attention over the history, then a GRU
/// fold over the valid positions from a zero state. Returns `[1, d]`.
pub fn temporal_repr(g: &mut Graph<'_>, p: &UserModelParams, history: NodeId, valid: &[bool]) -> Result<NodeId> {
    check_history(g, history, valid, p.model_dim)?;
    let attended = p.temporal_attn.apply(g, history, mask_of(valid))?;
    let mut hid = g.constant(Tensor::zeros(&[1, p.model_dim]));
    for (t, _) in valid.iter().enumerate().filter(|(_, &v)| v) {
        let x = g.row(attended, t)?;
        hid = gru_step(g, &p.gru, hid, x)?;
    }
    Ok(hid)
}

/// Preference representation: self-attention over the history, pooled by
/// additive attention. Returns `[1, d]`.
pub fn preference_repr(g: &mut Graph<'_>, p: &UserModelParams, history: NodeId, valid: &[bool]) -> Result<NodeId> {
    check_history(g, history, valid, p.model_dim)?;
    let mask = mask_of(valid);
    let attended = p.pref_attn.apply(g, history, mask)?;
    let (_, pooled) = p.pref_pool.apply(g, attended, mask)?;
    Ok(pooled)
}

/// Masked mean of the history rows, `[1, d]`.
pub fn average_repr(g: &mut Graph<'_>, history: NodeId, valid: &[bool]) -> Result<NodeId> {
    let n = valid.iter().filter(|&&v| v).count();
    if n == 0 {
        return Err(Error::EmptyHistory);
    }
    let w: Vec<f64> = valid.iter().map(|&v| if v { 1.0 / n as f64 } else { 0.0 }).collect();
    let w = g.constant(Tensor::row(&w));
    g.matmul(w, history)
}

/// Graph nodes of a user's two representations and the fusion weight.
#[derive(Clone, Copy, Debug)]
pub struct UserReprNodes {
    pub o1: NodeId,
    pub o2: NodeId,
    /// `[1, 1]` fusion weight.
    pub alpha: NodeId,
}

/// Builds both user vectors for the configured mode. Ablated branches are
/// zero constants and `alpha` is pinned so they drop out of the score.
pub fn user_repr(g: &mut Graph<'_>, p: &UserModelParams, history: NodeId, valid: &[bool]) -> Result<UserReprNodes> {
    check_history(g, history, valid, p.model_dim)?;
    let zero = |g: &mut Graph<'_>| g.constant(Tensor::zeros(&[1, p.model_dim]));
    let (o1, o2, alpha) = match p.mode {
        UserMode::Full => {
            let o1 = temporal_repr(g, p, history, valid)?;
            let o2 = preference_repr(g, p, history, valid)?;
            let raw = g.param(p.fusion_alpha_raw);
            (o1, o2, g.sigmoid(raw)?)
        }
        UserMode::Gru => (temporal_repr(g, p, history, valid)?, zero(g), g.constant(Tensor::scalar(1.0))),
        UserMode::SelfAtt => (zero(g), preference_repr(g, p, history, valid)?, g.constant(Tensor::scalar(0.0))),
        UserMode::Average => (zero(g), average_repr(g, history, valid)?, g.constant(Tensor::scalar(0.0))),
        UserMode::None => (average_repr(g, history, valid)?, zero(g), g.constant(Tensor::scalar(1.0))),
    };
    Ok(UserReprNodes { o1, o2, alpha })
}

/// The single vector `alpha * o1 + (1 - alpha) * o2`; its dot product with a
/// candidate equals [`score`].
pub fn combined_user_vector(g: &mut Graph<'_>, u: UserReprNodes) -> Result<NodeId> {
    let a1 = g.scale_by(u.alpha, u.o1)?;
    let one_minus = g.one_minus(u.alpha)?;
    let a2 = g.scale_by(one_minus, u.o2)?;
    g.add(a1, a2)
}

/// Scores `[c, d]` candidates at once; returns `[1, c]`.
pub fn score_candidates(g: &mut Graph<'_>, u: UserReprNodes, candidates: NodeId) -> Result<NodeId> {
    let v = combined_user_vector(g, u)?;
    g.matmul_nt(v, candidates)
}

/// Evaluated user vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct UserRepr {
    pub o1: Vec<f64>,
    pub o2: Vec<f64>,
}

/// `alpha * (o1 . e) + (1 - alpha) * (o2 . e)`.
pub fn score(user: &UserRepr, candidate: &[f64], alpha: f64) -> Result<f64> {
    if user.o1.len() != candidate.len() || user.o2.len() != candidate.len() {
        return shape_err(format!(
            "score: user dims {}/{} vs candidate {}",
            user.o1.len(),
            user.o2.len(),
            candidate.len()
        ));
    }
    Ok(alpha * tensor::dot(&user.o1, candidate) + (1.0 - alpha) * tensor::dot(&user.o2, candidate))
}

/// Indices of `scores` by descending score; ties keep the lower index first.
pub fn argsort_desc(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

pub fn rank_candidates(user: &UserRepr, candidates: &[Vec<f64>], alpha: f64) -> Result<Vec<usize>> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let scores = candidates
        .iter()
        .map(|c| score(user, c, alpha))
        .collect::<Result<Vec<_>>>()?;
    Ok(argsort_desc(&scores))
}

/// Evaluates both user vectors for a history of `[1, d]` representations.
pub fn eval_user_repr(store: &ParamStore, p: &UserModelParams, history: &HistorySequence<Tensor>) -> Result<UserRepr> {
    if history.valid_count() == 0 {
        return Err(Error::EmptyHistory);
    }
    let mut g = Graph::new(store);
    let rows: Vec<&[f64]> = history.items.iter().map(Tensor::data).collect();
    let h = g.constant(Tensor::from_rows(&rows)?);
    let u = user_repr(&mut g, p, h, &history.valid)?;
    Ok(UserRepr {
        o1: g.value(u.o1).data().to_vec(),
        o2: g.value(u.o2).data().to_vec(),
    })
}
