//! Multimodal news encoder.
//!
//! The four per-news embeddings (image, title, topic, subtopic) are mixed by
//! a cross-modal multi-head attention layer, fused into one vector by
//! additive attention, and compressed by an MLP into the news representation.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};

use crate::attention::{AdditiveAttnParams, MultiHeadAttnParams};
use crate::error::{shape_err, Error, Result};
use crate::exec::{self, Parallelism};
use crate::graph::{Graph, NodeId};
use crate::params::{Init, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const FIELD_COUNT: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Field {
    Image,
    Title,
    Topic,
    Subtopic,
}

impl Field {
    pub const ALL: [Field; FIELD_COUNT] = [Field::Image, Field::Title, Field::Topic, Field::Subtopic];

    pub fn short_name(self) -> &'static str {
        match self {
            Field::Image => "img",
            Field::Title => "tit",
            Field::Topic => "top",
            Field::Subtopic => "sub",
        }
    }
}

/// The four embedding vectors of one news item, each of width `d_e`.
#[derive(Clone, Debug, PartialEq)]
pub struct NewsFeatures {
    pub image: Vec<f64>,
    pub title: Vec<f64>,
    pub topic: Vec<f64>,
    pub subtopic: Vec<f64>,
}

impl NewsFeatures {
    pub fn new(image: Vec<f64>, title: Vec<f64>, topic: Vec<f64>, subtopic: Vec<f64>) -> Result<Self> {
        let f = Self {
            image,
            title,
            topic,
            subtopic,
        };
        f.validate(f.image.len())?;
        Ok(f)
    }

    /// All four fields set to `v`.
    pub fn uniform(v: &[f64]) -> Self {
        Self {
            image: v.to_vec(),
            title: v.to_vec(),
            topic: v.to_vec(),
            subtopic: v.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.image.len()
    }

    pub fn field(&self, f: Field) -> &[f64] {
        match f {
            Field::Image => &self.image,
            Field::Title => &self.title,
            Field::Topic => &self.topic,
            Field::Subtopic => &self.subtopic,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        for f in Field::ALL {
            let v = self.field(f);
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "non-finite {} embedding",
                    f.short_name()
                )));
            }
        }
        Ok(())
    }

    /// `[4, d_e]`, rows in image/title/topic/subtopic order.
    pub fn to_matrix(&self) -> Tensor {
        Tensor::from_rows(&[&self.image[..], &self.title, &self.topic, &self.subtopic])
            .expect("fields share a width")
    }
}

/// Subset of fields the encoder may attend to; the rest are masked out of
/// both attention layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FieldSet([bool; FIELD_COUNT]);

impl FieldSet {
    pub const ALL: FieldSet = FieldSet([true; FIELD_COUNT]);

    pub fn of(fields: &[Field]) -> Self {
        let mut m = [false; FIELD_COUNT];
        for &f in fields {
            m[f as usize] = true;
        }
        FieldSet(m)
    }

    pub fn mask(&self) -> &[bool; FIELD_COUNT] {
        &self.0
    }

    pub fn contains(&self, f: Field) -> bool {
        self.0[f as usize]
    }

    pub fn is_all(&self) -> bool {
        self.0.iter().all(|&b| b)
    }

    /// Row labels of the news-field ablation, in table order.
    pub const ABLATION_ROWS: [&'static str; 6] = ["top", "sub", "tit", "tit+top+sub", "tit+img", "overall"];
}

impl FromStr for FieldSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "overall" || s == "all" {
            return Ok(FieldSet::ALL);
        }
        let mut fields = Vec::new();
        for part in s.split('+') {
            let f = Field::ALL
                .into_iter()
                .find(|f| f.short_name() == part)
                .ok_or_else(|| Error::Config(format!("unknown news field `{part}` in `{s}`")))?;
            fields.push(f);
        }
        Ok(FieldSet::of(&fields))
    }
}

impl fmt::Display for FieldSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_all() {
            return f.write_str("overall");
        }
        // title first, matching the ablation row labels
        let order = [Field::Title, Field::Image, Field::Topic, Field::Subtopic];
        let names: Vec<_> = order
            .into_iter()
            .filter(|x| self.contains(*x))
            .map(Field::short_name)
            .collect();
        f.write_str(&names.join("+"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NewsEncoderConfig {
    pub embed_dim: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub attn_dim: usize,
    /// Hidden MLP widths; the output layer (to `model_dim`) is implicit.
    pub mlp_hidden: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct NewsEncoderParams {
    pub crossmodal: MultiHeadAttnParams,
    pub fusion: AdditiveAttnParams,
    /// Hidden layers use tanh; the last layer is linear.
    pub mlp: Vec<Dense>,
    pub embed_dim: usize,
    pub model_dim: usize,
}

impl NewsEncoderParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &NewsEncoderConfig, rng: &mut R) -> Result<Self> {
        let d = cfg.embed_dim;
        let crossmodal = MultiHeadAttnParams::new(store, "encoder.crossmodal", d, cfg.heads, cfg.head_dim, d, rng)?;
        let fusion = AdditiveAttnParams::new(store, "encoder.fusion", d, cfg.attn_dim, rng);
        let mut widths = vec![d];
        widths.extend(&cfg.mlp_hidden);
        widths.push(cfg.model_dim);
        let mlp = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense {
                weight: store.add(format!("encoder.mlp{i}.weight"), Init::Scaled(1.0).build(&[w[0], w[1]], rng)),
                bias: store.add(format!("encoder.mlp{i}.bias"), Init::Zeros.build(&[1, w[1]], rng)),
            })
            .collect();
        Ok(Self {
            crossmodal,
            fusion,
            mlp,
            embed_dim: d,
            model_dim: cfg.model_dim,
        })
    }
}

/// Dropout applied during training; `None` means evaluation mode.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut dyn RngCore,
}

/// Encodes a `[4, d_e]` feature node into a `[1, d_m]` news representation.
pub fn encode_news_node(
    g: &mut Graph<'_>,
    features: NodeId,
    params: &NewsEncoderParams,
    fields: FieldSet,
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<NodeId> {
    let (m, d) = g.value(features).rank2()?;
    if m != FIELD_COUNT || d != params.embed_dim {
        return shape_err(format!(
            "news features must be [{FIELD_COUNT}, {}], got [{m}, {d}]",
            params.embed_dim
        ));
    }
    let mask = (!fields.is_all()).then(|| fields.mask().as_slice());
    let mut t = params.crossmodal.apply(g, features, mask)?;
    if let Some(dr) = dropout.as_deref_mut() {
        t = g.dropout(t, dr.rate, &mut dr.rng)?;
    }
    let (_, mut x) = params.fusion.apply(g, t, mask)?;
    let last = params.mlp.len() - 1;
    for (i, layer) in params.mlp.iter().enumerate() {
        let w = g.param(layer.weight);
        let b = g.param(layer.bias);
        x = g.matmul(x, w)?;
        x = g.add_row(x, b)?;
        if i < last {
            x = g.tanh(x)?;
            if let Some(dr) = dropout.as_deref_mut() {
                x = g.dropout(x, dr.rate, &mut dr.rng)?;
            }
        }
    }
    Ok(x)
}

/// Encodes one news item; returns the `[1, d_m]` node.
pub fn encode_news(
    g: &mut Graph<'_>,
    features: &NewsFeatures,
    params: &NewsEncoderParams,
    fields: FieldSet,
    dropout: Option<&mut Dropout<'_>>,
) -> Result<NodeId> {
    features.validate(params.embed_dim)?;
    let f = g.constant(features.to_matrix());
    encode_news_node(g, f, params, fields, dropout)
}

/// Evaluation-mode encoding of many news items, order-preserving.
///
/// Each item gets its own graph, so the result does not depend on how the
/// list is partitioned or scheduled.
pub fn encode_batch(
    store: &ParamStore,
    params: &NewsEncoderParams,
    news: &[NewsFeatures],
    fields: FieldSet,
    mode: Parallelism,
) -> Result<Vec<Tensor>> {
    exec::map(mode, news, |f| {
        let mut g = Graph::new(store);
        let h = encode_news(&mut g, f, params, fields, None)?;
        Ok(g.value(h).clone())
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::finite_difference_check;
    use crate::tensor::{dot, softmax};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(d_e: usize, d_m: usize, heads: usize, hidden: Vec<usize>) -> NewsEncoderConfig {
        NewsEncoderConfig {
            embed_dim: d_e,
            model_dim: d_m,
            heads,
            head_dim: d_e / heads,
            attn_dim: d_e,
            mlp_hidden: hidden,
        }
    }

    fn random_features(rng: &mut ChaCha8Rng, d: usize) -> NewsFeatures {
        let mut v = || Init::Normal(1.0).build(&[d], rng).into_data();
        NewsFeatures::new(v(), v(), v(), v()).unwrap()
    }

    #[test]
    fn zero_parameters_give_zero_repr() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let p = NewsEncoderParams::new(&mut store, &cfg(4, 3, 2, vec![4]), &mut rng).unwrap();
        for t in store.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        let f = random_features(&mut rng, 4);
        let mut g = Graph::new(&store);
        let h = encode_news(&mut g, &f, &p, FieldSet::ALL, None).unwrap();
        assert_eq!(g.value(h).data(), &[0.0; 3]);
    }

    #[test]
    fn uniform_attention_with_identity_mlp_gives_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let p = NewsEncoderParams::new(&mut store, &cfg(3, 3, 1, vec![]), &mut rng).unwrap();
        store.set(p.crossmodal.heads[0].score, Tensor::zeros(&[3, 3])).unwrap();
        store.set(p.crossmodal.heads[0].value, Tensor::identity(3)).unwrap();
        store.set(p.crossmodal.out, Tensor::identity(3)).unwrap();
        store.set(p.fusion.query, Tensor::zeros(&[1, 3])).unwrap();
        store.set(p.mlp[0].weight, Tensor::identity(3)).unwrap();
        let f = random_features(&mut rng, 3);
        let mut g = Graph::new(&store);
        let h = encode_news(&mut g, &f, &p, FieldSet::ALL, None).unwrap();
        for j in 0..3 {
            let mean = Field::ALL.iter().map(|&x| f.field(x)[j]).sum::<f64>() / 4.0;
            assert_abs_diff_eq!(g.value(h).data()[j], mean, epsilon = 1e-15);
        }
    }

    /// Scalar re-derivation of the whole encoder for `d_e = 2`, one head.
    #[test]
    fn matches_hand_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let p = NewsEncoderParams::new(&mut store, &cfg(2, 2, 1, vec![2]), &mut rng).unwrap();
        let q = [[0.2, -0.1], [0.05, 0.3]];
        let pv = [[0.5, 0.1], [-0.2, 0.4]];
        let vo = [[1.0, 0.2], [0.3, -0.6]];
        let wa = [[0.4, -0.3], [0.1, 0.2]];
        let ba = [0.05, -0.05];
        let qa = [0.7, -0.2];
        let w1 = [[0.3, 0.6], [-0.5, 0.2]];
        let b1 = [0.1, 0.0];
        let w2 = [[0.9, -0.4], [0.25, 0.5]];
        let b2 = [-0.02, 0.03];
        let mat = |m: [[f64; 2]; 2]| Tensor::from_rows(&m).unwrap();
        store.set(p.crossmodal.heads[0].score, mat(q)).unwrap();
        store.set(p.crossmodal.heads[0].value, mat(pv)).unwrap();
        store.set(p.crossmodal.out, mat(vo)).unwrap();
        store.set(p.fusion.proj, mat(wa)).unwrap();
        store.set(p.fusion.bias, Tensor::row(&ba)).unwrap();
        store.set(p.fusion.query, Tensor::row(&qa)).unwrap();
        store.set(p.mlp[0].weight, mat(w1)).unwrap();
        store.set(p.mlp[0].bias, Tensor::row(&b1)).unwrap();
        store.set(p.mlp[1].weight, mat(w2)).unwrap();
        store.set(p.mlp[1].bias, Tensor::row(&b2)).unwrap();
        let l = [[1.0, 0.5], [-0.3, 0.8], [0.2, -1.1], [0.6, 0.4]];
        let f = NewsFeatures::new(l[0].to_vec(), l[1].to_vec(), l[2].to_vec(), l[3].to_vec()).unwrap();

        // row-vector convention: y = x W
        let vecmat = |x: &[f64], w: &[[f64; 2]; 2]| [x[0] * w[0][0] + x[1] * w[1][0], x[0] * w[0][1] + x[1] * w[1][1]];
        let mut t = Vec::new();
        for li in &l {
            let lq = vecmat(li, &q);
            let scores: Vec<f64> = l.iter().map(|lj| dot(&lq, lj)).collect();
            let a = softmax(&scores, None).unwrap();
            let mut ctx = [0.0; 2];
            for (aj, lj) in a.iter().zip(&l) {
                let v = vecmat(lj, &pv);
                ctx[0] += aj * v[0];
                ctx[1] += aj * v[1];
            }
            t.push(vecmat(&ctx, &vo));
        }
        let fused: Vec<f64> = t
            .iter()
            .map(|ti| {
                let h = vecmat(ti, &wa);
                qa[0] * (h[0] + ba[0]).tanh() + qa[1] * (h[1] + ba[1]).tanh()
            })
            .collect();
        let w = softmax(&fused, None).unwrap();
        let x = [
            (0..4).map(|i| w[i] * t[i][0]).sum::<f64>(),
            (0..4).map(|i| w[i] * t[i][1]).sum::<f64>(),
        ];
        let h1 = vecmat(&x, &w1);
        let h1 = [(h1[0] + b1[0]).tanh(), (h1[1] + b1[1]).tanh()];
        let h2 = vecmat(&h1, &w2);
        let expected = [h2[0] + b2[0], h2[1] + b2[1]];

        let mut g = Graph::new(&store);
        let h = encode_news(&mut g, &f, &p, FieldSet::ALL, None).unwrap();
        for (a, b) in g.value(h).data().iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn equal_fields_fuse_to_that_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let p = NewsEncoderParams::new(&mut store, &cfg(4, 2, 2, vec![3]), &mut rng).unwrap();
        let v = [0.3, -0.2, 0.9, 0.1];
        let mut g = Graph::new(&store);
        let fnode = g.constant(NewsFeatures::uniform(&v).to_matrix());
        let t = p.crossmodal.apply(&mut g, fnode, None).unwrap();
        let (_, x) = p.fusion.apply(&mut g, t, None).unwrap();
        // every row of T is identical, so the fused vector is that row
        let t0 = g.value(t).row_slice(0).to_vec();
        for (a, b) in g.value(x).data().iter().zip(&t0) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-14);
        }
    }

    #[test]
    fn blank_image_changes_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let p = NewsEncoderParams::new(&mut store, &cfg(4, 3, 2, vec![4]), &mut rng).unwrap();
        let f = random_features(&mut rng, 4);
        let mut blanked = f.clone();
        blanked.image = vec![1.0; 4];
        let batch = encode_batch(&store, &p, &[f, blanked], FieldSet::ALL, Parallelism::Sequential).unwrap();
        assert!(batch[0].max_abs_diff(&batch[1]) > 1e-6);
        // ...unless the image field is masked away entirely
        let no_img = FieldSet::of(&[Field::Title, Field::Topic, Field::Subtopic]);
        let fs = [random_features(&mut rng, 4)];
        let mut b2 = fs[0].clone();
        b2.image = vec![1.0; 4];
        let a = encode_batch(&store, &p, &fs, no_img, Parallelism::Sequential).unwrap();
        let b = encode_batch(&store, &p, &[b2], no_img, Parallelism::Sequential).unwrap();
        assert!(a[0].max_abs_diff(&b[0]) <= 1e-15);
    }

    #[test]
    fn batch_is_partition_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let p = NewsEncoderParams::new(&mut store, &cfg(4, 3, 2, vec![4]), &mut rng).unwrap();
        let news: Vec<_> = (0..9).map(|_| random_features(&mut rng, 4)).collect();
        assert!(encode_batch(&store, &p, &[], FieldSet::ALL, Parallelism::Parallel).unwrap().is_empty());
        let whole = encode_batch(&store, &p, &news, FieldSet::ALL, Parallelism::Parallel).unwrap();
        let mut split = encode_batch(&store, &p, &news[..4], FieldSet::ALL, Parallelism::Sequential).unwrap();
        split.extend(encode_batch(&store, &p, &news[4..], FieldSet::ALL, Parallelism::Parallel).unwrap());
        for (a, b) in whole.iter().zip(&split) {
            assert!(a.max_abs_diff(b) <= 1e-12);
        }
        let mut g = Graph::new(&store);
        let one = encode_news(&mut g, &news[0], &p, FieldSet::ALL, None).unwrap();
        assert!(g.value(one).bit_eq(&whole[0]));
    }

    #[test]
    fn field_set_labels_round_trip() {
        for label in FieldSet::ABLATION_ROWS {
            let fs: FieldSet = label.parse().unwrap();
            assert_eq!(fs.to_string(), label);
        }
        assert!("tit+xyz".parse::<FieldSet>().is_err());
    }

    #[test]
    fn encoder_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let p = NewsEncoderParams::new(&mut store, &cfg(4, 3, 2, vec![4]), &mut rng).unwrap();
        store.set(p.fusion.bias, Init::Normal(0.3).build(&[1, 4], &mut rng)).unwrap();
        let f = random_features(&mut rng, 4);
        let target = Init::Normal(1.0).build(&[1, 3], &mut rng);
        let report = finite_difference_check(
            |g| {
                let h = encode_news(g, &f, &p, FieldSet::ALL, None)?;
                let t = g.constant(target.clone());
                let s = g.dot(h, t)?;
                g.tanh(s)
            },
            &store,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err <= 1e-4, "{report:?}");
    }
}
