//! The full recommender: news encoder, user model and their shared
//! parameter store.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::dataset::{Dataset, Impression};
use crate::encoder::{encode_batch, FieldSet, NewsEncoderConfig, NewsEncoderParams, NewsFeatures};
use crate::error::{Error, Result};
use crate::exec::{self, Parallelism};
use crate::metrics::{aggregate, ImpressionEval, MetricsReport};
use crate::params::ParamStore;
use crate::tensor::{self, Tensor};
use crate::user::{eval_user_repr, HistorySequence, UserMode, UserModelConfig, UserModelParams, UserRepr};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub model_dim: usize,
    /// Head count of every multi-head attention block; head width is the
    /// input width divided by this.
    pub heads: usize,
    pub attn_dim: usize,
    pub mlp_hidden: Vec<usize>,
    pub user_mode: UserMode,
    pub gru_standard_reset: bool,
    pub fields: FieldSet,
    pub max_history: usize,
    /// Start the user-side attention output projections at zero, so an
    /// untrained model scores every candidate equally.
    pub zero_init_user_out: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            model_dim: 16,
            heads: 2,
            attn_dim: 16,
            mlp_hidden: vec![32],
            user_mode: UserMode::Full,
            gru_standard_reset: false,
            fields: FieldSet::ALL,
            max_history: 50,
            zero_init_user_out: true,
            seed: 7,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.embed_dim == 0 || self.model_dim == 0 || self.attn_dim == 0 || self.max_history == 0 {
            return bad("embed_dim, model_dim, attn_dim and max_history must be positive".into());
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 || self.model_dim % self.heads != 0 {
            return bad(format!(
                "heads ({}) must divide embed_dim ({}) and model_dim ({})",
                self.heads, self.embed_dim, self.model_dim
            ));
        }
        if self.mlp_hidden.contains(&0) {
            return bad("mlp_hidden widths must be positive".into());
        }
        Ok(())
    }

    pub fn encoder_config(&self) -> NewsEncoderConfig {
        NewsEncoderConfig {
            embed_dim: self.embed_dim,
            model_dim: self.model_dim,
            heads: self.heads,
            head_dim: self.embed_dim / self.heads,
            attn_dim: self.attn_dim,
            mlp_hidden: self.mlp_hidden.clone(),
        }
    }

    pub fn user_config(&self) -> UserModelConfig {
        UserModelConfig {
            model_dim: self.model_dim,
            heads: self.heads,
            head_dim: self.model_dim / self.heads,
            attn_dim: self.attn_dim,
            mode: self.user_mode,
            gru_standard_reset: self.gru_standard_reset,
        }
    }

    pub fn to_kv(&self) -> BTreeMap<&'static str, String> {
        let hidden: Vec<String> = self.mlp_hidden.iter().map(usize::to_string).collect();
        BTreeMap::from([
            ("embed_dim", self.embed_dim.to_string()),
            ("model_dim", self.model_dim.to_string()),
            ("heads", self.heads.to_string()),
            ("attn_dim", self.attn_dim.to_string()),
            ("mlp_hidden", hidden.join(",")),
            ("user_mode", self.user_mode.label().to_string()),
            ("gru_standard_reset", self.gru_standard_reset.to_string()),
            ("fields", self.fields.to_string()),
            ("max_history", self.max_history.to_string()),
            ("zero_init_user_out", self.zero_init_user_out.to_string()),
            ("seed", self.seed.to_string()),
        ])
    }

    /// Overrides fields from `key=value` pairs; unknown keys are ignored.
    pub fn apply_kv<'a>(&mut self, kv: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("`{k}`: cannot parse `{v}`")))
        }
        for (k, v) in kv {
            match k {
                "embed_dim" => self.embed_dim = num(k, v)?,
                "model_dim" => self.model_dim = num(k, v)?,
                "heads" => self.heads = num(k, v)?,
                "attn_dim" => self.attn_dim = num(k, v)?,
                "mlp_hidden" => {
                    self.mlp_hidden = v
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| num(k, s))
                        .collect::<Result<_>>()?
                }
                "user_mode" => self.user_mode = v.trim().parse()?,
                "gru_standard_reset" => self.gru_standard_reset = num(k, v)?,
                "fields" => self.fields = v.trim().parse()?,
                "max_history" => self.max_history = num(k, v)?,
                "zero_init_user_out" => self.zero_init_user_out = num(k, v)?,
                "seed" => self.seed = num(k, v)?,
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: NewsEncoderParams,
    pub user: UserModelParams,
}

/// Scores of one evaluated impression, in candidate order.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredImpression {
    pub index: usize,
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub scored: Vec<ScoredImpression>,
    /// Impressions skipped because their history is empty.
    pub empty_history: usize,
    pub report: MetricsReport,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let encoder = NewsEncoderParams::new(&mut store, &config.encoder_config(), &mut rng)?;
        let user = UserModelParams::new(&mut store, &config.user_config(), &mut rng)?;
        if config.zero_init_user_out {
            for id in [user.temporal_attn.out, user.pref_attn.out] {
                store.get_mut(id).data_mut().fill(0.0);
            }
        }
        Ok(Self {
            config,
            store,
            encoder,
            user,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.user.alpha(&self.store)
    }

    /// Evaluation-mode news representations, `[1, d_m]` each.
    pub fn encode_all(&self, features: &[NewsFeatures], mode: Parallelism) -> Result<Vec<Tensor>> {
        encode_batch(&self.store, &self.encoder, features, self.config.fields, mode)
    }

    /// User vectors from the most recent `max_history` representations.
    pub fn user_repr(&self, history: &[Tensor]) -> Result<UserRepr> {
        let h = HistorySequence::truncated(history.to_vec(), self.config.max_history);
        eval_user_repr(&self.store, &self.user, &h)
    }

    /// Candidate scores for one impression given precomputed news
    /// representations indexed like the dataset's features.
    pub fn score_impression(&self, reprs: &[Tensor], imp: &Impression) -> Result<Vec<f64>> {
        if imp.candidates.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        let start = imp.history.len().saturating_sub(self.config.max_history);
        let hist: Vec<Tensor> = imp.history[start..].iter().map(|&i| reprs[i].clone()).collect();
        let u = self.user_repr(&hist)?;
        let a = self.alpha();
        Ok(imp
            .candidates
            .iter()
            .map(|&c| {
                let e = reprs[c].data();
                a * tensor::dot(&u.o1, e) + (1.0 - a) * tensor::dot(&u.o2, e)
            })
            .collect())
    }

    /// Deterministic evaluation: no dropout, no noise. Impressions with an
    /// empty history are skipped and counted.
    pub fn evaluate(&self, data: &Dataset, mode: Parallelism) -> Result<Evaluation> {
        let reprs = self.encode_all(&data.features, mode)?;
        let indexed: Vec<usize> = (0..data.impressions.len())
            .filter(|&i| !data.impressions[i].history.is_empty() && !data.impressions[i].candidates.is_empty())
            .collect();
        let scored = exec::map(mode, &indexed, |&i| {
            self.score_impression(&reprs, &data.impressions[i])
                .map(|scores| ScoredImpression { index: i, scores })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let evals: Vec<ImpressionEval> = scored
            .iter()
            .map(|s| ImpressionEval::new(s.scores.clone(), data.impressions[s.index].labels.clone()))
            .collect();
        Ok(Evaluation {
            empty_history: data.impressions.len() - scored.len(),
            report: aggregate(&evals, mode),
            scored,
        })
    }
}
