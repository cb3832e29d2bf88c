//! Deterministic synthetic datasets with a known ground-truth ranker.
//!
//! News items belong to latent topic clusters. Every news item has a latent
//! topic vector `t_n`, and its four feature vectors are noisy copies of it.
//! Each user likes one or two clusters. A user likes the fraction `r_u` of
//! the catalogue closest (by cosine) to their preference vector, with
//! `r_u ~ U(0.2, 0.4)`. Histories are drawn from liked news.
//!
//! Under [`ClickRule::Similarity`] a candidate is clicked iff it is liked.
//! Under [`ClickRule::Recency`] the reference vector is the topic of the most
//! recent history item instead, so click behaviour depends on history order.

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::behaviors::ImpressionRecord;
use crate::data::embeddings::EmbeddingStore;
use crate::data::news::NewsRecord;
use crate::encoder::NewsFeatures;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClickRule {
    Similarity,
    Recency,
}

impl fmt::Display for ClickRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClickRule::Similarity => "similarity",
            ClickRule::Recency => "recency",
        })
    }
}

impl FromStr for ClickRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "similarity" => Ok(ClickRule::Similarity),
            "recency" => Ok(ClickRule::Recency),
            _ => Err(Error::Config(format!("unknown click_rule `{s}` (similarity, recency)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_users: usize,
    pub n_news: usize,
    pub embed_dim: usize,
    pub click_rule: ClickRule,
    pub n_topics: usize,
    /// Spread of news topic vectors around their cluster centre.
    pub topic_spread: f64,
    /// Feature noise scale per field: image, title, topic, subtopic.
    pub field_noise: [f64; 4],
    pub history_len: (usize, usize),
    /// Probability that a history slot is an off-preference click drawn
    /// uniformly from all news.
    pub history_noise: f64,
    pub impressions_per_user: usize,
    pub candidates_per_impression: usize,
    /// Fraction of users whose impressions go to the held-out split.
    pub test_fraction: f64,
}

impl SynthConfig {
    pub fn new(seed: u64, n_users: usize, n_news: usize, embed_dim: usize, click_rule: ClickRule) -> Self {
        Self {
            seed,
            n_users,
            n_news,
            embed_dim,
            click_rule,
            n_topics: 10,
            topic_spread: 0.4,
            field_noise: [0.3; 4],
            history_len: (10, 20),
            history_noise: 0.0,
            impressions_per_user: 4,
            candidates_per_impression: 20,
            test_fraction: 0.2,
        }
    }

    /// Sharp image vectors and heavily corrupted text, so ranking quality
    /// depends on how many real images survive.
    pub fn image_dependent(mut self) -> Self {
        self.field_noise = [0.3, 4.0, 4.0, 4.0];
        self
    }
}

#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub news: Vec<NewsRecord>,
    pub store: EmbeddingStore,
    pub train: Vec<ImpressionRecord>,
    pub test: Vec<ImpressionRecord>,
    /// Unit latent topic vector per news item, in store order.
    pub news_topics: Vec<Vec<f64>>,
    /// Unit preference vector per user id.
    pub user_prefs: IndexMap<String, Vec<f64>>,
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Value such that a fraction `rate` of `values` lies strictly above it.
fn upper_quantile(values: &[f64], rate: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    let k = ((rate * v.len() as f64).round() as usize).clamp(1, v.len());
    if k == v.len() {
        v[k - 1] - 1.0
    } else {
        (v[k - 1] + v[k]) / 2.0
    }
}

pub fn synth_dataset(cfg: &SynthConfig) -> Result<SynthDataset> {
    if cfg.n_news < 10 {
        return Err(Error::InvalidArgument(format!("n_news must be at least 10, got {}", cfg.n_news)));
    }
    if cfg.n_users < 2 || cfg.embed_dim == 0 || cfg.n_topics == 0 {
        return Err(Error::InvalidArgument("n_users >= 2, embed_dim >= 1 and n_topics >= 1 required".into()));
    }
    if cfg.history_len.0 == 0 || cfg.history_len.0 > cfg.history_len.1 {
        return Err(Error::InvalidArgument(format!("bad history_len range {:?}", cfg.history_len)));
    }
    if !(0.0..=1.0).contains(&cfg.history_noise) {
        return Err(Error::InvalidArgument(format!("history_noise {} outside [0, 1]", cfg.history_noise)));
    }
    if cfg.candidates_per_impression == 0 || cfg.candidates_per_impression > cfg.n_news {
        return Err(Error::InvalidArgument("candidates_per_impression must be in 1..=n_news".into()));
    }
    if !(0.0..1.0).contains(&cfg.test_fraction) {
        return Err(Error::InvalidArgument("test_fraction must be in [0, 1)".into()));
    }
    let d = cfg.embed_dim;
    let unit = 1.0 / (d as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let centres: Vec<Vec<f64>> = (0..cfg.n_topics).map(|_| normalize(gaussian(&mut rng, d, 1.0))).collect();
    let blank = normalize(gaussian(&mut rng, d, 1.0));
    let mut store = EmbeddingStore::new(d, blank)?;
    let mut news = Vec::with_capacity(cfg.n_news);
    let mut topics = Vec::with_capacity(cfg.n_news);
    for i in 0..cfg.n_news {
        let k = rng.gen_range(0..cfg.n_topics);
        let jitter = gaussian(&mut rng, d, cfg.topic_spread * unit);
        let t = normalize(centres[k].iter().zip(&jitter).map(|(c, j)| c + j).collect());
        let mut noisy = |scale: f64| -> Vec<f64> {
            t.iter().zip(gaussian(&mut rng, d, scale * unit)).map(|(a, b)| a + b).collect()
        };
        let [ni, nt, np, ns] = cfg.field_noise;
        let features = NewsFeatures::new(noisy(ni), noisy(nt), noisy(np), noisy(ns))?;
        let id = format!("N{}", i + 1);
        store.insert(id.clone(), features)?;
        news.push(NewsRecord {
            news_id: id,
            category: format!("topic{k}"),
            subcategory: format!("topic{k}-{}", i % 3),
            title: format!("synthetic story {} on topic {k}", i + 1),
        });
        topics.push(t);
    }
    let ids: Vec<&str> = news.iter().map(|n| n.news_id.as_str()).collect();

    let n_test = ((cfg.n_users as f64) * cfg.test_fraction).round() as usize;
    let n_train = cfg.n_users - n_test;
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut prefs = IndexMap::new();
    let mut impression_no = 0usize;
    for u in 0..cfg.n_users {
        let user_id = format!("U{}", u + 1);
        let n_interests = rng.gen_range(1..=2);
        let mut pref = gaussian(&mut rng, d, 0.3 * unit);
        for _ in 0..n_interests {
            let c = &centres[rng.gen_range(0..cfg.n_topics)];
            pref.iter_mut().zip(c).for_each(|(p, c)| *p += c);
        }
        let pref = normalize(pref);
        let rate: f64 = rng.gen_range(0.2..0.4);
        let affinity: Vec<f64> = topics.iter().map(|t| cosine(&pref, t)).collect();
        let threshold = upper_quantile(&affinity, rate);
        let liked: Vec<usize> = (0..cfg.n_news).filter(|&i| affinity[i] > threshold).collect();

        for _ in 0..cfg.impressions_per_user {
            let len = rng.gen_range(cfg.history_len.0..=cfg.history_len.1);
            let mut history: Vec<usize> = if liked.len() >= len {
                liked.choose_multiple(&mut rng, len).copied().collect()
            } else {
                (0..len).map(|_| liked[rng.gen_range(0..liked.len())]).collect()
            };
            if cfg.history_noise > 0.0 {
                for h in history.iter_mut() {
                    if rng.gen_bool(cfg.history_noise) {
                        *h = rng.gen_range(0..cfg.n_news);
                    }
                }
            }
            let mut order: Vec<usize> = (0..cfg.n_news).collect();
            order.shuffle(&mut rng);
            order.truncate(cfg.candidates_per_impression);
            let labels: Vec<bool> = match cfg.click_rule {
                ClickRule::Similarity => order.iter().map(|&c| affinity[c] > threshold).collect(),
                ClickRule::Recency => {
                    let last = &topics[*history.last().expect("non-empty history")];
                    let recent: Vec<f64> = topics.iter().map(|t| cosine(last, t)).collect();
                    let thr = upper_quantile(&recent, rate);
                    order.iter().map(|&c| recent[c] > thr).collect()
                }
            };
            impression_no += 1;
            let rec = ImpressionRecord {
                impression_id: impression_no.to_string(),
                user_id: user_id.clone(),
                timestamp: format!(
                    "11/{}/2019 {}:{:02}:{:02} AM",
                    9 + impression_no % 7,
                    1 + impression_no % 11,
                    impression_no % 60,
                    (impression_no * 7) % 60
                ),
                history: history.iter().map(|&h| ids[h].to_string()).collect(),
                candidates: order.iter().zip(labels).map(|(&c, l)| (ids[c].to_string(), l)).collect(),
            };
            if u < n_train {
                train.push(rec);
            } else {
                test.push(rec);
            }
        }
        prefs.insert(user_id, pref);
    }

    Ok(SynthDataset {
        config: cfg.clone(),
        news,
        store,
        train,
        test,
        news_topics: topics,
        user_prefs: prefs,
    })
}

impl SynthDataset {
    /// Ground-truth scores for an impression's candidates: cosine between
    /// each candidate's latent topic and the rule's reference vector.
    pub fn oracle_scores(&self, rec: &ImpressionRecord) -> Result<Vec<f64>> {
        let topic = |id: &str| {
            self.store
                .index_of(id)
                .map(|i| &self.news_topics[i])
                .ok_or_else(|| Error::UnknownId(id.to_string()))
        };
        let reference = match self.config.click_rule {
            ClickRule::Similarity => self
                .user_prefs
                .get(&rec.user_id)
                .ok_or_else(|| Error::UnknownId(rec.user_id.clone()))?,
            ClickRule::Recency => topic(rec.history.last().ok_or(Error::EmptyHistory)?)?,
        };
        rec.candidates
            .iter()
            .map(|(c, _)| Ok(cosine(reference, topic(c)?)))
            .collect()
    }
}
