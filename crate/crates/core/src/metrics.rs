//! Impression-level ranking metrics and their dataset-level means.
//!
//! Conventions: AUC gives half credit to tied positive/negative pairs;
//! rank-based metrics order by descending score with ties broken by the
//! original candidate index; nDCG uses binary gain.

use std::fmt::Write as _;

use serde::Serialize;

use crate::exec::{self, pairwise_sum, Parallelism};
use crate::user::argsort_desc;

#[derive(Clone, Debug, PartialEq)]
pub struct ImpressionEval {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl ImpressionEval {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Self {
        assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
        Self { scores, labels }
    }

    fn counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&l| l).count();
        (pos, self.labels.len() - pos)
    }
}

/// `None` unless there is at least one positive and one negative.
pub fn auc(e: &ImpressionEval) -> Option<f64> {
    let (pos, neg) = e.counts();
    if pos == 0 || neg == 0 {
        return None;
    }
    // rank-sum with average ranks for tied groups
    let mut idx: Vec<usize> = (0..e.scores.len()).collect();
    idx.sort_by(|&a, &b| e.scores[a].total_cmp(&e.scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && e.scores[idx[j + 1]] == e.scores[idx[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        let group_pos = idx[i..=j].iter().filter(|&&k| e.labels[k]).count();
        pos_rank_sum += avg_rank * group_pos as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Some((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn mrr(e: &ImpressionEval) -> Option<f64> {
    let order = argsort_desc(&e.scores);
    order.iter().position(|&i| e.labels[i]).map(|r| 1.0 / (r + 1) as f64)
}

pub fn ndcg_at_k(e: &ImpressionEval, k: usize) -> Option<f64> {
    let (pos, _) = e.counts();
    if pos == 0 {
        return None;
    }
    let order = argsort_desc(&e.scores);
    let discount = |r: usize| 1.0 / ((r + 2) as f64).log2();
    let dcg: f64 = order.iter().take(k).enumerate().filter(|(_, &i)| e.labels[i]).map(|(r, _)| discount(r)).sum();
    let ideal: f64 = (0..pos.min(k)).map(discount).sum();
    Some(dcg / ideal)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricSummary {
    /// `None` when no impression defines the metric.
    pub mean: Option<f64>,
    pub defined: usize,
    pub excluded: usize,
}

impl MetricSummary {
    fn from_values(values: &[Option<f64>]) -> Self {
        let defined: Vec<f64> = values.iter().flatten().copied().collect();
        Self {
            mean: (!defined.is_empty()).then(|| pairwise_sum(&defined) / defined.len() as f64),
            defined: defined.len(),
            excluded: values.len() - defined.len(),
        }
    }

    pub fn value(&self) -> f64 {
        self.mean.unwrap_or(f64::NAN)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub impressions: usize,
    pub auc: MetricSummary,
    pub mrr: MetricSummary,
    pub ndcg5: MetricSummary,
    pub ndcg10: MetricSummary,
}

pub fn aggregate(evals: &[ImpressionEval], mode: Parallelism) -> MetricsReport {
    let per: Vec<[Option<f64>; 4]> = exec::map(mode, evals, |e| [auc(e), mrr(e), ndcg_at_k(e, 5), ndcg_at_k(e, 10)]);
    let column = |k: usize| MetricSummary::from_values(&per.iter().map(|m| m[k]).collect::<Vec<_>>());
    MetricsReport {
        impressions: evals.len(),
        auc: column(0),
        mrr: column(1),
        ndcg5: column(2),
        ndcg10: column(3),
    }
}

impl MetricsReport {
    /// Line-oriented `key=value` block; undefined means print as `undefined`.
    pub fn to_kv(&self) -> String {
        let mut s = format!("impressions={}\n", self.impressions);
        for (name, m) in self.named() {
            match m.mean {
                Some(v) => writeln!(s, "{name}={v:.6}").unwrap(),
                None => writeln!(s, "{name}=undefined").unwrap(),
            }
            writeln!(s, "{name}_excluded={}", m.excluded).unwrap();
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn named(&self) -> [(&'static str, &MetricSummary); 4] {
        [("auc", &self.auc), ("mrr", &self.mrr), ("ndcg5", &self.ndcg5), ("ndcg10", &self.ndcg10)]
    }
}
