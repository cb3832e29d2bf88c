//! Impressions resolved against an embedding store.

use std::collections::BTreeSet;

use crate::data::behaviors::ImpressionRecord;
use crate::data::embeddings::EmbeddingStore;
use crate::encoder::NewsFeatures;
use crate::error::{Error, Result};

/// An impression with news ids replaced by store indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Impression {
    pub impression_id: String,
    pub user_id: String,
    pub history: Vec<usize>,
    pub candidates: Vec<usize>,
    pub labels: Vec<bool>,
}

impl Impression {
    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        self.candidates.iter().zip(&self.labels).filter(|(_, &l)| l).map(|(&c, _)| c)
    }

    pub fn negatives(&self) -> Vec<usize> {
        self.candidates
            .iter()
            .zip(&self.labels)
            .filter(|(_, &l)| !l)
            .map(|(&c, _)| c)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub news_ids: Vec<String>,
    pub features: Vec<NewsFeatures>,
    pub impressions: Vec<Impression>,
}

impl Dataset {
    /// Resolves every referenced id; all unresolved ids are reported together.
    pub fn build(store: &EmbeddingStore, records: &[ImpressionRecord]) -> Result<Self> {
        let mut missing = BTreeSet::new();
        let mut lookup = |id: &str| match store.index_of(id) {
            Some(i) => i,
            None => {
                missing.insert(id.to_string());
                usize::MAX
            }
        };
        let impressions: Vec<Impression> = records
            .iter()
            .map(|r| Impression {
                impression_id: r.impression_id.clone(),
                user_id: r.user_id.clone(),
                history: r.history.iter().map(|h| lookup(h)).collect(),
                candidates: r.candidates.iter().map(|(c, _)| lookup(c)).collect(),
                labels: r.candidates.iter().map(|(_, l)| *l).collect(),
            })
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingNews(missing.into_iter().collect()));
        }
        Ok(Self {
            news_ids: store.iter().map(|(id, _)| id.to_string()).collect(),
            features: store.iter().map(|(_, f)| f.clone()).collect(),
            impressions,
        })
    }

    pub fn find_impression(&self, impression_id: &str) -> Option<&Impression> {
        self.impressions.iter().find(|i| i.impression_id == impression_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> EmbeddingStore {
        let mut s = EmbeddingStore::new(1, vec![0.0]).unwrap();
        for (i, id) in ["N1", "N2", "N3"].iter().enumerate() {
            s.insert(*id, NewsFeatures::uniform(&[i as f64])).unwrap();
        }
        s
    }

    fn rec(history: &[&str], cands: &[(&str, bool)]) -> ImpressionRecord {
        ImpressionRecord {
            impression_id: "1".into(),
            user_id: "U1".into(),
            timestamp: String::new(),
            history: history.iter().map(|s| s.to_string()).collect(),
            candidates: cands.iter().map(|(c, l)| (c.to_string(), *l)).collect(),
        }
    }

    #[test]
    fn resolves_indices() {
        let d = Dataset::build(&store(), &[rec(&["N3", "N1"], &[("N2", true), ("N1", false)])]).unwrap();
        let imp = &d.impressions[0];
        assert_eq!(imp.history, vec![2, 0]);
        assert_eq!(imp.positives().collect::<Vec<_>>(), vec![1]);
        assert_eq!(imp.negatives(), vec![0]);
    }

    #[test]
    fn reports_every_missing_id() {
        let err = Dataset::build(
            &store(),
            &[rec(&["N9", "N1"], &[("N7", true)]), rec(&["N9"], &[("N8", false)])],
        )
        .unwrap_err();
        match err {
            Error::MissingNews(ids) => assert_eq!(ids, vec!["N7", "N8", "N9"]),
            e => panic!("{e}"),
        }
    }
}
