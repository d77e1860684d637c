//! Embedding stores, cosine scoring and adaptive score normalization.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::{FeatureMap, Trial};
use crate::network::Model;

pub fn cosine_score(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidInput("cosine score of a zero vector".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Utterance embeddings and per-speaker averages.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EmbeddingStore {
    pub utts: BTreeMap<String, Vec<f64>>,
    pub speakers: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingStore {
    pub fn insert(&mut self, utt: impl Into<String>, v: Vec<f64>) -> Result<()> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("non-finite embedding".into()));
        }
        self.utts.insert(utt.into(), v);
        Ok(())
    }

    pub fn get(&self, utt: &str) -> Result<&[f64]> {
        self.utts.get(utt).map(Vec::as_slice).ok_or_else(|| Error::InvalidInput(format!("no embedding for {utt}")))
    }

    /// Recompute speaker means from `(utt, speaker)` membership.
    pub fn average_speakers<'a>(&mut self, members: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
        let mut sums: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
        for (utt, spk) in members {
            let v = self.get(utt)?.to_vec();
            let e = sums.entry(spk.to_string()).or_insert_with(|| (vec![0.0; v.len()], 0));
            e.0.iter_mut().zip(&v).for_each(|(s, x)| *s += x);
            e.1 += 1;
        }
        self.speakers = sums.into_iter().map(|(k, (s, n))| (k, s.into_iter().map(|x| x / n as f64).collect())).collect();
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Eval-mode embeddings of full-length utterances.
pub fn embed_features(model: &Model, ids: &[String], feats: &[FeatureMap]) -> Result<EmbeddingStore> {
    let vecs = feats.par_iter().map(|f| model.embed(&f.data).map(|e| e.into_data())).collect::<Result<Vec<_>>>()?;
    let mut store = EmbeddingStore::default();
    for (id, v) in ids.iter().zip(vecs) {
        store.insert(id.clone(), v)?;
    }
    Ok(store)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialScore {
    pub enroll: String,
    pub test: String,
    pub label: u8,
    pub raw: f64,
    pub normalized: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrialScoreSet {
    pub rows: Vec<TrialScore>,
}

impl TrialScoreSet {
    /// `(score, is_target)` using normalized scores when every row has one.
    pub fn pairs(&self) -> Vec<(f64, bool)> {
        let norm = !self.rows.is_empty() && self.rows.iter().all(|r| r.normalized.is_some());
        self.rows.iter().map(|r| (if norm { r.normalized.unwrap() } else { r.raw }, r.label == 1)).collect()
    }

    pub fn raw_pairs(&self) -> Vec<(f64, bool)> {
        self.rows.iter().map(|r| (r.raw, r.label == 1)).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn score_trials(trials: &[Trial], emb: &EmbeddingStore) -> Result<TrialScoreSet> {
    let rows = trials
        .iter()
        .map(|t| {
            Ok(TrialScore {
                enroll: t.enroll_utt.clone(),
                test: t.test_utt.clone(),
                label: t.label,
                raw: cosine_score(emb.get(&t.enroll_utt)?, emb.get(&t.test_utt)?)?,
                normalized: None,
            })
        })
        .collect::<Result<_>>()?;
    Ok(TrialScoreSet { rows })
}

/// Mean and standard deviation of the `k` highest cohort scores; ties go to the lower cohort id.
pub fn top_k_stats(v: &[f64], cohort: &BTreeMap<String, Vec<f64>>, k: usize) -> Result<(f64, f64)> {
    let mut s: Vec<(f64, &str)> =
        cohort.iter().map(|(id, c)| cosine_score(v, c).map(|x| (x, id.as_str()))).collect::<Result<_>>()?;
    s.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    let top = &s[..k.min(s.len())];
    let n = top.len() as f64;
    let mean = top.iter().map(|x| x.0).sum::<f64>() / n;
    let var = top.iter().map(|x| (x.0 - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if !(sd > 0.0) {
        return Err(Error::DegenerateCohort(format!("top-{k} cohort scores have zero spread")));
    }
    Ok((mean, sd))
}

pub const MIN_COHORT: usize = 10;

/// Adaptive symmetric normalization against a cohort of speaker-averaged vectors.
pub fn as_norm(raw: &TrialScoreSet, emb: &EmbeddingStore, cohort: &BTreeMap<String, Vec<f64>>, k: usize) -> Result<TrialScoreSet> {
    if k == 0 || cohort.len() < k.min(MIN_COHORT) {
        return Err(Error::InvalidInput(format!("cohort of {} vectors is too small for top-{k}", cohort.len())));
    }
    let mut stats: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for r in &raw.rows {
        for id in [r.enroll.as_str(), r.test.as_str()] {
            if !stats.contains_key(id) {
                stats.insert(id, top_k_stats(emb.get(id)?, cohort, k)?);
            }
        }
    }
    let rows = raw
        .rows
        .iter()
        .map(|r| {
            let (me, se) = stats[r.enroll.as_str()];
            let (mt, st) = stats[r.test.as_str()];
            TrialScore { normalized: Some(0.5 * ((r.raw - me) / se + (r.raw - mt) / st)), ..r.clone() }
        })
        .collect();
    Ok(TrialScoreSet { rows })
}
