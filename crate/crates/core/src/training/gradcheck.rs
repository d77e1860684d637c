//! Central finite-difference check of every trainable parameter family.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::aam::AamHead;
use crate::autograd::{SparseApplied, Tape};
use crate::error::{Error, Result};
use crate::network::{DsTdnn, Pass, Sparsity};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCheckOptions {
    pub h: f64,
    pub rel_tol: f64,
    pub abs_floor: f64,
    /// Minimum number of checked scalars overall.
    pub min_samples: usize,
    /// Checked scalars per parameter array before topping up to `min_samples`.
    pub per_entry: usize,
    /// Candidates tried per sample before giving up on an array.
    pub max_attempts: usize,
    /// Use batch statistics in batch norm and sample sparse masks, as in training.
    pub train_mode: bool,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-4,
            rel_tol: 1e-4,
            abs_floor: 1e-6,
            min_samples: 200,
            per_entry: 2,
            max_attempts: 40,
            train_mode: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradSample {
    pub name: String,
    pub family: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct GradCheckReport {
    pub samples: Vec<GradSample>,
    pub max_rel_err: f64,
    pub failures: Vec<String>,
    /// Candidates rejected because the perturbation crossed a non-smooth point.
    pub resampled: usize,
    /// Arrays for which no smooth candidate was found.
    pub exhausted: Vec<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && !self.samples.is_empty()
    }

    pub fn family_counts(&self) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for s in &self.samples {
            *m.entry(s.family.clone()).or_default() += 1;
        }
        m
    }
}

/// Coarse grouping of parameter names used for coverage reporting.
pub fn family_of(name: &str) -> &'static str {
    if name.starts_with("aam.") {
        "aam_head"
    } else if name.starts_with("head.linear") {
        "embedding"
    } else if name.contains(".bn.") {
        "batch_norm"
    } else if name.starts_with("stem.") {
        "stem"
    } else if name.contains(".res2.") {
        "res2conv"
    } else if name.contains(".se.") {
        "squeeze_excite"
    } else if name.ends_with("dgf.filters") {
        "filter"
    } else if name.contains(".dgf.fc") {
        "attention_scorer"
    } else if name.starts_with("asp.") {
        "pooling"
    } else {
        "projection"
    }
}

struct Objective<'a> {
    net: &'a DsTdnn,
    head: &'a AamHead,
    x: &'a Tensor,
    labels: &'a [usize],
    batch_stats: bool,
    replay: Vec<SparseApplied>,
}

impl Objective<'_> {
    fn eval(&self, store: &ParamStore) -> Result<(f64, u64)> {
        let mut tape = Tape::new(true);
        let x = tape.input(self.x.clone());
        let sparsity = if self.replay.is_empty() { Sparsity::Off } else { Sparsity::Replay(&self.replay) };
        let mut pass = Pass { batch_stats: self.batch_stats, sparsity };
        let trace = self.net.forward(&mut tape, store, x, &mut pass)?;
        let (loss, _) = self.head.loss(&mut tape, store, trace.embedding, self.labels)?;
        Ok((tape.value(loss).data()[0], tape.kink_signature()))
    }
}

/// Compare tape gradients of the margin loss with central differences.
///
/// Sparse masks drawn in the reference forward are replayed in every perturbed
/// forward. A candidate scalar is skipped when either perturbed forward takes a
/// different branch at any ReLU, variance floor or margin clamp.
pub fn finite_diff_check(
    net: &DsTdnn,
    store: &ParamStore,
    head: &AamHead,
    x: &Tensor,
    labels: &[usize],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut tape = Tape::new(true);
    let xv = tape.input(x.clone());
    let mut mask_rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9);
    let mut pass = if opts.train_mode { Pass::train(&mut mask_rng) } else { Pass::eval() };
    let trace = net.forward(&mut tape, store, xv, &mut pass)?;
    let (loss, _) = head.loss(&mut tape, store, trace.embedding, labels)?;
    let base_sig = tape.kink_signature();
    let grads = tape.backward(loss)?;
    let objective = Objective {
        net,
        head,
        x,
        labels,
        batch_stats: opts.train_mode,
        replay: tape.sparse_applied().to_vec(),
    };
    let (l0, s0) = objective.eval(store)?;
    if s0 != base_sig || (l0 - tape.value(loss).data()[0]).abs() > 1e-12 * l0.abs().max(1.0) {
        return Err(Error::Contract("replayed forward differs from the reference forward".into()));
    }

    let trainable: Vec<ParamId> = store.ids().filter(|&id| store.entry(id).kind.is_trainable()).collect();
    let size = |id: ParamId| store.get(id).len();
    let mut quota: BTreeMap<ParamId, usize> =
        trainable.iter().map(|&id| (id, opts.per_entry.min(size(id)))).collect();
    let mut total: usize = quota.values().sum();
    let capacity: usize = trainable.iter().map(|&id| size(id)).sum();
    while total < opts.min_samples.min(capacity) {
        let id = *trainable.choose(&mut rng).expect("model has parameters");
        let q = quota.get_mut(&id).unwrap();
        if *q < size(id) {
            *q += 1;
            total += 1;
        }
    }

    let mut work = store.clone();
    let mut report = GradCheckReport::default();
    for (&id, &want) in &quota {
        let name = store.entry(id).name.clone();
        let n = store.get(id).len();
        let analytic = grads.get(id).cloned().unwrap_or_else(|| Tensor::zeros(store.get(id).shape()));
        let mut done = 0;
        let mut attempts = 0;
        let mut used = Vec::new();
        while done < want {
            if attempts >= opts.max_attempts * want {
                report.exhausted.push(name.clone());
                break;
            }
            attempts += 1;
            let mut i = rng.random_range(0..n);
            let is_filter = name.ends_with("dgf.filters");
            if is_filter {
                // Alternate real and imaginary parts.
                i = (i & !1) | (done % 2);
            }
            if used.contains(&i) {
                continue;
            }
            used.push(i);
            let orig = work.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + opts.h;
            let (lp, sp) = objective.eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig - opts.h;
            let (lm, sm) = objective.eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig;
            if sp != base_sig || sm != base_sig {
                report.resampled += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * opts.h);
            let a = analytic.data()[i];
            let scale = a.abs().max(numeric.abs()).max(opts.abs_floor / opts.rel_tol);
            let rel_err = (a - numeric).abs() / scale;
            let passed = rel_err <= opts.rel_tol;
            if !passed {
                report.failures.push(format!("{name}[{i}]: analytic {a:e}, numeric {numeric:e}"));
            }
            report.max_rel_err = report.max_rel_err.max(rel_err);
            report.samples.push(GradSample {
                name: name.clone(),
                family: match (is_filter, i % 2) {
                    (true, 0) => "filter_real".to_string(),
                    (true, _) => "filter_imag".to_string(),
                    _ => family_of(&name).to_string(),
                },
                index: i,
                analytic: a,
                numeric,
                rel_err,
                passed,
            });
            done += 1;
        }
    }
    Ok(report)
}
