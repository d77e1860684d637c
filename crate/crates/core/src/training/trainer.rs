//! Desk-scale training loop.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::aam::{accuracy, AamHead, AAM_WEIGHT};
use super::optim::{Adam, LrSchedule};
use crate::autograd::{Tape, BN_MOMENTUM};
use crate::error::{Error, Result};
use crate::frontend::{compute_log_mel, read_manifest, read_wav, resolve, spec_augment, FeatureMap};
use crate::network::{Model, ModelConfig, Pass};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const FRAME_HOP: f64 = 0.010;
pub const FRAME_WIN: f64 = 0.025;

/// Overrides applied in an optional second stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FineTune {
    pub epochs: usize,
    pub margin: Option<f64>,
    pub crop_seconds: Option<f64>,
    pub lr_start: Option<f64>,
    pub lr_end: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub crop_seconds: f64,
    pub margin: f64,
    pub scale: f64,
    pub spec_augment: bool,
    pub fine_tune: Option<FineTune>,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            lr_start: 1e-3,
            lr_end: 1e-6,
            warmup_steps: 2000,
            weight_decay: 2e-5,
            crop_seconds: 2.0,
            margin: 0.2,
            scale: 30.0,
            spec_augment: true,
            fine_tune: None,
        }
    }
}

impl TrainSchedule {
    /// Desk-scale variant: small batches, short warmup, higher final rate.
    pub fn desk() -> Self {
        Self { batch_size: 16, warmup_steps: 8, lr_end: 1e-4, ..Self::default() }
    }

    pub fn crop_frames(seconds: f64) -> usize {
        (seconds / FRAME_HOP).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size < 2 {
            return Err(Error::Config("need at least one epoch and a batch size of two or more".into()));
        }
        if Self::crop_frames(self.crop_seconds) < 2 {
            return Err(Error::Config(format!("crop of {} s is too short", self.crop_seconds)));
        }
        if !(0.0..1.0).contains(&self.weight_decay) {
            return Err(Error::Config(format!("weight decay {} outside [0, 1)", self.weight_decay)));
        }
        LrSchedule::new(self.lr_start, self.lr_end, self.warmup_steps, 1)?;
        Ok(())
    }
}

/// Full-length features of labelled utterances.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub utt_ids: Vec<String>,
    pub features: Vec<FeatureMap>,
    pub labels: Vec<usize>,
    pub speakers: Vec<String>,
}

impl Dataset {
    pub fn from_manifest(path: &Path, n_mels: usize) -> Result<Self> {
        let rows = read_manifest(path)?;
        let features = rows
            .par_iter()
            .map(|r| compute_log_mel(&read_wav(&resolve(path, r))?, n_mels, FRAME_WIN, FRAME_HOP))
            .collect::<Result<Vec<_>>>()?;
        let mut speakers: Vec<String> = rows.iter().map(|r| r.speaker_id.clone()).collect();
        speakers.sort();
        speakers.dedup();
        let index: BTreeMap<&str, usize> = speakers.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let labels = rows.iter().map(|r| index[r.speaker_id.as_str()]).collect();
        Ok(Self { utt_ids: rows.into_iter().map(|r| r.utt_id).collect(), features, labels, speakers })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// Random `frames`-long window; shorter utterances are repeated.
pub fn random_crop<R: Rng + ?Sized>(f: &FeatureMap, frames: usize, rng: &mut R) -> Result<FeatureMap> {
    let (_, c, t) = f.data.dims3()?;
    if t >= frames {
        return f.crop(rng.random_range(0..=t - frames), frames);
    }
    let src = f.data.data();
    let data = Tensor::from_fn(&[1, c, frames], |i| src[(i / frames) * t + (i % frames) % t]);
    Ok(FeatureMap { data, frame_shift: f.frame_shift })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub acc: f64,
    pub lr: f64,
}

pub fn write_metrics(path: &Path, rows: &[EpochMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    /// Model parameters plus the margin head's class matrix.
    pub store: ParamStore,
    pub head: AamHead,
    pub metrics: Vec<EpochMetrics>,
    pub speakers: Vec<String>,
}

struct Stage {
    epochs: usize,
    crop: usize,
    margin: f64,
    lr: LrSchedule,
}

fn apply_bn_updates(store: &mut ParamStore, tape: &mut Tape) {
    for u in tape.take_bn_updates() {
        for (r, b) in store.get_mut(u.running_mean).data_mut().iter_mut().zip(&u.batch_mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
        for (r, b) in store.get_mut(u.running_var).data_mut().iter_mut().zip(&u.batch_var_unbiased) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
    }
}

/// Train from scratch. Every random draw comes from one generator seeded by `seed`.
pub fn train(data: &Dataset, cfg: &ModelConfig, sched: &TrainSchedule, seed: u64) -> Result<TrainOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Model::new(cfg, &mut rng)?;
    train_from(model, data, sched, &mut rng)
}

/// Continue from an existing model with a fresh margin head and optimizer.
pub fn train_from(model: Model, data: &Dataset, sched: &TrainSchedule, rng: &mut ChaCha8Rng) -> Result<TrainOutcome> {
    sched.validate()?;
    if data.speakers.len() < 2 {
        return Err(Error::InvalidInput("training needs at least 2 speakers".into()));
    }
    let cfg = model.config().clone();
    if let Some(f) = data.features.first() {
        if f.channels() != cfg.n_mels {
            return Err(Error::Shape(format!("features have {} channels, model expects {}", f.channels(), cfg.n_mels)));
        }
    }
    let Model { net, mut store } = model;
    let model_len = store.len();
    let head = AamHead::attach(&mut store, data.speakers.len(), cfg.embedding_dim, sched.margin, sched.scale, rng)?;

    let steps_per_epoch = batch_bounds(data.len(), sched.batch_size).len();
    let mut stages = vec![Stage {
        epochs: sched.epochs,
        crop: TrainSchedule::crop_frames(sched.crop_seconds),
        margin: sched.margin,
        lr: LrSchedule::new(sched.lr_start, sched.lr_end, sched.warmup_steps, sched.epochs * steps_per_epoch)?,
    }];
    if let Some(ft) = sched.fine_tune.as_ref().filter(|f| f.epochs > 0) {
        let start = ft.lr_start.unwrap_or(sched.lr_end);
        let end = ft.lr_end.unwrap_or(sched.lr_end);
        stages.push(Stage {
            epochs: ft.epochs,
            crop: TrainSchedule::crop_frames(ft.crop_seconds.unwrap_or(sched.crop_seconds)),
            margin: ft.margin.unwrap_or(sched.margin),
            lr: LrSchedule::new(start, end, 0, ft.epochs * steps_per_epoch)?,
        });
    }

    let mut opt = Adam::new(sched.weight_decay);
    let mut metrics = Vec::new();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut global_step = 0;
    let mut epoch = 0;
    for stage in &stages {
        let head = AamHead::new(head.weight, stage.margin, sched.scale)?;
        let mut stage_step = 0;
        for _ in 0..stage.epochs {
            epoch += 1;
            order.shuffle(rng);
            let (mut loss_sum, mut hits, mut seen) = (0.0, 0.0, 0usize);
            let mut lr = 0.0;
            for (lo, hi) in batch_bounds(order.len(), sched.batch_size) {
                let batch = &order[lo..hi];
                stage_step += 1;
                lr = stage.lr.at(stage_step);
                global_step += 1;
                let mut items = Vec::with_capacity(batch.len());
                for &i in batch {
                    let mut f = random_crop(&data.features[i], stage.crop, rng)?;
                    if sched.spec_augment {
                        f = spec_augment(&f, 5, 10.min(cfg.n_mels), rng)?;
                    }
                    items.push(f.data.reshape(&[cfg.n_mels, stage.crop])?);
                }
                let labels: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
                let x = Tensor::stack(&items)?;

                let mut tape = Tape::new(true);
                let xv = tape.input(x);
                let trace = net.forward(&mut tape, &store, xv, &mut Pass::train(rng))?;
                let (loss, cos) = head.loss(&mut tape, &store, trace.embedding, &labels)?;
                let lv = tape.value(loss).data()[0];
                if !lv.is_finite() {
                    return Err(Error::Diverged { epoch, step: global_step, loss: lv });
                }
                let grads = tape.backward(loss)?;
                if grads.iter().any(|(_, g)| !g.all_finite()) {
                    return Err(Error::Diverged { epoch, step: global_step, loss: lv });
                }
                opt.step(&mut store, &grads, lr)?;
                apply_bn_updates(&mut store, &mut tape);
                loss_sum += lv * labels.len() as f64;
                hits += accuracy(&cos, &labels) * labels.len() as f64;
                seen += labels.len();
            }
            let row = EpochMetrics { epoch, step: global_step, loss: loss_sum / seen as f64, acc: hits / seen as f64, lr };
            log::info!("epoch {} step {} loss {:.4} acc {:.3} lr {:.2e}", row.epoch, row.step, row.loss, row.acc, row.lr);
            metrics.push(row);
        }
    }

    let mut model_store = ParamStore::new();
    for e in &store.entries()[..model_len] {
        model_store.add(e.name.clone(), e.kind, e.value.clone());
    }
    debug_assert!(store.find(AAM_WEIGHT).is_some());
    let model = Model::from_store(&cfg, model_store)?;
    let head = AamHead::new(head.weight, stages.last().map_or(sched.margin, |s| s.margin), sched.scale)?;
    Ok(TrainOutcome { model, store, head, metrics, speakers: data.speakers.clone() })
}

/// Consecutive batch ranges; a trailing single item joins the previous batch
/// since batch statistics need two values.
fn batch_bounds(n: usize, size: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (0..n).step_by(size).map(|lo| (lo, (lo + size).min(n))).collect();
    if out.len() > 1 && out.last().is_some_and(|&(lo, hi)| hi - lo == 1) {
        let (_, hi) = out.pop().unwrap();
        out.last_mut().unwrap().1 = hi;
    }
    out
}
