//! Input-conditioned mixing of expert global filters and the training-time
//! sparse channel mask.

use rand::Rng;
use rustfft::num_complex::Complex64;

use crate::autograd::Tape;
use crate::error::{shape_err, Error, Result};
use crate::spectral::{interpolate_filter, GlobalFilter};
use crate::tensor::Tensor;
use crate::Mode;

/// `K` expert filters, each `channels × bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub experts: Vec<GlobalFilter>,
}

impl FilterBank {
    pub fn new(experts: Vec<GlobalFilter>) -> Result<Self> {
        let first = experts.first().ok_or_else(|| Error::InvalidInput("a filter bank needs K ≥ 1".into()))?;
        if experts.iter().any(|e| e.channels != first.channels || e.bins != first.bins) {
            return shape_err("experts in a bank must share channels and bins");
        }
        if experts.iter().any(|e| !e.is_finite()) {
            return Err(Error::Numeric("filter bank has non-finite entries".into()));
        }
        Ok(Self { experts })
    }

    pub fn k(&self) -> usize {
        self.experts.len()
    }

    pub fn channels(&self) -> usize {
        self.experts[0].channels
    }

    pub fn bins(&self) -> usize {
        self.experts[0].bins
    }

    /// Interleaved `K × C × B × 2` real layout used by parameters and checkpoints.
    pub fn to_tensor(&self) -> Tensor {
        let (k, c, b) = (self.k(), self.channels(), self.bins());
        let mut data = Vec::with_capacity(k * c * b * 2);
        for e in &self.experts {
            for z in &e.data {
                data.push(z.re);
                data.push(z.im);
            }
        }
        Tensor::from_vec(&[k, c, b, 2], data).expect("consistent bank layout")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (k, c, b) = match t.shape() {
            &[k, c, b, 2] => (k, c, b),
            s => return shape_err(format!("filter bank tensor must be K × C × B × 2, got {:?}", s)),
        };
        let plane = c * b;
        let experts = (0..k)
            .map(|e| {
                let d = &t.data()[e * plane * 2..(e + 1) * plane * 2];
                GlobalFilter::new(c, b, d.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(experts)
    }
}

/// Two-layer scorer `Softmax(FC₂(ReLU(FC₁(GAP(x)))))` with `K` units in both layers.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionScorer {
    /// `K × C`
    pub fc1_weight: Tensor,
    pub fc1_bias: Tensor,
    /// `K × K`
    pub fc2_weight: Tensor,
    pub fc2_bias: Tensor,
}

impl AttentionScorer {
    pub fn zeros(channels: usize, k: usize) -> Self {
        Self {
            fc1_weight: Tensor::zeros(&[k, channels]),
            fc1_bias: Tensor::zeros(&[k]),
            fc2_weight: Tensor::zeros(&[k, k]),
            fc2_bias: Tensor::zeros(&[k]),
        }
    }

    pub fn k(&self) -> usize {
        self.fc2_bias.len()
    }

    fn validate(&self, channels: usize) -> Result<()> {
        let k = self.k();
        if self.fc1_weight.shape() != [k, channels]
            || self.fc1_bias.len() != k
            || self.fc2_weight.shape() != [k, k]
        {
            return shape_err(format!("scorer does not map {channels} channels to {k} scores"));
        }
        Ok(())
    }
}

/// Binary per-(item, channel) mask; rows with `keep = false` are deactivated.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMask {
    pub batch: usize,
    pub channels: usize,
    pub ratio: f64,
    pub keep: Vec<bool>,
}

impl SparseMask {
    pub fn as_weights(&self) -> Vec<f64> {
        self.keep.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect()
    }

    pub fn zero_fraction(&self) -> f64 {
        self.keep.iter().filter(|k| !**k).count() as f64 / self.keep.len().max(1) as f64
    }
}

/// Each row is kept independently with probability `1 − ratio`.
pub fn sample_sparse_mask<R: Rng + ?Sized>(batch: usize, channels: usize, ratio: f64, rng: &mut R) -> Result<SparseMask> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidInput(format!("sparse ratio {ratio} outside [0, 1]")));
    }
    let keep = (0..batch * channels).map(|_| rng.random::<f64>() >= ratio).collect();
    Ok(SparseMask { batch, channels, ratio, keep })
}

/// Mean magnitude of a filter, the gain given to deactivated rows.
pub fn sparse_scale(f: &GlobalFilter) -> f64 {
    f.data.iter().map(|z| z.norm()).sum::<f64>() / f.data.len() as f64
}

fn run_scorer(tape: &mut Tape, x: &Tensor, a: &AttentionScorer) -> Result<crate::autograd::Var> {
    let xv = tape.input(x.clone());
    let pooled = tape.mean_time(xv)?;
    let w1 = tape.input(a.fc1_weight.clone());
    let b1 = tape.input(a.fc1_bias.clone());
    let w2 = tape.input(a.fc2_weight.clone());
    let b2 = tape.input(a.fc2_bias.clone());
    let h = tape.linear(pooled, w1, b1)?;
    let h = tape.relu(h);
    let logits = tape.linear(h, w2, b2)?;
    let s = tape.softmax(logits)?;
    tape.value(s).ensure_finite("attention scores")?;
    Ok(s)
}

/// Per-item expert weights `batch × K`; frames are averaged before scoring.
pub fn attention_scores(x: &Tensor, a: &AttentionScorer) -> Result<Tensor> {
    let (_, c, _) = x.dims3()?;
    a.validate(c)?;
    let mut tape = Tape::new(false);
    let s = run_scorer(&mut tape, x, a)?;
    Ok(tape.value(s).clone())
}

/// `F_d[b] = Σ_k w[b,k]·F_k` for every batch item.
pub fn combine_filters(bank: &FilterBank, w: &Tensor) -> Result<Vec<GlobalFilter>> {
    let (batch, k) = w.dims2()?;
    if k != bank.k() {
        return shape_err(format!("{k} scores for {} experts", bank.k()));
    }
    (0..batch)
        .map(|b| {
            let mut data = vec![Complex64::new(0.0, 0.0); bank.channels() * bank.bins()];
            for (e, expert) in bank.experts.iter().enumerate() {
                let wk = w.data()[b * k + e];
                for (d, f) in data.iter_mut().zip(&expert.data) {
                    *d += f * wk;
                }
            }
            GlobalFilter::new(bank.channels(), bank.bins(), data)
        })
        .collect()
}

/// Result of a dynamic filter layer together with the per-item sparse gains used.
#[derive(Debug, Clone)]
pub struct DgfOutput {
    pub output: Tensor,
    pub scores: Tensor,
    pub lambda: Option<Vec<f64>>,
}

/// Dynamic global-aware filtering. The bank is interpolated to the input length
/// when its bin count differs. A mask is only accepted in training mode.
pub fn dgf_forward(
    x: &Tensor,
    bank: &FilterBank,
    a: &AttentionScorer,
    mask: Option<&SparseMask>,
    mode: Mode,
) -> Result<DgfOutput> {
    let (b, c, _) = x.dims3()?;
    if bank.channels() != c {
        return shape_err(format!("bank has {} channels, input {c}", bank.channels()));
    }
    if a.k() != bank.k() {
        return shape_err(format!("scorer emits {} scores for {} experts", a.k(), bank.k()));
    }
    a.validate(c)?;
    if mask.is_some() && mode == Mode::Eval {
        return Err(Error::Contract("sparse mask supplied in inference mode".into()));
    }
    if let Some(m) = mask {
        if m.batch != b || m.channels != c {
            return shape_err(format!("mask {}x{} for batch {b}, channels {c}", m.batch, m.channels));
        }
    }
    let mut tape = Tape::new(false);
    let scores = run_scorer(&mut tape, x, a)?;
    let xv = tape.input(x.clone());
    let bank_v = tape.input(bank.to_tensor());
    let y = tape.dynamic_filter(xv, bank_v, scores, mask.map(|m| (m.as_weights(), None)))?;
    let lambda = tape.sparse_applied().last().map(|s| s.lambda.clone());
    Ok(DgfOutput { output: tape.value(y).clone(), scores: tape.value(scores).clone(), lambda })
}

/// Expert filters resampled for a length-`t` input.
pub fn interpolate_bank(bank: &FilterBank, t: usize) -> Result<FilterBank> {
    FilterBank::new(bank.experts.iter().map(|e| interpolate_filter(e, t)).collect::<Result<_>>()?)
}
