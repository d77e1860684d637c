//! DS-TDNN forward pass built on the autograd tape.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::layout::{lookup, materialize, param_specs};
use crate::autograd::{SparseApplied, Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::Mode;

/// How the sparse channel mask of global blocks is produced.
pub enum Sparsity<'a> {
    Off,
    /// Fresh mask per global block from the generator.
    Sample(&'a mut ChaCha8Rng),
    /// Reuse masks and gains recorded by an earlier forward, one per global block.
    Replay(&'a [SparseApplied]),
}

/// Per-forward switches: batch statistics in batch norm and the sparse mask source.
pub struct Pass<'a> {
    pub batch_stats: bool,
    pub sparsity: Sparsity<'a>,
}

impl<'a> Pass<'a> {
    pub fn eval() -> Self {
        Self { batch_stats: false, sparsity: Sparsity::Off }
    }

    pub fn train(rng: &'a mut ChaCha8Rng) -> Self {
        Self { batch_stats: true, sparsity: Sparsity::Sample(rng) }
    }

    pub fn mode(mode: Mode, rng: &'a mut ChaCha8Rng) -> Self {
        match mode {
            Mode::Train => Self::train(rng),
            Mode::Eval => Self::eval(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub weight: ParamId,
    pub bias: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    fn resolve(store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(Self {
            weight: lookup(store, &format!("{prefix}.weight"))?,
            bias: lookup(store, &format!("{prefix}.bias"))?,
            running_mean: lookup(store, &format!("{prefix}.running_mean"))?,
            running_var: lookup(store, &format!("{prefix}.running_var"))?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, batch_stats: bool) -> Result<Var> {
        let g = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.batch_norm(
            x,
            g,
            b,
            (self.running_mean, store.get(self.running_mean)),
            (self.running_var, store.get(self.running_var)),
            batch_stats,
        )
    }
}

#[derive(Debug, Clone)]
pub struct Affine {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Affine {
    fn resolve(store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(Self { weight: lookup(store, &format!("{prefix}.weight"))?, bias: lookup(store, &format!("{prefix}.bias"))? })
    }

    fn conv(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let k = store.get(self.weight).shape()[2];
        tape.conv1d(x, w, b, k / 2)
    }

    fn linear(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.linear(x, w, b)
    }
}

/// Convolution, ReLU, then batch norm.
#[derive(Debug, Clone)]
pub struct ConvReluBn {
    pub conv: Affine,
    pub bn: BatchNorm,
}

impl ConvReluBn {
    fn resolve(store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(Self {
            conv: Affine::resolve(store, &format!("{prefix}.conv"))?,
            bn: BatchNorm::resolve(store, &format!("{prefix}.bn"))?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, batch_stats: bool) -> Result<Var> {
        let h = self.conv.conv(tape, store, x)?;
        let h = tape.relu(h);
        self.bn.forward(tape, store, h, batch_stats)
    }
}

/// Hierarchical grouped convolution; the first group passes through.
#[derive(Debug, Clone)]
pub struct Res2Conv {
    pub scale: usize,
    /// `scale − 1` convolutions, each followed by batch norm then ReLU.
    pub groups: Vec<(Affine, BatchNorm)>,
}

impl Res2Conv {
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, batch_stats: bool) -> Result<Var> {
        let (_, c, _) = tape.value(x).dims3()?;
        if c % self.scale != 0 {
            return Err(Error::Config(format!("{c} channels cannot split into {} groups", self.scale)));
        }
        let width = c / self.scale;
        let mut outs = Vec::with_capacity(self.scale);
        let mut prev = tape.narrow(x, 0, width)?;
        outs.push(prev);
        for (g, (conv, bn)) in self.groups.iter().enumerate() {
            let xi = tape.narrow(x, (g + 1) * width, width)?;
            let inp = tape.add(xi, prev)?;
            let h = conv.conv(tape, store, inp)?;
            let h = bn.forward(tape, store, h, batch_stats)?;
            prev = tape.relu(h);
            outs.push(prev);
        }
        if outs.len() == 1 {
            return Ok(outs[0]);
        }
        tape.concat(&outs)
    }
}

/// Squeeze-excitation channel gate.
#[derive(Debug, Clone)]
pub struct SqueezeExcite {
    pub fc1: Affine,
    pub fc2: Affine,
}

impl SqueezeExcite {
    pub fn gates(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let s = tape.mean_time(x)?;
        let h = self.fc1.linear(tape, store, s)?;
        let h = tape.relu(h);
        let h = self.fc2.linear(tape, store, h)?;
        Ok(tape.sigmoid(h))
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = self.gates(tape, store, x)?;
        tape.channel_gate(x, g)
    }
}

#[derive(Debug, Clone)]
pub struct LocalBlock {
    pub proj1: ConvReluBn,
    pub res2: Res2Conv,
    pub proj2: ConvReluBn,
    pub se: SqueezeExcite,
}

impl LocalBlock {
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, batch_stats: bool) -> Result<Var> {
        let h = self.proj1.forward(tape, store, x, batch_stats)?;
        let h = self.res2.forward(tape, store, h, batch_stats)?;
        let h = self.proj2.forward(tape, store, h, batch_stats)?;
        self.se.forward(tape, store, h)
    }
}

/// Dynamic global filter layer: expert bank plus its two-layer scorer.
#[derive(Debug, Clone)]
pub struct DynamicFilterLayer {
    pub filters: ParamId,
    pub fc1: Affine,
    pub fc2: Affine,
    pub sparse_ratio: f64,
}

impl DynamicFilterLayer {
    pub fn scores(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let s = tape.mean_time(x)?;
        let h = self.fc1.linear(tape, store, s)?;
        let h = tape.relu(h);
        let logits = self.fc2.linear(tape, store, h)?;
        tape.softmax(logits)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, sparsity: &mut Sparsity<'_>) -> Result<Var> {
        let (b, c, _) = tape.value(x).dims3()?;
        let scores = self.scores(tape, store, x)?;
        let bank = tape.param(store, self.filters);
        let sparse = match sparsity {
            Sparsity::Off => None,
            Sparsity::Sample(rng) => {
                let keep = (0..b * c)
                    .map(|_| if rng.random::<f64>() >= self.sparse_ratio { 1.0 } else { 0.0 })
                    .collect();
                Some((keep, None))
            }
            Sparsity::Replay(recorded) => {
                let idx = tape.sparse_applied().len();
                let rec = recorded
                    .get(idx)
                    .ok_or_else(|| Error::Contract(format!("no recorded sparse mask for global block {idx}")))?;
                Some((rec.keep.clone(), Some(rec.lambda.clone())))
            }
        };
        tape.dynamic_filter(x, bank, scores, sparse)
    }
}

#[derive(Debug, Clone)]
pub struct GlobalBlock {
    pub proj1: ConvReluBn,
    pub dgf: DynamicFilterLayer,
    pub proj2: ConvReluBn,
}

impl GlobalBlock {
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        batch_stats: bool,
        sparsity: &mut Sparsity<'_>,
    ) -> Result<Var> {
        let h = self.proj1.forward(tape, store, x, batch_stats)?;
        let h = self.dgf.forward(tape, store, h, sparsity)?;
        let h = self.proj2.forward(tape, store, h, batch_stats)?;
        tape.add(h, x)
    }
}

/// Attentive statistics pooling.
#[derive(Debug, Clone)]
pub struct AttentivePool {
    pub attn: Affine,
    pub score: Affine,
}

impl AttentivePool {
    /// Frame weights `B × 1 × T`.
    pub fn weights(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<Var> {
        let a = self.attn.conv(tape, store, h)?;
        let a = tape.tanh(a);
        let e = self.score.conv(tape, store, a)?;
        tape.softmax(e)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<Var> {
        let (_, _, t) = tape.value(h).dims3()?;
        if t < 2 {
            return Err(Error::InvalidInput(format!("pooling needs at least 2 frames, got {t}")));
        }
        let alpha = self.weights(tape, store, h)?;
        tape.asp_stats(h, alpha)
    }
}

/// Fuse the previous block outputs into the next local and global inputs.
pub fn fuse_branches(tape: &mut Tape, local: Var, global: Var, weight: f64) -> Result<(Var, Var)> {
    if tape.value(local).shape() != tape.value(global).shape() {
        return shape_err("branch outputs differ in shape");
    }
    let l = tape.axpby(local, global, weight, 1.0 - weight)?;
    let g = tape.axpby(local, global, 1.0 - weight, weight)?;
    Ok((l, g))
}

/// Intermediate nodes of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub stem: (Var, Var),
    pub blocks: Vec<(Var, Var)>,
    pub mfa: Var,
    pub pooled: Var,
    pub embedding: Var,
}

#[derive(Debug, Clone)]
pub struct DsTdnn {
    pub cfg: ModelConfig,
    pub stem: ConvReluBn,
    pub local: Vec<LocalBlock>,
    pub global: Vec<GlobalBlock>,
    pub mfa: ConvReluBn,
    pub asp: AttentivePool,
    pub head_bn: BatchNorm,
    pub head: Affine,
}

impl DsTdnn {
    /// Resolve layer handles for a store laid out by [`param_specs`].
    pub fn resolve(cfg: &ModelConfig, store: &ParamStore) -> Result<Self> {
        let specs = param_specs(cfg)?;
        for s in &specs {
            let id = lookup(store, &s.name)?;
            if store.get(id).shape() != s.shape.as_slice() {
                return shape_err(format!("{}: expected {:?}, got {:?}", s.name, s.shape, store.get(id).shape()));
            }
        }
        let local = cfg
            .scales
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let p = format!("local.{i}");
                Ok(LocalBlock {
                    proj1: ConvReluBn::resolve(store, &format!("{p}.proj1"))?,
                    res2: Res2Conv {
                        scale: s,
                        groups: (1..s)
                            .map(|g| {
                                Ok((
                                    Affine::resolve(store, &format!("{p}.res2.{g}.conv"))?,
                                    BatchNorm::resolve(store, &format!("{p}.res2.{g}.bn"))?,
                                ))
                            })
                            .collect::<Result<_>>()?,
                    },
                    proj2: ConvReluBn::resolve(store, &format!("{p}.proj2"))?,
                    se: SqueezeExcite {
                        fc1: Affine::resolve(store, &format!("{p}.se.fc1"))?,
                        fc2: Affine::resolve(store, &format!("{p}.se.fc2"))?,
                    },
                })
            })
            .collect::<Result<_>>()?;
        let global = cfg
            .sparse_ratios
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let p = format!("global.{i}");
                Ok(GlobalBlock {
                    proj1: ConvReluBn::resolve(store, &format!("{p}.proj1"))?,
                    dgf: DynamicFilterLayer {
                        filters: lookup(store, &format!("{p}.dgf.filters"))?,
                        fc1: Affine::resolve(store, &format!("{p}.dgf.fc1"))?,
                        fc2: Affine::resolve(store, &format!("{p}.dgf.fc2"))?,
                        sparse_ratio: r,
                    },
                    proj2: ConvReluBn::resolve(store, &format!("{p}.proj2"))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            cfg: cfg.clone(),
            stem: ConvReluBn::resolve(store, "stem")?,
            local,
            global,
            mfa: ConvReluBn::resolve(store, "mfa")?,
            asp: AttentivePool {
                attn: Affine::resolve(store, "asp.attn")?,
                score: Affine::resolve(store, "asp.score")?,
            },
            head_bn: BatchNorm::resolve(store, "head.bn")?,
            head: Affine::resolve(store, "head.linear")?,
        })
    }

    /// Stem: convolution, ReLU, batch norm, then a channel split into two halves.
    pub fn stem(&self, tape: &mut Tape, store: &ParamStore, x: Var, batch_stats: bool) -> Result<(Var, Var)> {
        let (_, c, _) = tape.value(x).dims3()?;
        if c != self.cfg.n_mels {
            return shape_err(format!("expected {} feature channels, got {c}", self.cfg.n_mels));
        }
        let h = self.stem.forward(tape, store, x, batch_stats)?;
        let half = self.cfg.branch_channels();
        Ok((tape.narrow(h, 0, half)?, tape.narrow(h, half, half)?))
    }

    /// Concatenate all local then all global block outputs and project to the MFA width.
    pub fn mfa_project(&self, tape: &mut Tape, store: &ParamStore, blocks: &[(Var, Var)], batch_stats: bool) -> Result<Var> {
        let mut parts: Vec<Var> = blocks.iter().map(|b| b.0).collect();
        parts.extend(blocks.iter().map(|b| b.1));
        let cat = tape.concat(&parts)?;
        self.mfa.forward(tape, store, cat, batch_stats)
    }

    /// Batch norm then affine projection to the embedding width.
    pub fn embed(&self, tape: &mut Tape, store: &ParamStore, pooled: Var, batch_stats: bool) -> Result<Var> {
        let h = self.head_bn.forward(tape, store, pooled, batch_stats)?;
        self.head.linear(tape, store, h)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, pass: &mut Pass<'_>) -> Result<ForwardTrace> {
        let (_, _, t) = tape.value(x).dims3()?;
        if t < 2 || t < self.cfg.stem_kernel / 2 + 1 {
            return Err(Error::InvalidInput(format!("{t} frames is too short for the network")));
        }
        tape.value(x).ensure_finite("network input")?;
        let bs = pass.batch_stats;
        let stem = self.stem(tape, store, x, bs)?;
        let (mut l, mut g) = stem;
        let mut blocks = Vec::with_capacity(self.local.len());
        for (lb, gb) in self.local.iter().zip(&self.global) {
            let (li, gi) = fuse_branches(tape, l, g, self.cfg.fusion_weight)?;
            l = lb.forward(tape, store, li, bs)?;
            g = gb.forward(tape, store, gi, bs, &mut pass.sparsity)?;
            blocks.push((l, g));
        }
        let mfa = self.mfa_project(tape, store, &blocks, bs)?;
        let pooled = self.asp.forward(tape, store, mfa)?;
        let embedding = self.embed(tape, store, pooled, bs)?;
        tape.value(embedding).ensure_finite("embedding")?;
        Ok(ForwardTrace { stem, blocks, mfa, pooled, embedding })
    }
}

/// A network together with its parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub net: DsTdnn,
    pub store: ParamStore,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let store = materialize(&param_specs(cfg)?, rng);
        let net = DsTdnn::resolve(cfg, &store)?;
        Ok(Self { net, store })
    }

    pub fn from_store(cfg: &ModelConfig, store: ParamStore) -> Result<Self> {
        let net = DsTdnn::resolve(cfg, &store)?;
        Ok(Self { net, store })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.cfg
    }

    /// Eval-mode embeddings for a `batch × n_mels × T` feature tensor.
    pub fn embed(&self, features: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new(false);
        let x = tape.input(features.clone());
        let trace = self.net.forward(&mut tape, &self.store, x, &mut Pass::eval())?;
        Ok(tape.value(trace.embedding).clone())
    }

    /// Forward in the given mode; training mode draws sparse masks from `rng`.
    pub fn forward(&self, features: &Tensor, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let mut tape = Tape::new(false);
        let x = tape.input(features.clone());
        let trace = self.net.forward(&mut tape, &self.store, x, &mut Pass::mode(mode, rng))?;
        Ok(tape.value(trace.embedding).clone())
    }
}
