//! Parameter catalog of a DS-TDNN: names, shapes, kinds and initializers.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::spectral::bins_for;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Uniform(f64),
    Normal(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Default)]
struct Catalog(Vec<ParamSpec>);

impl Catalog {
    fn push(&mut self, name: String, kind: ParamKind, shape: &[usize], init: Init) {
        self.0.push(ParamSpec { name, kind, shape: shape.to_vec(), init });
    }

    fn conv(&mut self, prefix: &str, co: usize, ci: usize, k: usize) {
        let bound = 1.0 / ((ci * k) as f64).sqrt();
        self.push(format!("{prefix}.weight"), ParamKind::Weight, &[co, ci, k], Init::Uniform(bound));
        self.push(format!("{prefix}.bias"), ParamKind::Bias, &[co], Init::Uniform(bound));
    }

    fn linear(&mut self, prefix: &str, o: usize, i: usize) {
        let bound = 1.0 / (i as f64).sqrt();
        self.push(format!("{prefix}.weight"), ParamKind::Weight, &[o, i], Init::Uniform(bound));
        self.push(format!("{prefix}.bias"), ParamKind::Bias, &[o], Init::Uniform(bound));
    }

    fn bn(&mut self, prefix: &str, c: usize) {
        self.push(format!("{prefix}.weight"), ParamKind::NormAffine, &[c], Init::Ones);
        self.push(format!("{prefix}.bias"), ParamKind::NormAffine, &[c], Init::Zeros);
        self.push(format!("{prefix}.running_mean"), ParamKind::Buffer, &[c], Init::Zeros);
        self.push(format!("{prefix}.running_var"), ParamKind::Buffer, &[c], Init::Ones);
    }

    fn conv_bn(&mut self, prefix: &str, co: usize, ci: usize, k: usize) {
        self.conv(&format!("{prefix}.conv"), co, ci, k);
        self.bn(&format!("{prefix}.bn"), co);
    }
}

pub const FILTER_INIT_STD: f64 = 0.02;

/// Every stored array of a network built from `cfg`, in a fixed order.
pub fn param_specs(cfg: &ModelConfig) -> Result<Vec<ParamSpec>> {
    cfg.validate()?;
    let half = cfg.branch_channels();
    let bins = bins_for(cfg.filter_frames);
    let mut cat = Catalog::default();
    cat.conv_bn("stem", cfg.channels, cfg.n_mels, cfg.stem_kernel);
    for (i, &s) in cfg.scales.iter().enumerate() {
        let p = format!("local.{i}");
        let width = half / s;
        cat.conv_bn(&format!("{p}.proj1"), half, half, 1);
        for g in 1..s {
            cat.conv_bn(&format!("{p}.res2.{g}"), width, width, cfg.local_kernel);
        }
        cat.conv_bn(&format!("{p}.proj2"), half, half, 1);
        cat.linear(&format!("{p}.se.fc1"), cfg.se_bottleneck(), half);
        cat.linear(&format!("{p}.se.fc2"), half, cfg.se_bottleneck());
    }
    for (i, &k) in cfg.experts.iter().enumerate() {
        let p = format!("global.{i}");
        cat.conv_bn(&format!("{p}.proj1"), half, half, 1);
        cat.push(format!("{p}.dgf.filters"), ParamKind::Filter, &[k, half, bins, 2], Init::Normal(FILTER_INIT_STD));
        cat.linear(&format!("{p}.dgf.fc1"), k, half);
        cat.linear(&format!("{p}.dgf.fc2"), k, k);
        cat.conv_bn(&format!("{p}.proj2"), half, half, 1);
    }
    cat.conv_bn("mfa", cfg.mfa_dim, cfg.block_pairs() * cfg.channels, 1);
    cat.conv("asp.attn", cfg.mfa_dim, cfg.mfa_dim, 1);
    cat.conv("asp.score", 1, cfg.mfa_dim, 1);
    cat.bn("head.bn", 2 * cfg.mfa_dim);
    cat.linear("head.linear", cfg.embedding_dim, 2 * cfg.mfa_dim);
    Ok(cat.0)
}

/// Exact number of trainable scalars; complex filter entries count twice.
pub fn count_parameters(cfg: &ModelConfig) -> Result<usize> {
    Ok(param_specs(cfg)?.iter().filter(|s| s.kind.is_trainable()).map(ParamSpec::numel).sum())
}

pub(crate) fn materialize<R: Rng + ?Sized>(specs: &[ParamSpec], rng: &mut R) -> ParamStore {
    let mut store = ParamStore::new();
    for s in specs {
        let value = match s.init {
            Init::Zeros => Tensor::zeros(&s.shape),
            Init::Ones => Tensor::full(&s.shape, 1.0),
            Init::Uniform(b) => Tensor::from_fn(&s.shape, |_| rng.random_range(-b..b)),
            Init::Normal(std) => {
                let n = Normal::new(0.0, std).expect("positive std");
                Tensor::from_fn(&s.shape, |_| n.sample(rng))
            }
        };
        store.add(s.name.clone(), s.kind, value);
    }
    store
}

pub(crate) fn lookup(store: &ParamStore, name: &str) -> Result<ParamId> {
    store.find(name).ok_or_else(|| Error::Config(format!("parameter {name} missing from store")))
}
