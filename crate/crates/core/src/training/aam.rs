//! Additive angular margin classification head.

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::tensor::Tensor;

pub const AAM_WEIGHT: &str = "aam.weight";

#[derive(Debug, Clone)]
pub struct AamHead {
    pub weight: ParamId,
    pub margin: f64,
    pub scale: f64,
}

impl AamHead {
    /// Add an `n_classes × dim` class matrix (Xavier-uniform) to `store`.
    pub fn attach<R: Rng + ?Sized>(
        store: &mut ParamStore,
        n_classes: usize,
        dim: usize,
        margin: f64,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::InvalidInput("margin loss needs at least 2 classes".into()));
        }
        if store.find(AAM_WEIGHT).is_some() {
            return Err(Error::Config(format!("{AAM_WEIGHT} already present")));
        }
        let bound = (6.0 / (n_classes + dim) as f64).sqrt();
        let w = Tensor::from_fn(&[n_classes, dim], |_| rng.random_range(-bound..bound));
        let weight = store.add(AAM_WEIGHT, ParamKind::Weight, w);
        Self::new(weight, margin, scale)
    }

    pub fn new(weight: ParamId, margin: f64, scale: f64) -> Result<Self> {
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&margin) {
            return Err(Error::Config(format!("margin {margin} outside [0, pi/2)")));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Config(format!("scale {scale} must be positive")));
        }
        Ok(Self { weight, margin, scale })
    }

    pub fn classes(&self, store: &ParamStore) -> usize {
        store.get(self.weight).shape()[0]
    }

    /// Batch-mean loss node and margin-free cosines `B × classes`.
    pub fn loss(&self, tape: &mut Tape, store: &ParamStore, emb: Var, labels: &[usize]) -> Result<(Var, Tensor)> {
        let w = tape.param(store, self.weight);
        tape.aam_loss(emb, w, labels, self.margin, self.scale)
    }
}

/// Loss value and cosines without recording gradients.
pub fn aam_loss(emb: &Tensor, weight: &Tensor, labels: &[usize], margin: f64, scale: f64) -> Result<(f64, Tensor)> {
    let mut tape = Tape::new(false);
    let e = tape.input(emb.clone());
    let w = tape.input(weight.clone());
    let (l, cos) = tape.aam_loss(e, w, labels, margin, scale)?;
    Ok((tape.value(l).data()[0], cos))
}

/// Fraction of rows whose highest cosine is the labelled class.
pub fn accuracy(cosines: &Tensor, labels: &[usize]) -> f64 {
    let n = cosines.shape()[1];
    let hits = cosines
        .data()
        .chunks(n)
        .zip(labels)
        .filter(|(row, &y)| (0..n).max_by(|&a, &b| row[a].total_cmp(&row[b])) == Some(y))
        .count();
    hits as f64 / labels.len().max(1) as f64
}
