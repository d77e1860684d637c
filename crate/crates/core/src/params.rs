//! Named parameter storage shared by the network, the optimizer and checkpoints.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Role of a stored array; decides weight decay and whether it counts as a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Bias,
    /// Batch-norm scale and shift.
    NormAffine,
    /// Complex filter bank stored as interleaved (re, im) pairs, shape `K × C × B × 2`.
    Filter,
    /// Batch-norm running statistics; not trained.
    Buffer,
}

impl ParamKind {
    pub fn is_trainable(self) -> bool {
        self != ParamKind::Buffer
    }

    pub fn decays(self) -> bool {
        matches!(self, ParamKind::Weight | ParamKind::Filter)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.entries.push(ParamEntry { name, kind, value });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Result<&Tensor> {
        self.find(name)
            .map(|id| self.get(id))
            .ok_or_else(|| Error::InvalidInput(format!("no parameter named {name}")))
    }

    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self
            .find(name)
            .ok_or_else(|| Error::InvalidInput(format!("no parameter named {name}")))?;
        if self.get(id).shape() != value.shape() {
            return Err(Error::Shape(format!(
                "{name}: expected {:?}, got {:?}",
                self.get(id).shape(),
                value.shape()
            )));
        }
        *self.get_mut(id) = value;
        Ok(())
    }

    /// Number of trainable scalars (filters count real and imaginary parts).
    pub fn trainable_scalars(&self) -> usize {
        self.entries.iter().filter(|e| e.kind.is_trainable()).map(|e| e.value.len()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }
}
