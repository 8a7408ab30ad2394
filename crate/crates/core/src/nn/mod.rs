//! Dense tensors, tape-based autodiff, neural layers and Adam.

mod adam;
pub mod layers;
mod tape;
mod tensor;

#[cfg(test)]
pub(crate) mod testutil;

pub use self::adam::AdamState;
pub use self::layers::{
    attention_support, batch_norm, dropout, gat_layer, gcn_layer, glorot_uniform, linear,
    BatchNormStats, GatHead,
};
pub use self::tape::{BatchStats, Gradients, Mode, ReconLoss, Tape, TargetPattern, Var};
pub use self::tensor::{CsrMatrix, Tensor2};

/// Named tensors in a fixed insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor2>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends or replaces `name`.
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor2) {
        let name = name.into();
        match self.index_of(&name) {
            Some(i) => self.tensors[i] = t,
            None => {
                self.names.push(name);
                self.tensors.push(t);
            }
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor2> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor2> {
        self.index_of(name).map(|i| &mut self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor2] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor2] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor2)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor2::len).sum()
    }
}
