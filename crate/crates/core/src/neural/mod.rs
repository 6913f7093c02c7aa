//! Reverse-mode differentiation over dense 2D tensors, MLP blocks and Adam.

mod adam;
mod checkpoint;
mod graph;
mod mlp;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use graph::{gelu_scalar, Gradients, Graph, ParamId, Var, LAYER_NORM_EPS};
pub use mlp::{Linear, Mlp, NormParams};
pub use tensor::Tensor;

use crate::{Error, Result};

/// Named learnable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replaces every tensor from named sections, which must cover the store exactly.
    pub fn load_sections(&mut self, sections: &[(String, Tensor)]) -> Result<()> {
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            let (_, src) = sections.iter().find(|(n, _)| n == name).ok_or_else(|| {
                Error::InvalidArgument(format!("checkpoint lacks parameter {name}"))
            })?;
            if src.shape() != t.shape() {
                return Err(Error::Shape {
                    op: "load parameter",
                    lhs: t.shape(),
                    rhs: src.shape(),
                });
            }
            *t = src.clone();
        }
        Ok(())
    }

    pub fn sections(&self) -> Vec<(String, Tensor)> {
        self.names
            .iter()
            .cloned()
            .zip(self.tensors.iter().cloned())
            .collect()
    }
}
