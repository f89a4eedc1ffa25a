use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Index of a tensor inside [`ModelParams`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named collection of trainable tensors.
///
/// The order is fixed by whoever registers the tensors (the model builds it
/// deterministically from its configuration), which is what lets a
/// checkpoint be matched back onto a freshly built layout.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar coordinates.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn zeros_like(&self) -> ModelParams {
        ModelParams {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect(),
        }
    }

    /// Registers every tensor as a trainable leaf; the returned vector is
    /// indexed by [`ParamId::index`].
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    /// Adds the gradients reached by the last backward pass into `self`.
    pub fn accumulate_grads(&mut self, tape: &Tape, vars: &[Var]) {
        for (t, v) in self.tensors.iter_mut().zip(vars) {
            if let Some(g) = tape.grad(*v) {
                for (a, b) in t.data_mut().iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for t in &mut self.tensors {
            for v in t.data_mut() {
                *v *= c;
            }
        }
    }

    /// Replaces tensors by name from `other`; names and shapes must match exactly.
    pub fn load_from(&mut self, other: &ModelParams) -> Result<()> {
        if self.names != other.names {
            return Err(Error::ParamMismatch(format!(
                "expected {} tensors [{}], found {}",
                self.len(),
                self.names.join(", "),
                other.len()
            )));
        }
        for ((name, mine), theirs) in self.names.iter().zip(&mut self.tensors).zip(&other.tensors) {
            if mine.shape() != theirs.shape() {
                return Err(Error::ParamMismatch(format!(
                    "{name}: expected {:?}, found {:?}",
                    mine.shape(),
                    theirs.shape()
                )));
            }
            *mine = theirs.clone();
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    pub fn names(&self) -> Vec<String> {
        self.names.iter().map(ToString::to_string).collect()
    }
}
