//! Structure-aware graph transformer.
//!
//! The crate is `no_std` and only needs `alloc`. It carries every numerical
//! piece of the model: graph containers, a reverse-mode differentiation tape,
//! positional encodings, GNN structure extractors, the transformer itself,
//! the optimizer and training loop, synthetic datasets, and the executable
//! checks of the attention bounds. File formats and the command line live in
//! the companion `sat` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod data;
mod error;
pub mod extractors;
pub mod graph;
pub mod gradcheck;
pub mod model;
pub mod params;
pub mod posenc;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use graph::{Graph, InducedSubgraph, NodeSet, Permutation};
pub use model::{ExtractorKind, GnnKind, Readout, SatConfig, SatModel, Task};
pub use params::{ModelParams, ParamId};
pub use posenc::PeKind;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
