//! Graph foundation model pipeline: structural prompts built from topology
//! descriptors, contrastive alignment of a graph stream with a text stream
//! across many graphs, and probe-based downstream evaluation.

pub mod adapt;
pub mod descriptors;
pub mod diffcore;
pub mod error;
pub mod exec;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod model;
pub mod pretrain;
pub mod prompt;
pub mod tensor;

pub use error::{Error, ErrorClass, Result};
pub use exec::Exec;
pub use graph::{Graph, Labels, SplitTag};
pub use tensor::Tensor2;
