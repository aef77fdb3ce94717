//! Layer-by-layer construction of deep polynomial networks.
//!
//! Each hidden layer's node values on the training set form a basis (or, in
//! width-limited mode, a partial basis) for the values of polynomials of
//! bounded degree. Layer 1 is linear in the input; every later node multiplies
//! a node of the previous layer with a node of layer 1. A convex output layer
//! is fit on top of all nodes.

pub mod basis;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod linalg;
pub mod network;
pub mod oracle;
pub mod output;
pub mod trainer;

pub use dataset::{LabeledDataset, Task};
pub use error::{Error, Result};
pub use linalg::DenseMatrix;
pub use network::{OutputHead, PolyNetwork};
pub use output::LossKind;
pub use trainer::{train, BuildMode, TrainConfig, TrainingTrace};
