//! Object-centric scene decomposition with stick-breaking attention
//! clustering: a differentiable tensor engine, an instance-colouring
//! stick-breaking clustering of pixel embeddings, an object-centric VAE
//! with a spatial Gaussian mixture likelihood, GECO-constrained training,
//! and segmentation metrics over a procedural sprite corpus.

pub mod config;
pub mod data;
pub mod embeddings;
pub mod geco;
pub mod icsbp;
pub mod kernels;
pub mod likelihood;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod training;

pub use tensor::{Array, El, Graph, RngState, Tensor};
