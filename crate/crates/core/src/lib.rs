//! Multimodal news recommendation engine.
//!
//! News items arrive as four precomputed embeddings (image, title, topic,
//! subtopic). A cross-modal attention encoder fuses them into one vector per
//! item. The user model reads the ordered click history through a temporal
//! branch (multi-head attention then a GRU) and a preference branch
//! (multi-head attention then additive pooling), and scores candidates with a
//! learned mix of both. Everything runs on [`Tensor`] (dense `f64`, rank 2)
//! with reverse-mode differentiation through [`Graph`].

pub mod attention;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod params;
pub mod tensor;
pub mod training;
pub mod user;

pub use error::{Error, Result};
pub use graph::{GradientMap, Graph, NodeId};
pub use params::{Init, ParamId, ParamStore};
pub use tensor::Tensor;
