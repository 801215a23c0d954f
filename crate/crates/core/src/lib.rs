//! Random-walk graph convolutional reasoning over frame regions for
//! video-text retrieval.
//!
//! Per frame, regions are connected by a symmetric dot-product adjacency,
//! normalized into a random-walk transition matrix and passed through a
//! residual graph convolution. Reasoned frame features are pooled into a
//! video embedding and matched against caption embeddings with a
//! hard-negative triplet ranking loss.

pub mod ablation;
pub mod config;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod gcn;
pub mod graph;
pub mod model;
pub mod numerics;
pub mod parallel;
pub mod regions;
pub mod trainer;

pub use error::{Error, Result};
