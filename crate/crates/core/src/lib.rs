//! Heterogeneous-graph self-supervised learning with metapath jump-number
//! pretext tasks and a meta-learned contribution network.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is a pure
//! function of its inputs; file formats, the synthetic generator and the
//! command-line driver live in the companion `sesim` crate.
//!
//! Pipeline overview:
//!
//! 1. [`graph`] composes typed biadjacency matrices along each metapath into
//!    a collapsed boolean adjacency over target-type nodes.
//! 2. [`pseudolabel`] assigns jump-number labels to node pairs of every
//!    collapsed graph.
//! 3. [`model`] holds the two-layer GCN encoder, the primary-task head, one
//!    pretext head per metapath and the contribution network.
//! 4. [`trainer`] runs the virtual step / meta update / actual step loop.
//! 5. [`metrics`] scores the result (Macro-F1, Micro-F1, AUC).
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod autodiff;
mod error;
pub mod graph;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod pseudolabel;
pub mod rng;
pub mod sparse;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{CollapsedAdj, HetGraph, Hop, MetapathSpec, NormAdj, Relation};
pub use matrix::Matrix;
pub use pseudolabel::{JumpLabel, JumpLabelSet, PairSamplerConfig};
pub use sparse::BoolCsr;
