//! Hierarchical multi-label text classification with text-label alignment.
//!
//! The model pairs a compact transformer text encoder with a graph
//! transformer over the label taxonomy. Each label's feature is added to the
//! pooled text feature and scored by a classifier shared across labels.
//! Training combines binary cross-entropy with a contrastive text-label
//! alignment loss over hard-mined negative labels.

pub mod hierarchy;
pub mod numerics;
pub mod text;
pub mod graph;
pub mod labels;
pub mod losses;
pub mod data;
pub mod eval;
pub mod model;
pub mod cli;
