//! Incremental approximate propagation over dynamic graphs.
//!
//! [`propagation`] computes `pi = sum_l alpha (1-alpha)^l P^l x` with
//! `P = D^-beta A D^(beta-1)` by forward push, keeping every node's error below
//! `epsilon * d(s)^(1-beta)`. [`update`] keeps that state valid while edges
//! and signals change, [`oracle`] checks it against exact dense solves, and
//! [`adaptive`] decides when downstream models should be retrained.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive;
pub mod error;
pub mod formats;
pub mod graph;
pub mod matrix;
pub mod oracle;
mod par;
pub mod propagation;
pub mod synth;
pub mod update;

pub use error::{Error, Result};
pub use graph::{EventKind, EventLog, Graph, GraphEvent};
pub use matrix::ColumnMatrix;
pub use propagation::{basic_propagate, propagate_all, PropagationConfig, PropagationState, PushStats};
pub use update::{apply_event, apply_events, batch_update, update_attributes, UpdateReport};
