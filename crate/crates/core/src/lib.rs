//! Training of feed-forward sparsifying-transform networks without
//! backpropagation: per-node local goals, local propagation constraints,
//! and two-stage alternating estimation with decoupled per-level weight
//! updates that run in synchronous or asynchronous scheduling mode.
//!
//! The crate is organized along the pipeline:
//!
//! - [`config`] / [`state`] — architecture, hyperparameters, weights,
//!   per-level representations, checkpoints, training reports;
//! - [`transforms`] — the soft-threshold activation and its corrective
//!   variant;
//! - [`objective`] — every term of the training objective;
//! - [`goal`] — exact-goal representations under the cross-class
//!   discrimination constraint;
//! - [`stages`] — the forward stage and the decoupled per-level
//!   alternation;
//! - [`scheduler`] — batching, schedule masks, the outer loop;
//! - [`data`] — IDX ingestion and class-major arrangement;
//! - [`eval`] — embedding, linear classification, goal-propagation probe.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod goal;
pub mod linalg;
pub mod objective;
pub mod scheduler;
pub mod stages;
pub mod state;
pub mod transforms;

pub use config::{validate, HyperParams, NetworkConfig, PenaltyKind, ScheduleMode};
pub use error::{LpnError, Result};
pub use goal::GoalSolveSettings;
pub use linalg::Mat;
pub use scheduler::{train, train_class_matrix, TrainOptions};
pub use state::{ClassMatrix, NodeState, TrainReport, WeightSet};
