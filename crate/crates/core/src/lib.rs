//! Online selection of the exponent `p` of a least-mean-p-power adaptive
//! filter by kernel-based approximate policy iteration.
//!
//! The filter ([`lmp_filter`]) identifies a linear system from streaming
//! data corrupted by outliers. At every step an agent ([`agent`]) summarizes
//! the stream into a four-dimensional state ([`state_features`]), picks `p`
//! greedily from a Q-function represented by random Fourier features
//! ([`rff`]), and refines that Q-function with a steepest-descent step toward
//! a hyperplane containing the fixed points of a nonexpansive sample-average
//! Bellman map ([`kbrl`]).
//!
//! [`environments`] generates α-stable and sparse-outlier streams with a
//! mid-run system change, [`baselines`] holds fixed-p, random-p and kernel
//! TD(0) comparisons, and [`harness`] runs seeded multi-trial experiments and
//! writes learning curves.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod baselines;
pub mod environments;
pub mod error;
pub mod harness;
pub mod kbrl;
pub mod linalg;
pub mod lmp_filter;
pub mod rff;
pub mod rng;
pub mod state_features;

pub use agent::{ApiAgent, ApiConfig, Bandwidth, StepOutcome};
pub use baselines::{BaselineKind, BaselineRunner, KernelTd0, Td0Config};
pub use environments::{Environment, ExperimentConfig, NoiseConfig, StreamSample};
pub use error::{Error, Result};
pub use harness::{normalized_deviation, LearningCurve, MethodKind, MethodSpec, RunSpec};
pub use kbrl::{ActionGrid, AveragingStates, QFunction, ReplayBuffer, ReplayConfig, ReplayRecord};
pub use lmp_filter::FilterState;
pub use rff::{RffMap, StateAction};
pub use state_features::{DataWindow, FeatureConfig, StateVector};
