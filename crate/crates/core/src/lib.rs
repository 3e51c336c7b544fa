//! Dialog state tracking with a rule-based belief update whose two
//! coefficients are predicted per turn by a small LSTM.
//!
//! Beliefs are per-slot distributions indexed `[None, v1, ..., vK]`. At each
//! turn the SLU n-best is marginalized into per-value inform mass, the LSTM
//! reads a sparse feature vector and emits `(c_new, c_override)`, and the
//! rule moves probability mass between values. Gradients of the whole
//! pipeline are written out by hand and checked against finite differences.

pub mod cli;
pub mod ensemble;
pub mod error;
pub mod io;
pub mod model;
pub mod nn;
pub mod rules;
pub mod slu;
pub mod synth;
pub mod tracker;
pub mod train;

pub use ensemble::{evaluate, score, EnsembleSpec, ScoreReport, ScoringMode};
pub use error::{DstError, Result};
pub use model::{ActType, BeliefState, Dialog, DialogAct, Ontology, SluHypothesis, Turn};
pub use rules::{rule_update, rule_update_backward, RuleCoefficients, TransitionReading};
pub use tracker::{track_dialog, TrackerParams, TrackerRun, TrackerSession};
pub use train::{train_groups, train_one, Group, GroupPlan, TrainConfig};
