//! Counterfactual explanations and responsibility scores for classifiers
//! over finite categorical feature spaces.
//!
//! Entities are vectors of categorical values described by a
//! [`FeatureSchema`]. A counterfactual is a label-flipping change of some
//! of those values; [`search`] enumerates them level by level,
//! [`score`] turns them into responsibility scores, and [`aspgen`] writes
//! the equivalent answer-set program for an external solver.

pub mod aspgen;
pub mod classify;
pub mod cli;
pub mod constrain;
pub mod schema;
pub mod score;
pub mod search;

pub use aspgen::{emit_cip, lint_cip, shift_disjunctive_rule, CipOptions, CipProgram};
pub use classify::{ClassifierHandle, ExternalClassifier, Label, RuleClassifier, TableClassifier};
pub use constrain::{ConstraintSet, DenialConstraint};
pub use schema::{Entity, Explanation, Feature, FeatureSchema, Intervention};
pub use score::{global_resp, local_resp, x_resp, Distribution};
pub use search::{c_explanations, enumerate_counterfactuals, s_explanations, SearchConfig};
