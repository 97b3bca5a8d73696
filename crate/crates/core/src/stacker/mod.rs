//! Stacking: patient-grouped folds, out-of-fold base probabilities, the
//! meta-feature matrix, and the tuned meta-learner.

mod features;
mod folds;
pub mod gbdt;
mod linear;
mod meta;
mod oof;
pub mod tpe;

pub use features::{assemble_meta_features, write_oof_table, EventMeta, MetaWidth};
pub use folds::{assign_folds, FoldAssignment};
pub use gbdt::{Gbdt, GbdtParams};
pub use linear::{LinearModel, LinearParams};
pub use meta::{
    feature_importance, tune_and_fit_meta, HyperparameterSpace, MetaData, MetaLearner, MetaLearnerKind, MetaModel,
    MetaOptions, Trial,
};
pub use oof::{audit_oof, carve_validation, generate_oof, AuditEntry, BaseLearner, HeadLearner, OofResult};
