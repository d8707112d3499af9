//! Change-deployment risk engine: ITSM corpus handling, causal labelling,
//! feature extraction, histogram gradient boosting, TreeSHAP attributions,
//! weighted evaluation and backtesting.

pub mod corpus;
pub mod error;
pub mod evalkit;
pub mod explain;
pub mod featurize;
pub mod gbdt;
pub mod harness;
pub mod linkage;
pub mod matrix;
pub mod rulebase;

pub use corpus::{ChangeTicket, ClosureCode, Corpus, IncidentTicket, Priority, ReleaseOutcome, ReleaseRecord};
pub use error::{Error, Result};
pub use featurize::{FeatureConfig, FeatureSchema};
pub use linkage::{ChangeIncidentLink, LabeledChange, PriorityWeights};
pub use matrix::{ColumnInfo, FeatureKind, FeatureMatrix};
pub use gbdt::{Forest, Hyperparams, TrainedModel};
