use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tree::{Node, Tree};
use super::Hyperparams;
use crate::error::{Error, Result};
use crate::matrix::{FeatureKind, FeatureMatrix};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const LOG_ODDS_CLAMP: f64 = 15.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub base_score: f64,
    pub trees: Vec<Tree>,
    pub feature_names: Vec<String>,
    pub feature_kinds: Vec<FeatureKind>,
}

pub fn sigmoid(m: f64) -> f64 {
    if m >= 0.0 {
        1.0 / (1.0 + (-m).exp())
    } else {
        let e = m.exp();
        e / (1.0 + e)
    }
}

pub fn logit_clamped(p: f64) -> f64 {
    let raw = (p / (1.0 - p)).ln();
    if raw.is_nan() {
        0.0
    } else {
        raw.clamp(-LOG_ODDS_CLAMP, LOG_ODDS_CLAMP)
    }
}

/// Probability to integer score, round-half-up.
pub fn probability_to_score(p: f64) -> u8 {
    (100.0 * p + 0.5).floor().clamp(0.0, 100.0) as u8
}

pub fn margin_to_score(m: f64) -> u8 {
    probability_to_score(sigmoid(m))
}

impl Forest {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn predict_margin(&self, row: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }

    pub fn predict_probability(&self, row: &[f64]) -> f64 {
        sigmoid(self.predict_margin(row))
    }

    pub fn predict_score(&self, row: &[f64]) -> u8 {
        margin_to_score(self.predict_margin(row))
    }

    /// Base score plus the cover-weighted mean of every tree.
    pub fn expected_margin(&self) -> f64 {
        self.base_score + self.trees.iter().map(Tree::expected_value).sum::<f64>()
    }

    pub fn has_covers(&self) -> bool {
        self.trees.iter().all(|t| {
            t.nodes.iter().all(|n| match n {
                Node::Leaf { cover, .. } => *cover > 0.0 && cover.is_finite(),
                Node::Split { cover, .. } => *cover > 0.0 && cover.is_finite(),
            })
        })
    }

    pub fn used_features(&self) -> std::collections::BTreeSet<usize> {
        self.trees.iter().flat_map(|t| t.split_features()).collect()
    }

    pub fn margins(&self, m: &FeatureMatrix) -> Vec<f64> {
        (0..m.n_rows()).map(|i| self.predict_margin(&m.row(i))).collect()
    }
}

/// Start times of the first and last training change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingRange {
    #[serde(with = "crate::corpus::timestamp")]
    pub start: DateTime<Utc>,
    #[serde(with = "crate::corpus::timestamp")]
    pub end: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    pub model_version: String,
    pub schema_fingerprint: String,
    /// Decision threshold on the 0-100 score; set by threshold search.
    pub threshold: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_range: Option<TrainingRange>,
    pub hyperparams: Hyperparams,
    /// True when the training labels held a single class.
    pub degenerate: bool,
    pub forest: Forest,
    #[serde(default)]
    pub content_hash: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl TrainedModel {
    pub fn new(
        forest: Forest,
        schema_fingerprint: String,
        hyperparams: Hyperparams,
        training_range: Option<TrainingRange>,
        degenerate: bool,
    ) -> Self {
        #[derive(Serialize)]
        struct Identity<'a> {
            forest: &'a Forest,
            schema_fingerprint: &'a str,
            hyperparams: &'a Hyperparams,
            training_range: &'a Option<TrainingRange>,
        }
        let identity = serde_json::to_vec(&Identity {
            forest: &forest,
            schema_fingerprint: &schema_fingerprint,
            hyperparams: &hyperparams,
            training_range: &training_range,
        })
        .expect("model identity serializes");
        let mut model = Self {
            format_version: MODEL_FORMAT_VERSION,
            model_version: format!("m-{}", &sha256_hex(&identity)[..12]),
            schema_fingerprint,
            threshold: None,
            training_range,
            hyperparams,
            degenerate,
            forest,
            content_hash: String::new(),
        };
        model.content_hash = model.compute_hash();
        model
    }

    pub fn compute_hash(&self) -> String {
        let mut unsigned = self.clone();
        unsigned.content_hash.clear();
        sha256_hex(&serde_json::to_vec(&unsigned).expect("model serializes"))
    }

    pub fn set_threshold(&mut self, threshold: u8) {
        self.threshold = Some(threshold.min(100));
        self.content_hash = self.compute_hash();
    }

    pub fn check_matrix(&self, m: &FeatureMatrix) -> Result<()> {
        m.check_fingerprint(&self.schema_fingerprint)?;
        if m.n_features() != self.forest.n_features() {
            return Err(Error::InvalidInput(format!(
                "matrix has {} features, model expects {}",
                m.n_features(),
                self.forest.n_features()
            )));
        }
        Ok(())
    }

    pub fn predict_margins(&self, m: &FeatureMatrix) -> Result<Vec<f64>> {
        self.check_matrix(m)?;
        Ok(self.forest.margins(m))
    }

    pub fn predict_scores(&self, m: &FeatureMatrix) -> Result<Vec<u8>> {
        Ok(self.predict_margins(m)?.into_iter().map(margin_to_score).collect())
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("model serializes")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let model: Self = serde_json::from_slice(bytes)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported model format version {}",
                model.format_version
            )));
        }
        let expected = model.compute_hash();
        if expected != model.content_hash {
            return Err(Error::InvalidInput(format!(
                "model content hash mismatch: stored {}, computed {expected}",
                model.content_hash
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&bytes)
    }
}
