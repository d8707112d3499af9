//! Feature extraction: text components, calendar features, categorical codes
//! and trailing team aggregates.

pub mod calendar;
pub mod svd;
pub mod team;
pub mod text;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::ChangeTicket;
use crate::error::{Error, Result};
use crate::linkage::LabeledChange;
use crate::matrix::{ColumnInfo, FeatureKind, FeatureMatrix, CATEGORY_UNKNOWN};

pub use calendar::{date_features, DateFeatures, DATE_FEATURE_NAMES};
pub use svd::{CsrMatrix, TruncatedSvd};
pub use team::{median, team_feature_names, TeamAggregates, TeamConfig, TeamIndex, TEAM_METRICS};
pub use text::{default_stopwords, tokenize, TextConfig, TextProjector};

pub const SCHEMA_VERSION: u32 = 1;
pub const TEXT_FIELDS: [&str; 2] = ["short_description", "full_description"];

/// Categorical metadata columns, in schema order. `it_product` is appended
/// only when team features are enabled.
pub const CATEGORICAL_FIELDS: [&str; 11] = [
    "ci_name",
    "ci_config_group",
    "ci_owner",
    "assignment_group",
    "support_offerings",
    "cab_approval_group",
    "confidentiality_rating",
    "integrity_rating",
    "availability_rating",
    "change_category",
    "change_state",
];

/// Flags and counts carried as numeric columns (flags as 0/1).
pub const NUMERIC_FIELDS: [&str; 6] = [
    "sox_critical",
    "automated_deployment",
    "fallback_available",
    "redundant_architecture",
    "impacted_services",
    "outage_total_duration",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub text: TextConfig,
    pub team: TeamConfig,
    pub include_team_features: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            text: TextConfig::default(),
            team: TeamConfig::default(),
            include_team_features: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

/// Fitted feature layout. Everything here is derived from training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub version: u32,
    pub features: Vec<FeatureDescriptor>,
    pub text: Vec<TextProjector>,
    /// Column name -> sorted dictionary; code = position + 1, 0 = unknown.
    pub categories: BTreeMap<String, Vec<String>>,
    pub include_team_features: bool,
    pub team: TeamConfig,
    pub fingerprint: String,
}

fn categorical_value(change: &ChangeTicket, field: &str) -> Option<String> {
    change.field_value(field)
}

fn numeric_value(change: &ChangeTicket, field: &str) -> f64 {
    let flag = |v: Option<bool>| v.map_or(f64::NAN, |b| if b { 1.0 } else { 0.0 });
    match field {
        "sox_critical" => flag(change.sox_critical),
        "automated_deployment" => flag(change.automated_deployment),
        "fallback_available" => flag(change.fallback_available),
        "redundant_architecture" => flag(change.redundant_architecture),
        "impacted_services" => change.impacted_services.map_or(f64::NAN, f64::from),
        "outage_total_duration" => change.outage_total_duration.unwrap_or(f64::NAN),
        _ => f64::NAN,
    }
}

fn text_of<'a>(change: &'a ChangeTicket, field: &str) -> &'a str {
    match field {
        "short_description" => &change.short_description,
        _ => &change.full_description,
    }
}

pub fn text_component_name(field: &str, i: usize) -> String {
    format!("{field}_svd_{i:02}")
}

impl FeatureSchema {
    /// Fits text projections and category dictionaries on `train`.
    pub fn fit(train: &[&ChangeTicket], cfg: &FeatureConfig) -> Result<Self> {
        if cfg.text.components == 0 {
            return Err(Error::Config("text.components must be at least 1".into()));
        }
        let mut features = Vec::new();
        let mut categories = BTreeMap::new();

        let mut cat_fields: Vec<&str> = CATEGORICAL_FIELDS.to_vec();
        if cfg.include_team_features {
            cat_fields.push("it_product");
        }
        for field in cat_fields {
            let dict: BTreeSet<String> = train.iter().filter_map(|c| categorical_value(c, field)).collect();
            categories.insert(field.to_string(), dict.into_iter().collect());
            features.push(FeatureDescriptor {
                name: field.to_string(),
                kind: FeatureKind::Categorical,
                group: None,
            });
        }
        for field in NUMERIC_FIELDS {
            features.push(FeatureDescriptor {
                name: field.to_string(),
                kind: FeatureKind::Numeric,
                group: None,
            });
        }
        for name in DATE_FEATURE_NAMES {
            features.push(FeatureDescriptor {
                name: name.to_string(),
                kind: FeatureKind::Numeric,
                group: None,
            });
        }
        let mut text = Vec::new();
        for field in TEXT_FIELDS {
            let docs: Vec<&str> = train.iter().map(|c| text_of(c, field)).collect();
            let projector = TextProjector::fit(field, &docs, &cfg.text);
            for i in 0..projector.components {
                features.push(FeatureDescriptor {
                    name: text_component_name(field, i),
                    kind: FeatureKind::Numeric,
                    group: Some(field.to_string()),
                });
            }
            text.push(projector);
        }
        if cfg.include_team_features {
            for name in team_feature_names() {
                features.push(FeatureDescriptor {
                    name,
                    kind: FeatureKind::Numeric,
                    group: None,
                });
            }
        }

        let mut schema = Self {
            version: SCHEMA_VERSION,
            features,
            text,
            categories,
            include_team_features: cfg.include_team_features,
            team: cfg.team,
            fingerprint: String::new(),
        };
        schema.fingerprint = schema.compute_fingerprint();
        Ok(schema)
    }

    pub fn compute_fingerprint(&self) -> String {
        let mut unsigned = self.clone();
        unsigned.fingerprint.clear();
        let bytes = serde_json::to_vec(&unsigned).expect("schema serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn columns(&self) -> Vec<ColumnInfo> {
        self.features
            .iter()
            .map(|f| ColumnInfo {
                name: f.name.clone(),
                kind: f.kind,
            })
            .collect()
    }

    /// Feature name -> group label, for every grouped feature.
    pub fn groups(&self) -> BTreeMap<String, Vec<usize>> {
        let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, f) in self.features.iter().enumerate() {
            if let Some(g) = &f.group {
                out.entry(g.clone()).or_default().push(i);
            }
        }
        out
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    /// One row of features. Team aggregates come from `team` as of the change
    /// start; without an index they are missing.
    pub fn transform_row(&self, change: &ChangeTicket, team: Option<&TeamIndex>) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.features.len());
        for (field, dict) in self.categorical_dicts() {
            let code = match categorical_value(change, field) {
                None => f64::NAN,
                Some(v) => match dict.binary_search(&v) {
                    Ok(pos) => (pos + 1) as f64,
                    Err(_) => CATEGORY_UNKNOWN as f64,
                },
            };
            row.push(code);
        }
        for field in NUMERIC_FIELDS {
            row.push(numeric_value(change, field));
        }
        row.extend(date_features(&change.start_time).as_values());
        for projector in &self.text {
            row.extend(projector.project(text_of(change, &projector.field)));
        }
        if self.include_team_features {
            let agg = team
                .map(|t| t.aggregates(change.it_product.as_deref(), change.start_time))
                .unwrap_or(TeamAggregates::MISSING);
            row.extend(agg.values());
        }
        debug_assert_eq!(row.len(), self.features.len());
        row
    }

    fn categorical_dicts(&self) -> impl Iterator<Item = (&str, &Vec<String>)> {
        self.features
            .iter()
            .filter(|f| f.kind == FeatureKind::Categorical)
            .map(|f| (f.name.as_str(), &self.categories[&f.name]))
    }

    pub fn transform(&self, changes: &[&ChangeTicket], team: Option<&TeamIndex>) -> FeatureMatrix {
        let rows: Vec<Vec<f64>> = changes.iter().map(|c| self.transform_row(c, team)).collect();
        FeatureMatrix::from_rows(
            self.fingerprint.clone(),
            self.columns(),
            changes.iter().map(|c| c.id.clone()).collect(),
            &rows,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let schema: Self = serde_json::from_slice(&bytes)?;
        let expected = schema.compute_fingerprint();
        if expected != schema.fingerprint {
            return Err(Error::FingerprintMismatch {
                expected,
                found: schema.fingerprint,
            });
        }
        Ok(schema)
    }
}

/// Matrix plus aligned labels and weights.
#[derive(Debug, Clone)]
pub struct AssembledMatrix {
    pub matrix: FeatureMatrix,
    pub labels: Vec<u8>,
    pub weights: Vec<f64>,
    /// Rows dropped because team features need an `it_product`.
    pub excluded_without_product: usize,
}

/// Builds the matrix for `labeled` (looked up in `changes` by id).
pub fn assemble_matrix(
    labeled: &[LabeledChange],
    changes: &[ChangeTicket],
    schema: &FeatureSchema,
    team: Option<&TeamIndex>,
) -> Result<AssembledMatrix> {
    let by_id: BTreeMap<&str, &ChangeTicket> = changes.iter().map(|c| (c.id.as_str(), c)).collect();
    let mut rows = Vec::with_capacity(labeled.len());
    let mut labels = Vec::with_capacity(labeled.len());
    let mut weights = Vec::with_capacity(labeled.len());
    let mut excluded = 0;
    for l in labeled {
        let change = by_id
            .get(l.change_id.as_str())
            .ok_or_else(|| Error::InvalidInput(format!("labelled change {} not in corpus", l.change_id)))?;
        if schema.include_team_features && change.it_product.is_none() {
            excluded += 1;
            continue;
        }
        rows.push(*change);
        labels.push(l.label);
        weights.push(l.sample_weight);
    }
    Ok(AssembledMatrix {
        matrix: schema.transform(&rows, team),
        labels,
        weights,
        excluded_without_product: excluded,
    })
}
