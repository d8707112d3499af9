//! Link → featurize → fit → pick threshold → score, over index subsets of a
//! prepared corpus.

use std::collections::HashMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CorpusConfig};
use crate::error::{Error, Result};
use crate::evalkit::{default_grid, threshold_search, EvalReport, MetricConfig, ThresholdSearch};
use crate::featurize::{FeatureConfig, FeatureSchema, TeamIndex};
use crate::gbdt::{self, Hyperparams, TrainedModel, TrainingRange};
use crate::linkage::{label_changes, link_corpus, LabeledChange, Linkage, LinkageConfig};
use crate::matrix::FeatureMatrix;
use crate::rulebase::RuleConfig;

use super::backtest::BacktestConfig;
use super::split::{temporal_split, DateRange, SplitConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub corpus: CorpusConfig,
    pub linkage: LinkageConfig,
    pub features: FeatureConfig,
    pub hyperparams: Hyperparams,
    pub metric: MetricConfig,
    pub split: SplitConfig,
    pub backtest: BacktestConfig,
    /// Train with priority sample weights; false trains unweighted.
    pub weighted_training: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusConfig::default(),
            linkage: LinkageConfig::default(),
            features: FeatureConfig::default(),
            hyperparams: Hyperparams::default(),
            metric: MetricConfig::default(),
            split: SplitConfig::default(),
            backtest: BacktestConfig::default(),
            weighted_training: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyperparams.validate()?;
        self.metric.validate()?;
        self.backtest.validate()
    }
}

/// A corpus with its links, labels and team-history index.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub corpus: Corpus,
    pub linkage: Linkage,
    pub team: TeamIndex,
}

pub fn prepare(corpus: Corpus, cfg: &PipelineConfig) -> Result<Prepared> {
    cfg.validate()?;
    let linkage = link_corpus(&corpus, &cfg.corpus, &cfg.linkage, &cfg.metric.priority_weights)?;
    let team = TeamIndex::build(
        &corpus.changes,
        &linkage.links,
        &linkage.incidents,
        &corpus.releases,
        cfg.features.team,
    );
    Ok(Prepared { corpus, linkage, team })
}

impl Prepared {
    /// Labels using only incidents opened before `cutoff`.
    pub fn labels_as_of(&self, cutoff: DateTime<Utc>, cfg: &PipelineConfig) -> Vec<LabeledChange> {
        let opened: HashMap<&str, DateTime<Utc>> =
            self.linkage.incidents.iter().map(|i| (i.id.as_str(), i.opened_at)).collect();
        let known: Vec<_> = self
            .linkage
            .links
            .iter()
            .filter(|l| opened.get(l.incident_id.as_str()).is_some_and(|t| *t < cutoff))
            .cloned()
            .collect();
        label_changes(&self.corpus.changes, &known, &cfg.metric.priority_weights)
    }

    /// Indices of changes starting in `range`, ascending.
    pub fn rows_in(&self, range: &DateRange) -> Vec<usize> {
        (0..self.corpus.changes.len())
            .filter(|&i| range.contains(self.corpus.changes[i].start_time))
            .collect()
    }
}

/// Feature rows, labels and evaluation weights for a set of changes.
#[derive(Debug, Clone)]
pub struct RowSet {
    pub rows: Vec<usize>,
    pub matrix: FeatureMatrix,
    pub labels: Vec<u8>,
    pub weights: Vec<f64>,
    /// Rows dropped because team features need an `it_product`.
    pub excluded: usize,
}

pub fn build_rows(prep: &Prepared, schema: &FeatureSchema, rows: &[usize], labels: &[LabeledChange]) -> RowSet {
    let kept: Vec<usize> = rows
        .iter()
        .copied()
        .filter(|&i| !schema.include_team_features || prep.corpus.changes[i].it_product.is_some())
        .collect();
    let changes: Vec<_> = kept.iter().map(|&i| &prep.corpus.changes[i]).collect();
    let team = schema.include_team_features.then_some(&prep.team);
    RowSet {
        matrix: schema.transform(&changes, team),
        labels: kept.iter().map(|&i| labels[i].label).collect(),
        weights: kept.iter().map(|&i| labels[i].sample_weight).collect(),
        excluded: rows.len() - kept.len(),
        rows: kept,
    }
}

#[derive(Debug, Clone)]
pub struct FittedModel {
    pub schema: FeatureSchema,
    pub model: TrainedModel,
    pub train_rows: usize,
    pub loss_history: Vec<f64>,
}

/// Fits schema and forest on `rows`.
pub fn fit_model(
    prep: &Prepared,
    rows: &[usize],
    labels: &[LabeledChange],
    features: &FeatureConfig,
    cfg: &PipelineConfig,
) -> Result<FittedModel> {
    let eligible: Vec<usize> = rows
        .iter()
        .copied()
        .filter(|&i| !features.include_team_features || prep.corpus.changes[i].it_product.is_some())
        .collect();
    if eligible.is_empty() {
        return Err(if features.include_team_features && !rows.is_empty() {
            Error::NoTeamRows
        } else {
            Error::InvalidInput("no training rows".into())
        });
    }
    let train_changes: Vec<_> = eligible.iter().map(|&i| &prep.corpus.changes[i]).collect();
    let schema = FeatureSchema::fit(&train_changes, features)?;
    let set = build_rows(prep, &schema, &eligible, labels);
    let weights = if cfg.weighted_training {
        set.weights.clone()
    } else {
        vec![1.0; set.labels.len()]
    };
    let outcome = gbdt::fit(&set.matrix, &set.labels, &weights, &cfg.hyperparams)?;
    let range = TrainingRange {
        start: train_changes.iter().map(|c| c.start_time).min().expect("non-empty"),
        end: train_changes.iter().map(|c| c.start_time).max().expect("non-empty"),
    };
    let model = TrainedModel::new(
        outcome.forest,
        schema.fingerprint.clone(),
        cfg.hyperparams.clone(),
        Some(range),
        outcome.degenerate,
    );
    Ok(FittedModel {
        schema,
        model,
        train_rows: set.labels.len(),
        loss_history: outcome.loss_history,
    })
}

pub fn score_rows(fitted: &FittedModel, set: &RowSet) -> Result<Vec<u8>> {
    fitted.model.predict_scores(&set.matrix)
}

/// Highest-wFβ threshold on a validation set.
pub fn select_threshold(fitted: &FittedModel, set: &RowSet, beta: f64) -> Result<ThresholdSearch> {
    let scores = score_rows(fitted, set)?;
    threshold_search(&scores, &set.labels, &set.weights, beta, &default_grid())
}

pub fn rule_scores(prep: &Prepared, rules: &RuleConfig, rows: &[usize]) -> Result<Vec<u8>> {
    rows.iter().map(|&i| rules.score(&prep.corpus.changes[i])).collect()
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub train: DateRange,
    pub validation: DateRange,
    pub test: DateRange,
    pub fitted: FittedModel,
    pub search: ThresholdSearch,
    pub model_report: EvalReport,
    pub baseline_report: EvalReport,
    pub test_rows: RowSet,
    pub test_scores: Vec<u8>,
}

/// Temporal split, fit on train, threshold on validation, evaluate the model
/// and the rule baseline on the same test rows.
pub fn run_pipeline(prep: &Prepared, rules: &RuleConfig, features: &FeatureConfig, cfg: &PipelineConfig) -> Result<PipelineRun> {
    let split = temporal_split(&prep.corpus.changes, &cfg.split)?;
    let labels = &prep.linkage.labels;
    let fitted = fit_model(prep, &split.train_rows, labels, features, cfg)?;
    let validation = build_rows(prep, &fitted.schema, &split.validation_rows, labels);
    if validation.labels.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let search = select_threshold(&fitted, &validation, cfg.metric.beta)?;
    let mut fitted = fitted;
    fitted.model.set_threshold(search.best_threshold as u8);

    let test = build_rows(prep, &fitted.schema, &split.test_rows, labels);
    let test_scores = score_rows(&fitted, &test)?;
    let mut model_report =
        EvalReport::evaluate(&test_scores, &test.labels, &test.weights, search.best_threshold, cfg.metric.beta)?;
    model_report.excluded_rows = test.excluded;
    let baseline_scores = rule_scores(prep, rules, &test.rows)?;
    let mut baseline_report = EvalReport::evaluate(
        &baseline_scores,
        &test.labels,
        &test.weights,
        u32::from(rules.threshold),
        cfg.metric.beta,
    )?;
    baseline_report.excluded_rows = test.excluded;
    Ok(PipelineRun {
        train: split.train,
        validation: split.validation,
        test: split.test,
        fitted,
        search,
        model_report: model_report.with_window(split.test.label()),
        baseline_report: baseline_report.with_window(split.test.label()),
        test_rows: test,
        test_scores,
    })
}
