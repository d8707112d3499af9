//! With/without team-feature comparison on one temporal split.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::evalkit::EvalReport;
use crate::rulebase::RuleConfig;

use super::pipeline::{run_pipeline, PipelineConfig, Prepared};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub include_team_features: bool,
    pub threshold: u32,
    pub train_rows: usize,
    pub model_version: String,
    pub report: EvalReport,
    pub baseline: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub without_team: ArmReport,
    pub with_team: ArmReport,
}

impl AblationReport {
    pub fn fbeta_gain(&self) -> f64 {
        self.with_team.report.weighted_fbeta - self.without_team.report.weighted_fbeta
    }
}

/// Both arms share split boundaries, hyperparameters and seed. The team arm
/// only sees changes carrying an `it_product`.
pub fn ablation_run(prep: &Prepared, rules: &RuleConfig, cfg: &PipelineConfig) -> Result<AblationReport> {
    let arm = |team: bool| -> Result<ArmReport> {
        let mut features = cfg.features.clone();
        features.include_team_features = team;
        let run = run_pipeline(prep, rules, &features, cfg)?;
        Ok(ArmReport {
            include_team_features: team,
            threshold: run.search.best_threshold,
            train_rows: run.fitted.train_rows,
            model_version: run.fitted.model.model_version.clone(),
            report: run.model_report,
            baseline: run.baseline_report,
        })
    };
    Ok(AblationReport {
        without_team: arm(false)?,
        with_team: arm(true)?,
    })
}
