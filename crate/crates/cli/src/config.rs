//! Run configuration: defaults, then the `--config` file, then `--set`
//! overrides, then `--seed`. Every option is addressable by a dotted key.

use std::path::{Path, PathBuf};

use changerisk::explain::CollapseMode;
use changerisk::harness::{PipelineConfig, SynthConfig};
use changerisk::rulebase::RuleConfig;
use changerisk_service::ServiceConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainOptions {
    /// Contributions kept per explained change.
    pub top_k: usize,
    /// Rows of the global importance ranking.
    pub importance_k: usize,
    /// How a feature group collapses to one value.
    pub collapse: CollapseMode,
    /// Changes explained when none are named: the highest-scored test rows.
    pub default_count: usize,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        Self {
            top_k: 10,
            importance_k: 15,
            collapse: CollapseMode::SignedMax,
            default_count: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Overrides the synthetic, text-projection and booster seeds when set.
    pub seed: Option<u64>,
    /// Corpus directory read by commands that take `--corpus`.
    pub corpus: Option<PathBuf>,
    /// Output directory.
    pub out: Option<PathBuf>,
    /// Rule file for the baseline; the bundled example when unset.
    pub rules: Option<PathBuf>,
    pub synth: SynthConfig,
    pub pipeline: PipelineConfig,
    pub explain: ExplainOptions,
    pub service: ServiceConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            corpus: None,
            out: None,
            rules: None,
            synth: SynthConfig::default(),
            pipeline: PipelineConfig::default(),
            explain: ExplainOptions::default(),
            service: ServiceConfig::default(),
        }
    }
}

fn to_table(cfg: &RunConfig) -> Table {
    Table::try_from(cfg).expect("run config serializes to TOML")
}

/// Parses a command-line value as a TOML literal, falling back to a string.
fn literal(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_path(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Option(format!("malformed key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        cur = match cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new())) {
            Value::Table(t) => t,
            _ => return Err(CliError::Option(format!("`{key}`: `{p}` is not a section"))),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn get_path<'a>(table: &'a Table, key: &str) -> Option<&'a Value> {
    let mut parts = key.split('.');
    let mut cur = table.get(parts.next()?)?;
    for p in parts {
        cur = cur.as_table()?.get(p)?;
    }
    Some(cur)
}

fn merge(base: &mut Table, over: Table, prefix: &str, keys: &mut Vec<String>) {
    for (k, v) in over {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o, &path, keys),
            (_, v) => {
                keys.push(path);
                base.insert(k, v);
            }
        }
    }
}

impl RunConfig {
    /// Layers `file` and `overrides` (`key=value`) onto the defaults. A key
    /// that does not survive the round trip is unknown and rejected.
    pub fn resolve(file: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let mut table = to_table(&Self::default());
        let mut keys = Vec::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| {
                if e.kind() == std::io::ErrorKind::NotFound {
                    CliError::MissingInput(path.to_path_buf())
                } else {
                    CliError::io(path, e)
                }
            })?;
            let over: Table = toml::from_str(&text)
                .map_err(|e| CliError::Option(format!("{}: {e}", path.display())))?;
            merge(&mut table, over, "", &mut keys);
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Option(format!("`{o}`: expected key=value")))?;
            let k = k.trim();
            set_path(&mut table, k, literal(v.trim()))?;
            keys.push(k.to_string());
        }
        let mut cfg: Self = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Option(e.to_string()))?;
        let back = to_table(&cfg);
        if let Some(unknown) = keys.iter().find(|k| get_path(&back, k).is_none()) {
            return Err(CliError::Option(format!("unknown option `{unknown}`")));
        }
        if let Some(s) = seed.or(cfg.seed) {
            cfg.seed = Some(s);
            cfg.synth.seed = s;
            cfg.pipeline.hyperparams.seed = s;
            cfg.pipeline.features.text.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.pipeline.validate()?;
        self.service.validate()?;
        Ok(())
    }

    pub fn rules(&self, explicit: Option<&Path>) -> Result<RuleConfig> {
        match explicit.or(self.rules.as_deref()) {
            Some(p) if !p.exists() => Err(CliError::MissingInput(p.to_path_buf())),
            Some(p) => Ok(RuleConfig::load(p)?),
            None => Ok(RuleConfig::example()),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }
}

/// Every dotted key with its default, one per line.
pub fn option_schema() -> String {
    fn walk(prefix: &str, t: &Table, out: &mut Vec<String>) {
        for (k, v) in t {
            let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match v {
                Value::Table(inner) => walk(&key, inner, out),
                other => out.push(format!("  {key} = {other}")),
            }
        }
    }
    let mut lines = Vec::new();
    walk("", &to_table(&RunConfig::default()), &mut lines);
    let optional = [
        "seed",
        "corpus",
        "out",
        "rules",
        "service.threshold",
        "service.token",
        "service.rules_path",
        "pipeline.features.text.stopwords",
    ];
    lines.extend(optional.iter().map(|k| format!("  {k} = <unset>")));
    lines.sort();
    format!(
        "Options (set with --set key=value or in the --config TOML file):\n{}\n",
        lines.join("\n")
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = RunConfig::resolve(
            None,
            &[
                "pipeline.hyperparams.n_trees=40".into(),
                "synth.n_changes=500".into(),
                "service.threshold=29".into(),
                "corpus=data/x".into(),
            ],
            Some(3),
        )
        .unwrap();
        assert_eq!(cfg.pipeline.hyperparams.n_trees, 40);
        assert_eq!(cfg.synth.n_changes, 500);
        assert_eq!(cfg.service.threshold, Some(29));
        assert_eq!(cfg.corpus, Some(PathBuf::from("data/x")));
        assert_eq!((cfg.synth.seed, cfg.pipeline.hyperparams.seed), (3, 3));
    }

    #[test]
    fn unknown_keys_and_bad_values_fail() {
        assert!(RunConfig::resolve(None, &["pipeline.hyperparams.n_tree=40".into()], None).is_err());
        assert!(RunConfig::resolve(None, &["nokey".into()], None).is_err());
        assert!(RunConfig::resolve(None, &["pipeline.metric.beta=-1".into()], None).is_err());
    }

    #[test]
    fn partial_file_keeps_other_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[pipeline.features.text]\ncomponents = 12\n").unwrap();
        let cfg = RunConfig::resolve(Some(&path), &[], None).unwrap();
        assert_eq!(cfg.pipeline.features.text.components, 12);
        assert_eq!(cfg.pipeline.features.text.min_df, 3);
        let round = RunConfig::resolve(None, &[], None).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&round.to_toml()).unwrap(), round);
    }

    #[test]
    fn schema_lists_nested_keys() {
        let s = option_schema();
        assert!(s.contains("pipeline.hyperparams.n_trees = 500"));
        assert!(s.contains("service.cutoffs.low_max = 33"));
    }
}
