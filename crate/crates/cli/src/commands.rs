//! One function per subcommand. Each reads its inputs, writes artifacts into
//! the locked output directory and returns the manifest.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use changerisk::corpus::{ingest_csv, ingest_jsonl, IngestOutcome, Record, RecordKind, Rejection};
use changerisk::evalkit::{default_grid, render_table, threshold_search, EvalReport};
use changerisk::explain::{global_importance, group_collapse, tree_shap};
use changerisk::featurize::TeamIndex;
use changerisk::gbdt::{self, TrainingRange};
use changerisk::harness::pipeline::build_rows;
use changerisk::harness::split::temporal_split;
use changerisk::harness::{
    ablation_run, prepare, run_pipeline, sliding_window_run, synth_generate, windows_csv, windows_svg, Prepared,
    WindowPlan,
};
use changerisk::linkage::link_corpus;
use changerisk::{ChangeTicket, Corpus, FeatureMatrix, FeatureSchema, IncidentTicket, ReleaseRecord, TrainedModel};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::manifest::{Manifest, OutDir};

/// Shared arguments every command receives after resolution.
pub struct Ctx {
    pub config: RunConfig,
    pub out: PathBuf,
    pub args: Vec<String>,
    pub command: &'static str,
}

impl Ctx {
    fn out_dir(&self) -> Result<OutDir> {
        OutDir::acquire(&self.out)
    }

    fn corpus_path(&self, explicit: Option<&Path>) -> Result<PathBuf> {
        explicit
            .map(Path::to_path_buf)
            .or_else(|| self.config.corpus.clone())
            .ok_or_else(|| CliError::Option("a corpus directory is required (--corpus or `corpus` in the config)".into()))
    }

    fn finish(&self, out: OutDir) -> Result<Manifest> {
        out.finish(self.command, &self.args, &self.config)
    }
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingInput(path.to_path_buf()))
    }
}

fn load_corpus(dir: &Path, out: &mut OutDir) -> Result<Corpus> {
    require(dir)?;
    require(&dir.join(changerisk::corpus::CHANGES_FILE))?;
    out.input(dir)?;
    Ok(Corpus::load_dir(dir)?)
}

fn load_model(path: &Path, out: &mut OutDir) -> Result<TrainedModel> {
    require(path)?;
    out.input(path)?;
    Ok(TrainedModel::load(path)?)
}

fn load_schema(path: &Path, out: &mut OutDir) -> Result<FeatureSchema> {
    require(path)?;
    out.input(path)?;
    Ok(FeatureSchema::load(path)?)
}

fn check_pair(model: &TrainedModel, schema: &FeatureSchema) -> Result<()> {
    if model.schema_fingerprint != schema.fingerprint {
        return Err(changerisk::Error::FingerprintMismatch {
            expected: schema.fingerprint.clone(),
            found: model.schema_fingerprint.clone(),
        }
        .into());
    }
    Ok(())
}

fn jsonl<T: Serialize>(rows: &[T]) -> Vec<u8> {
    let mut buf = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut buf, r).expect("row serializes");
        buf.push(b'\n');
    }
    buf
}

/// Team aggregates for `schema` over the corpus history, when it uses them.
fn team_for(prep: &Prepared, schema: &FeatureSchema) -> Option<TeamIndex> {
    schema.include_team_features.then(|| {
        TeamIndex::build(
            &prep.corpus.changes,
            &prep.linkage.links,
            &prep.linkage.incidents,
            &prep.corpus.releases,
            schema.team,
        )
    })
}

pub fn synth(ctx: &Ctx, n: Option<usize>) -> Result<Manifest> {
    let mut cfg = ctx.config.synth.clone();
    if let Some(n) = n {
        cfg.n_changes = n;
    }
    let mut out = ctx.out_dir()?;
    let corpus = synth_generate(&cfg)?;
    corpus.save_dir(&out.dir)?;
    for f in [
        changerisk::corpus::CHANGES_FILE,
        changerisk::corpus::INCIDENTS_FILE,
        changerisk::corpus::RELEASES_FILE,
    ] {
        out.record(f);
    }
    let p = &ctx.config.pipeline;
    let linkage = link_corpus(&corpus, &p.corpus, &p.linkage, &p.metric.priority_weights)?;
    let summary = json!({
        "changes": corpus.changes.len(),
        "incidents": corpus.incidents.len(),
        "releases": corpus.releases.len(),
        "positive_rate": linkage.positive_rate(),
        "synth": cfg,
    });
    out.write_json("synth_summary.json", &summary)?;
    eprintln!(
        "synthetic corpus: {} changes, positive rate {:.4}",
        corpus.changes.len(),
        linkage.positive_rate()
    );
    ctx.finish(out)
}

#[derive(Debug, Serialize)]
struct KindRejection<'a> {
    kind: RecordKind,
    #[serde(flatten)]
    rejection: &'a Rejection,
}

fn ingest_file<T: Record>(path: &Path) -> Result<IngestOutcome<T>> {
    require(path)?;
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    Ok(if is_csv {
        ingest_csv(file)?
    } else {
        ingest_jsonl(BufReader::new(file))?
    })
}

pub fn ingest(ctx: &Ctx, changes: &Path, incidents: Option<&Path>, releases: Option<&Path>) -> Result<Manifest> {
    let mut out = ctx.out_dir()?;
    let c = ingest_file::<ChangeTicket>(changes)?;
    out.input(changes)?;
    let i = match incidents {
        Some(p) => {
            out.input(p)?;
            Some(ingest_file::<IncidentTicket>(p)?)
        }
        None => None,
    };
    let r = match releases {
        Some(p) => {
            out.input(p)?;
            Some(ingest_file::<ReleaseRecord>(p)?)
        }
        None => None,
    };

    fn report<T>(o: &IngestOutcome<T>) -> serde_json::Value {
        let mut by_reason: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &o.rejections {
            *by_reason.entry(r.reason_code.as_str()).or_default() += 1;
        }
        json!({
            "rows_read": o.rows_read,
            "accepted": o.accepted.len(),
            "rejected": o.rejections.len(),
            "duplicates_collapsed": o.duplicates_collapsed,
            "rejections_by_reason": by_reason,
        })
    }
    let mut rejections: Vec<KindRejection> = c
        .rejections
        .iter()
        .map(|r| KindRejection {
            kind: RecordKind::Change,
            rejection: r,
        })
        .collect();
    let mut summary = BTreeMap::new();
    summary.insert("changes", report(&c));
    if let Some(i) = &i {
        summary.insert("incidents", report(i));
        rejections.extend(i.rejections.iter().map(|r| KindRejection {
            kind: RecordKind::Incident,
            rejection: r,
        }));
    }
    if let Some(r) = &r {
        summary.insert("releases", report(r));
        rejections.extend(r.rejections.iter().map(|x| KindRejection {
            kind: RecordKind::Release,
            rejection: x,
        }));
    }
    out.write_json("ingest_report.json", &summary)?;
    out.write("rejections.jsonl", &jsonl(&rejections))?;
    let rejected = rejections.len();
    drop(rejections);
    let corpus = Corpus {
        changes: c.accepted,
        incidents: i.map(|o| o.accepted).unwrap_or_default(),
        releases: r.map(|o| o.accepted).unwrap_or_default(),
    };
    corpus.save_dir(&out.dir)?;
    for f in [
        changerisk::corpus::CHANGES_FILE,
        changerisk::corpus::INCIDENTS_FILE,
        changerisk::corpus::RELEASES_FILE,
    ] {
        out.record(f);
    }
    eprintln!(
        "ingested {} changes, {} rejected rows",
        corpus.changes.len(),
        rejected
    );
    ctx.finish(out)
}

pub fn link(ctx: &Ctx, corpus: Option<&Path>) -> Result<Manifest> {
    let mut out = ctx.out_dir()?;
    let corpus = load_corpus(&ctx.corpus_path(corpus)?, &mut out)?;
    let p = &ctx.config.pipeline;
    let linkage = link_corpus(&corpus, &p.corpus, &p.linkage, &p.metric.priority_weights)?;
    out.write("links.jsonl", &jsonl(&linkage.links))?;
    out.write("labels.jsonl", &jsonl(&linkage.labels))?;
    out.write_json(
        "linkage_report.json",
        &json!({
            "changes": corpus.changes.len(),
            "positives": linkage.labels.iter().filter(|l| l.label == 1).count(),
            "positive_rate": linkage.positive_rate(),
            "links": linkage.links.len(),
            "relevant_incidents": linkage.incidents.len(),
            "filtered_incidents": linkage.filtered_incidents,
            "duplicate_incidents": linkage.duplicate_incidents,
            "non_causal_links": linkage.non_causal,
            "ambiguous_incidents": linkage.ambiguous,
            "dangling_references": linkage.dangling,
        }),
    )?;
    eprintln!("{} links, positive rate {:.4}", linkage.links.len(), linkage.positive_rate());
    ctx.finish(out)
}

/// Label, weight and start time of one change, as written by `featurize`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelRow {
    pub change_id: String,
    pub label: u8,
    pub sample_weight: f64,
    pub start_time: String,
}

pub const SPLITS: [&str; 3] = ["train", "validation", "test"];

pub fn featurize(ctx: &Ctx, corpus: Option<&Path>, team: bool) -> Result<Manifest> {
    let mut out = ctx.out_dir()?;
    let corpus = load_corpus(&ctx.corpus_path(corpus)?, &mut out)?;
    let cfg = &ctx.config.pipeline;
    let mut features = cfg.features.clone();
    features.include_team_features |= team;
    let prep = prepare(corpus, cfg)?;
    let split = temporal_split(&prep.corpus.changes, &cfg.split)?;
    let eligible: Vec<&ChangeTicket> = split
        .train_rows
        .iter()
        .map(|&i| &prep.corpus.changes[i])
        .filter(|c| !features.include_team_features || c.it_product.is_some())
        .collect();
    if eligible.is_empty() {
        return Err(changerisk::Error::NoTeamRows.into());
    }
    let schema = FeatureSchema::fit(&eligible, &features)?;
    schema.save(&out.path("schema.json"))?;
    out.record("schema.json");

    let labels = &prep.linkage.labels;
    let mut counts = BTreeMap::new();
    for (name, rows) in SPLITS.iter().zip([&split.train_rows, &split.validation_rows, &split.test_rows]) {
        let set = build_rows(&prep, &schema, rows, labels);
        let file = format!("{name}.matrix");
        set.matrix.save(&out.path(&file))?;
        out.record(&file);
        counts.insert(
            *name,
            json!({"rows": set.labels.len(), "positives": set.labels.iter().filter(|&&l| l == 1).count(), "excluded": set.excluded}),
        );
    }
    let rows: Vec<LabelRow> = prep
        .corpus
        .changes
        .iter()
        .zip(labels)
        .map(|(c, l)| LabelRow {
            change_id: c.id.clone(),
            label: l.label,
            sample_weight: l.sample_weight,
            start_time: changerisk::corpus::timestamp::format(&c.start_time),
        })
        .collect();
    out.write("labels.jsonl", &jsonl(&rows))?;
    out.write_json(
        "split.json",
        &json!({
            "train": split.train.label(),
            "validation": split.validation.label(),
            "test": split.test.label(),
            "rows": counts,
            "fingerprint": schema.fingerprint,
            "features": schema.feature_names().len(),
        }),
    )?;
    eprintln!("schema {} with {} features", schema.fingerprint, schema.feature_names().len());
    ctx.finish(out)
}

fn read_labels(path: &Path) -> Result<BTreeMap<String, LabelRow>> {
    require(path)?;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let row: LabelRow = serde_json::from_str(l).map_err(|e| CliError::Core(e.into()))?;
            Ok((row.change_id.clone(), row))
        })
        .collect()
}

fn aligned(matrix: &FeatureMatrix, labels: &BTreeMap<String, LabelRow>) -> Result<(Vec<u8>, Vec<f64>, Vec<String>)> {
    let mut y = Vec::with_capacity(matrix.n_rows());
    let mut w = Vec::with_capacity(matrix.n_rows());
    let mut t = Vec::with_capacity(matrix.n_rows());
    for id in &matrix.row_ids {
        let row = labels
            .get(id)
            .ok_or_else(|| changerisk::Error::InvalidInput(format!("no label for matrix row {id}")))?;
        y.push(row.label);
        w.push(row.sample_weight);
        t.push(row.start_time.clone());
    }
    Ok((y, w, t))
}

pub struct TrainInputs<'a> {
    pub features: Option<&'a Path>,
    pub schema: Option<&'a Path>,
    pub matrix: Option<&'a Path>,
    pub validation: Option<&'a Path>,
    pub labels: Option<&'a Path>,
}

pub fn train(ctx: &Ctx, inp: TrainInputs) -> Result<Manifest> {
    let dir = inp.features.map(Path::to_path_buf);
    let pick = |explicit: Option<&Path>, name: &str| -> Result<PathBuf> {
        explicit
            .map(Path::to_path_buf)
            .or_else(|| dir.as_ref().map(|d| d.join(name)))
            .ok_or_else(|| CliError::Option(format!("--features or an explicit path for {name} is required")))
    };
    let mut out = ctx.out_dir()?;
    let schema = load_schema(&pick(inp.schema, "schema.json")?, &mut out)?;
    let matrix_path = pick(inp.matrix, "train.matrix")?;
    require(&matrix_path)?;
    out.input(&matrix_path)?;
    let matrix = FeatureMatrix::load(&matrix_path)?;
    matrix.check_fingerprint(&schema.fingerprint)?;
    let labels_path = pick(inp.labels, "labels.jsonl")?;
    out.input(&labels_path)?;
    let labels = read_labels(&labels_path)?;
    let (y, w, times) = aligned(&matrix, &labels)?;
    if y.is_empty() {
        return Err(changerisk::Error::InvalidInput("training matrix has no rows".into()).into());
    }
    let cfg = &ctx.config.pipeline;
    let weights = if cfg.weighted_training { w } else { vec![1.0; y.len()] };
    let fit = gbdt::fit(&matrix, &y, &weights, &cfg.hyperparams)?;
    let parse = |s: &String| {
        changerisk::corpus::timestamp::parse(s)
            .ok_or_else(|| changerisk::Error::InvalidInput(format!("bad start_time {s}")))
    };
    let start = times.iter().map(parse).collect::<std::result::Result<Vec<_>, _>>()?;
    let range = TrainingRange {
        start: *start.iter().min().expect("non-empty"),
        end: *start.iter().max().expect("non-empty"),
    };
    let mut model = TrainedModel::new(fit.forest, schema.fingerprint.clone(), cfg.hyperparams.clone(), Some(range), fit.degenerate);

    let validation_path = match (inp.validation, &dir) {
        (Some(p), _) => Some(p.to_path_buf()),
        (None, Some(d)) if d.join("validation.matrix").exists() => Some(d.join("validation.matrix")),
        _ => None,
    };
    let search = match validation_path {
        Some(p) => {
            out.input(&p)?;
            let vm = FeatureMatrix::load(&p)?;
            vm.check_fingerprint(&schema.fingerprint)?;
            let (vy, vw, _) = aligned(&vm, &labels)?;
            let scores = model.predict_scores(&vm)?;
            let s = threshold_search(&scores, &vy, &vw, cfg.metric.beta, &default_grid())?;
            model.set_threshold(s.best_threshold as u8);
            Some(s)
        }
        None => None,
    };
    model.save(&out.path("model.json"))?;
    out.record("model.json");
    out.write_json(
        "training.json",
        &json!({
            "model_version": model.model_version,
            "train_rows": y.len(),
            "positives": y.iter().filter(|&&l| l == 1).count(),
            "degenerate": fit.degenerate,
            "loss_history": fit.loss_history,
            "threshold_search": search,
        }),
    )?;
    eprintln!(
        "trained {} on {} rows, threshold {}",
        model.model_version,
        y.len(),
        model.threshold.map_or("unset".into(), |t| t.to_string())
    );
    ctx.finish(out)
}

fn operating_threshold(ctx: &Ctx, model: &TrainedModel, rules_threshold: u8) -> u8 {
    ctx.config.service.threshold.or(model.threshold).unwrap_or(rules_threshold)
}

pub fn score(ctx: &Ctx, model: &Path, schema: &Path, corpus: Option<&Path>) -> Result<Manifest> {
    let mut out = ctx.out_dir()?;
    let model = load_model(model, &mut out)?;
    let schema = load_schema(schema, &mut out)?;
    check_pair(&model, &schema)?;
    let corpus = load_corpus(&ctx.corpus_path(corpus)?, &mut out)?;
    let rules = ctx.config.rules(None)?;
    let prep = prepare(corpus, &ctx.config.pipeline)?;
    let team = team_for(&prep, &schema);
    let threshold = operating_threshold(ctx, &model, rules.threshold);
    let cutoffs = ctx.config.service.cutoffs;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["change_id", "score", "band", "flagged", "team_features_available"])
        .map_err(|e| changerisk::Error::InvalidInput(e.to_string()))?;
    let mut flagged = 0;
    for c in &prep.corpus.changes {
        let row = schema.transform_row(c, team.as_ref());
        let s = gbdt::margin_to_score(model.forest.predict_margin(&row));
        let band = changerisk::rulebase::risk_band(i64::from(s), &cutoffs)?;
        flagged += usize::from(s >= threshold);
        w.write_record([
            c.id.as_str(),
            &s.to_string(),
            band.as_str(),
            if s >= threshold { "1" } else { "0" },
            if !schema.include_team_features || c.it_product.is_some() { "1" } else { "0" },
        ])
        .map_err(|e| changerisk::Error::InvalidInput(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| changerisk::Error::InvalidInput(e.to_string()))?;
    out.write("scores.csv", &bytes)?;
    eprintln!("scored {} changes, {flagged} at or above {threshold}", prep.corpus.changes.len());
    ctx.finish(out)
}

pub fn explain(ctx: &Ctx, model: &Path, schema: &Path, corpus: Option<&Path>, ids: &[String]) -> Result<Manifest> {
    let mut out = ctx.out_dir()?;
    let model = load_model(model, &mut out)?;
    let schema = load_schema(schema, &mut out)?;
    check_pair(&model, &schema)?;
    let corpus = load_corpus(&ctx.corpus_path(corpus)?, &mut out)?;
    let prep = prepare(corpus, &ctx.config.pipeline)?;
    let team = team_for(&prep, &schema);
    let opts = &ctx.config.explain;
    let changes = &prep.corpus.changes;

    let test_rows: Vec<usize> = match temporal_split(changes, &ctx.config.pipeline.split) {
        Ok(s) => s.test_rows,
        Err(_) => (0..changes.len()).collect(),
    };
    let test_rows: Vec<usize> = test_rows
        .into_iter()
        .filter(|&i| !schema.include_team_features || changes[i].it_product.is_some())
        .collect();
    let chosen: Vec<usize> = if ids.is_empty() {
        let mut scored: Vec<(u8, usize)> = test_rows
            .iter()
            .map(|&i| {
                let row = schema.transform_row(&changes[i], team.as_ref());
                (gbdt::margin_to_score(model.forest.predict_margin(&row)), i)
            })
            .collect();
        scored.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| changes[a.1].id.cmp(&changes[b.1].id)));
        scored.into_iter().take(opts.default_count).map(|(_, i)| i).collect()
    } else {
        let index = prep.corpus.change_index();
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| CliError::Core(changerisk::Error::InvalidInput(format!("unknown change id {id}"))))
            })
            .collect::<Result<_>>()?
    };

    let names = schema.feature_names();
    let groups = schema.groups();
    let mut lines = Vec::new();
    for &i in &chosen {
        let c = &changes[i];
        let row = schema.transform_row(c, team.as_ref());
        let attribution = tree_shap(&model.forest, &row, &c.id, &model.model_version)?;
        let mut grouped = group_collapse(&attribution, &names, &groups, opts.collapse);
        grouped.contributions = grouped.top(opts.top_k);
        lines.push(json!({
            "change_id": c.id,
            "score": gbdt::margin_to_score(model.forest.predict_margin(&row)),
            "base_value": grouped.base_value,
            "contributions": grouped.contributions,
            "model_version": grouped.model_version,
        }));
    }
    out.write("attributions.jsonl", &jsonl(&lines))?;

    let rows: Vec<&ChangeTicket> = test_rows.iter().map(|&i| &changes[i]).collect();
    if !rows.is_empty() {
        let matrix = schema.transform(&rows, team.as_ref());
        let importance = global_importance(&model.forest, &matrix, &groups, opts.importance_k)?;
        out.write_json("importance.json", &importance)?;
    }
    eprintln!("explained {} changes", chosen.len());
    ctx.finish(out)
}

fn report_row(name: &str, r: &EvalReport) -> serde_json::Value {
    json!({"column": name, "report": r})
}

pub fn evaluate(
    ctx: &Ctx,
    corpus: Option<&Path>,
    baseline: Option<&Path>,
    model: Option<&Path>,
    schema: Option<&Path>,
) -> Result<Manifest> {
    let mut out = ctx.out_dir()?;
    let rules = ctx.config.rules(baseline)?;
    if let Some(p) = baseline {
        out.input(p)?;
    }
    let corpus = load_corpus(&ctx.corpus_path(corpus)?, &mut out)?;
    let cfg = &ctx.config.pipeline;
    let prep = prepare(corpus, cfg)?;
    let beta = cfg.metric.beta;

    let (table, columns) = match (model, schema) {
        (Some(m), Some(s)) => {
            let model = load_model(m, &mut out)?;
            let schema = load_schema(s, &mut out)?;
            check_pair(&model, &schema)?;
            let split = temporal_split(&prep.corpus.changes, &cfg.split)?;
            let team = team_for(&prep, &schema);
            let rows: Vec<usize> = split
                .test_rows
                .iter()
                .copied()
                .filter(|&i| !schema.include_team_features || prep.corpus.changes[i].it_product.is_some())
                .collect();
            let test: Vec<&ChangeTicket> = rows.iter().map(|&i| &prep.corpus.changes[i]).collect();
            let matrix = schema.transform(&test, team.as_ref());
            let labels: Vec<u8> = rows.iter().map(|&i| prep.linkage.labels[i].label).collect();
            let weights: Vec<f64> = rows.iter().map(|&i| prep.linkage.labels[i].sample_weight).collect();
            let scores = model.predict_scores(&matrix)?;
            let threshold = u32::from(operating_threshold(ctx, &model, rules.threshold));
            let model_report = EvalReport::evaluate(&scores, &labels, &weights, threshold, beta)?;
            let base_scores = changerisk::harness::pipeline::rule_scores(&prep, &rules, &rows)?;
            let base_report = EvalReport::evaluate(&base_scores, &labels, &weights, u32::from(rules.threshold), beta)?;
            let table = render_table(&[("Baseline", &base_report), ("Model", &model_report)]);
            (table, vec![report_row("Baseline", &base_report), report_row("Model", &model_report)])
        }
        (None, None) => {
            let ab = ablation_run(&prep, &rules, cfg)?;
            let table = render_table(&[
                ("Baseline", &ab.without_team.baseline),
                ("Model", &ab.without_team.report),
                ("Baseline (team rows)", &ab.with_team.baseline),
                ("With team", &ab.with_team.report),
            ]);
            (
                table,
                vec![
                    report_row("Baseline", &ab.without_team.baseline),
                    report_row("Model", &ab.without_team.report),
                    report_row("Baseline (team rows)", &ab.with_team.baseline),
                    report_row("With team", &ab.with_team.report),
                ],
            )
        }
        _ => return Err(CliError::Option("--model and --schema go together".into())),
    };
    out.write("table.txt", table.as_bytes())?;
    out.write_json(
        "evaluation.json",
        &json!({"positive_rate": prep.linkage.positive_rate(), "columns": columns}),
    )?;
    print!("{table}");
    ctx.finish(out)
}

pub fn backtest(ctx: &Ctx, corpus: Option<&Path>, publish: Option<&Path>) -> Result<Manifest> {
    let mut out = ctx.out_dir()?;
    let corpus = load_corpus(&ctx.corpus_path(corpus)?, &mut out)?;
    let cfg = &ctx.config.pipeline;
    let prep = prepare(corpus, cfg)?;
    let plan = WindowPlan::trailing(&prep, &cfg.backtest)?;
    let run = sliding_window_run(&prep, &plan, &cfg.features, cfg)?;
    out.write("windows.csv", windows_csv(&run)?.as_bytes())?;
    out.write("windows.svg", windows_svg(&run).as_bytes())?;
    out.write_json("windows.json", &run.windows)?;
    out.write_json(
        "summary.json",
        &json!({
            "windows": run.windows.len(),
            "leakage_violations": run.leakage_violations,
            "stability": run.summary,
        }),
    )?;
    if let Some(dir) = publish {
        changerisk_service::publish_metrics(dir, &json!({"windows": run.windows, "summary": run.summary}))?;
    }
    let f = &run.summary.weighted_fbeta;
    println!(
        "{} windows, wF mean {:.4} std {:.4}, leakage violations {}",
        run.windows.len(),
        f.mean,
        f.std,
        run.leakage_violations
    );
    ctx.finish(out)
}

pub fn ablate(ctx: &Ctx, corpus: Option<&Path>) -> Result<Manifest> {
    let mut out = ctx.out_dir()?;
    let corpus = load_corpus(&ctx.corpus_path(corpus)?, &mut out)?;
    let rules = ctx.config.rules(None)?;
    let cfg = &ctx.config.pipeline;
    let prep = prepare(corpus, cfg)?;
    let ab = ablation_run(&prep, &rules, cfg)?;
    let table = render_table(&[("Without team", &ab.without_team.report), ("With team", &ab.with_team.report)]);
    out.write("ablation.txt", table.as_bytes())?;
    out.write_json("ablation.json", &json!({"fbeta_gain": ab.fbeta_gain(), "arms": ab}))?;
    print!("{table}");
    println!("gain {:+.4}", ab.fbeta_gain());
    ctx.finish(out)
}

pub fn pipeline(ctx: &Ctx, corpus: Option<&Path>) -> Result<Manifest> {
    let mut out = ctx.out_dir()?;
    let corpus = load_corpus(&ctx.corpus_path(corpus)?, &mut out)?;
    let rules = ctx.config.rules(None)?;
    let cfg = &ctx.config.pipeline;
    let prep = prepare(corpus, cfg)?;
    let run = run_pipeline(&prep, &rules, &cfg.features, cfg)?;
    run.fitted.model.save(&out.path("model.json"))?;
    out.record("model.json");
    run.fitted.schema.save(&out.path("schema.json"))?;
    out.record("schema.json");
    let table = render_table(&[("Baseline", &run.baseline_report), ("Model", &run.model_report)]);
    out.write("table.txt", table.as_bytes())?;
    print!("{table}");
    ctx.finish(out)
}

pub struct ServeInputs<'a> {
    pub listen: Option<std::net::SocketAddr>,
    pub data_dir: Option<&'a Path>,
    pub model: Option<&'a Path>,
    pub schema: Option<&'a Path>,
    pub corpus: Option<&'a Path>,
}

/// Opens the service state, optionally seeds it with a corpus and a model,
/// then serves until interrupted.
pub fn serve(ctx: &Ctx, inp: ServeInputs) -> Result<()> {
    use changerisk_service::{serve_state, ActivateRequest, AppState, IngestRequest};

    let mut sc = ctx.config.service.clone();
    if let Some(l) = inp.listen {
        sc.listen = l;
    }
    if let Some(d) = inp.data_dir {
        sc.data_dir = d.to_path_buf();
    }
    if sc.rules_path.is_none() {
        sc.rules_path = ctx.config.rules.clone();
    }
    sc.pipeline = ctx.config.pipeline.clone();
    sc.validate()?;
    let pair = match (inp.model, inp.schema) {
        (Some(m), Some(s)) => {
            require(m)?;
            require(s)?;
            let model = TrainedModel::load(m)?;
            let schema = FeatureSchema::load(s)?;
            check_pair(&model, &schema)?;
            Some((model, schema))
        }
        (None, None) => None,
        _ => return Err(CliError::Option("--model and --schema go together".into())),
    };
    let corpus = match inp.corpus.map(Path::to_path_buf).or_else(|| ctx.config.corpus.clone()) {
        Some(dir) => {
            require(&dir)?;
            Some(Corpus::load_dir(&dir)?)
        }
        None => None,
    };
    let listen = sc.listen;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::io("tokio runtime", e))?;
    runtime.block_on(async move {
        let state = AppState::open(sc)?;
        if let Some(c) = corpus {
            let req = IngestRequest {
                changes: to_values(&c.changes),
                incidents: to_values(&c.incidents),
                releases: to_values(&c.releases),
            };
            let res = state.ingest(req)?;
            tracing::info!(changes = res.changes_accepted, incidents = res.incidents_accepted, "corpus loaded");
        }
        if let Some((model, schema)) = pair {
            let (entry, _) = state.register(&model, &schema)?;
            state.activate(&entry.model_version, ActivateRequest::default()).await?;
            tracing::info!(version = %entry.model_version, "model active");
        }
        serve_state(state, listen).await?;
        Ok(())
    })
}

fn to_values<T: Serialize>(rows: &[T]) -> Vec<serde_json::Value> {
    rows.iter().map(|r| serde_json::to_value(r).expect("record serializes")).collect()
}
