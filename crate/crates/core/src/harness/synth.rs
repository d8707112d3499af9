//! Seeded generator of change/incident/release corpora with planted signal.
//!
//! Each change gets a latent incident log-odds built from three parts:
//! description topic and risk wording (text), its team's current
//! reliability (team), and deployment metadata (meta). The intercept is
//! solved so the labelled positive rate lands on `incident_rate` after the
//! unlinked share of positives is lost.

use std::collections::BTreeMap;

use chrono::{DateTime, Datelike, Duration, Months, NaiveDate, TimeZone, Utc};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::corpus::{ChangeTicket, ClosureCode, Corpus, IncidentTicket, Priority, ReleaseOutcome, ReleaseRecord};
use crate::error::{Error, Result};
use crate::gbdt::sigmoid;

/// Share of incident-causing changes referenced by the incident's field.
const CAUSED_BY_SHARE: f64 = 0.7;
/// Share referenced only in the solution text.
const MENTION_SHARE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreezePeriod {
    pub start: NaiveDate,
    /// Exclusive.
    pub end: NaiveDate,
    /// Fraction of normal change volume kept during the freeze.
    #[serde(default = "default_freeze_volume")]
    pub volume: f64,
}

fn default_freeze_volume() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_changes: usize,
    pub incident_rate: f64,
    /// Relative P0:P1:P2 frequencies among incidents of positive changes.
    pub priority_mix: [f64; 3],
    pub n_teams: usize,
    pub text_signal: f64,
    pub team_signal: f64,
    pub meta_signal: f64,
    pub it_product_coverage: f64,
    pub start: NaiveDate,
    pub months: u32,
    pub seed: u64,
    pub freeze_periods: Vec<FreezePeriod>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_changes: 20_000,
            incident_rate: 0.024,
            priority_mix: [1.0, 2.0, 7.0],
            n_teams: 40,
            text_signal: 1.0,
            team_signal: 1.0,
            meta_signal: 1.0,
            it_product_coverage: 0.5,
            start: NaiveDate::from_ymd_opt(2023, 1, 1).expect("valid date"),
            months: 12,
            seed: 7,
            freeze_periods: Vec::new(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if !(self.incident_rate > 0.0 && self.incident_rate < 1.0) {
            return bad("incident_rate must be in (0, 1)");
        }
        if self.n_changes == 0 || self.n_teams == 0 || self.months == 0 {
            return bad("n_changes, n_teams and months must be positive");
        }
        if self.priority_mix.iter().any(|p| !(*p >= 0.0)) || self.priority_mix.iter().sum::<f64>() <= 0.0 {
            return bad("priority_mix must be non-negative with a positive sum");
        }
        if !(0.0..=1.0).contains(&self.it_product_coverage) {
            return bad("it_product_coverage must be in [0, 1]");
        }
        if [self.text_signal, self.team_signal, self.meta_signal].iter().any(|s| !(*s >= 0.0)) {
            return bad("signal strengths must be non-negative");
        }
        for f in &self.freeze_periods {
            if !(f.start < f.end && (0.0..=1.0).contains(&f.volume)) {
                return bad("freeze periods need start < end and volume in [0, 1]");
            }
        }
        Ok(())
    }

    pub fn range(&self) -> (DateTime<Utc>, DateTime<Utc>) {
        let start = Utc.from_utc_datetime(&self.start.and_hms_opt(0, 0, 0).expect("midnight"));
        (start, start + Months::new(self.months))
    }
}

struct Topic {
    words: &'static [&'static str],
    risk: f64,
    ci_prefix: &'static str,
}

const TOPICS: &[Topic] = &[
    Topic { words: &["documentation", "wiki", "readme", "guide", "typo", "wording", "page", "manual"], risk: -1.2, ci_prefix: "docs" },
    Topic { words: &["dashboard", "report", "chart", "widget", "layout", "colour", "panel", "label"], risk: -0.9, ci_prefix: "bi" },
    Topic { words: &["logging", "verbosity", "logrotate", "retention", "syslog", "tracing", "metrics", "exporter"], risk: -0.6, ci_prefix: "obs" },
    Topic { words: &["frontend", "stylesheet", "button", "form", "webapp", "banner", "template", "image"], risk: -0.4, ci_prefix: "web" },
    Topic { words: &["batch", "scheduler", "cron", "job", "queue", "worker", "export", "import"], risk: -0.1, ci_prefix: "batch" },
    Topic { words: &["api", "endpoint", "gateway", "service", "microservice", "client", "timeout", "retry"], risk: 0.1, ci_prefix: "api" },
    Topic { words: &["certificate", "tls", "keystore", "renewal", "ssl", "truststore", "ca", "expiry"], risk: 0.3, ci_prefix: "pki" },
    Topic { words: &["storage", "volume", "san", "disk", "snapshot", "backup", "array", "lun"], risk: 0.5, ci_prefix: "stor" },
    Topic { words: &["firewall", "rule", "acl", "vlan", "routing", "switch", "loadbalancer", "dns"], risk: 0.7, ci_prefix: "net" },
    Topic { words: &["kernel", "os", "hypervisor", "firmware", "host", "cluster", "node", "reboot"], risk: 0.9, ci_prefix: "infra" },
    Topic { words: &["database", "schema", "migration", "index", "replica", "postgres", "oracle", "table"], risk: 1.1, ci_prefix: "db" },
    Topic { words: &["payments", "ledger", "settlement", "core", "mainframe", "clearing", "swift", "transaction"], risk: 1.3, ci_prefix: "core" },
];

const VERBS: &[&str] = &["update", "upgrade", "patch", "configure", "replace", "deploy", "migrate", "adjust", "install", "remove"];
const GENERIC: &[&str] = &[
    "change", "release", "version", "production", "environment", "team", "request", "planned", "window", "validation",
    "test", "ticket", "implementation", "steps", "check", "monitor", "impact", "users", "application", "system",
    "component", "package", "library", "setting", "parameter", "config", "owner", "review", "approval", "schedule",
];
const FILLER: &[&str] = &["the", "and", "for", "to", "of", "in", "on", "with", "after", "before", "will", "be", "is", "a"];
const RISK_WORDS: &[&str] = &["emergency", "hotfix", "untested", "manual", "rollback", "outage", "critical", "bigbang"];
const SAFE_WORDS: &[&str] = &["cosmetic", "minor", "automated", "tested", "canary", "standard", "rehearsed"];
const RATINGS: &[&str] = &["low", "medium", "medium", "high", "high", "high", "critical", "critical"];
const STATES: &[&str] = &["scheduled", "implement", "review", "closed"];
const SOLUTIONS: &[&str] = &[
    "Service restored after restarting the affected component",
    "Capacity added and alerts cleared",
    "Configuration corrected by the on-call engineer",
    "Vendor fix applied; monitoring shows normal behaviour",
];

struct TeamState {
    product: String,
    volume: f64,
    /// Reliability per month index; higher is more reliable.
    reliability: Vec<f64>,
}

struct Draft {
    change: ChangeTicket,
    team: usize,
    month: usize,
    latent: f64,
}

fn pick<'a, R: Rng>(rng: &mut R, items: &'a [&'a str]) -> &'a str {
    items.choose(rng).expect("non-empty word list")
}

fn maybe<R: Rng, T>(rng: &mut R, missing: f64, value: impl FnOnce(&mut R) -> T) -> Option<T> {
    let v = value(rng);
    if rng.random_bool(missing) {
        None
    } else {
        Some(v)
    }
}

fn month_index(start: DateTime<Utc>, t: DateTime<Utc>) -> usize {
    ((t.year() - start.year()) * 12 + t.month() as i32 - start.month() as i32).max(0) as usize
}

fn sample_start<R: Rng>(rng: &mut R, cfg: &SynthConfig, start: DateTime<Utc>, days: i64) -> DateTime<Utc> {
    loop {
        let day = start + Duration::days(rng.random_range(0..days));
        let weekday = day.weekday().number_from_monday();
        if weekday >= 6 && rng.random_bool(0.7) {
            continue;
        }
        let date = day.date_naive();
        if let Some(f) = cfg.freeze_periods.iter().find(|f| date >= f.start && date < f.end) {
            if !rng.random_bool(f.volume) {
                continue;
            }
        }
        let u: f64 = rng.random();
        let hour = if u < 0.7 {
            rng.random_range(8..18)
        } else if u < 0.9 {
            rng.random_range(18..24)
        } else {
            rng.random_range(0..8)
        };
        return day + Duration::hours(hour) + Duration::minutes(rng.random_range(0..60));
    }
}

fn describe<R: Rng>(rng: &mut R, topic: &Topic) -> (String, String, f64) {
    let mut risk_hits = 0usize;
    let mut safe_hits = 0usize;
    let mut modifier = |rng: &mut R, out: &mut Vec<String>| {
        if rng.random_bool(0.12) {
            out.push(pick(rng, RISK_WORDS).to_string());
            risk_hits += 1;
        }
        if rng.random_bool(0.12) {
            out.push(pick(rng, SAFE_WORDS).to_string());
            safe_hits += 1;
        }
    };

    let mut short = vec![pick(rng, VERBS).to_string()];
    for _ in 0..rng.random_range(2..4) {
        short.push(pick(rng, topic.words).to_string());
    }
    modifier(rng, &mut short);

    let mut full = Vec::new();
    for _ in 0..rng.random_range(14..32) {
        let u: f64 = rng.random();
        let w = if u < 0.4 {
            pick(rng, topic.words)
        } else if u < 0.7 {
            pick(rng, GENERIC)
        } else {
            pick(rng, FILLER)
        };
        full.push(w.to_string());
    }
    modifier(rng, &mut full);
    if rng.random_bool(0.5) {
        full.push(format!("ref-{}", rng.random_range(1000..99999)));
    }
    let text_risk = 2.4 * topic.risk + 1.4 * risk_hits as f64 - 1.0 * safe_hits as f64;
    let capitalise = |mut s: String| {
        if let Some(c) = s.get_mut(0..1) {
            c.make_ascii_uppercase();
        }
        s
    };
    (capitalise(short.join(" ")), capitalise(full.join(" ")) + ".", text_risk)
}

fn flag_effect(v: Option<bool>, when_false: f64) -> f64 {
    match v {
        Some(false) => when_false,
        Some(true) => 0.0,
        None => when_false / 2.0,
    }
}

fn draw_priority<R: Rng>(rng: &mut R, mix: &[f64; 3]) -> Priority {
    let total: f64 = mix.iter().sum();
    let u = rng.random::<f64>() * total;
    if u < mix[0] {
        Priority::P0Major
    } else if u < mix[0] + mix[1] {
        Priority::P1
    } else {
        Priority::P2
    }
}

/// Solves `mean(sigmoid(b + z)) = target` for `b`.
fn calibrate_intercept(latent: &[f64], target: f64) -> f64 {
    let mean = |b: f64| latent.iter().map(|z| sigmoid(b + z)).sum::<f64>() / latent.len() as f64;
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<Corpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (start, end) = cfg.range();
    let days = (end - start).num_days();
    let n_months = cfg.months as usize + 1;

    let teams: Vec<TeamState> = {
        let base = Normal::new(0.0, 1.0).expect("valid normal");
        let drift = Normal::new(0.0, 0.4).expect("valid normal");
        let volume = LogNormal::new(0.0, 0.5).expect("valid lognormal");
        (0..cfg.n_teams)
            .map(|t| {
                let a = base.sample(&mut rng);
                let mut w = 0.0;
                let reliability = (0..n_months)
                    .map(|_| {
                        w = 0.6 * w + drift.sample(&mut rng);
                        a + w
                    })
                    .collect();
                TeamState {
                    product: format!("PRD-{t:03}"),
                    volume: volume.sample(&mut rng),
                    reliability,
                }
            })
            .collect()
    };
    let volume_total: f64 = teams.iter().map(|t| t.volume).sum();
    let pick_team = |rng: &mut ChaCha8Rng| {
        let mut u = rng.random::<f64>() * volume_total;
        for (i, t) in teams.iter().enumerate() {
            u -= t.volume;
            if u < 0.0 {
                return i;
            }
        }
        teams.len() - 1
    };

    let mut starts: Vec<DateTime<Utc>> = (0..cfg.n_changes).map(|_| sample_start(&mut rng, cfg, start, days)).collect();
    starts.sort();

    let ci_groups: Vec<String> = (0..20).map(|i| format!("CFG-{i:02}")).collect();
    let owners: Vec<String> = (0..30).map(|i| format!("owner{i:02}")).collect();
    let assignment: Vec<String> = (0..25).map(|i| format!("AG-{i:02}")).collect();
    let offerings: Vec<String> = (0..15).map(|i| format!("SO-{i:02}")).collect();
    let cabs: Vec<String> = (0..6).map(|i| format!("CAB-{i}")).collect();
    let impacted = Poisson::new(5.0).expect("valid poisson");

    let mut drafts = Vec::with_capacity(cfg.n_changes);
    for (i, &t0) in starts.iter().enumerate() {
        let team = pick_team(&mut rng);
        let month = month_index(start, t0);
        let topic_idx = rng.random_range(0..TOPICS.len());
        let topic = &TOPICS[topic_idx];
        let (short, full, text_risk) = describe(&mut rng, topic);
        let duration = Duration::minutes(rng.random_range(30..480));
        let mut c = ChangeTicket::new(format!("CHG{:07}", i + 1), t0, t0 + duration, ClosureCode::Successful);
        c.short_description = short;
        c.full_description = full;
        c.ci_name = Some(format!("{}-{:02}", topic.ci_prefix, rng.random_range(0..15)));
        c.ci_config_group = Some(ci_groups.choose(&mut rng).expect("non-empty").clone());
        c.ci_owner = Some(owners.choose(&mut rng).expect("non-empty").clone());
        c.assignment_group = Some(assignment.choose(&mut rng).expect("non-empty").clone());
        c.support_offerings = Some(offerings.choose(&mut rng).expect("non-empty").clone());
        c.cab_approval_group = maybe(&mut rng, 0.05, |r| cabs.choose(r).expect("non-empty").clone());
        if rng.random_bool(cfg.it_product_coverage) {
            c.it_product = Some(teams[team].product.clone());
        }
        let rating = |rng: &mut ChaCha8Rng| maybe(rng, 0.05, |r| pick(r, RATINGS).to_string());
        c.confidentiality_rating = rating(&mut rng);
        c.integrity_rating = rating(&mut rng);
        c.availability_rating = rating(&mut rng);
        c.sox_critical = maybe(&mut rng, 0.1, |r| r.random_bool(0.2));
        c.automated_deployment = maybe(&mut rng, 0.15, |r| r.random_bool(0.55));
        c.fallback_available = maybe(&mut rng, 0.15, |r| r.random_bool(0.7));
        c.redundant_architecture = maybe(&mut rng, 0.2, |r| r.random_bool(0.6));
        let u: f64 = rng.random();
        let category = if u < 0.65 {
            "standard"
        } else if u < 0.94 {
            "normal"
        } else {
            "emergency"
        };
        c.change_category = Some(category.to_string());
        c.change_state = Some(pick(&mut rng, STATES).to_string());
        let services = impacted.sample(&mut rng) as u32 + u32::from(rng.random_bool(0.1)) * rng.random_range(5..30);
        c.impacted_services = maybe(&mut rng, 0.1, |_| services);
        c.outage_total_duration = maybe(
            &mut rng,
            0.3,
            |r| {
                if r.random_bool(0.2) {
                    r.random_range(15..240) as f64
                } else {
                    0.0
                }
            },
        );

        let night = t0.format("%H").to_string().parse::<u32>().unwrap_or(12) < 6;
        let meta = flag_effect(c.automated_deployment, 0.8)
            + flag_effect(c.fallback_available, 0.8)
            + 0.3 * (1.0 + f64::from(c.impacted_services.unwrap_or(3))).ln()
            + if category == "emergency" { 1.0 } else { 0.0 }
            + if night { 0.3 } else { 0.0 }
            + if c.sox_critical == Some(true) { 0.2 } else { 0.0 };
        let team_risk = -teams[team].reliability[month.min(n_months - 1)];
        let latent = cfg.text_signal * text_risk + cfg.team_signal * 3.0 * team_risk + cfg.meta_signal * meta;

        // Baseline rule inputs: complexity loosely follows the topic.
        let complexity = {
            let u: f64 = rng.random::<f64>() + 0.15 * topic.risk;
            if u < 0.2 {
                "low"
            } else if u < 0.45 {
                "medium"
            } else {
                "high"
            }
        };
        c.baseline_inputs.insert("deployment_complexity".into(), complexity.into());
        let history = Poisson::new(1.8 + 0.3 * (team_risk.max(-2.0) + 2.0)).expect("valid poisson");
        c.baseline_inputs
            .insert("recent_incident_count".into(), (history.sample(&mut rng) as u32).to_string());

        drafts.push(Draft {
            change: c,
            team,
            month,
            latent,
        });
    }

    let linked_share = CAUSED_BY_SHARE + MENTION_SHARE;
    let latent: Vec<f64> = drafts.iter().map(|d| d.latent).collect();
    let intercept = calibrate_intercept(&latent, cfg.incident_rate / linked_share);

    let opened_delay = Exp::new(1.0 / 36.0).expect("valid exponential");
    let mut incidents: Vec<IncidentTicket> = Vec::new();
    for d in &mut drafts {
        let p = sigmoid(intercept + d.latent);
        let causes = rng.random_bool(p);
        let reliability = teams[d.team].reliability[d.month.min(n_months - 1)];
        d.change.closure_code = if causes {
            let u: f64 = rng.random();
            if u < 0.3 {
                ClosureCode::Failed
            } else if u < 0.65 {
                ClosureCode::SuccessfulWithProblems
            } else {
                ClosureCode::Successful
            }
        } else if rng.random_bool(sigmoid(2.2 + 0.8 * reliability)) {
            ClosureCode::Successful
        } else {
            let u: f64 = rng.random();
            if u < 0.5 {
                ClosureCode::SuccessfulWithProblems
            } else if u < 0.8 {
                ClosureCode::Failed
            } else {
                ClosureCode::Cancelled
            }
        };
        if !causes {
            continue;
        }
        let route: f64 = rng.random();
        let n_incidents = if rng.random_bool(0.15) { 2 } else { 1 };
        for _ in 0..n_incidents {
            let hours: f64 = opened_delay.sample(&mut rng);
            let hours = hours.max(0.2);
            let opened_at = d.change.start_time + Duration::minutes((hours * 60.0) as i64);
            let (caused_by_change, solution_text) = if route < CAUSED_BY_SHARE {
                (Some(d.change.id.clone()), pick(&mut rng, SOLUTIONS).to_string())
            } else if route < linked_share {
                (None, format!("Rollback of {} resolved it", d.change.id))
            } else {
                (None, pick(&mut rng, SOLUTIONS).to_string())
            };
            incidents.push(IncidentTicket {
                id: String::new(),
                priority: draw_priority(&mut rng, &cfg.priority_mix),
                opened_at,
                closure_code: "Solved".into(),
                caused_by_change,
                solution_text,
            });
        }
    }

    let n = drafts.len();
    let random_change = |rng: &mut ChaCha8Rng| rng.random_range(0..n);
    let (range_start, range_end) = (start, end);
    let random_time = |rng: &mut ChaCha8Rng| range_start + Duration::minutes(rng.random_range(0..(range_end - range_start).num_minutes()));
    // Background incidents with no change reference.
    for _ in 0..n / 20 {
        incidents.push(IncidentTicket {
            id: String::new(),
            priority: draw_priority(&mut rng, &[1.0, 3.0, 6.0]),
            opened_at: random_time(&mut rng),
            closure_code: "Solved".into(),
            caused_by_change: None,
            solution_text: pick(&mut rng, SOLUTIONS).to_string(),
        });
    }
    // Irrelevant closures that still name a change.
    for _ in 0..n / 200 {
        let c = &drafts[random_change(&mut rng)].change;
        incidents.push(IncidentTicket {
            id: String::new(),
            priority: Priority::P2,
            opened_at: c.start_time + Duration::hours(2),
            closure_code: if rng.random_bool(0.5) { "Invalid event" } else { "Withdrawn by Customer" }.into(),
            caused_by_change: Some(c.id.clone()),
            solution_text: "No action required".into(),
        });
    }
    // Incidents that predate the change they name.
    for _ in 0..n / 300 {
        let c = &drafts[random_change(&mut rng)].change;
        incidents.push(IncidentTicket {
            id: String::new(),
            priority: Priority::P2,
            opened_at: c.start_time - Duration::hours(rng.random_range(2..200)),
            closure_code: "Solved".into(),
            caused_by_change: Some(c.id.clone()),
            solution_text: pick(&mut rng, SOLUTIONS).to_string(),
        });
    }
    // Solution texts naming two changes.
    for _ in 0..n / 500 {
        let a = &drafts[random_change(&mut rng)].change;
        let b = &drafts[random_change(&mut rng)].change;
        if a.id == b.id {
            continue;
        }
        incidents.push(IncidentTicket {
            id: String::new(),
            priority: Priority::P1,
            opened_at: a.start_time.max(b.start_time) + Duration::hours(1),
            closure_code: "Solved".into(),
            caused_by_change: None,
            solution_text: format!("Either {} or {} triggered the alerts", a.id, b.id),
        });
    }

    incidents.sort_by(|a, b| a.opened_at.cmp(&b.opened_at).then(a.solution_text.cmp(&b.solution_text)));
    for (i, inc) in incidents.iter_mut().enumerate() {
        inc.id = format!("INC{:07}", i + 1);
    }
    // Re-exported rows: same id appears again later in the file.
    let duplicates: Vec<IncidentTicket> = incidents
        .iter()
        .filter(|_| rng.random_bool(0.01))
        .cloned()
        .collect();
    incidents.extend(duplicates);

    let releases = generate_releases(&mut rng, &teams, &drafts, start, end);
    Ok(Corpus {
        changes: drafts.into_iter().map(|d| d.change).collect(),
        incidents,
        releases,
    })
}

fn generate_releases(
    rng: &mut ChaCha8Rng,
    teams: &[TeamState],
    drafts: &[Draft],
    start: DateTime<Utc>,
    end: DateTime<Utc>,
) -> Vec<ReleaseRecord> {
    let mut by_team_week: BTreeMap<(usize, i64), Vec<&str>> = BTreeMap::new();
    for d in drafts {
        if d.change.it_product.is_some() {
            let week = (d.change.start_time - start).num_days() / 7;
            by_team_week.entry((d.team, week)).or_default().push(&d.change.id);
        }
    }
    let per_week = Poisson::new(1.2).expect("valid poisson");
    let weeks = (end - start).num_days() / 7;
    let mut releases = Vec::new();
    for (t, team) in teams.iter().enumerate() {
        for week in 0..weeks {
            let count = per_week.sample(rng) as usize;
            for _ in 0..count {
                let s = start + Duration::days(week * 7) + Duration::minutes(rng.random_range(0..7 * 24 * 60));
                let e = s + Duration::minutes(rng.random_range(60..360));
                if e >= end {
                    continue;
                }
                let r = team.reliability[month_index(start, s).min(team.reliability.len() - 1)];
                let outcome = if rng.random_bool(sigmoid(1.2 + 1.2 * r)) {
                    ReleaseOutcome::Success
                } else if rng.random_bool(0.5) {
                    ReleaseOutcome::PartialSuccess
                } else {
                    ReleaseOutcome::Failure
                };
                let related = by_team_week
                    .get(&(t, week))
                    .map(|ids| ids.iter().take(3).map(|s| s.to_string()).collect())
                    .unwrap_or_default();
                releases.push(ReleaseRecord {
                    id: String::new(),
                    it_product: team.product.clone(),
                    start_time: s,
                    end_time: e,
                    outcome,
                    po_approved: rng.random_bool(0.9),
                    peer_reviewed: rng.random_bool(0.8),
                    related_changes: related,
                });
            }
        }
    }
    releases.sort_by(|a, b| a.start_time.cmp(&b.start_time).then(a.it_product.cmp(&b.it_product)));
    for (i, r) in releases.iter_mut().enumerate() {
        r.id = format!("REL{:06}", i + 1);
    }
    releases
}
