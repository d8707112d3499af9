//! Change→incident links, the causality filter, and binary labels with
//! severity-derived sample weights.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{ChangeTicket, Corpus, CorpusConfig, IncidentTicket, Priority};
use crate::error::{Error, Result};

pub const DEFAULT_CHANGE_ID_PATTERN: &str = r"\bCHG\d+\b";

/// Severity weights. P0 and P1 share the top weight by default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorityWeights {
    pub p0_major: f64,
    pub p1: f64,
    pub p2: f64,
    pub none: f64,
}

impl Default for PriorityWeights {
    fn default() -> Self {
        Self {
            p0_major: 5.0,
            p1: 5.0,
            p2: 3.0,
            none: 1.0,
        }
    }
}

impl PriorityWeights {
    pub const UNIT: PriorityWeights = PriorityWeights {
        p0_major: 1.0,
        p1: 1.0,
        p2: 1.0,
        none: 1.0,
    };

    pub fn weight(&self, priority: Option<Priority>) -> f64 {
        match priority {
            Some(Priority::P0Major) => self.p0_major,
            Some(Priority::P1) => self.p1,
            Some(Priority::P2) => self.p2,
            None => self.none,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.p0_major, self.p1, self.p2, self.none];
        if all.iter().all(|w| w.is_finite() && *w > 0.0) {
            Ok(())
        } else {
            Err(Error::Config("priority weights must be finite and positive".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkageConfig {
    pub change_id_pattern: String,
}

impl Default for LinkageConfig {
    fn default() -> Self {
        Self {
            change_id_pattern: DEFAULT_CHANGE_ID_PATTERN.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkSource {
    CausedByField,
    SolutionMention,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeIncidentLink {
    pub change_id: String,
    pub incident_id: String,
    pub source: LinkSource,
    pub incident_priority: Priority,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledChange {
    pub change_id: String,
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub highest_priority: Option<Priority>,
    pub sample_weight: f64,
}

#[derive(Debug, Clone, Default)]
pub struct EnrichOutcome {
    pub incidents: Vec<IncidentTicket>,
    /// Incidents whose cause was filled from the solution text.
    pub filled_from_text: BTreeSet<String>,
    /// Incidents whose solution text mentions several distinct change ids.
    pub ambiguous: BTreeSet<String>,
}

/// Fills an empty `caused_by_change` when the solution text mentions exactly
/// one distinct change id. Existing values are never overwritten.
pub fn enrich_caused_by(incidents: &[IncidentTicket], change_id_pattern: &Regex) -> EnrichOutcome {
    let mut out = EnrichOutcome {
        incidents: Vec::with_capacity(incidents.len()),
        ..Default::default()
    };
    for inc in incidents {
        let mut inc = inc.clone();
        let mentions: BTreeSet<&str> = change_id_pattern
            .find_iter(&inc.solution_text)
            .map(|m| m.as_str())
            .collect();
        if inc.caused_by_change.is_none() {
            match mentions.len() {
                0 => {}
                1 => {
                    inc.caused_by_change = mentions.first().map(|s| s.to_string());
                    out.filled_from_text.insert(inc.id.clone());
                }
                _ => {
                    out.ambiguous.insert(inc.id.clone());
                }
            }
        }
        out.incidents.push(inc);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DanglingReference {
    pub incident_id: String,
    pub change_id: String,
}

#[derive(Debug, Clone, Default)]
pub struct LinkOutcome {
    pub links: Vec<ChangeIncidentLink>,
    pub dangling: Vec<DanglingReference>,
}

/// One link per incident whose `caused_by_change` names a change in the
/// corpus. `filled_from_text` marks links discovered by text enrichment.
pub fn build_links(
    changes: &[ChangeTicket],
    incidents: &[IncidentTicket],
    filled_from_text: &BTreeSet<String>,
) -> LinkOutcome {
    let known: BTreeSet<&str> = changes.iter().map(|c| c.id.as_str()).collect();
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
    let mut out = LinkOutcome::default();
    for inc in incidents {
        let Some(change_id) = inc.caused_by_change.as_deref() else {
            continue;
        };
        if !known.contains(change_id) {
            out.dangling.push(DanglingReference {
                incident_id: inc.id.clone(),
                change_id: change_id.to_string(),
            });
            continue;
        }
        if !seen.insert((change_id.to_string(), inc.id.clone())) {
            continue;
        }
        let source = if filled_from_text.contains(&inc.id) {
            LinkSource::SolutionMention
        } else {
            LinkSource::CausedByField
        };
        out.links.push(ChangeIncidentLink {
            change_id: change_id.to_string(),
            incident_id: inc.id.clone(),
            source,
            incident_priority: inc.priority,
        });
    }
    out
}

/// Drops links whose change started after the incident was opened. Equal
/// timestamps are kept. Links with an unknown endpoint are dropped too.
pub fn causality_filter(
    links: &[ChangeIncidentLink],
    changes: &[ChangeTicket],
    incidents: &[IncidentTicket],
) -> Vec<ChangeIncidentLink> {
    let starts: HashMap<&str, _> = changes.iter().map(|c| (c.id.as_str(), c.start_time)).collect();
    let opened: HashMap<&str, _> = incidents.iter().map(|i| (i.id.as_str(), i.opened_at)).collect();
    links
        .iter()
        .filter(|l| match (starts.get(l.change_id.as_str()), opened.get(l.incident_id.as_str())) {
            (Some(start), Some(open)) => start <= open,
            _ => false,
        })
        .cloned()
        .collect()
}

/// Label 1 iff at least one link exists; the weight follows the most severe
/// linked priority.
pub fn label_changes(
    changes: &[ChangeTicket],
    links: &[ChangeIncidentLink],
    weights: &PriorityWeights,
) -> Vec<LabeledChange> {
    let mut worst: HashMap<&str, Priority> = HashMap::new();
    for link in links {
        worst
            .entry(link.change_id.as_str())
            .and_modify(|p| *p = (*p).min(link.incident_priority))
            .or_insert(link.incident_priority);
    }
    changes
        .iter()
        .map(|c| {
            let highest_priority = worst.get(c.id.as_str()).copied();
            LabeledChange {
                change_id: c.id.clone(),
                label: u8::from(highest_priority.is_some()),
                highest_priority,
                sample_weight: weights.weight(highest_priority),
            }
        })
        .collect()
}

/// Output of the full linking pass over a corpus.
#[derive(Debug, Clone)]
pub struct Linkage {
    /// Relevant, deduplicated, enriched incidents.
    pub incidents: Vec<IncidentTicket>,
    pub filtered_incidents: usize,
    pub duplicate_incidents: usize,
    pub ambiguous: BTreeSet<String>,
    pub dangling: Vec<DanglingReference>,
    pub non_causal: usize,
    pub links: Vec<ChangeIncidentLink>,
    /// Aligned with `corpus.changes`.
    pub labels: Vec<LabeledChange>,
}

impl Linkage {
    pub fn positive_rate(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        self.labels.iter().filter(|l| l.label == 1).count() as f64 / self.labels.len() as f64
    }

    pub fn label_map(&self) -> BTreeMap<&str, &LabeledChange> {
        self.labels.iter().map(|l| (l.change_id.as_str(), l)).collect()
    }
}

/// filter → enrich → link → causality filter → label.
pub fn link_corpus(
    corpus: &Corpus,
    corpus_cfg: &CorpusConfig,
    cfg: &LinkageConfig,
    weights: &PriorityWeights,
) -> Result<Linkage> {
    let pattern = Regex::new(&cfg.change_id_pattern)
        .map_err(|e| Error::Config(format!("change_id_pattern: {e}")))?;
    let irrelevant: BTreeSet<String> = corpus_cfg.irrelevant_closure_codes.iter().cloned().collect();
    let filtered = crate::corpus::filter_incidents(&corpus.incidents, &irrelevant);
    let enriched = enrich_caused_by(&filtered.retained, &pattern);
    let built = build_links(&corpus.changes, &enriched.incidents, &enriched.filled_from_text);
    let links = causality_filter(&built.links, &corpus.changes, &enriched.incidents);
    let labels = label_changes(&corpus.changes, &links, weights);
    Ok(Linkage {
        non_causal: built.links.len() - links.len(),
        incidents: enriched.incidents,
        filtered_incidents: filtered.filtered,
        duplicate_incidents: filtered.duplicates_collapsed,
        ambiguous: enriched.ambiguous,
        dangling: built.dangling,
        links,
        labels,
    })
}
