//! Token counting for description fields: lowercase, split on non-word
//! characters, drop stopwords and one-character tokens, keep tokens whose
//! document frequency reaches `min_df`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::svd::{CsrMatrix, TruncatedSvd};

pub const ENGLISH_STOPWORDS: &[&str] = &[
    "a", "about", "above", "across", "after", "afterwards", "again", "against", "all", "almost",
    "alone", "along", "already", "also", "although", "always", "am", "among", "amongst", "an",
    "and", "another", "any", "anyhow", "anyone", "anything", "anyway", "anywhere", "are", "around",
    "as", "at", "back", "be", "became", "because", "become", "becomes", "becoming", "been",
    "before", "beforehand", "behind", "being", "below", "beside", "besides", "between", "beyond",
    "both", "but", "by", "can", "cannot", "could", "did", "do", "does", "doing", "done", "down",
    "due", "during", "each", "eg", "either", "else", "elsewhere", "enough", "etc", "even", "ever",
    "every", "everyone", "everything", "everywhere", "except", "few", "for", "former", "formerly",
    "from", "further", "had", "has", "have", "having", "he", "hence", "her", "here", "hereafter",
    "hereby", "herein", "hers", "herself", "him", "himself", "his", "how", "however", "ie", "if",
    "in", "indeed", "into", "is", "it", "its", "itself", "just", "last", "latter", "least", "less",
    "made", "many", "may", "me", "meanwhile", "might", "more", "moreover", "most", "mostly", "much",
    "must", "my", "myself", "namely", "neither", "never", "nevertheless", "next", "no", "nobody",
    "none", "nor", "not", "nothing", "now", "nowhere", "of", "off", "often", "on", "once", "only",
    "onto", "or", "other", "others", "otherwise", "our", "ours", "ourselves", "out", "over", "own",
    "per", "perhaps", "please", "rather", "re", "same", "seem", "seemed", "seeming", "seems",
    "several", "she", "should", "since", "so", "some", "somehow", "someone", "something",
    "sometime", "sometimes", "somewhere", "still", "such", "than", "that", "the", "their", "them",
    "themselves", "then", "thence", "there", "thereafter", "thereby", "therefore", "therein",
    "thereupon", "these", "they", "this", "those", "though", "through", "throughout", "thru",
    "thus", "to", "together", "too", "toward", "towards", "under", "until", "up", "upon", "us",
    "very", "via", "was", "we", "well", "were", "what", "whatever", "when", "whence", "whenever",
    "where", "whereafter", "whereas", "whereby", "wherein", "whereupon", "wherever", "whether",
    "which", "while", "whither", "who", "whoever", "whole", "whom", "whose", "why", "will", "with",
    "within", "without", "would", "yet", "you", "your", "yours", "yourself", "yourselves",
];

pub fn default_stopwords() -> BTreeSet<String> {
    ENGLISH_STOPWORDS.iter().map(|s| s.to_string()).collect()
}

/// Lowercased word tokens of two or more characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric() && c != '_')
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextConfig {
    pub components: usize,
    pub min_df: usize,
    /// Replaces the bundled English list when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stopwords: Option<Vec<String>>,
    pub seed: u64,
}

impl Default for TextConfig {
    fn default() -> Self {
        Self {
            components: 50,
            min_df: 3,
            stopwords: None,
            seed: 0x5eed,
        }
    }
}

impl TextConfig {
    pub fn stopword_set(&self) -> BTreeSet<String> {
        match &self.stopwords {
            Some(list) => list.iter().map(|s| s.to_lowercase()).collect(),
            None => default_stopwords(),
        }
    }
}

/// Vocabulary plus rank-k projection for one text field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextProjector {
    pub field: String,
    /// Sorted; position is the column index of the count matrix.
    pub vocabulary: Vec<String>,
    pub stopwords: Vec<String>,
    /// Output dimension (the configured component count).
    pub components: usize,
    /// `fitted` rows of vocabulary-length loadings; rows beyond the fitted
    /// rank are implicit zeros.
    pub loadings: Vec<Vec<f64>>,
    pub singular_values: Vec<f64>,
}

impl TextProjector {
    pub fn fit(field: &str, texts: &[&str], cfg: &TextConfig) -> Self {
        let stop = cfg.stopword_set();
        let docs: Vec<Vec<String>> = texts
            .iter()
            .map(|t| tokenize(t).into_iter().filter(|w| !stop.contains(w)).collect())
            .collect();

        let mut df: BTreeMap<&str, usize> = BTreeMap::new();
        for doc in &docs {
            let uniq: BTreeSet<&str> = doc.iter().map(String::as_str).collect();
            for w in uniq {
                *df.entry(w).or_default() += 1;
            }
        }
        let vocabulary: Vec<String> = df
            .into_iter()
            .filter(|(_, n)| *n >= cfg.min_df.max(1))
            .map(|(w, _)| w.to_string())
            .collect();

        let index: BTreeMap<&str, usize> = vocabulary
            .iter()
            .enumerate()
            .map(|(i, w)| (w.as_str(), i))
            .collect();
        let rows: Vec<Vec<(usize, f64)>> = docs.iter().map(|d| count_row(d, &index)).collect();
        let counts = CsrMatrix::from_rows(rows, vocabulary.len());

        let svd = TruncatedSvd::fit(&counts, cfg.components, cfg.seed);
        if svd.clamped {
            tracing::warn!(
                field,
                requested = cfg.components,
                fitted = svd.loadings.len(),
                "component count exceeds achievable rank; extra components are zero"
            );
        }
        Self {
            field: field.to_string(),
            vocabulary,
            stopwords: stop.into_iter().collect(),
            components: cfg.components,
            loadings: svd.loadings,
            singular_values: svd.singular_values,
        }
    }

    /// Token counts over the fitted vocabulary, as sparse `(column, count)`.
    /// Stopwords never enter the vocabulary, so lookup alone filters them.
    pub fn counts(&self, text: &str) -> Vec<(usize, f64)> {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for tok in tokenize(text) {
            if let Ok(col) = self.vocabulary.binary_search(&tok) {
                *counts.entry(col).or_default() += 1.0;
            }
        }
        counts.into_iter().collect()
    }

    pub fn project(&self, text: &str) -> Vec<f64> {
        let counts = self.counts(text);
        let mut out = vec![0.0; self.components];
        for (slot, loading) in out.iter_mut().zip(&self.loadings) {
            *slot = counts.iter().map(|&(c, v)| v * loading[c]).sum();
        }
        out
    }
}

fn count_row(doc: &[String], index: &BTreeMap<&str, usize>) -> Vec<(usize, f64)> {
    let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
    for w in doc {
        if let Some(&c) = index.get(w.as_str()) {
            *counts.entry(c).or_default() += 1.0;
        }
    }
    counts.into_iter().collect()
}
