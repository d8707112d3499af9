//! Per-feature histogram bins. Numeric features get quantile cut points over
//! distinct training values; categorical features get one bin per observed
//! code. Missing values always occupy a dedicated last bin.

use crate::error::{Error, Result};
use crate::matrix::FeatureKind;

const MAX_CATEGORY_BINS: usize = u16::MAX as usize - 1;

#[derive(Debug, Clone)]
pub enum BinMapper {
    /// Bin `i` holds `thresholds[i-1] < x <= thresholds[i]`.
    Numeric { thresholds: Vec<f64> },
    /// Bin `i` holds category code `codes[i]`.
    Categorical { codes: Vec<u32> },
}

impl BinMapper {
    pub fn fit(kind: FeatureKind, column: &[f64], n_bins: usize) -> Result<Self> {
        let mut present: Vec<f64> = column.iter().copied().filter(|v| !v.is_nan()).collect();
        present.sort_by(f64::total_cmp);
        match kind {
            FeatureKind::Numeric => Ok(BinMapper::Numeric {
                thresholds: numeric_thresholds(&present, n_bins),
            }),
            FeatureKind::Categorical => {
                let mut codes: Vec<u32> = present.iter().map(|v| *v as u32).collect();
                codes.dedup();
                if codes.len() > MAX_CATEGORY_BINS {
                    return Err(Error::InvalidInput(format!(
                        "categorical feature has {} levels; at most {MAX_CATEGORY_BINS} supported",
                        codes.len()
                    )));
                }
                Ok(BinMapper::Categorical { codes })
            }
        }
    }

    /// Bins excluding the missing bin.
    pub fn n_value_bins(&self) -> usize {
        match self {
            BinMapper::Numeric { thresholds } => thresholds.len() + 1,
            BinMapper::Categorical { codes } => codes.len(),
        }
    }

    pub fn missing_bin(&self) -> u16 {
        self.n_value_bins() as u16
    }

    pub fn bin(&self, v: f64) -> u16 {
        if v.is_nan() {
            return self.missing_bin();
        }
        match self {
            BinMapper::Numeric { thresholds } => thresholds.partition_point(|t| *t < v) as u16,
            BinMapper::Categorical { codes } => match codes.binary_search(&(v as u32)) {
                Ok(i) => i as u16,
                // Unseen at fit time: only possible for non-training rows.
                Err(_) => self.missing_bin(),
            },
        }
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m >= b {
        a
    } else {
        m
    }
}

fn numeric_thresholds(sorted: &[f64], n_bins: usize) -> Vec<f64> {
    let mut distinct: Vec<(f64, usize)> = Vec::new();
    for &v in sorted {
        match distinct.last_mut() {
            Some((last, count)) if *last == v => *count += 1,
            _ => distinct.push((v, 1)),
        }
    }
    if distinct.len() <= 1 {
        return Vec::new();
    }
    if distinct.len() <= n_bins {
        return distinct.windows(2).map(|w| midpoint(w[0].0, w[1].0)).collect();
    }
    let total = sorted.len() as f64;
    let per_bin = total / n_bins as f64;
    let mut thresholds = Vec::with_capacity(n_bins - 1);
    let mut cumulative = 0usize;
    let mut next_cut = per_bin;
    for i in 0..distinct.len() - 1 {
        cumulative += distinct[i].1;
        if cumulative as f64 >= next_cut {
            thresholds.push(midpoint(distinct[i].0, distinct[i + 1].0));
            while next_cut <= cumulative as f64 {
                next_cut += per_bin;
            }
            if thresholds.len() == n_bins - 1 {
                break;
            }
        }
    }
    thresholds
}

/// Column-major binned training data.
#[derive(Debug, Clone)]
pub struct BinnedMatrix {
    pub mappers: Vec<BinMapper>,
    pub bins: Vec<Vec<u16>>,
}

impl BinnedMatrix {
    pub fn build(columns: &[Vec<f64>], kinds: &[FeatureKind], n_bins: usize) -> Result<Self> {
        let mut mappers = Vec::with_capacity(columns.len());
        let mut bins = Vec::with_capacity(columns.len());
        for (col, kind) in columns.iter().zip(kinds) {
            let mapper = BinMapper::fit(*kind, col, n_bins)?;
            bins.push(col.iter().map(|v| mapper.bin(*v)).collect());
            mappers.push(mapper);
        }
        Ok(Self { mappers, bins })
    }
}
