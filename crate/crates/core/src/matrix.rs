//! Column-major feature matrix shared by the featurizer, the booster and the
//! explainer.
//!
//! In memory every cell is an `f64`; `NaN` is the missing marker for both
//! kinds. Categorical cells hold integer codes (`0` = unseen category).
//!
//! On disk (`.crfm`):
//!
//! ```text
//! magic  b"CRFM"            4 bytes
//! version u32 LE            currently 1
//! header_len u32 LE
//! header  JSON (UTF-8)      {fingerprint, n_rows, row_ids, columns: [{name, kind}], missing}
//! columns in header order   numeric: n_rows × f64 LE, missing = 0x7FF8000000000000
//!                           categorical: n_rows × u32 LE, missing = 0xFFFFFFFF
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CATEGORY_UNKNOWN: u32 = 0;
pub const CATEGORY_MISSING_CODE: u32 = u32::MAX;
const MAGIC: &[u8; 4] = b"CRFM";
const FORMAT_VERSION: u32 = 1;
const CANONICAL_NAN: u64 = 0x7FF8_0000_0000_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnInfo {
    pub name: String,
    pub kind: FeatureKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub fingerprint: String,
    pub row_ids: Vec<String>,
    pub columns: Vec<ColumnInfo>,
    /// `columns.len()` vectors of `row_ids.len()` cells.
    pub values: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    fingerprint: String,
    n_rows: usize,
    row_ids: Vec<String>,
    columns: Vec<ColumnInfo>,
    missing: MissingEncoding,
}

#[derive(Serialize, Deserialize)]
struct MissingEncoding {
    numeric: String,
    categorical: u32,
}

impl FeatureMatrix {
    pub fn from_rows(fingerprint: String, columns: Vec<ColumnInfo>, row_ids: Vec<String>, rows: &[Vec<f64>]) -> Self {
        let mut values = vec![Vec::with_capacity(rows.len()); columns.len()];
        for row in rows {
            debug_assert_eq!(row.len(), columns.len());
            for (col, v) in values.iter_mut().zip(row) {
                col.push(*v);
            }
        }
        Self {
            fingerprint,
            row_ids,
            columns,
            values,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn kinds(&self) -> Vec<FeatureKind> {
        self.columns.iter().map(|c| c.kind).collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.iter().map(|col| col[i]).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self {
            fingerprint: self.fingerprint.clone(),
            row_ids: idx.iter().map(|&i| self.row_ids[i].clone()).collect(),
            columns: self.columns.clone(),
            values: self
                .values
                .iter()
                .map(|col| idx.iter().map(|&i| col[i]).collect())
                .collect(),
        }
    }

    pub fn check_fingerprint(&self, expected: &str) -> Result<()> {
        if self.fingerprint == expected {
            Ok(())
        } else {
            Err(Error::FingerprintMismatch {
                expected: expected.to_string(),
                found: self.fingerprint.clone(),
            })
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            fingerprint: self.fingerprint.clone(),
            n_rows: self.n_rows(),
            row_ids: self.row_ids.clone(),
            columns: self.columns.clone(),
            missing: MissingEncoding {
                numeric: format!("0x{CANONICAL_NAN:016X}"),
                categorical: CATEGORY_MISSING_CODE,
            },
        };
        let header = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        for (info, col) in self.columns.iter().zip(&self.values) {
            match info.kind {
                FeatureKind::Numeric => {
                    for v in col {
                        let bits = if v.is_nan() { CANONICAL_NAN } else { v.to_bits() };
                        w.write_all(&bits.to_le_bytes())?;
                    }
                }
                FeatureKind::Categorical => {
                    for v in col {
                        let code = if v.is_nan() { CATEGORY_MISSING_CODE } else { *v as u32 };
                        w.write_all(&code.to_le_bytes())?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::InvalidInput("not a feature matrix file".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::InvalidInput(format!("unsupported matrix version {version}")));
        }
        let header_len = read_u32(&mut r)? as usize;
        let mut header = vec![0u8; header_len];
        r.read_exact(&mut header)?;
        let header: Header = serde_json::from_slice(&header)?;
        if header.row_ids.len() != header.n_rows {
            return Err(Error::InvalidInput("row id count differs from n_rows".into()));
        }
        let mut values = Vec::with_capacity(header.columns.len());
        for info in &header.columns {
            let mut col = Vec::with_capacity(header.n_rows);
            for _ in 0..header.n_rows {
                col.push(match info.kind {
                    FeatureKind::Numeric => {
                        let mut b = [0u8; 8];
                        r.read_exact(&mut b)?;
                        f64::from_le_bytes(b)
                    }
                    FeatureKind::Categorical => {
                        let code = read_u32(&mut r)?;
                        if code == CATEGORY_MISSING_CODE {
                            f64::NAN
                        } else {
                            code as f64
                        }
                    }
                });
            }
            values.push(col);
        }
        Ok(Self {
            fingerprint: header.fingerprint,
            row_ids: header.row_ids,
            columns: header.columns,
            values,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
