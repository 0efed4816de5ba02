//! Imported ERP reference inventory.
//!
//! The reference is the record of where every handling unit is supposed to
//! be. It arrives as CSV with one handling unit per row:
//!
//! ```text
//! bin_code,batch_code,hu_code,category,shelved_at_unix
//! B001,L2023-09,HU000123,A,1693526400
//! ```
//!
//! Import is all-or-nothing: any invalid row rejects the whole file.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inventory::{validate_code, CodeError};

pub type BinCode = String;
pub type BatchCode = String;
pub type HuCode = String;

/// Header expected on every reference CSV.
pub const REFERENCE_CSV_HEADER: [&str; 5] =
    ["bin_code", "batch_code", "hu_code", "category", "shelved_at_unix"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ImportError {
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("duplicate handling unit code {0}")]
    DuplicateHuCode(HuCode),
}

/// ABC classification of a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    A,
    B,
    C,
}

impl Category {
    pub fn rank(self) -> u8 {
        match self {
            Category::A => 0,
            Category::B => 1,
            Category::C => 2,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Category::A => "A",
            Category::B => "B",
            Category::C => "C",
        };
        f.write_str(s)
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" => Ok(Category::A),
            "B" => Ok(Category::B),
            "C" => Ok(Category::C),
            other => Err(format!("unknown category {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchMeta {
    pub category: Category,
    pub shelved_at: i64,
    pub expected_qty: u64,
}

/// One row of the reference CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub bin_code: BinCode,
    pub batch_code: BatchCode,
    pub hu_code: HuCode,
    pub category: Category,
    pub shelved_at: i64,
}

/// Counts returned after a successful import.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceSummary {
    pub bins: usize,
    pub batches: usize,
    pub units: usize,
}

/// Where a handling unit is expected to be.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub bin_code: BinCode,
    pub batch_code: BatchCode,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ReferenceInventory {
    bins: BTreeMap<BinCode, BTreeMap<BatchCode, BTreeSet<HuCode>>>,
    hu_index: BTreeMap<HuCode, Placement>,
    batch_meta: BTreeMap<BatchCode, BatchMeta>,
    rows: Vec<ReferenceRow>,
}

impl ReferenceInventory {
    /// Builds the inventory from parsed rows, validating codes and
    /// per-batch metadata consistency.
    pub fn from_rows(rows: Vec<ReferenceRow>) -> Result<Self, ImportError> {
        Self::from_rows_at(rows, 2)
    }

    // `first_line` is the CSV line of the first row, for error reporting.
    fn from_rows_at(rows: Vec<ReferenceRow>, first_line: u64) -> Result<Self, ImportError> {
        let mut inv = ReferenceInventory::default();
        for (i, row) in rows.iter().enumerate() {
            let line = first_line + i as u64;
            for (field, value) in [
                ("bin_code", &row.bin_code),
                ("batch_code", &row.batch_code),
                ("hu_code", &row.hu_code),
            ] {
                validate_code(value).map_err(|e| malformed(line, field, e))?;
            }
            if inv.hu_index.contains_key(&row.hu_code) {
                return Err(ImportError::DuplicateHuCode(row.hu_code.clone()));
            }
            match inv.batch_meta.get_mut(&row.batch_code) {
                Some(meta) => {
                    if meta.category != row.category || meta.shelved_at != row.shelved_at {
                        return Err(ImportError::MalformedRow {
                            line,
                            reason: format!(
                                "batch {} has conflicting category or shelving time",
                                row.batch_code
                            ),
                        });
                    }
                    meta.expected_qty += 1;
                }
                None => {
                    inv.batch_meta.insert(
                        row.batch_code.clone(),
                        BatchMeta {
                            category: row.category,
                            shelved_at: row.shelved_at,
                            expected_qty: 1,
                        },
                    );
                }
            }
            inv.hu_index.insert(
                row.hu_code.clone(),
                Placement {
                    bin_code: row.bin_code.clone(),
                    batch_code: row.batch_code.clone(),
                },
            );
            inv.bins
                .entry(row.bin_code.clone())
                .or_default()
                .entry(row.batch_code.clone())
                .or_default()
                .insert(row.hu_code.clone());
        }
        inv.rows = rows;
        Ok(inv)
    }

    pub fn summary(&self) -> ReferenceSummary {
        ReferenceSummary {
            bins: self.bins.len(),
            batches: self.batch_meta.len(),
            units: self.hu_index.len(),
        }
    }

    pub fn contains_bin(&self, bin: &str) -> bool {
        self.bins.contains_key(bin)
    }

    pub fn bin_codes(&self) -> impl Iterator<Item = &BinCode> {
        self.bins.keys()
    }

    /// Expected batches of a bin, keyed by batch code.
    pub fn bin(&self, bin: &str) -> Option<&BTreeMap<BatchCode, BTreeSet<HuCode>>> {
        self.bins.get(bin)
    }

    pub fn bins(&self) -> &BTreeMap<BinCode, BTreeMap<BatchCode, BTreeSet<HuCode>>> {
        &self.bins
    }

    pub fn placement(&self, hu: &str) -> Option<&Placement> {
        self.hu_index.get(hu)
    }

    pub fn hu_index(&self) -> &BTreeMap<HuCode, Placement> {
        &self.hu_index
    }

    pub fn batch_meta(&self, batch: &str) -> Option<&BatchMeta> {
        self.batch_meta.get(batch)
    }

    pub fn all_batch_meta(&self) -> &BTreeMap<BatchCode, BatchMeta> {
        &self.batch_meta
    }

    /// Rows in import order.
    pub fn rows(&self) -> &[ReferenceRow] {
        &self.rows
    }
}

fn malformed(line: u64, field: &str, err: CodeError) -> ImportError {
    ImportError::MalformedRow {
        line,
        reason: format!("{field}: {err}"),
    }
}

/// Parses reference CSV bytes into rows without building the inventory.
pub fn parse_reference_csv(bytes: &[u8]) -> Result<Vec<ReferenceRow>, ImportError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(bytes);

    let headers = reader.headers().map_err(|e| ImportError::MalformedRow {
        line: 1,
        reason: e.to_string(),
    })?;
    let header: Vec<&str> = headers.iter().map(str::trim).collect();
    if header != REFERENCE_CSV_HEADER {
        return Err(ImportError::MalformedRow {
            line: 1,
            reason: format!("expected header {}", REFERENCE_CSV_HEADER.join(",")),
        });
    }

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| ImportError::MalformedRow {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != REFERENCE_CSV_HEADER.len() {
            return Err(ImportError::MalformedRow {
                line,
                reason: format!("expected 5 fields, found {}", record.len()),
            });
        }
        let category = record[3]
            .trim()
            .parse::<Category>()
            .map_err(|reason| ImportError::MalformedRow { line, reason })?;
        let shelved_at = record[4]
            .trim()
            .parse::<i64>()
            .map_err(|e| ImportError::MalformedRow {
                line,
                reason: format!("shelved_at_unix: {e}"),
            })?;
        rows.push(ReferenceRow {
            bin_code: record[0].to_string(),
            batch_code: record[1].to_string(),
            hu_code: record[2].to_string(),
            category,
            shelved_at,
        });
    }
    Ok(rows)
}

/// Parses and validates a reference CSV in one step.
pub fn import_reference_csv(bytes: &[u8]) -> Result<ReferenceInventory, ImportError> {
    let rows = parse_reference_csv(bytes)?;
    ReferenceInventory::from_rows_at(rows, 2)
}

/// Renders rows back to the reference CSV format.
pub fn write_reference_csv(rows: &[ReferenceRow]) -> String {
    let mut out = REFERENCE_CSV_HEADER.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.bin_code, row.batch_code, row.hu_code, row.category, row.shelved_at
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIVE_ROWS: &str = "bin_code,batch_code,hu_code,category,shelved_at_unix\n\
        B1,X,H1,A,100\n\
        B1,X,H2,A,100\n\
        B1,X,H3,A,100\n\
        B2,Y,K9,B,200\n\
        B2,Y,K8,B,200\n";

    #[test]
    fn five_row_import_summary() {
        let inv = import_reference_csv(FIVE_ROWS.as_bytes()).unwrap();
        assert_eq!(
            inv.summary(),
            ReferenceSummary {
                bins: 2,
                batches: 2,
                units: 5
            }
        );
        assert_eq!(inv.batch_meta("X").unwrap().expected_qty, 3);
        assert_eq!(inv.placement("K9").unwrap().bin_code, "B2");
    }

    #[test]
    fn duplicate_hu_rejected() {
        let csv = format!("{FIVE_ROWS}B2,Y,H1,B,200\n");
        assert_eq!(
            import_reference_csv(csv.as_bytes()),
            Err(ImportError::DuplicateHuCode("H1".into()))
        );
    }

    #[test]
    fn bad_rows_report_line() {
        let csv = "bin_code,batch_code,hu_code,category,shelved_at_unix\nB1,X,H1,A,100\nB1,X,H2,Z,100\n";
        match import_reference_csv(csv.as_bytes()) {
            Err(ImportError::MalformedRow { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }

        let csv = "bin_code,batch_code,hu_code,category,shelved_at_unix\nB1,X,h1,A,100\n";
        assert!(matches!(
            import_reference_csv(csv.as_bytes()),
            Err(ImportError::MalformedRow { line: 2, .. })
        ));

        let csv = "bin,batch,hu\nB1,X,H1\n";
        assert!(matches!(
            import_reference_csv(csv.as_bytes()),
            Err(ImportError::MalformedRow { line: 1, .. })
        ));
    }

    #[test]
    fn conflicting_batch_meta_rejected() {
        let csv = "bin_code,batch_code,hu_code,category,shelved_at_unix\nB1,X,H1,A,100\nB2,X,H2,B,100\n";
        assert!(matches!(
            import_reference_csv(csv.as_bytes()),
            Err(ImportError::MalformedRow { line: 3, .. })
        ));
    }

    #[test]
    fn index_inverts_bins() {
        let inv = import_reference_csv(FIVE_ROWS.as_bytes()).unwrap();
        let mut count = 0;
        for (bin, batches) in inv.bins() {
            for (batch, hus) in batches {
                for hu in hus {
                    let p = inv.placement(hu).unwrap();
                    assert_eq!((&p.bin_code, &p.batch_code), (bin, batch));
                    count += 1;
                }
                assert_eq!(inv.batch_meta(batch).unwrap().expected_qty as usize, hus.len());
            }
        }
        assert_eq!(count, inv.hu_index().len());
    }

    #[test]
    fn csv_writer_round_trips() {
        let inv = import_reference_csv(FIVE_ROWS.as_bytes()).unwrap();
        assert_eq!(write_reference_csv(inv.rows()), FIVE_ROWS);
    }
}
