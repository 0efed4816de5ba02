//! Scan payload parsing and per-bin reconciliation.
//!
//! Everything here is a pure function over an immutable
//! [`ReferenceInventory`]; no state is kept between calls.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reference::{BatchCode, BinCode, HuCode, ReferenceInventory};

/// Separator between the three fields of a QR payload.
pub const PAYLOAD_DELIMITER: char = '|';

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodeError {
    #[error("empty field")]
    Empty,
    #[error("illegal character {0:?}")]
    IllegalCharacter(char),
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum QrError {
    #[error("payload must have exactly 3 fields, found {0}")]
    MissingField(usize),
    #[error("field {0} is empty")]
    EmptyField(usize),
    #[error("field {field} contains illegal character {ch:?}")]
    IllegalCharacter { field: usize, ch: char },
}

/// Checks an identifier against the allowed charset `[A-Z0-9-_.]`.
pub fn validate_code(code: &str) -> Result<(), CodeError> {
    if code.is_empty() {
        return Err(CodeError::Empty);
    }
    match code.chars().find(|c| !is_code_char(*c)) {
        Some(c) => Err(CodeError::IllegalCharacter(c)),
        None => Ok(()),
    }
}

fn is_code_char(c: char) -> bool {
    c.is_ascii_uppercase() || c.is_ascii_digit() || matches!(c, '-' | '_' | '.')
}

/// Identity of one physical handling unit as printed on its QR label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HandlingUnitRef {
    pub bin_code: BinCode,
    pub batch_code: BatchCode,
    pub hu_code: HuCode,
}

impl fmt::Display for HandlingUnitRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{d}{}{d}{}",
            self.bin_code,
            self.batch_code,
            self.hu_code,
            d = PAYLOAD_DELIMITER
        )
    }
}

/// Parses a `bin|batch|hu` payload.
pub fn parse_qr(payload: &str) -> Result<HandlingUnitRef, QrError> {
    let fields: Vec<&str> = payload.split(PAYLOAD_DELIMITER).collect();
    if fields.len() != 3 {
        return Err(QrError::MissingField(fields.len()));
    }
    for (i, field) in fields.iter().enumerate() {
        match validate_code(field) {
            Ok(()) => {}
            Err(CodeError::Empty) => return Err(QrError::EmptyField(i)),
            Err(CodeError::IllegalCharacter(ch)) => {
                return Err(QrError::IllegalCharacter { field: i, ch })
            }
        }
    }
    Ok(HandlingUnitRef {
        bin_code: fields[0].to_string(),
        batch_code: fields[1].to_string(),
        hu_code: fields[2].to_string(),
    })
}

pub fn format_qr(unit: &HandlingUnitRef) -> String {
    unit.to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown bin {0}")]
pub struct UnknownBin(pub BinCode);

/// Outcome of a single scan at a bin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "classification", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Classification {
    Match,
    Duplicate,
    Misplaced { designated_bin: BinCode },
    Unknown,
}

impl Classification {
    pub fn label(&self) -> &'static str {
        match self {
            Classification::Match => "MATCH",
            Classification::Duplicate => "DUPLICATE",
            Classification::Misplaced { .. } => "MISPLACED",
            Classification::Unknown => "UNKNOWN",
        }
    }
}

/// Bin a unit belongs to, or `None` when it was never imported
/// (reported as `UNKNOWN_ORIGIN`).
pub fn designated_location<'a>(reference: &'a ReferenceInventory, hu: &str) -> Option<&'a BinCode> {
    reference.placement(hu).map(|p| &p.bin_code)
}

/// Label used in tabular exports for units of unknown origin.
pub const UNKNOWN_ORIGIN: &str = "UNKNOWN_ORIGIN";

pub fn classify_scan(
    reference: &ReferenceInventory,
    seen: &BTreeSet<HuCode>,
    scan: &HandlingUnitRef,
    at_bin: &str,
) -> Result<Classification, UnknownBin> {
    if !reference.contains_bin(at_bin) {
        return Err(UnknownBin(at_bin.to_string()));
    }
    if seen.contains(&scan.hu_code) {
        return Ok(Classification::Duplicate);
    }
    Ok(match reference.placement(&scan.hu_code) {
        None => Classification::Unknown,
        Some(p) if p.bin_code == at_bin => Classification::Match,
        Some(p) => Classification::Misplaced {
            designated_bin: p.bin_code.clone(),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchTally {
    pub expected_qty: u64,
    pub counted_qty: u64,
    pub shortage_qty: u64,
    pub missing_hu_codes: BTreeSet<HuCode>,
    /// The batch was enumerated: at least one of its units was scanned, or
    /// the operator confirmed the whole batch absent.
    pub listed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurplusUnit {
    pub hu_code: HuCode,
    /// `None` means the unit is of unknown origin.
    pub designated_bin: Option<BinCode>,
    pub acknowledged: bool,
    pub returned: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinReconciliation {
    pub bin_code: BinCode,
    pub per_batch: BTreeMap<BatchCode, BatchTally>,
    /// Sorted by `hu_code`.
    pub surplus: Vec<SurplusUnit>,
    pub complete: bool,
}

/// What blocks a bin from being signed off.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Blockers {
    pub blocking_batches: Vec<BatchCode>,
    pub unacknowledged_surplus: Vec<HuCode>,
}

impl Blockers {
    pub fn is_empty(&self) -> bool {
        self.blocking_batches.is_empty() && self.unacknowledged_surplus.is_empty()
    }
}

impl BinReconciliation {
    pub fn expected_qty(&self) -> u64 {
        self.per_batch.values().map(|t| t.expected_qty).sum()
    }

    pub fn counted_qty(&self) -> u64 {
        self.per_batch.values().map(|t| t.counted_qty).sum()
    }

    pub fn shortage_qty(&self) -> u64 {
        self.per_batch.values().map(|t| t.shortage_qty).sum()
    }

    pub fn blockers(&self) -> Blockers {
        Blockers {
            blocking_batches: self
                .per_batch
                .iter()
                .filter(|(_, t)| !t.listed)
                .map(|(b, _)| b.clone())
                .collect(),
            unacknowledged_surplus: self
                .surplus
                .iter()
                .filter(|s| !s.acknowledged)
                .map(|s| s.hu_code.clone())
                .collect(),
        }
    }
}

/// Operator attestations that feed into completeness: surplus
/// acknowledgments (hu code to `returned` flag) and batches confirmed absent.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Attestations {
    pub acknowledged: BTreeMap<HuCode, bool>,
    pub confirmed_missing: BTreeSet<BatchCode>,
}

/// Reconciles the scans of one bin against the reference, with no
/// attestations recorded.
pub fn reconcile_bin(
    reference: &ReferenceInventory,
    bin: &str,
    scans: &[HandlingUnitRef],
) -> Result<BinReconciliation, UnknownBin> {
    reconcile_bin_attested(reference, bin, scans, &Attestations::default())
}

pub fn reconcile_bin_attested(
    reference: &ReferenceInventory,
    bin: &str,
    scans: &[HandlingUnitRef],
    attestations: &Attestations,
) -> Result<BinReconciliation, UnknownBin> {
    let expected = reference
        .bin(bin)
        .ok_or_else(|| UnknownBin(bin.to_string()))?;

    let unique: BTreeSet<&str> = scans.iter().map(|s| s.hu_code.as_str()).collect();

    let mut counted: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut surplus = Vec::new();
    // BTreeSet iteration keeps surplus sorted by hu_code.
    for hu in &unique {
        match reference.placement(hu) {
            Some(p) if p.bin_code == bin => {
                counted.entry(p.batch_code.as_str()).or_default().insert(hu);
            }
            placement => {
                let ack = attestations.acknowledged.get(*hu);
                surplus.push(SurplusUnit {
                    hu_code: hu.to_string(),
                    designated_bin: placement.map(|p| p.bin_code.clone()),
                    acknowledged: ack.is_some(),
                    returned: ack.copied().unwrap_or(false),
                });
            }
        }
    }

    let per_batch: BTreeMap<BatchCode, BatchTally> = expected
        .iter()
        .map(|(batch, units)| {
            let found = counted.get(batch.as_str());
            let missing: BTreeSet<HuCode> = units
                .iter()
                .filter(|u| !found.is_some_and(|f| f.contains(u.as_str())))
                .cloned()
                .collect();
            let counted_qty = found.map_or(0, |f| f.len() as u64);
            let tally = BatchTally {
                expected_qty: units.len() as u64,
                counted_qty,
                shortage_qty: missing.len() as u64,
                missing_hu_codes: missing,
                listed: counted_qty > 0 || attestations.confirmed_missing.contains(batch),
            };
            (batch.clone(), tally)
        })
        .collect();

    let complete = per_batch.values().all(|t| t.listed) && surplus.iter().all(|s| s.acknowledged);

    Ok(BinReconciliation {
        bin_code: bin.to_string(),
        per_batch,
        surplus,
        complete,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::import_reference_csv;
    use proptest::prelude::*;

    fn sample() -> ReferenceInventory {
        import_reference_csv(
            b"bin_code,batch_code,hu_code,category,shelved_at_unix\n\
              B1,X,H1,A,100\n\
              B1,X,H2,A,100\n\
              B1,X,H3,A,100\n\
              B2,Y,K9,B,200\n",
        )
        .unwrap()
    }

    fn unit(hu: &str) -> HandlingUnitRef {
        HandlingUnitRef {
            bin_code: "B1".into(),
            batch_code: "X".into(),
            hu_code: hu.into(),
        }
    }

    #[test]
    fn parse_qr_splits_three_fields() {
        let u = parse_qr("B001|L2023-09|HU000123").unwrap();
        assert_eq!(u.bin_code, "B001");
        assert_eq!(u.batch_code, "L2023-09");
        assert_eq!(u.hu_code, "HU000123");
    }

    #[test]
    fn parse_qr_errors() {
        assert_eq!(parse_qr("B001|L2023-09"), Err(QrError::MissingField(2)));
        assert_eq!(parse_qr("a|b|c|d"), Err(QrError::MissingField(4)));
        assert_eq!(parse_qr("B001||HU1"), Err(QrError::EmptyField(1)));
        assert_eq!(
            parse_qr("B001|L1|hu1"),
            Err(QrError::IllegalCharacter { field: 2, ch: 'h' })
        );
        assert_eq!(
            parse_qr("B 1|L1|H1"),
            Err(QrError::IllegalCharacter { field: 0, ch: ' ' })
        );
    }

    #[test]
    fn classify_cases() {
        let inv = sample();
        let mut seen = BTreeSet::new();
        assert_eq!(
            classify_scan(&inv, &seen, &unit("H1"), "B1"),
            Ok(Classification::Match)
        );
        seen.insert("H1".to_string());
        assert_eq!(
            classify_scan(&inv, &seen, &unit("H1"), "B1"),
            Ok(Classification::Duplicate)
        );
        assert_eq!(
            classify_scan(&inv, &seen, &unit("K9"), "B1"),
            Ok(Classification::Misplaced {
                designated_bin: "B2".into()
            })
        );
        assert_eq!(
            classify_scan(&inv, &seen, &unit("ZZ"), "B1"),
            Ok(Classification::Unknown)
        );
        assert_eq!(
            classify_scan(&inv, &seen, &unit("H1"), "B9"),
            Err(UnknownBin("B9".into()))
        );
    }

    #[test]
    fn classification_json_shape() {
        assert_eq!(
            serde_json::to_string(&Classification::Match).unwrap(),
            r#"{"classification":"MATCH"}"#
        );
        assert_eq!(
            serde_json::to_string(&Classification::Misplaced {
                designated_bin: "B2".into()
            })
            .unwrap(),
            r#"{"classification":"MISPLACED","designated_bin":"B2"}"#
        );
    }

    #[test]
    fn designated_location_lookup() {
        let inv = sample();
        assert_eq!(designated_location(&inv, "H1").map(String::as_str), Some("B1"));
        assert_eq!(designated_location(&inv, "NEVER"), None);
    }

    #[test]
    fn reconcile_shortage_and_surplus() {
        let inv = sample();
        let r = reconcile_bin(&inv, "B1", &[unit("H1"), unit("H2"), unit("K9")]).unwrap();
        let x = &r.per_batch["X"];
        assert_eq!((x.expected_qty, x.counted_qty, x.shortage_qty), (3, 2, 1));
        assert_eq!(x.missing_hu_codes, BTreeSet::from(["H3".to_string()]));
        assert_eq!(r.surplus.len(), 1);
        assert_eq!(r.surplus[0].hu_code, "K9");
        assert_eq!(r.surplus[0].designated_bin.as_deref(), Some("B2"));
        assert!(!r.complete, "unacknowledged surplus blocks completion");
    }

    #[test]
    fn reconcile_empty_and_exact() {
        let inv = sample();
        let r = reconcile_bin(&inv, "B1", &[]).unwrap();
        assert_eq!(r.per_batch["X"].counted_qty, 0);
        assert_eq!(r.per_batch["X"].shortage_qty, 3);
        assert!(r.surplus.is_empty());
        assert!(!r.complete);
        assert_eq!(r.blockers().blocking_batches, vec!["X".to_string()]);

        let r = reconcile_bin(&inv, "B1", &[unit("H3"), unit("H1"), unit("H2")]).unwrap();
        assert_eq!(r.shortage_qty(), 0);
        assert!(r.surplus.is_empty());
        assert!(r.complete);
    }

    #[test]
    fn attestations_complete_a_bin() {
        let inv = sample();
        let scans = [unit("H1"), unit("K9"), unit("NEW1")];
        let mut att = Attestations::default();
        let r = reconcile_bin_attested(&inv, "B1", &scans, &att).unwrap();
        assert_eq!(
            r.blockers().unacknowledged_surplus,
            vec!["K9".to_string(), "NEW1".to_string()]
        );
        assert_eq!(r.surplus[1].designated_bin, None);

        att.acknowledged.insert("K9".into(), true);
        att.acknowledged.insert("NEW1".into(), false);
        let r = reconcile_bin_attested(&inv, "B1", &scans, &att).unwrap();
        assert!(r.complete);
        assert!(r.surplus[0].returned);

        let r = reconcile_bin_attested(&inv, "B2", &[], &att).unwrap();
        assert!(!r.complete);
        att.confirmed_missing.insert("Y".into());
        let r = reconcile_bin_attested(&inv, "B2", &[], &att).unwrap();
        assert!(r.complete);
        assert_eq!(r.per_batch["Y"].shortage_qty, 1);
    }

    #[test]
    fn unknown_bin_rejected() {
        assert_eq!(reconcile_bin(&sample(), "NOPE", &[]), Err(UnknownBin("NOPE".into())));
    }

    fn code() -> impl Strategy<Value = String> {
        "[A-Z0-9._-]{1,12}"
    }

    proptest! {
        #[test]
        fn qr_round_trip(bin in code(), batch in code(), hu in code()) {
            let unit = HandlingUnitRef { bin_code: bin, batch_code: batch, hu_code: hu };
            let payload = format_qr(&unit);
            prop_assert_eq!(parse_qr(&payload).unwrap(), unit);
            prop_assert_eq!(format_qr(&parse_qr(&payload).unwrap()), payload);
        }

        #[test]
        fn duplicates_and_order_do_not_matter(
            picks in proptest::collection::vec(0usize..6, 0..20),
            seed in any::<u64>(),
        ) {
            let inv = sample();
            let pool = ["H1", "H2", "H3", "K9", "Q1", "Q2"];
            let scans: Vec<_> = picks.iter().map(|&i| unit(pool[i])).collect();
            let base = reconcile_bin(&inv, "B1", &scans).unwrap();

            let mut shuffled = scans.clone();
            let mut s = seed;
            for i in (1..shuffled.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (s >> 33) as usize % (i + 1));
            }
            shuffled.extend(scans.iter().take(3).cloned());
            prop_assert_eq!(reconcile_bin(&inv, "B1", &shuffled).unwrap(), base);
        }
    }
}
