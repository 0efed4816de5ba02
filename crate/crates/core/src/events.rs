//! Bodies of log entries. Every state change in a stocktake is one of these.

use serde::{Deserialize, Serialize};

use crate::inventory::Classification;
use crate::reference::{BatchCode, BinCode, HuCode, ReferenceRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ClearScope {
    Reference,
    History,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "body", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Event {
    ReferenceImport {
        rows: Vec<ReferenceRow>,
    },
    SessionCreate {
        session_id: String,
    },
    TaskStart {
        session_id: String,
        bin_code: BinCode,
    },
    Scan {
        session_id: String,
        bin_code: BinCode,
        event_id: String,
        payload: String,
        #[serde(flatten)]
        classification: Classification,
    },
    SurplusAck {
        session_id: String,
        bin_code: BinCode,
        hu_code: HuCode,
        returned: bool,
    },
    Signoff {
        session_id: String,
        bin_code: BinCode,
        confirmed_missing: Vec<BatchCode>,
    },
    Archive {
        session_id: String,
        archive_id: String,
    },
    Clear {
        scope: ClearScope,
    },
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::ReferenceImport { .. } => "REFERENCE_IMPORT",
            Event::SessionCreate { .. } => "SESSION_CREATE",
            Event::TaskStart { .. } => "TASK_START",
            Event::Scan { .. } => "SCAN",
            Event::SurplusAck { .. } => "SURPLUS_ACK",
            Event::Signoff { .. } => "SIGNOFF",
            Event::Archive { .. } => "ARCHIVE",
            Event::Clear { .. } => "CLEAR",
        }
    }

    /// Session the event belongs to, if any.
    pub fn session_id(&self) -> Option<&str> {
        match self {
            Event::SessionCreate { session_id }
            | Event::TaskStart { session_id, .. }
            | Event::Scan { session_id, .. }
            | Event::SurplusAck { session_id, .. }
            | Event::Signoff { session_id, .. }
            | Event::Archive { session_id, .. } => Some(session_id),
            Event::ReferenceImport { .. } | Event::Clear { .. } => None,
        }
    }
}
