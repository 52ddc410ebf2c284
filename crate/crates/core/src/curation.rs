//! Human review of harvested candidates: the pending queue, decisions with
//! an append-only audit trail, and progress statistics.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::{
    AuditEntry, CurationStatus, GatheringType, ImageRecord, Manifest, ManifestError, ManifestStore, ProviderId,
    RejectionReason, Verdict,
};
use crate::querygen::Language;
use crate::taxonomy::{ClassId, Taxonomy};

/// Audit flag for a harvested positive candidate accepted as a negative.
pub const FLAG_RELABELLED_NEGATIVE: &str = "relabelled-negative";
/// Audit flag for an accept whose label differs from the provisional class.
pub const FLAG_RELABELLED: &str = "relabelled";
/// Audit flag for a decision older than the one already in force.
pub const FLAG_SUPERSEDED: &str = "superseded";

#[derive(Debug, Error)]
pub enum CurationError {
    #[error("unknown record `{0}`")]
    UnknownRecord(String),
    #[error("accept requires a label")]
    MissingLabel,
    #[error("reject requires a reason")]
    MissingReason,
    #[error("label `{0}` is not in the taxonomy")]
    UnknownLabel(String),
    #[error("curator id must not be empty")]
    MissingCurator,
    #[error("record `{id}` is at version {current}, decision expected {expected}")]
    VersionConflict { id: String, expected: u64, current: u64 },
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

/// One inclusion criterion shown to the curator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Criterion {
    pub key: &'static str,
    pub text: &'static str,
}

/// Informational checklist; the curator decides.
pub const CHECKLIST: [Criterion; 3] = [
    Criterion {
        key: "vehicle_viewport",
        text: "Taken from a vehicle's point of view with a road-facing viewport",
    },
    Criterion {
        key: "level_horizon",
        text: "Rotation within a few degrees of level",
    },
    Criterion {
        key: "single_incident",
        text: "Exactly one incident type visible",
    },
];

/// Conjunctive filter over pending records.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueueFilter {
    pub class: Option<ClassId>,
    pub provider: Option<ProviderId>,
    pub language: Option<Language>,
}

impl QueueFilter {
    pub fn matches(&self, r: &ImageRecord) -> bool {
        r.curation_status == CurationStatus::Pending
            && self.class.is_none_or(|c| r.label == c)
            && self.provider.is_none_or(|p| r.provider == p)
            && self.language.is_none_or(|l| r.language() == Some(l))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueueItem {
    pub record: ImageRecord,
    /// Service-relative blob path when the image is stored, else the source URL.
    pub image_url: Option<String>,
    pub checklist: Vec<Criterion>,
}

/// Up to `limit` pending records matching `filter`, by search rank (unranked
/// last) then id.
pub fn next_candidates(manifest: &Manifest, filter: &QueueFilter, limit: usize) -> Vec<QueueItem> {
    let mut pending: Vec<&ImageRecord> = manifest.records.values().filter(|r| filter.matches(r)).collect();
    pending.sort_by(|a, b| (a.rank.unwrap_or(u32::MAX), &a.id).cmp(&(b.rank.unwrap_or(u32::MAX), &b.id)));
    pending
        .into_iter()
        .take(limit)
        .map(|r| QueueItem {
            image_url: r
                .blob_checksum
                .as_ref()
                .map(|c| format!("/blob/{c}"))
                .or_else(|| r.url.clone()),
            record: r.clone(),
            checklist: CHECKLIST.to_vec(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationDecision {
    pub record_id: String,
    pub verdict: Verdict,
    /// Class id as text; checked against the taxonomy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_on_accept: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection_reason: Option<RejectionReason>,
    pub curator_id: String,
    pub decided_at: DateTime<Utc>,
    /// Optimistic-concurrency guard: the record version the curator saw.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_version: Option<u64>,
}

impl CurationDecision {
    pub fn accept(id: &str, label: ClassId, curator: &str, at: DateTime<Utc>) -> Self {
        CurationDecision {
            record_id: id.to_string(),
            verdict: Verdict::Accept,
            label_on_accept: Some(label.as_str().to_string()),
            rejection_reason: None,
            curator_id: curator.to_string(),
            decided_at: at,
            expected_version: None,
        }
    }

    pub fn reject(id: &str, reason: RejectionReason, curator: &str, at: DateTime<Utc>) -> Self {
        CurationDecision {
            record_id: id.to_string(),
            verdict: Verdict::Reject,
            label_on_accept: None,
            rejection_reason: Some(reason),
            curator_id: curator.to_string(),
            decided_at: at,
            expected_version: None,
        }
    }

    /// Checks well-formedness and resolves the label.
    pub fn validate(&self, taxonomy: &Taxonomy) -> Result<Option<ClassId>, CurationError> {
        if self.curator_id.trim().is_empty() {
            return Err(CurationError::MissingCurator);
        }
        match self.verdict {
            Verdict::Accept => {
                let raw = self.label_on_accept.as_deref().ok_or(CurationError::MissingLabel)?;
                let class = taxonomy
                    .class(raw)
                    .map_err(|_| CurationError::UnknownLabel(raw.to_string()))?;
                Ok(Some(class.id))
            }
            Verdict::Reject => {
                self.rejection_reason.ok_or(CurationError::MissingReason)?;
                Ok(None)
            }
        }
    }
}

fn same_decision(e: &AuditEntry, d: &CurationDecision, label: Option<ClassId>) -> bool {
    e.verdict == d.verdict
        && e.label == label
        && e.reason == d.rejection_reason
        && e.curator_id == d.curator_id
        && e.decided_at == d.decided_at
}

/// Applies `decision` inside one manifest transaction and returns the
/// record as stored afterwards.
///
/// Every new decision is appended to the audit trail. The record's status
/// follows the decision with the latest `decided_at` (ties go to the later
/// submission); an identical resubmission changes nothing.
pub fn submit_decision(
    store: &ManifestStore,
    taxonomy: &Taxonomy,
    decision: &CurationDecision,
) -> Result<ImageRecord, CurationError> {
    let label = decision.validate(taxonomy)?;
    store.transact(|m| apply_decision(m, decision, label))
}

fn apply_decision(
    m: &mut Manifest,
    d: &CurationDecision,
    label: Option<ClassId>,
) -> Result<ImageRecord, CurationError> {
    let record = m
        .records
        .get(&d.record_id)
        .ok_or_else(|| CurationError::UnknownRecord(d.record_id.clone()))?
        .clone();
    let history: Vec<&AuditEntry> = m.audit.iter().filter(|e| e.record_id == d.record_id).collect();
    if history.iter().any(|e| same_decision(e, d, label)) {
        return Ok(record);
    }
    if let Some(expected) = d.expected_version {
        if expected != record.version {
            return Err(CurationError::VersionConflict {
                id: record.id.clone(),
                expected,
                current: record.version,
            });
        }
    }
    let in_force = history.iter().map(|e| e.decided_at).max();
    let supersedes = in_force.is_none_or(|t| d.decided_at >= t);

    let mut flags = Vec::new();
    if let Some(class) = label {
        // Compare against the class the record was harvested under.
        let harvested_as = record.query.as_ref().map(|q| q.class_id).unwrap_or(record.label);
        if class.is_negative() && !harvested_as.is_negative() && record.provider.is_search_provider() {
            flags.push(FLAG_RELABELLED_NEGATIVE.to_string());
        } else if class != harvested_as {
            flags.push(FLAG_RELABELLED.to_string());
        }
    }
    if !supersedes {
        flags.push(FLAG_SUPERSEDED.to_string());
    }
    let seq = m.audit.iter().map(|e| e.seq).max().map_or(1, |s| s + 1);
    m.audit.push(AuditEntry {
        seq,
        record_id: d.record_id.clone(),
        verdict: d.verdict,
        label,
        reason: d.rejection_reason,
        curator_id: d.curator_id.clone(),
        decided_at: d.decided_at,
        flags,
    });

    let r = m.records.get_mut(&d.record_id).expect("checked above");
    r.version += 1;
    if supersedes {
        match d.verdict {
            Verdict::Accept => {
                r.curation_status = CurationStatus::Accepted;
                r.label = label.expect("validated");
                r.rejection_reason = None;
            }
            Verdict::Reject => {
                r.curation_status = CurationStatus::Rejected;
                r.rejection_reason = d.rejection_reason;
                r.split = None;
            }
        }
    }
    Ok(r.clone())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusCounts {
    pub pending: u64,
    pub accepted: u64,
    pub rejected: u64,
}

impl StatusCounts {
    pub fn total(&self) -> u64 {
        self.pending + self.accepted + self.rejected
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CuratorStats {
    pub decisions: u64,
    pub accepted: u64,
    pub rejected: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last: Option<DateTime<Utc>>,
    /// Decisions per hour between the first and last decision; `None` with
    /// fewer than two distinct timestamps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_hour: Option<f64>,
}

/// Harvested records and how many were accepted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRate {
    pub retrieved: u64,
    pub accepted: u64,
    pub rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CurationStats {
    pub per_class: BTreeMap<ClassId, StatusCounts>,
    pub totals: StatusCounts,
    pub per_curator: BTreeMap<String, CuratorStats>,
    /// Search-provider records grouped by query language (English or not).
    pub acceptance: BTreeMap<GatheringType, AcceptanceRate>,
}

pub fn curation_stats(manifest: &Manifest) -> CurationStats {
    let mut s = CurationStats::default();
    for r in manifest.records.values() {
        let c = s.per_class.entry(r.label).or_default();
        let t = &mut s.totals;
        match r.curation_status {
            CurationStatus::Pending => (c.pending, t.pending) = (c.pending + 1, t.pending + 1),
            CurationStatus::Accepted => (c.accepted, t.accepted) = (c.accepted + 1, t.accepted + 1),
            CurationStatus::Rejected => (c.rejected, t.rejected) = (c.rejected + 1, t.rejected + 1),
        }
        if r.provider.is_search_provider() && r.provider != ProviderId::Geograph {
            if let Some(g) = GatheringType::of(r) {
                let a = s.acceptance.entry(g).or_default();
                a.retrieved += 1;
                a.accepted += u64::from(r.is_accepted());
            }
        }
    }
    for a in s.acceptance.values_mut() {
        a.rate = if a.retrieved == 0 { 0.0 } else { a.accepted as f64 / a.retrieved as f64 };
    }
    for e in &manifest.audit {
        let c = s.per_curator.entry(e.curator_id.clone()).or_default();
        c.decisions += 1;
        match e.verdict {
            Verdict::Accept => c.accepted += 1,
            Verdict::Reject => c.rejected += 1,
        }
        c.first = Some(c.first.map_or(e.decided_at, |f| f.min(e.decided_at)));
        c.last = Some(c.last.map_or(e.decided_at, |l| l.max(e.decided_at)));
    }
    for c in s.per_curator.values_mut() {
        if let (Some(f), Some(l)) = (c.first, c.last) {
            let hours = (l - f).num_milliseconds() as f64 / 3_600_000.0;
            if hours > 0.0 {
                c.per_hour = Some(c.decisions as f64 / hours);
            }
        }
    }
    s
}
