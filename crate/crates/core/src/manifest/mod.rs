//! The dataset of record: every candidate image, its provenance, curation
//! state and split assignment.
//!
//! A manifest is persisted as a single JSON document. Writes go to a
//! sibling temporary file which is then renamed over the original, so a
//! reader never observes a half-written manifest.

mod counts;
mod negatives;
mod regions;
mod split;
mod store;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::querygen::{Language, QuerySpec};
use crate::taxonomy::ClassId;

pub use counts::{class_counts, ClassCountTable, GatheringType};
pub use negatives::{build_negatives, NegativeListings, NegativeSource, NegativesSpec};
pub use regions::{Region, RegionMap, RegionRule};
pub use split::{assign_splits, geo_stratify, GeoSplitSummary, SplitRatios, GEO_CLASSES};
pub use store::ManifestStore;

pub const SCHEMA_VERSION: u32 = 1;

/// Where an image came from. Search providers plus the negative-example
/// datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderId {
    Google,
    Bing,
    Flickr,
    Geograph,
    LocalFixture,
    Bdd,
    Cityscapes,
}

impl ProviderId {
    pub const ALL: [ProviderId; 7] = [
        ProviderId::Google,
        ProviderId::Bing,
        ProviderId::Flickr,
        ProviderId::Geograph,
        ProviderId::LocalFixture,
        ProviderId::Bdd,
        ProviderId::Cityscapes,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProviderId::Google => "google",
            ProviderId::Bing => "bing",
            ProviderId::Flickr => "flickr",
            ProviderId::Geograph => "geograph",
            ProviderId::LocalFixture => "local-fixture",
            ProviderId::Bdd => "bdd",
            ProviderId::Cityscapes => "cityscapes",
        }
    }

    /// Whether this id names an image-search provider (as opposed to a
    /// negatives dataset).
    pub fn is_search_provider(self) -> bool {
        !matches!(self, ProviderId::Bdd | ProviderId::Cityscapes)
    }
}

impl fmt::Display for ProviderId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProviderId {
    type Err = ManifestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ProviderId::ALL
            .iter()
            .copied()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| ManifestError::UnknownProvider(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurationStatus {
    Pending,
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionReason {
    BadViewport,
    Rotated,
    MultiIncident,
    NotIncident,
    Duplicate,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = ManifestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(ManifestError::UnknownSplit(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoTag {
    pub lat: f64,
    pub lon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blob_checksum: Option<String>,
    pub provider: ProviderId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<QuerySpec>,
    /// Search-result position (1-based), when harvested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    /// Provisional class while pending; the curated label afterwards.
    pub label: ClassId,
    pub curation_status: CurationStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection_reason: Option<RejectionReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geotag: Option<GeoTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    /// Apply the ego-vehicle crop before use.
    #[serde(default)]
    pub crop_ego: bool,
    /// Bumped on every curation decision; used for optimistic concurrency.
    #[serde(default)]
    pub version: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fetched_at: Option<DateTime<Utc>>,
}

impl ImageRecord {
    /// A minimal pending record.
    pub fn new(id: impl Into<String>, provider: ProviderId, label: ClassId) -> Self {
        ImageRecord {
            id: id.into(),
            blob_checksum: None,
            provider,
            query: None,
            rank: None,
            url: None,
            label,
            curation_status: CurationStatus::Pending,
            rejection_reason: None,
            geotag: None,
            split: None,
            crop_ego: false,
            version: 0,
            fetched_at: None,
        }
    }

    pub fn accepted(mut self) -> Self {
        self.curation_status = CurationStatus::Accepted;
        self
    }

    pub fn language(&self) -> Option<Language> {
        self.query.as_ref().map(|q| q.language)
    }

    pub fn is_accepted(&self) -> bool {
        self.curation_status == CurationStatus::Accepted
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject,
}

/// One entry of the append-only curation history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    pub record_id: String,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<ClassId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<RejectionReason>,
    pub curator_id: String,
    pub decided_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest i/o: {0}")]
    Io(#[from] io::Error),
    #[error("manifest does not parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("manifest schema version {found} is not supported (expected {SCHEMA_VERSION})")]
    Schema { found: u32 },
    #[error("unknown provider `{0}`")]
    UnknownProvider(String),
    #[error("unknown split `{0}`")]
    UnknownSplit(String),
    #[error("split ratios sum to {0}, expected 1")]
    RatiosNotNormalized(f64),
    #[error("no accepted records to split")]
    NothingToSplit,
    #[error("insufficient-source: {source_name} lists {available} images, quota is {quota}")]
    InsufficientSource {
        source_name: String,
        available: usize,
        quota: usize,
    },
    #[error("duplicate record id `{0}`")]
    DuplicateId(String),
    #[error("region map: {0}")]
    Regions(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub records: BTreeMap<String, ImageRecord>,
    #[serde(default)]
    pub audit: Vec<AuditEntry>,
}

impl Default for Manifest {
    fn default() -> Self {
        Manifest {
            schema_version: SCHEMA_VERSION,
            records: BTreeMap::new(),
            audit: Vec::new(),
        }
    }
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens the manifest at `path`; a missing file yields an empty manifest.
    pub fn open(path: &Path) -> Result<Manifest, ManifestError> {
        match fs::read(path) {
            Ok(bytes) => Self::from_json(&bytes),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Manifest::new()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn from_json(bytes: &[u8]) -> Result<Manifest, ManifestError> {
        let m: Manifest = serde_json::from_slice(bytes)?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(ManifestError::Schema {
                found: m.schema_version,
            });
        }
        Ok(m)
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("manifest serializes")
    }

    /// Writes atomically: temp file in the same directory, fsync, rename.
    pub fn save(&self, path: &Path) -> Result<(), ManifestError> {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
        if let Some(dir) = dir {
            fs::create_dir_all(dir)?;
        }
        let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
        tmp_name.push(".tmp");
        let tmp = path.with_file_name(tmp_name);
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_json())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn insert(&mut self, record: ImageRecord) -> Result<(), ManifestError> {
        if self.records.contains_key(&record.id) {
            return Err(ManifestError::DuplicateId(record.id));
        }
        self.records.insert(record.id.clone(), record);
        Ok(())
    }

    /// Inserts or replaces.
    pub fn upsert(&mut self, record: ImageRecord) {
        self.records.insert(record.id.clone(), record);
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.records.get(id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn accepted(&self) -> impl Iterator<Item = &ImageRecord> {
        self.records.values().filter(|r| r.is_accepted())
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &ImageRecord> {
        self.records.values().filter(move |r| r.split == Some(split))
    }

    /// One JSON object per line, in id order.
    pub fn export_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for r in self.records.values() {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}
