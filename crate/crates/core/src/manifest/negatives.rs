use std::collections::BTreeMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{GeoTag, ImageRecord, Manifest, ManifestError, ProviderId};
use crate::taxonomy::ClassId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeSource {
    Bdd,
    Cityscapes,
    GeographRoadTransport,
}

impl NegativeSource {
    pub const ALL: [NegativeSource; 3] = [
        NegativeSource::Bdd,
        NegativeSource::Cityscapes,
        NegativeSource::GeographRoadTransport,
    ];

    pub fn provider(self) -> ProviderId {
        match self {
            NegativeSource::Bdd => ProviderId::Bdd,
            NegativeSource::Cityscapes => ProviderId::Cityscapes,
            NegativeSource::GeographRoadTransport => ProviderId::Geograph,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NegativeSource::Bdd => "bdd",
            NegativeSource::Cityscapes => "cityscapes",
            NegativeSource::GeographRoadTransport => "geograph_road_transport",
        }
    }
}

impl fmt::Display for NegativeSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceQuota {
    pub quota: usize,
    /// Flag sampled records for the ego-vehicle crop.
    pub crop: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativesSpec {
    pub sources: BTreeMap<NegativeSource, SourceQuota>,
}

impl Default for NegativesSpec {
    fn default() -> Self {
        let mut sources = BTreeMap::new();
        sources.insert(NegativeSource::Bdd, SourceQuota { quota: 20_000, crop: true });
        sources.insert(NegativeSource::Cityscapes, SourceQuota { quota: 10_000, crop: false });
        sources.insert(
            NegativeSource::GeographRoadTransport,
            SourceQuota { quota: 10_000, crop: false },
        );
        NegativesSpec { sources }
    }
}

/// One image available in a negatives source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListingEntry {
    pub location: String,
    #[serde(default)]
    pub blob_checksum: Option<String>,
    #[serde(default)]
    pub geotag: Option<GeoTag>,
}

impl ListingEntry {
    pub fn new(location: impl Into<String>) -> Self {
        ListingEntry {
            location: location.into(),
            blob_checksum: None,
            geotag: None,
        }
    }
}

pub type NegativeListings = BTreeMap<NegativeSource, Vec<ListingEntry>>;

fn negative_id(source: NegativeSource, location: &str) -> String {
    let digest = Sha256::digest(location.as_bytes());
    format!("neg-{}-{}", source, &hex::encode(digest)[..16])
}

/// Samples each source's quota without replacement and adds the sample as
/// accepted negatives. Sampling is over the listing sorted by location, so
/// only the seed and the set of listed images matter.
pub fn build_negatives(
    manifest: &Manifest,
    spec: &NegativesSpec,
    listings: &NegativeListings,
    seed: u64,
) -> Result<Manifest, ManifestError> {
    let mut out = manifest.clone();
    for (&source, quota) in &spec.sources {
        if quota.quota == 0 {
            continue;
        }
        let mut listing: Vec<&ListingEntry> =
            listings.get(&source).map(|v| v.iter().collect()).unwrap_or_default();
        listing.sort_by(|a, b| a.location.cmp(&b.location));
        listing.dedup_by(|a, b| a.location == b.location);
        if listing.len() < quota.quota {
            return Err(ManifestError::InsufficientSource {
                source_name: source.to_string(),
                available: listing.len(),
                quota: quota.quota,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(source as u64));
        let mut picked = rand::seq::index::sample(&mut rng, listing.len(), quota.quota).into_vec();
        picked.sort_unstable();
        for i in picked {
            let entry = listing[i];
            let mut r = ImageRecord::new(
                negative_id(source, &entry.location),
                source.provider(),
                ClassId::Negative,
            )
            .accepted();
            r.url = Some(entry.location.clone());
            r.blob_checksum = entry.blob_checksum.clone();
            r.geotag = entry.geotag.clone();
            r.crop_ego = quota.crop;
            out.upsert(r);
        }
    }
    Ok(out)
}
