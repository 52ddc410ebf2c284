//! Duplicate removal: exact pixel-matrix equality, then difference-hash
//! (dHash) near-duplicate clustering.
//!
//! The dHash is bit-exact across implementations:
//!
//! 1. decode to 8-bit RGB;
//! 2. luma `Y = (299 R + 587 G + 114 B) / 1000` (integer division);
//! 3. box-average `Y` onto a 9×8 grid, cell `(cx, cy)` covering source
//!    columns `⌊cx·W/9⌋ .. max(⌊cx·W/9⌋+1, ⌊(cx+1)·W/9⌋)` and the
//!    analogous rows, mean taken with integer division;
//! 4. bit `8·cy + cx` (most significant first) is set when
//!    `cell(cx, cy) < cell(cx+1, cy)`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::harvest::BlobStore;
use crate::manifest::{CurationStatus, Manifest, RejectionReason};

pub const DHASH_TAG: &str = "dhash-9x8-luma601";
pub const DEFAULT_THRESHOLD: u32 = 10;

#[derive(Debug, Error)]
pub enum DedupError {
    #[error("image does not decode: {0}")]
    Decode(String),
    #[error("hashes use different algorithms ({0} vs {1})")]
    AlgorithmMismatch(String, String),
    #[error("threshold {0} outside 0..=64")]
    Threshold(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PerceptualHash {
    pub bits: u64,
    pub algorithm_tag: String,
}

impl PerceptualHash {
    pub fn distance(&self, other: &PerceptualHash) -> Result<u32, DedupError> {
        if self.algorithm_tag != other.algorithm_tag {
            return Err(DedupError::AlgorithmMismatch(
                self.algorithm_tag.clone(),
                other.algorithm_tag.clone(),
            ));
        }
        Ok((self.bits ^ other.bits).count_ones())
    }

    pub fn to_hex(&self) -> String {
        format!("{:016x}", self.bits)
    }
}

fn decode_rgb8(bytes: &[u8]) -> Result<image::RgbImage, DedupError> {
    image::load_from_memory(bytes)
        .map(|img| img.to_rgb8())
        .map_err(|e| DedupError::Decode(e.to_string()))
}

/// True iff both images decode to the same dimensions and pixel values.
pub fn exact_duplicate(a: &[u8], b: &[u8]) -> Result<bool, DedupError> {
    let (a, b) = (decode_rgb8(a)?, decode_rgb8(b)?);
    Ok(a.dimensions() == b.dimensions() && a.as_raw() == b.as_raw())
}

/// SHA-256 over the decoded pixel matrix (dimensions included), so two
/// encodings of the same pixels share a digest.
pub fn pixel_checksum(bytes: &[u8]) -> Result<String, DedupError> {
    let img = decode_rgb8(bytes)?;
    Ok(pixel_digest(&img))
}

fn pixel_digest(img: &image::RgbImage) -> String {
    let mut h = Sha256::new();
    h.update(img.width().to_le_bytes());
    h.update(img.height().to_le_bytes());
    h.update(img.as_raw());
    hex::encode(h.finalize())
}

pub fn perceptual_hash(bytes: &[u8]) -> Result<PerceptualHash, DedupError> {
    Ok(dhash_rgb8(&decode_rgb8(bytes)?))
}

pub fn dhash_rgb8(img: &image::RgbImage) -> PerceptualHash {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let luma: Vec<u32> = img
        .as_raw()
        .chunks_exact(3)
        .map(|p| (299 * u32::from(p[0]) + 587 * u32::from(p[1]) + 114 * u32::from(p[2])) / 1000)
        .collect();
    let span = |i: usize, n: usize, cells: usize| {
        let lo = i * n / cells;
        let hi = ((i + 1) * n / cells).max(lo + 1);
        (lo, hi)
    };
    let mut grid = [[0u32; 9]; 8];
    for (cy, row) in grid.iter_mut().enumerate() {
        let (y0, y1) = span(cy, h, 8);
        for (cx, cell) in row.iter_mut().enumerate() {
            let (x0, x1) = span(cx, w, 9);
            let mut sum = 0u64;
            for y in y0..y1 {
                for x in x0..x1 {
                    sum += u64::from(luma[y * w + x]);
                }
            }
            *cell = (sum / ((y1 - y0) * (x1 - x0)) as u64) as u32;
        }
    }
    let mut bits = 0u64;
    for row in &grid {
        for cx in 0..8 {
            bits = (bits << 1) | u64::from(row[cx] < row[cx + 1]);
        }
    }
    PerceptualHash {
        bits,
        algorithm_tag: DHASH_TAG.to_string(),
    }
}

/// One downloaded image taking part in a scan.
#[derive(Debug, Clone)]
pub struct DedupItem {
    pub id: String,
    /// Search-result position; lower is preferred as representative.
    pub rank: u32,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DedupReason {
    Exact,
    Perceptual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupCluster {
    pub representative: String,
    pub members: Vec<String>,
    pub reason: DedupReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupOutcome {
    pub clusters: Vec<DedupCluster>,
    pub kept: BTreeSet<String>,
    /// Ids marked as duplicates of some kept representative.
    pub duplicates: BTreeSet<String>,
    /// Items that failed to decode; neither kept nor duplicate.
    pub quarantined: Vec<(String, String)>,
}

/// Representative order: lowest rank, then lexicographically smallest id.
fn preferred<'a>(a: (&'a str, u32), b: (&'a str, u32)) -> (&'a str, u32) {
    if (b.1, b.0) < (a.1, a.0) {
        b
    } else {
        a
    }
}

/// Hashed view of one item after decoding.
#[derive(Debug, Clone)]
pub struct HashedItem {
    pub id: String,
    pub rank: u32,
    pub pixel_checksum: String,
    pub hash: PerceptualHash,
}

/// Decodes and hashes `items`; undecodable ones are returned separately.
pub fn hash_items(items: &[DedupItem]) -> (Vec<HashedItem>, Vec<(String, String)>) {
    let mut ok = Vec::with_capacity(items.len());
    let mut bad = Vec::new();
    for it in items {
        match decode_rgb8(&it.bytes) {
            Ok(img) => ok.push(HashedItem {
                id: it.id.clone(),
                rank: it.rank,
                pixel_checksum: pixel_digest(&img),
                hash: dhash_rgb8(&img),
            }),
            Err(e) => bad.push((it.id.clone(), e.to_string())),
        }
    }
    (ok, bad)
}

pub fn dedup_scan(items: &[DedupItem], threshold: u32) -> Result<DedupOutcome, DedupError> {
    if threshold > 64 {
        return Err(DedupError::Threshold(threshold));
    }
    let (hashed, quarantined) = hash_items(items);
    let mut out = cluster_hashed(&hashed, threshold)?;
    out.quarantined = quarantined;
    Ok(out)
}

/// Exact pass (pixel checksum groups), then single-linkage clustering of
/// the exact-pass representatives at Hamming distance ≤ `threshold`.
pub fn cluster_hashed(items: &[HashedItem], threshold: u32) -> Result<DedupOutcome, DedupError> {
    if threshold > 64 {
        return Err(DedupError::Threshold(threshold));
    }
    let mut out = DedupOutcome::default();

    // Exact pass.
    let mut groups: BTreeMap<&str, Vec<&HashedItem>> = BTreeMap::new();
    for it in items {
        groups.entry(it.pixel_checksum.as_str()).or_default().push(it);
    }
    let mut survivors: Vec<&HashedItem> = Vec::with_capacity(groups.len());
    for members in groups.values() {
        let rep = members
            .iter()
            .min_by(|a, b| (a.rank, &a.id).cmp(&(b.rank, &b.id)))
            .expect("non-empty group");
        if members.len() > 1 {
            let mut ids: Vec<String> = members.iter().map(|m| m.id.clone()).collect();
            ids.sort();
            for m in members.iter().filter(|m| m.id != rep.id) {
                out.duplicates.insert(m.id.clone());
            }
            out.clusters.push(DedupCluster {
                representative: rep.id.clone(),
                members: ids,
                reason: DedupReason::Exact,
            });
        }
        survivors.push(rep);
    }
    survivors.sort_by(|a, b| a.id.cmp(&b.id));

    // Perceptual pass: BK-tree range queries feed a union-find.
    let mut tree = BkTree::default();
    for (i, s) in survivors.iter().enumerate() {
        tree.insert(s.hash.bits, i);
    }
    let mut uf = UnionFind::new(survivors.len());
    let mut hits = Vec::new();
    for (i, s) in survivors.iter().enumerate() {
        hits.clear();
        tree.within(s.hash.bits, threshold, &mut hits);
        for &j in &hits {
            if j != i {
                if survivors[j].hash.algorithm_tag != s.hash.algorithm_tag {
                    continue;
                }
                uf.union(i, j);
            }
        }
    }
    let mut components: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..survivors.len() {
        components.entry(uf.find(i)).or_default().push(i);
    }
    let mut perceptual = Vec::new();
    for members in components.values() {
        let rep = members
            .iter()
            .map(|&i| (survivors[i].id.as_str(), survivors[i].rank))
            .reduce(preferred)
            .expect("non-empty component");
        out.kept.insert(rep.0.to_string());
        if members.len() > 1 {
            let mut ids: Vec<String> = members.iter().map(|&i| survivors[i].id.clone()).collect();
            ids.sort();
            for id in ids.iter().filter(|id| id.as_str() != rep.0) {
                out.duplicates.insert(id.clone());
            }
            perceptual.push(DedupCluster {
                representative: rep.0.to_string(),
                members: ids,
                reason: DedupReason::Perceptual,
            });
        }
    }
    perceptual.sort_by(|a, b| a.members.cmp(&b.members));
    out.clusters.extend(perceptual);
    Ok(out)
}

/// Scan items for every record with a stored blob that is not already
/// rejected. Records whose blob cannot be read are returned separately.
pub fn manifest_items(manifest: &Manifest, blobs: &BlobStore) -> (Vec<DedupItem>, Vec<(String, String)>) {
    let mut items = Vec::new();
    let mut unreadable = Vec::new();
    for r in manifest.records.values() {
        if r.curation_status == CurationStatus::Rejected {
            continue;
        }
        let Some(sum) = r.blob_checksum.as_deref() else { continue };
        match blobs.get(sum) {
            Ok(bytes) => items.push(DedupItem {
                id: r.id.clone(),
                rank: r.rank.unwrap_or(u32::MAX),
                bytes,
            }),
            Err(e) => unreadable.push((r.id.clone(), e.to_string())),
        }
    }
    (items, unreadable)
}

/// Rejects every duplicate in `outcome` with reason `duplicate` and drops
/// it from its split. Returns the number of records changed.
pub fn apply_outcome(manifest: &mut Manifest, outcome: &DedupOutcome) -> usize {
    let mut changed = 0;
    for id in &outcome.duplicates {
        let Some(r) = manifest.records.get_mut(id) else { continue };
        if r.curation_status == CurationStatus::Rejected && r.rejection_reason == Some(RejectionReason::Duplicate) {
            continue;
        }
        r.curation_status = CurationStatus::Rejected;
        r.rejection_reason = Some(RejectionReason::Duplicate);
        r.split = None;
        r.version += 1;
        changed += 1;
    }
    changed
}

/// Burkhard-Keller tree over 64-bit hashes under Hamming distance.
#[derive(Debug, Default)]
struct BkTree {
    nodes: Vec<BkNode>,
}

#[derive(Debug)]
struct BkNode {
    bits: u64,
    value: usize,
    children: BTreeMap<u32, usize>,
}

impl BkTree {
    fn insert(&mut self, bits: u64, value: usize) {
        if self.nodes.is_empty() {
            self.nodes.push(BkNode {
                bits,
                value,
                children: BTreeMap::new(),
            });
            return;
        }
        let mut cur = 0;
        loop {
            let d = (self.nodes[cur].bits ^ bits).count_ones();
            match self.nodes[cur].children.get(&d) {
                Some(&next) => cur = next,
                None => {
                    let idx = self.nodes.len();
                    self.nodes.push(BkNode {
                        bits,
                        value,
                        children: BTreeMap::new(),
                    });
                    self.nodes[cur].children.insert(d, idx);
                    return;
                }
            }
        }
    }

    fn within(&self, bits: u64, radius: u32, out: &mut Vec<usize>) {
        if self.nodes.is_empty() {
            return;
        }
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            let d = (node.bits ^ bits).count_ones();
            if d <= radius {
                out.push(node.value);
            }
            let lo = d.saturating_sub(radius);
            let hi = d + radius;
            for (_, &child) in node.children.range(lo..=hi) {
                stack.push(child);
            }
        }
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Smaller root wins so component keys are stable.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}
