use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Manifest, ManifestError, ProviderId, Region, RegionMap, Split};
use crate::taxonomy::ClassId;

/// Classes with geotagged exports, used by the regional holdout protocol.
pub const GEO_CLASSES: [ClassId; 3] = [ClassId::AnimalOnRoad, ClassId::Flooding, ClassId::Snow];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.70,
            val: 0.20,
            test: 0.10,
        }
    }
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self, ManifestError> {
        let r = SplitRatios { train, val, test };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        let sum = self.train + self.val + self.test;
        let finite = [self.train, self.val, self.test]
            .iter()
            .all(|x| x.is_finite() && *x >= 0.0);
        if !finite || (sum - 1.0).abs() > 1e-9 {
            return Err(ManifestError::RatiosNotNormalized(sum));
        }
        Ok(())
    }

    fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }
}

/// Largest-remainder apportionment of `n` items; every share is within one
/// item of `n * ratio`. Ties go to the earlier slot.
pub(crate) fn apportion(n: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, e) in counts.iter_mut().zip(&exact) {
        *c = e.floor() as usize;
    }
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &slot in order.iter().take(n.saturating_sub(assigned)) {
        counts[slot] += 1;
    }
    counts
}

fn group_rng(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Shuffles `ids` (sorted first, so input order is irrelevant) and deals
/// them into splits according to `ratios`.
fn deal(
    mut ids: Vec<String>,
    ratios: &[f64; 3],
    rng: &mut ChaCha8Rng,
    out: &mut BTreeMap<String, Split>,
) {
    ids.sort();
    ids.shuffle(rng);
    let counts = apportion(ids.len(), ratios);
    let mut it = ids.into_iter();
    for (split, n) in Split::ALL.iter().zip(counts) {
        for id in it.by_ref().take(n) {
            out.insert(id, *split);
        }
    }
}

/// Per-class stratified split of the accepted records.
pub fn assign_splits(
    manifest: &Manifest,
    ratios: SplitRatios,
    seed: u64,
) -> Result<Manifest, ManifestError> {
    ratios.validate()?;
    let mut by_class: BTreeMap<ClassId, Vec<String>> = BTreeMap::new();
    for r in manifest.accepted() {
        by_class.entry(r.label).or_default().push(r.id.clone());
    }
    if by_class.is_empty() {
        return Err(ManifestError::NothingToSplit);
    }
    let mut assignment = BTreeMap::new();
    for (class, ids) in by_class {
        let mut rng = group_rng(seed, class.index() as u64);
        deal(ids, &ratios.as_array(), &mut rng, &mut assignment);
    }
    let mut out = manifest.clone();
    for r in out.records.values_mut() {
        r.split = assignment.get(&r.id).copied();
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GeoSplitSummary {
    /// Records per split, by class.
    pub counts: BTreeMap<ClassId, [usize; 3]>,
    /// Geograph-sourced records per split (the regional pool).
    pub geograph: [usize; 3],
    /// Achieved percentages of the Geograph pool.
    pub geograph_pct: [f64; 3],
    pub warnings: Vec<String>,
}

impl GeoSplitSummary {
    pub fn split_total(&self, split: Split) -> usize {
        let i = split as usize;
        self.counts.values().map(|c| c[i]).sum()
    }
}

const GEO_TRAIN_VAL: [f64; 3] = [72.5 / 95.0, 22.5 / 95.0, 0.0];
const HARVEST_TRAIN_VAL: [f64; 3] = [0.75, 0.25, 0.0];

/// Regional holdout: Geograph records located in Wales form the test set;
/// other Geograph records go to train/val at 72.5 : 22.5; everything
/// else (harvested positives, BDD/Cityscapes negatives) goes 75/25 to
/// train/val and never to test. Only `classes` plus negatives take part.
pub fn geo_stratify(
    manifest: &Manifest,
    regions: &RegionMap,
    classes: &[ClassId],
    seed: u64,
) -> Result<(Manifest, GeoSplitSummary), ManifestError> {
    #[derive(PartialEq, Eq, PartialOrd, Ord)]
    enum Pool {
        Geograph,
        Harvested,
    }

    let mut summary = GeoSplitSummary::default();
    let mut assignment: BTreeMap<String, Split> = BTreeMap::new();
    let mut pools: BTreeMap<(ClassId, Pool), Vec<String>> = BTreeMap::new();

    for r in manifest.accepted() {
        if !(r.label.is_negative() || classes.contains(&r.label)) {
            continue;
        }
        if r.provider != ProviderId::Geograph {
            pools.entry((r.label, Pool::Harvested)).or_default().push(r.id.clone());
            continue;
        }
        match &r.geotag {
            None => {
                summary
                    .warnings
                    .push(format!("{}: geograph record without geotag, routed to train", r.id));
                assignment.insert(r.id.clone(), Split::Train);
            }
            Some(tag) => {
                if regions.resolve(tag) == Region::Wales {
                    assignment.insert(r.id.clone(), Split::Test);
                } else {
                    pools.entry((r.label, Pool::Geograph)).or_default().push(r.id.clone());
                }
            }
        }
    }
    if assignment.is_empty() && pools.is_empty() {
        return Err(ManifestError::NothingToSplit);
    }

    for ((class, pool), ids) in pools {
        let (ratios, salt) = match pool {
            Pool::Geograph => (&GEO_TRAIN_VAL, 2 * class.index() as u64),
            Pool::Harvested => (&HARVEST_TRAIN_VAL, 2 * class.index() as u64 + 1),
        };
        let mut rng = group_rng(seed, salt);
        deal(ids, ratios, &mut rng, &mut assignment);
    }

    let mut out = manifest.clone();
    for r in out.records.values_mut() {
        r.split = assignment.get(&r.id).copied();
        if let Some(split) = r.split {
            summary.counts.entry(r.label).or_insert([0; 3])[split as usize] += 1;
            if r.provider == ProviderId::Geograph {
                summary.geograph[split as usize] += 1;
            }
        }
    }
    let geo_total: usize = summary.geograph.iter().sum();
    if geo_total > 0 {
        for i in 0..3 {
            summary.geograph_pct[i] = 100.0 * summary.geograph[i] as f64 / geo_total as f64;
        }
    }
    Ok((out, summary))
}
