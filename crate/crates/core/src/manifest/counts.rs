use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{ImageRecord, Manifest, ProviderId};
use crate::querygen::Language;
use crate::taxonomy::ClassId;

/// How a positive image entered the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatheringType {
    English,
    NonEnglish,
    Geograph,
}

impl GatheringType {
    pub const ALL: [GatheringType; 3] = [
        GatheringType::English,
        GatheringType::NonEnglish,
        GatheringType::Geograph,
    ];

    /// Geograph exports first, then query language. Records with no query
    /// count as English.
    pub fn of(record: &ImageRecord) -> Option<GatheringType> {
        match record.provider {
            ProviderId::Geograph => Some(GatheringType::Geograph),
            ProviderId::Bdd | ProviderId::Cityscapes => None,
            _ => match record.language() {
                Some(Language::En) | None => Some(GatheringType::English),
                Some(_) => Some(GatheringType::NonEnglish),
            },
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Accepted positive images by class and gathering type.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCountTable {
    pub rows: BTreeMap<ClassId, [u64; 3]>,
    /// Accepted negatives (not part of the table body).
    pub negatives: u64,
}

impl ClassCountTable {
    pub fn add(&mut self, class: ClassId, gathering: GatheringType, n: u64) {
        if class.is_negative() {
            self.negatives += n;
            return;
        }
        self.rows.entry(class).or_insert([0; 3])[gathering.index()] += n;
    }

    pub fn cell(&self, class: ClassId, gathering: GatheringType) -> u64 {
        self.rows.get(&class).map_or(0, |r| r[gathering.index()])
    }

    pub fn row(&self, class: ClassId) -> [u64; 3] {
        self.rows.get(&class).copied().unwrap_or([0; 3])
    }

    pub fn row_total(&self, class: ClassId) -> u64 {
        self.row(class).iter().sum()
    }

    pub fn column_total(&self, gathering: GatheringType) -> u64 {
        self.rows.values().map(|r| r[gathering.index()]).sum()
    }

    pub fn grand_total(&self) -> u64 {
        self.rows.values().flat_map(|r| r.iter()).sum()
    }

    /// Row totals and column totals must both sum to the grand total.
    pub fn is_consistent(&self) -> bool {
        let by_rows: u64 = ClassId::INCIDENTS.iter().map(|c| self.row_total(*c)).sum();
        let by_cols: u64 = GatheringType::ALL.iter().map(|g| self.column_total(*g)).sum();
        by_rows == by_cols && by_rows == self.grand_total()
    }
}

impl fmt::Display for ClassCountTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<16} {:>9} {:>12} {:>9} {:>9}",
            "incident", "english", "non-english", "geograph", "total"
        )?;
        for class in ClassId::INCIDENTS {
            let r = self.row(class);
            writeln!(
                f,
                "{:<16} {:>9} {:>12} {:>9} {:>9}",
                class.as_str(),
                r[0],
                r[1],
                r[2],
                self.row_total(class)
            )?;
        }
        write!(
            f,
            "{:<16} {:>9} {:>12} {:>9} {:>9}",
            "total",
            self.column_total(GatheringType::English),
            self.column_total(GatheringType::NonEnglish),
            self.column_total(GatheringType::Geograph),
            self.grand_total()
        )
    }
}

pub fn class_counts(manifest: &Manifest) -> ClassCountTable {
    let mut table = ClassCountTable::default();
    for r in manifest.accepted() {
        if r.label.is_negative() {
            table.negatives += 1;
            continue;
        }
        if let Some(g) = GatheringType::of(r) {
            table.add(r.label, g, 1);
        }
    }
    table
}
