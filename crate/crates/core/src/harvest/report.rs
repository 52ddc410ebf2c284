use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::manifest::{ClassCountTable, GatheringType, Manifest, ProviderId};
use crate::querygen::Language;
use crate::taxonomy::ClassId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ReportKey {
    pub class: ClassId,
    pub provider: ProviderId,
    /// `None` for records without a query (e.g. Geograph exports).
    pub language: Option<Language>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportCell {
    pub retrieved: u64,
    pub retained: u64,
}

impl std::ops::AddAssign for ReportCell {
    fn add_assign(&mut self, o: ReportCell) {
        self.retrieved += o.retrieved;
        self.retained += o.retained;
    }
}

/// Retrieved (harvested) and retained (accepted) images per class,
/// provider and query language.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HarvestReport {
    pub cells: BTreeMap<ReportKey, ReportCell>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRow {
    #[serde(flatten)]
    pub key: ReportKey,
    #[serde(flatten)]
    pub cell: ReportCell,
}

impl HarvestReport {
    pub fn rows(&self) -> Vec<ReportRow> {
        self.cells
            .iter()
            .map(|(k, c)| ReportRow { key: *k, cell: *c })
            .collect()
    }

    pub fn total(&self) -> ReportCell {
        let mut t = ReportCell::default();
        for c in self.cells.values() {
            t += *c;
        }
        t
    }

    pub fn class_total(&self, class: ClassId) -> ReportCell {
        self.sum(|k| k.class == class)
    }

    pub fn provider_total(&self, provider: ProviderId) -> ReportCell {
        self.sum(|k| k.provider == provider)
    }

    pub fn sum(&self, pred: impl Fn(&ReportKey) -> bool) -> ReportCell {
        let mut t = ReportCell::default();
        for (k, c) in &self.cells {
            if pred(k) {
                t += *c;
            }
        }
        t
    }

    /// Retained counts folded into English / non-English / Geograph columns.
    pub fn gathering_table(&self) -> ClassCountTable {
        let mut table = ClassCountTable::default();
        for (k, c) in &self.cells {
            let g = match (k.provider, k.language) {
                (ProviderId::Geograph, _) => GatheringType::Geograph,
                (_, Some(Language::En) | None) => GatheringType::English,
                _ => GatheringType::NonEnglish,
            };
            table.add(k.class, g, c.retained);
        }
        table
    }
}

impl fmt::Display for HarvestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<16} {:<14} {:<5} {:>9} {:>9}", "class", "provider", "lang", "retrieved", "retained")?;
        for (k, c) in &self.cells {
            writeln!(
                f,
                "{:<16} {:<14} {:<5} {:>9} {:>9}",
                k.class.as_str(),
                k.provider.as_str(),
                k.language.map(Language::as_str).unwrap_or("-"),
                c.retrieved,
                c.retained
            )?;
        }
        let t = self.total();
        write!(f, "{:<16} {:<14} {:<5} {:>9} {:>9}", "total", "", "", t.retrieved, t.retained)
    }
}

/// Counts every search-provider record; accepted ones are also retained.
pub fn harvest_report(manifest: &Manifest) -> HarvestReport {
    let mut report = HarvestReport::default();
    for r in manifest.records.values() {
        if !r.provider.is_search_provider() {
            continue;
        }
        let key = ReportKey {
            class: r.label,
            provider: r.provider,
            language: r.language(),
        };
        let cell = report.cells.entry(key).or_default();
        cell.retrieved += 1;
        cell.retained += u64::from(r.is_accepted());
    }
    report
}
