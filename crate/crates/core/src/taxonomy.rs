//! Incident classes and their (cause, form) grouping tree.
//!
//! The taxonomy is loaded from a TOML document so that deeper or
//! re-grouped trees can be introduced without code changes. The shipped
//! default lives in `config/taxonomy.toml`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Canonical class identifier.
///
/// Ordering of [`ClassId::ALL`] is the model's output order and the row
/// order used when rendering confusion matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassId {
    AnimalOnRoad,
    Collapse,
    VehicleCrash,
    Fire,
    Flooding,
    Landslide,
    Treefall,
    Snow,
    Negative,
}

impl ClassId {
    pub const ALL: [ClassId; 9] = [
        ClassId::AnimalOnRoad,
        ClassId::Collapse,
        ClassId::VehicleCrash,
        ClassId::Fire,
        ClassId::Flooding,
        ClassId::Landslide,
        ClassId::Treefall,
        ClassId::Snow,
        ClassId::Negative,
    ];

    pub const INCIDENTS: [ClassId; 8] = [
        ClassId::AnimalOnRoad,
        ClassId::Collapse,
        ClassId::VehicleCrash,
        ClassId::Fire,
        ClassId::Flooding,
        ClassId::Landslide,
        ClassId::Treefall,
        ClassId::Snow,
    ];

    pub const COUNT: usize = 9;

    pub fn as_str(self) -> &'static str {
        match self {
            ClassId::AnimalOnRoad => "animal_on_road",
            ClassId::Collapse => "collapse",
            ClassId::VehicleCrash => "vehicle_crash",
            ClassId::Fire => "fire",
            ClassId::Flooding => "flooding",
            ClassId::Landslide => "landslide",
            ClassId::Treefall => "treefall",
            ClassId::Snow => "snow",
            ClassId::Negative => "negative",
        }
    }

    /// Position in [`ClassId::ALL`].
    pub fn index(self) -> usize {
        ClassId::ALL.iter().position(|c| *c == self).expect("listed")
    }

    pub fn from_index(index: usize) -> Option<ClassId> {
        ClassId::ALL.get(index).copied()
    }

    pub fn is_negative(self) -> bool {
        self == ClassId::Negative
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown class id `{0}`")]
pub struct UnknownClass(pub String);

impl FromStr for ClassId {
    type Err = UnknownClass;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ClassId::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| UnknownClass(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cause {
    ManMade,
    Natural,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Form {
    Object,
    Cover,
}

/// Position of a class in the two binary axes of the tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Grouping {
    pub cause: Cause,
    pub form: Form,
}

impl Grouping {
    pub const fn new(cause: Cause, form: Form) -> Self {
        Grouping { cause, form }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncidentClass {
    pub id: ClassId,
    pub display_name: String,
    pub definition: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaxonomyError {
    #[error("taxonomy document does not parse: {0}")]
    Parse(String),
    #[error("unknown class id `{0}`")]
    UnknownClass(String),
    #[error("duplicate-assignment: class `{0}` appears in more than one group")]
    DuplicateAssignment(ClassId),
    #[error("duplicate class definition for `{0}`")]
    DuplicateDefinition(ClassId),
    #[error("missing-class: class `{0}` is not assigned to any group")]
    MissingClass(ClassId),
    #[error("duplicate group ({0:?})")]
    DuplicateGroup(Grouping),
    #[error("`negative` cannot be placed in the incident tree")]
    NegativeGrouped,
    #[error("class `{0}` has no grouping")]
    NoGrouping(ClassId),
}

/// On-disk shape of the taxonomy document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TaxonomyDocument {
    root: String,
    #[serde(default)]
    classes: Vec<ClassEntry>,
    groups: Vec<GroupEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ClassEntry {
    id: String,
    display_name: String,
    #[serde(default)]
    definition: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GroupEntry {
    cause: Cause,
    form: Form,
    classes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    pub root: String,
    pub classes: BTreeMap<ClassId, IncidentClass>,
    pub groups: BTreeMap<Grouping, Vec<ClassId>>,
}

pub const DEFAULT_TAXONOMY: &str = include_str!("../config/taxonomy.toml");

impl Taxonomy {
    pub fn load(document: &str) -> Result<Taxonomy, TaxonomyError> {
        let doc: TaxonomyDocument =
            toml::from_str(document).map_err(|e| TaxonomyError::Parse(e.to_string()))?;
        Self::from_document(doc)
    }

    /// The shipped default tree.
    pub fn default_tree() -> Taxonomy {
        Self::load(DEFAULT_TAXONOMY).expect("shipped taxonomy is valid")
    }

    fn from_document(doc: TaxonomyDocument) -> Result<Taxonomy, TaxonomyError> {
        let parse = |s: &str| {
            s.parse::<ClassId>()
                .map_err(|_| TaxonomyError::UnknownClass(s.to_string()))
        };

        let mut classes = BTreeMap::new();
        for entry in &doc.classes {
            let id = parse(&entry.id)?;
            let class = IncidentClass {
                id,
                display_name: entry.display_name.clone(),
                definition: entry.definition.clone(),
            };
            if classes.insert(id, class).is_some() {
                return Err(TaxonomyError::DuplicateDefinition(id));
            }
        }

        let mut groups: BTreeMap<Grouping, Vec<ClassId>> = BTreeMap::new();
        let mut seen = BTreeMap::new();
        for group in &doc.groups {
            let key = Grouping::new(group.cause, group.form);
            if groups.contains_key(&key) {
                return Err(TaxonomyError::DuplicateGroup(key));
            }
            let mut members = Vec::with_capacity(group.classes.len());
            for raw in &group.classes {
                let id = parse(raw)?;
                if id.is_negative() {
                    return Err(TaxonomyError::NegativeGrouped);
                }
                if seen.insert(id, key).is_some() {
                    return Err(TaxonomyError::DuplicateAssignment(id));
                }
                members.push(id);
            }
            groups.insert(key, members);
        }

        for id in ClassId::INCIDENTS {
            if !seen.contains_key(&id) {
                return Err(TaxonomyError::MissingClass(id));
            }
        }

        // Classes without an explicit entry still get a display name.
        for id in ClassId::ALL {
            classes.entry(id).or_insert_with(|| IncidentClass {
                id,
                display_name: id.as_str().replace('_', " "),
                definition: String::new(),
            });
        }

        Ok(Taxonomy {
            root: doc.root,
            classes,
            groups,
        })
    }

    pub fn grouping_of(&self, class: ClassId) -> Result<Grouping, TaxonomyError> {
        if class.is_negative() {
            return Err(TaxonomyError::NoGrouping(class));
        }
        self.groups
            .iter()
            .find(|(_, members)| members.contains(&class))
            .map(|(g, _)| *g)
            .ok_or(TaxonomyError::NoGrouping(class))
    }

    /// Looks a class up by its textual id.
    pub fn class(&self, id: &str) -> Result<&IncidentClass, TaxonomyError> {
        let id = id
            .parse::<ClassId>()
            .map_err(|_| TaxonomyError::UnknownClass(id.to_string()))?;
        self.classes.get(&id).ok_or(TaxonomyError::UnknownClass(id.to_string()))
    }

    pub fn to_toml(&self) -> String {
        let doc = TaxonomyDocument {
            root: self.root.clone(),
            classes: self
                .classes
                .values()
                .map(|c| ClassEntry {
                    id: c.id.as_str().to_string(),
                    display_name: c.display_name.clone(),
                    definition: c.definition.clone(),
                })
                .collect(),
            groups: self
                .groups
                .iter()
                .map(|(g, members)| GroupEntry {
                    cause: g.cause,
                    form: g.form,
                    classes: members.iter().map(|c| c.as_str().to_string()).collect(),
                })
                .collect(),
        };
        toml::to_string_pretty(&doc).expect("taxonomy serializes")
    }
}

/// Free-function form of [`Taxonomy::load`].
pub fn load_taxonomy(document: &str) -> Result<Taxonomy, TaxonomyError> {
    Taxonomy::load(document)
}

pub fn grouping_of(taxonomy: &Taxonomy, class: ClassId) -> Result<Grouping, TaxonomyError> {
    taxonomy.grouping_of(class)
}
