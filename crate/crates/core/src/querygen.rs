//! Search query planning: pairwise synonym expansion and term-level
//! translation through a lexicon file.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::ClassId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    En,
    Nl,
    Hr,
    Fa,
    Zh,
    Sk,
}

impl Language {
    pub const ALL: [Language; 6] = [
        Language::En,
        Language::Nl,
        Language::Hr,
        Language::Fa,
        Language::Zh,
        Language::Sk,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Language::En => "en",
            Language::Nl => "nl",
            Language::Hr => "hr",
            Language::Fa => "fa",
            Language::Zh => "zh",
            Language::Sk => "sk",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Language {
    type Err = QueryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Language::ALL
            .iter()
            .copied()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| QueryError::UnknownLanguage(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetRole {
    Context,
    Incident,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynonymSet {
    pub role: SetRole,
    pub terms: Vec<String>,
}

impl SynonymSet {
    pub fn new<I, S>(role: SetRole, terms: I) -> Result<Self, QueryError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set = SynonymSet {
            role,
            terms: terms.into_iter().map(Into::into).collect(),
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), QueryError> {
        if self.terms.is_empty() {
            return Err(QueryError::EmptySet(self.role));
        }
        let mut seen = BTreeSet::new();
        for t in &self.terms {
            if !seen.insert(t.as_str()) {
                return Err(QueryError::DuplicateTerm(t.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct QueryOrigin {
    pub context: String,
    pub incident: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuerySpec {
    pub text: String,
    pub language: Language,
    pub class_id: ClassId,
    /// English terms the query was built from.
    pub origin: QueryOrigin,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("{0:?} synonym set is empty")]
    EmptySet(SetRole),
    #[error("term `{0}` repeated within a synonym set")]
    DuplicateTerm(String),
    #[error("lexicon is empty")]
    EmptyLexicon,
    #[error("unknown language `{0}`")]
    UnknownLanguage(String),
    #[error("lexicon does not parse: {0}")]
    Parse(String),
    #[error("query plan does not parse: {0}")]
    PlanParse(String),
    #[error("query plan has no entry for class `{0}`")]
    ClassNotPlanned(ClassId),
}

/// Cartesian product of the two sets, context-major, joined with a space.
pub fn expand_pairs(
    context: &SynonymSet,
    incident: &SynonymSet,
    class_id: ClassId,
) -> Result<Vec<QuerySpec>, QueryError> {
    context.validate()?;
    incident.validate()?;
    let mut out = Vec::with_capacity(context.terms.len() * incident.terms.len());
    for c in &context.terms {
        for i in &incident.terms {
            out.push(QuerySpec {
                text: format!("{c} {i}"),
                language: Language::En,
                class_id,
                origin: QueryOrigin {
                    context: c.clone(),
                    incident: i.clone(),
                },
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WordOrder {
    #[default]
    ContextFirst,
    IncidentFirst,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageLexicon {
    #[serde(default)]
    pub word_order: WordOrder,
    /// Join string between the two translated terms. Defaults to one space.
    #[serde(default)]
    pub separator: Option<String>,
    #[serde(default)]
    pub terms: BTreeMap<String, String>,
}

/// Per-language term maps, keyed by target language.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Lexicon {
    pub languages: BTreeMap<Language, LanguageLexicon>,
}

pub const DEFAULT_LEXICON: &str = include_str!("../config/lexicon.toml");

impl Lexicon {
    pub fn parse(document: &str) -> Result<Lexicon, QueryError> {
        toml::from_str(document).map_err(|e| QueryError::Parse(e.to_string()))
    }

    pub fn is_empty(&self) -> bool {
        self.languages.values().all(|l| l.terms.is_empty())
    }

    pub fn insert(&mut self, language: Language, english: &str, translated: &str) {
        self.languages
            .entry(language)
            .or_default()
            .terms
            .insert(english.to_string(), translated.to_string());
    }
}

/// A (query, language) pair that could not be translated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslationGap {
    pub query: String,
    pub language: Language,
    pub missing_terms: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Translation {
    pub queries: Vec<QuerySpec>,
    pub gaps: Vec<TranslationGap>,
}

/// Translates each English query into every non-English language of the
/// lexicon. Pairs with an untranslatable term are skipped and reported.
pub fn translate_queries(queries: &[QuerySpec], lexicon: &Lexicon) -> Result<Translation, QueryError> {
    if lexicon.is_empty() {
        return Err(QueryError::EmptyLexicon);
    }
    let mut out = Translation::default();
    for q in queries {
        for (&language, lex) in &lexicon.languages {
            if language == Language::En {
                continue;
            }
            let ctx = lex.terms.get(&q.origin.context);
            let inc = lex.terms.get(&q.origin.incident);
            match (ctx, inc) {
                (Some(c), Some(i)) => {
                    let sep = lex.separator.as_deref().unwrap_or(" ");
                    let text = match lex.word_order {
                        WordOrder::ContextFirst => format!("{c}{sep}{i}"),
                        WordOrder::IncidentFirst => format!("{i}{sep}{c}"),
                    };
                    out.queries.push(QuerySpec {
                        text,
                        language,
                        class_id: q.class_id,
                        origin: q.origin.clone(),
                    });
                }
                _ => {
                    let mut missing = Vec::new();
                    if ctx.is_none() {
                        missing.push(q.origin.context.clone());
                    }
                    if inc.is_none() {
                        missing.push(q.origin.incident.clone());
                    }
                    out.gaps.push(TranslationGap {
                        query: q.text.clone(),
                        language,
                        missing_terms: missing,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Per-class synonym sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub context: Vec<String>,
    pub incident: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QueryPlan {
    pub classes: BTreeMap<ClassId, PlanEntry>,
}

pub const DEFAULT_QUERY_PLAN: &str = include_str!("../config/query_plan.toml");

impl QueryPlan {
    pub fn parse(document: &str) -> Result<QueryPlan, QueryError> {
        toml::from_str(document).map_err(|e| QueryError::PlanParse(e.to_string()))
    }

    pub fn english_queries(&self, class: ClassId) -> Result<Vec<QuerySpec>, QueryError> {
        let entry = self
            .classes
            .get(&class)
            .ok_or(QueryError::ClassNotPlanned(class))?;
        let context = SynonymSet::new(SetRole::Context, entry.context.iter().cloned())?;
        let incident = SynonymSet::new(SetRole::Incident, entry.incident.iter().cloned())?;
        expand_pairs(&context, &incident, class)
    }

    /// English queries for `class` plus translations into `languages`.
    pub fn plan(
        &self,
        class: ClassId,
        languages: &[Language],
        lexicon: &Lexicon,
    ) -> Result<Translation, QueryError> {
        let english = self.english_queries(class)?;
        let mut out = Translation::default();
        if languages.contains(&Language::En) {
            out.queries.extend(english.iter().cloned());
        }
        let wanted: Lexicon = Lexicon {
            languages: lexicon
                .languages
                .iter()
                .filter(|(l, _)| languages.contains(l))
                .map(|(l, v)| (*l, v.clone()))
                .collect(),
        };
        if !wanted.is_empty() {
            let t = translate_queries(&english, &wanted)?;
            out.queries.extend(t.queries);
            out.gaps.extend(t.gaps);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(role: SetRole, terms: &[&str]) -> SynonymSet {
        SynonymSet::new(role, terms.iter().copied()).unwrap()
    }

    #[test]
    fn road_street_by_snow_blizzard() {
        let q = expand_pairs(
            &set(SetRole::Context, &["road", "street"]),
            &set(SetRole::Incident, &["snow", "blizzard"]),
            ClassId::Snow,
        )
        .unwrap();
        let texts: Vec<_> = q.iter().map(|q| q.text.as_str()).collect();
        assert_eq!(texts, ["road snow", "road blizzard", "street snow", "street blizzard"]);
        assert!(q.iter().all(|q| q.language == Language::En && q.class_id == ClassId::Snow));
    }

    #[test]
    fn singleton_product() {
        let q = expand_pairs(
            &set(SetRole::Context, &["road"]),
            &set(SetRole::Incident, &["fire"]),
            ClassId::Fire,
        )
        .unwrap();
        assert_eq!(q.len(), 1);
        assert_eq!(q[0].text, "road fire");
    }

    #[test]
    fn three_by_four_gives_twelve_distinct_origins() {
        let q = expand_pairs(
            &set(SetRole::Context, &["road", "street", "highway"]),
            &set(SetRole::Incident, &["flood", "flooding", "inundation", "high water"]),
            ClassId::Flooding,
        )
        .unwrap();
        assert_eq!(q.len(), 12);
        let origins: BTreeSet<_> = q.iter().map(|q| q.origin.clone()).collect();
        assert_eq!(origins.len(), 12);
    }

    #[test]
    fn empty_set_is_an_error() {
        assert_eq!(
            SynonymSet::new(SetRole::Context, Vec::<String>::new()),
            Err(QueryError::EmptySet(SetRole::Context))
        );
        let empty = SynonymSet {
            role: SetRole::Incident,
            terms: vec![],
        };
        assert!(expand_pairs(&set(SetRole::Context, &["road"]), &empty, ClassId::Fire).is_err());
    }

    #[test]
    fn dutch_substitution() {
        let q = expand_pairs(
            &set(SetRole::Context, &["road"]),
            &set(SetRole::Incident, &["snow"]),
            ClassId::Snow,
        )
        .unwrap();
        let mut lex = Lexicon::default();
        lex.insert(Language::Nl, "road", "weg");
        lex.insert(Language::Nl, "snow", "sneeuw");
        let t = translate_queries(&q, &lex).unwrap();
        assert_eq!(t.queries.len(), 1);
        assert_eq!(t.queries[0].text, "weg sneeuw");
        assert_eq!(t.queries[0].language, Language::Nl);
        assert_eq!(t.queries[0].origin, q[0].origin);
        assert!(t.gaps.is_empty());
    }

    #[test]
    fn empty_lexicon_rejected() {
        assert_eq!(
            translate_queries(&[], &Lexicon::default()),
            Err(QueryError::EmptyLexicon)
        );
    }

    #[test]
    fn incident_first_word_order() {
        let q = expand_pairs(
            &set(SetRole::Context, &["road"]),
            &set(SetRole::Incident, &["snow"]),
            ClassId::Snow,
        )
        .unwrap();
        let mut lex = Lexicon::default();
        lex.insert(Language::Zh, "road", "道路");
        lex.insert(Language::Zh, "snow", "积雪");
        let zh = lex.languages.get_mut(&Language::Zh).unwrap();
        zh.word_order = WordOrder::IncidentFirst;
        zh.separator = Some(String::new());
        let t = translate_queries(&q, &lex).unwrap();
        assert_eq!(t.queries[0].text, "积雪道路");
    }

    #[test]
    fn partial_coverage_counts_only_covered_pairs() {
        // 118 English queries: 2 context terms x 59 incident terms.
        let context = ["road", "street"];
        let incidents: Vec<String> = (0..59).map(|i| format!("term{i}")).collect();
        let q = expand_pairs(
            &set(SetRole::Context, &context),
            &SynonymSet::new(SetRole::Incident, incidents.clone()).unwrap(),
            ClassId::Snow,
        )
        .unwrap();
        assert_eq!(q.len(), 118);

        // Each language covers "road" and a language-specific prefix of the
        // incident terms; "street" only in nl.
        let langs = [Language::Nl, Language::Hr, Language::Fa, Language::Zh, Language::Sk];
        let mut lex = Lexicon::default();
        let covered_incidents = [7usize, 5, 3, 2, 4];
        for (l, &k) in langs.iter().zip(&covered_incidents) {
            lex.insert(*l, "road", "x");
            for t in incidents.iter().take(k) {
                lex.insert(*l, t, "y");
            }
        }
        lex.insert(Language::Nl, "street", "straat");

        // Oracle: enumerate (query, language) pairs with both terms present.
        let mut expected = 0;
        for query in &q {
            for l in langs {
                let terms = &lex.languages[&l].terms;
                if terms.contains_key(&query.origin.context) && terms.contains_key(&query.origin.incident) {
                    expected += 1;
                }
            }
        }
        let t = translate_queries(&q, &lex).unwrap();
        assert_eq!(t.queries.len(), expected);
        assert_eq!(expected, 7 * 2 + 5 + 3 + 2 + 4);
        assert_eq!(t.queries.len() + t.gaps.len(), 118 * 5);
        assert!(t.queries.iter().all(|q| q.language != Language::En));
    }

    #[test]
    fn shipped_plan_and_lexicon_parse() {
        let plan = QueryPlan::parse(DEFAULT_QUERY_PLAN).unwrap();
        let lex = Lexicon::parse(DEFAULT_LEXICON).unwrap();
        for class in ClassId::INCIDENTS {
            let en = plan.english_queries(class).unwrap();
            assert!(!en.is_empty());
        }
        let t = plan.plan(ClassId::Snow, &[Language::En, Language::Nl], &lex).unwrap();
        assert!(t.queries.iter().any(|q| q.text == "road snow"));
        assert!(t.queries.iter().any(|q| q.language == Language::Nl));
    }
}
