//! Knowledge base of common compile errors with pre-written fix guidance.
//!
//! The catalog ships as `data/catalog.toml` and can be replaced at runtime
//! with [`Catalog::load`]. Entries are kept in class-id order, which is
//! also the matching order.

use std::collections::HashSet;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::ErrorEntry;

/// Class ids a catalog may define, in matching order.
pub const CLASS_IDS: [&str; 12] = [
    "A1", "A2", "A3", "B1", "B2", "B3", "B4", "B5", "B6", "B7", "C1", "C2",
];

/// Classes whose errors are logical problems caught at compile time.
pub const STATIC_LOGIC_CLASSES: [&str; 2] = ["B3", "C2"];

const BUILTIN: &str = include_str!("../data/catalog.toml");

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("reading catalog {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("catalog is not valid TOML: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unknown catalog class id {0:?}")]
    UnknownClass(String),
    #[error("duplicate catalog class id {0:?}")]
    DuplicateClass(String),
    #[error("catalog entry {0} has no signature patterns")]
    NoPatterns(String),
    #[error("catalog entry {class_id}: field {field} is empty")]
    EmptyField {
        class_id: String,
        field: &'static str,
    },
    #[error("catalog entry {class_id}: pattern {pattern:?} does not compile: {source}")]
    BadPattern {
        class_id: String,
        pattern: String,
        source: regex::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub class_id: String,
    pub description: String,
    pub incorrect_snippet: String,
    pub corrected_snippet: String,
    pub signature_patterns: Vec<String>,
    pub cause: String,
    pub fix_guidance: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogFile {
    #[allow(dead_code)]
    version: u32,
    entry: Vec<CatalogEntry>,
}

#[derive(Debug, Clone)]
struct Compiled {
    entry: CatalogEntry,
    patterns: Vec<Regex>,
}

/// Validated, compiled catalog. Immutable after load.
#[derive(Debug, Clone)]
pub struct Catalog {
    entries: Vec<Compiled>,
}

impl Catalog {
    /// The catalog bundled with the crate.
    pub fn builtin() -> Catalog {
        static BUILTIN_CATALOG: std::sync::OnceLock<Catalog> = std::sync::OnceLock::new();
        BUILTIN_CATALOG
            .get_or_init(|| Catalog::from_toml(BUILTIN).expect("bundled catalog is valid"))
            .clone()
    }

    pub fn load(path: &Path) -> Result<Catalog, CatalogError> {
        let text = std::fs::read_to_string(path).map_err(|source| CatalogError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Catalog::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Catalog, CatalogError> {
        let file: CatalogFile = toml::from_str(text)?;
        let mut seen = HashSet::new();
        let mut entries = Vec::with_capacity(file.entry.len());
        for entry in file.entry {
            let rank = CLASS_IDS
                .iter()
                .position(|c| *c == entry.class_id)
                .ok_or_else(|| CatalogError::UnknownClass(entry.class_id.clone()))?;
            if !seen.insert(entry.class_id.clone()) {
                return Err(CatalogError::DuplicateClass(entry.class_id));
            }
            if entry.signature_patterns.is_empty() {
                return Err(CatalogError::NoPatterns(entry.class_id));
            }
            for (field, value) in [
                ("description", &entry.description),
                ("cause", &entry.cause),
                ("fix_guidance", &entry.fix_guidance),
            ] {
                if value.trim().is_empty() {
                    return Err(CatalogError::EmptyField {
                        class_id: entry.class_id.clone(),
                        field,
                    });
                }
            }
            let patterns = entry
                .signature_patterns
                .iter()
                .map(|p| {
                    Regex::new(p).map_err(|source| CatalogError::BadPattern {
                        class_id: entry.class_id.clone(),
                        pattern: p.clone(),
                        source,
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            entries.push((rank, Compiled { entry, patterns }));
        }
        entries.sort_by_key(|(rank, _)| *rank);
        Ok(Catalog {
            entries: entries.into_iter().map(|(_, c)| c).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &CatalogEntry> {
        self.entries.iter().map(|c| &c.entry)
    }

    pub fn get(&self, class_id: &str) -> Option<&CatalogEntry> {
        self.entries().find(|e| e.class_id == class_id)
    }

    /// First entry whose pattern matches `message`, in class-id order.
    pub fn match_message(&self, message: &str) -> Option<&CatalogEntry> {
        self.entries
            .iter()
            .find(|c| c.patterns.iter().any(|re| re.is_match(message)))
            .map(|c| &c.entry)
    }

    /// Every class whose patterns match `message`. Used to audit overlap.
    pub fn all_matches(&self, message: &str) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|c| c.patterns.iter().any(|re| re.is_match(message)))
            .map(|c| c.entry.class_id.as_str())
            .collect()
    }

    pub fn match_catalog(&self, entry: &ErrorEntry) -> Option<&CatalogEntry> {
        self.match_message(&entry.message)
    }

    /// Deduplicated guidance for all matched classes, in class-id order.
    pub fn guidance_for(&self, entries: &[ErrorEntry]) -> Vec<&CatalogEntry> {
        let hits: HashSet<String> = entries
            .iter()
            .filter_map(|e| {
                e.catalog_class
                    .clone()
                    .or_else(|| self.match_catalog(e).map(|c| c.class_id.clone()))
            })
            .collect();
        self.entries()
            .filter(|e| hits.contains(&e.class_id))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ErrorKind;

    fn entry(msg: &str) -> ErrorEntry {
        ErrorEntry::new(ErrorKind::Syntax, None, msg, None, None)
    }

    #[test]
    fn builtin_has_all_twelve_classes() {
        let cat = Catalog::builtin();
        let ids: Vec<_> = cat.entries().map(|e| e.class_id.as_str()).collect();
        assert_eq!(ids, CLASS_IDS);
    }

    #[test]
    fn matches_table_examples() {
        let cat = Catalog::builtin();
        let class = |m: &str| cat.match_catalog(&entry(m)).map(|c| c.class_id.clone());
        assert_eq!(
            class("Value sgnal is not a member. Did you mean signal?").as_deref(),
            Some("A1")
        );
        assert_eq!(
            class("Reference w not fully initialized.").as_deref(),
            Some("B3")
        );
        assert_eq!(
            class("Detected combinational cycle in a FIRRTL module.").as_deref(),
            Some("C2")
        );
        assert_eq!(
            class("Value asClock is not a member of chisel3.UInt.").as_deref(),
            Some("B6")
        );
        assert_eq!(class("everything is fine"), None);
    }

    #[test]
    fn guidance_dedups_and_orders() {
        let cat = Catalog::builtin();
        let b3 = entry("Reference w not fully initialized.");
        let ids = |g: Vec<&CatalogEntry>| g.iter().map(|e| e.class_id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(cat.guidance_for(&[b3.clone(), b3])), vec!["B3"]);

        let b5 = entry("found: chisel3.Bool\nrequired: chisel3.UInt");
        let a2 = entry("class chisel3.UInt cannot be cast to class chisel3.SInt.");
        assert_eq!(ids(cat.guidance_for(&[b5, a2])), vec!["A2", "B5"]);
        assert!(cat.guidance_for(&[entry("nothing known")]).is_empty());
    }

    #[test]
    fn rejects_invalid_catalogs() {
        let base = |id: &str, pats: &str| {
            format!(
                "version = 1\n[[entry]]\nclass_id = \"{id}\"\ndescription = \"d\"\nincorrect_snippet = \"\"\ncorrected_snippet = \"\"\nsignature_patterns = {pats}\ncause = \"c\"\nfix_guidance = \"f\"\n"
            )
        };
        assert!(matches!(
            Catalog::from_toml(&base("Z9", "['x']")),
            Err(CatalogError::UnknownClass(_))
        ));
        assert!(matches!(
            Catalog::from_toml(&base("A1", "[]")),
            Err(CatalogError::NoPatterns(_))
        ));
        assert!(matches!(
            Catalog::from_toml(&base("A1", "['(unclosed']")),
            Err(CatalogError::BadPattern { .. })
        ));
        let dup = format!(
            "{}{}",
            base("A1", "['x']"),
            base("A1", "['y']").replace("version = 1\n", "")
        );
        assert!(matches!(
            Catalog::from_toml(&dup),
            Err(CatalogError::DuplicateClass(_))
        ));
        assert!(Catalog::from_toml(&base("B2", "['bare']")).is_ok());
    }
}
