//! Privacy attribute vocabulary and the preference scale.
//!
//! Every per-attribute vector in the engine (labels, posteriors, preferences,
//! risk contributions) is indexed by [`Attribute::id`]. The canonical
//! taxonomy ships with the crate and is available through
//! [`AttributeTaxonomy::bundled`]; `safe` is always the last entry.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of privacy attributes, including `safe`.
pub const NUM_ATTRIBUTES: usize = 68;

/// Key of the catch-all attribute used when nothing private is visible.
pub const SAFE_KEY: &str = "safe";

const BUNDLED_TAXONOMY: &str = include_str!("../data/taxonomy.json");

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("cannot read taxonomy {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed taxonomy document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid taxonomy: {0}")]
    Validation(String),
    #[error("unknown attribute key `{0}`")]
    NotFound(String),
}

/// Attribute groups used to organise the taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AttributeGroup {
    PersonalDescription,
    Documents,
    Health,
    Employment,
    PersonalLife,
    Relationships,
    Whereabouts,
    InternetActivity,
    Automobile,
    Safe,
}

impl fmt::Display for AttributeGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            AttributeGroup::PersonalDescription => "Personal Description",
            AttributeGroup::Documents => "Documents",
            AttributeGroup::Health => "Health",
            AttributeGroup::Employment => "Employment",
            AttributeGroup::PersonalLife => "Personal Life",
            AttributeGroup::Relationships => "Relationships",
            AttributeGroup::Whereabouts => "Whereabouts",
            AttributeGroup::InternetActivity => "Internet Activity",
            AttributeGroup::Automobile => "Automobile",
            AttributeGroup::Safe => "Safe",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub id: usize,
    pub key: String,
    pub display_name: String,
    pub group: AttributeGroup,
    pub description: String,
}

/// Ordered, validated attribute list.
///
/// Only constructible through validation, so every instance satisfies:
/// exactly [`NUM_ATTRIBUTES`] entries, `attributes[i].id == i`, unique
/// lowercase keys, and exactly one `safe` attribute in the `Safe` group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AttributeTaxonomy {
    version: String,
    attributes: Vec<Attribute>,
    #[serde(skip)]
    safe_index: usize,
}

#[derive(Deserialize)]
struct TaxonomyDocument {
    version: String,
    attributes: Vec<Attribute>,
}

impl<'de> Deserialize<'de> for AttributeTaxonomy {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let doc = TaxonomyDocument::deserialize(deserializer)?;
        AttributeTaxonomy::new(doc.version, doc.attributes).map_err(serde::de::Error::custom)
    }
}

impl AttributeTaxonomy {
    pub fn new(version: impl Into<String>, attributes: Vec<Attribute>) -> Result<Self, TaxonomyError> {
        let invalid = |msg: String| Err(TaxonomyError::Validation(msg));
        if attributes.len() != NUM_ATTRIBUTES {
            return invalid(format!(
                "expected {NUM_ATTRIBUTES} attributes, found {}",
                attributes.len()
            ));
        }
        let mut keys = HashSet::with_capacity(attributes.len());
        let mut safe_index = None;
        for (i, attr) in attributes.iter().enumerate() {
            if attr.id != i {
                return invalid(format!("attribute at position {i} has id {}", attr.id));
            }
            if attr.key.is_empty() || attr.key != attr.key.to_lowercase() {
                return invalid(format!("attribute key `{}` must be non-empty lowercase", attr.key));
            }
            if !keys.insert(attr.key.as_str()) {
                return invalid(format!("duplicate attribute key `{}`", attr.key));
            }
            let is_safe_key = attr.key == SAFE_KEY;
            let is_safe_group = attr.group == AttributeGroup::Safe;
            if is_safe_key != is_safe_group {
                return invalid(format!(
                    "attribute `{}` mixes the safe key and the Safe group",
                    attr.key
                ));
            }
            if is_safe_key {
                safe_index = Some(i);
            }
        }
        let Some(safe_index) = safe_index else {
            return invalid("no `safe` attribute".to_string());
        };
        Ok(Self {
            version: version.into(),
            attributes,
            safe_index,
        })
    }

    /// The canonical taxonomy compiled into the crate.
    pub fn bundled() -> Self {
        Self::from_json_str(BUNDLED_TAXONOMY).expect("bundled taxonomy is valid")
    }

    pub fn from_json_str(s: &str) -> Result<Self, TaxonomyError> {
        let doc: TaxonomyDocument = serde_json::from_str(s)?;
        Self::new(doc.version, doc.attributes)
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("taxonomy serializes");
        s.push('\n');
        s
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&Attribute> {
        self.attributes.get(id)
    }

    pub fn safe_index(&self) -> usize {
        self.safe_index
    }

    pub fn safe(&self) -> &Attribute {
        &self.attributes[self.safe_index]
    }

    /// Attribute with the given key.
    pub fn attribute_by_key(&self, key: &str) -> Result<&Attribute, TaxonomyError> {
        self.attributes
            .iter()
            .find(|a| a.key == key)
            .ok_or_else(|| TaxonomyError::NotFound(key.to_string()))
    }

    pub fn index_of(&self, key: &str) -> Result<usize, TaxonomyError> {
        self.attribute_by_key(key).map(|a| a.id)
    }

    /// Keys of all attributes that users rate (everything but `safe`).
    pub fn surveyed_keys(&self) -> impl Iterator<Item = &str> {
        self.attributes
            .iter()
            .filter(|a| a.group != AttributeGroup::Safe)
            .map(|a| a.key.as_str())
    }
}

/// Load and validate a taxonomy document.
pub fn load_taxonomy(path: impl AsRef<Path>) -> Result<AttributeTaxonomy, TaxonomyError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| TaxonomyError::Io {
        path: path.display().to_string(),
        source,
    })?;
    AttributeTaxonomy::from_json_str(&text)
}

pub fn save_taxonomy(taxonomy: &AttributeTaxonomy, path: impl AsRef<Path>) -> Result<(), TaxonomyError> {
    let path = path.as_ref();
    fs::write(path, taxonomy.to_json_string()).map_err(|source| TaxonomyError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// The 1–5 rating scale with the fixed value assigned to `safe`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreferenceScale;

impl PreferenceScale {
    pub const MIN: f64 = 1.0;
    pub const MAX: f64 = 5.0;
    pub const SAFE_VALUE: f64 = 0.5;

    /// Whether `value` is an admissible preference for a non-safe attribute.
    pub fn contains(value: f64) -> bool {
        (Self::MIN..=Self::MAX).contains(&value)
    }

    /// Admissible range of the risk definition: any preference in `[0, 5]`.
    pub fn is_admissible(value: f64) -> bool {
        value.is_finite() && (0.0..=Self::MAX).contains(&value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_has_68_with_one_safe_last() {
        let t = AttributeTaxonomy::bundled();
        assert_eq!(t.len(), 68);
        let safes: Vec<_> = t
            .attributes()
            .iter()
            .filter(|a| a.group == AttributeGroup::Safe)
            .collect();
        assert_eq!(safes.len(), 1);
        assert_eq!(safes[0].key, "safe");
        assert_eq!(t.safe_index(), 67);
        assert_eq!(t.surveyed_keys().count(), 67);
    }

    #[test]
    fn lookup_by_key() {
        let t = AttributeTaxonomy::bundled();
        assert_eq!(t.attribute_by_key("safe").unwrap().group, AttributeGroup::Safe);
        assert!(matches!(t.attribute_by_key("foo"), Err(TaxonomyError::NotFound(_))));
        let first = &t.attributes()[0];
        assert_eq!(t.attribute_by_key(&first.key).unwrap().id, 0);
    }

    #[test]
    fn key_to_id_is_bijection() {
        let t = AttributeTaxonomy::bundled();
        let mut seen = vec![false; t.len()];
        for a in t.attributes() {
            let id = t.index_of(&a.key).unwrap();
            assert!(!seen[id]);
            seen[id] = true;
        }
        assert!(seen.into_iter().all(|s| s));
    }

    fn doc_without_last() -> String {
        let t = AttributeTaxonomy::bundled();
        let mut v: serde_json::Value = serde_json::from_str(&t.to_json_string()).unwrap();
        v["attributes"].as_array_mut().unwrap().remove(0);
        v.to_string()
    }

    #[test]
    fn wrong_count_is_rejected() {
        assert!(matches!(
            AttributeTaxonomy::from_json_str(&doc_without_last()),
            Err(TaxonomyError::Validation(_))
        ));
    }

    #[test]
    fn duplicate_and_missing_safe_are_rejected() {
        let t = AttributeTaxonomy::bundled();
        let mut attrs = t.attributes().to_vec();
        attrs[1].key = attrs[0].key.clone();
        assert!(matches!(
            AttributeTaxonomy::new("x", attrs),
            Err(TaxonomyError::Validation(_))
        ));

        let mut attrs = t.attributes().to_vec();
        attrs[67].key = "nothing".into();
        attrs[67].group = AttributeGroup::Automobile;
        assert!(matches!(
            AttributeTaxonomy::new("x", attrs),
            Err(TaxonomyError::Validation(_))
        ));

        let mut attrs = t.attributes().to_vec();
        attrs[3].key = "Gender".into();
        assert!(AttributeTaxonomy::new("x", attrs).is_err());
    }

    #[test]
    fn malformed_document_is_parse_error() {
        assert!(matches!(
            AttributeTaxonomy::from_json_str("{\"version\": 1"),
            Err(TaxonomyError::Parse(_))
        ));
    }

    #[test]
    fn file_round_trip() {
        let t = AttributeTaxonomy::bundled();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("taxonomy.json");
        save_taxonomy(&t, &path).unwrap();
        assert_eq!(load_taxonomy(&path).unwrap(), t);
    }

    #[test]
    fn preference_scale_bounds() {
        assert!(PreferenceScale::contains(1.0));
        assert!(PreferenceScale::contains(5.0));
        assert!(!PreferenceScale::contains(0.5));
        assert!(PreferenceScale::is_admissible(PreferenceScale::SAFE_VALUE));
        assert!(!PreferenceScale::is_admissible(5.5));
    }
}
