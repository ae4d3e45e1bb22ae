use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::vocab::{object_names, NUMERALS};
use crate::corpus::{plural_of, SceneSpec};
use crate::error::{Error, Result};

/// Surface token → canonical object name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Lexicon {
    entries: BTreeMap<String, String>,
}

impl Lexicon {
    pub fn new(entries: BTreeMap<String, String>) -> Self {
        Self { entries }
    }

    /// Singular and plural forms of every object in `scenes`.
    pub fn for_scenes(scenes: &[SceneSpec]) -> Self {
        let mut entries = BTreeMap::new();
        for object in object_names(scenes) {
            entries.insert(object.to_string(), object.to_string());
            entries.insert(plural_of(object), object.to_string());
        }
        Self { entries }
    }

    pub fn insert(&mut self, surface: &str, canonical: &str) {
        self.entries.insert(surface.to_string(), canonical.to_string());
    }

    pub fn canonical(&self, surface: &str) -> Option<&str> {
        self.entries.get(surface).map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// One lexicon hit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub object: String,
    pub position: usize,
    /// Count stated by a preceding article or numeral, if any.
    pub stated_count: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionSet {
    pub mentions: Vec<Mention>,
}

impl MentionSet {
    pub fn len(&self) -> usize {
        self.mentions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mentions.is_empty()
    }
}

fn stated_count(previous: Option<&str>) -> Option<u32> {
    match previous? {
        "a" | "an" => Some(1),
        w => NUMERALS.iter().position(|n| *n == w).map(|i| i as u32 + 1),
    }
}

/// Exact-match mention extraction; every hit is reported once per occurrence
/// under its canonical name.
pub fn extract_mentions<S: AsRef<str>>(response: &[S], lexicon: &Lexicon) -> MentionSet {
    let mentions = response
        .iter()
        .enumerate()
        .filter_map(|(position, token)| {
            lexicon.canonical(token.as_ref()).map(|object| Mention {
                object: object.to_string(),
                position,
                stated_count: stated_count(position.checked_sub(1).map(|p| response[p].as_ref())),
            })
        })
        .collect();
    MentionSet { mentions }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::default_scenes;

    fn lexicon() -> Lexicon {
        let mut l = Lexicon::default();
        l.insert("car", "car");
        l.insert("cars", "car");
        l.insert("cup", "cup");
        l
    }

    #[test]
    fn no_hits() {
        assert!(extract_mentions(&["the", "street", "."], &lexicon()).is_empty());
    }

    #[test]
    fn synonyms_are_canonicalized() {
        let m = extract_mentions(&["a", "car", "and", "two", "cars"], &lexicon());
        assert_eq!(m.len(), 2);
        assert!(m.mentions.iter().all(|x| x.object == "car"));
        assert_eq!(m.mentions[0].position, 1);
        assert_eq!(m.mentions[1].position, 4);
        assert_eq!(m.mentions[0].stated_count, Some(1));
        assert_eq!(m.mentions[1].stated_count, Some(2));
    }

    #[test]
    fn duplicates_reported_per_occurrence() {
        let m = extract_mentions(&["cup", "is", "left_of", "cup"], &lexicon());
        assert_eq!(
            m.mentions.iter().map(|x| x.position).collect::<Vec<_>>(),
            vec![0, 3]
        );
        assert_eq!(m.mentions[0].stated_count, None);
    }

    #[test]
    fn scene_lexicon_covers_plurals() {
        let l = Lexicon::for_scenes(&default_scenes());
        assert_eq!(l.canonical("people"), Some("person"));
        assert_eq!(l.canonical("knives"), Some("knife"));
        assert_eq!(l.canonical("the"), None);
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lexicon.json");
        let l = Lexicon::for_scenes(&default_scenes());
        l.write(&path).unwrap();
        assert_eq!(Lexicon::read(&path).unwrap(), l);
    }
}
