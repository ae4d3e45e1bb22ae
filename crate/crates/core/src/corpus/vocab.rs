//! Closed vocabulary for the synthetic scene-description task.
//!
//! Ids are dense line indices. The first three entries are always the
//! padding, begin-of-sequence and end-of-sequence markers, so the language
//! model can rely on [`Vocabulary::PAD`] for left padding.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SceneSpec;
use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD_TOKEN: &str = "<pad>";
pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";

/// Words used by the response template.
pub(crate) const TEMPLATE_WORDS: &[&str] = &["the", "contains", "a", "and", "is", ".", "scene"];

/// Instruction variants; a prompt is `<bos> <instruction…> scene <scene-name>`.
pub(crate) const INSTRUCTIONS: &[&[&str]] = &[
    &["describe", "the", "image", "in", "detail"],
    &["what", "is", "in", "this", "image", "?"],
    &["provide", "a", "detailed", "description", "of", "the", "image"],
    &["list", "what", "you", "see", "in", "the", "photo"],
    &["tell", "me", "about", "this", "picture"],
    &["explain", "what", "the", "image", "shows"],
    &["give", "a", "thorough", "account", "of", "the", "view"],
    &["what", "can", "you", "see", "here", "?"],
];

/// Numerals for counts 1..=5. Count one is normally rendered with "a".
pub(crate) const NUMERALS: &[&str] = &["one", "two", "three", "four", "five"];

/// Preference-irrelevant marker tokens (style bias).
pub(crate) const MARKERS: &[&str] = &[
    "clearly",
    "really",
    "certainly",
    "indeed",
    "definitely",
    "truly",
    "quite",
    "obviously",
    "surely",
    "notably",
];

/// Spatial relations used in layout clauses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    LeftOf,
    RightOf,
    Above,
    Below,
}

impl Relation {
    pub const ALL: [Relation; 4] = [
        Relation::LeftOf,
        Relation::RightOf,
        Relation::Above,
        Relation::Below,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Relation::LeftOf => "left_of",
            Relation::RightOf => "right_of",
            Relation::Above => "above",
            Relation::Below => "below",
        }
    }

    pub fn from_token(token: &str) -> Option<Self> {
        Relation::ALL.into_iter().find(|r| r.token() == token)
    }

    /// The relation that holds with subject and object swapped.
    pub fn mirror(self) -> Self {
        match self {
            Relation::LeftOf => Relation::RightOf,
            Relation::RightOf => Relation::LeftOf,
            Relation::Above => Relation::Below,
            Relation::Below => Relation::Above,
        }
    }
}

/// Plural surface form of an object name.
pub fn plural_of(name: &str) -> String {
    match name {
        "person" => "people".to_string(),
        "mouse" => "mice".to_string(),
        "knife" => "knives".to_string(),
        _ if name.ends_with('s')
            || name.ends_with("sh")
            || name.ends_with("ch")
            || name.ends_with('x') =>
        {
            format!("{name}es")
        }
        _ => format!("{name}s"),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub const PAD: TokenId = 0;
    pub const BOS: TokenId = 1;
    pub const EOS: TokenId = 2;

    /// Builds a vocabulary from an ordered token list. The list must start
    /// with `<pad> <bos> <eos>` and contain no duplicates.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let specials = [PAD_TOKEN, BOS_TOKEN, EOS_TOKEN];
        if tokens.len() < specials.len()
            || tokens.iter().zip(specials).any(|(t, s)| t != s)
        {
            return Err(Error::Config(format!(
                "vocabulary must begin with {PAD_TOKEN}, {BOS_TOKEN}, {EOS_TOKEN}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, token) in tokens.iter().enumerate() {
            if token.is_empty() || token.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("invalid token {token:?} at id {i}")));
            }
            if index.insert(token.clone(), i as TokenId).is_some() {
                return Err(Error::Config(format!("duplicate token {token:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// The vocabulary of the synthetic task defined by `scenes`.
    pub fn synthetic(scenes: &[SceneSpec]) -> Result<Self> {
        let mut ordered: Vec<String> = Vec::new();
        let mut seen = BTreeSet::new();
        let mut push = |w: &str| {
            if seen.insert(w.to_string()) {
                ordered.push(w.to_string());
            }
        };
        for w in [PAD_TOKEN, BOS_TOKEN, EOS_TOKEN] {
            push(w);
        }
        TEMPLATE_WORDS.iter().for_each(|w| push(w));
        INSTRUCTIONS.iter().flat_map(|i| i.iter()).for_each(|w| push(w));
        for scene in scenes {
            push(&scene.scene_name);
        }
        let objects: Vec<&str> = object_names(scenes);
        objects.iter().for_each(|o| push(o));
        objects.iter().for_each(|o| push(&plural_of(o)));
        NUMERALS.iter().for_each(|w| push(w));
        Relation::ALL.iter().for_each(|r| push(r.token()));
        MARKERS.iter().for_each(|w| push(w));
        Self::from_tokens(ordered)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub(crate) fn expect_id(&self, token: &str) -> Result<TokenId> {
        self.id(token)
            .ok_or_else(|| Error::Config(format!("token {token:?} missing from vocabulary")))
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Maps ids to surface strings; unknown ids render as `<unk:ID>`.
    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter()
            .map(|&id| {
                self.token(id)
                    .map(str::to_string)
                    .unwrap_or_else(|| format!("<unk:{id}>"))
            })
            .collect()
    }

    pub fn encode(&self, words: &[&str]) -> Result<Vec<TokenId>> {
        words.iter().map(|w| self.expect_id(w)).collect()
    }

    pub fn is_special(id: TokenId) -> bool {
        id <= Self::EOS
    }

    /// Reads a newline-separated vocabulary file.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens = text
            .lines()
            .map(str::trim_end)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Distinct object names across scenes in first-appearance order.
pub fn object_names(scenes: &[SceneSpec]) -> Vec<&str> {
    let mut seen = BTreeSet::new();
    scenes
        .iter()
        .flat_map(|s| s.object_inventory.iter())
        .filter(|o| seen.insert(o.as_str()))
        .map(String::as_str)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::default_scenes;

    #[test]
    fn synthetic_vocabulary_is_closed_and_small() {
        let vocab = Vocabulary::synthetic(&default_scenes()).unwrap();
        assert_eq!(vocab.id(PAD_TOKEN), Some(Vocabulary::PAD));
        assert_eq!(vocab.id(BOS_TOKEN), Some(Vocabulary::BOS));
        assert_eq!(vocab.id(EOS_TOKEN), Some(Vocabulary::EOS));
        assert!(vocab.len() > 100 && vocab.len() < 250, "{}", vocab.len());
        assert!(vocab.id("people").is_some());
        assert!(vocab.id("left_of").is_some());
    }

    #[test]
    fn rejects_missing_specials_and_duplicates() {
        let bad = vec!["a".to_string(), "b".to_string()];
        assert!(Vocabulary::from_tokens(bad).is_err());
        let dup = ["<pad>", "<bos>", "<eos>", "x", "x"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert!(Vocabulary::from_tokens(dup).is_err());
    }

    #[test]
    fn file_round_trip() {
        let vocab = Vocabulary::synthetic(&default_scenes()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        vocab.write(&path).unwrap();
        assert_eq!(Vocabulary::read(&path).unwrap(), vocab);
    }

    #[test]
    fn plurals() {
        assert_eq!(plural_of("cup"), "cups");
        assert_eq!(plural_of("bus"), "buses");
        assert_eq!(plural_of("couch"), "couches");
        assert_eq!(plural_of("person"), "people");
        assert_eq!(plural_of("knife"), "knives");
    }

    #[test]
    fn relation_mirror_is_involution() {
        for r in Relation::ALL {
            assert_eq!(r.mirror().mirror(), r);
            assert_eq!(Relation::from_token(r.token()), Some(r));
        }
    }
}
