//! Synthetic scene→description task with controllable hallucination factors.
//!
//! Every sample starts from a ground-truth scene (objects, counts and an
//! optional spatial clause) rendered through a fixed template. The corrected
//! response is that description after meaning-preserving noise and style
//! markers; the flawed response additionally carries injected object,
//! number or position hallucinations. Because the correction only touches
//! hallucinated spans, style and noise are shared by both sides of a pair.

mod generate;
pub mod io;
pub mod vocab;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segdiff;

pub use generate::generate_corpus;
pub use vocab::{plural_of, Relation, TokenId, Vocabulary};

pub type TokenSequence = Vec<TokenId>;

/// Category of an injected (or detected) hallucination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HallucinationType {
    Object,
    Position,
    Number,
}

impl HallucinationType {
    pub const ALL: [HallucinationType; 3] = [
        HallucinationType::Object,
        HallucinationType::Position,
        HallucinationType::Number,
    ];
}

/// A scene with its object inventory and per-object co-occurrence weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub scene_name: String,
    pub object_inventory: Vec<String>,
    pub cooccurrence_weights: BTreeMap<String, f64>,
}

impl SceneSpec {
    pub fn new(name: &str, objects: &[(&str, f64)]) -> Self {
        Self {
            scene_name: name.to_string(),
            object_inventory: objects.iter().map(|(o, _)| o.to_string()).collect(),
            cooccurrence_weights: objects.iter().map(|(o, w)| (o.to_string(), *w)).collect(),
        }
    }

    pub fn weight(&self, object: &str) -> f64 {
        self.cooccurrence_weights.get(object).copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("scene {:?}: {msg}", self.scene_name)));
        if self.scene_name.is_empty() || self.scene_name.chars().any(char::is_whitespace) {
            return bad("scene name must be a single non-empty token".into());
        }
        if self.object_inventory.is_empty() {
            return bad("empty object inventory".into());
        }
        let mut seen = BTreeSet::new();
        for object in &self.object_inventory {
            if !seen.insert(object) {
                return bad(format!("duplicate object {object:?}"));
            }
            if object.is_empty() || object.chars().any(char::is_whitespace) {
                return bad(format!("object {object:?} must be a single token"));
            }
            match self.cooccurrence_weights.get(object) {
                Some(w) if (0.0..=1.0).contains(w) => {}
                Some(w) => return bad(format!("weight {w} for {object:?} outside [0, 1]")),
                None => return bad(format!("no co-occurrence weight for {object:?}")),
            }
        }
        Ok(())
    }
}

/// Default scene set: the four scenes of the over-generalization analysis
/// plus two more so that corpus-wide averages are not dominated by them.
/// Inventories are listed in descending weight and overlap on common objects.
pub fn default_scenes() -> Vec<SceneSpec> {
    vec![
        SceneSpec::new(
            "living_room",
            &[
                ("couch", 0.85),
                ("tv", 0.7),
                ("book", 0.65),
                ("chair", 0.6),
                ("person", 0.55),
                ("remote", 0.5),
                ("lamp", 0.45),
                ("cup", 0.35),
                ("potted_plant", 0.3),
                ("clock", 0.3),
                ("vase", 0.25),
                ("bed", 0.15),
            ],
        ),
        SceneSpec::new(
            "kitchen",
            &[
                ("bottle", 0.85),
                ("bowl", 0.75),
                ("cup", 0.7),
                ("oven", 0.6),
                ("person", 0.55),
                ("sink", 0.5),
                ("refrigerator", 0.5),
                ("chair", 0.45),
                ("knife", 0.45),
                ("dining_table", 0.4),
                ("spoon", 0.35),
                ("microwave", 0.35),
            ],
        ),
        SceneSpec::new(
            "bathroom",
            &[
                ("toilet", 0.9),
                ("sink", 0.85),
                ("mirror", 0.6),
                ("towel", 0.55),
                ("bottle", 0.5),
                ("toothbrush", 0.45),
                ("bathtub", 0.4),
                ("cup", 0.3),
                ("person", 0.25),
                ("hair_drier", 0.15),
            ],
        ),
        SceneSpec::new(
            "street",
            &[
                ("person", 0.9),
                ("car", 0.85),
                ("traffic_light", 0.55),
                ("truck", 0.45),
                ("motorcycle", 0.4),
                ("bus", 0.35),
                ("bicycle", 0.35),
                ("handbag", 0.3),
                ("bench", 0.3),
                ("stop_sign", 0.25),
            ],
        ),
        SceneSpec::new(
            "bedroom",
            &[
                ("bed", 0.9),
                ("pillow", 0.7),
                ("lamp", 0.5),
                ("book", 0.4),
                ("clock", 0.35),
                ("laptop", 0.35),
                ("chair", 0.3),
                ("tv", 0.3),
                ("person", 0.3),
                ("suitcase", 0.2),
            ],
        ),
        SceneSpec::new(
            "office",
            &[
                ("laptop", 0.8),
                ("chair", 0.8),
                ("monitor", 0.7),
                ("keyboard", 0.65),
                ("mouse", 0.6),
                ("person", 0.55),
                ("phone", 0.45),
                ("cup", 0.4),
                ("book", 0.4),
                ("potted_plant", 0.3),
            ],
        ),
    ]
}

/// Relative frequencies of injected hallucination types.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeWeights {
    pub object: f64,
    pub position: f64,
    pub number: f64,
}

impl Default for TypeWeights {
    /// Observed shares of object / position / number corrections; the
    /// remaining categories have no template analog and are dropped, so the
    /// three weights are renormalized when sampled.
    fn default() -> Self {
        Self {
            object: 0.412,
            position: 0.203,
            number: 0.165,
        }
    }
}

impl TypeWeights {
    pub fn weight(&self, t: HallucinationType) -> f64 {
        match t {
            HallucinationType::Object => self.object,
            HallucinationType::Position => self.position,
            HallucinationType::Number => self.number,
        }
    }

    fn validate(&self) -> Result<()> {
        let ws = [self.object, self.position, self.number];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) || ws.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config(format!(
                "type weights must be non-negative with a positive sum, got {ws:?}"
            )));
        }
        Ok(())
    }
}

/// Knobs of the synthetic generator. Each rate drives one factor of the
/// preference difference: hallucinations (the preferred behavior signal),
/// style markers (shallow bias) and rephrasings (linguistic noise).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationKnobs {
    pub hallucination_rate: f64,
    pub style_bias_rate: f64,
    pub noise_rate: f64,
    /// Probability that a ground-truth description carries a spatial clause.
    pub layout_rate: f64,
    pub type_weights: TypeWeights,
    pub seed: u64,
}

impl Default for GenerationKnobs {
    fn default() -> Self {
        Self {
            hallucination_rate: 0.5,
            style_bias_rate: 0.1,
            noise_rate: 0.1,
            layout_rate: 0.5,
            type_weights: TypeWeights::default(),
            seed: 0,
        }
    }
}

impl GenerationKnobs {
    pub fn validate(&self) -> Result<()> {
        for (name, rate) in [
            ("hallucination_rate", self.hallucination_rate),
            ("style_bias_rate", self.style_bias_rate),
            ("noise_rate", self.noise_rate),
            ("layout_rate", self.layout_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Config(format!("{name} = {rate} outside [0, 1]")));
            }
        }
        self.type_weights.validate()
    }
}

/// A ground-truth spatial fact `subject relation object`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub subject: String,
    pub relation: Relation,
    pub object: String,
}

impl Layout {
    /// Whether the stated triple agrees with this fact, accounting for the
    /// mirrored phrasing (`a left_of b` ⇔ `b right_of a`).
    pub fn agrees(&self, subject: &str, relation: Relation, object: &str) -> bool {
        (subject == self.subject && object == self.object && relation == self.relation)
            || (subject == self.object && object == self.subject && relation == self.relation.mirror())
    }

    /// Whether the stated triple is about the same pair of objects.
    pub fn concerns(&self, a: &str, b: &str) -> bool {
        (a == self.subject && b == self.object) || (a == self.object && b == self.subject)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub scene: String,
    pub prompt: TokenSequence,
    pub ground_truth_objects: BTreeSet<String>,
    pub ground_truth_counts: BTreeMap<String, u32>,
    pub ground_truth_layout: Option<Layout>,
    pub flawed_response: TokenSequence,
    pub corrected_response: TokenSequence,
    pub hallucination_types: Vec<HallucinationType>,
    /// Objects inserted by object hallucinations, in injection order.
    pub injected_objects: Vec<String>,
}

impl SampleRecord {
    pub fn is_corrected(&self) -> bool {
        self.flawed_response != self.corrected_response
    }
}

/// Average response length and number of corrected segments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub mean_words: f64,
    pub mean_corrected_segments: f64,
}

/// Mean word count of corrected responses (special tokens excluded) and mean
/// number of corrected segments, where a corrected segment is one edit hunk
/// of the token diff between flawed and corrected response.
pub fn corpus_stats(records: &[SampleRecord]) -> Result<CorpusStats> {
    if records.is_empty() {
        return Err(Error::Domain("corpus_stats of an empty corpus".into()));
    }
    let n = records.len() as f64;
    let words: usize = records
        .iter()
        .map(|r| {
            r.corrected_response
                .iter()
                .filter(|&&t| !Vocabulary::is_special(t))
                .count()
        })
        .sum();
    let segments: usize = records
        .iter()
        .map(|r| segdiff::count_hunks(&r.flawed_response, &r.corrected_response))
        .sum();
    Ok(CorpusStats {
        mean_words: words as f64 / n,
        mean_corrected_segments: segments as f64 / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(flawed: Vec<TokenId>, corrected: Vec<TokenId>) -> SampleRecord {
        SampleRecord {
            scene: "kitchen".into(),
            prompt: vec![Vocabulary::BOS],
            ground_truth_objects: BTreeSet::new(),
            ground_truth_counts: BTreeMap::new(),
            ground_truth_layout: None,
            flawed_response: flawed,
            corrected_response: corrected,
            hallucination_types: vec![],
            injected_objects: vec![],
        }
    }

    #[test]
    fn default_scenes_are_valid() {
        for s in default_scenes() {
            s.validate().unwrap();
        }
    }

    #[test]
    fn scene_validation_errors() {
        let empty = SceneSpec::new("void", &[]);
        assert!(matches!(empty.validate(), Err(Error::Config(_))));
        let mut bad = SceneSpec::new("x", &[("cup", 1.5)]);
        assert!(bad.validate().is_err());
        bad = SceneSpec::new("x", &[("cup", 0.5), ("cup", 0.5)]);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn knob_validation() {
        let knobs = GenerationKnobs {
            noise_rate: -0.1,
            ..Default::default()
        };
        assert!(knobs.validate().is_err());
        GenerationKnobs::default().validate().unwrap();
    }

    #[test]
    fn layout_agreement_handles_mirroring() {
        let l = Layout {
            subject: "cup".into(),
            relation: Relation::LeftOf,
            object: "bowl".into(),
        };
        assert!(l.agrees("cup", Relation::LeftOf, "bowl"));
        assert!(l.agrees("bowl", Relation::RightOf, "cup"));
        assert!(!l.agrees("cup", Relation::Above, "bowl"));
        assert!(l.concerns("bowl", "cup"));
    }

    #[test]
    fn stats_single_record() {
        // 10 word tokens, two separate substitutions
        let corrected: Vec<TokenId> = (10..20).collect();
        let mut flawed = corrected.clone();
        flawed[2] = 99;
        flawed[7] = 98;
        let s = corpus_stats(&[record(flawed, corrected)]).unwrap();
        assert_eq!(s.mean_words, 10.0);
        assert_eq!(s.mean_corrected_segments, 2.0);
    }

    #[test]
    fn stats_identical_pairs_have_no_segments() {
        let r = record(vec![10, 11, 12], vec![10, 11, 12]);
        let s = corpus_stats(&[r.clone(), r]).unwrap();
        assert_eq!(s.mean_corrected_segments, 0.0);
    }

    #[test]
    fn stats_hand_counted_segments() {
        let base: Vec<TokenId> = (10..22).collect();
        let edit = |positions: &[usize]| {
            let mut f = base.clone();
            for &p in positions {
                f[p] = 90 + p as TokenId;
            }
            record(f, base.clone())
        };
        let records = [edit(&[1]), edit(&[1, 5]), edit(&[1, 5, 9])];
        let s = corpus_stats(&records).unwrap();
        assert_eq!(s.mean_corrected_segments, 2.0);
        // specials do not count as words
        let r = record(vec![Vocabulary::EOS], vec![10, 11, Vocabulary::EOS]);
        assert_eq!(corpus_stats(&[r]).unwrap().mean_words, 2.0);
    }

    #[test]
    fn stats_empty_is_domain_error() {
        assert!(matches!(corpus_stats(&[]), Err(Error::Domain(_))));
    }
}
