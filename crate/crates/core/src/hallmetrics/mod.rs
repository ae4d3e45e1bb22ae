//! Hallucination measurement on the synthetic task.
//!
//! A mention is hallucinated when its canonical object is not part of the
//! response's ground truth. Rates follow the object-benchmark definitions:
//!
//! * response level: responses with at least one false mention divided by
//!   responses that mention any object;
//! * mention level: false mentions divided by all mentions.
//!
//! Empty denominators yield `None` (serialized as `null`), never zero.
//! Position and number errors are checked mechanically against the ground
//! truth layout and counts when those are known.

mod curve;
mod mentions;

use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::corpus::io::EvalRecord;
use crate::corpus::{HallucinationType, Layout, Relation, Vocabulary};

pub use curve::{concentration_curve, ConcentrationCurve};
pub use mentions::{extract_mentions, Lexicon, Mention, MentionSet};

/// Per-response verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResponseAssessment {
    pub mentions: MentionSet,
    /// Canonical names of false mentions, once per occurrence.
    pub false_objects: Vec<String>,
    pub position_errors: usize,
    pub number_errors: usize,
}

impl ResponseAssessment {
    pub fn has_mentions(&self) -> bool {
        !self.mentions.is_empty()
    }

    pub fn has_object_hallucination(&self) -> bool {
        !self.false_objects.is_empty()
    }

    pub fn mentions_falsely(&self, object: &str) -> bool {
        self.false_objects.iter().any(|o| o == object)
    }

    /// All hallucinations in the response regardless of type.
    pub fn total_count(&self) -> usize {
        self.false_objects.len() + self.position_errors + self.number_errors
    }
}

/// Ground truth a response is checked against.
#[derive(Debug, Clone, Copy)]
pub struct GroundTruth<'a> {
    pub objects: &'a BTreeSet<String>,
    pub counts: &'a BTreeMap<String, u32>,
    pub layout: Option<&'a Layout>,
}

pub fn assess_response<S: AsRef<str>>(
    words: &[S],
    truth: GroundTruth<'_>,
    lexicon: &Lexicon,
) -> ResponseAssessment {
    let mentions = extract_mentions(words, lexicon);
    let false_objects = mentions
        .mentions
        .iter()
        .filter(|m| !truth.objects.contains(&m.object))
        .map(|m| m.object.clone())
        .collect();
    let number_errors = mentions
        .mentions
        .iter()
        .filter(|m| match (m.stated_count, truth.counts.get(&m.object)) {
            (Some(stated), Some(&actual)) => stated != actual,
            _ => false,
        })
        .count();
    // `<a> is <relation> <b>` clauses whose pair is the known layout pair
    let position_errors = match truth.layout {
        None => 0,
        Some(layout) => words
            .windows(4)
            .filter(|w| {
                let (Some(a), Some(b)) = (
                    lexicon.canonical(w[0].as_ref()),
                    lexicon.canonical(w[3].as_ref()),
                ) else {
                    return false;
                };
                let Some(relation) = Relation::from_token(w[2].as_ref()) else {
                    return false;
                };
                w[1].as_ref() == "is" && layout.concerns(a, b) && !layout.agrees(a, relation, b)
            })
            .count(),
    };
    ResponseAssessment {
        mentions,
        false_objects,
        position_errors,
        number_errors,
    }
}

/// Assesses every record's response, decoding ids through `vocab`.
pub fn assess_corpus(
    records: &[EvalRecord],
    vocab: &Vocabulary,
    lexicon: &Lexicon,
) -> Vec<ResponseAssessment> {
    records
        .iter()
        .map(|r| {
            let objects: BTreeSet<String> = r.ground_truth_objects.iter().cloned().collect();
            let truth = GroundTruth {
                objects: &objects,
                counts: &r.ground_truth_counts,
                layout: r.ground_truth_layout.as_ref(),
            };
            assess_response(&vocab.decode(&r.response), truth, lexicon)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HallucinationReport {
    pub response_level_rate: Option<f64>,
    pub mention_level_rate: Option<f64>,
    pub per_type_counts: BTreeMap<HallucinationType, usize>,
    pub n_responses: usize,
    /// Responses that mention at least one object.
    pub n_scored_responses: usize,
    pub n_hallucinated_responses: usize,
    pub n_mentions: usize,
    pub n_false_mentions: usize,
}

impl HallucinationReport {
    pub fn from_assessments(assessments: &[ResponseAssessment]) -> Self {
        let scored = assessments.iter().filter(|a| a.has_mentions()).count();
        let hallucinated = assessments
            .iter()
            .filter(|a| a.has_object_hallucination())
            .count();
        let n_mentions: usize = assessments.iter().map(|a| a.mentions.len()).sum();
        let n_false: usize = assessments.iter().map(|a| a.false_objects.len()).sum();
        let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
        let per_type_counts = BTreeMap::from([
            (HallucinationType::Object, n_false),
            (
                HallucinationType::Position,
                assessments.iter().map(|a| a.position_errors).sum(),
            ),
            (
                HallucinationType::Number,
                assessments.iter().map(|a| a.number_errors).sum(),
            ),
        ]);
        Self {
            response_level_rate: ratio(hallucinated, scored),
            mention_level_rate: ratio(n_false, n_mentions),
            per_type_counts,
            n_responses: assessments.len(),
            n_scored_responses: scored,
            n_hallucinated_responses: hallucinated,
            n_mentions,
            n_false_mentions: n_false,
        }
    }
}

pub fn hallucination_rates(
    records: &[EvalRecord],
    vocab: &Vocabulary,
    lexicon: &Lexicon,
) -> HallucinationReport {
    HallucinationReport::from_assessments(&assess_corpus(records, vocab, lexicon))
}

/// Over-generalization gap of one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDelta {
    pub scene: String,
    /// Mean per-object rate over the whole corpus.
    pub h_a: f64,
    /// Mean per-object rate over responses under the scene.
    pub h_s: f64,
    pub delta: f64,
}

impl SceneDelta {
    pub fn new(scene: impl Into<String>, h_a: f64, h_s: f64) -> Self {
        Self {
            scene: scene.into(),
            h_a,
            h_s,
            delta: h_s - h_a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneAnalysis {
    pub scenes: Vec<SceneDelta>,
    pub delta_bar: Option<f64>,
}

impl SceneAnalysis {
    pub fn from_deltas(scenes: Vec<SceneDelta>) -> Self {
        let delta_bar = mean(scenes.iter().map(|s| s.delta));
        Self { scenes, delta_bar }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("scene,H_a,H_s,delta\n");
        for s in &self.scenes {
            out.push_str(&format!("{},{},{},{}\n", s.scene, s.h_a, s.h_s, s.delta));
        }
        out
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Response-level rate of one object over a response subset: responses that
/// mention it falsely over responses that mention any object.
fn object_rate<'a>(object: &str, subset: impl Iterator<Item = &'a ResponseAssessment>) -> Option<f64> {
    let (hits, scored) = subset
        .filter(|a| a.has_mentions())
        .fold((0usize, 0usize), |(h, n), a| {
            (h + usize::from(a.mentions_falsely(object)), n + 1)
        });
    (scored > 0).then(|| hits as f64 / scored as f64)
}

/// For each scene, compares the hallucination rate of its `k` most frequent
/// ground-truth objects on the full corpus with the rate under the scene.
/// Per-object rates are averaged over objects.
pub fn scene_analysis(
    records: &[EvalRecord],
    assessments: &[ResponseAssessment],
    scenes: &[&str],
    k: usize,
) -> SceneAnalysis {
    assert_eq!(records.len(), assessments.len());
    let mut deltas = Vec::new();
    for &scene in scenes {
        let members: Vec<usize> = (0..records.len())
            .filter(|&i| records[i].scene == scene)
            .collect();
        if members.is_empty() {
            warn!("scene {scene}: no responses, excluded from analysis");
            continue;
        }
        let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
        for &i in &members {
            for o in &records[i].ground_truth_objects {
                *freq.entry(o.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        ranked.truncate(k);

        let h_a = mean(ranked.iter().filter_map(|(o, _)| object_rate(o, assessments.iter())));
        let h_s = mean(
            ranked
                .iter()
                .filter_map(|(o, _)| object_rate(o, members.iter().map(|&i| &assessments[i]))),
        );
        match (h_a, h_s) {
            (Some(h_a), Some(h_s)) => deltas.push(SceneDelta::new(scene, h_a, h_s)),
            _ => warn!("scene {scene}: no object-mentioning responses, excluded from analysis"),
        }
    }
    SceneAnalysis::from_deltas(deltas)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth_set(objs: &[&str]) -> BTreeSet<String> {
        objs.iter().map(|s| s.to_string()).collect()
    }

    fn lexicon() -> Lexicon {
        let mut l = Lexicon::default();
        for (s, c) in [("cup", "cup"), ("cups", "cup"), ("bowl", "bowl"), ("car", "car")] {
            l.insert(s, c);
        }
        l
    }

    fn assess(words: &str, objs: &[&str]) -> ResponseAssessment {
        let objects = truth_set(objs);
        let counts = BTreeMap::new();
        let w: Vec<&str> = words.split_whitespace().collect();
        assess_response(
            &w,
            GroundTruth {
                objects: &objects,
                counts: &counts,
                layout: None,
            },
            &lexicon(),
        )
    }

    #[test]
    fn response_and_mention_rates() {
        let a = [
            assess("a cup and a bowl", &["cup", "bowl"]),
            assess("a cup and a car", &["cup"]),
            assess("a bowl", &["bowl"]),
            assess("nothing here", &[]),
        ];
        let r = HallucinationReport::from_assessments(&a);
        assert_eq!(r.response_level_rate, Some(1.0 / 3.0));
        assert_eq!(r.n_scored_responses, 3);
        assert_eq!(r.n_mentions, 5);
        assert_eq!(r.mention_level_rate, Some(0.2));
        assert_eq!(r.per_type_counts[&HallucinationType::Object], 1);
    }

    #[test]
    fn undefined_rates_are_none_and_null() {
        let r = HallucinationReport::from_assessments(&[assess("the void", &[])]);
        assert_eq!(r.response_level_rate, None);
        assert_eq!(r.mention_level_rate, None);
        let json = serde_json::to_value(&r).unwrap();
        assert!(json["response_level_rate"].is_null());
    }

    #[test]
    fn number_and_position_errors() {
        let objects = truth_set(&["cup", "bowl"]);
        let counts = BTreeMap::from([("cup".to_string(), 2), ("bowl".to_string(), 1)]);
        let layout = Layout {
            subject: "cup".into(),
            relation: Relation::LeftOf,
            object: "bowl".into(),
        };
        let truth = GroundTruth {
            objects: &objects,
            counts: &counts,
            layout: Some(&layout),
        };
        let ok = "two cups and a bowl . bowl is right_of cup .";
        let a = assess_response(&ok.split_whitespace().collect::<Vec<_>>(), truth, &lexicon());
        assert_eq!((a.number_errors, a.position_errors, a.total_count()), (0, 0, 0));
        let bad = "a cup and a bowl . cup is above bowl .";
        let a = assess_response(&bad.split_whitespace().collect::<Vec<_>>(), truth, &lexicon());
        assert_eq!((a.number_errors, a.position_errors, a.total_count()), (1, 1, 2));
    }

    #[test]
    fn table2_style_delta() {
        let d = SceneDelta::new("living_room", 25.2, 41.8);
        assert!((d.delta - 16.6).abs() < 1e-9);
    }

    fn eval(scene: &str, objs: &[&str]) -> EvalRecord {
        EvalRecord {
            prompt: vec![],
            response: vec![],
            ground_truth_objects: objs.iter().map(|s| s.to_string()).collect(),
            scene: scene.into(),
            ground_truth_counts: BTreeMap::new(),
            ground_truth_layout: None,
        }
    }

    #[test]
    fn symmetric_corpus_has_zero_delta() {
        // Two scenes with identical content and behavior.
        let records = vec![
            eval("x", &["cup"]),
            eval("x", &["bowl"]),
            eval("y", &["cup"]),
            eval("y", &["bowl"]),
        ];
        let assessments = vec![
            assess("a cup", &["cup"]),
            assess("a cup", &["bowl"]),
            assess("a cup", &["cup"]),
            assess("a cup", &["bowl"]),
        ];
        let sa = scene_analysis(&records, &assessments, &["x", "y", "missing"], 10);
        assert_eq!(sa.scenes.len(), 2);
        for s in &sa.scenes {
            assert!(s.delta.abs() < 1e-15);
        }
        assert_eq!(sa.delta_bar, Some(0.0));
    }

    #[test]
    fn over_generalizing_scene_has_positive_delta() {
        let records = vec![
            eval("kitchen", &["cup", "bowl"]),
            eval("kitchen", &["cup"]),
            eval("kitchen", &["cup"]),
            eval("street", &["car"]),
            eval("street", &["car"]),
            eval("street", &["car"]),
        ];
        let assessments = vec![
            assess("a cup", &["cup", "bowl"]),
            assess("a cup and a bowl", &["cup"]),
            assess("a cup and a bowl", &["cup"]),
            assess("a car", &["car"]),
            assess("a car", &["car"]),
            assess("a car", &["car"]),
        ];
        let sa = scene_analysis(&records, &assessments, &["kitchen", "street"], 10);
        // kitchen objects: cup (never false), bowl (false in 2 of 3 kitchen
        // responses, 2 of 6 overall)
        let kitchen = &sa.scenes[0];
        assert!((kitchen.h_s - 1.0 / 3.0).abs() < 1e-15);
        assert!((kitchen.h_a - 1.0 / 6.0).abs() < 1e-15);
        assert!((kitchen.delta - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(sa.scenes[1].delta, 0.0);
        assert!((sa.delta_bar.unwrap() - 1.0 / 12.0).abs() < 1e-15);
        assert!(scene_analysis(&records, &assessments, &["kitchen"], 1).scenes[0].delta == 0.0);
    }
}
