use std::collections::{BTreeMap, BTreeSet};

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::vocab::{INSTRUCTIONS, MARKERS, NUMERALS};
use super::{
    plural_of, GenerationKnobs, HallucinationType, Layout, Relation, SampleRecord, SceneSpec,
    TokenId, Vocabulary,
};
use crate::error::{Error, Result};

// Independent substreams so that toggling one factor never perturbs another.
const STREAM_BASE: u64 = 0;
const STREAM_HALLUCINATION: u64 = 1;
const STREAM_STYLE: u64 = 2;
const STREAM_NOISE: u64 = 3;

const MAX_INJECTIONS: usize = 3;

struct Streams {
    base: ChaCha8Rng,
    hallucination: ChaCha8Rng,
    style: ChaCha8Rng,
    noise: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let stream = |id| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(id);
            rng
        };
        Self {
            base: stream(STREAM_BASE),
            hallucination: stream(STREAM_HALLUCINATION),
            style: stream(STREAM_STYLE),
            noise: stream(STREAM_NOISE),
        }
    }
}

#[derive(Debug, Clone)]
struct Phrase {
    object: String,
    count: u32,
    /// Render count one as "one X" instead of "a X".
    spelled_one: bool,
    /// Count already altered by a number hallucination.
    touched: bool,
}

#[derive(Debug, Clone)]
struct Description<'a> {
    scene: &'a str,
    phrases: Vec<Phrase>,
    layout: Option<Layout>,
    lead_marker: Option<&'static str>,
    tail_marker: Option<&'static str>,
}

impl Description<'_> {
    /// `the <scene> [m] contains <phrase> {and <phrase>} [m] . [<a> is <rel> <b> .] <eos>`
    fn render(&self, vocab: &Vocabulary) -> Result<Vec<TokenId>> {
        let mut words: Vec<String> = vec!["the".into(), self.scene.into()];
        words.extend(self.lead_marker.map(String::from));
        words.push("contains".into());
        for (i, p) in self.phrases.iter().enumerate() {
            if i > 0 {
                words.push("and".into());
            }
            match p.count {
                1 if p.spelled_one => words.push(NUMERALS[0].into()),
                1 => words.push("a".into()),
                n => words.push(NUMERALS[(n - 1) as usize].into()),
            }
            words.push(if p.count == 1 {
                p.object.clone()
            } else {
                plural_of(&p.object)
            });
        }
        words.extend(self.tail_marker.map(String::from));
        words.push(".".into());
        if let Some(l) = &self.layout {
            words.extend([
                l.subject.clone(),
                "is".into(),
                l.relation.token().into(),
                l.object.clone(),
                ".".into(),
            ]);
        }
        let mut ids = words
            .iter()
            .map(|w| vocab.expect_id(w))
            .collect::<Result<Vec<_>>>()?;
        ids.push(Vocabulary::EOS);
        Ok(ids)
    }
}

/// Generates `n` samples. The output is a pure function of the arguments.
pub fn generate_corpus(
    scenes: &[SceneSpec],
    knobs: &GenerationKnobs,
    n: usize,
) -> Result<Vec<SampleRecord>> {
    if n == 0 {
        return Err(Error::Config("corpus size must be at least 1".into()));
    }
    if scenes.is_empty() {
        return Err(Error::Config("no scenes given".into()));
    }
    for scene in scenes {
        scene.validate()?;
    }
    knobs.validate()?;
    let vocab = Vocabulary::synthetic(scenes)?;
    let mut streams = Streams::new(knobs.seed);
    (0..n)
        .map(|_| sample(scenes, knobs, &vocab, &mut streams))
        .collect()
}

fn sample(
    scenes: &[SceneSpec],
    knobs: &GenerationKnobs,
    vocab: &Vocabulary,
    streams: &mut Streams,
) -> Result<SampleRecord> {
    let rng = &mut streams.base;
    let scene = &scenes[rng.gen_range(0..scenes.len())];
    let instruction = INSTRUCTIONS[rng.gen_range(0..INSTRUCTIONS.len())];

    let mut prompt = vec![Vocabulary::BOS];
    prompt.extend(vocab.encode(instruction)?);
    prompt.push(vocab.expect_id("scene")?);
    prompt.push(vocab.expect_id(&scene.scene_name)?);

    // Ground truth: inventory order, fixed draws per object.
    let mut phrases = Vec::new();
    for object in &scene.object_inventory {
        let present = rng.gen::<f64>() < scene.weight(object);
        let u = rng.gen::<f64>();
        if present {
            let count = if u < 0.6 {
                1
            } else if u < 0.85 {
                2
            } else {
                3
            };
            phrases.push(Phrase {
                object: object.clone(),
                count,
                spelled_one: false,
                touched: false,
            });
        }
    }
    if phrases.is_empty() {
        let top = scene
            .object_inventory
            .iter()
            .max_by(|a, b| scene.weight(a).total_cmp(&scene.weight(b)))
            .expect("validated non-empty inventory");
        phrases.push(Phrase {
            object: top.clone(),
            count: 1,
            spelled_one: false,
            touched: false,
        });
    }
    let wants_layout = rng.gen::<f64>() < knobs.layout_rate;
    let (i, j) = (rng.gen_range(0..phrases.len()), rng.gen_range(0..phrases.len()));
    let relation = Relation::ALL[rng.gen_range(0..Relation::ALL.len())];
    let layout = (wants_layout && phrases.len() >= 2).then(|| {
        let j = if i == j { (j + 1) % phrases.len() } else { j };
        Layout {
            subject: phrases[i].object.clone(),
            relation,
            object: phrases[j].object.clone(),
        }
    });

    let ground_truth_objects: BTreeSet<String> =
        phrases.iter().map(|p| p.object.clone()).collect();
    let ground_truth_counts: BTreeMap<String, u32> =
        phrases.iter().map(|p| (p.object.clone(), p.count)).collect();
    let ground_truth_layout = layout.clone();

    let mut desc = Description {
        scene: &scene.scene_name,
        phrases,
        layout,
        lead_marker: None,
        tail_marker: None,
    };
    apply_noise(&mut desc, knobs.noise_rate, &mut streams.noise);
    apply_style(&mut desc, knobs.style_bias_rate, &mut streams.style);
    let corrected_response = desc.render(vocab)?;

    let mut flawed = desc.clone();
    let mut hallucination_types = Vec::new();
    let mut injected_objects = Vec::new();
    let rng = &mut streams.hallucination;
    let mut rate = knobs.hallucination_rate;
    for _ in 0..MAX_INJECTIONS {
        if rng.gen::<f64>() >= rate {
            break;
        }
        rate *= 0.5;
        let feasible: Vec<HallucinationType> = HallucinationType::ALL
            .into_iter()
            .filter(|&t| knobs.type_weights.weight(t) > 0.0)
            .filter(|&t| match t {
                HallucinationType::Object => {
                    absent_objects(scene, &ground_truth_objects, &injected_objects).next().is_some()
                }
                HallucinationType::Position => {
                    flawed.layout.is_some() && !hallucination_types.contains(&t)
                }
                HallucinationType::Number => flawed.phrases.iter().any(|p| !p.touched),
            })
            .collect();
        if feasible.is_empty() {
            break;
        }
        let weights: Vec<f64> = feasible
            .iter()
            .map(|&t| knobs.type_weights.weight(t))
            .collect();
        let kind = feasible[WeightedIndex::new(&weights)
            .map_err(|e| Error::Config(e.to_string()))?
            .sample(rng)];
        match kind {
            HallucinationType::Object => {
                let object = pick_correlated_absent(scene, &ground_truth_objects, &injected_objects, rng);
                let at = rng.gen_range(0..=flawed.phrases.len());
                flawed.phrases.insert(
                    at,
                    Phrase {
                        object: object.clone(),
                        count: 1,
                        spelled_one: false,
                        touched: true,
                    },
                );
                injected_objects.push(object);
            }
            HallucinationType::Number => {
                let candidates: Vec<usize> = (0..flawed.phrases.len())
                    .filter(|&k| !flawed.phrases[k].touched)
                    .collect();
                let phrase = &mut flawed.phrases[candidates[rng.gen_range(0..candidates.len())]];
                let choices: Vec<u32> = (1..=NUMERALS.len() as u32)
                    .filter(|&c| c != phrase.count)
                    .collect();
                phrase.count = choices[rng.gen_range(0..choices.len())];
                phrase.spelled_one = false;
                phrase.touched = true;
            }
            HallucinationType::Position => {
                let layout = flawed.layout.as_mut().expect("feasibility checked");
                let choices: Vec<Relation> = Relation::ALL
                    .into_iter()
                    .filter(|&r| r != layout.relation)
                    .collect();
                layout.relation = choices[rng.gen_range(0..choices.len())];
            }
        }
        hallucination_types.push(kind);
    }
    let flawed_response = flawed.render(vocab)?;

    Ok(SampleRecord {
        scene: scene.scene_name.clone(),
        prompt,
        ground_truth_objects,
        ground_truth_counts,
        ground_truth_layout,
        flawed_response,
        corrected_response,
        hallucination_types,
        injected_objects,
    })
}

fn absent_objects<'a>(
    scene: &'a SceneSpec,
    present: &'a BTreeSet<String>,
    injected: &'a [String],
) -> impl Iterator<Item = &'a String> + 'a {
    scene
        .object_inventory
        .iter()
        .filter(move |o| !present.contains(*o) && !injected.contains(o))
}

/// Draws an absent object from the upper half (by co-occurrence weight) of
/// the scene's absent objects, proportionally to weight.
fn pick_correlated_absent(
    scene: &SceneSpec,
    present: &BTreeSet<String>,
    injected: &[String],
    rng: &mut ChaCha8Rng,
) -> String {
    let mut absent: Vec<&String> = absent_objects(scene, present, injected).collect();
    absent.sort_by(|a, b| scene.weight(b).total_cmp(&scene.weight(a)));
    absent.truncate(absent.len().div_ceil(2));
    let weights: Vec<f64> = absent.iter().map(|o| scene.weight(o)).collect();
    let k = match WeightedIndex::new(&weights) {
        Ok(dist) => dist.sample(rng),
        Err(_) => rng.gen_range(0..absent.len()),
    };
    absent[k].clone()
}

/// One meaning-preserving rephrasing with probability `rate`.
fn apply_noise(desc: &mut Description<'_>, rate: f64, rng: &mut ChaCha8Rng) {
    let fire = rng.gen::<f64>() < rate;
    let first_kind = rng.gen_range(0..3usize);
    let pick = rng.gen::<f64>();
    if !fire {
        return;
    }
    for offset in 0..3 {
        match (first_kind + offset) % 3 {
            0 if desc.phrases.len() >= 2 => {
                let i = ((desc.phrases.len() - 1) as f64 * pick) as usize;
                desc.phrases.swap(i, i + 1);
                return;
            }
            1 if desc.layout.is_some() => {
                let l = desc.layout.as_mut().unwrap();
                std::mem::swap(&mut l.subject, &mut l.object);
                l.relation = l.relation.mirror();
                return;
            }
            2 => {
                let singles: Vec<usize> = (0..desc.phrases.len())
                    .filter(|&k| desc.phrases[k].count == 1)
                    .collect();
                if !singles.is_empty() {
                    let k = singles[(singles.len() as f64 * pick) as usize];
                    desc.phrases[k].spelled_one = true;
                    return;
                }
            }
            _ => {}
        }
    }
}

/// Marker tokens in the two free slots, each with probability `rate`.
fn apply_style(desc: &mut Description<'_>, rate: f64, rng: &mut ChaCha8Rng) {
    let mut slot = || {
        let fire = rng.gen::<f64>() < rate;
        let marker = MARKERS[rng.gen_range(0..MARKERS.len())];
        fire.then_some(marker)
    };
    desc.lead_marker = slot();
    desc.tail_marker = slot();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::default_scenes;
    use crate::hallmetrics::{extract_mentions, Lexicon};

    fn knobs(h: f64, s: f64, n: f64, seed: u64) -> GenerationKnobs {
        GenerationKnobs {
            hallucination_rate: h,
            style_bias_rate: s,
            noise_rate: n,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn zero_hallucination_rate_leaves_pairs_identical() {
        let records = generate_corpus(&default_scenes(), &knobs(0.0, 0.5, 0.5, 3), 200).unwrap();
        assert!(records.iter().all(|r| r.flawed_response == r.corrected_response));
        assert!(records.iter().all(|r| r.hallucination_types.is_empty()));
    }

    #[test]
    fn all_rates_zero_leaves_pairs_identical() {
        let records = generate_corpus(&default_scenes(), &knobs(0.0, 0.0, 0.0, 1), 100).unwrap();
        assert!(records.iter().all(|r| !r.is_corrected()));
    }

    #[test]
    fn deterministic_by_seed() {
        let k = knobs(0.7, 0.2, 0.2, 42);
        let a = generate_corpus(&default_scenes(), &k, 50).unwrap();
        let b = generate_corpus(&default_scenes(), &k, 50).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = generate_corpus(&default_scenes(), &knobs(0.7, 0.2, 0.2, 43), 50).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn full_rate_always_injects_absent_objects() {
        let records = generate_corpus(&default_scenes(), &knobs(1.0, 0.0, 0.0, 9), 100).unwrap();
        assert_eq!(records.len(), 100);
        assert_eq!(records.iter().filter(|r| r.is_corrected()).count(), 100);
        let injected: Vec<(&String, &SampleRecord)> = records
            .iter()
            .flat_map(|r| r.injected_objects.iter().map(move |o| (o, r)))
            .collect();
        assert!(!injected.is_empty());
        let absent = injected
            .iter()
            .filter(|(o, r)| !r.ground_truth_objects.contains(*o))
            .count();
        assert_eq!(absent as f64 / injected.len() as f64, 1.0);
    }

    #[test]
    fn injected_objects_come_from_the_scene() {
        let scenes = default_scenes();
        let records = generate_corpus(&scenes, &knobs(1.0, 0.0, 0.0, 5), 300).unwrap();
        for r in &records {
            let scene = scenes.iter().find(|s| s.scene_name == r.scene).unwrap();
            for o in &r.injected_objects {
                assert!(scene.object_inventory.contains(o));
            }
        }
    }

    #[test]
    fn corrected_mentions_only_ground_truth() {
        let scenes = default_scenes();
        let vocab = Vocabulary::synthetic(&scenes).unwrap();
        let lexicon = Lexicon::for_scenes(&scenes);
        let records = generate_corpus(&scenes, &knobs(0.8, 0.3, 0.3, 11), 300).unwrap();
        for r in &records {
            let m = extract_mentions(&vocab.decode(&r.corrected_response), &lexicon);
            assert!(m.mentions.iter().all(|x| r.ground_truth_objects.contains(&x.object)));
            assert_eq!(r.is_corrected(), !r.hallucination_types.is_empty());
        }
    }

    #[test]
    fn style_rate_touches_only_markers() {
        let scenes = default_scenes();
        let vocab = Vocabulary::synthetic(&scenes).unwrap();
        let lexicon = Lexicon::for_scenes(&scenes);
        let plain = generate_corpus(&scenes, &knobs(0.6, 0.0, 0.3, 21), 200).unwrap();
        let styled = generate_corpus(&scenes, &knobs(0.6, 0.9, 0.3, 21), 200).unwrap();
        let markers: Vec<TokenId> = MARKERS.iter().map(|m| vocab.id(m).unwrap()).collect();
        let strip = |ids: &[TokenId]| -> Vec<TokenId> {
            ids.iter().copied().filter(|t| !markers.contains(t)).collect()
        };
        for (a, b) in plain.iter().zip(&styled) {
            for (x, y) in [
                (&a.flawed_response, &b.flawed_response),
                (&a.corrected_response, &b.corrected_response),
            ] {
                assert_eq!(strip(x), strip(y));
                let mx = extract_mentions(&vocab.decode(x), &lexicon);
                let my = extract_mentions(&vocab.decode(y), &lexicon);
                let names = |m: &crate::hallmetrics::MentionSet| {
                    m.mentions.iter().map(|x| x.object.clone()).collect::<Vec<_>>()
                };
                assert_eq!(names(&mx), names(&my));
            }
        }
        assert!(styled.iter().zip(&plain).any(|(a, b)| a.corrected_response != b.corrected_response));
    }

    #[test]
    fn configuration_errors() {
        let k = GenerationKnobs::default();
        assert!(matches!(generate_corpus(&[], &k, 1), Err(Error::Config(_))));
        assert!(generate_corpus(&default_scenes(), &k, 0).is_err());
        let empty = vec![SceneSpec::new("void", &[])];
        assert!(matches!(generate_corpus(&empty, &k, 5), Err(Error::Config(_))));
    }

    #[test]
    fn responses_are_template_shaped() {
        let scenes = default_scenes();
        let vocab = Vocabulary::synthetic(&scenes).unwrap();
        let r = &generate_corpus(&scenes, &knobs(0.0, 0.0, 0.0, 2), 1).unwrap()[0];
        let words = vocab.decode(&r.corrected_response);
        assert_eq!(words[0], "the");
        assert_eq!(words[1], r.scene);
        assert_eq!(words[2], "contains");
        assert_eq!(words.last().unwrap(), "<eos>");
        let prompt = vocab.decode(&r.prompt);
        assert_eq!(prompt[0], "<bos>");
        assert_eq!(prompt[prompt.len() - 1], r.scene);
    }
}
