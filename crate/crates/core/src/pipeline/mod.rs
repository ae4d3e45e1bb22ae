//! Reproducible end-to-end runs.
//!
//! A run generates the training and evaluation corpora, diffs the corrected
//! records into preference pairs, pretrains the reference model, trains the
//! policy with the dense preference objective and evaluates both models on
//! greedy decodes of the evaluation prompts. Every artifact lands in the
//! run directory and is hashed into `manifest.json`.

mod config;
mod manifest;

use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::io::{EvalRecord, PairLine};
use crate::corpus::{default_scenes, generate_corpus, SampleRecord, SceneSpec, TokenId, Vocabulary};
use crate::ddpo::{train_ddpo, DdpoOutcome, PreferencePair};
use crate::error::{Error, Result};
use crate::hallmetrics::{
    assess_corpus, concentration_curve, scene_analysis, ConcentrationCurve, HallucinationReport,
    Lexicon, SceneAnalysis,
};
use crate::lm::{greedy_decode, pretrain_sequences, ModelParameters, PretrainOutcome};

pub use config::{
    CorpusConfig, DdpoSection, EvalConfig, ModelDims, PretrainConfig, PretrainTarget, RunConfig,
    SeedConfig, Seeds,
};
pub use manifest::{file_sha256, verify_manifest, Manifest, MANIFEST_FILE};

/// Training and evaluation corpora with their shared vocabulary.
#[derive(Debug, Clone)]
pub struct Corpora {
    pub scenes: Vec<SceneSpec>,
    pub vocab: Vocabulary,
    pub lexicon: Lexicon,
    pub train: Vec<SampleRecord>,
    pub eval: Vec<SampleRecord>,
}

impl Corpora {
    pub fn scene_names(&self) -> Vec<&str> {
        self.scenes.iter().map(|s| s.scene_name.as_str()).collect()
    }
}

pub fn generate_corpora(config: &RunConfig, seeds: &Seeds) -> Result<Corpora> {
    let scenes = default_scenes();
    let vocab = Vocabulary::synthetic(&scenes)?;
    let lexicon = Lexicon::for_scenes(&scenes);
    let train = generate_corpus(&scenes, &config.corpus.knobs(seeds.corpus), config.corpus.n_train)?;
    let eval = generate_corpus(&scenes, &config.corpus.knobs(seeds.eval), config.corpus.n_eval)?;
    Ok(Corpora {
        scenes,
        vocab,
        lexicon,
        train,
        eval,
    })
}

/// Diffs every corrected record into a pair; uncorrected records carry no
/// preference and are dropped.
pub fn preference_pairs(records: &[SampleRecord]) -> Vec<PreferencePair> {
    records
        .iter()
        .filter(|r| r.is_corrected())
        .map(PreferencePair::from_record)
        .collect()
}

pub fn pretrain_reference(
    records: &[SampleRecord],
    vocab: &Vocabulary,
    config: &RunConfig,
    seed: u64,
) -> Result<PretrainOutcome> {
    let sequences: Vec<(&[TokenId], &[TokenId])> = records
        .iter()
        .map(|r| {
            let response = match config.pretrain.target {
                PretrainTarget::Flawed => &r.flawed_response,
                PretrainTarget::Corrected => &r.corrected_response,
            };
            (r.prompt.as_slice(), response.as_slice())
        })
        .collect();
    pretrain_sequences(&sequences, config.model.with_vocab(vocab.len()), &config.pretrain.options(seed))
}

/// Greedy responses of `params` to the prompts of `records`.
pub fn decode_eval_corpus(
    params: &ModelParameters,
    records: &[SampleRecord],
    max_len: usize,
) -> Result<Vec<EvalRecord>> {
    records
        .par_iter()
        .map(|r| Ok(EvalRecord::from_sample(r, greedy_decode(params, &r.prompt, max_len)?)))
        .collect()
}

/// Metrics of one evaluation corpus.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub report: HallucinationReport,
    pub scenes: SceneAnalysis,
    /// `None` when no response hallucinates.
    pub curve: Option<ConcentrationCurve>,
}

impl Evaluation {
    pub fn curve_csv(&self) -> String {
        match &self.curve {
            Some(c) => c.to_csv(),
            None => "x,y\n".to_string(),
        }
    }
}

pub fn evaluate(
    records: &[EvalRecord],
    vocab: &Vocabulary,
    lexicon: &Lexicon,
    scenes: &[&str],
    top_k: usize,
) -> Evaluation {
    let assessments = assess_corpus(records, vocab, lexicon);
    let counts: Vec<usize> = assessments.iter().map(|a| a.false_objects.len()).collect();
    let curve = match concentration_curve(&counts) {
        Ok(c) => Some(c),
        Err(_) => {
            warn!("no hallucinated responses; concentration curve is empty");
            None
        }
    };
    Evaluation {
        report: HallucinationReport::from_assessments(&assessments),
        scenes: scene_analysis(records, &assessments, scenes, top_k),
        curve,
    }
}

/// Summary written into the manifest; two runs of one configuration must
/// agree on it exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub n_train: usize,
    pub n_pairs: usize,
    pub n_eval: usize,
    pub pretrain_final_loss: Option<f64>,
    pub ddpo_final_loss: Option<f64>,
    pub ddpo_final_margin: Option<f64>,
    pub reference: HallucinationReport,
    pub policy: HallucinationReport,
    pub reference_delta_bar: Option<f64>,
    pub policy_delta_bar: Option<f64>,
}

impl RunMetrics {
    /// `1 - policy / reference` of the response-level rate.
    pub fn relative_reduction(&self) -> Option<f64> {
        match (self.reference.response_level_rate, self.policy.response_level_rate) {
            (Some(r), Some(p)) if r > 0.0 => Some(1.0 - p / r),
            _ => None,
        }
    }
}

/// Outcome of [`run_pipeline`].
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    pub reference: ModelParameters,
    pub policy: ModelParameters,
}

/// Collects run artifacts and their hashes.
struct ArtifactWriter {
    dir: PathBuf,
    files: Vec<(String, String)>,
}

impl ArtifactWriter {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes.as_ref()).map_err(|e| Error::io(&path, e))?;
        self.files.push((name.to_string(), manifest::sha256_hex(bytes.as_ref())));
        Ok(())
    }

    fn jsonl<T: Serialize>(&mut self, name: &str, items: &[T]) -> Result<()> {
        let mut buf = Vec::new();
        for item in items {
            serde_json::to_writer(&mut buf, item)?;
            buf.push(b'\n');
        }
        self.write(name, buf)
    }

    fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text)
    }
}

fn vocab_text(vocab: &Vocabulary) -> String {
    let mut s = vocab.tokens().join("\n");
    s.push('\n');
    s
}

/// Runs every stage and writes the artifacts and manifest to
/// `config.out_dir`. Artifacts of completed stages are kept on failure.
pub fn run_pipeline(config: &RunConfig) -> Result<PipelineRun> {
    config.validate()?;
    let seeds = config.seeds.resolve();
    let mut out = ArtifactWriter::new(&config.out_dir)?;
    out.write("config.toml", config.to_toml())?;

    let corpora = generate_corpora(config, &seeds).map_err(|e| e.in_stage("generate"))?;
    (|| {
        out.write("vocab.txt", vocab_text(&corpora.vocab))?;
        out.json("lexicon.json", &corpora.lexicon)?;
        out.jsonl("train.jsonl", &corpora.train)?;
        out.jsonl("eval_prompts.jsonl", &corpora.eval)
    })()
    .map_err(|e| e.in_stage("generate"))?;
    info!(
        "generated {} training and {} evaluation records",
        corpora.train.len(),
        corpora.eval.len()
    );

    let pairs = preference_pairs(&corpora.train);
    let lines: Vec<PairLine> = pairs.iter().map(PairLine::from_pair).collect();
    out.jsonl("pairs.jsonl", &lines).map_err(|e| e.in_stage("diff"))?;
    info!("{} preference pairs", pairs.len());

    let pretrained = pretrain_reference(&corpora.train, &corpora.vocab, config, seeds.pretrain)
        .map_err(|e| e.in_stage("pretrain"))?;
    (|| {
        out.write("reference.ckpt", pretrained.params.to_bytes())?;
        out.json("pretrain_trace.json", &pretrained.trace)
    })()
    .map_err(|e| e.in_stage("pretrain"))?;

    let trained = train_policy(&pretrained.params, &pairs, config, seeds.ddpo)
        .map_err(|e| e.in_stage("train-ddpo"))?;
    (|| {
        out.write("policy.ckpt", trained.policy.to_bytes())?;
        out.json("ddpo_trace.json", &trained.trace)
    })()
    .map_err(|e| e.in_stage("train-ddpo"))?;

    let scene_names = corpora.scene_names();
    let mut evaluate_model = |name: &str, params: &ModelParameters| -> Result<Evaluation> {
        let records = decode_eval_corpus(params, &corpora.eval, config.eval.max_response_len)?;
        let ev = evaluate(
            &records,
            &corpora.vocab,
            &corpora.lexicon,
            &scene_names,
            config.eval.top_k,
        );
        out.jsonl(&format!("eval_{name}.jsonl"), &records)?;
        out.json(&format!("report_{name}.json"), &ev.report)?;
        out.write(&format!("scenes_{name}.csv"), ev.scenes.to_csv())?;
        out.write(&format!("curve_{name}.csv"), ev.curve_csv())?;
        Ok(ev)
    };
    let reference_eval = evaluate_model("reference", &pretrained.params).map_err(|e| e.in_stage("eval"))?;
    let policy_eval = evaluate_model("policy", &trained.policy).map_err(|e| e.in_stage("eval"))?;

    let metrics = RunMetrics {
        n_train: corpora.train.len(),
        n_pairs: pairs.len(),
        n_eval: corpora.eval.len(),
        pretrain_final_loss: pretrained.trace.last().copied(),
        ddpo_final_loss: trained.trace.last().map(|e| e.mean_loss),
        ddpo_final_margin: trained.trace.last().map(|e| e.mean_margin),
        reference: reference_eval.report,
        policy: policy_eval.report,
        reference_delta_bar: reference_eval.scenes.delta_bar,
        policy_delta_bar: policy_eval.scenes.delta_bar,
    };
    let manifest = Manifest::new(config, seeds, metrics, out.files);
    manifest.write(&config.out_dir)?;
    Ok(PipelineRun {
        out_dir: config.out_dir.clone(),
        manifest,
        reference: pretrained.params,
        policy: trained.policy,
    })
}

fn train_policy(
    reference: &ModelParameters,
    pairs: &[PreferencePair],
    config: &RunConfig,
    seed: u64,
) -> Result<DdpoOutcome> {
    let cfg = config.ddpo.config(seed);
    if cfg.epochs == 0 {
        cfg.validate()?;
        return Ok(DdpoOutcome {
            policy: reference.clone(),
            trace: Vec::new(),
        });
    }
    train_ddpo(reference, pairs, &cfg)
}

/// One row of the data-scaling table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub fraction: f64,
    pub n_pairs: usize,
    pub hallucination_rate: Option<f64>,
    /// False object mentions over the evaluation corpus.
    pub hallucination_count: usize,
}

pub fn scaling_csv(rows: &[ScalingRow]) -> String {
    let mut out = String::from("fraction,n_pairs,hallucination_rate,hallucination_count\n");
    for r in rows {
        let rate = r.hallucination_rate.map(|x| x.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", r.fraction, r.n_pairs, rate, r.hallucination_count));
    }
    out
}

/// Trains one policy per fraction on the leading `floor(fraction · n)`
/// preference pairs and evaluates each. The reference model is shared.
pub fn data_scaling(config: &RunConfig, fractions: &[f64]) -> Result<Vec<ScalingRow>> {
    config.validate()?;
    if fractions.is_empty() {
        return Err(Error::Config("no fractions given".into()));
    }
    for pair in fractions.windows(2) {
        if pair[1] < pair[0] {
            return Err(Error::Config("fractions must be sorted".into()));
        }
    }
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(Error::Config(format!("fraction {f} outside (0, 1]")));
    }
    let seeds = config.seeds.resolve();
    let corpora = generate_corpora(config, &seeds).map_err(|e| e.in_stage("generate"))?;
    let pairs = preference_pairs(&corpora.train);
    let reference = pretrain_reference(&corpora.train, &corpora.vocab, config, seeds.pretrain)
        .map_err(|e| e.in_stage("pretrain"))?
        .params;
    let scene_names = corpora.scene_names();

    let mut rows = Vec::new();
    for &fraction in fractions {
        let n = (fraction * pairs.len() as f64).floor() as usize;
        if n == 0 {
            warn!("fraction {fraction} selects no preference pairs; skipped");
            continue;
        }
        let policy = train_policy(&reference, &pairs[..n], config, seeds.ddpo)
            .map_err(|e| e.in_stage("train-ddpo"))?
            .policy;
        let records = decode_eval_corpus(&policy, &corpora.eval, config.eval.max_response_len)
            .map_err(|e| e.in_stage("eval"))?;
        let ev = evaluate(
            &records,
            &corpora.vocab,
            &corpora.lexicon,
            &scene_names,
            config.eval.top_k,
        );
        info!(
            "fraction {fraction}: {n} pairs, response-level rate {:?}",
            ev.report.response_level_rate
        );
        rows.push(ScalingRow {
            fraction,
            n_pairs: n,
            hallucination_rate: ev.report.response_level_rate,
            hallucination_count: ev.report.n_false_mentions,
        });
    }
    Ok(rows)
}
