//! `ddpo-lab`: command-line front end of the DDPO laboratory.
//!
//! Every subcommand reads the optional run configuration given by
//! `--config`; `--seed` replaces its master seed and `--out-dir` its output
//! directory. Exit status: 0 on success, 2 for configuration errors, 3 for
//! data errors, 4 for numeric or training failures.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ddpo_core::corpus::io::{load_eval_corpus, load_pairs, load_samples, write_eval_corpus, write_pairs, write_samples};
use ddpo_core::corpus::{corpus_stats, Vocabulary};
use ddpo_core::ddpo::{mean_preference_loss, mean_reward_margin, train_ddpo};
use ddpo_core::hallmetrics::Lexicon;
use ddpo_core::lm::{load_checkpoint, save_checkpoint, sequence_log_prob};
use ddpo_core::pipeline::{
    data_scaling, decode_eval_corpus, evaluate, generate_corpora, preference_pairs, run_pipeline, scaling_csv,
    pretrain_reference, verify_manifest, RunConfig,
};
use ddpo_core::segdiff::diff_segments;
use ddpo_core::{Error, ErrorClass, Result};
use log::info;
use serde_json::json;

#[derive(Debug, Parser)]
#[command(name = "ddpo-lab", version, about = "Dense direct preference optimization laboratory")]
struct Cli {
    /// Run configuration (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, replacing the configured one.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, replacing the configured one.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic training corpus and evaluation prompts.
    Generate,
    /// Diff two token files, or turn a sample corpus into preference pairs.
    Diff {
        /// Whitespace-separated tokens of the flawed response.
        flawed: Option<PathBuf>,
        /// Whitespace-separated tokens of the corrected response.
        corrected: Option<PathBuf>,
        /// Sample corpus (JSONL); writes `pairs.jsonl` to the output directory.
        #[arg(long, conflicts_with_all = ["flawed", "corrected"])]
        samples: Option<PathBuf>,
    },
    /// Pretrain the reference model on a sample corpus.
    Pretrain {
        #[arg(long)]
        samples: PathBuf,
        /// Vocabulary file; the synthetic vocabulary when omitted.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
    },
    /// Train a policy from a reference checkpoint on preference pairs.
    TrainDdpo {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-epoch trace (JSON); next to the checkpoint when omitted.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
    },
    /// Measure hallucination on an evaluation corpus.
    Eval {
        /// Evaluation corpus (JSONL) with responses.
        #[arg(long, required_unless_present = "prompts")]
        corpus: Option<PathBuf>,
        /// Sample corpus whose prompts are answered by `--model`.
        #[arg(long, requires = "model", conflicts_with = "corpus")]
        prompts: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Score preference pairs under a checkpoint.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        /// Reference checkpoint; enables loss and reward margin.
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
    },
    /// Train one policy per fraction of the preference data.
    Scaling {
        #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,1.0")]
        fractions: Vec<f64>,
    },
    /// Run every stage and write a manifest.
    Pipeline,
    /// Check the files listed in a run manifest.
    Verify {
        /// Run directory; the output directory when omitted.
        dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numeric => 4,
            })
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seeds.master = seed;
    }
    if let Some(dir) = &cli.out_dir {
        config.out_dir = dir.clone();
    }
    config.validate()?;
    Ok(config)
}

fn out_dir(config: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
    Ok(&config.out_dir)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes to stdout; a closed pipe on the reading side is not an error.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|()| out.flush());
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    emit(&(serde_json::to_string_pretty(value)? + "\n"));
    Ok(())
}

fn vocabulary(path: Option<&Path>) -> Result<Vocabulary> {
    match path {
        Some(p) => Vocabulary::read(p),
        None => Vocabulary::synthetic(&ddpo_core::corpus::default_scenes()),
    }
}

fn trace_path(explicit: Option<PathBuf>, checkpoint: &Path) -> PathBuf {
    explicit.unwrap_or_else(|| checkpoint.with_extension("trace.json"))
}

fn read_tokens(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.split_whitespace().map(str::to_string).collect())
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli)?;
    let seeds = config.seeds.resolve();
    match cli.command {
        Command::Generate => {
            let corpora = generate_corpora(&config, &seeds)?;
            let dir = out_dir(&config)?;
            corpora.vocab.write(&dir.join("vocab.txt"))?;
            corpora.lexicon.write(&dir.join("lexicon.json"))?;
            write_samples(&dir.join("train.jsonl"), &corpora.train)?;
            write_samples(&dir.join("eval_prompts.jsonl"), &corpora.eval)?;
            let stats = corpus_stats(&corpora.train)?;
            write_json(&dir.join("corpus_stats.json"), &stats)?;
            print_json(&stats)
        }
        Command::Diff {
            flawed,
            corrected,
            samples,
        } => match (flawed, corrected, samples) {
            (_, _, Some(samples)) => {
                let records = load_samples(&samples)?;
                let pairs = preference_pairs(&records);
                let path = out_dir(&config)?.join("pairs.jsonl");
                write_pairs(&path, &pairs)?;
                info!("wrote {} pairs to {}", pairs.len(), path.display());
                print_json(&json!({ "n_records": records.len(), "n_pairs": pairs.len() }))
            }
            (Some(f), Some(c), None) => {
                let (flawed, corrected) = diff_segments(&read_tokens(&f)?, &read_tokens(&c)?);
                print_json(&json!({
                    "flawed": flawed,
                    "corrected": corrected,
                    "flawed_counts": flawed.counts(),
                    "corrected_counts": corrected.counts(),
                }))
            }
            _ => Err(Error::Config("diff needs two token files or --samples".into())),
        },
        Command::Pretrain {
            samples,
            vocab,
            out,
            epochs,
            lr,
            batch,
        } => {
            let vocab = vocabulary(vocab.as_deref())?;
            let records = load_samples(&samples)?;
            let mut config = config.clone();
            let pretrain = &mut config.pretrain;
            pretrain.epochs = epochs.unwrap_or(pretrain.epochs);
            pretrain.learning_rate = lr.unwrap_or(pretrain.learning_rate);
            pretrain.batch_size = batch.unwrap_or(pretrain.batch_size);
            let outcome = pretrain_reference(&records, &vocab, &config, seeds.pretrain)?;
            let out = out.unwrap_or_else(|| config.out_dir.join("reference.ckpt"));
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            save_checkpoint(&outcome.params, &out)?;
            write_json(&trace_path(None, &out), &outcome.trace)?;
            print_json(&json!({ "checkpoint": out, "epoch_cross_entropy": outcome.trace }))
        }
        Command::TrainDdpo {
            pairs,
            reference,
            out,
            trace,
            beta,
            gamma,
            epochs,
            lr,
            batch,
        } => {
            let mut cfg = config.ddpo.config(seeds.ddpo);
            cfg.beta = beta.unwrap_or(cfg.beta);
            cfg.gamma = gamma.unwrap_or(cfg.gamma);
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            cfg.learning_rate = lr.unwrap_or(cfg.learning_rate);
            cfg.batch_size = batch.unwrap_or(cfg.batch_size);
            cfg.validate()?;
            let reference = load_checkpoint(&reference)?;
            let pairs = load_pairs(&pairs)?;
            let outcome = train_ddpo(&reference, &pairs, &cfg)?;
            let out = out.unwrap_or_else(|| config.out_dir.join("policy.ckpt"));
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            save_checkpoint(&outcome.policy, &out)?;
            let trace = trace_path(trace, &out);
            write_json(&trace, &outcome.trace)?;
            print_json(&json!({ "checkpoint": out, "trace": trace, "epochs": outcome.trace }))
        }
        Command::Eval {
            corpus,
            prompts,
            model,
            lexicon,
            vocab,
        } => {
            let vocab = vocabulary(vocab.as_deref())?;
            let lexicon = match lexicon {
                Some(p) => Lexicon::read(&p)?,
                None => Lexicon::for_scenes(&ddpo_core::corpus::default_scenes()),
            };
            let dir = out_dir(&config)?.to_path_buf();
            let records = match (corpus, prompts, model) {
                (Some(c), _, _) => load_eval_corpus(&c)?,
                (None, Some(p), Some(m)) => {
                    let params = load_checkpoint(&m)?;
                    let records = decode_eval_corpus(&params, &load_samples(&p)?, config.eval.max_response_len)?;
                    write_eval_corpus(&dir.join("eval.jsonl"), &records)?;
                    records
                }
                _ => return Err(Error::Config("eval needs --corpus or --prompts with --model".into())),
            };
            let scenes: BTreeSet<&str> = records.iter().map(|r| r.scene.as_str()).collect();
            let scenes: Vec<&str> = scenes.into_iter().collect();
            let ev = evaluate(&records, &vocab, &lexicon, &scenes, config.eval.top_k);
            write_json(&dir.join("report.json"), &ev.report)?;
            fs::write(dir.join("scenes.csv"), ev.scenes.to_csv()).map_err(|e| Error::io(dir.join("scenes.csv"), e))?;
            fs::write(dir.join("curve.csv"), ev.curve_csv()).map_err(|e| Error::io(dir.join("curve.csv"), e))?;
            print_json(&ev.report)
        }
        Command::Score {
            model,
            pairs,
            reference,
        } => {
            let policy = load_checkpoint(&model)?;
            let pairs = load_pairs(&pairs)?;
            if pairs.is_empty() {
                return Err(Error::Domain("no preference pairs".into()));
            }
            let n = pairs.len() as f64;
            let (mut chosen, mut rejected) = (0.0, 0.0);
            for p in &pairs {
                chosen += sequence_log_prob(&policy, &p.prompt, p.chosen.tokens())?;
                rejected += sequence_log_prob(&policy, &p.prompt, p.rejected.tokens())?;
            }
            let mut summary = json!({
                "n_pairs": pairs.len(),
                "mean_chosen_log_prob": chosen / n,
                "mean_rejected_log_prob": rejected / n,
            });
            if let Some(r) = reference {
                let reference = load_checkpoint(&r)?;
                let cfg = config.ddpo.config(seeds.ddpo);
                summary["mean_loss"] = json!(mean_preference_loss(&policy, &reference, &pairs, &cfg)?);
                summary["mean_reward_margin"] = json!(mean_reward_margin(&policy, &reference, &pairs, cfg.beta)?);
            }
            print_json(&summary)
        }
        Command::Scaling { fractions } => {
            let rows = data_scaling(&config, &fractions)?;
            let csv = scaling_csv(&rows);
            let path = out_dir(&config)?.join("scaling.csv");
            fs::write(&path, &csv).map_err(|e| Error::io(&path, e))?;
            emit(&csv);
            Ok(())
        }
        Command::Pipeline => {
            let run = run_pipeline(&config)?;
            info!("artifacts in {}", run.out_dir.display());
            print_json(&run.manifest.metrics)
        }
        Command::Verify { dir } => {
            let dir = dir.unwrap_or_else(|| config.out_dir.clone());
            let manifest = verify_manifest(&dir)?;
            emit(&format!("ok: {} files verified in {}\n", manifest.files.len(), dir.display()));
            Ok(())
        }
    }
}
