mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dialplan::augment::augment_corpus;
use dialplan::corpus::{
    corpus_stats, load_corpus, split_corpus, synthesize_corpus, write_corpus, write_jsonl, DialogueSample, WordCounter,
};
use dialplan::eval::{evaluate_run, load_summaries, rouge_l, rouge_n, tokenize, ConsistencyScorer};
use dialplan::faithfulness::{
    build_detector_dataset, detection_metrics, score_consistency, train_detector, BoundDetector, Detector, Label,
    LabeledRecord, NameCollection,
};
use dialplan::model::{Checkpoint, ModelConfig, Seq2Seq};
use dialplan::pipeline::{generate, train_summarizer, TrainEvent};
use dialplan::planning::PlanSpec;
use dialplan::tokenizer::{corpus_text, train_bpe, Tokenizer, DEFAULT_MERGES};
use serde_json::json;

use config::{existing, pick, RunConfig};

#[derive(Parser)]
#[command(name = "dialplan", version, about = "Entity-planned dialogue summarization")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus plus a `.stats.json` sidecar.
    SynthData {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Seeded train/valid/test split of a corpus into `<prefix>.{train,valid,test}.jsonl`.
    Split {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "0.8,0.1,0.1")]
        ratios: String,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        prefix: PathBuf,
    },
    /// Learn a sub-word vocabulary from a corpus.
    TrainTokenizer {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        merges: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the summarizer with occurrence planning.
    Train(TrainArgs),
    /// Generate plan-conditioned summaries.
    Generate(GenerateArgs),
    /// Build the labeled detector dataset and train the consistency detector.
    DetectTrain(DetectTrainArgs),
    /// Score labeled pairs, or generated summaries against their dialogues.
    DetectScore(DetectScoreArgs),
    /// Entity-exchange augmentation.
    Augment {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a summaries file against gold summaries.
    Evaluate(EvaluateArgs),
    /// ROUGE-1/2/L for one reference/hypothesis pair.
    Rouge {
        #[arg(long)]
        reference: String,
        #[arg(long)]
        hypothesis: String,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    tokenizer: Option<PathBuf>,
    /// Augmented samples appended to the training corpus.
    #[arg(long)]
    augmented: Option<PathBuf>,
    /// Train without coreference graph fusion.
    #[arg(long)]
    no_coref: bool,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from a `.last` checkpoint with optimizer state.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Best checkpoint; the final state goes to `<out>.last`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON-lines training log; defaults to `<out>.log.jsonl`.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    tokenizer: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// `occurrence`, `comprehensive` or `focus:<Name>`.
    #[arg(long)]
    plan: String,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DetectTrainArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    tokenizer: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    /// Also write the labeled dataset here.
    #[arg(long)]
    dataset_out: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DetectScoreArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    tokenizer: Option<PathBuf>,
    /// Labeled pairs as written by `detect-train --dataset-out`.
    #[arg(long, conflicts_with_all = ["summaries"])]
    pairs: Option<PathBuf>,
    #[arg(long, requires = "summaries")]
    corpus: Option<PathBuf>,
    #[arg(long)]
    summaries: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    summaries: PathBuf,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    detector: Option<PathBuf>,
    #[arg(long)]
    tokenizer: Option<PathBuf>,
    /// Plan literal the summaries were generated with; picks the headline metric.
    #[arg(long)]
    plan: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Plain-text table; defaults to `<out>.txt`.
    #[arg(long)]
    table: Option<PathBuf>,
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn load_tokenizer(path: &Path) -> Result<Tokenizer> {
    Tokenizer::load(path).with_context(|| format!("loading tokenizer {}", path.display()))
}

fn load_samples(path: &Path) -> Result<Vec<DialogueSample>> {
    load_corpus(path).with_context(|| format!("loading corpus {}", path.display()))
}

fn check_tokenizer(ck: &Checkpoint, tok: &Tokenizer, path: &Path) -> Result<()> {
    if ck.header.tokenizer_sha256 != tok.fingerprint() {
        bail!("checkpoint {} was trained with a different tokenizer", path.display());
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::SynthData { n, seed, out } => synth_data(n, seed, &out),
        Command::Split {
            corpus,
            ratios,
            seed,
            prefix,
        } => split(&existing(corpus)?, &ratios, seed, &prefix),
        Command::TrainTokenizer { corpus, merges, out } => {
            let corpus = existing(pick(corpus, &cfg.corpus, "corpus")?)?;
            let merges = merges.or(cfg.merges).unwrap_or(DEFAULT_MERGES);
            let samples = load_samples(&corpus)?;
            let tok = train_bpe(corpus_text(&samples), merges)?;
            tok.save(&out)?;
            println!(
                "tokenizer: {} merges, vocabulary {} -> {}",
                tok.merges().len(),
                tok.vocab_size(),
                out.display()
            );
            Ok(())
        }
        Command::Train(args) => train(&cfg, args),
        Command::Generate(args) => generate_cmd(&cfg, args),
        Command::DetectTrain(args) => detect_train(&cfg, args),
        Command::DetectScore(args) => detect_score(&cfg, args),
        Command::Augment {
            corpus,
            count,
            seed,
            out,
        } => {
            let corpus = existing(pick(corpus, &cfg.corpus, "corpus")?)?;
            let samples = load_samples(&corpus)?;
            let aug = augment_corpus(&samples, count, seed)?;
            let records: Vec<_> = aug.iter().map(|a| a.to_record()).collect();
            write_jsonl(&out, &records)?;
            if aug.len() < count {
                println!("augment: only {} of {count} requested samples were possible", aug.len());
            }
            println!("augment: {} samples -> {}", aug.len(), out.display());
            Ok(())
        }
        Command::Evaluate(args) => evaluate(&cfg, args),
        Command::Rouge { reference, hypothesis } => {
            let (r, h) = (tokenize(&reference), tokenize(&hypothesis));
            let out = json!({
                "rouge1": rouge_n(&r, &h, 1),
                "rouge2": rouge_n(&r, &h, 2),
                "rougeL": rouge_l(&r, &h),
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(())
        }
    }
}

fn synth_data(n: usize, seed: u64, out: &Path) -> Result<()> {
    let samples = synthesize_corpus(n, seed);
    write_corpus(out, &samples)?;
    let stats = if samples.is_empty() {
        json!({ "sample_count": 0 })
    } else {
        serde_json::to_value(corpus_stats(&samples, &WordCounter)?)?
    };
    let sidecar = with_suffix(out, ".stats.json");
    write_json(&sidecar, &stats)?;
    println!("synth-data: {n} samples (seed {seed}) -> {}", out.display());
    Ok(())
}

fn split(corpus: &Path, ratios: &str, seed: u64, prefix: &Path) -> Result<()> {
    let parts: Vec<f64> = ratios
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .context("ratios must be three comma-separated numbers")?;
    let [a, b, c] = parts[..] else {
        bail!("ratios must be three comma-separated numbers");
    };
    let samples = load_samples(corpus)?;
    let (train, valid, test) = split_corpus(&samples, (a, b, c), seed)?;
    for (name, part) in [("train", &train), ("valid", &valid), ("test", &test)] {
        let path = with_suffix(prefix, &format!(".{name}.jsonl"));
        write_corpus(&path, part)?;
        println!("split: {} {name} samples -> {}", part.len(), path.display());
    }
    Ok(())
}

fn train(cfg: &RunConfig, args: TrainArgs) -> Result<()> {
    let corpus = existing(pick(args.corpus, &cfg.corpus, "corpus")?)?;
    let tok_path = existing(pick(args.tokenizer, &cfg.tokenizer, "tokenizer")?)?;
    let out = pick(args.out, &cfg.checkpoint, "out")?;
    let valid_path = args.valid.or_else(|| cfg.valid_corpus.clone()).map(existing).transpose()?;
    let augmented = args.augmented.map(existing).transpose()?;
    let resume = args.resume.map(existing).transpose()?;

    let tok = load_tokenizer(&tok_path)?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.model.vocab_size = tok.vocab_size();
    if args.no_coref {
        train_cfg.model.gcn_layers = 0;
    }
    if let Some(s) = args.steps {
        train_cfg.steps = s;
    }
    if let Some(b) = args.batch_size {
        train_cfg.batch_size = b;
    }
    if let Some(s) = args.seed {
        train_cfg.seed = s;
        train_cfg.model.seed = s;
    }

    let mut samples = load_samples(&corpus)?;
    let base_count = samples.len();
    if let Some(p) = &augmented {
        samples.extend(load_samples(p)?);
    }
    let valid = match &valid_path {
        Some(p) => load_samples(p)?,
        None => Vec::new(),
    };

    let resume_state = match &resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            check_tokenizer(&ck, &tok, p)?;
            let model = Seq2Seq::from_checkpoint(&ck)?;
            if model.config != train_cfg.model {
                bail!("{} was trained with a different model configuration", p.display());
            }
            let opt = ck
                .optimizer()
                .with_context(|| format!("{} has no optimizer state", p.display()))?;
            Some((model, opt))
        }
        None => None,
    };

    let log_path = args.log.unwrap_or_else(|| with_suffix(&out, ".log.jsonl"));
    let log_file = fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    let mut log_w = std::io::BufWriter::new(log_file);
    let mut log_err: Option<std::io::Error> = None;
    println!(
        "train: {} samples ({} augmented), {} validation, coref {}, seed {}",
        samples.len(),
        samples.len() - base_count,
        valid.len(),
        if train_cfg.model.gcn_layers > 0 { "on" } else { "off" },
        train_cfg.seed
    );
    let report_every = (train_cfg.steps / 20).max(1);
    let outcome = train_summarizer(&samples, &valid, &tok, &train_cfg, resume_state, |ev| {
        if log_err.is_none() {
            let line = serde_json::to_string(ev).expect("event serializes");
            if let Err(e) = writeln!(log_w, "{line}") {
                log_err = Some(e);
            }
        }
        match ev {
            TrainEvent::Step(s) if (s.step + 1) % report_every == 0 => {
                println!("step {:>6}  loss {:.4}  |g| {:.3}  lr {:.2e}", s.step + 1, s.loss, s.grad_norm, s.learning_rate);
            }
            TrainEvent::Validation { step, rouge2_f1, best } => {
                println!("valid {step:>5}  ROUGE-2 F1 {rouge2_f1:.4}{}", if *best { "  (best)" } else { "" });
            }
            _ => {}
        }
    })?;
    if let Some(e) = log_err {
        return Err(e).with_context(|| format!("writing {}", log_path.display()));
    }
    log_w.flush()?;

    let extra = json!({
        "use_coref": train_cfg.model.gcn_layers > 0,
        "augmented": augmented.is_some(),
        "seed": train_cfg.seed,
        "best_step": outcome.best_step,
        "best_rouge2_f1": outcome.best_rouge2,
        "skipped_unplannable": outcome.skipped.len(),
    });
    let fp = tok.fingerprint();
    outcome.best.checkpoint(&fp, None, extra.clone()).save(&out)?;
    let last = with_suffix(&out, ".last");
    outcome.last.checkpoint(&fp, Some(&outcome.optimizer), extra).save(&last)?;
    if !outcome.skipped.is_empty() {
        println!("train: skipped {} samples without a plannable entity", outcome.skipped.len());
    }
    println!(
        "train: best step {} (ROUGE-2 F1 {:.4}) -> {}; final state -> {}",
        outcome.best_step,
        outcome.best_rouge2,
        out.display(),
        last.display()
    );
    Ok(())
}

fn generate_cmd(cfg: &RunConfig, args: GenerateArgs) -> Result<()> {
    let spec: PlanSpec = args.plan.parse()?;
    let ck_path = existing(pick(args.checkpoint, &cfg.checkpoint, "checkpoint")?)?;
    let tok_path = existing(pick(args.tokenizer, &cfg.tokenizer, "tokenizer")?)?;
    let corpus = existing(pick(args.corpus, &cfg.corpus, "corpus")?)?;
    let tok = load_tokenizer(&tok_path)?;
    let ck = Checkpoint::load(&ck_path).with_context(|| format!("reading checkpoint {}", ck_path.display()))?;
    check_tokenizer(&ck, &tok, &ck_path)?;
    let model = Seq2Seq::from_checkpoint(&ck)?;
    let samples = load_samples(&corpus)?;
    let mut decode = cfg.decode.clone();
    if let Some(b) = args.beam {
        decode.beam = b;
    }
    if let Some(m) = args.max_len {
        decode.max_len = m;
    }
    let (records, skips) = generate(&model, &tok, &samples, &spec, &decode, cfg.train.topology)?;
    write_jsonl(&args.out, &records)?;
    let skip_path = with_suffix(&args.out, ".skips.json");
    write_json(&skip_path, &skips)?;
    println!(
        "generate: {} summaries ({spec}), {} skipped -> {}",
        records.len(),
        skips.len(),
        args.out.display()
    );
    Ok(())
}

fn detector_config(cfg: &RunConfig, vocab_size: usize, seed: u64) -> ModelConfig {
    let mut m = cfg.detector_model.clone().unwrap_or_else(|| ModelConfig {
        dec_layers: 0,
        ..ModelConfig::default()
    });
    m.vocab_size = vocab_size;
    m.seed = seed;
    m
}

fn detect_train(cfg: &RunConfig, args: DetectTrainArgs) -> Result<()> {
    let corpus = existing(pick(args.corpus, &cfg.corpus, "corpus")?)?;
    let tok_path = existing(pick(args.tokenizer, &cfg.tokenizer, "tokenizer")?)?;
    let out = pick(args.out, &cfg.detector, "out")?;
    let tok = load_tokenizer(&tok_path)?;
    let samples = load_samples(&corpus)?;
    let mut training = cfg.detector_training.clone();
    if let Some(s) = args.seed {
        training.seed = s;
    }
    if let Some(s) = args.steps {
        training.steps = s;
    }
    let collection = NameCollection::from_corpus(&samples);
    let pairs = build_detector_dataset(&samples, &collection, training.seed)?;
    let neg = pairs.iter().filter(|p| p.label == Label::Inconsistent).count();
    println!(
        "detect-train: {} pairs ({} consistent, {neg} inconsistent), {} collection names",
        pairs.len(),
        pairs.len() - neg,
        collection.len()
    );
    if let Some(p) = &args.dataset_out {
        let records: Vec<LabeledRecord> = pairs.iter().map(|p| p.to_record()).collect();
        write_jsonl(p, &records)?;
    }
    let model_cfg = detector_config(cfg, tok.vocab_size(), training.seed);
    let every = (training.steps / 10).max(1);
    let det = train_detector(&pairs, &tok, model_cfg, &training, |s| {
        if (s.step + 1) % every == 0 {
            println!("step {:>6}  loss {:.4}", s.step + 1, s.loss);
        }
    })?;
    det.checkpoint(&tok.fingerprint(), None).save(&out)?;
    println!("detect-train: detector -> {}", out.display());
    Ok(())
}

fn load_detector(path: &Path, tok: &Tokenizer) -> Result<Detector> {
    let ck = Checkpoint::load(path).with_context(|| format!("reading detector {}", path.display()))?;
    check_tokenizer(&ck, tok, path)?;
    Ok(Detector::from_checkpoint(&ck)?)
}

fn detect_score(cfg: &RunConfig, args: DetectScoreArgs) -> Result<()> {
    let det_path = existing(pick(args.checkpoint, &cfg.detector, "checkpoint")?)?;
    let tok_path = existing(pick(args.tokenizer, &cfg.tokenizer, "tokenizer")?)?;
    let tok = load_tokenizer(&tok_path)?;
    let det = load_detector(&det_path, &tok)?;
    if let Some(pairs_path) = args.pairs {
        let text = fs::read_to_string(existing(pairs_path.clone())?)?;
        let mut rows = Vec::new();
        let (mut pred, mut gold) = (Vec::new(), Vec::new());
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let rec: LabeledRecord = serde_json::from_str(line)
                .with_context(|| format!("{} line {}", pairs_path.display(), i + 1))?;
            let summary = rec.sample.gold_summary.clone().unwrap_or_default();
            let (p, label) = score_consistency(&det, &tok, &rec.sample, &summary)?;
            pred.push(label);
            gold.push(rec.label);
            rows.push(json!({
                "id": rec.sample.id, "provenance": rec.provenance,
                "probability": p, "predicted": label, "label": rec.label,
            }));
        }
        write_jsonl(&args.out, &rows)?;
        let m = detection_metrics(&pred, &gold)?;
        println!(
            "detect-score: {} pairs  accuracy {:.4}  precision {:.4}  recall {:.4}  F1 {:.4}",
            m.count, m.accuracy, m.precision, m.recall, m.f1
        );
        write_json(&with_suffix(&args.out, ".metrics.json"), &m)?;
        return Ok(());
    }
    let corpus = existing(pick(args.corpus, &cfg.corpus, "corpus")?)?;
    let summaries_path = existing(args.summaries.context("pass --pairs or --summaries")?)?;
    let samples = load_samples(&corpus)?;
    let by_id = dialplan::corpus::by_id(&samples);
    let summaries = load_summaries(&summaries_path)?;
    let missing: Vec<String> = summaries.iter().filter(|s| !by_id.contains_key(s.id.as_str())).map(|s| s.id.clone()).collect();
    if !missing.is_empty() {
        return Err(dialplan::Error::Alignment(missing).into());
    }
    let mut rows = Vec::new();
    let mut consistent = 0usize;
    for s in &summaries {
        let (p, label) = score_consistency(&det, &tok, by_id[s.id.as_str()], &s.summary)?;
        consistent += usize::from(label == Label::Consistent);
        rows.push(json!({ "id": s.id, "probability": p, "predicted": label }));
    }
    write_jsonl(&args.out, &rows)?;
    println!(
        "detect-score: {} summaries, factual accuracy {:.4}",
        rows.len(),
        if rows.is_empty() { 0.0 } else { consistent as f64 / rows.len() as f64 }
    );
    Ok(())
}

fn evaluate(cfg: &RunConfig, args: EvaluateArgs) -> Result<()> {
    let corpus = existing(pick(args.corpus, &cfg.corpus, "corpus")?)?;
    let summaries = load_summaries(existing(args.summaries)?)?;
    let samples = load_samples(&corpus)?;
    let kind = args.plan.map(|p| p.parse::<PlanSpec>()).transpose()?.map(|s| s.kind());
    let detector_path = args.detector.or_else(|| cfg.detector.clone()).map(existing).transpose()?;
    let report = match detector_path {
        Some(dp) => {
            let tok_path = existing(pick(args.tokenizer, &cfg.tokenizer, "tokenizer")?)?;
            let tok = load_tokenizer(&tok_path)?;
            let det = load_detector(&dp, &tok)?;
            let bound = BoundDetector {
                detector: &det,
                tokenizer: &tok,
            };
            evaluate_run(&summaries, &samples, kind, Some(&bound as &dyn ConsistencyScorer))?
        }
        None => evaluate_run(&summaries, &samples, kind, None)?,
    };
    write_json(&args.out, &report)?;
    let table = report.to_table();
    let table_path = args.table.unwrap_or_else(|| with_suffix(&args.out, ".txt"));
    fs::write(&table_path, &table).with_context(|| format!("writing {}", table_path.display()))?;
    print!("{table}");
    Ok(())
}
