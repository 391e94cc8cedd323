//! Summarizer training with validation-based checkpoint selection, and
//! plan-conditioned generation.

use serde::{Deserialize, Serialize};

use crate::corpus::DialogueSample;
use crate::coref::Topology;
use crate::error::{Error, Result};
use crate::eval::{rouge_n, tokenize, SummaryRecord};
use crate::model::{
    batch_indices, beam_decode, greedy_decode, make_example, make_input, train_step, AdamW, Example, ExampleOptions,
    ModelConfig, OptimConfig, Seq2Seq, TrainStats,
};
use crate::planning::{make_plan, Plan, PlanSpec};
use crate::tokenizer::Tokenizer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeOptions {
    /// 1 selects greedy search.
    pub beam: usize,
    pub max_len: usize,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions { beam: 4, max_len: 80 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub steps: u64,
    pub batch_size: usize,
    /// Seeds batch order and dropout.
    pub seed: u64,
    /// Validate every this many steps (and after the last); 0 validates only at the end.
    pub eval_every: u64,
    /// Validation samples used for checkpoint selection; 0 uses all.
    pub eval_samples: usize,
    pub eval_decode: DecodeOptions,
    pub topology: Topology,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            optim: OptimConfig::default(),
            steps: 4000,
            batch_size: 16,
            seed: 0,
            eval_every: 1000,
            eval_samples: 100,
            eval_decode: DecodeOptions { beam: 1, max_len: 80 },
            topology: Topology::Chain,
        }
    }
}

impl TrainConfig {
    /// Coreference fusion is on exactly when the model has GCN layers.
    pub fn example_options(&self) -> ExampleOptions {
        ExampleOptions {
            use_coref: self.model.gcn_layers > 0,
            topology: self.topology,
        }
    }
}

/// Progress events emitted while training.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TrainEvent {
    Step(TrainStats),
    Validation { step: u64, rouge2_f1: f64, best: bool },
}

pub struct TrainOutcome {
    /// Parameters with the best validation ROUGE-2 F1.
    pub best: Seq2Seq,
    pub best_step: u64,
    pub best_rouge2: f64,
    /// Model and optimizer after the final step, for resuming.
    pub last: Seq2Seq,
    pub optimizer: AdamW,
    pub skipped: Vec<String>,
}

/// Occurrence-planned training examples; samples that cannot be planned are
/// reported by id instead.
pub fn training_examples(
    samples: &[DialogueSample],
    tokenizer: &Tokenizer,
    opts: ExampleOptions,
) -> Result<(Vec<Example>, Vec<String>)> {
    let mut out = Vec::with_capacity(samples.len());
    let mut skipped = Vec::new();
    for s in samples {
        match make_example(s, &PlanSpec::Occurrence, tokenizer, opts) {
            Ok(ex) => out.push(ex),
            Err(Error::Unplannable { .. }) => skipped.push(s.id.clone()),
            Err(e) => return Err(e),
        }
    }
    Ok((out, skipped))
}

/// Mean sentence-level ROUGE-2 F1 of occurrence-planned generations.
pub fn validation_rouge2(
    model: &Seq2Seq,
    tokenizer: &Tokenizer,
    samples: &[DialogueSample],
    decode: &DecodeOptions,
    opts: ExampleOptions,
) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for s in samples {
        let Ok(plan) = make_plan(s, &PlanSpec::Occurrence) else { continue };
        let hyp = summarize(model, tokenizer, s, &plan, opts, decode)?;
        let gold = tokenize(s.gold_summary.as_deref().unwrap_or_default());
        total += rouge_n(&gold, &tokenize(&hyp), 2).f1;
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

/// Trains from scratch, or continues `resume`, keeping the parameters that
/// score best on `valid`.
pub fn train_summarizer(
    train: &[DialogueSample],
    valid: &[DialogueSample],
    tokenizer: &Tokenizer,
    config: &TrainConfig,
    resume: Option<(Seq2Seq, AdamW)>,
    mut log: impl FnMut(&TrainEvent),
) -> Result<TrainOutcome> {
    let opts = config.example_options();
    let (examples, skipped) = training_examples(train, tokenizer, opts)?;
    if examples.is_empty() {
        return Err(Error::Dataset("no trainable samples".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let (mut model, mut opt) = match resume {
        Some(pair) => pair,
        None => {
            let model = Seq2Seq::new(config.model.clone())?;
            let opt = AdamW::new(config.optim.clone(), &model.params);
            (model, opt)
        }
    };
    let valid = if config.eval_samples > 0 && valid.len() > config.eval_samples {
        &valid[..config.eval_samples]
    } else {
        valid
    };
    let mut best: Option<(Seq2Seq, u64, f64)> = None;
    let mut validate = |model: &Seq2Seq, step: u64, log: &mut dyn FnMut(&TrainEvent)| -> Result<()> {
        if valid.is_empty() {
            best = Some((model.clone(), step, 0.0));
            return Ok(());
        }
        let r2 = validation_rouge2(model, tokenizer, valid, &config.eval_decode, opts)?;
        let improved = best.as_ref().is_none_or(|b| r2 > b.2);
        if improved {
            best = Some((model.clone(), step, r2));
        }
        log(&TrainEvent::Validation {
            step,
            rouge2_f1: r2,
            best: improved,
        });
        Ok(())
    };
    while opt.t < config.steps {
        let idx = batch_indices(examples.len(), config.batch_size, config.seed, opt.t);
        let batch: Vec<&Example> = idx.iter().map(|&i| &examples[i]).collect();
        let stats = train_step(&mut model, &batch, &mut opt, config.seed)?;
        log(&TrainEvent::Step(stats));
        if config.eval_every > 0 && opt.t % config.eval_every == 0 && opt.t < config.steps {
            validate(&model, opt.t, &mut log)?;
        }
    }
    validate(&model, opt.t, &mut log)?;
    let (best, best_step, best_rouge2) = best.expect("validated at least once");
    Ok(TrainOutcome {
        best,
        best_step,
        best_rouge2,
        last: model,
        optimizer: opt,
        skipped,
    })
}

/// Decodes one summary for `sample` under `plan`.
pub fn summarize(
    model: &Seq2Seq,
    tokenizer: &Tokenizer,
    sample: &DialogueSample,
    plan: &Plan,
    opts: ExampleOptions,
    decode: &DecodeOptions,
) -> Result<String> {
    let (input, adj) = make_input(sample, plan, tokenizer, opts)?;
    let ids = if decode.beam <= 1 {
        greedy_decode(model, &input, adj.as_ref(), decode.max_len)?
    } else {
        beam_decode(model, &input, adj.as_ref(), decode.beam, decode.max_len)?
    };
    tokenizer.decode(&ids)
}

/// Model-appropriate example options: coreference input iff the model fuses it.
pub fn inference_options(model: &Seq2Seq, topology: Topology) -> ExampleOptions {
    ExampleOptions {
        use_coref: model.config.gcn_layers > 0,
        topology,
    }
}

/// Per-sample generation failure that does not abort the run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Skip {
    pub id: String,
    pub reason: String,
}

/// Generates a summary for every sample the plan applies to. Unknown focus
/// names and unplannable samples are skipped; occurrence planning without a
/// gold summary is a hard error.
pub fn generate(
    model: &Seq2Seq,
    tokenizer: &Tokenizer,
    samples: &[DialogueSample],
    spec: &PlanSpec,
    decode: &DecodeOptions,
    topology: Topology,
) -> Result<(Vec<SummaryRecord>, Vec<Skip>)> {
    let opts = inference_options(model, topology);
    let mut out = Vec::with_capacity(samples.len());
    let mut skipped = Vec::new();
    for s in samples {
        if matches!(spec, PlanSpec::Occurrence) && s.gold_summary.is_none() {
            return Err(Error::Unplannable {
                id: s.id.clone(),
                reason: "occurrence planning needs a gold summary".into(),
            });
        }
        let plan = match make_plan(s, spec) {
            Ok(p) => p,
            Err(e @ (Error::UnknownEntity { .. } | Error::Unplannable { .. })) => {
                skipped.push(Skip {
                    id: s.id.clone(),
                    reason: e.to_string(),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let summary = summarize(model, tokenizer, s, &plan, opts, decode)?;
        out.push(SummaryRecord {
            id: s.id.clone(),
            summary,
            plan: Some(plan.names().iter().map(|n| n.to_string()).collect()),
        });
    }
    Ok((out, skipped))
}
