//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any fails.
//!
//! Set `DIALPLAN_ACCEPTANCE=1,2,7` to run a subset.

use std::collections::{BTreeMap, BTreeSet};
use std::error::Error as StdError;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use dialplan::augment::{augment_corpus, eligible_pairs, entity_exchange};
use dialplan::coref::{build_coref_graph, normalize_adjacency};
use dialplan::corpus::{gazetteer_gender, synthesize_corpus, DialogueSample, Gender, Span, FEMALE_NAMES, MALE_NAMES};
use dialplan::eval::{evaluate_run, lcs_len, rouge_l, rouge_n, tokenize, RougeScore};
use dialplan::faithfulness::{
    build_detector_dataset, detection_metrics, perturb_replace_collection, perturb_replace_source, perturb_swap,
    score_consistency, swap_candidates, train_detector, BoundDetector, Detector, DetectorTraining, Label,
    NameCollection,
};
use dialplan::model::{
    batch_loss, grad_check, make_example, train_step, AdamW, Example, ExampleOptions, ModelConfig, OptimConfig,
    Seq2Seq,
};
use dialplan::pipeline::{generate, inference_options, summarize, train_summarizer, DecodeOptions, TrainConfig};
use dialplan::planning::{make_plan, PlanKind, PlanSpec};
use dialplan::tokenizer::{corpus_text, train_bpe, Tokenizer};
use dialplan::Error;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<Verdict, Box<dyn StdError>>;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Outcome {
    Ok(Verdict {
        pass,
        detail: detail.into(),
    })
}

/// Summarizer training steps for the conditioning run.
const CONDITIONING_STEPS: u64 = 7500;
/// Summarizer training steps for each of the nine ablation runs.
const ABLATION_STEPS: u64 = 2500;
const AUGMENTED_SAMPLES: usize = 1000;
/// Synthetic dialogues behind the detector dataset, each giving a gold and a perturbed pair.
const DETECTOR_DIALOGUES: usize = 10_000;

struct Data {
    train: Vec<DialogueSample>,
    valid: Vec<DialogueSample>,
    test: Vec<DialogueSample>,
    tok: Tokenizer,
}

impl Data {
    fn new() -> Result<Self, Error> {
        let train = synthesize_corpus(2000, 1);
        let tok = train_bpe(corpus_text(&train), 800)?;
        Ok(Data {
            train,
            valid: synthesize_corpus(100, 2),
            test: synthesize_corpus(200, 3),
            tok,
        })
    }
}

#[derive(Default)]
struct Shared {
    data: Option<Data>,
    detector: Option<Detector>,
}

impl Shared {
    fn data(&mut self) -> Result<&Data, Error> {
        if self.data.is_none() {
            self.data = Some(Data::new()?);
        }
        Ok(self.data.as_ref().unwrap())
    }
}

/// Whitespace words with surrounding punctuation removed.
fn plain_words(s: &str) -> Vec<&str> {
    s.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|w| !w.is_empty())
        .collect()
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

// ---------------------------------------------------------------- criterion 1

fn is_subsequence(needle: &[&String], hay: &[String]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|n| it.any(|h| h == *n))
}

fn brute_force_lcs(a: &[String], b: &[String]) -> usize {
    (0u32..1 << b.len())
        .filter(|mask| {
            let picked: Vec<&String> = (0..b.len()).filter(|i| mask >> i & 1 == 1).map(|i| &b[i]).collect();
            is_subsequence(&picked, a)
        })
        .map(|mask| mask.count_ones() as usize)
        .max()
        .unwrap_or(0)
}

fn metric_oracles() -> Outcome {
    let start = Instant::now();
    // (reference, hypothesis, n-gram order or 0 for LCS, precision, recall),
    // all counted by hand.
    let cases: &[(&str, &str, usize, f64, f64)] = &[
        ("the cat sat on the mat", "the cat the mat", 1, 1.0, 4.0 / 6.0),
        ("a b c", "a b c", 1, 1.0, 1.0),
        ("a b", "c d", 1, 0.0, 0.0),
        ("a a a", "a", 1, 1.0, 1.0 / 3.0),
        ("a", "a a a", 1, 1.0 / 3.0, 1.0),
        ("a b c d", "d c b a", 1, 1.0, 1.0),
        ("The Cat", "the cat", 1, 1.0, 1.0),
        ("a b c d e", "a x y", 1, 1.0 / 3.0, 1.0 / 5.0),
        ("", "", 1, 1.0, 1.0),
        ("a", "", 1, 0.0, 0.0),
        ("", "a", 1, 0.0, 0.0),
        ("a a b b", "a b b b", 1, 3.0 / 4.0, 3.0 / 4.0),
        ("a b.", "a b", 1, 1.0 / 2.0, 1.0 / 2.0),
        ("a b c d", "a b d", 2, 1.0 / 2.0, 1.0 / 3.0),
        ("a b", "a b", 2, 1.0, 1.0),
        ("a b a b", "a b", 2, 1.0, 1.0 / 3.0),
        ("a b c", "c b a", 2, 0.0, 0.0),
        ("x y z w", "y z w x", 2, 2.0 / 3.0, 2.0 / 3.0),
        ("a b c d e f", "a b x d e f", 2, 3.0 / 5.0, 3.0 / 5.0),
        ("a a a a", "a a", 2, 1.0, 1.0 / 3.0),
        ("a b c d", "a b c", 3, 1.0, 1.0 / 2.0),
        ("a b c d", "a c b d", 0, 3.0 / 4.0, 3.0 / 4.0),
        ("a b c", "x y", 0, 0.0, 0.0),
        ("a b c d e", "a e", 0, 1.0, 2.0 / 5.0),
        ("a b c b d a b", "b d c a b a", 0, 4.0 / 6.0, 4.0 / 7.0),
        ("a b", "b a", 0, 1.0 / 2.0, 1.0 / 2.0),
        ("a a a", "a a", 0, 1.0, 2.0 / 3.0),
        ("police killed the gunman", "the gunman police killed", 0, 1.0 / 2.0, 1.0 / 2.0),
        ("x", "x y z", 0, 1.0 / 3.0, 1.0),
        ("", "", 0, 1.0, 1.0),
    ];
    let mut failures = Vec::new();
    let score = |r: &str, h: &str, n: usize| -> RougeScore {
        let (r, h) = (tokenize(r), tokenize(h));
        if n == 0 {
            rouge_l(&r, &h)
        } else {
            rouge_n(&r, &h, n)
        }
    };
    for &(r, h, n, p, rc) in cases {
        let got = score(r, h, n);
        let want_f = if r.is_empty() && h.is_empty() { 1.0 } else { f1(p, rc) };
        let close = |a: f64, b: f64| (a - b).abs() < 1e-9;
        if !(close(got.precision, p) && close(got.recall, rc) && close(got.f1, want_f)) {
            failures.push(format!("{r:?}/{h:?} n={n}: got {got:?}"));
        }
    }
    // F values stated alongside the worked examples.
    for (r, h, n, f) in [
        ("the cat sat on the mat", "the cat the mat", 1, 0.8),
        ("a b c d", "a b d", 2, 0.4),
        ("a b c d", "a c b d", 0, 0.75),
    ] {
        if (score(r, h, n).f1 - f).abs() >= 1e-9 {
            failures.push(format!("{r:?}/{h:?} n={n}: F1 is not {f}"));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let alphabet = ["a", "b", "c"];
    let random = |rng: &mut ChaCha8Rng| -> Vec<String> {
        let len = rng.gen_range(0..=8);
        (0..len).map(|_| alphabet[rng.gen_range(0..3)].to_string()).collect()
    };
    for _ in 0..200 {
        let (a, b) = (random(&mut rng), random(&mut rng));
        let brute = brute_force_lcs(&a, &b);
        if lcs_len(&a, &b) != brute {
            failures.push(format!("LCS {a:?} {b:?}: dp {} brute {brute}", lcs_len(&a, &b)));
        }
        if !a.is_empty() && !b.is_empty() {
            let s = rouge_l(&a, &b);
            if (s.precision - brute as f64 / b.len() as f64).abs() >= 1e-9
                || (s.recall - brute as f64 / a.len() as f64).abs() >= 1e-9
            {
                failures.push(format!("ROUGE-L {a:?} {b:?}: {s:?}"));
            }
        }
    }
    let elapsed = start.elapsed();
    let mut detail = format!("{} hand cases, 200 brute-force LCS pairs, {:.2} s", cases.len() + 3, secs(elapsed));
    if let Some(f) = failures.first() {
        detail += &format!("; {} mismatches, first: {f}", failures.len());
    }
    verdict(failures.is_empty() && elapsed < Duration::from_secs(5), detail)
}

// ---------------------------------------------------------------- criterion 2

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let corpus = synthesize_corpus(4, 5);
    let tok = train_bpe(corpus_text(&corpus), 200)?;
    let exs = corpus[..2]
        .iter()
        .map(|s| make_example(s, &PlanSpec::Occurrence, &tok, ExampleOptions::default()))
        .collect::<Result<Vec<Example>, _>>()?;
    let cfg = ModelConfig {
        enc_layers: 1,
        dec_layers: 1,
        gcn_layers: 1,
        d_model: 8,
        heads: 2,
        ffn_dim: 16,
        dropout: 0.0,
        vocab_size: tok.vocab_size(),
        seed: 3,
        ..Default::default()
    };
    let mut model = Seq2Seq::new(cfg)?;
    let batch: Vec<&Example> = exs.iter().collect();
    let rep = grad_check(&mut model, &batch, 1e-4)?;
    let elapsed = start.elapsed();
    let graph = rep.max_rel_error_graph.unwrap_or(f64::INFINITY);
    let pass = rep.max_rel_error < 1e-4
        && rep.max_rel_error_transformer < 1e-4
        && graph < 1e-4
        && rep.entries_at_kinks * 100 <= rep.entries_checked
        && elapsed < Duration::from_secs(60);
    verdict(
        pass,
        format!(
            "max rel error {:.2e} (transformer {:.2e}, graph {:.2e}) over {} entries, {} at ReLU kinks, {:.1} s",
            rep.max_rel_error,
            rep.max_rel_error_transformer,
            graph,
            rep.entries_checked,
            rep.entries_at_kinks,
            secs(elapsed)
        ),
    )
}

// ---------------------------------------------------------------- criterion 3

/// Index of the largest entry, lowest index on ties.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn token_accuracy(model: &Seq2Seq, exs: &[Example]) -> Result<f64, Error> {
    let (mut right, mut total) = (0usize, 0usize);
    for ex in exs {
        let logits = model.logits(ex)?;
        for (i, &t) in ex.target.iter().enumerate() {
            let row = logits.row(i).to_vec();
            right += usize::from(argmax(&row) == t as usize);
            total += 1;
        }
    }
    Ok(right as f64 / total as f64)
}

fn overfit() -> Outcome {
    let start = Instant::now();
    let corpus = synthesize_corpus(16, 21);
    let tok = train_bpe(corpus_text(&corpus), 800)?;
    let opts = ExampleOptions::default();
    let exs = corpus
        .iter()
        .map(|s| make_example(s, &PlanSpec::Occurrence, &tok, opts))
        .collect::<Result<Vec<Example>, _>>()?;
    let cfg = ModelConfig {
        dropout: 0.0,
        vocab_size: tok.vocab_size(),
        seed: 1,
        ..Default::default()
    };
    let mut model = Seq2Seq::new(cfg)?;
    let mut opt = AdamW::new(
        OptimConfig {
            lr_transformer: 1e-3,
            ..Default::default()
        },
        &model.params,
    );
    let batch: Vec<&Example> = exs.iter().collect();
    let (mut loss, mut acc, mut reached) = (f64::INFINITY, 0.0, None);
    for step in 1..=2000u64 {
        train_step(&mut model, &batch, &mut opt, 0)?;
        if step % 25 == 0 {
            loss = batch_loss(&model, &batch)?;
            acc = token_accuracy(&model, &exs)?;
            if loss < 0.05 && acc >= 0.99 {
                reached = Some(step);
                break;
            }
        }
    }
    let elapsed = start.elapsed();
    let detail = format!(
        "loss {loss:.4}, token accuracy {:.2}% {} at d_model 64, {:.0} s",
        acc * 100.0,
        reached.map_or("not reached in 2000 steps".to_string(), |s| format!("reached at step {s}")),
        secs(elapsed)
    );
    verdict(reached.is_some() && elapsed < Duration::from_secs(600), detail)
}

// ---------------------------------------------------------------- criterion 4

fn summarizer_config(tok: &Tokenizer, seed: u64, coref: bool, steps: u64) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.model.vocab_size = tok.vocab_size();
    cfg.model.seed = seed;
    cfg.model.gcn_layers = usize::from(coref);
    cfg.seed = seed;
    cfg.steps = steps;
    cfg.eval_every = steps / 5;
    cfg.optim.lr_transformer = 1e-3;
    cfg.optim.decay_steps = steps;
    cfg
}

fn is_person(w: &str) -> bool {
    MALE_NAMES.contains(&w) || FEMALE_NAMES.contains(&w)
}

fn conditioning(shared: &mut Shared) -> Outcome {
    let start = Instant::now();
    let d = shared.data()?;
    let cfg = summarizer_config(&d.tok, 0, true, CONDITIONING_STEPS);
    let out = train_summarizer(&d.train, &d.valid, &d.tok, &cfg, None, |_| {})?;
    let model = &out.best;
    let opts = inference_options(model, cfg.topology);
    let greedy = DecodeOptions { beam: 1, max_len: 80 };
    let mut rng = ChaCha8Rng::seed_from_u64(4);

    let (mut focus_hits, mut focus_n) = (0usize, 0usize);
    let (mut first_hits, mut first_n) = (0usize, 0usize);
    let (mut coverage, mut comp_n) = (0.0, 0usize);
    for s in &d.test {
        let comp = make_plan(s, &PlanSpec::Comprehensive)?;
        let names: Vec<String> = comp.names().iter().map(|n| n.to_string()).collect();
        let hyp = summarize(model, &d.tok, s, &comp, opts, &greedy)?;
        let words: BTreeSet<&str> = plain_words(&hyp).into_iter().collect();
        coverage += names.iter().filter(|n| words.contains(n.as_str())).count() as f64 / names.len() as f64;
        comp_n += 1;

        let focus = names.choose(&mut rng).expect("comprehensive plans are non-empty").clone();
        let plan = make_plan(s, &PlanSpec::Focus(focus.clone()))?;
        let hyp = summarize(model, &d.tok, s, &plan, opts, &greedy)?;
        focus_hits += usize::from(plain_words(&hyp).contains(&focus.as_str()));
        focus_n += 1;

        let plan = match make_plan(s, &PlanSpec::Occurrence) {
            Ok(p) => p,
            Err(Error::Unplannable { .. }) => continue,
            Err(e) => return Err(e.into()),
        };
        let hyp = summarize(model, &d.tok, s, &plan, opts, &greedy)?;
        let first = plain_words(&hyp).into_iter().find(|w| is_person(w));
        first_hits += usize::from(first == Some(plan.names()[0]));
        first_n += 1;
    }
    let focus = focus_hits as f64 / focus_n as f64;
    let first = first_hits as f64 / first_n as f64;
    let cov = coverage / comp_n as f64;
    let elapsed = start.elapsed();
    verdict(
        focus >= 0.95 && first >= 0.90 && cov >= 0.90 && elapsed <= Duration::from_secs(3600),
        format!(
            "focus mention {focus:.3} (n={focus_n}), first entity {first:.3} (n={first_n}), \
             comprehensive coverage {cov:.3} (n={comp_n}); best step {}, {:.0} s",
            out.best_step,
            secs(elapsed)
        ),
    )
}

// ---------------------------------------------------------------- criterion 5

fn ablation(shared: &mut Shared) -> Outcome {
    let start = Instant::now();
    if shared.detector.is_none() {
        let (det, _, _) = fit_detector(shared.data()?)?;
        shared.detector = Some(det);
    }
    let d = shared.data.as_ref().unwrap();
    let det = shared.detector.as_ref().unwrap();
    let bound = BoundDetector {
        detector: det,
        tokenizer: &d.tok,
    };
    let variants = ["ctrl", "ctrl+coref", "ctrl+coref+da"];
    let mut r2: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut fa: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for seed in 0..3u64 {
        let augmented: Vec<DialogueSample> = augment_corpus(&d.train, AUGMENTED_SAMPLES, seed)?
            .into_iter()
            .map(|a| a.sample)
            .collect();
        for v in variants {
            let cfg = summarizer_config(&d.tok, seed, v != "ctrl", ABLATION_STEPS);
            let mut train = d.train.clone();
            if v == "ctrl+coref+da" {
                train.extend(augmented.iter().cloned());
            }
            let out = train_summarizer(&train, &d.valid, &d.tok, &cfg, None, |_| {})?;
            let (records, _) = generate(
                &out.best,
                &d.tok,
                &d.test,
                &PlanSpec::Occurrence,
                &DecodeOptions::default(),
                cfg.topology,
            )?;
            let report = evaluate_run(&records, &d.test, Some(PlanKind::Occurrence), Some(&bound))?;
            println!(
                "  seed {seed} {v:<14} ROUGE-2 F1 {:.4}  factual accuracy {:.4}",
                report.rouge2.f1,
                report.factual_accuracy.unwrap_or(f64::NAN)
            );
            r2.entry(v).or_default().push(report.rouge2.f1);
            fa.entry(v).or_default().push(report.factual_accuracy.unwrap_or(f64::NAN));
        }
    }
    let mean = |m: &BTreeMap<&str, Vec<f64>>, v: &str| m[v].iter().sum::<f64>() / m[v].len() as f64;
    let mut pass = true;
    let mut parts = Vec::new();
    for (metric, m) in [("ROUGE-2 F1", &r2), ("factual accuracy", &fa)] {
        let base = mean(m, "ctrl");
        let coref = mean(m, "ctrl+coref");
        let da = mean(m, "ctrl+coref+da");
        pass &= coref - base >= 0.0 && da - base >= 0.0;
        parts.push(format!(
            "{metric}: ctrl {base:.4}, +coref {coref:.4} ({:+.4}), +coref+da {da:.4} ({:+.4})",
            coref - base,
            da - base
        ));
    }
    verdict(
        pass,
        format!("{}; 3-seed means, {:.0} s", parts.join("; "), secs(start.elapsed())),
    )
}

// ---------------------------------------------------------------- criterion 6

/// Detector trained on pairs from its own synthetic dialogues, with held-out
/// pairs from unseen dialogues. Returns the held-out predictions and gold labels.
fn fit_detector(d: &Data) -> Result<(Detector, Vec<Label>, Vec<Label>), Box<dyn StdError>> {
    let corpus = synthesize_corpus(DETECTOR_DIALOGUES, 5);
    let collection = NameCollection::from_corpus(&corpus);
    let pairs = build_detector_dataset(&corpus, &collection, 0)?;
    let config = ModelConfig {
        dec_layers: 0,
        vocab_size: d.tok.vocab_size(),
        ..Default::default()
    };
    let det = train_detector(&pairs, &d.tok, config, &DetectorTraining::default(), |_| {})?;
    let held = build_detector_dataset(&synthesize_corpus(500, 4), &collection, 1)?;
    let mut predicted = Vec::with_capacity(held.len());
    for p in &held {
        predicted.push(score_consistency(&det, &d.tok, &p.dialogue, &p.summary)?.1);
    }
    let count = |l: Label| pairs.iter().chain(&held).filter(|p| p.label == l).count();
    println!(
        "  detector dataset: {} consistent, {} inconsistent ({} training pairs, {} held-out)",
        count(Label::Consistent),
        count(Label::Inconsistent),
        pairs.len(),
        held.len()
    );
    let gold = held.iter().map(|p| p.label).collect();
    Ok((det, predicted, gold))
}

fn detector(shared: &mut Shared) -> Outcome {
    let start = Instant::now();
    let (det, predicted, gold) = fit_detector(shared.data()?)?;
    shared.detector = Some(det);
    let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
    for (p, g) in predicted.iter().zip(&gold) {
        match (p, g) {
            (Label::Inconsistent, Label::Inconsistent) => tp += 1.0,
            (Label::Inconsistent, Label::Consistent) => fp += 1.0,
            (Label::Consistent, Label::Inconsistent) => fneg += 1.0,
            _ => {}
        }
    }
    let f = f1(tp / (tp + fp), tp / (tp + fneg));
    let lib = detection_metrics(&predicted, &gold)?;
    let positives = gold.iter().filter(|&&g| g == Label::Consistent).count();
    let negatives = gold.len() - positives;
    verdict(
        f >= 0.85 && (lib.f1 - f).abs() < 1e-12,
        format!(
            "held-out F1 {f:.4} (inconsistent class; accuracy {:.4}) on {positives} consistent + {negatives} perturbed pairs, {:.0} s",
            lib.accuracy,
            secs(start.elapsed())
        ),
    )
}

// ---------------------------------------------------------------- criterion 7

fn gender(name: &str) -> Option<Gender> {
    gazetteer_gender(name).filter(|g| *g != Gender::Neutral)
}

/// Independent reading of the coordination rule over whitespace tokens.
fn oracle_coordinated(between: &[&str]) -> bool {
    !between.is_empty()
        && between.iter().all(|w| matches!(*w, "and" | "or" | ","))
        && between.iter().any(|w| matches!(*w, "and" | "or"))
}

fn invariant_suites() -> Outcome {
    let start = Instant::now();
    let mut report = Vec::new();
    let mut pass = true;
    let corpus: Vec<DialogueSample> = (0..4).flat_map(|seed| synthesize_corpus(800, 100 + seed)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    // Swap keeps the word multiset and only moves names.
    let (mut cases, mut bad) = (0, 0);
    for s in &corpus {
        let Some(new) = perturb_swap(s, &mut rng) else { continue };
        let old = s.gold_summary.as_deref().unwrap();
        let (ow, nw) = (old.split_whitespace().collect::<Vec<_>>(), new.split_whitespace().collect::<Vec<_>>());
        let (mut a, mut b) = (ow.clone(), nw.clone());
        a.sort_unstable();
        b.sort_unstable();
        let moved_only_names = ow.len() == nw.len()
            && ow.iter().zip(&nw).all(|(x, y)| x == y || (is_person(x) && is_person(y)));
        cases += 1;
        if a != b || new == old || !moved_only_names {
            bad += 1;
        }
    }
    pass &= bad == 0 && cases >= 1000;
    report.push(format!("swap multiset {}/{cases}", cases - bad));

    // Swap candidates are exactly the non-coordinated pairs of distinct names.
    let names: Vec<&str> = MALE_NAMES.iter().chain(FEMALE_NAMES.iter()).copied().take(12).collect();
    let fillers = ["and", "or", ",", "met", "the", "at", "park", "with", "."];
    let (mut cases, mut bad, mut coordinated_seen) = (0, 0, 0);
    while cases < 1000 {
        let len = rng.gen_range(3..12);
        let toks: Vec<&str> = (0..len)
            .map(|_| {
                if rng.gen_bool(0.45) {
                    names[rng.gen_range(0..4)]
                } else {
                    fillers[rng.gen_range(0..fillers.len())]
                }
            })
            .collect();
        let summary = toks.join(" ");
        let pos: Vec<usize> = (0..toks.len()).filter(|&i| names.contains(&toks[i])).collect();
        let mut expect = BTreeSet::new();
        for (k, &i) in pos.iter().enumerate() {
            for &j in &pos[k + 1..] {
                if toks[i] == toks[j] {
                    continue;
                }
                if oracle_coordinated(&toks[i + 1..j]) {
                    coordinated_seen += 1;
                } else {
                    expect.insert((i, j));
                }
            }
        }
        let set: BTreeSet<String> = names.iter().map(|n| n.to_string()).collect();
        let got: BTreeSet<(usize, usize)> = swap_candidates(&summary, &set)
            .into_iter()
            .map(|(a, b)| (a.token, b.token))
            .collect();
        cases += 1;
        if got != expect {
            bad += 1;
        }
    }
    pass &= bad == 0 && coordinated_seen > 0;
    report.push(format!(
        "coordination {}/{cases} ({coordinated_seen} coordinated pairs excluded)",
        cases - bad
    ));

    // Replacements keep gender.
    let collection = NameCollection::from_corpus(&corpus);
    for (label, from_collection) in [("replace-source", false), ("replace-collection", true)] {
        let (mut cases, mut bad) = (0, 0);
        for s in &corpus {
            let new = if from_collection {
                perturb_replace_collection(s, &collection, &mut rng)
            } else {
                perturb_replace_source(s, &mut rng)
            };
            let Some(new) = new else { continue };
            let old = s.gold_summary.as_deref().unwrap();
            let (ow, nw): (Vec<&str>, Vec<&str>) = (old.split_whitespace().collect(), new.split_whitespace().collect());
            let diff: Vec<(&str, &str)> = ow.iter().zip(&nw).filter(|(x, y)| x != y).map(|(x, y)| (*x, *y)).collect();
            let dialogue: BTreeSet<String> = s.linearize().tokens.into_iter().collect();
            cases += 1;
            let ok = ow.len() == nw.len()
                && diff.len() == 1
                && gender(diff[0].0).is_some()
                && gender(diff[0].0) == gender(diff[0].1)
                && dialogue.contains(diff[0].1) != from_collection;
            if !ok {
                bad += 1;
            }
        }
        pass &= bad == 0 && cases >= 1000;
        report.push(format!("{label} gender {}/{cases}", cases - bad));
    }

    // Exchange is an involution.
    let (mut cases, mut bad) = (0, 0);
    for s in &corpus {
        for (a, b) in eligible_pairs(s) {
            let once = entity_exchange(s, (&a, &b))?.sample;
            let twice = entity_exchange(&once, (&a, &b))?.sample;
            cases += 1;
            if twice != *s || once == *s {
                bad += 1;
            }
        }
    }
    pass &= bad == 0 && cases >= 1000;
    report.push(format!("exchange involution {}/{cases}", cases - bad));

    verdict(pass, format!("{}; {:.1} s", report.join(", "), secs(start.elapsed())))
}

// ---------------------------------------------------------------- criterion 8

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), Box<dyn StdError>> {
    let out = Command::new(env!("CARGO_BIN_EXE_dialplan"))
        .args(args)
        .current_dir(dir)
        .output()?;
    if !out.status.success() {
        return Err(format!("dialplan {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)).into());
    }
    Ok(())
}

const DETERMINISM_CONFIG: &str = r#"{
  "train": {
    "model": { "d_model": 16, "heads": 2, "ffn_dim": 32, "enc_layers": 1, "dec_layers": 1 },
    "steps": 60, "eval_every": 20, "eval_samples": 5, "seed": 3
  },
  "detector_model": { "d_model": 16, "heads": 2, "ffn_dim": 32, "enc_layers": 1, "dec_layers": 0 },
  "detector_training": { "steps": 20 }
}"#;

const DETERMINISM_OUTPUTS: [&str; 9] = [
    "corpus.jsonl",
    "corpus.jsonl.stats.json",
    "tok.json",
    "model.ckpt",
    "model.ckpt.last",
    "model.ckpt.log.jsonl",
    "gen.jsonl",
    "report.json",
    "report.json.txt",
];

fn pipeline_run(dir: &Path) -> Result<(), Box<dyn StdError>> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("cfg.json"), DETERMINISM_CONFIG)?;
    let steps: [&[&str]; 8] = [
        &["synth-data", "--n", "60", "--seed", "5", "--out", "corpus.jsonl"],
        &["split", "--corpus", "corpus.jsonl", "--seed", "5", "--prefix", "data"],
        &["train-tokenizer", "--corpus", "data.train.jsonl", "--merges", "150", "--out", "tok.json"],
        &[
            "--config", "cfg.json", "train", "--corpus", "data.train.jsonl", "--valid", "data.valid.jsonl",
            "--tokenizer", "tok.json", "--out", "model.ckpt",
        ],
        &[
            "--config", "cfg.json", "detect-train", "--corpus", "data.train.jsonl", "--tokenizer", "tok.json",
            "--seed", "2", "--out", "det.ckpt",
        ],
        &[
            "generate", "--checkpoint", "model.ckpt", "--tokenizer", "tok.json", "--corpus", "data.test.jsonl",
            "--plan", "comprehensive", "--beam", "2", "--out", "gen.jsonl",
        ],
        &[
            "evaluate", "--summaries", "gen.jsonl", "--corpus", "data.test.jsonl", "--detector", "det.ckpt",
            "--tokenizer", "tok.json", "--plan", "comprehensive", "--out", "report.json",
        ],
        &["rouge", "--reference", "a b", "--hypothesis", "a b"],
    ];
    for args in steps {
        run_cli(dir, args)?;
    }
    Ok(())
}

fn determinism() -> Outcome {
    let start = Instant::now();
    let root: PathBuf = std::env::temp_dir().join(format!("dialplan-acceptance-{}", std::process::id()));
    let _ = fs::remove_dir_all(&root);
    let (a, b) = (root.join("a"), root.join("b"));
    pipeline_run(&a)?;
    pipeline_run(&b)?;
    let mut differing = Vec::new();
    for f in DETERMINISM_OUTPUTS {
        if fs::read(a.join(f))? != fs::read(b.join(f))? {
            differing.push(f);
        }
    }
    let _ = fs::remove_dir_all(&root);
    verdict(
        differing.is_empty(),
        format!(
            "{} outputs compared across two synth-data/train/generate/evaluate runs, differing: {:?}, {:.1} s",
            DETERMINISM_OUTPUTS.len(),
            differing,
            secs(start.elapsed())
        ),
    )
}

// ---------------------------------------------------------------- criterion 9

fn random_clusters(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<Span>> {
    let mut free: Vec<usize> = (0..n).collect();
    free.shuffle(rng);
    let mut used = vec![false; n];
    let mut clusters = Vec::new();
    for _ in 0..rng.gen_range(0..4) {
        let mut cluster = Vec::new();
        for _ in 0..rng.gen_range(1..4) {
            let Some(start) = free.pop() else { break };
            if used[start] {
                continue;
            }
            let len = if start + 1 < n && !used[start + 1] && rng.gen_bool(0.3) { 2 } else { 1 };
            (start..start + len).for_each(|k| used[k] = true);
            cluster.push(Span(start, start + len));
        }
        if !cluster.is_empty() {
            clusters.push(cluster);
        }
    }
    clusters
}

fn copy_shared(from: &Seq2Seq, to: &mut Seq2Seq) -> Result<(), String> {
    for i in 0..to.params.len() {
        let name = to.params.name(i).to_string();
        let j = from
            .params
            .names()
            .iter()
            .position(|n| *n == name)
            .ok_or(format!("{name} missing from the fused model"))?;
        let v = from.params.value(j).clone();
        to.params.value_mut(i).assign(&v);
    }
    Ok(())
}

fn coref_properties() -> Outcome {
    let start = Instant::now();
    let corpus = synthesize_corpus(30, 6);
    let tok = train_bpe(corpus_text(&corpus), 200)?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut asym, mut formula, mut nonneutral) = (0, 0, 0);
    for k in 0..100u64 {
        let n = rng.gen_range(2..=40);
        let graph = build_coref_graph(&random_clusters(&mut rng, n), n)?;
        let a_hat = normalize_adjacency(&graph).to_dense();
        if a_hat != a_hat.t() {
            asym += 1;
        }
        let mut a = graph.adjacency();
        for i in 0..n {
            a[[i, i]] += 1.0;
        }
        let deg: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
        for i in 0..n {
            for j in 0..n {
                let want = a[[i, j]] / (deg[i] * deg[j]).sqrt();
                if (a_hat[[i, j]] - want).abs() > 1e-12 {
                    formula += 1;
                }
            }
        }

        let heads = [1, 2, 4][rng.gen_range(0..3)];
        let cfg = ModelConfig {
            enc_layers: rng.gen_range(1..=2),
            dec_layers: rng.gen_range(1..=2),
            gcn_layers: rng.gen_range(1..=3),
            d_model: heads * 2 * rng.gen_range(1..=3),
            heads,
            ffn_dim: rng.gen_range(4..=24),
            dropout: 0.0,
            vocab_size: tok.vocab_size(),
            seed: k,
            ..Default::default()
        };
        let mut fused = Seq2Seq::new(cfg.clone())?;
        for &w in &fused.encoder.gcn.clone() {
            fused.params.value_mut(w).fill(0.0);
        }
        let mut plain = Seq2Seq::new(ModelConfig { gcn_layers: 0, ..cfg })?;
        copy_shared(&fused, &mut plain)?;
        let sample = &corpus[rng.gen_range(0..corpus.len())];
        let ex = make_example(sample, &PlanSpec::Occurrence, &tok, ExampleOptions::default())?;
        let bare = Example {
            adjacency: None,
            ..ex.clone()
        };
        if fused.logits(&ex)? != plain.logits(&bare)? {
            nonneutral += 1;
        }
    }
    verdict(
        asym == 0 && formula == 0 && nonneutral == 0,
        format!(
            "100 random graphs/configurations: {asym} asymmetric, {formula} entries off the normalization formula, \
             {nonneutral} zero-weight GCN outputs differing from the unfused model; {:.1} s",
            secs(start.elapsed())
        ),
    )
}

// ---------------------------------------------------------------- driver

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn main() -> ExitCode {
    let only: Option<BTreeSet<u32>> = std::env::var("DIALPLAN_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let titles: BTreeMap<u32, &str> = [
        (1, "metric oracles"),
        (2, "gradient correctness"),
        (3, "overfit sanity"),
        (4, "conditioning behavior"),
        (5, "ablation direction"),
        (6, "consistency detector"),
        (7, "perturbation and augmentation invariants"),
        (8, "CLI determinism"),
        (9, "coreference graph and GCN properties"),
    ]
    .into_iter()
    .collect();
    let mut shared = Shared::default();
    let mut results = BTreeMap::new();
    // Cheap checks first; the detector is trained before the ablation uses it.
    for id in [1, 2, 9, 7, 8, 3, 6, 4, 5] {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let outcome = match id {
            1 => metric_oracles(),
            2 => gradient_check(),
            3 => overfit(),
            4 => conditioning(&mut shared),
            5 => ablation(&mut shared),
            6 => detector(&mut shared),
            7 => invariant_suites(),
            8 => determinism(),
            _ => coref_properties(),
        };
        let v = outcome.unwrap_or_else(|e| Verdict {
            pass: false,
            detail: format!("error: {e}"),
        });
        let line = format!(
            "{} criterion {id} ({}): {}",
            if v.pass { "PASS" } else { "FAIL" },
            titles[&id],
            v.detail
        );
        println!("{line}");
        results.insert(id, (v.pass, line));
    }
    println!("\nacceptance summary");
    for (_, line) in results.values() {
        println!("{line}");
    }
    if results.values().all(|(p, _)| *p) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
