//! Name-level factual inconsistency: synthetic negatives, the labeled
//! detector dataset, and the consistency classifier.

mod detector;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{DialogueSample, EntityMention, Gender};
use crate::error::{Error, Result};
use crate::planning::extract_entities;
use crate::text;

pub use detector::{score_consistency, train_detector, BoundDetector, Detector, DetectorExample, DetectorTraining};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Inconsistent,
    Consistent,
}

impl Label {
    /// Class index used by the detector head.
    pub fn index(self) -> usize {
        match self {
            Label::Inconsistent => 0,
            Label::Consistent => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Gold,
    Swap,
    ReplaceSource,
    ReplaceCollection,
}

impl Provenance {
    pub const NEGATIVE: [Provenance; 3] = [Provenance::Swap, Provenance::ReplaceSource, Provenance::ReplaceCollection];

    pub fn label(self) -> Label {
        match self {
            Provenance::Gold => Label::Consistent,
            _ => Label::Inconsistent,
        }
    }
}

/// A dialogue with a candidate summary. `dialogue.gold_summary` keeps the
/// reference; `summary` is what gets judged.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPair {
    pub dialogue: DialogueSample,
    pub summary: String,
    pub label: Label,
    pub provenance: Provenance,
}

/// Corpus record with the candidate summary in the `summary` field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRecord {
    #[serde(flatten)]
    pub sample: DialogueSample,
    pub label: Label,
    pub provenance: Provenance,
}

impl LabeledPair {
    pub fn to_record(&self) -> LabeledRecord {
        let mut sample = self.dialogue.clone();
        sample.gold_summary = Some(self.summary.clone());
        let names: BTreeSet<String> = extract_entities(&self.dialogue).into_iter().map(|e| e.name).collect();
        sample.entity_spans.summary = text::words(&self.summary)
            .into_iter()
            .enumerate()
            .filter(|(_, w)| names.contains(*w))
            .map(|(pos, w)| EntityMention {
                name: w.to_string(),
                pos,
            })
            .collect();
        LabeledRecord {
            sample,
            label: self.label,
            provenance: self.provenance,
        }
    }
}

/// One name occurrence in a summary, as a byte range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Occurrence {
    pub name: String,
    pub start: usize,
    pub end: usize,
    /// Pre-token index of the first token.
    pub token: usize,
}

/// Non-overlapping occurrences of `names` in `summary`, longer names first
/// where two would overlap.
pub fn name_occurrences(summary: &str, names: &BTreeSet<String>) -> Vec<Occurrence> {
    let toks = text::pretokenize(summary);
    let words: Vec<&str> = toks.iter().map(|t| t.text).collect();
    let mut by_len: Vec<(&String, Vec<&str>)> = names.iter().map(|n| (n, text::words(n))).collect();
    by_len.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(b.0)));
    let mut taken = vec![false; toks.len()];
    let mut out = Vec::new();
    for (name, needle) in by_len {
        for i in text::find_token_seq(&words, &needle) {
            let span = i..i + needle.len();
            if span.clone().any(|k| taken[k]) {
                continue;
            }
            span.clone().for_each(|k| taken[k] = true);
            out.push(Occurrence {
                name: name.clone(),
                start: toks[i].start,
                end: toks[span.end - 1].end,
                token: i,
            });
        }
    }
    out.sort_by_key(|o| o.start);
    out
}

/// Replaces byte ranges of `s`; ranges must not overlap.
fn splice(s: &str, mut edits: Vec<(usize, usize, &str)>) -> String {
    edits.sort_by_key(|e| e.0);
    let mut out = String::with_capacity(s.len());
    let mut at = 0;
    for (start, end, with) in edits {
        out.push_str(&s[at..start]);
        out.push_str(with);
        at = end;
    }
    out.push_str(&s[at..]);
    out
}

fn entity_names(sample: &DialogueSample) -> BTreeSet<String> {
    extract_entities(sample).into_iter().map(|e| e.name).collect()
}

fn gold(sample: &DialogueSample) -> Option<&str> {
    sample.gold_summary.as_deref()
}

/// True when the pre-tokens strictly between `a` and `b` are only "and" or
/// "or" plus optional commas, with at least one conjunction.
fn coordinated(words: &[&str], a: &Occurrence, a_len: usize, b: &Occurrence) -> bool {
    let between = &words[a.token + a_len..b.token];
    !between.is_empty()
        && between.iter().all(|w| matches!(*w, "and" | "or" | ","))
        && between.iter().any(|w| matches!(*w, "and" | "or"))
}

/// Occurrence pairs of distinct names that may be swapped.
pub fn swap_candidates(summary: &str, names: &BTreeSet<String>) -> Vec<(Occurrence, Occurrence)> {
    let occ = name_occurrences(summary, names);
    let words = text::words(summary);
    let mut out = Vec::new();
    for (i, a) in occ.iter().enumerate() {
        for b in &occ[i + 1..] {
            if a.name == b.name {
                continue;
            }
            let a_len = text::words(&a.name).len();
            if coordinated(&words, a, a_len, b) {
                continue;
            }
            out.push((a.clone(), b.clone()));
        }
    }
    out
}

/// Exchanges one seeded-uniformly chosen eligible pair of name occurrences.
pub fn perturb_swap<R: Rng>(sample: &DialogueSample, rng: &mut R) -> Option<String> {
    let summary = gold(sample)?;
    let cands = swap_candidates(summary, &entity_names(sample));
    let (a, b) = cands.choose(rng)?;
    Some(splice(summary, vec![(a.start, a.end, &b.name), (b.start, b.end, &a.name)]))
}

fn replace_one<R: Rng>(
    summary: &str,
    occ: &[Occurrence],
    candidates: impl Fn(&Occurrence) -> Vec<String>,
    rng: &mut R,
) -> Option<String> {
    let options: Vec<(&Occurrence, Vec<String>)> = occ
        .iter()
        .map(|o| (o, candidates(o)))
        .filter(|(_, c)| !c.is_empty())
        .collect();
    let (o, names) = options.choose(rng)?;
    let with = names.choose(rng)?;
    Some(splice(summary, vec![(o.start, o.end, with)]))
}

fn gendered(g: Gender) -> bool {
    g != Gender::Neutral
}

/// Replaces one summary name with a different same-gender name from the dialogue.
pub fn perturb_replace_source<R: Rng>(sample: &DialogueSample, rng: &mut R) -> Option<String> {
    let summary = gold(sample)?;
    let entities = extract_entities(sample);
    let names: BTreeSet<String> = entities.iter().map(|e| e.name.clone()).collect();
    let occ = name_occurrences(summary, &names);
    let in_dialogue: Vec<(&str, Gender)> = entities
        .iter()
        .filter(|e| e.first_dialogue_pos.is_some())
        .map(|e| (e.name.as_str(), e.gender))
        .collect();
    replace_one(
        summary,
        &occ,
        |o| {
            let g = sample.gender_of(&o.name);
            if !gendered(g) {
                return Vec::new();
            }
            in_dialogue
                .iter()
                .filter(|(n, ng)| *ng == g && *n != o.name)
                .map(|(n, _)| n.to_string())
                .collect()
        },
        rng,
    )
}

/// Person names seen in a training split, with their genders.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NameCollection(pub BTreeMap<String, Gender>);

impl NameCollection {
    /// Union of the entity names of `samples`; the first gender seen wins.
    pub fn from_corpus(samples: &[DialogueSample]) -> Self {
        let mut map = BTreeMap::new();
        for s in samples {
            for e in extract_entities(s) {
                map.entry(e.name).or_insert(e.gender);
            }
        }
        NameCollection(map)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Replaces one summary name with a same-gender collection name that never
/// occurs in the dialogue.
pub fn perturb_replace_collection<R: Rng>(
    sample: &DialogueSample,
    collection: &NameCollection,
    rng: &mut R,
) -> Option<String> {
    let summary = gold(sample)?;
    let occ = name_occurrences(summary, &entity_names(sample));
    let dialogue = sample.linearize().tokens;
    let absent = |name: &str| text::find_token_seq(&dialogue, &text::words(name)).is_empty();
    replace_one(
        summary,
        &occ,
        |o| {
            let g = sample.gender_of(&o.name);
            if !gendered(g) {
                return Vec::new();
            }
            collection
                .0
                .iter()
                .filter(|(n, ng)| **ng == g && **n != o.name && absent(n))
                .map(|(n, _)| n.clone())
                .collect()
        },
        rng,
    )
}

pub fn perturb<R: Rng>(
    sample: &DialogueSample,
    strategy: Provenance,
    collection: &NameCollection,
    rng: &mut R,
) -> Option<String> {
    match strategy {
        Provenance::Gold => gold(sample).map(str::to_string),
        Provenance::Swap => perturb_swap(sample, rng),
        Provenance::ReplaceSource => perturb_replace_source(sample, rng),
        Provenance::ReplaceCollection => perturb_replace_collection(sample, collection, rng),
    }
}

/// One gold positive per sample plus one negative where some strategy
/// applies. Strategies rotate round-robin, skipping inapplicable ones.
pub fn build_detector_dataset(
    corpus: &[DialogueSample],
    collection: &NameCollection,
    seed: u64,
) -> Result<Vec<LabeledPair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cursor = 0usize;
    let mut out = Vec::with_capacity(corpus.len() * 2);
    let mut negatives = 0;
    for sample in corpus {
        let Some(g) = gold(sample) else { continue };
        out.push(LabeledPair {
            dialogue: sample.clone(),
            summary: g.to_string(),
            label: Label::Consistent,
            provenance: Provenance::Gold,
        });
        for k in 0..3 {
            let strategy = Provenance::NEGATIVE[(cursor + k) % 3];
            if let Some(s) = perturb(sample, strategy, collection, &mut rng) {
                out.push(LabeledPair {
                    dialogue: sample.clone(),
                    summary: s,
                    label: Label::Inconsistent,
                    provenance: strategy,
                });
                negatives += 1;
                cursor = (cursor + k + 1) % 3;
                break;
            }
        }
    }
    if negatives == 0 {
        return Err(Error::Dataset("no sample admits a perturbation".into()));
    }
    Ok(out)
}

/// Binary detection quality with "inconsistent" as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub count: usize,
}

pub fn detection_metrics(predicted: &[Label], gold: &[Label]) -> Result<DetectionMetrics> {
    if predicted.len() != gold.len() || gold.is_empty() {
        return Err(Error::Invalid(format!(
            "{} predictions for {} gold labels",
            predicted.len(),
            gold.len()
        )));
    }
    let pos = Label::Inconsistent;
    let (mut tp, mut fp, mut fneg, mut correct) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &g) in predicted.iter().zip(gold) {
        correct += usize::from(p == g);
        match (p == pos, g == pos) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(DetectionMetrics {
        accuracy: ratio(correct, gold.len()),
        precision,
        recall,
        f1,
        count: gold.len(),
    })
}
