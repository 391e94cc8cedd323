//! Dialogue records, their canonical linearization, JSON-lines I/O, dataset
//! statistics, splitting and the synthetic corpus generator.

mod gazetteer;
mod synth;

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text;

pub use gazetteer::{gazetteer_gender, FEMALE_NAMES, MALE_NAMES};
pub use synth::synthesize_corpus;

/// Surface form of the turn separator in the linearized dialogue.
pub const TURN_TOKEN: &str = "<turn>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    #[serde(rename = "f")]
    Female,
    #[serde(rename = "m")]
    Male,
    #[serde(rename = "n")]
    Neutral,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: String,
    pub text: String,
}

impl Turn {
    pub fn new(speaker: impl Into<String>, text: impl Into<String>) -> Self {
        Turn {
            speaker: speaker.into(),
            text: text.into(),
        }
    }
}

/// A named-entity occurrence at a word-level token position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub name: String,
    pub pos: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpans {
    #[serde(default)]
    pub dialogue: Vec<EntityMention>,
    #[serde(default)]
    pub summary: Vec<EntityMention>,
}

/// Half-open token span `[start, end)`, serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span(pub usize, pub usize);

impl Span {
    pub fn start(&self) -> usize {
        self.0
    }
    pub fn end(&self) -> usize {
        self.1
    }
    pub fn len(&self) -> usize {
        self.1.saturating_sub(self.0)
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One multi-turn conversation with its optional gold summary and
/// annotations. Dialogue positions index [`DialogueSample::linearize`];
/// summary positions index the pre-tokenized summary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueSample {
    pub id: String,
    pub turns: Vec<Turn>,
    #[serde(rename = "summary", default)]
    pub gold_summary: Option<String>,
    #[serde(rename = "entities", default)]
    pub entity_spans: EntitySpans,
    #[serde(rename = "coref", default)]
    pub coref_clusters: Vec<Vec<Span>>,
    #[serde(rename = "genders", default)]
    pub name_genders: BTreeMap<String, Gender>,
}

/// Word-level view of a dialogue: `speaker : text` per turn, turns separated
/// by [`TURN_TOKEN`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Linearization {
    pub tokens: Vec<String>,
    /// Index of the first token of each turn (its speaker token).
    pub turn_starts: Vec<usize>,
    /// Index of the first text token of each turn.
    pub text_starts: Vec<usize>,
}

impl Linearization {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Turn index owning token `pos`, or `None` for separators.
    pub fn turn_of(&self, pos: usize) -> Option<usize> {
        if pos >= self.tokens.len() || self.tokens[pos] == TURN_TOKEN {
            return None;
        }
        Some(self.turn_starts.partition_point(|&s| s <= pos) - 1)
    }
}

pub fn linearize(turns: &[Turn]) -> Linearization {
    let mut tokens = Vec::new();
    let mut turn_starts = Vec::with_capacity(turns.len());
    let mut text_starts = Vec::with_capacity(turns.len());
    for (i, turn) in turns.iter().enumerate() {
        if i > 0 {
            tokens.push(TURN_TOKEN.to_string());
        }
        turn_starts.push(tokens.len());
        tokens.extend(text::words(&turn.speaker).into_iter().map(String::from));
        tokens.push(":".to_string());
        text_starts.push(tokens.len());
        tokens.extend(text::words(&turn.text).into_iter().map(String::from));
    }
    Linearization {
        tokens,
        turn_starts,
        text_starts,
    }
}

impl DialogueSample {
    pub fn linearize(&self) -> Linearization {
        linearize(&self.turns)
    }

    pub fn summary_tokens(&self) -> Vec<String> {
        self.gold_summary
            .as_deref()
            .map(|s| text::words(s).into_iter().map(String::from).collect())
            .unwrap_or_default()
    }

    /// Plain dialogue text, one `speaker: text` line per turn.
    pub fn dialogue_text(&self) -> String {
        self.turns
            .iter()
            .map(|t| format!("{}: {}", t.speaker, t.text))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn gender_of(&self, name: &str) -> Gender {
        self.name_genders
            .get(name)
            .copied()
            .or_else(|| gazetteer_gender(name))
            .unwrap_or(Gender::Neutral)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |message: String| Error::Invariant {
            id: self.id.clone(),
            message,
        };
        if self.id.is_empty() {
            return Err(bad("empty id".into()));
        }
        for (i, t) in self.turns.iter().enumerate() {
            if t.speaker.trim().is_empty() {
                return Err(bad(format!("turn {i} has an empty speaker")));
            }
            if t.text.trim().is_empty() {
                return Err(bad(format!("turn {i} has empty text")));
            }
        }
        let lin = self.linearize();
        let n = lin.len();
        for m in &self.entity_spans.dialogue {
            if m.pos >= n {
                return Err(bad(format!(
                    "dialogue entity {} at {} outside {n} tokens",
                    m.name, m.pos
                )));
            }
        }
        let sn = self.summary_tokens().len();
        for m in &self.entity_spans.summary {
            if m.pos >= sn {
                return Err(bad(format!(
                    "summary entity {} at {} outside {sn} tokens",
                    m.name, m.pos
                )));
            }
        }
        for (ci, cluster) in self.coref_clusters.iter().enumerate() {
            if cluster.len() < 2 {
                return Err(bad(format!("coref cluster {ci} has fewer than 2 mentions")));
            }
            for span in cluster {
                if span.start() >= span.end() || span.end() > n {
                    return Err(bad(format!(
                        "coref cluster {ci} span [{}, {}) outside {n} tokens",
                        span.start(),
                        span.end()
                    )));
                }
                let turn = lin.turn_of(span.start());
                if turn.is_none() || (span.start()..span.end()).any(|p| lin.turn_of(p) != turn) {
                    return Err(bad(format!(
                        "coref cluster {ci} span [{}, {}) crosses a turn boundary",
                        span.start(),
                        span.end()
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<DialogueSample>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Schema {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: DialogueSample = serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: i + 1,
            message: e.to_string(),
        })?;
        sample.validate()?;
        out.push(sample);
    }
    Ok(out)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<DialogueSample>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file))
}

/// Writes any serializable records as JSON lines.
pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_corpus(path: impl AsRef<Path>, samples: &[DialogueSample]) -> Result<()> {
    write_jsonl(path, samples)
}

/// Counts tokens for length statistics.
pub trait TokenCounter {
    fn count(&self, text: &str) -> usize;
}

/// Counts word-level pre-tokens.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordCounter;

impl TokenCounter for WordCounter {
    fn count(&self, text: &str) -> usize {
        text::pretokenize(text).len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub sample_count: usize,
    pub turn_mean: f64,
    pub turn_std: f64,
    pub dialogue_len_mean: f64,
    pub dialogue_len_std: f64,
    pub summary_len_mean: f64,
    pub summary_len_std: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.max(0.0).sqrt())
}

/// Population mean/std of turn counts, dialogue lengths and summary lengths.
/// Dialogue length counts the `speaker: text` content of every turn; samples
/// without a summary are left out of the summary statistics.
pub fn corpus_stats(samples: &[DialogueSample], counter: &dyn TokenCounter) -> Result<CorpusStats> {
    if samples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let turns: Vec<f64> = samples.iter().map(|s| s.turns.len() as f64).collect();
    let dialogue: Vec<f64> = samples
        .iter()
        .map(|s| {
            s.turns
                .iter()
                .map(|t| counter.count(&format!("{}: {}", t.speaker, t.text)))
                .sum::<usize>() as f64
        })
        .collect();
    let summary: Vec<f64> = samples
        .iter()
        .filter_map(|s| s.gold_summary.as_deref())
        .map(|s| counter.count(s) as f64)
        .collect();
    let (turn_mean, turn_std) = mean_std(&turns);
    let (dialogue_len_mean, dialogue_len_std) = mean_std(&dialogue);
    let (summary_len_mean, summary_len_std) = mean_std(&summary);
    Ok(CorpusStats {
        sample_count: samples.len(),
        turn_mean,
        turn_std,
        dialogue_len_mean,
        dialogue_len_std,
        summary_len_mean,
        summary_len_std,
    })
}

/// Seeded shuffle followed by an exact three-way partition. Sizes are
/// `floor(ratio * n)` for train and valid; test takes the remainder.
pub fn split_corpus<T: Clone>(
    samples: &[T],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let (a, b, c) = ratios;
    if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::BadRatios(ratios));
    }
    let n = samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    // small epsilon so that 0.8 * 10 lands on 8 rather than 7.999...
    let n_train = ((a * n as f64) + 1e-9).floor() as usize;
    let n_valid = (((b * n as f64) + 1e-9).floor() as usize).min(n - n_train);
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    Ok((
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_valid]),
        pick(&order[n_train + n_valid..]),
    ))
}

/// Index samples by id.
pub fn by_id(samples: &[DialogueSample]) -> HashMap<&str, &DialogueSample> {
    samples.iter().map(|s| (s.id.as_str(), s)).collect()
}
