//! ROUGE, novel word rate, factual accuracy and run reports.
//!
//! All metrics work on lowercased whitespace tokens so that scores do not
//! depend on the sub-word tokenizer.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::DialogueSample;
use crate::error::{Error, Result};
use crate::planning::PlanKind;

pub fn tokenize(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_lowercase).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    /// Scores from an overlap count and the two totals. Both totals zero
    /// counts as a perfect match; one of them zero as no match.
    pub fn from_counts(overlap: usize, hyp_total: usize, ref_total: usize) -> Self {
        match (hyp_total, ref_total) {
            (0, 0) => RougeScore {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
            },
            (0, _) | (_, 0) => RougeScore::default(),
            _ => {
                let p = overlap as f64 / hyp_total as f64;
                let r = overlap as f64 / ref_total as f64;
                let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
                RougeScore {
                    precision: p,
                    recall: r,
                    f1,
                }
            }
        }
    }
}

fn ngrams<S: AsRef<str>>(toks: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut out = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *out.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    out
}

/// Clipped n-gram overlap. `n` must be at least 1.
pub fn rouge_n<S: AsRef<str>>(reference: &[S], hypothesis: &[S], n: usize) -> RougeScore {
    assert!(n >= 1, "n-gram order must be positive");
    let r = ngrams(reference, n);
    let h = ngrams(hypothesis, n);
    let overlap = h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum();
    RougeScore::from_counts(overlap, h.values().sum(), r.values().sum())
}

/// Longest common subsequence length, `O(|a|·|b|)` time and `O(|b|)` space.
pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> RougeScore {
    RougeScore::from_counts(lcs_len(reference, hypothesis), hypothesis.len(), reference.len())
}

/// Fraction of the summary's token types that never occur in the dialogue.
pub fn novel_word_rate<S: AsRef<str>>(dialogue: &[S], summary: &[S]) -> Result<f64> {
    let types: BTreeSet<&str> = summary.iter().map(AsRef::as_ref).collect();
    if types.is_empty() {
        return Err(Error::Invalid("novel word rate of an empty summary".into()));
    }
    let source: BTreeSet<&str> = dialogue.iter().map(AsRef::as_ref).collect();
    let novel = types.iter().filter(|t| !source.contains(*t)).count();
    Ok(novel as f64 / types.len() as f64)
}

/// Anything that can judge a summary against its dialogue.
pub trait ConsistencyScorer {
    fn is_consistent(&self, dialogue: &DialogueSample, summary: &str) -> Result<bool>;
}

/// Share of pairs judged consistent.
pub fn factual_accuracy(scorer: &dyn ConsistencyScorer, pairs: &[(&DialogueSample, &str)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Invalid("factual accuracy over no pairs".into()));
    }
    let mut yes = 0usize;
    for (d, s) in pairs {
        if scorer.is_consistent(d, s)? {
            yes += 1;
        }
    }
    Ok(yes as f64 / pairs.len() as f64)
}

/// One line of a summaries file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub id: String,
    pub summary: String,
    /// Entity names of the plan the summary was generated from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<Vec<String>>,
}

pub fn read_summaries<R: BufRead>(reader: R) -> Result<Vec<SummaryRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Schema {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn load_summaries(path: impl AsRef<Path>) -> Result<Vec<SummaryRecord>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_summaries(std::io::BufReader::new(f))
}

/// Which ROUGE component a plan kind is judged by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Headline {
    F1,
    Recall,
    Precision,
}

impl Headline {
    pub fn for_plan(kind: Option<PlanKind>) -> Self {
        match kind {
            Some(PlanKind::Comprehensive) => Headline::Recall,
            Some(PlanKind::Focus) => Headline::Precision,
            _ => Headline::F1,
        }
    }

    pub fn pick(self, s: &RougeScore) -> f64 {
        match self {
            Headline::F1 => s.f1,
            Headline::Recall => s.recall,
            Headline::Precision => s.precision,
        }
    }
}

/// How well generations follow their plans.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlMetrics {
    /// Mean fraction of plan entities mentioned in the summary.
    pub plan_coverage: f64,
    /// Share of summaries whose first personal entity is the plan's first.
    pub first_entity_match: f64,
    /// Share of summaries mentioning every plan entity.
    pub full_coverage: f64,
}

/// Fraction of `plan` names that occur as whole tokens in `summary`.
pub fn plan_coverage(summary: &str, plan: &[String]) -> f64 {
    if plan.is_empty() {
        return 1.0;
    }
    let toks: BTreeSet<&str> = crate::text::words(summary).into_iter().collect();
    plan.iter().filter(|n| toks.contains(n.as_str())).count() as f64 / plan.len() as f64
}

/// First token of `summary` that is one of `names`.
pub fn first_entity<'a>(summary: &str, names: &'a BTreeSet<String>) -> Option<&'a str> {
    crate::text::words(summary)
        .into_iter()
        .find_map(|w| names.get(w).map(String::as_str))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sample_count: usize,
    pub plan_kind: Option<PlanKind>,
    pub rouge1: RougeScore,
    pub rouge2: RougeScore,
    pub rouge_l: RougeScore,
    pub headline: Headline,
    pub novel_word_rate: f64,
    pub factual_accuracy: Option<f64>,
    pub control: Option<ControlMetrics>,
}

fn mean_score(xs: &[RougeScore]) -> RougeScore {
    let n = xs.len() as f64;
    RougeScore {
        precision: xs.iter().map(|s| s.precision).sum::<f64>() / n,
        recall: xs.iter().map(|s| s.recall).sum::<f64>() / n,
        f1: xs.iter().map(|s| s.f1).sum::<f64>() / n,
    }
}

/// Scores `summaries` against the gold summaries of `corpus`. Per-sample
/// scores are averaged without weighting, in id order.
pub fn evaluate_run(
    summaries: &[SummaryRecord],
    corpus: &[DialogueSample],
    plan_kind: Option<PlanKind>,
    detector: Option<&dyn ConsistencyScorer>,
) -> Result<EvalReport> {
    let by_id: HashMap<&str, &DialogueSample> = corpus.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut missing = Vec::new();
    let mut rows: BTreeMap<&str, (&SummaryRecord, &DialogueSample)> = BTreeMap::new();
    for rec in summaries {
        match by_id.get(rec.id.as_str()) {
            Some(s) if s.gold_summary.is_some() => {
                if rows.insert(rec.id.as_str(), (rec, s)).is_some() {
                    return Err(Error::Invalid(format!("duplicate summary id {}", rec.id)));
                }
            }
            _ => missing.push(rec.id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Alignment(missing));
    }
    if rows.is_empty() {
        return Err(Error::Invalid("no summaries to evaluate".into()));
    }
    let (mut r1, mut r2, mut rl, mut novel) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (mut cov, mut first, mut full, mut planned) = (0.0, 0usize, 0usize, 0usize);
    for (rec, sample) in rows.values() {
        let gold = tokenize(sample.gold_summary.as_deref().unwrap_or_default());
        let hyp = tokenize(&rec.summary);
        r1.push(rouge_n(&gold, &hyp, 1));
        r2.push(rouge_n(&gold, &hyp, 2));
        rl.push(rouge_l(&gold, &hyp));
        if !hyp.is_empty() {
            novel.push(novel_word_rate(&tokenize(&sample.dialogue_text()), &hyp)?);
        }
        if let Some(plan) = rec.plan.as_ref().filter(|p| !p.is_empty()) {
            planned += 1;
            let c = plan_coverage(&rec.summary, plan);
            cov += c;
            if c == 1.0 {
                full += 1;
            }
            let names: BTreeSet<String> = crate::planning::extract_entities(sample)
                .into_iter()
                .map(|e| e.name)
                .chain(plan.iter().cloned())
                .collect();
            if first_entity(&rec.summary, &names) == Some(plan[0].as_str()) {
                first += 1;
            }
        }
    }
    let factual_accuracy = match detector {
        Some(d) => {
            let pairs: Vec<(&DialogueSample, &str)> = rows.values().map(|(r, s)| (*s, r.summary.as_str())).collect();
            Some(factual_accuracy(d, &pairs)?)
        }
        None => None,
    };
    let control = (planned > 0).then(|| ControlMetrics {
        plan_coverage: cov / planned as f64,
        first_entity_match: first as f64 / planned as f64,
        full_coverage: full as f64 / planned as f64,
    });
    Ok(EvalReport {
        sample_count: rows.len(),
        plan_kind,
        rouge1: mean_score(&r1),
        rouge2: mean_score(&r2),
        rouge_l: mean_score(&rl),
        headline: Headline::for_plan(plan_kind),
        novel_word_rate: if novel.is_empty() {
            0.0
        } else {
            novel.iter().sum::<f64>() / novel.len() as f64
        },
        factual_accuracy,
        control,
    })
}

impl EvalReport {
    /// Aligned plain-text rendering.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let kind = self.plan_kind.map_or("-".to_string(), |k| k.to_string());
        let _ = writeln!(s, "samples: {}   plan: {}   headline: {:?}", self.sample_count, kind, self.headline);
        let _ = writeln!(s, "{:<10} {:>9} {:>9} {:>9}", "metric", "P", "R", "F1");
        for (name, r) in [("ROUGE-1", &self.rouge1), ("ROUGE-2", &self.rouge2), ("ROUGE-L", &self.rouge_l)] {
            let _ = writeln!(s, "{:<10} {:>9.4} {:>9.4} {:>9.4}", name, r.precision, r.recall, r.f1);
        }
        let _ = writeln!(s, "{:<22} {:>9.4}", "novel word rate", self.novel_word_rate);
        if let Some(a) = self.factual_accuracy {
            let _ = writeln!(s, "{:<22} {:>9.4}", "factual accuracy", a);
        }
        if let Some(c) = &self.control {
            let _ = writeln!(s, "{:<22} {:>9.4}", "plan coverage", c.plan_coverage);
            let _ = writeln!(s, "{:<22} {:>9.4}", "full plan coverage", c.full_coverage);
            let _ = writeln!(s, "{:<22} {:>9.4}", "first entity match", c.first_entity_match);
        }
        s
    }
}
