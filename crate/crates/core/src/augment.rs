//! Entity-exchange augmentation: swap a same-gender name pair everywhere in
//! a sample to get a new training sample with the same content structure.

use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{DialogueSample, EntityMention, Gender, Span, Turn};
use crate::error::{Error, Result};
use crate::faithfulness::name_occurrences;
use crate::planning::extract_entities;
use crate::text;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSample {
    pub base_id: String,
    pub swapped_pair: (String, String),
    pub sample: DialogueSample,
}

/// Corpus record of an augmented sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedRecord {
    #[serde(flatten)]
    pub sample: DialogueSample,
    pub augmented_from: String,
    pub swapped_pair: (String, String),
}

impl AugmentedSample {
    pub fn to_record(&self) -> AugmentedRecord {
        AugmentedRecord {
            sample: self.sample.clone(),
            augmented_from: self.base_id.clone(),
            swapped_pair: self.swapped_pair.clone(),
        }
    }
}

fn exchange_text(s: &str, a: &str, b: &str) -> String {
    let names: BTreeSet<String> = [a.to_string(), b.to_string()].into();
    let mut out = String::with_capacity(s.len());
    let mut at = 0;
    for o in name_occurrences(s, &names) {
        out.push_str(&s[at..o.start]);
        out.push_str(if o.name == a { b } else { a });
        at = o.end;
    }
    out.push_str(&s[at..]);
    out
}

/// Rewrites a token sequence and returns, for every old boundary `0..=n`,
/// the matching new boundary. Boundaries inside a replaced name map to the
/// end of its replacement.
fn exchange_tokens(tokens: &[String], a: &[&str], b: &[&str]) -> (Vec<String>, Vec<usize>) {
    let mut out = Vec::with_capacity(tokens.len());
    let mut map = Vec::with_capacity(tokens.len() + 1);
    let mut i = 0;
    let matches = |i: usize, w: &[&str]| !w.is_empty() && tokens.len() >= i + w.len() && tokens[i..i + w.len()].iter().zip(w).all(|(t, x)| t == x);
    while i < tokens.len() {
        let (from, to) = if matches(i, a) {
            (a, b)
        } else if matches(i, b) {
            (b, a)
        } else {
            map.push(out.len());
            out.push(tokens[i].clone());
            i += 1;
            continue;
        };
        map.push(out.len());
        out.extend(to.iter().map(|w| w.to_string()));
        for _ in 1..from.len() {
            map.push(out.len());
        }
        i += from.len();
    }
    map.push(out.len());
    (out, map)
}

fn distinct_summary_entities(sample: &DialogueSample) -> usize {
    extract_entities(sample)
        .iter()
        .filter(|e| e.first_summary_pos.is_some())
        .count()
}

/// Names that can be exchanged in `sample`: same gender, both in the dialogue.
pub fn eligible_pairs(sample: &DialogueSample) -> Vec<(String, String)> {
    if sample.gold_summary.is_none() || distinct_summary_entities(sample) < 2 {
        return Vec::new();
    }
    let ents: Vec<_> = extract_entities(sample)
        .into_iter()
        .filter(|e| e.first_dialogue_pos.is_some() && e.gender != Gender::Neutral)
        .collect();
    let mut out = Vec::new();
    for (i, x) in ents.iter().enumerate() {
        for y in &ents[i + 1..] {
            if x.gender == y.gender {
                let (p, q) = if x.name < y.name { (x, y) } else { (y, x) };
                out.push((p.name.clone(), q.name.clone()));
            }
        }
    }
    out.sort();
    out
}

/// Exchanges every whole-token occurrence of `pair.0` and `pair.1` in
/// speakers, utterances and the summary; annotations follow the tokens.
/// The id is left unchanged.
pub fn entity_exchange(sample: &DialogueSample, pair: (&str, &str)) -> Result<AugmentedSample> {
    let (a, b) = pair;
    if a == b {
        return Err(Error::Ineligible(format!("{a} paired with itself")));
    }
    let ents = extract_entities(sample);
    for n in [a, b] {
        if !ents.iter().any(|e| e.name == n && e.first_dialogue_pos.is_some()) {
            return Err(Error::Ineligible(format!("{n} does not occur in dialogue {}", sample.id)));
        }
    }
    let (ga, gb) = (sample.gender_of(a), sample.gender_of(b));
    if ga != gb || ga == Gender::Neutral {
        return Err(Error::Ineligible(format!("{a} ({ga:?}) and {b} ({gb:?}) differ in gender")));
    }
    if distinct_summary_entities(sample) < 2 {
        return Err(Error::Ineligible(format!("summary of {} names fewer than two people", sample.id)));
    }

    let swap_name = |n: &str| -> String {
        if n == a {
            b.to_string()
        } else if n == b {
            a.to_string()
        } else {
            n.to_string()
        }
    };
    let turns: Vec<Turn> = sample
        .turns
        .iter()
        .map(|t| Turn::new(swap_name(&t.speaker), exchange_text(&t.text, a, b)))
        .collect();
    let summary = sample.gold_summary.as_deref().map(|s| exchange_text(s, a, b));

    let (aw, bw) = (text::words(a), text::words(b));
    let (_, dmap) = exchange_tokens(&sample.linearize().tokens, &aw, &bw);
    let (_, smap) = exchange_tokens(&sample.summary_tokens(), &aw, &bw);
    let remap = |m: &EntityMention, map: &[usize]| EntityMention {
        name: swap_name(&m.name),
        pos: map[m.pos],
    };

    let mut out = sample.clone();
    out.turns = turns;
    out.gold_summary = summary;
    out.entity_spans.dialogue = sample.entity_spans.dialogue.iter().map(|m| remap(m, &dmap)).collect();
    out.entity_spans.summary = sample.entity_spans.summary.iter().map(|m| remap(m, &smap)).collect();
    out.coref_clusters = sample
        .coref_clusters
        .iter()
        .map(|c| c.iter().map(|s| Span(dmap[s.start()], dmap[s.end()])).collect())
        .collect();
    out.name_genders = sample.name_genders.iter().map(|(n, g)| (swap_name(n), *g)).collect();
    Ok(AugmentedSample {
        base_id: sample.id.clone(),
        swapped_pair: (a.to_string(), b.to_string()),
        sample: out,
    })
}

/// Up to `target_count` augmented samples with distinct `(base, pair)`,
/// drawn seeded-uniformly from all eligible combinations. Each gets the id
/// `{base}#x{A}-{B}`.
pub fn augment_corpus(corpus: &[DialogueSample], target_count: usize, seed: u64) -> Result<Vec<AugmentedSample>> {
    let mut cands: Vec<(usize, (String, String))> = corpus
        .iter()
        .enumerate()
        .flat_map(|(i, s)| eligible_pairs(s).into_iter().map(move |p| (i, p)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cands.shuffle(&mut rng);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(target_count.min(cands.len()));
    for (i, (a, b)) in cands {
        if out.len() >= target_count {
            break;
        }
        let base = &corpus[i];
        if !seen.insert((base.id.clone(), a.clone(), b.clone())) {
            continue;
        }
        let mut aug = entity_exchange(base, (&a, &b))?;
        if aug.sample == *base {
            continue;
        }
        aug.sample.id = format!("{}#x{a}-{b}", base.id);
        out.push(aug);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthesize_corpus;
    use crate::planning::tests::hannah_sample;

    #[test]
    fn speakers_and_summary_swap() {
        let s = hannah_sample();
        let aug = entity_exchange(&s, ("Hannah", "Betty")).unwrap();
        for (old, new) in s.turns.iter().zip(&aug.sample.turns) {
            match old.speaker.as_str() {
                "Hannah" => assert_eq!(new.speaker, "Betty"),
                "Betty" => assert_eq!(new.speaker, "Hannah"),
                other => assert_eq!(new.speaker, other),
            }
        }
        aug.sample.validate().unwrap();
        assert_ne!(aug.sample, s);
    }

    #[test]
    fn exchange_is_an_involution() {
        for s in synthesize_corpus(200, 3) {
            for (a, b) in eligible_pairs(&s) {
                let once = entity_exchange(&s, (&a, &b)).unwrap();
                once.sample.validate().unwrap();
                let twice = entity_exchange(&once.sample, (&a, &b)).unwrap();
                assert_eq!(twice.sample, s);
            }
        }
    }

    #[test]
    fn partial_words_are_untouched() {
        assert_eq!(exchange_text("Anna met Annabelle and Tom", "Anna", "Tom"), "Tom met Annabelle and Anna");
    }

    #[test]
    fn multi_token_names_shift_boundaries() {
        let toks: Vec<String> = ["x", "Mary", "Jo", "y", "Tom"].map(String::from).to_vec();
        let (out, map) = exchange_tokens(&toks, &["Mary", "Jo"], &["Tom"]);
        assert_eq!(out, ["x", "Tom", "y", "Mary", "Jo"]);
        assert_eq!(map, vec![0, 1, 2, 2, 3, 5]);
    }

    #[test]
    fn ineligible_inputs() {
        let s = hannah_sample();
        assert!(entity_exchange(&s, ("Hannah", "Hannah")).is_err());
        assert!(entity_exchange(&s, ("Hannah", "Larry")).is_err());
        assert!(entity_exchange(&s, ("Hannah", "Zed")).is_err());
        assert!(augment_corpus(&[s], 0, 1).unwrap().is_empty());
    }

    #[test]
    fn corpus_augmentation_is_unique_and_seeded() {
        let corpus = synthesize_corpus(300, 8);
        let a = augment_corpus(&corpus, 100, 5).unwrap();
        assert_eq!(a.len(), 100);
        let ids: HashSet<_> = a.iter().map(|x| x.sample.id.clone()).collect();
        assert_eq!(ids.len(), 100);
        assert_eq!(a, augment_corpus(&corpus, 100, 5).unwrap());
    }
}
