//! Personal-entity extraction, the three plan kinds, and assembly of the
//! conditioned model input `<bos> plan <sep> dialogue <eos>`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{self, DialogueSample, Gender, Span};
use crate::error::{Error, Result};
use crate::text;
use crate::tokenizer::{Role, TokenSequence, Tokenizer, BOS, EOS, MAX_POSITIONS, SEP};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonalEntity {
    pub name: String,
    pub gender: Gender,
    pub first_dialogue_pos: Option<usize>,
    pub first_summary_pos: Option<usize>,
    pub is_speaker: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanKind {
    Occurrence,
    Comprehensive,
    Focus,
}

impl fmt::Display for PlanKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlanKind::Occurrence => "occurrence",
            PlanKind::Comprehensive => "comprehensive",
            PlanKind::Focus => "focus",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plan {
    pub kind: PlanKind,
    pub entities: Vec<PersonalEntity>,
}

impl Plan {
    pub fn names(&self) -> Vec<&str> {
        self.entities.iter().map(|e| e.name.as_str()).collect()
    }

    /// Conditioning text: entity names separated by single spaces.
    pub fn text(&self) -> String {
        self.names().join(" ")
    }
}

/// CLI plan literal: `occurrence`, `comprehensive` or `focus:<Name>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanSpec {
    Occurrence,
    Comprehensive,
    Focus(String),
}

impl PlanSpec {
    pub fn kind(&self) -> PlanKind {
        match self {
            PlanSpec::Occurrence => PlanKind::Occurrence,
            PlanSpec::Comprehensive => PlanKind::Comprehensive,
            PlanSpec::Focus(_) => PlanKind::Focus,
        }
    }
}

impl FromStr for PlanSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "occurrence" => Ok(PlanSpec::Occurrence),
            "comprehensive" => Ok(PlanSpec::Comprehensive),
            _ => match s.strip_prefix("focus:") {
                Some(name) if !name.trim().is_empty() => Ok(PlanSpec::Focus(name.trim().to_string())),
                _ => Err(Error::PlanLiteral(s.to_string())),
            },
        }
    }
}

impl fmt::Display for PlanSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanSpec::Occurrence => f.write_str("occurrence"),
            PlanSpec::Comprehensive => f.write_str("comprehensive"),
            PlanSpec::Focus(n) => write!(f, "focus:{n}"),
        }
    }
}

fn first_occurrence(hay: &[String], name: &str) -> Option<usize> {
    let needle = text::words(name);
    text::find_token_seq(hay, &needle).first().copied()
}

/// Speakers, annotated entity names and gazetteer matches, one entry per
/// canonical (case-sensitive) name. Ordered by first dialogue position;
/// summary-only names follow in summary order.
pub fn extract_entities(sample: &DialogueSample) -> Vec<PersonalEntity> {
    let lin = sample.linearize();
    let summary = sample.summary_tokens();
    let speakers: BTreeSet<&str> = sample.turns.iter().map(|t| t.speaker.as_str()).collect();

    let mut candidates: BTreeSet<String> = speakers.iter().map(|s| s.to_string()).collect();
    candidates.extend(sample.entity_spans.dialogue.iter().map(|m| m.name.clone()));
    candidates.extend(sample.entity_spans.summary.iter().map(|m| m.name.clone()));
    candidates.extend(
        lin.tokens
            .iter()
            .chain(summary.iter())
            .filter(|t| corpus::gazetteer_gender(t).is_some())
            .cloned(),
    );

    let mut out: Vec<PersonalEntity> = candidates
        .into_iter()
        .filter(|name| !name.trim().is_empty())
        .filter_map(|name| {
            let first_dialogue_pos = first_occurrence(&lin.tokens, &name);
            let first_summary_pos = first_occurrence(&summary, &name);
            if first_dialogue_pos.is_none() && first_summary_pos.is_none() {
                return None;
            }
            Some(PersonalEntity {
                gender: sample.gender_of(&name),
                is_speaker: speakers.contains(name.as_str()),
                name,
                first_dialogue_pos,
                first_summary_pos,
            })
        })
        .collect();
    out.sort_by_key(|e| {
        (
            e.first_dialogue_pos.is_none(),
            e.first_dialogue_pos.or(e.first_summary_pos),
        )
    });
    out
}

/// Entities shared by dialogue and gold summary, in gold-summary order.
pub fn occurrence_plan(sample: &DialogueSample) -> Result<Plan> {
    if sample.gold_summary.is_none() {
        return Err(Error::Unplannable {
            id: sample.id.clone(),
            reason: "occurrence planning needs a gold summary".into(),
        });
    }
    let mut entities: Vec<PersonalEntity> = extract_entities(sample)
        .into_iter()
        .filter(|e| e.first_dialogue_pos.is_some() && e.first_summary_pos.is_some())
        .collect();
    if entities.is_empty() {
        return Err(Error::Unplannable {
            id: sample.id.clone(),
            reason: "no entity shared by dialogue and summary".into(),
        });
    }
    entities.sort_by_key(|e| e.first_summary_pos);
    Ok(Plan {
        kind: PlanKind::Occurrence,
        entities,
    })
}

/// Every dialogue entity in source order.
pub fn comprehensive_plan(sample: &DialogueSample) -> Result<Plan> {
    let entities: Vec<PersonalEntity> = extract_entities(sample)
        .into_iter()
        .filter(|e| e.first_dialogue_pos.is_some())
        .collect();
    if entities.is_empty() {
        return Err(Error::Unplannable {
            id: sample.id.clone(),
            reason: "dialogue has no personal entities".into(),
        });
    }
    Ok(Plan {
        kind: PlanKind::Comprehensive,
        entities,
    })
}

pub fn focus_plan(sample: &DialogueSample, name: &str) -> Result<Plan> {
    let entities: Vec<PersonalEntity> = extract_entities(sample)
        .into_iter()
        .filter(|e| e.first_dialogue_pos.is_some())
        .collect();
    match entities.iter().find(|e| e.name == name) {
        Some(e) => Ok(Plan {
            kind: PlanKind::Focus,
            entities: vec![e.clone()],
        }),
        None => Err(Error::UnknownEntity {
            name: name.to_string(),
            available: entities.into_iter().map(|e| e.name).collect(),
        }),
    }
}

pub fn make_plan(sample: &DialogueSample, spec: &PlanSpec) -> Result<Plan> {
    match spec {
        PlanSpec::Occurrence => occurrence_plan(sample),
        PlanSpec::Comprehensive => comprehensive_plan(sample),
        PlanSpec::Focus(name) => focus_plan(sample, name),
    }
}

/// Model input plus the alignment needed to place word-level annotations on
/// sub-word positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedInput {
    pub seq: TokenSequence,
    /// Index of the first dialogue token in `seq`.
    pub dialogue_offset: usize,
    /// Sub-word range `[start, end)` of every linearized dialogue word,
    /// relative to `dialogue_offset`.
    pub word_spans: Vec<(usize, usize)>,
}

impl EncodedInput {
    pub fn ids(&self) -> &[u32] {
        &self.seq.ids
    }

    /// Absolute sub-word span covering word span `span`.
    pub fn token_span(&self, span: Span) -> Span {
        let start = self.word_spans[span.start()].0;
        let end = self.word_spans[span.end() - 1].1;
        Span(self.dialogue_offset + start, self.dialogue_offset + end)
    }

    /// Coreference clusters of `sample` mapped onto input positions.
    pub fn token_clusters(&self, sample: &DialogueSample) -> Vec<Vec<Span>> {
        sample
            .coref_clusters
            .iter()
            .map(|c| c.iter().map(|&s| self.token_span(s)).collect())
            .collect()
    }
}

/// Sub-word ids of the linearized dialogue with per-word alignment.
pub fn encode_dialogue(sample: &DialogueSample, tokenizer: &Tokenizer) -> Result<(Vec<u32>, Vec<(usize, usize)>)> {
    if sample.turns.is_empty() {
        return Err(Error::Invariant {
            id: sample.id.clone(),
            message: "dialogue has no turns".into(),
        });
    }
    let lin = sample.linearize();
    let mut ids = Vec::new();
    let mut spans = Vec::with_capacity(lin.len());
    for w in &lin.tokens {
        let start = ids.len();
        ids.extend(tokenizer.encode_word(w));
        spans.push((start, ids.len()));
    }
    Ok((ids, spans))
}

pub fn encode_input(plan: &Plan, sample: &DialogueSample, tokenizer: &Tokenizer) -> Result<EncodedInput> {
    let (dialogue, word_spans) = encode_dialogue(sample, tokenizer)?;
    let mut ids = vec![BOS];
    ids.extend(tokenizer.encode(&plan.text()));
    ids.push(SEP);
    let dialogue_offset = ids.len();
    ids.extend(dialogue);
    ids.push(EOS);
    if ids.len() > MAX_POSITIONS {
        return Err(Error::Overflow {
            len: ids.len(),
            max: MAX_POSITIONS,
        });
    }
    Ok(EncodedInput {
        seq: TokenSequence::new(ids, Role::Combined)?,
        dialogue_offset,
        word_spans,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::corpus::{synthesize_corpus, EntitySpans, Turn};
    use crate::tokenizer::{corpus_text, train_bpe};
    use std::collections::BTreeMap;

    pub(crate) fn hannah_sample() -> DialogueSample {
        let turns = [
            ("Hannah", "Hey, do you have Betty's number?"),
            ("Amanda", "Lemme check"),
            ("Hannah", "<file_gif>"),
            ("Amanda", "Sorry, can't find it."),
            ("Amanda", "Ask Larry"),
            ("Amanda", "He called her last time we were at the park together"),
            ("Hannah", "I don't know him well"),
            ("Hannah", "<file_gif>"),
            ("Amanda", "Don't be shy, he's very nice"),
            ("Hannah", "If you say so.."),
            ("Hannah", "I'd rather you texted him"),
            ("Amanda", "Just text him 🙂"),
            ("Hannah", "Urgh.. Alright"),
            ("Hannah", "Bye"),
            ("Amanda", "Bye bye"),
        ];
        DialogueSample {
            id: "13818513".into(),
            turns: turns.iter().map(|(s, t)| Turn::new(*s, *t)).collect(),
            gold_summary: Some(
                "Hannah needs Betty's number but Amanda doesn't have it. She needs to contact Larry."
                    .into(),
            ),
            entity_spans: EntitySpans::default(),
            coref_clusters: vec![],
            name_genders: BTreeMap::new(),
        }
    }

    fn plain(id: &str, turns: &[(&str, &str)], summary: Option<&str>) -> DialogueSample {
        DialogueSample {
            id: id.into(),
            turns: turns.iter().map(|(s, t)| Turn::new(*s, *t)).collect(),
            gold_summary: summary.map(String::from),
            entity_spans: EntitySpans::default(),
            coref_clusters: vec![],
            name_genders: BTreeMap::new(),
        }
    }

    #[test]
    fn extracts_speakers_and_mentions() {
        let ents = extract_entities(&hannah_sample());
        let names: Vec<_> = ents.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, vec!["Hannah", "Betty", "Amanda", "Larry"]);
        let speakers: Vec<_> = ents.iter().filter(|e| e.is_speaker).map(|e| e.name.as_str()).collect();
        assert_eq!(speakers, vec!["Hannah", "Amanda"]);
        assert_eq!(ents[1].gender, Gender::Female);
        assert_eq!(ents[3].gender, Gender::Male);
    }

    #[test]
    fn occurrence_plan_reorders_by_summary() {
        let plan = occurrence_plan(&hannah_sample()).unwrap();
        assert_eq!(plan.names(), vec!["Hannah", "Betty", "Amanda", "Larry"]);
        assert_eq!(plan.kind, PlanKind::Occurrence);
    }

    #[test]
    fn no_names_no_entities() {
        let s = plain("x", &[("me", "hello there")], None);
        let ents = extract_entities(&s);
        // the speaker label itself is the only candidate
        assert_eq!(ents.len(), 1);
        let s = DialogueSample { turns: vec![], ..s };
        assert!(extract_entities(&s).is_empty());
    }

    #[test]
    fn repeated_name_keeps_first_position() {
        let s = plain(
            "r",
            &[("Tom", "Anna is here"), ("Leo", "Anna again"), ("Tom", "yes Anna")],
            None,
        );
        let anna = extract_entities(&s).into_iter().find(|e| e.name == "Anna").unwrap();
        let lin = s.linearize();
        let all: Vec<usize> = (0..lin.len()).filter(|&i| lin.tokens[i] == "Anna").collect();
        assert_eq!(all.len(), 3);
        assert_eq!(anna.first_dialogue_pos, Some(*all.iter().min().unwrap()));
        assert!(!anna.is_speaker);
    }

    #[test]
    fn singleton_and_excluded_summary_entities() {
        let s = plain("a", &[("Anna", "I will bake")], Some("Anna will bake ."));
        assert_eq!(occurrence_plan(&s).unwrap().names(), vec!["Anna"]);
        let s = plain("b", &[("Anna", "I will bake")], Some("Anna and Oscar will bake ."));
        assert_eq!(occurrence_plan(&s).unwrap().names(), vec!["Anna"]);
        let s = plain("c", &[("Anna", "I will bake")], Some("Oscar will bake ."));
        assert!(matches!(occurrence_plan(&s), Err(Error::Unplannable { .. })));
        let s = plain("d", &[("Anna", "I will bake")], None);
        assert!(occurrence_plan(&s).is_err());
    }

    #[test]
    fn comprehensive_orders_by_source() {
        let s = plain("c", &[("Hannah", "Ask Betty"), ("Amanda", "ok")], None);
        assert_eq!(comprehensive_plan(&s).unwrap().names(), vec!["Hannah", "Betty", "Amanda"]);
        let single = plain("s", &[("Anna", "hello")], None);
        let comp: BTreeSet<String> = comprehensive_plan(&single).unwrap().names().iter().map(|s| s.to_string()).collect();
        let foc: BTreeSet<String> = focus_plan(&single, "Anna").unwrap().names().iter().map(|s| s.to_string()).collect();
        assert_eq!(comp, foc);
    }

    #[test]
    fn focus_plan_errors_list_entities() {
        let s = plain("f", &[("Anna", "Adam is late")], None);
        assert_eq!(focus_plan(&s, "Anna").unwrap().names(), vec!["Anna"]);
        assert_ne!(focus_plan(&s, "Anna").unwrap(), focus_plan(&s, "Adam").unwrap());
        match focus_plan(&s, "Zoe").unwrap_err() {
            Error::UnknownEntity { available, .. } => assert_eq!(available, vec!["Anna", "Adam"]),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn plan_literals() {
        assert_eq!("occurrence".parse::<PlanSpec>().unwrap(), PlanSpec::Occurrence);
        assert_eq!("focus:Anna".parse::<PlanSpec>().unwrap(), PlanSpec::Focus("Anna".into()));
        assert_eq!(PlanSpec::Focus("Anna".into()).to_string(), "focus:Anna");
        assert!("focus:".parse::<PlanSpec>().is_err());
        assert!("everything".parse::<PlanSpec>().is_err());
    }

    #[test]
    fn occurrence_subset_of_comprehensive_on_synthetic() {
        for s in synthesize_corpus(300, 11) {
            let occ: BTreeSet<String> = occurrence_plan(&s).unwrap().names().iter().map(|s| s.to_string()).collect();
            let comp: BTreeSet<String> = comprehensive_plan(&s).unwrap().names().iter().map(|s| s.to_string()).collect();
            assert!(occ.is_subset(&comp), "{}", s.id);
        }
    }

    #[test]
    fn input_layout() {
        let corpus = synthesize_corpus(30, 1);
        let tok = train_bpe(corpus_text(&corpus), 400).unwrap();
        let s = &corpus[0];
        let plan = comprehensive_plan(s).unwrap();
        let enc = encode_input(&plan, s, &tok).unwrap();
        let ids = enc.ids();
        assert_eq!(ids[0], BOS);
        assert_eq!(ids.iter().filter(|&&i| i == SEP).count(), 1);
        assert_eq!(*ids.last().unwrap(), EOS);
        let plan_tokens = tok.encode(&plan.text()).len();
        let (dialogue, _) = encode_dialogue(s, &tok).unwrap();
        assert_eq!(ids.len(), plan_tokens + dialogue.len() + 3);
        assert_eq!(enc.dialogue_offset, plan_tokens + 2);

        let other = focus_plan(s, plan.names()[0]).unwrap();
        assert_ne!(encode_input(&other, s, &tok).unwrap().seq, enc.seq);

        let empty = DialogueSample { turns: vec![], ..s.clone() };
        assert!(encode_input(&plan, &empty, &tok).is_err());
    }

    #[test]
    fn comprehensive_stable_under_order_preserving_turn_moves() {
        // Swapping two trailing name-free turns keeps first occurrences in order.
        let a = plain("p", &[("Anna", "Tom is here"), ("Tom", "ok"), ("Anna", "yes"), ("Tom", "fine")], None);
        let mut b = a.clone();
        b.turns.swap(2, 3);
        assert_eq!(comprehensive_plan(&a).unwrap().names(), comprehensive_plan(&b).unwrap().names());
    }
}
