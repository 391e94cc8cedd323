//! Deterministic template corpus with exact entity and coreference ground
//! truth.
//!
//! Every speaker and every mentioned person takes part in at least one event.
//! Events are realized as one or two dialogue turns plus one summary
//! sentence. The gold summary is a shuffled subset of the event sentences, so
//! summary order carries information the dialogue alone does not. Some events
//! refer to their subject with a pronoun next to a same-gender distractor
//! name; only the coreference cluster disambiguates them.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gazetteer::{FEMALE_NAMES, MALE_NAMES};
use super::{linearize, DialogueSample, EntityMention, EntitySpans, Gender, Span, Turn};
use crate::text;

const FUTURE_ACTS: [&str; 14] = [
    "bake a cake",
    "book a table",
    "buy the tickets",
    "fix the car",
    "bring the wine",
    "pick up the kids",
    "clean the kitchen",
    "walk the dog",
    "order pizza",
    "pay the rent",
    "rent a van",
    "water the plants",
    "call the plumber",
    "print the photos",
];

const PAST_ACTS: [&str; 12] = [
    "bought a new car",
    "lost the keys",
    "passed the exam",
    "got a new job",
    "broke a leg",
    "adopted a cat",
    "moved to Berlin",
    "won the lottery",
    "missed the train",
    "painted the house",
    "sold the bike",
    "finished the marathon",
];

const PLACES: [&str; 7] = ["cinema", "gym", "park", "station", "library", "office", "mall"];
const TIMES: [&str; 4] = ["noon", "five", "seven", "eight"];
const GIFTS: [&str; 6] = ["book", "scarf", "watch", "plant", "mug", "lamp"];
const ITEMS: [&str; 5] = ["bike", "drill", "tent", "camera", "laptop"];
const DAYS: [&str; 4] = ["tomorrow", "on Monday", "on Friday", "next week"];
const PARTIES: [&str; 4] = ["wedding", "barbecue", "concert", "party"];
const FILLERS: [&str; 6] = ["OK .", "Great !", "Sounds good .", "Thanks !", "Haha", "No problem ."];

#[derive(Clone, Copy)]
struct Person {
    name: &'static str,
    gender: Gender,
}

fn subj(g: Gender) -> &'static str {
    match g {
        Gender::Female => "She",
        Gender::Male => "He",
        Gender::Neutral => "They",
    }
}

fn subj_lower(g: Gender) -> &'static str {
    match g {
        Gender::Female => "she",
        Gender::Male => "he",
        Gender::Neutral => "they",
    }
}

/// Reference to a word inside one of an event's turns.
#[derive(Clone, Copy)]
struct LocalRef {
    turn: usize,
    word: usize,
}

struct Event {
    turns: Vec<(usize, Vec<String>)>,
    summary: String,
    clusters: Vec<Vec<LocalRef>>,
}

fn words(s: &str) -> Vec<String> {
    text::words(s).into_iter().map(String::from).collect()
}

fn position_of(ws: &[String], w: &str, from: usize) -> usize {
    from + ws[from..].iter().position(|x| x == w).expect("template word present")
}

struct Builder<'a> {
    rng: &'a mut ChaCha8Rng,
    people: Vec<Person>,
    n_speakers: usize,
    covered: Vec<bool>,
}

impl Builder<'_> {
    fn pick<T: Copy>(&mut self, xs: &[T]) -> T {
        xs[self.rng.gen_range(0..xs.len())]
    }

    fn other_speaker(&mut self, not: usize) -> usize {
        let options: Vec<usize> = (0..self.n_speakers).filter(|&i| i != not).collect();
        self.pick(&options)
    }

    fn other_person(&mut self, not: &[usize]) -> Option<usize> {
        let options: Vec<usize> = (0..self.people.len()).filter(|i| !not.contains(i)).collect();
        if options.is_empty() {
            None
        } else {
            Some(self.pick(&options))
        }
    }

    fn same_gender_other(&mut self, p: usize, not: &[usize]) -> Option<usize> {
        let g = self.people[p].gender;
        let options: Vec<usize> = (0..self.people.len())
            .filter(|&i| i != p && !not.contains(&i) && self.people[i].gender == g)
            .collect();
        if options.is_empty() {
            None
        } else {
            Some(self.pick(&options))
        }
    }

    fn mark(&mut self, ids: &[usize]) {
        for &i in ids {
            self.covered[i] = true;
        }
    }

    fn name(&self, i: usize) -> &'static str {
        self.people[i].name
    }

    /// An event whose summary subject is speaker `s`.
    fn speaker_event(&mut self, s: usize) -> Event {
        let kind = self.rng.gen_range(0..5);
        let sn = self.name(s);
        match kind {
            0 => {
                let act = self.pick(&FUTURE_ACTS);
                let mut turns = Vec::new();
                if self.rng.gen_bool(0.5) {
                    let q = self.other_speaker(s);
                    self.mark(&[q]);
                    turns.push((q, words(&format!("Who will {act} ?"))));
                }
                turns.push((s, words(&format!("I will {act} ."))));
                self.mark(&[s]);
                Event {
                    turns,
                    summary: format!("{sn} will {act} ."),
                    clusters: vec![],
                }
            }
            1 => {
                let act = self.pick(&FUTURE_ACTS);
                let r = self.other_speaker(s);
                let rn = self.name(r);
                self.mark(&[s, r]);
                Event {
                    turns: vec![
                        (r, words(&format!("{sn} , can you {act} ?"))),
                        (s, words(&format!("Sure , I will {act} ."))),
                    ],
                    summary: format!("{sn} will {act} for {rn} ."),
                    clusters: vec![],
                }
            }
            2 => {
                self.mark(&[s]);
                Event {
                    turns: vec![(s, words("I am running late , sorry ."))],
                    summary: format!("{sn} is running late ."),
                    clusters: vec![],
                }
            }
            3 => {
                let gift = self.pick(&GIFTS);
                let p = self.other_person(&[s]).expect("at least two people");
                let pn = self.name(p);
                self.mark(&[s, p]);
                Event {
                    turns: vec![(s, words(&format!("I bought a {gift} for {pn} .")))],
                    summary: format!("{sn} bought a {gift} for {pn} ."),
                    clusters: vec![],
                }
            }
            _ => {
                let party = self.pick(&PARTIES);
                let p = self.other_person(&[s]).expect("at least two people");
                let pn = self.name(p);
                self.mark(&[s, p]);
                Event {
                    turns: vec![(s, words(&format!("{pn} invited me to the {party} .")))],
                    summary: format!("{pn} invited {sn} to the {party} ."),
                    clusters: vec![],
                }
            }
        }
    }

    /// An event about person `p`, narrated by some other speaker.
    fn person_event(&mut self, p: usize) -> Event {
        let s = {
            let options: Vec<usize> = (0..self.n_speakers).filter(|&i| i != p).collect();
            self.pick(&options)
        };
        let (pn, pg, sn) = (self.name(p), self.people[p].gender, self.name(s));
        self.mark(&[s, p]);
        match self.rng.gen_range(0..7) {
            0 => {
                let past = self.pick(&PAST_ACTS);
                Event {
                    turns: vec![(s, words(&format!("{pn} {past} yesterday .")))],
                    summary: format!("{pn} {past} ."),
                    clusters: vec![],
                }
            }
            1 | 2 => {
                // "I saw X and Y today . She ..." with the subject in a random slot.
                let past = self.pick(&PAST_ACTS);
                let d = self.same_gender_other(p, &[s]);
                let (first, second) = match d {
                    Some(d) if self.rng.gen_bool(0.5) => (d, Some(p)),
                    Some(d) => (p, Some(d)),
                    None => (p, None),
                };
                if let Some(d) = d {
                    self.mark(&[d]);
                }
                let seen = match second {
                    Some(b) => format!("{} and {}", self.name(first), self.name(b)),
                    None => self.name(first).to_string(),
                };
                let ws = words(&format!("I saw {seen} today . {} {past} .", subj(pg)));
                let name_at = if first == p { 2 } else { 4 };
                let pron_at = position_of(&ws, subj(pg), name_at + 1);
                Event {
                    turns: vec![(s, ws)],
                    summary: format!("{pn} {past} ."),
                    clusters: vec![vec![
                        LocalRef { turn: 0, word: name_at },
                        LocalRef { turn: 0, word: pron_at },
                    ]],
                }
            }
            3 => {
                let past = self.pick(&PAST_ACTS);
                let t = {
                    let options: Vec<usize> =
                        (0..self.n_speakers).filter(|&i| i != p && i != s).collect();
                    if options.is_empty() {
                        None
                    } else {
                        Some(self.pick(&options))
                    }
                };
                let Some(t) = t else {
                    let ws = words(&format!("{pn} {past} yesterday ."));
                    return Event {
                        turns: vec![(s, ws)],
                        summary: format!("{pn} {past} ."),
                        clusters: vec![],
                    };
                };
                self.mark(&[t]);
                let ask = words(&format!("Have you talked to {pn} ?"));
                let answer = words(&format!("Yes , {} {past} .", subj_lower(pg)));
                Event {
                    turns: vec![(s, ask), (t, answer)],
                    summary: format!("{pn} {past} ."),
                    clusters: vec![vec![
                        LocalRef { turn: 0, word: 4 },
                        LocalRef { turn: 1, word: 2 },
                    ]],
                }
            }
            4 => {
                let (place, time) = (self.pick(&PLACES), self.pick(&TIMES));
                let t = self.other_speaker(s);
                self.mark(&[t]);
                let tn = self.name(t);
                Event {
                    turns: vec![
                        (s, words(&format!("We should meet {pn} at the {place} at {time} ."))),
                        (t, words("OK .")),
                    ],
                    summary: format!("{sn} and {tn} will meet {pn} at the {place} at {time} ."),
                    clusters: vec![],
                }
            }
            5 => {
                let (item, day) = (self.pick(&ITEMS), self.pick(&DAYS));
                let ws = words(&format!("I lent my {item} to {pn} . {} will return it {day} .", subj(pg)));
                let pron_at = position_of(&ws, subj(pg), 6);
                Event {
                    turns: vec![(s, ws)],
                    summary: format!("{sn} lent a {item} to {pn} ."),
                    clusters: vec![vec![
                        LocalRef { turn: 0, word: 5 },
                        LocalRef { turn: 0, word: pron_at },
                    ]],
                }
            }
            _ => {
                // "X texted Y . She needs a lift ..." with an optional same-gender distractor.
                let place = self.pick(&PLACES);
                match self.same_gender_other(p, &[s]) {
                    Some(d) => {
                        self.mark(&[d]);
                        let (a, b) = if self.rng.gen_bool(0.5) { (p, d) } else { (d, p) };
                        let ws = words(&format!(
                            "{} texted {} . {} needs a lift to the {place} .",
                            self.name(a),
                            self.name(b),
                            subj(pg)
                        ));
                        Event {
                            turns: vec![(s, ws)],
                            summary: format!("{pn} needs a lift to the {place} ."),
                            clusters: vec![vec![
                                LocalRef { turn: 0, word: if a == p { 0 } else { 2 } },
                                LocalRef { turn: 0, word: 4 },
                            ]],
                        }
                    }
                    None => Event {
                        turns: vec![(s, words(&format!("{pn} is sick . {} will stay at home .", subj(pg))))],
                        summary: format!("{pn} is sick and will stay at home ."),
                        clusters: vec![vec![
                            LocalRef { turn: 0, word: 0 },
                            LocalRef { turn: 0, word: 4 },
                        ]],
                    },
                }
            }
        }
    }
}

fn draw_people(rng: &mut ChaCha8Rng, total: usize) -> Vec<Person> {
    let mut pool: Vec<Person> = FEMALE_NAMES
        .iter()
        .map(|&name| Person {
            name,
            gender: Gender::Female,
        })
        .chain(MALE_NAMES.iter().map(|&name| Person {
            name,
            gender: Gender::Male,
        }))
        .collect();
    pool.shuffle(rng);
    pool.truncate(total);
    pool
}

fn synthesize_one(rng: &mut ChaCha8Rng, id: String) -> DialogueSample {
    let n_speakers = *[2, 2, 2, 3, 3, 3, 4, 4, 5].choose(rng).unwrap();
    let n_mentioned = rng.gen_range(0..=2);
    let people = draw_people(rng, n_speakers + n_mentioned);
    let total = people.len();
    let mut b = Builder {
        rng,
        people,
        n_speakers,
        covered: vec![false; total],
    };

    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(b.rng);
    let mut events = Vec::new();
    for &p in &order {
        if b.covered[p] {
            continue;
        }
        let ev = if p < n_speakers {
            b.speaker_event(p)
        } else {
            b.person_event(p)
        };
        events.push(ev);
    }
    if b.rng.gen_bool(0.3) {
        let p = b.rng.gen_range(0..total);
        let ev = if p < n_speakers {
            b.speaker_event(p)
        } else {
            b.person_event(p)
        };
        events.push(ev);
    }

    // Lay out turns, remembering where each event's turns landed.
    let mut turns: Vec<(usize, Vec<String>)> = Vec::new();
    let mut event_turn_index: Vec<Vec<usize>> = Vec::new();
    if b.rng.gen_bool(0.4) {
        let s = b.rng.gen_range(0..n_speakers);
        turns.push((s, words("Hi everyone !")));
    }
    for ev in &events {
        let mut idx = Vec::new();
        for (spk, ws) in &ev.turns {
            idx.push(turns.len());
            turns.push((*spk, ws.clone()));
        }
        event_turn_index.push(idx);
        if b.rng.gen_bool(0.35) {
            let last = turns.last().map(|t| t.0).unwrap_or(0);
            let s = b.other_speaker(last);
            let filler = b.pick(&FILLERS);
            turns.push((s, words(filler)));
        }
    }

    for s in 0..n_speakers {
        if !turns.iter().any(|t| t.0 == s) {
            let filler = b.pick(&FILLERS);
            turns.push((s, words(filler)));
        }
    }

    let people = b.people.clone();
    let turns: Vec<Turn> = turns
        .into_iter()
        .map(|(s, ws)| Turn::new(people[s].name, ws.join(" ")))
        .collect();
    let lin = linearize(&turns);

    let coref_clusters: Vec<Vec<Span>> = events
        .iter()
        .zip(&event_turn_index)
        .flat_map(|(ev, idx)| {
            ev.clusters.iter().map(|cluster| {
                let mut spans: Vec<Span> = cluster
                    .iter()
                    .map(|r| {
                        let pos = lin.text_starts[idx[r.turn]] + r.word;
                        Span(pos, pos + 1)
                    })
                    .collect();
                spans.sort();
                spans
            })
        })
        .collect();

    // Gold summary: all events or a random non-empty subset, shuffled.
    let mut chosen: Vec<usize> = (0..events.len()).collect();
    if b.rng.gen_bool(0.5) {
        let k = b.rng.gen_range(1..=events.len());
        chosen.shuffle(b.rng);
        chosen.truncate(k);
    }
    chosen.shuffle(b.rng);
    let summary = chosen
        .iter()
        .map(|&e| events[e].summary.as_str())
        .collect::<Vec<_>>()
        .join(" ");

    let name_genders: BTreeMap<String, Gender> =
        people.iter().map(|p| (p.name.to_string(), p.gender)).collect();
    let names: Vec<&str> = people.iter().map(|p| p.name).collect();
    let summary_words = text::words(&summary);
    let mentions = |toks: &[&str]| -> Vec<EntityMention> {
        toks.iter()
            .enumerate()
            .filter(|(_, t)| names.contains(t))
            .map(|(pos, t)| EntityMention {
                name: t.to_string(),
                pos,
            })
            .collect()
    };
    let lin_refs: Vec<&str> = lin.tokens.iter().map(String::as_str).collect();
    DialogueSample {
        id,
        turns,
        gold_summary: Some(summary.clone()),
        entity_spans: EntitySpans {
            dialogue: mentions(&lin_refs),
            summary: mentions(&summary_words),
        },
        coref_clusters,
        name_genders,
    }
}

/// Generates `n` samples. Output depends only on `(n, seed)`; the first `k`
/// samples of a larger draw equal a draw of size `k`.
pub fn synthesize_corpus(n: usize, seed: u64) -> Vec<DialogueSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| synthesize_one(&mut rng, format!("syn{seed}-{i:05}")))
        .collect()
}
