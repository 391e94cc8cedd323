//! Byte-pair sub-word tokenizer over word-level pre-tokens.
//!
//! Merges are learned on raw character symbols. When a word is emitted, its
//! final sub-word carries the [`EOW`] marker, which is how [`Tokenizer::decode`]
//! restores word boundaries. The vocabulary holds the reserved tokens, every
//! training character in both its inner and word-final form, and every merged
//! symbol form that occurs in the segmented training words. Symbol forms
//! outside the vocabulary are split back along their merge history.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{DialogueSample, TokenCounter, TURN_TOKEN};
use crate::error::{Error, Result};
use crate::text;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const SEP: u32 = 3;
pub const UNK: u32 = 4;
pub const TURN: u32 = 5;

pub const SPECIAL_TOKENS: [&str; 6] = ["<pad>", "<bos>", "<eos>", "<sep>", "<unk>", TURN_TOKEN];

/// End-of-word marker suffix.
pub const EOW: &str = "</w>";

/// Positional capacity of the model input.
pub const MAX_POSITIONS: usize = 1024;

pub const DEFAULT_MERGES: usize = 800;

pub fn is_special(id: u32) -> bool {
    (id as usize) < SPECIAL_TOKENS.len()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Invalid(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(Error::Invalid(format!("reserved token {s} must have id {i}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Ordered merge pairs; position is the merge rank.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MergeTable {
    pairs: Vec<(String, String)>,
}

impl MergeTable {
    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Dialogue,
    Plan,
    Summary,
    Combined,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub role: Role,
}

impl TokenSequence {
    pub fn new(ids: Vec<u32>, role: Role) -> Result<Self> {
        if ids.len() > MAX_POSITIONS {
            return Err(Error::Overflow {
                len: ids.len(),
                max: MAX_POSITIONS,
            });
        }
        Ok(TokenSequence { ids, role })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
struct TokenizerFile {
    vocab: Vec<String>,
    merges: Vec<(String, String)>,
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    vocab: Vocab,
    merges: MergeTable,
    ranks: HashMap<(String, String), usize>,
    parents: HashMap<String, (String, String)>,
}

fn final_form(sym: &str) -> String {
    format!("{sym}{EOW}")
}

fn count_pairs(words: &[(Vec<String>, u64)]) -> HashMap<(&str, &str), u64> {
    let mut counts: HashMap<(&str, &str), u64> = HashMap::new();
    for (syms, freq) in words {
        for w in syms.windows(2) {
            *counts.entry((w[0].as_str(), w[1].as_str())).or_default() += freq;
        }
    }
    counts
}

fn apply_merge(syms: &mut Vec<String>, left: &str, right: &str) {
    let mut i = 0;
    while i + 1 < syms.len() {
        if syms[i] == left && syms[i + 1] == right {
            let merged = format!("{left}{right}");
            syms.splice(i..i + 2, [merged]);
        }
        i += 1;
    }
}

/// Greedy BPE training. Each round merges the most frequent adjacent symbol
/// pair, breaking ties by the lexicographically smallest pair. Training stops
/// early once no pair is left.
pub fn train_bpe<I, S>(corpus: I, merge_count: usize) -> Result<Tokenizer>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut freq: BTreeMap<String, u64> = BTreeMap::new();
    for line in corpus {
        for w in text::words(line.as_ref()) {
            *freq.entry(w.to_string()).or_default() += 1;
        }
    }
    if freq.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut words: Vec<(Vec<String>, u64)> = freq
        .iter()
        .map(|(w, &f)| (w.chars().map(String::from).collect(), f))
        .collect();
    let mut chars: Vec<String> = freq
        .keys()
        .flat_map(|w| w.chars().map(String::from))
        .collect();
    chars.sort();
    chars.dedup();

    let mut merges = Vec::with_capacity(merge_count);
    for _ in 0..merge_count {
        let counts = count_pairs(&words);
        let Some((best, _)) = counts
            .into_iter()
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)))
        else {
            break;
        };
        let (l, r) = (best.0.to_string(), best.1.to_string());
        for (syms, _) in words.iter_mut() {
            apply_merge(syms, &l, &r);
        }
        merges.push((l, r));
    }

    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    for c in &chars {
        tokens.push(c.clone());
        tokens.push(final_form(c));
    }
    let mut seen: std::collections::HashSet<String> = tokens.iter().cloned().collect();
    let mut observed: Vec<String> = Vec::new();
    for (syms, _) in &words {
        for (i, s) in syms.iter().enumerate() {
            let form = if i + 1 == syms.len() { final_form(s) } else { s.clone() };
            if seen.insert(form.clone()) {
                observed.push(form);
            }
        }
    }
    observed.sort();
    tokens.extend(observed);
    Tokenizer::from_parts(tokens, merges)
}

impl Tokenizer {
    fn from_parts(tokens: Vec<String>, merges: Vec<(String, String)>) -> Result<Self> {
        let vocab = Vocab::from_tokens(tokens)?;
        let mut ranks = HashMap::with_capacity(merges.len());
        let mut parents = HashMap::with_capacity(merges.len());
        for (rank, (l, r)) in merges.iter().enumerate() {
            if ranks.insert((l.clone(), r.clone()), rank).is_some() {
                return Err(Error::Invalid(format!("duplicate merge ({l:?}, {r:?})")));
            }
            parents
                .entry(format!("{l}{r}"))
                .or_insert_with(|| (l.clone(), r.clone()));
        }
        Ok(Tokenizer {
            vocab,
            merges: MergeTable { pairs: merges },
            ranks,
            parents,
        })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn merges(&self) -> &MergeTable {
        &self.merges
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn emit(&self, sym: &str, is_final: bool, out: &mut Vec<u32>) {
        let form = if is_final { final_form(sym) } else { sym.to_string() };
        if let Some(id) = self.vocab.id(&form) {
            out.push(id);
        } else if let Some((l, r)) = self.parents.get(sym) {
            self.emit(l, false, out);
            self.emit(r, is_final, out);
        } else {
            out.push(UNK);
        }
    }

    /// Sub-word ids for one pre-token.
    pub fn encode_word(&self, word: &str) -> Vec<u32> {
        if word == TURN_TOKEN {
            return vec![TURN];
        }
        let mut syms: Vec<String> = word.chars().map(String::from).collect();
        loop {
            let best = syms
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| {
                    self.ranks
                        .get(&(w[0].clone(), w[1].clone()))
                        .map(|&r| (r, i))
                })
                .min();
            let Some((_, i)) = best else { break };
            let merged = format!("{}{}", syms[i], syms[i + 1]);
            syms.splice(i..i + 2, [merged]);
        }
        let mut out = Vec::with_capacity(syms.len());
        let last = syms.len().saturating_sub(1);
        for (i, s) in syms.iter().enumerate() {
            self.emit(s, i == last, &mut out);
        }
        out
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        text::words(text)
            .into_iter()
            .flat_map(|w| self.encode_word(w))
            .collect()
    }

    pub fn encode_as(&self, text: &str, role: Role) -> Result<TokenSequence> {
        TokenSequence::new(self.encode(text), role)
    }

    /// Drops special tokens and rejoins sub-words at end-of-word markers.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            let tok = self.vocab.token(id).ok_or(Error::TokenOutOfRange {
                id,
                size: self.vocab.len(),
            })?;
            if is_special(id) {
                continue;
            }
            match tok.strip_suffix(EOW) {
                Some(stem) => {
                    out.push_str(stem);
                    out.push(' ');
                }
                None => out.push_str(tok),
            }
        }
        Ok(out.trim_end().to_string())
    }

    pub fn to_json(&self) -> String {
        let file = TokenizerFile {
            vocab: self.vocab.tokens.clone(),
            merges: self.merges.pairs.clone(),
        };
        serde_json::to_string(&file).expect("tokenizer serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: TokenizerFile = serde_json::from_str(s)?;
        Tokenizer::from_parts(file.vocab, file.merges)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Tokenizer::from_json(&s)
    }

    /// SHA-256 of the persisted form, used to tie checkpoints to a tokenizer.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl TokenCounter for Tokenizer {
    fn count(&self, text: &str) -> usize {
        self.encode(text).len()
    }
}

/// Training text for the tokenizer: every turn and every gold summary.
pub fn corpus_text(samples: &[DialogueSample]) -> Vec<String> {
    let mut out = Vec::new();
    for s in samples {
        for t in &s.turns {
            out.push(format!("{} : {}", t.speaker, t.text));
        }
        if let Some(y) = &s.gold_summary {
            out.push(y.clone());
        }
    }
    out
}
