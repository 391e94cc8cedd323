use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Label, LabeledPair};
use crate::coref::{build_coref_graph, normalize_adjacency, NormalizedAdjacency};
use crate::corpus::{DialogueSample, Span};
use crate::error::{Error, Result};
use crate::eval::ConsistencyScorer;
use crate::model::net::{Dropout, Encoder, Linear};
use crate::model::tape::AttnMask;
use crate::model::{Checkpoint, Group, ModelConfig, ParamStore, Tape, Trainable, Var};
use crate::planning::encode_dialogue;
use crate::text;
use crate::tokenizer::{Tokenizer, BOS, EOS, TURN};

/// Which tokens of a token's own segment its context averages over.
const CONTEXTS: [&str; 3] = ["whole", "left", "right"];

/// A (dialogue, summary) pair ready for the detector.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorExample {
    /// `<bos> dialogue <eos>`.
    pub dialogue: Vec<u32>,
    /// Turn index of every dialogue token.
    pub dialogue_segments: Vec<usize>,
    /// Coreference matrix over `dialogue`, when the detector fuses the graph.
    pub adjacency: Option<NormalizedAdjacency>,
    /// `<bos> summary <eos>`.
    pub summary: Vec<u32>,
    /// Sentence index of every summary token.
    pub summary_segments: Vec<usize>,
    pub label: usize,
}

/// Row-normalized averaging matrices over each token's own segment:
/// the whole segment, the tokens before it, and the tokens after it.
/// Rows with nothing to average are zero.
fn context_matrices(segments: &[usize]) -> [Array2<f64>; 3] {
    let n = segments.len();
    let build = |keep: fn(usize, usize) -> bool| {
        let mut m = Array2::zeros((n, n));
        for i in 0..n {
            let cols: Vec<usize> = (0..n).filter(|&j| segments[j] == segments[i] && keep(i, j)).collect();
            for &j in &cols {
                m[[i, j]] = 1.0 / cols.len() as f64;
            }
        }
        m
    };
    [build(|_, _| true), build(|i, j| j < i), build(|i, j| j > i)]
}

/// Consistency classifier over the shared token embeddings and coreference
/// graph layers. Class 1 is "consistent".
///
/// Every summary token is aligned to the dialogue by dot-product attention
/// between embeddings, so a name attends to the places that name occurs.
/// The token is then compared with what it aligned to, both as itself and
/// through averages over its sentence (whole, left part, right part) against
/// the same averages over the aligned dialogue turns. The dialogue side is
/// fused with the coreference graph first, so pronouns carry their
/// antecedents. Comparisons are summed through linear maps, passed through a
/// ReLU, averaged over the summary and mapped to two classes.
#[derive(Debug, Clone)]
pub struct Detector {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub encoder: Encoder,
    pub token_diff: Linear,
    /// Per context: maps of the difference and of the elementwise product.
    pub context_diff: Vec<Linear>,
    pub context_prod: Vec<Linear>,
    pub head: Linear,
}

impl Detector {
    pub const KIND: &'static str = "detector";

    /// `config.enc_layers` and `config.dec_layers` are ignored.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::default();
        let shared = ModelConfig {
            enc_layers: 0,
            ..config.clone()
        };
        let encoder = Encoder::new(&mut params, &mut rng, &shared);
        let d = config.d_model;
        let mut linear = |name: &str, out: usize, params: &mut ParamStore| {
            Linear::new(params, &mut rng, name, d, out, Group::Transformer)
        };
        let token_diff = linear("cmp.token.diff", d, &mut params);
        let mut context_diff = Vec::new();
        let mut context_prod = Vec::new();
        for c in CONTEXTS {
            context_diff.push(linear(&format!("cmp.{c}.diff"), d, &mut params));
            context_prod.push(linear(&format!("cmp.{c}.prod"), d, &mut params));
        }
        let head = linear("head", 2, &mut params);
        Ok(Detector {
            config,
            params,
            encoder,
            token_diff,
            context_diff,
            context_prod,
            head,
        })
    }

    pub fn uses_coref(&self) -> bool {
        self.config.gcn_layers > 0
    }

    pub fn example(
        &self,
        tokenizer: &Tokenizer,
        dialogue: &DialogueSample,
        summary: &str,
        label: Option<Label>,
    ) -> Result<DetectorExample> {
        let (dialogue_ids, word_spans) = encode_dialogue(dialogue, tokenizer)?;
        let mut ids = Vec::with_capacity(dialogue_ids.len() + 2);
        ids.push(BOS);
        ids.extend(&dialogue_ids);
        ids.push(EOS);
        let mut turn = 0;
        let dialogue_segments = ids
            .iter()
            .map(|&id| {
                turn += usize::from(id == TURN);
                turn
            })
            .collect();
        let adjacency = if self.uses_coref() {
            let clusters: Vec<Vec<Span>> = dialogue
                .coref_clusters
                .iter()
                .map(|c| {
                    c.iter()
                        .map(|s| Span(1 + word_spans[s.start()].0, 1 + word_spans[s.end() - 1].1))
                        .collect()
                })
                .collect();
            Some(normalize_adjacency(&build_coref_graph(&clusters, ids.len())?))
        } else {
            None
        };
        let mut summary_ids = vec![BOS];
        let mut summary_segments = vec![0];
        let mut sentence = 0;
        for w in text::words(summary) {
            let piece = tokenizer.encode_word(w);
            summary_segments.extend(std::iter::repeat_n(sentence, piece.len()));
            summary_ids.extend(piece);
            sentence += usize::from(matches!(w, "." | "!" | "?"));
        }
        summary_ids.push(EOS);
        summary_segments.push(sentence);
        Ok(DetectorExample {
            dialogue: ids,
            dialogue_segments,
            adjacency,
            summary: summary_ids,
            summary_segments,
            label: label.map_or(0, Label::index),
        })
    }

    fn logits(&self, t: &mut Tape, ex: &DetectorExample, drop: &mut Dropout) -> Result<Var> {
        let st = &self.params;
        let dialogue = self.encoder.token_vectors(t, st, &ex.dialogue)?;
        let summary = self.encoder.token_vectors(t, st, &ex.summary)?;
        let fused = self.encoder.gcn_fuse(t, st, dialogue, ex.adjacency.as_ref())?;
        let all = AttnMask::all(ex.dialogue.len());

        let aligned = t.attention(summary, dialogue, dialogue, 1, &all);
        let gap = t.scale(aligned, -1.0);
        let gap = t.add(summary, gap);
        let mut h = self.token_diff.forward(t, st, gap);

        let dialogue_ctx = context_matrices(&ex.dialogue_segments);
        let summary_ctx = context_matrices(&ex.summary_segments);
        for (k, (dm, sm)) in dialogue_ctx.into_iter().zip(summary_ctx).enumerate() {
            let dm = t.constant(dm);
            let sm = t.constant(sm);
            let turn_ctx = t.matmul(dm, fused);
            let own = t.matmul(sm, summary);
            let other = t.attention(summary, dialogue, turn_ctx, 1, &all);
            let neg = t.scale(other, -1.0);
            let diff = t.add(own, neg);
            let prod = t.mul(own, other);
            let a = self.context_diff[k].forward(t, st, diff);
            let b = self.context_prod[k].forward(t, st, prod);
            h = t.add(h, a);
            h = t.add(h, b);
        }
        let h = t.relu(h);
        let h = drop.apply(t, h);
        let n = ex.summary.len();
        let pool = t.constant(Array2::from_elem((1, n), 1.0 / n as f64));
        let pooled = t.matmul(pool, h);
        Ok(self.head.forward(t, st, pooled))
    }

    /// Probability that the summary is consistent with the dialogue.
    pub fn probability(&self, ex: &DetectorExample) -> Result<f64> {
        let mut t = Tape::new();
        let l = self.logits(&mut t, ex, &mut Dropout::off())?;
        let v = t.value(l);
        let (a, b) = (v[[0, 0]], v[[0, 1]]);
        Ok(1.0 / (1.0 + (a - b).exp()))
    }

    pub fn checkpoint(&self, tokenizer_sha256: &str, opt: Option<&crate::model::AdamW>) -> Checkpoint {
        Checkpoint::new(
            Self::KIND,
            serde_json::to_value(&self.config).expect("config serializes"),
            tokenizer_sha256,
            &self.params,
            opt,
            serde_json::Value::Null,
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(Self::KIND)?;
        let config: ModelConfig = serde_json::from_value(ck.header.config.clone())?;
        let mut d = Detector::new(config)?;
        ck.restore_params(&mut d.params)?;
        Ok(d)
    }
}

impl Trainable for Detector {
    type Example = DetectorExample;

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn dropout_rate(&self) -> f64 {
        self.config.dropout
    }

    fn example_loss(&self, t: &mut Tape, ex: &DetectorExample, drop: &mut Dropout) -> Result<(Var, f64)> {
        let logits = self.logits(t, ex, drop)?;
        Ok((t.cross_entropy(logits, &[Some(ex.label)]), 1.0))
    }
}

/// Probability of "consistent" and the hard label at 0.5.
pub fn score_consistency(
    detector: &Detector,
    tokenizer: &Tokenizer,
    dialogue: &DialogueSample,
    summary: &str,
) -> Result<(f64, Label)> {
    let ex = detector.example(tokenizer, dialogue, summary, None)?;
    let p = detector.probability(&ex)?;
    let label = if p >= 0.5 { Label::Consistent } else { Label::Inconsistent };
    Ok((p, label))
}

/// A detector bound to its tokenizer.
pub struct BoundDetector<'a> {
    pub detector: &'a Detector,
    pub tokenizer: &'a Tokenizer,
}

impl ConsistencyScorer for BoundDetector<'_> {
    fn is_consistent(&self, dialogue: &DialogueSample, summary: &str) -> Result<bool> {
        Ok(score_consistency(self.detector, self.tokenizer, dialogue, summary)?.1 == Label::Consistent)
    }
}

/// Training settings for [`train_detector`].
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct DetectorTraining {
    pub steps: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub optim: crate::model::OptimConfig,
}

impl Default for DetectorTraining {
    fn default() -> Self {
        DetectorTraining {
            steps: 6000,
            batch_size: 16,
            seed: 0,
            optim: crate::model::OptimConfig {
                lr_transformer: 1e-3,
                decay_steps: 6000,
                ..Default::default()
            },
        }
    }
}

/// Trains a fresh detector on `pairs`. Both classes must be present.
pub fn train_detector(
    pairs: &[LabeledPair],
    tokenizer: &Tokenizer,
    config: ModelConfig,
    training: &DetectorTraining,
    mut log: impl FnMut(&crate::model::TrainStats),
) -> Result<Detector> {
    let has = |l: Label| pairs.iter().any(|p| p.label == l);
    if !has(Label::Consistent) || !has(Label::Inconsistent) {
        return Err(Error::Dataset("detector training needs both classes".into()));
    }
    let mut det = Detector::new(config)?;
    let examples = pairs
        .iter()
        .map(|p| det.example(tokenizer, &p.dialogue, &p.summary, Some(p.label)))
        .collect::<Result<Vec<_>>>()?;
    let mut opt = crate::model::AdamW::new(training.optim.clone(), &det.params);
    for step in 0..training.steps {
        let idx = crate::model::batch_indices(examples.len(), training.batch_size, training.seed, step);
        let batch: Vec<&DetectorExample> = idx.iter().map(|&i| &examples[i]).collect();
        let stats = crate::model::train_step(&mut det, &batch, &mut opt, training.seed)?;
        log(&stats);
    }
    Ok(det)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn context_matrices_average_within_segments() {
        let [whole, left, right] = context_matrices(&[0, 0, 0, 1]);
        let third = 1.0 / 3.0;
        assert_eq!(
            whole,
            array![
                [third, third, third, 0.0],
                [third, third, third, 0.0],
                [third, third, third, 0.0],
                [0.0, 0.0, 0.0, 1.0]
            ]
        );
        assert_eq!(
            left,
            array![
                [0.0, 0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0, 0.0],
                [0.5, 0.5, 0.0, 0.0],
                [0.0, 0.0, 0.0, 0.0]
            ]
        );
        assert_eq!(
            right,
            array![
                [0.0, 0.5, 0.5, 0.0],
                [0.0, 0.0, 1.0, 0.0],
                [0.0, 0.0, 0.0, 0.0],
                [0.0, 0.0, 0.0, 0.0]
            ]
        );
    }

    #[test]
    fn examples_mark_turns_and_sentences() {
        let sample = DialogueSample {
            id: "t".into(),
            turns: vec![
                crate::corpus::Turn::new("Amy", "hi ."),
                crate::corpus::Turn::new("Tom", "ok ."),
            ],
            gold_summary: None,
            entity_spans: Default::default(),
            coref_clusters: Vec::new(),
            name_genders: Default::default(),
        };
        let tok = crate::tokenizer::train_bpe(["Amy : hi . <turn> Tom : ok .", "Amy left . Tom stayed ."], 0).unwrap();
        let det = Detector::new(ModelConfig {
            vocab_size: tok.vocab_size(),
            gcn_layers: 0,
            ..Default::default()
        })
        .unwrap();
        let ex = det.example(&tok, &sample, "Amy left . Tom stayed .", Some(Label::Inconsistent)).unwrap();
        assert_eq!(ex.label, 0);
        assert_eq!((ex.dialogue[0], *ex.dialogue.last().unwrap()), (BOS, EOS));
        assert_eq!((ex.summary[0], *ex.summary.last().unwrap()), (BOS, EOS));
        assert!(ex.adjacency.is_none());
        // Turn separators open the next turn.
        let turn_at = ex.dialogue.iter().position(|&id| id == TURN).unwrap();
        assert!(ex.dialogue_segments[..turn_at].iter().all(|&s| s == 0));
        assert!(ex.dialogue_segments[turn_at..].iter().all(|&s| s == 1));
        // The full stop closes its sentence; `<eos>` trails after the last one.
        let per_word: Vec<usize> = text::words("Amy left . Tom stayed .")
            .iter()
            .map(|w| tok.encode_word(w).len())
            .collect();
        let first_sentence: usize = per_word[..3].iter().sum::<usize>() + 1;
        assert!(ex.summary_segments[..first_sentence].iter().all(|&s| s == 0));
        let second_end = ex.summary.len() - 1;
        assert!(ex.summary_segments[first_sentence..second_end].iter().all(|&s| s == 1));
        assert_eq!(ex.summary_segments[second_end], 2);
    }
}
