#![allow(dead_code)]

use dialplan::corpus::{synthesize_corpus, DialogueSample};
use dialplan::model::{make_example, Example, ExampleOptions, ModelConfig};
use dialplan::planning::PlanSpec;
use dialplan::tokenizer::{corpus_text, train_bpe, Tokenizer};

pub fn corpus_and_tokenizer(n: usize, seed: u64) -> (Vec<DialogueSample>, Tokenizer) {
    let corpus = synthesize_corpus(n, seed);
    let tok = train_bpe(corpus_text(&corpus), 200).unwrap();
    (corpus, tok)
}

pub fn examples(corpus: &[DialogueSample], tok: &Tokenizer, use_coref: bool) -> Vec<Example> {
    let opts = ExampleOptions {
        use_coref,
        ..Default::default()
    };
    corpus
        .iter()
        .map(|s| make_example(s, &PlanSpec::Occurrence, tok, opts).unwrap())
        .collect()
}

pub fn tiny_config(vocab_size: usize, gcn_layers: usize) -> ModelConfig {
    ModelConfig {
        enc_layers: 1,
        dec_layers: 1,
        gcn_layers,
        d_model: 8,
        heads: 2,
        ffn_dim: 16,
        dropout: 0.0,
        vocab_size,
        seed: 3,
        ..Default::default()
    }
}
