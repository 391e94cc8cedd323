use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::Example;
use super::net::{DecoderLayer, Dropout, Encoded, Encoder, Linear};
use super::params::{Group, ParamStore};
use super::tape::{AttnMask, Tape, Var};
use super::train::Trainable;
use super::ModelConfig;
use crate::coref::NormalizedAdjacency;
use crate::error::{Error, Result};
use crate::tokenizer::PAD;

/// Plan-conditioned encoder-decoder summarizer.
#[derive(Debug, Clone)]
pub struct Seq2Seq {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub encoder: Encoder,
    pub decoder: Vec<DecoderLayer>,
    pub out: Linear,
}

/// Builds a freshly initialized model. Equal configs give equal parameters.
pub fn init_params(config: &ModelConfig) -> Result<Seq2Seq> {
    Seq2Seq::new(config.clone())
}

impl Seq2Seq {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::default();
        let encoder = Encoder::new(&mut params, &mut rng, &config);
        let d = config.d_model;
        let decoder = (0..config.dec_layers)
            .map(|l| DecoderLayer::new(&mut params, &mut rng, &format!("dec{l}"), d, config.heads, config.ffn_dim))
            .collect();
        let out = Linear::new(&mut params, &mut rng, "out", d, config.vocab_size, Group::Transformer);
        Ok(Seq2Seq {
            config,
            params,
            encoder,
            decoder,
            out,
        })
    }

    pub fn encode(
        &self,
        t: &mut Tape,
        input: &[u32],
        adj: Option<&NormalizedAdjacency>,
        drop: &mut Dropout,
    ) -> Result<Encoded> {
        self.encoder.forward(t, &self.params, input, adj, drop)
    }

    /// Next-token logits `(prefix.len(), vocab)` for every prefix position.
    pub fn decode(&self, t: &mut Tape, memory: &Encoded, prefix: &[u32], drop: &mut Dropout) -> Result<Var> {
        let mut h = self.encoder.embed(t, &self.params, prefix, drop)?;
        let self_mask = AttnMask {
            key_valid: vec![true; prefix.len()],
            causal: true,
        };
        for layer in &self.decoder {
            h = layer.forward(t, &self.params, h, &self_mask, memory.hidden, &memory.mask, drop);
        }
        Ok(self.out.forward(t, &self.params, h))
    }

    /// Teacher-forced logits for `ex`.
    pub fn forward(&self, t: &mut Tape, ex: &Example, drop: &mut Dropout) -> Result<Var> {
        if ex.target.is_empty() {
            return Err(Error::Shape("empty target".into()));
        }
        let memory = self.encode(t, &ex.input, ex.adjacency.as_ref(), drop)?;
        self.decode(t, &memory, &ex.decoder_input(), drop)
    }

    /// Teacher-forced logits without dropout, as a plain matrix.
    pub fn logits(&self, ex: &Example) -> Result<Array2<f64>> {
        let mut t = Tape::new();
        let v = self.forward(&mut t, ex, &mut Dropout::off())?;
        Ok(t.value(v).clone())
    }

    /// Mean per-token negative log-likelihood of `ex` without dropout.
    pub fn loss(&self, ex: &Example) -> Result<f64> {
        nll_loss(&self.logits(ex)?, &ex.target, Some(PAD))
    }
}

impl Trainable for Seq2Seq {
    type Example = Example;

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn dropout_rate(&self) -> f64 {
        self.config.dropout
    }

    fn example_loss(&self, t: &mut Tape, ex: &Example, drop: &mut Dropout) -> Result<(Var, f64)> {
        let logits = self.forward(t, ex, drop)?;
        let targets: Vec<Option<usize>> = ex
            .target
            .iter()
            .map(|&id| (id != PAD).then_some(id as usize))
            .collect();
        let count = targets.iter().filter(|x| x.is_some()).count();
        Ok((t.cross_entropy(logits, &targets), count as f64))
    }
}

/// Mean of `-log softmax(logits)[target]` over targets other than `ignore`.
pub fn nll_loss(logits: &Array2<f64>, targets: &[u32], ignore: Option<u32>) -> Result<f64> {
    if logits.nrows() != targets.len() {
        return Err(Error::Shape(format!(
            "{} logit rows for {} targets",
            logits.nrows(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (row, &y) in logits.rows().into_iter().zip(targets) {
        if Some(y) == ignore {
            continue;
        }
        if y as usize >= row.len() {
            return Err(Error::TokenOutOfRange { id: y, size: row.len() });
        }
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        total += lse - row[y as usize];
        count += 1;
    }
    if count == 0 {
        return Err(Error::Shape("no scored targets".into()));
    }
    Ok(total / count as f64)
}
