//! Transformer building blocks shared by the summarizer and the detector.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{uniform, xavier, Group, ParamStore};
use super::tape::{AttnMask, Tape, Var};
use crate::coref::NormalizedAdjacency;
use crate::error::{Error, Result};
use crate::tokenizer::PAD;

/// Inverted dropout driven by an explicit generator; inactive without one.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: Option<&'a mut ChaCha8Rng>,
}

impl Dropout<'_> {
    pub fn off() -> Dropout<'static> {
        Dropout { rate: 0.0, rng: None }
    }

    pub fn apply(&mut self, t: &mut Tape, x: Var) -> Var {
        let rate = self.rate;
        let Some(rng) = self.rng.as_deref_mut() else { return x };
        if rate <= 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - rate);
        let dim = t.value(x).dim();
        let mask = Array2::from_shape_simple_fn(dim, || if rng.gen::<f64>() < rate { 0.0 } else { keep });
        let m = t.constant(mask);
        t.mul(x, m)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
}

impl Linear {
    pub fn new(st: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, din: usize, dout: usize, group: Group) -> Self {
        let w = st.push(format!("{name}.w"), uniform(rng, din, dout, xavier(din, dout)), group, true);
        let b = st.push(format!("{name}.b"), Array2::zeros((1, dout)), group, false);
        Linear { w, b }
    }

    pub fn forward(&self, t: &mut Tape, st: &ParamStore, x: Var) -> Var {
        let w = t.param(st, self.w);
        let b = t.param(st, self.b);
        let y = t.matmul(x, w);
        t.add_row(y, b)
    }
}

#[derive(Debug, Clone)]
pub struct Norm {
    pub gamma: usize,
    pub beta: usize,
}

impl Norm {
    pub fn new(st: &mut ParamStore, name: &str, d: usize) -> Self {
        let gamma = st.push(format!("{name}.gamma"), Array2::ones((1, d)), Group::Transformer, false);
        let beta = st.push(format!("{name}.beta"), Array2::zeros((1, d)), Group::Transformer, false);
        Norm { gamma, beta }
    }

    pub fn forward(&self, t: &mut Tape, st: &ParamStore, x: Var) -> Var {
        let g = t.param(st, self.gamma);
        let b = t.param(st, self.beta);
        t.layer_norm(x, g, b)
    }
}

#[derive(Debug, Clone)]
pub struct MultiHead {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MultiHead {
    pub fn new(st: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d: usize, heads: usize) -> Self {
        let g = Group::Transformer;
        MultiHead {
            q: Linear::new(st, rng, &format!("{name}.q"), d, d, g),
            k: Linear::new(st, rng, &format!("{name}.k"), d, d, g),
            v: Linear::new(st, rng, &format!("{name}.v"), d, d, g),
            o: Linear::new(st, rng, &format!("{name}.o"), d, d, g),
            heads,
        }
    }

    /// Returns the projected output and the raw attention node.
    pub fn forward(&self, t: &mut Tape, st: &ParamStore, xq: Var, xkv: Var, mask: &AttnMask) -> (Var, Var) {
        let q = self.q.forward(t, st, xq);
        let k = self.k.forward(t, st, xkv);
        let v = self.v.forward(t, st, xkv);
        let a = t.attention(q, k, v, self.heads, mask);
        (self.o.forward(t, st, a), a)
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(st: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d: usize, ffn: usize) -> Self {
        FeedForward {
            up: Linear::new(st, rng, &format!("{name}.up"), d, ffn, Group::Transformer),
            down: Linear::new(st, rng, &format!("{name}.down"), ffn, d, Group::Transformer),
        }
    }

    pub fn forward(&self, t: &mut Tape, st: &ParamStore, x: Var) -> Var {
        let h = self.up.forward(t, st, x);
        let h = t.relu(h);
        self.down.forward(t, st, h)
    }
}

/// Post-norm encoder block:
/// `h' = LN(h + MHAtt(h))`, `out = LN(h' + FFN(h'))`.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub attn: MultiHead,
    pub ln1: Norm,
    pub ffn: FeedForward,
    pub ln2: Norm,
}

impl EncoderLayer {
    pub fn new(st: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d: usize, heads: usize, ffn: usize) -> Self {
        EncoderLayer {
            attn: MultiHead::new(st, rng, &format!("{name}.attn"), d, heads),
            ln1: Norm::new(st, &format!("{name}.ln1"), d),
            ffn: FeedForward::new(st, rng, &format!("{name}.ffn"), d, ffn),
            ln2: Norm::new(st, &format!("{name}.ln2"), d),
        }
    }

    pub fn forward(&self, t: &mut Tape, st: &ParamStore, h: Var, mask: &AttnMask, drop: &mut Dropout) -> Var {
        let (a, _) = self.attn.forward(t, st, h, h, mask);
        let a = drop.apply(t, a);
        let r = t.add(h, a);
        let h1 = self.ln1.forward(t, st, r);
        let f = self.ffn.forward(t, st, h1);
        let f = drop.apply(t, f);
        let r = t.add(h1, f);
        self.ln2.forward(t, st, r)
    }
}

#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub self_attn: MultiHead,
    pub ln1: Norm,
    pub cross: MultiHead,
    pub ln2: Norm,
    pub ffn: FeedForward,
    pub ln3: Norm,
}

impl DecoderLayer {
    pub fn new(st: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d: usize, heads: usize, ffn: usize) -> Self {
        DecoderLayer {
            self_attn: MultiHead::new(st, rng, &format!("{name}.self"), d, heads),
            ln1: Norm::new(st, &format!("{name}.ln1"), d),
            cross: MultiHead::new(st, rng, &format!("{name}.cross"), d, heads),
            ln2: Norm::new(st, &format!("{name}.ln2"), d),
            ffn: FeedForward::new(st, rng, &format!("{name}.ffn"), d, ffn),
            ln3: Norm::new(st, &format!("{name}.ln3"), d),
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        t: &mut Tape,
        st: &ParamStore,
        h: Var,
        self_mask: &AttnMask,
        memory: Var,
        memory_mask: &AttnMask,
        drop: &mut Dropout,
    ) -> Var {
        let (a, _) = self.self_attn.forward(t, st, h, h, self_mask);
        let a = drop.apply(t, a);
        let r = t.add(h, a);
        let h1 = self.ln1.forward(t, st, r);
        let (c, _) = self.cross.forward(t, st, h1, memory, memory_mask);
        let c = drop.apply(t, c);
        let r = t.add(h1, c);
        let h2 = self.ln2.forward(t, st, r);
        let f = self.ffn.forward(t, st, h2);
        let f = drop.apply(t, f);
        let r = t.add(h2, f);
        self.ln3.forward(t, st, r)
    }
}

/// Fixed sinusoidal position table, `(max_positions, d)`.
pub fn sinusoidal_positions(max_positions: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((max_positions, d), |(pos, i)| {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// GCN weights are drawn uniformly within this fraction of the Xavier limit.
pub const GRAPH_INIT_SCALE: f64 = 0.1;

/// Token embedding, encoder stack and coreference GCN.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub embed: usize,
    pub layers: Vec<EncoderLayer>,
    pub gcn: Vec<usize>,
    pub d_model: usize,
    pub positions: Array2<f64>,
}

/// Encoder output and the key mask derived from padding.
pub struct Encoded {
    pub hidden: Var,
    pub mask: AttnMask,
}

impl Encoder {
    pub fn new(
        st: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        config: &super::ModelConfig,
    ) -> Self {
        let d = config.d_model;
        let embed = st.push(
            "embed",
            uniform(rng, config.vocab_size, d, (3.0 / d as f64).sqrt()),
            Group::Transformer,
            true,
        );
        let layers = (0..config.enc_layers)
            .map(|l| EncoderLayer::new(st, rng, &format!("enc{l}"), d, config.heads, config.ffn_dim))
            .collect();
        // Separate stream: toggling graph layers leaves every other initial weight unchanged.
        // The fused branch starts small so the encoder states are barely disturbed at first.
        let mut graph_rng = rng.clone();
        graph_rng.set_stream(1);
        let limit = GRAPH_INIT_SCALE * xavier(d, d);
        let gcn = (0..config.gcn_layers)
            .map(|l| st.push(format!("gcn{l}.w"), uniform(&mut graph_rng, d, d, limit), Group::Graph, true))
            .collect();
        Encoder {
            embed,
            layers,
            gcn,
            d_model: d,
            positions: sinusoidal_positions(config.max_positions, d),
        }
    }

    /// Token embeddings scaled by `sqrt(d_model)`, without positions.
    pub fn token_vectors(&self, t: &mut Tape, st: &ParamStore, ids: &[u32]) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::Shape("empty input sequence".into()));
        }
        let vocab = st.value(self.embed).nrows();
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= vocab) {
            return Err(Error::TokenOutOfRange { id: bad, size: vocab });
        }
        let table = t.param(st, self.embed);
        let e = t.gather(table, ids);
        Ok(t.scale(e, (self.d_model as f64).sqrt()))
    }

    /// Scaled token embeddings plus positions for `ids`.
    pub fn embed(&self, t: &mut Tape, st: &ParamStore, ids: &[u32], drop: &mut Dropout) -> Result<Var> {
        let n = ids.len();
        if n > self.positions.nrows() {
            return Err(Error::Overflow {
                len: n,
                max: self.positions.nrows(),
            });
        }
        let e = self.token_vectors(t, st, ids)?;
        let pos = t.constant(self.positions.slice(ndarray::s![..n, ..]).to_owned());
        let x = t.add(e, pos);
        Ok(drop.apply(t, x))
    }

    /// `g⁰ = h`, `gᵏ = ReLU(Â gᵏ⁻¹ Wᵏ)`, result `h + gᴸ`. Without an adjacency
    /// `Â` is the identity.
    pub fn gcn_fuse(&self, t: &mut Tape, st: &ParamStore, h: Var, adj: Option<&NormalizedAdjacency>) -> Result<Var> {
        if self.gcn.is_empty() {
            return Ok(h);
        }
        let n = t.value(h).nrows();
        if let Some(a) = adj {
            if a.n() != n {
                return Err(Error::Shape(format!("adjacency is {0}x{0} but sequence has {n} tokens", a.n())));
            }
        }
        let mut g = h;
        for &w in &self.gcn {
            let mixed = match adj {
                Some(a) => t.propagate(g, a),
                None => g,
            };
            let wv = t.param(st, w);
            let y = t.matmul(mixed, wv);
            g = t.relu(y);
        }
        Ok(t.add(h, g))
    }

    pub fn forward(
        &self,
        t: &mut Tape,
        st: &ParamStore,
        ids: &[u32],
        adj: Option<&NormalizedAdjacency>,
        drop: &mut Dropout,
    ) -> Result<Encoded> {
        let mut h = self.embed(t, st, ids, drop)?;
        let mask = AttnMask {
            key_valid: ids.iter().map(|&i| i != PAD).collect(),
            causal: false,
        };
        for layer in &self.layers {
            h = layer.forward(t, st, h, &mask, drop);
        }
        let hidden = self.gcn_fuse(t, st, h, adj)?;
        Ok(Encoded { hidden, mask })
    }
}
