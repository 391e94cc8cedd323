//! From-scratch Transformer encoder-decoder with coreference graph fusion.

pub mod checkpoint;
mod config;
pub mod data;
pub mod decode;
pub mod gradcheck;
pub mod net;
pub mod optim;
pub mod params;
mod seq2seq;
pub mod tape;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::ModelConfig;
pub use data::{make_example, make_input, make_target, Example, ExampleOptions};
pub use decode::{beam_decode, beam_search, greedy_decode, greedy_search, Hypothesis, ModelScorer, StepScorer};
pub use gradcheck::{grad_check, GradCheckReport};
pub use net::Dropout;
pub use optim::{AdamW, OptimConfig};
pub use params::{Group, ParamStore};
pub use seq2seq::{init_params, nll_loss, Seq2Seq};
pub use tape::{Tape, Var};
pub use train::{batch_gradients, batch_indices, batch_loss, train_step, Trainable, TrainStats};

impl Seq2Seq {
    pub const KIND: &'static str = "seq2seq";

    pub fn checkpoint(&self, tokenizer_sha256: &str, opt: Option<&AdamW>, extra: serde_json::Value) -> Checkpoint {
        Checkpoint::new(
            Self::KIND,
            serde_json::to_value(&self.config).expect("config serializes"),
            tokenizer_sha256,
            &self.params,
            opt,
            extra,
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> crate::error::Result<Self> {
        ck.expect_kind(Self::KIND)?;
        let config: ModelConfig = serde_json::from_value(ck.header.config.clone())?;
        let mut model = Seq2Seq::new(config)?;
        ck.restore_params(&mut model.params)?;
        Ok(model)
    }
}
