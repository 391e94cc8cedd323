//! Controllable dialogue summarization steered by personal named entity plans.

pub mod augment;
pub mod coref;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod faithfulness;
pub mod model;
pub mod pipeline;
pub mod planning;
pub mod text;
pub mod tokenizer;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/tokenizer.md")]
    mod tokenizer {}
    #[doc = include_str!("../../../book/src/planning.md")]
    mod planning {}
    #[doc = include_str!("../../../book/src/coreference.md")]
    mod coreference {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/faithfulness.md")]
    mod faithfulness {}
    #[doc = include_str!("../../../book/src/augmentation.md")]
    mod augmentation {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
