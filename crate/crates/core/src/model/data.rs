use serde::{Deserialize, Serialize};

use crate::coref::{build_coref_graph_with, normalize_adjacency, NormalizedAdjacency, Topology};
use crate::corpus::DialogueSample;
use crate::error::{Error, Result};
use crate::planning::{encode_input, make_plan, Plan, PlanSpec};
use crate::tokenizer::{Tokenizer, EOS, MAX_POSITIONS};

/// One teacher-forced training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Vec<u32>,
    /// Coreference propagation matrix over `input`; `None` means no graph.
    pub adjacency: Option<NormalizedAdjacency>,
    /// Gold summary ids ending in `<eos>`.
    pub target: Vec<u32>,
}

impl Example {
    /// Decoder input: `<bos>` followed by the target shifted right.
    pub fn decoder_input(&self) -> Vec<u32> {
        let mut ids = Vec::with_capacity(self.target.len());
        ids.push(crate::tokenizer::BOS);
        ids.extend_from_slice(&self.target[..self.target.len().saturating_sub(1)]);
        ids
    }
}

/// How samples are turned into examples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleOptions {
    pub use_coref: bool,
    pub topology: Topology,
}

impl Default for ExampleOptions {
    fn default() -> Self {
        ExampleOptions {
            use_coref: true,
            topology: Topology::Chain,
        }
    }
}

/// Model input and coreference matrix for `sample` under `plan`.
pub fn make_input(
    sample: &DialogueSample,
    plan: &Plan,
    tokenizer: &Tokenizer,
    opts: ExampleOptions,
) -> Result<(Vec<u32>, Option<NormalizedAdjacency>)> {
    let enc = encode_input(plan, sample, tokenizer)?;
    let n = enc.seq.len();
    let adjacency = if opts.use_coref {
        let graph = build_coref_graph_with(&enc.token_clusters(sample), n, opts.topology)?;
        Some(normalize_adjacency(&graph))
    } else {
        None
    };
    Ok((enc.seq.ids, adjacency))
}

/// Encodes the gold summary of `sample` as a decoder target.
pub fn make_target(sample: &DialogueSample, tokenizer: &Tokenizer) -> Result<Vec<u32>> {
    let summary = sample
        .gold_summary
        .as_deref()
        .ok_or_else(|| Error::Dataset(format!("sample {} has no gold summary", sample.id)))?;
    let mut target = tokenizer.encode(summary);
    target.push(EOS);
    if target.len() > MAX_POSITIONS {
        return Err(Error::Overflow {
            len: target.len(),
            max: MAX_POSITIONS,
        });
    }
    Ok(target)
}

pub fn make_example(
    sample: &DialogueSample,
    spec: &PlanSpec,
    tokenizer: &Tokenizer,
    opts: ExampleOptions,
) -> Result<Example> {
    let plan = make_plan(sample, spec)?;
    let (input, adjacency) = make_input(sample, &plan, tokenizer, opts)?;
    let target = make_target(sample, tokenizer)?;
    Ok(Example {
        input,
        adjacency,
        target,
    })
}
