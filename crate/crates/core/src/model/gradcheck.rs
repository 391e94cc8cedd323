use serde::Serialize;

use super::net::Dropout;
use super::params::Group;
use super::tape::Tape;
use super::train::{batch_gradients, Trainable};
use crate::error::{Error, Result};

/// Gradients smaller than this in both estimates are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: (String, usize),
    pub max_rel_error_transformer: f64,
    /// `None` when the model has no graph parameters.
    pub max_rel_error_graph: Option<f64>,
    pub entries_checked: usize,
    /// Entries whose ±ε probes moved some ReLU across its kink. Central
    /// differences are not a valid derivative estimate there, so these are
    /// excluded from the error statistics.
    pub entries_at_kinks: usize,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn probe<M: Trainable>(model: &M, batch: &[&M::Example]) -> Result<(f64, Vec<u64>)> {
    let mut total = 0.0;
    let mut weight = 0.0;
    let mut patterns = Vec::with_capacity(batch.len());
    for ex in batch {
        let mut t = Tape::new();
        let (loss, w) = model.example_loss(&mut t, ex, &mut Dropout::off())?;
        total += t.scalar(loss);
        weight += w;
        patterns.push(t.relu_pattern());
    }
    if weight <= 0.0 {
        return Err(Error::Dataset("batch has no target tokens".into()));
    }
    Ok((total / weight, patterns))
}

/// Compares analytic gradients of every parameter entry with central
/// differences `(f(θ+ε) − f(θ−ε)) / 2ε`. Dropout is disabled throughout.
pub fn grad_check<M: Trainable>(model: &mut M, batch: &[&M::Example], epsilon: f64) -> Result<GradCheckReport> {
    let (_, grads) = batch_gradients(&*model, batch, None)?;
    let (_, base) = probe(&*model, batch)?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (String::new(), 0),
        max_rel_error_transformer: 0.0,
        max_rel_error_graph: None,
        entries_checked: 0,
        entries_at_kinks: 0,
    };
    for p in 0..model.params().len() {
        let group = model.params().group(p);
        if group == Group::Graph {
            report.max_rel_error_graph.get_or_insert(0.0);
        }
        let n = model.params().value(p).len();
        for k in 0..n {
            let orig = model.params().value(p).as_slice().expect("standard layout")[k];
            set(model, p, k, orig + epsilon);
            let (plus, pp) = probe(&*model, batch)?;
            set(model, p, k, orig - epsilon);
            let (minus, pm) = probe(&*model, batch)?;
            set(model, p, k, orig);
            if pp != base || pm != base {
                report.entries_at_kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * epsilon);
            let analytic = grads[p].as_slice().expect("standard layout")[k];
            let err = relative_error(analytic, numeric, REL_ERROR_FLOOR);
            report.entries_checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (model.params().name(p).to_string(), k);
            }
            match group {
                Group::Transformer => report.max_rel_error_transformer = report.max_rel_error_transformer.max(err),
                Group::Graph => {
                    let g = report.max_rel_error_graph.get_or_insert(0.0);
                    *g = g.max(err);
                }
            }
        }
    }
    Ok(report)
}

fn set<M: Trainable>(model: &mut M, p: usize, k: usize, v: f64) {
    model.params_mut().value_mut(p).as_slice_mut().expect("standard layout")[k] = v;
}
