use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::Dropout;
use super::optim::{clip_grad_norm, AdamW};
use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// A model trained by summing per-example losses.
pub trait Trainable {
    type Example;

    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn dropout_rate(&self) -> f64;

    /// Summed loss of one example and the count it is normalized by
    /// (target tokens for generation, 1 for classification).
    fn example_loss(&self, t: &mut Tape, ex: &Self::Example, drop: &mut Dropout) -> Result<(Var, f64)>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub step: u64,
    /// Mean loss per normalization unit (nats per target token).
    pub loss: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    pub learning_rate: f64,
}

/// SplitMix64 finalizer over several words; stable seed derivation.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

/// Example indices for `step`: consecutive slices of per-epoch shuffles, so
/// the batch depends only on `(n, batch_size, seed, step)`.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, step: u64) -> Vec<usize> {
    assert!(n > 0 && batch_size > 0);
    let mut out = Vec::with_capacity(batch_size);
    let mut cached: Option<(u64, Vec<usize>)> = None;
    for i in 0..batch_size as u64 {
        let p = step * batch_size as u64 + i;
        let epoch = p / n as u64;
        if cached.as_ref().map(|c| c.0) != Some(epoch) {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(&[seed, epoch])));
            cached = Some((epoch, perm));
        }
        out.push(cached.as_ref().unwrap().1[(p % n as u64) as usize]);
    }
    out
}

/// Loss and parameter gradients of `batch` without updating anything.
/// The loss is normalized by the summed example weights.
pub fn batch_gradients<M: Trainable>(
    model: &M,
    batch: &[&M::Example],
    dropout_seed: Option<u64>,
) -> Result<(f64, Vec<Array2<f64>>)> {
    if batch.is_empty() {
        return Err(Error::Dataset("empty batch".into()));
    }
    let mut grads = model.params().zeros_like();
    let mut total = 0.0;
    let mut total_weight = 0.0;
    for (i, ex) in batch.iter().enumerate() {
        let mut rng = dropout_seed.map(|s| ChaCha8Rng::seed_from_u64(mix_seed(&[s, i as u64])));
        let mut drop = Dropout {
            rate: model.dropout_rate(),
            rng: rng.as_mut(),
        };
        let mut t = Tape::new();
        let (loss, w) = model.example_loss(&mut t, ex, &mut drop)?;
        total_weight += w;
        total += t.scalar(loss);
        t.backward(loss, 1.0, &mut grads);
    }
    if total_weight <= 0.0 {
        return Err(Error::Dataset("batch has no target tokens".into()));
    }
    for g in grads.iter_mut() {
        g.mapv_inplace(|x| x / total_weight);
    }
    Ok((total / total_weight, grads))
}

/// Normalized batch loss without dropout and without gradients.
pub fn batch_loss<M: Trainable>(model: &M, batch: &[&M::Example]) -> Result<f64> {
    let mut total = 0.0;
    let mut weight = 0.0;
    for ex in batch {
        let mut t = Tape::new();
        let (loss, w) = model.example_loss(&mut t, ex, &mut Dropout::off())?;
        total += t.scalar(loss);
        weight += w;
    }
    if weight <= 0.0 {
        return Err(Error::Dataset("batch has no target tokens".into()));
    }
    Ok(total / weight)
}

/// One optimization step: forward, backward, clip, AdamW update.
/// Dropout masks are derived from `(seed, optimizer step)`.
pub fn train_step<M: Trainable>(model: &mut M, batch: &[&M::Example], opt: &mut AdamW, seed: u64) -> Result<TrainStats> {
    let step = opt.t;
    let (loss, mut grads) = batch_gradients(model, batch, Some(mix_seed(&[seed, step, 0xD0])))?;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            step,
            detail: format!("loss {loss} on a batch of {}", batch.len()),
        });
    }
    let grad_norm = clip_grad_norm(&mut grads, opt.config.clip_norm);
    if !grad_norm.is_finite() {
        return Err(Error::NonFinite {
            step,
            detail: format!("gradient norm {grad_norm} at loss {loss}"),
        });
    }
    let learning_rate = opt.update(model.params_mut(), &grads);
    Ok(TrainStats {
        step,
        loss,
        grad_norm,
        learning_rate,
    })
}
