use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Optimizer parameter group. Graph parameters get their own learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Transformer,
    Graph,
}

/// Flat, ordered collection of named parameter matrices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    groups: Vec<Group>,
    decay: Vec<bool>,
}

impl ParamStore {
    pub fn push(&mut self, name: impl Into<String>, value: Array2<f64>, group: Group, decay: bool) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.groups.push(group);
        self.decay.push(decay);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn value(&self, i: usize) -> &Array2<f64> {
        &self.values[i]
    }

    pub fn value_mut(&mut self, i: usize) -> &mut Array2<f64> {
        &mut self.values[i]
    }

    pub fn values(&self) -> &[Array2<f64>] {
        &self.values
    }

    pub fn group(&self, i: usize) -> Group {
        self.groups[i]
    }

    pub fn decays(&self, i: usize) -> bool {
        self.decay[i]
    }

    pub fn zeros_like(&self) -> Vec<Array2<f64>> {
        self.values.iter().map(|v| Array2::zeros(v.dim())).collect()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn count_group(&self, g: Group) -> usize {
        self.values
            .iter()
            .zip(&self.groups)
            .filter(|(_, &gg)| gg == g)
            .map(|(v, _)| v.len())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Uniform `(-a, a)` matrix.
pub(crate) fn uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize, a: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-a..a))
}

/// Glorot/Xavier uniform bound.
pub(crate) fn xavier(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}
