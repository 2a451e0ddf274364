//! Minimal neural-network engine over flat parameter vectors.

mod model;
mod optim;

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use model::Model;
pub use optim::{sgd_step, OptimizerConfig, OptimizerState};

/// Flat model parameters: the unit that is trained, exchanged and averaged.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Equality on the IEEE bit patterns, so `-0.0 != 0.0` and `NaN == NaN`.
    pub fn bits_eq(&self, other: &ParamVector) -> bool {
        self.0.len() == other.0.len()
            && self
                .0
                .iter()
                .zip(&other.0)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub(crate) fn check_len(&self, expected: usize, what: &str) -> Result<()> {
        if self.0.len() != expected {
            return Err(Error::internal(format!(
                "{what}: expected {expected} parameters, got {}",
                self.0.len()
            )));
        }
        Ok(())
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// A borrowed mini-batch: one feature row and one label per example.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    inputs: Vec<&'a [f64]>,
    labels: Vec<usize>,
}

impl<'a> Batch<'a> {
    pub fn new(inputs: Vec<&'a [f64]>, labels: Vec<usize>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::config("batch must contain at least one example"));
        }
        if inputs.len() != labels.len() {
            return Err(Error::config(format!(
                "batch has {} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        Ok(Batch { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn inputs(&self) -> &[&'a [f64]] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'a [f64], usize)> + '_ {
        self.inputs.iter().copied().zip(self.labels.iter().copied())
    }
}
