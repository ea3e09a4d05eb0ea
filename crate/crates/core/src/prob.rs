use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Allowed deviation of a probability vector's sum from 1.
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ProbError {
    #[error("probability vector is empty")]
    Empty,
    #[error("entry {index} = {value} is not a probability")]
    OutOfRange { index: usize, value: f64 },
    #[error("entries sum to {0}, expected 1")]
    BadSum(f64),
}

/// A classifier's output distribution over classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self, ProbError> {
        if probs.is_empty() {
            return Err(ProbError::Empty);
        }
        if let Some((index, &value)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !(0.0..=1.0).contains(*p))
        {
            return Err(ProbError::OutOfRange { index, value });
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(ProbError::BadSum(sum));
        }
        Ok(ProbVector(probs))
    }

    /// Wraps the output of a softmax without re-validating it.
    pub(crate) fn from_softmax(probs: Vec<f64>) -> Self {
        debug_assert!(ProbVector::new(probs.clone()).is_ok());
        ProbVector(probs)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }

    /// `(argmax, probability)`, lowest index on ties.
    pub fn top(&self) -> (usize, f64) {
        let i = argmax(&self.0);
        (i, self.0[i])
    }
}

impl std::ops::Index<usize> for ProbVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Index of the largest entry; the first one wins ties. Panics on an empty
/// slice.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `(class, confidence)` of the most probable class.
pub fn top_class(p: &[f64]) -> Result<(usize, f64), ProbError> {
    if p.is_empty() {
        return Err(ProbError::Empty);
    }
    let i = argmax(p);
    Ok((i, p[i]))
}
