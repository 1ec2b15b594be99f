//! Joint position-momentum samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A joint sample `z = (x, m)` with `d` coordinates per block.
///
/// VP samples carry an identically zero momentum block so that both
/// processes share one code path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub x: Vec<f64>,
    pub m: Vec<f64>,
}

impl State {
    pub fn new(x: Vec<f64>, m: Vec<f64>) -> Result<Self> {
        if x.len() != m.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), got: m.len() });
        }
        Ok(State { x, m })
    }

    pub fn zeros(d: usize) -> Self {
        State { x: vec![0.0; d], m: vec![0.0; d] }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.m).all(|v| v.is_finite())
    }

    /// `self + k * other`, coordinate-wise.
    pub fn axpy(&self, k: f64, other: &State) -> State {
        State {
            x: self.x.iter().zip(&other.x).map(|(a, b)| a + k * b).collect(),
            m: self.m.iter().zip(&other.m).map(|(a, b)| a + k * b).collect(),
        }
    }

    pub fn scale(&self, k: f64) -> State {
        State {
            x: self.x.iter().map(|v| k * v).collect(),
            m: self.m.iter().map(|v| k * v).collect(),
        }
    }

    /// Largest absolute coordinate difference.
    pub fn max_abs_diff(&self, other: &State) -> f64 {
        self.x
            .iter()
            .zip(&other.x)
            .chain(self.m.iter().zip(&other.m))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.x.iter().chain(&self.m).map(|v| v.abs()).fold(0.0, f64::max)
    }

    /// Flattens to `[x.., m..]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.x.clone();
        v.extend_from_slice(&self.m);
        v
    }

    pub fn from_flat(v: &[f64]) -> State {
        let d = v.len() / 2;
        State { x: v[..d].to_vec(), m: v[d..].to_vec() }
    }
}
