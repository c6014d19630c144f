use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::ParamVector;

/// Uniform tensor grid over a box in `ξ`-space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
    pub counts: [usize; 3],
}

impl GridSpec {
    /// The estimation box `[0.6, 1] × [0.6, 1] × [0, 1]` with `n` points per axis.
    pub fn standard(n: usize) -> Self {
        GridSpec { lower: [0.6, 0.6, 0.0], upper: [1.0, 1.0, 1.0], counts: [n, n, n] }
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if self.counts[a] < 2 {
                return Err(Error::config("grid needs at least 2 points per axis"));
            }
            if !(0.0 <= self.lower[a] && self.lower[a] < self.upper[a] && self.upper[a] <= 1.0) {
                return Err(Error::config(format!("grid axis {a} must satisfy 0 <= lower < upper <= 1")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Spacing `Δξ` per axis.
    pub fn spacing(&self) -> [f64; 3] {
        std::array::from_fn(|a| (self.upper[a] - self.lower[a]) / (self.counts[a] - 1) as f64)
    }

    /// Axis indices of column `j`; the last axis varies fastest.
    pub fn indices(&self, j: usize) -> [usize; 3] {
        let [_, na, ng] = self.counts;
        [j / (na * ng), (j / ng) % na, j % ng]
    }

    pub fn column(&self, idx: [usize; 3]) -> usize {
        (idx[0] * self.counts[1] + idx[1]) * self.counts[2] + idx[2]
    }

    pub fn label(&self, j: usize) -> ParamVector {
        let idx = self.indices(j);
        let h = self.spacing();
        ParamVector(std::array::from_fn(|a| {
            if idx[a] + 1 == self.counts[a] {
                self.upper[a]
            } else {
                self.lower[a] + idx[a] as f64 * h[a]
            }
        }))
    }

    pub fn labels(&self) -> Vec<ParamVector> {
        (0..self.len()).map(|j| self.label(j)).collect()
    }

    pub fn contains(&self, xi: &ParamVector) -> bool {
        (0..3).all(|a| xi.0[a] >= self.lower[a] && xi.0[a] <= self.upper[a])
    }
}
