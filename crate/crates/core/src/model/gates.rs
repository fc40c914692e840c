use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

/// Per-(layer, head) multiplicative gains on head outputs. All-ones is the
/// identity intervention; the same tensor is the differentiation variable for
/// attribution.
#[derive(Debug, Clone, PartialEq)]
pub struct GateTensor {
    gains: Array2<f64>,
}

impl GateTensor {
    pub fn ones(num_layers: usize, num_heads: usize) -> Self {
        Self {
            gains: Array2::ones((num_layers, num_heads)),
        }
    }

    pub fn from_array(gains: Array2<f64>) -> Result<Self> {
        let g = Self { gains };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for ((l, h), &g) in self.gains.indexed_iter() {
            if !(g.is_finite() && g > 0.0) {
                return Err(Error::InvalidGates(format!(
                    "gain {g} at layer {}, head {} must be finite and > 0",
                    l + 1,
                    h + 1
                )));
            }
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.gains.nrows()
    }

    pub fn num_heads(&self) -> usize {
        self.gains.ncols()
    }

    pub fn get(&self, layer: usize, head: usize) -> f64 {
        self.gains[[layer, head]]
    }

    /// Sets one gain. Non-positive or non-finite values are rejected.
    pub fn set(&mut self, layer: usize, head: usize, gain: f64) -> Result<()> {
        if !(gain.is_finite() && gain > 0.0) {
            return Err(Error::InvalidGates(format!("gain {gain} must be finite and > 0")));
        }
        self.gains[[layer, head]] = gain;
        Ok(())
    }

    pub fn row(&self, layer: usize) -> ArrayView1<'_, f64> {
        self.gains.row(layer)
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.gains
    }

    pub fn is_identity(&self) -> bool {
        self.gains.iter().all(|&g| g == 1.0)
    }

    /// Distinct gain values, sorted ascending.
    pub fn distinct_values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.gains.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_positive_gains() {
        let mut g = GateTensor::ones(2, 2);
        assert!(g.is_identity());
        assert!(g.set(0, 1, 0.0).is_err());
        assert!(g.set(0, 1, f64::NAN).is_err());
        g.set(1, 0, 1.5).unwrap();
        assert_eq!(g.distinct_values(), vec![1.0, 1.5]);
        assert!(GateTensor::from_array(Array2::from_elem((1, 1), -1.0)).is_err());
    }
}
