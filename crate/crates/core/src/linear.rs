//! Affine layers shared by the spatial enhancer and the aggregation heads.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};

/// `y = W x + b` with `W` shaped `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub role: String,
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LinearParams {
    pub fn new(role: impl Into<String>, weight: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        let role = role.into();
        if weight.nrows() != bias.len() {
            return Err(invalid(format!(
                "{role}: weight has {} rows but bias has {} entries",
                weight.nrows(),
                bias.len()
            )));
        }
        if !weight.iter().chain(bias.iter()).all(|v| v.is_finite()) {
            return Err(invalid(format!("{role}: parameters must be finite")));
        }
        Ok(Self { role, weight, bias })
    }

    pub fn zeros(role: impl Into<String>, input: usize, output: usize) -> Self {
        Self {
            role: role.into(),
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    /// Weights drawn from `U(-1/sqrt(in), 1/sqrt(in))`, zero bias.
    pub fn seeded(role: impl Into<String>, input: usize, output: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        Self {
            role: role.into(),
            weight: Array2::from_shape_fn((output, input), |_| rng.random_range(-bound..bound)),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn expect_dims(&self, input: usize, output: usize) -> Result<()> {
        if self.input_dim() != input || self.output_dim() != output {
            return Err(invalid(format!(
                "{}: expected {input} -> {output}, got {} -> {}",
                self.role,
                self.input_dim(),
                self.output_dim()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.input_dim() {
            return Err(invalid(format!(
                "{}: input has {} entries, expected {}",
                self.role,
                x.len(),
                self.input_dim()
            )));
        }
        Ok(self.weight.dot(&x) + &self.bias)
    }

    pub fn apply_slice(&self, x: &[f64]) -> Result<Array1<f64>> {
        self.apply(ArrayView1::from(x))
    }
}
