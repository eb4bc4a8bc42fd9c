//! Fully connected building blocks shared by the network models.
//!
//! Parameters of a network live in one flat [`ParamSet`]; a [`Block`] names
//! the contiguous run of (weight, bias) pairs that make up one layer stack.
//! Hidden layers apply ELU followed by dropout; a block with a linear output
//! leaves its last layer untouched.

use std::ops::Range;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    offset: usize,
    layers: usize,
    linear_output: bool,
}

impl Block {
    /// Indices of this block's tensors in the owning [`ParamSet`].
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + 2 * self.layers
    }
}

/// Append a layer stack with widths `sizes[0] -> sizes[1] -> ...`, drawing
/// weights and biases from U(-1/√fan_in, 1/√fan_in).
pub fn init_block(
    params: &mut ParamSet,
    name: &str,
    sizes: &[usize],
    linear_output: bool,
    rng: &mut Rng,
) -> Result<Block> {
    if sizes.len() < 2 {
        return Err(Error::Config(format!("{name}: a block needs at least one layer")));
    }
    if let Some(pos) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::Config(format!("{name}: layer {pos} has zero width")));
    }
    let offset = params.len();
    for (l, w) in sizes.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        };
        let weight = Tensor::new(fan_in, fan_out, draw(fan_in * fan_out))?;
        let bias = Tensor::new(1, fan_out, draw(fan_out))?;
        params.push(format!("{name}.{l}.weight"), weight);
        params.push(format!("{name}.{l}.bias"), bias);
    }
    Ok(Block {
        offset,
        layers: sizes.len() - 1,
        linear_output,
    })
}

/// Put every parameter on the tape; those for which `trainable` is false are
/// recorded as constants so no gradient is computed for them.
pub fn bind(tape: &mut Tape, params: &ParamSet, trainable: impl Fn(usize) -> bool) -> Vec<Var> {
    params
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            if trainable(i) {
                tape.param(v.clone())
            } else {
                tape.constant(v.clone())
            }
        })
        .collect()
}

/// Forward pass through `block`. Dropout is active only when `rng` is given.
pub fn forward_block(
    tape: &mut Tape,
    vars: &[Var],
    block: Block,
    x: Var,
    dropout_p: f64,
    mut rng: Option<&mut Rng>,
) -> Result<Var> {
    let mut h = x;
    for l in 0..block.layers {
        let w = vars[block.offset + 2 * l];
        let b = vars[block.offset + 2 * l + 1];
        h = tape.matmul(h, w)?;
        h = tape.add_bias(h, b)?;
        let last = l + 1 == block.layers;
        if !(last && block.linear_output) {
            h = tape.elu(h);
            if let Some(r) = rng.as_deref_mut() {
                h = tape.dropout(h, dropout_p, true, r)?;
            }
        }
    }
    Ok(h)
}

/// Per-column z-scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Fit on the rows of `x`. Constant columns get unit scale.
    pub fn fit(x: &Tensor) -> Self {
        let (n, d) = x.shape();
        let mut mean = vec![0.0; d];
        let mut std = vec![1.0; d];
        if n == 0 {
            return Self { mean, std };
        }
        for (j, (m, s)) in mean.iter_mut().zip(std.iter_mut()).enumerate() {
            let col = (0..n).map(|i| x.get(i, j));
            *m = col.clone().sum::<f64>() / n as f64;
            let var = col.map(|v| (v - *m) * (v - *m)).sum::<f64>() / n as f64;
            *s = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        }
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.dim() {
            return Err(Error::Dimension(format!(
                "{} covariate columns, expected {}",
                x.cols(),
                self.dim()
            )));
        }
        let d = self.dim();
        let mut out = x.clone();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            let j = k % d;
            *v = (*v - self.mean[j]) / self.std[j];
        }
        Ok(out)
    }
}

/// Scalar z-scoring for outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeScaler {
    pub mean: f64,
    pub std: f64,
}

impl OutcomeScaler {
    pub const IDENTITY: OutcomeScaler = OutcomeScaler {
        mean: 0.0,
        std: 1.0,
    };

    pub fn fit(y: &[f64]) -> Self {
        if y.is_empty() {
            return Self::IDENTITY;
        }
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let sd = (y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        Self {
            mean,
            std: if sd > 1e-12 { sd } else { 1.0 },
        }
    }

    pub fn standardize(&self, y: f64) -> f64 {
        (y - self.mean) / self.std
    }

    pub fn destandardize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}
