use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A named, ordered collection of trainable tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.names.push(name.into());
        self.values.push(value);
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

    pub fn get(&self, i: usize) -> &Tensor {
        &self.values[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.values[i]
    }

    pub fn slice_mut(&mut self, range: std::ops::Range<usize>) -> Vec<&mut Tensor> {
        self.values[range].iter_mut().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub step: u64,
}

impl AdamState {
    fn fresh(shape: (usize, usize)) -> Self {
        Self {
            m: Tensor::zeros(shape.0, shape.1),
            v: Tensor::zeros(shape.0, shape.1),
            step: 0,
        }
    }
}

/// Adam with bias correction. Weight decay is an l2 penalty folded into the
/// gradient before the moment update.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            states: Vec::new(),
        }
    }

    pub fn states(&self) -> &[AdamState] {
        &self.states
    }

    /// Apply one update to `params` in place. `params[i]` pairs with
    /// `grads[i]`, and the pairing must stay fixed across calls.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Dimension(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            p.same_shape(g, "gradient")?;
            if !g.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite gradient for parameter {i}"
                )));
            }
        }
        if self.states.is_empty() {
            self.states = params.iter().map(|p| AdamState::fresh(p.shape())).collect();
        } else if self.states.len() != params.len() {
            return Err(Error::Dimension(format!(
                "optimizer tracks {} parameters, got {}",
                self.states.len(),
                params.len()
            )));
        }

        let (b1, b2) = (self.beta1, self.beta2);
        for ((param, grad), state) in params.iter_mut().zip(grads).zip(&mut self.states) {
            param.same_shape(&state.m, "optimizer state")?;
            state.step += 1;
            let bc1 = 1.0 - b1.powi(state.step as i32);
            let bc2 = 1.0 - b2.powi(state.step as i32);
            let theta = param.data_mut();
            let (m, v) = (state.m.data_mut(), state.v.data_mut());
            for j in 0..theta.len() {
                let g = grad.data()[j] + self.weight_decay * theta[j];
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                theta[j] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut theta = Tensor::new(2, 2, vec![0.3, -1.0, 2.0, 0.0]).unwrap();
        let before = theta.clone();
        let mut adam = Adam::new(0.1, 0.0);
        adam.step(&mut [&mut theta], &[Tensor::zeros(2, 2)]).unwrap();
        assert_eq!(theta, before);
    }

    #[test]
    fn first_step_by_hand() {
        // m̂ = g = 1, v̂ = g² = 1 after bias correction.
        let mut theta = Tensor::scalar(1.0);
        let mut adam = Adam::new(0.1, 0.0);
        adam.step(&mut [&mut theta], &[Tensor::scalar(1.0)]).unwrap();
        let expect = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8));
        assert!((theta.item() - expect).abs() < 1e-15);
        assert_eq!(adam.states()[0].step, 1);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut theta = Tensor::scalar(1.0);
        let mut adam = Adam::new(0.05, 0.0);
        for _ in 0..200 {
            let g = Tensor::scalar(2.0 * theta.item());
            adam.step(&mut [&mut theta], &[g]).unwrap();
        }
        assert!(theta.item().abs() < 0.05, "theta {}", theta.item());
    }

    #[test]
    fn non_finite_gradient_is_rejected_without_update() {
        let mut theta = Tensor::scalar(1.0);
        let mut adam = Adam::new(0.1, 0.0);
        let err = adam.step(&mut [&mut theta], &[Tensor::scalar(f64::NAN)]);
        assert!(matches!(err, Err(Error::Training(_))));
        assert_eq!(theta.item(), 1.0);
        assert!(adam.states().is_empty());
    }

    #[test]
    fn weight_decay_enters_gradient() {
        // g_eff = 0 + 0.5·2 = 1 → same first step as a unit gradient.
        let mut theta = Tensor::scalar(2.0);
        let mut adam = Adam::new(0.1, 0.5);
        adam.step(&mut [&mut theta], &[Tensor::scalar(0.0)]).unwrap();
        assert!((theta.item() - (2.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
    }
}
