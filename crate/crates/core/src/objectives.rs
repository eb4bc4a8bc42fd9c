//! Training and selection objectives of the two-heads-per-treatment network.
//!
//! * factual loss: Σ_{t,r} mean over rows with T = t of (Rʳₜ(Φ(x)) − y)²
//! * discriminative distance: Σₜ mean over the pool of head pair t of
//!   d(R⁰ₜ(Φ(x)), R¹ₜ(Φ(x))), where the pool holds the rows with T = 1 − t
//!   plus every unlabeled row
//! * validation criterion: factual loss + distance (l1), in eval mode
//!
//! Expectations are plain means over the qualifying batch rows and the sums
//! are unweighted.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{AdbcrModel, BoundModel, ParamGroup, TREATMENTS};
use crate::rng::Rng;

/// Pointwise metric between adjacent head outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metric {
    #[default]
    L1,
    Squared,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::L1 => "l1",
            Metric::Squared => "squared",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(Metric::L1),
            "squared" | "l2" | "mse" => Ok(Metric::Squared),
            other => Err(Error::Config(format!("unknown metric `{other}`"))),
        }
    }
}

/// Standardized rows of one batch or split.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchView {
    pub x: Tensor,
    pub t: Vec<u8>,
    pub y: Vec<f64>,
    /// Covariate rows without outcome; counterfactual for both head pairs.
    pub unlabeled_x: Tensor,
}

impl BatchView {
    pub fn new(x: Tensor, t: Vec<u8>, y: Vec<f64>) -> Result<Self> {
        let d = x.cols();
        let v = Self {
            x,
            t,
            y,
            unlabeled_x: Tensor::zeros(0, d),
        };
        v.validate()?;
        Ok(v)
    }

    pub fn with_unlabeled(mut self, unlabeled_x: Tensor) -> Result<Self> {
        self.unlabeled_x = unlabeled_x;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.rows() != self.t.len() || self.t.len() != self.y.len() {
            return Err(Error::Dimension(format!(
                "batch rows misaligned: x {}, t {}, y {}",
                self.x.rows(),
                self.t.len(),
                self.y.len()
            )));
        }
        if self.unlabeled_x.rows() > 0 && self.unlabeled_x.cols() != self.x.cols() {
            return Err(Error::Dimension(format!(
                "unlabeled rows have {} columns, labeled rows {}",
                self.unlabeled_x.cols(),
                self.x.cols()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Labeled rows with `T = t`.
    pub fn arm(&self, t: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.t[i] as usize == t).collect()
    }

    /// Rows, in the stacked (labeled then unlabeled) layout, on which head
    /// pair `t` is compared.
    pub fn pool(&self, t: usize) -> Vec<usize> {
        let n = self.len();
        let mut rows: Vec<usize> = (0..n).filter(|&i| self.t[i] as usize != t).collect();
        rows.extend(n..n + self.unlabeled_x.rows());
        rows
    }

    fn stacked_x(&self) -> Result<Tensor> {
        if self.unlabeled_x.rows() == 0 {
            Ok(self.x.clone())
        } else {
            self.x.vstack(&self.unlabeled_x)
        }
    }
}

/// One forward graph of the model over a batch.
///
/// Φ is evaluated once on the stacked rows; the objectives then select the
/// rows each head needs. Dropout is active iff an rng is supplied.
pub struct Forward<'m> {
    pub tape: Tape,
    bound: BoundModel<'m>,
    phi: Var,
}

impl<'m> Forward<'m> {
    /// Build Φ over the labeled rows, plus the unlabeled rows when
    /// `with_unlabeled` is set. Gradients are tracked for `group` only.
    pub fn new(
        model: &'m AdbcrModel,
        batch: &BatchView,
        group: ParamGroup,
        with_unlabeled: bool,
        rng: Option<&mut Rng>,
    ) -> Result<Self> {
        batch.validate()?;
        model.check_input(&batch.x)?;
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, group);
        let x = if with_unlabeled {
            batch.stacked_x()?
        } else {
            batch.x.clone()
        };
        let xv = tape.constant(x);
        let phi = bound.phi(&mut tape, xv, rng)?;
        Ok(Self { tape, bound, phi })
    }

    pub fn factual_loss(&mut self, batch: &BatchView, mut rng: Option<&mut Rng>) -> Result<Var> {
        let mut terms = Vec::with_capacity(2 * TREATMENTS);
        for t in 0..TREATMENTS {
            let rows = batch.arm(t);
            if rows.is_empty() {
                return Err(Error::BatchComposition(format!(
                    "no rows with treatment {t} for the factual loss"
                )));
            }
            let ys: Vec<f64> = rows.iter().map(|&i| batch.y[i]).collect();
            let target = self.tape.constant(Tensor::column(&ys));
            let phi_t = self.tape.rows(self.phi, &rows)?;
            for r in 0..2 {
                let pred = self.bound.head(&mut self.tape, phi_t, t, r, rng.as_deref_mut())?;
                terms.push(self.tape.mse(pred, target)?);
            }
        }
        self.tape.sum(&terms)
    }

    /// Requires Φ to have been built with the unlabeled rows whenever the
    /// batch carries any.
    pub fn distance(
        &mut self,
        batch: &BatchView,
        metric: Metric,
        mut rng: Option<&mut Rng>,
    ) -> Result<Var> {
        let built = self.tape.value(self.phi).rows();
        let mut terms = Vec::with_capacity(TREATMENTS);
        for t in 0..TREATMENTS {
            let rows: Vec<usize> = batch.pool(t).into_iter().filter(|&i| i < built).collect();
            if rows.is_empty() {
                return Err(Error::BatchComposition(format!(
                    "no counterfactual rows for head pair {t}"
                )));
            }
            let phi_p = self.tape.rows(self.phi, &rows)?;
            // Both heads of the pair see the same dropout masks, so the gap
            // reflects their parameters rather than mask noise.
            let mut twin = rng.as_deref().cloned();
            let a = self.bound.head(&mut self.tape, phi_p, t, 0, rng.as_deref_mut())?;
            let b = self.bound.head(&mut self.tape, phi_p, t, 1, twin.as_mut())?;
            terms.push(match metric {
                Metric::L1 => self.tape.l1_mean(a, b)?,
                Metric::Squared => self.tape.mse(a, b)?,
            });
        }
        self.tape.sum(&terms)
    }

    pub fn bound(&self) -> &BoundModel<'m> {
        &self.bound
    }

    pub fn value(&self, v: Var) -> f64 {
        self.tape.value(v).item()
    }
}

/// Eval-mode factual loss.
pub fn factual_loss(model: &AdbcrModel, batch: &BatchView) -> Result<f64> {
    let mut f = Forward::new(model, batch, ParamGroup::Frozen, false, None)?;
    let v = f.factual_loss(batch, None)?;
    Ok(f.value(v))
}

/// Eval-mode discriminative distance, including unlabeled rows.
pub fn discriminative_distance(model: &AdbcrModel, batch: &BatchView, metric: Metric) -> Result<f64> {
    let mut f = Forward::new(model, batch, ParamGroup::Frozen, true, None)?;
    let v = f.distance(batch, metric, None)?;
    Ok(f.value(v))
}

/// The two parts of the selection criterion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Criterion {
    pub factual: f64,
    pub distance: f64,
    pub value: f64,
}

/// factual loss + `weight`·distance (l1), evaluated deterministically on the
/// whole batch with dropout off.
pub fn validation_criterion(model: &AdbcrModel, batch: &BatchView, weight: f64) -> Result<Criterion> {
    let mut f = Forward::new(model, batch, ParamGroup::Frozen, true, None)?;
    let fl = f.factual_loss(batch, None)?;
    let d = f.distance(batch, Metric::L1, None)?;
    let (factual, distance) = (f.value(fl), f.value(d));
    Ok(Criterion {
        factual,
        distance,
        value: factual + weight * distance,
    })
}
