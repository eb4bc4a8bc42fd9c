//! The two-heads-per-treatment outcome network.
//!
//! A shared representation Φ maps standardized covariates to a latent space.
//! Each treatment `t` owns two outcome heads `(t, 0)` and `(t, 1)` with
//! identical architecture but independent initializations. The potential
//! outcome estimate for `t` is the mean of its two heads.

use std::ops::Range;

use crate::autodiff::{check_dropout, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{self, Block, OutcomeScaler, Standardizer};
use crate::rng::{stream, Rng, Stream};

pub const TREATMENTS: usize = 2;

/// Estimated potential outcomes on the original outcome scale.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialOutcomes {
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
}

impl PotentialOutcomes {
    /// Per-row effect estimate `ŷ₁ − ŷ₀`.
    pub fn cate(&self) -> Vec<f64> {
        self.y1.iter().zip(&self.y0).map(|(a, b)| a - b).collect()
    }

    pub fn factual(&self, t: &[u8]) -> Vec<f64> {
        t.iter()
            .enumerate()
            .map(|(i, &ti)| if ti == 1 { self.y1[i] } else { self.y0[i] })
            .collect()
    }
}

/// Anything that predicts both potential outcomes from raw covariates.
pub trait CateModel {
    fn input_dim(&self) -> usize;

    fn potential_outcomes(&self, x: &Tensor) -> Result<PotentialOutcomes>;

    fn cate(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(self.potential_outcomes(x)?.cate())
    }
}

/// Which parameters a training step may move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    All,
    /// θ, the representation.
    Shared,
    /// ρ, all four outcome heads.
    Heads,
    /// Nothing; every parameter is a constant.
    Frozen,
}

#[derive(Debug, Clone)]
pub struct AdbcrModel {
    input_dim: usize,
    shared_layers: Vec<usize>,
    head_layers: Vec<usize>,
    dropout_p: f64,
    params: ParamSet,
    shared: Block,
    heads: [[Block; 2]; TREATMENTS],
    pub x_scaler: Standardizer,
    pub y_scaler: OutcomeScaler,
}

impl AdbcrModel {
    /// Fresh model with identity scalers. Φ and each head draw from their
    /// own substream of `seed`.
    pub fn init(
        input_dim: usize,
        shared_layers: &[usize],
        head_layers: &[usize],
        dropout_p: f64,
        seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Config("input dimension must be at least 1".into()));
        }
        if shared_layers.is_empty() || head_layers.is_empty() {
            return Err(Error::Config("layer lists must be nonempty".into()));
        }
        check_dropout(dropout_p)?;

        let mut params = ParamSet::new();
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(shared_layers);
        let shared = nn::init_block(
            &mut params,
            "phi",
            &sizes,
            false,
            &mut stream(seed, Stream::Init),
        )?;

        let latent = *shared_layers.last().unwrap();
        let mut head_sizes = vec![latent];
        head_sizes.extend_from_slice(head_layers);
        head_sizes.push(1);
        let mut heads = [[shared; 2]; TREATMENTS];
        for (t, pair) in heads.iter_mut().enumerate() {
            for (r, slot) in pair.iter_mut().enumerate() {
                *slot = nn::init_block(
                    &mut params,
                    &format!("head{t}{r}"),
                    &head_sizes,
                    true,
                    &mut stream(seed, Stream::Head(t, r)),
                )?;
            }
        }

        Ok(Self {
            input_dim,
            shared_layers: shared_layers.to_vec(),
            head_layers: head_layers.to_vec(),
            dropout_p,
            params,
            shared,
            heads,
            x_scaler: Standardizer::identity(input_dim),
            y_scaler: OutcomeScaler::IDENTITY,
        })
    }

    pub fn shared_layers(&self) -> &[usize] {
        &self.shared_layers
    }

    pub fn head_layers(&self) -> &[usize] {
        &self.head_layers
    }

    pub fn dropout_p(&self) -> f64 {
        self.dropout_p
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    /// Parameter indices belonging to `group`.
    pub fn group_range(&self, group: ParamGroup) -> Range<usize> {
        let split = self.shared.range().end;
        match group {
            ParamGroup::All => 0..self.params.len(),
            ParamGroup::Shared => 0..split,
            ParamGroup::Heads => split..self.params.len(),
            ParamGroup::Frozen => 0..0,
        }
    }

    pub fn head_range(&self, t: usize, r: usize) -> Range<usize> {
        self.heads[t][r].range()
    }

    /// Mutable references to the tensors of `group`, in index order.
    pub fn group_mut(&mut self, group: ParamGroup) -> Vec<&mut Tensor> {
        let range = self.group_range(group);
        self.params.slice_mut(range)
    }

    /// Copy head `(t, 0)`'s parameters into head `(t, 1)`.
    pub fn tie_heads(&mut self, t: usize) {
        let src = self.heads[t][0].range();
        let dst = self.heads[t][1].range();
        for (s, d) in src.zip(dst) {
            let v = self.params.get(s).clone();
            *self.params.get_mut(d) = v;
        }
    }

    /// Record all parameters on `tape`, tracking gradients only for `group`.
    pub fn bind(&self, tape: &mut Tape, group: ParamGroup) -> BoundModel<'_> {
        let range = self.group_range(group);
        let vars = nn::bind(tape, &self.params, |i| range.contains(&i));
        BoundModel { model: self, vars }
    }

    /// Output of head `(t, r)` on already standardized rows, in standardized
    /// outcome units.
    pub fn forward_head(
        &self,
        x: &Tensor,
        t: usize,
        r: usize,
        rng: Option<&mut Rng>,
    ) -> Result<Vec<f64>> {
        self.check_input(x)?;
        check_head(t, r)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, ParamGroup::All);
        let xv = tape.constant(x.clone());
        let mut rng = rng;
        let phi = bound.phi(&mut tape, xv, rng.as_deref_mut())?;
        let out = bound.head(&mut tape, phi, t, r, rng)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Eval-mode head averages per treatment on standardized rows, in
    /// standardized outcome units.
    pub fn predict_standardized(&self, x: &Tensor) -> Result<[Vec<f64>; TREATMENTS]> {
        self.check_input(x)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, ParamGroup::All);
        let xv = tape.constant(x.clone());
        let phi = bound.phi(&mut tape, xv, None)?;
        let mut out: [Vec<f64>; TREATMENTS] = Default::default();
        for (t, slot) in out.iter_mut().enumerate() {
            let a = bound.head(&mut tape, phi, t, 0, None)?;
            let b = bound.head(&mut tape, phi, t, 1, None)?;
            *slot = tape
                .value(a)
                .data()
                .iter()
                .zip(tape.value(b).data())
                .map(|(u, v)| 0.5 * (u + v))
                .collect();
        }
        Ok(out)
    }

    pub fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.input_dim {
            return Err(Error::Dimension(format!(
                "{} covariate columns, model expects {}",
                x.cols(),
                self.input_dim
            )));
        }
        Ok(())
    }

    pub(crate) fn from_parts(
        input_dim: usize,
        shared_layers: Vec<usize>,
        head_layers: Vec<usize>,
        dropout_p: f64,
        tensors: Vec<Tensor>,
        x_scaler: Standardizer,
        y_scaler: OutcomeScaler,
    ) -> Result<Self> {
        let mut model = Self::init(input_dim, &shared_layers, &head_layers, dropout_p, 0)?;
        crate::checkpoint::install(&mut model.params, tensors)?;
        if x_scaler.dim() != input_dim {
            return Err(Error::Checkpoint("scaler dimension mismatch".into()));
        }
        model.x_scaler = x_scaler;
        model.y_scaler = y_scaler;
        Ok(model)
    }
}

impl CateModel for AdbcrModel {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// ŷₜ = (R⁰ₜ(Φ(x)) + R¹ₜ(Φ(x))) / 2 on the original outcome scale.
    fn potential_outcomes(&self, x: &Tensor) -> Result<PotentialOutcomes> {
        let z = self.x_scaler.transform(x)?;
        let [y0, y1] = self.predict_standardized(&z)?;
        let s = self.y_scaler;
        Ok(PotentialOutcomes {
            y0: y0.into_iter().map(|v| s.destandardize(v)).collect(),
            y1: y1.into_iter().map(|v| s.destandardize(v)).collect(),
        })
    }
}

/// A model whose parameters have been placed on a tape.
pub struct BoundModel<'m> {
    model: &'m AdbcrModel,
    vars: Vec<Var>,
}

impl BoundModel<'_> {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn phi(&self, tape: &mut Tape, x: Var, rng: Option<&mut Rng>) -> Result<Var> {
        let m = self.model;
        nn::forward_block(tape, &self.vars, m.shared, x, m.dropout_p, rng)
    }

    pub fn head(
        &self,
        tape: &mut Tape,
        phi: Var,
        t: usize,
        r: usize,
        rng: Option<&mut Rng>,
    ) -> Result<Var> {
        check_head(t, r)?;
        let m = self.model;
        nn::forward_block(tape, &self.vars, m.heads[t][r], phi, m.dropout_p, rng)
    }
}

fn check_head(t: usize, r: usize) -> Result<()> {
    if t >= TREATMENTS || r >= 2 {
        return Err(Error::Config(format!("no outcome head ({t}, {r})")));
    }
    Ok(())
}
