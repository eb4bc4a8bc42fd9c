//! Domain-adversarial counterfactual regression.
//!
//! A shared representation feeds one outcome head per treatment and a
//! discriminator that classifies the treatment from the representation. Each
//! batch runs (i) a factual step on Φ and the heads, (ii) a cross-entropy
//! step on the discriminator, and (iii) a reversed step on Φ that raises the
//! discriminator's loss scaled by the reversal weight. Selection uses the
//! factual validation loss.

use std::io::Write;

use crate::autodiff::{Adam, ParamSet, Tape, Tensor, Var};
use crate::checkpoint::FittedModel;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{CateModel, PotentialOutcomes, TREATMENTS};
use crate::nn::{self, Block, OutcomeScaler, Standardizer};
use crate::objectives::BatchView;
use crate::rng::{stream, Rng, Stream};
use crate::trainer::{
    make_batches, EpochRecord, Prepared, StepStats, TrainConfig, TrainResult, IMPROVEMENT_TOL,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DanncrGroup {
    All,
    Shared,
    /// Φ and both outcome heads.
    Outcome,
    Discriminator,
    Frozen,
}

#[derive(Debug, Clone)]
pub struct DanncrModel {
    input_dim: usize,
    shared_layers: Vec<usize>,
    head_layers: Vec<usize>,
    dropout_p: f64,
    params: ParamSet,
    shared: Block,
    heads: [Block; TREATMENTS],
    discriminator: Block,
    pub x_scaler: Standardizer,
    pub y_scaler: OutcomeScaler,
}

impl DanncrModel {
    /// The discriminator shares the head architecture with a two-logit output.
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
        crate::autodiff::check_dropout(dropout_p)?;
        let mut params = ParamSet::new();
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(shared_layers);
        let shared = nn::init_block(&mut params, "phi", &sizes, false, &mut stream(seed, Stream::Init))?;
        let latent = *shared_layers.last().unwrap();
        let tail = |out: usize| {
            let mut s = vec![latent];
            s.extend_from_slice(head_layers);
            s.push(out);
            s
        };
        let mut heads = [shared; TREATMENTS];
        for (t, h) in heads.iter_mut().enumerate() {
            *h = nn::init_block(
                &mut params,
                &format!("head{t}"),
                &tail(1),
                true,
                &mut stream(seed, Stream::Head(t, 0)),
            )?;
        }
        let discriminator = nn::init_block(
            &mut params,
            "disc",
            &tail(TREATMENTS),
            true,
            &mut stream(seed, Stream::Discriminator),
        )?;
        Ok(Self {
            input_dim,
            shared_layers: shared_layers.to_vec(),
            head_layers: head_layers.to_vec(),
            dropout_p,
            params,
            shared,
            heads,
            discriminator,
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

    pub fn group_range(&self, group: DanncrGroup) -> std::ops::Range<usize> {
        let disc = self.discriminator.range();
        match group {
            DanncrGroup::All => 0..self.params.len(),
            DanncrGroup::Shared => self.shared.range(),
            DanncrGroup::Outcome => 0..disc.start,
            DanncrGroup::Discriminator => disc,
            DanncrGroup::Frozen => 0..0,
        }
    }

    fn group_mut(&mut self, group: DanncrGroup) -> Vec<&mut Tensor> {
        let r = self.group_range(group);
        self.params.slice_mut(r)
    }

    fn bind(&self, tape: &mut Tape, group: DanncrGroup) -> Vec<Var> {
        let r = self.group_range(group);
        nn::bind(tape, &self.params, |i| r.contains(&i))
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

    /// Standardized outcome predictions for both treatments, eval mode.
    pub fn predict_standardized(&self, x: &Tensor) -> Result<[Vec<f64>; TREATMENTS]> {
        self.check_input(x)?;
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, DanncrGroup::Frozen);
        let xv = tape.constant(x.clone());
        let phi = nn::forward_block(&mut tape, &vars, self.shared, xv, self.dropout_p, None)?;
        let mut out: [Vec<f64>; TREATMENTS] = Default::default();
        for (t, o) in out.iter_mut().enumerate() {
            let h = nn::forward_block(&mut tape, &vars, self.heads[t], phi, self.dropout_p, None)?;
            *o = tape.value(h).data().to_vec();
        }
        Ok(out)
    }

    /// Fraction of rows whose treatment the discriminator predicts, eval mode.
    pub fn discriminator_accuracy(&self, x: &Tensor, t: &[u8]) -> Result<f64> {
        self.check_input(x)?;
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, DanncrGroup::Frozen);
        let xv = tape.constant(x.clone());
        let phi = nn::forward_block(&mut tape, &vars, self.shared, xv, self.dropout_p, None)?;
        let logits = nn::forward_block(&mut tape, &vars, self.discriminator, phi, self.dropout_p, None)?;
        let l = tape.value(logits);
        let hits = (0..l.rows())
            .filter(|&i| usize::from(l.get(i, 1) > l.get(i, 0)) == t[i] as usize)
            .count();
        Ok(hits as f64 / t.len() as f64)
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

impl CateModel for DanncrModel {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

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

/// One graph over a batch with gradients tracked for `group`.
struct Graph<'m> {
    model: &'m DanncrModel,
    tape: Tape,
    vars: Vec<Var>,
    phi: Var,
}

impl<'m> Graph<'m> {
    fn new(model: &'m DanncrModel, x: &Tensor, group: DanncrGroup, rng: Option<&mut Rng>) -> Result<Self> {
        model.check_input(x)?;
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape, group);
        let xv = tape.constant(x.clone());
        let phi = nn::forward_block(&mut tape, &vars, model.shared, xv, model.dropout_p, rng)?;
        Ok(Self { model, tape, vars, phi })
    }

    fn factual(&mut self, batch: &BatchView, mut rng: Option<&mut Rng>) -> Result<Var> {
        let mut terms = Vec::with_capacity(TREATMENTS);
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
            let m = self.model;
            let pred = nn::forward_block(&mut self.tape, &self.vars, m.heads[t], phi_t, m.dropout_p, rng.as_deref_mut())?;
            terms.push(self.tape.mse(pred, target)?);
        }
        self.tape.sum(&terms)
    }

    fn cross_entropy(&mut self, t: &[u8], rng: Option<&mut Rng>) -> Result<Var> {
        let m = self.model;
        let logits = nn::forward_block(&mut self.tape, &self.vars, m.discriminator, self.phi, m.dropout_p, rng)?;
        let labels: Vec<usize> = t.iter().map(|&v| v as usize).collect();
        self.tape.softmax_cross_entropy(logits, &labels)
    }

    fn grads(&self, root: Var, group: DanncrGroup) -> Result<Vec<Tensor>> {
        let g = self.tape.backward(root)?;
        Ok(self
            .model
            .group_range(group)
            .map(|i| g.wrt(self.vars[i], self.model.params.get(i).shape()))
            .collect())
    }
}

/// Eval-mode factual validation loss.
pub fn factual_loss(model: &DanncrModel, batch: &BatchView) -> Result<f64> {
    let mut g = Graph::new(model, &batch.x, DanncrGroup::Frozen, None)?;
    let v = g.factual(batch, None)?;
    Ok(g.tape.value(v).item())
}

/// Model plus the optimizer state of the three phases.
pub struct DanncrTrainer {
    pub model: DanncrModel,
    pub config: TrainConfig,
    opt_outcome: Adam,
    opt_disc: Adam,
    opt_shared: Adam,
    dropout_rng: Rng,
    pub stats: StepStats,
}

impl DanncrTrainer {
    pub fn new(model: DanncrModel, config: TrainConfig) -> Self {
        let (lr, wd) = (config.learning_rate, config.weight_decay);
        Self {
            model,
            opt_outcome: Adam::new(lr, wd),
            opt_disc: Adam::new(lr, wd),
            opt_shared: Adam::new(lr, wd),
            dropout_rng: stream(config.seed, Stream::Dropout),
            config,
            stats: StepStats::default(),
        }
    }

    /// Factual step on Φ and the heads.
    pub fn step_outcome(&mut self, batch: &BatchView) -> Result<f64> {
        let (loss, grads) = {
            let mut g = Graph::new(&self.model, &batch.x, DanncrGroup::Outcome, Some(&mut self.dropout_rng))?;
            let root = g.factual(batch, Some(&mut self.dropout_rng))?;
            (finite(g.tape.value(root).item(), "factual loss")?, g.grads(root, DanncrGroup::Outcome)?)
        };
        self.opt_outcome.step(&mut self.model.group_mut(DanncrGroup::Outcome), &grads)?;
        self.stats.step_a += 1;
        Ok(loss)
    }

    /// Cross-entropy step on the discriminator with Φ fixed.
    pub fn step_discriminator(&mut self, batch: &BatchView) -> Result<f64> {
        let (loss, grads) = {
            let mut g = Graph::new(&self.model, &batch.x, DanncrGroup::Discriminator, Some(&mut self.dropout_rng))?;
            let root = g.cross_entropy(&batch.t, Some(&mut self.dropout_rng))?;
            (finite(g.tape.value(root).item(), "discriminator loss")?, g.grads(root, DanncrGroup::Discriminator)?)
        };
        self.opt_disc.step(&mut self.model.group_mut(DanncrGroup::Discriminator), &grads)?;
        self.stats.step_b += 1;
        Ok(loss)
    }

    /// Reversed step on Φ: descend `−λ·cross-entropy`. A zero weight skips
    /// the update.
    pub fn step_reversal(&mut self, batch: &BatchView) -> Result<f64> {
        let lambda = self.config.reversal_weight;
        if lambda == 0.0 {
            return Ok(0.0);
        }
        let (loss, grads) = {
            let mut g = Graph::new(&self.model, &batch.x, DanncrGroup::Shared, Some(&mut self.dropout_rng))?;
            let ce = g.cross_entropy(&batch.t, Some(&mut self.dropout_rng))?;
            let root = g.tape.scale(ce, -lambda);
            (finite(g.tape.value(ce).item(), "discriminator loss")?, g.grads(root, DanncrGroup::Shared)?)
        };
        self.opt_shared.step(&mut self.model.group_mut(DanncrGroup::Shared), &grads)?;
        self.stats.step_c += 1;
        Ok(loss)
    }

    pub fn train_batch(&mut self, batch: &BatchView) -> Result<f64> {
        let loss = self.step_outcome(batch)?;
        self.step_discriminator(batch)?;
        self.step_reversal(batch)?;
        Ok(loss)
    }
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Training(format!("{what} is not finite")))
    }
}

pub fn train(ds: &Dataset, config: &TrainConfig) -> Result<TrainResult> {
    train_logged(ds, config, None)
}

pub fn train_logged(ds: &Dataset, config: &TrainConfig, mut log: Option<&mut dyn Write>) -> Result<TrainResult> {
    config.validate()?;
    let data = Prepared::new(ds, false)?;
    let mut model = DanncrModel::init(
        ds.dim(),
        &config.shared_layers,
        &config.head_layers,
        config.dropout_p,
        config.seed,
    )?;
    model.x_scaler = data.x_scaler.clone();
    model.y_scaler = data.y_scaler;
    let mut trainer = DanncrTrainer::new(model, config.clone());
    let mut batch_rng = stream(config.seed, Stream::Batching);
    let mut unlabeled_rng = stream(config.seed, Stream::Unlabeled);
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, DanncrModel)> = None;
    let mut stale = 0;

    for epoch in 1..=config.max_epochs {
        let plans = make_batches(&data.train.t, config.batch_size, 0, &mut batch_rng, &mut unlabeled_rng)?;
        let mut fact_sum = 0.0;
        for plan in &plans {
            fact_sum += trainer.train_batch(&data.batch(plan)?)?;
        }
        let factual = factual_loss(&trainer.model, &data.val)?;
        if !factual.is_finite() {
            return Err(Error::Training(format!("validation criterion is not finite at epoch {epoch}")));
        }
        let record = EpochRecord {
            epoch,
            train_factual: fact_sum / plans.len() as f64,
            factual,
            distance: None,
            criterion: factual,
        };
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", record.log_line())
                .map_err(|e| Error::Training(format!("cannot write history: {e}")))?;
        }
        if best.as_ref().is_none_or(|(v, _, _)| factual < v - IMPROVEMENT_TOL) {
            best = Some((factual, epoch, trainer.model.clone()));
            stale = 0;
        } else {
            stale += 1;
        }
        history.push(record);
        if stale >= config.patience {
            break;
        }
    }
    let (best_value, best_epoch, model) = best.expect("at least one epoch runs");
    Ok(TrainResult {
        model: FittedModel::Danncr(model),
        best_value,
        best_epoch,
        history,
        stats: trainer.stats,
        config: config.clone(),
    })
}
