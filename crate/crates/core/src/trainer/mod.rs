//! The adversarial training loop.
//!
//! Each training batch runs
//!
//! 1. **A**: one Adam step on the factual loss w.r.t. Φ and all heads;
//! 2. **B**: one Adam step on `factual − w·distance` w.r.t. the heads only;
//! 3. **C**: `k` Adam steps on the distance w.r.t. Φ only;
//! 4. **A** again (unless `trailing_step_a` is off).
//!
//! A-TARNet mode runs only the first A. Each phase keeps its own Adam state.
//! After every epoch the selection criterion is evaluated on the whole
//! validation split with dropout off; training stops after `patience` epochs
//! without improvement (a decrease of more than 1e-12) or at `max_epochs`, and
//! the model from the best epoch is returned.

mod batches;
mod config;

use std::io::Write;

pub use batches::{make_batches, BatchPlan};
pub use config::{parse_layers, Mode, TrainConfig, CONFIG_KEYS};

use crate::autodiff::{Adam, Tensor};
use crate::baselines::danncr;
use crate::checkpoint::FittedModel;
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::model::{AdbcrModel, ParamGroup};
use crate::nn::{OutcomeScaler, Standardizer};
use crate::objectives::{validation_criterion, BatchView, Forward};
use crate::rng::{stream, Rng, Stream};

/// An epoch counts as improving only if the criterion drops by more than this.
pub const IMPROVEMENT_TOL: f64 = 1e-12;

/// Standardized training and validation views of a dataset.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub x_scaler: Standardizer,
    pub y_scaler: OutcomeScaler,
    pub train: BatchView,
    pub val: BatchView,
    /// Standardized unlabeled pool (empty unless requested).
    pub unlabeled: Tensor,
}

impl Prepared {
    /// Fit scalers on the training rows and standardize both splits. The
    /// unlabeled pool is included only when `with_unlabeled` is set.
    pub fn new(ds: &Dataset, with_unlabeled: bool) -> Result<Self> {
        let train_rows = ds.indices(Split::Train);
        let val_rows = ds.indices(Split::Validation);
        for (name, rows) in [("training", &train_rows), ("validation", &val_rows)] {
            let c = ds.arm_counts(rows);
            if c[0] == 0 || c[1] == 0 {
                return Err(Error::Dataset(format!(
                    "{name} split must contain both treatments, has {} control and {} treated",
                    c[0], c[1]
                )));
            }
        }
        let x_train = ds.x.select_rows(&train_rows);
        let x_scaler = Standardizer::fit(&x_train);
        let y_train: Vec<f64> = train_rows.iter().map(|&i| ds.y[i]).collect();
        let y_scaler = OutcomeScaler::fit(&y_train);
        let view = |rows: &[usize]| -> Result<BatchView> {
            BatchView::new(
                x_scaler.transform(&ds.x.select_rows(rows))?,
                rows.iter().map(|&i| ds.t[i]).collect(),
                rows.iter().map(|&i| y_scaler.standardize(ds.y[i])).collect(),
            )
        };
        let unlabeled = if with_unlabeled && ds.unlabeled_x.rows() > 0 {
            x_scaler.transform(&ds.unlabeled_x)?
        } else {
            Tensor::zeros(0, ds.dim())
        };
        Ok(Self {
            train: view(&train_rows)?,
            val: view(&val_rows)?,
            x_scaler,
            y_scaler,
            unlabeled,
        })
    }

    pub fn batch(&self, plan: &BatchPlan) -> Result<BatchView> {
        BatchView::new(
            self.train.x.select_rows(&plan.rows),
            plan.rows.iter().map(|&i| self.train.t[i]).collect(),
            plan.rows.iter().map(|&i| self.train.y[i]).collect(),
        )?
        .with_unlabeled(self.unlabeled.select_rows(&plan.unlabeled))
    }
}

/// Counts of executed updates, and of distance graphs that fed a gradient.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    pub step_a: usize,
    pub step_b: usize,
    pub step_c: usize,
    pub distance_gradients: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean factual loss over the epoch's first-A steps (training mode).
    pub train_factual: f64,
    /// Validation factual loss.
    pub factual: f64,
    /// Validation distance; absent when the mode never balances.
    pub distance: Option<f64>,
    /// Selection value for this epoch.
    pub criterion: f64,
}

impl EpochRecord {
    /// Line-delimited history record.
    pub fn log_line(&self) -> String {
        match self.distance {
            Some(d) => format!(
                "epoch={} L_fact={:.17e} D={:.17e} L_val={:.17e}",
                self.epoch, self.factual, d, self.criterion
            ),
            None => format!(
                "epoch={} L_fact={:.17e} L_val={:.17e}",
                self.epoch, self.factual, self.criterion
            ),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub model: FittedModel,
    pub best_value: f64,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub stats: StepStats,
    pub config: TrainConfig,
}

impl TrainResult {
    pub fn epochs_run(&self) -> usize {
        self.history.len()
    }
}

/// Owns a model being trained together with the per-phase optimizer state
/// and the dropout stream.
pub struct Trainer {
    pub model: AdbcrModel,
    pub config: TrainConfig,
    opt_all: Adam,
    opt_heads: Adam,
    opt_shared: Adam,
    dropout_rng: Rng,
    pub stats: StepStats,
}

impl Trainer {
    pub fn new(model: AdbcrModel, config: TrainConfig) -> Self {
        let (lr, wd) = (config.learning_rate, config.weight_decay);
        Self {
            dropout_rng: stream(config.seed, Stream::Dropout),
            opt_all: Adam::new(lr, wd),
            opt_heads: Adam::new(lr, wd),
            opt_shared: Adam::new(lr, wd),
            model,
            config,
            stats: StepStats::default(),
        }
    }

    /// Factual fit on all parameters. Returns the loss before the update.
    pub fn step_a(&mut self, batch: &BatchView) -> Result<f64> {
        let (loss, grads) = {
            let mut f = Forward::new(
                &self.model,
                batch,
                ParamGroup::All,
                false,
                Some(&mut self.dropout_rng),
            )?;
            let root = f.factual_loss(batch, Some(&mut self.dropout_rng))?;
            let loss = finite(f.value(root), "factual loss")?;
            (loss, collect_grads(&f, root, &self.model, ParamGroup::All)?)
        };
        self.opt_all
            .step(&mut self.model.group_mut(ParamGroup::All), &grads)?;
        self.stats.step_a += 1;
        Ok(loss)
    }

    /// Adversarial head update: descend `factual − w·distance` w.r.t. the
    /// heads while Φ stays fixed. Returns the objective before the update.
    pub fn step_b(&mut self, batch: &BatchView) -> Result<f64> {
        let w = self.config.adversary_weight;
        let metric = self.config.metric;
        let (loss, grads) = {
            let mut f = Forward::new(
                &self.model,
                batch,
                ParamGroup::Heads,
                true,
                Some(&mut self.dropout_rng),
            )?;
            let fact = f.factual_loss(batch, Some(&mut self.dropout_rng))?;
            let root = if w == 0.0 {
                fact
            } else {
                let d = f.distance(batch, metric, Some(&mut self.dropout_rng))?;
                self.stats.distance_gradients += 1;
                let scaled = f.tape.scale(d, w);
                f.tape.sub(fact, scaled)?
            };
            let loss = finite(f.value(root), "adversarial objective")?;
            (loss, collect_grads(&f, root, &self.model, ParamGroup::Heads)?)
        };
        self.opt_heads
            .step(&mut self.model.group_mut(ParamGroup::Heads), &grads)?;
        self.stats.step_b += 1;
        Ok(loss)
    }

    /// `k` balancing updates of Φ on the distance. Returns the distance
    /// before each update.
    pub fn step_c(&mut self, batch: &BatchView) -> Result<Vec<f64>> {
        let metric = self.config.metric;
        let mut trace = Vec::with_capacity(self.config.k);
        for _ in 0..self.config.k {
            let (d, grads) = {
                let mut f = Forward::new(
                    &self.model,
                    batch,
                    ParamGroup::Shared,
                    true,
                    Some(&mut self.dropout_rng),
                )?;
                let root = f.distance(batch, metric, Some(&mut self.dropout_rng))?;
                self.stats.distance_gradients += 1;
                let d = finite(f.value(root), "discriminative distance")?;
                (d, collect_grads(&f, root, &self.model, ParamGroup::Shared)?)
            };
            self.opt_shared
                .step(&mut self.model.group_mut(ParamGroup::Shared), &grads)?;
            self.stats.step_c += 1;
            trace.push(d);
        }
        Ok(trace)
    }

    /// One pass of the per-batch schedule. Returns the first factual loss.
    pub fn train_batch(&mut self, batch: &BatchView) -> Result<f64> {
        let loss = self.step_a(batch)?;
        if self.config.mode != Mode::ATarnet {
            self.step_b(batch)?;
            self.step_c(batch)?;
            if self.config.trailing_step_a {
                self.step_a(batch)?;
            }
        }
        Ok(loss)
    }
}

fn collect_grads(
    f: &Forward<'_>,
    root: crate::autodiff::Var,
    model: &AdbcrModel,
    group: ParamGroup,
) -> Result<Vec<Tensor>> {
    let g = f.tape.backward(root)?;
    let vars = f.bound().vars();
    Ok(model
        .group_range(group)
        .map(|i| g.wrt(vars[i], model.params().get(i).shape()))
        .collect())
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Training(format!("{what} is not finite")))
    }
}

/// Selection value of `model` on the validation view under `config`.
pub fn selection_value(model: &AdbcrModel, val: &BatchView, config: &TrainConfig) -> Result<EpochRecord> {
    let c = validation_criterion(model, val, config.criterion_weight)?;
    let (distance, criterion) = if config.mode.selects_on_factual() {
        (None, c.factual)
    } else {
        (Some(c.distance), c.value)
    };
    Ok(EpochRecord {
        epoch: 0,
        train_factual: f64::NAN,
        factual: c.factual,
        distance,
        criterion,
    })
}

/// Train one configuration end to end.
pub fn train(ds: &Dataset, config: &TrainConfig) -> Result<TrainResult> {
    train_logged(ds, config, None)
}

/// As [`train`], also writing one history line per epoch to `log`.
pub fn train_logged(
    ds: &Dataset,
    config: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainResult> {
    config.validate()?;
    if config.mode == Mode::Danncr {
        return danncr::train_logged(ds, config, log);
    }
    let data = Prepared::new(ds, config.mode == Mode::Uadbcr)?;
    let mut model = AdbcrModel::init(
        ds.dim(),
        &config.shared_layers,
        &config.head_layers,
        config.dropout_p,
        config.seed,
    )?;
    model.x_scaler = data.x_scaler.clone();
    model.y_scaler = data.y_scaler;

    let mut trainer = Trainer::new(model, config.clone());
    let mut batch_rng = stream(config.seed, Stream::Batching);
    let mut unlabeled_rng = stream(config.seed, Stream::Unlabeled);
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, AdbcrModel)> = None;
    let mut stale = 0;

    for epoch in 1..=config.max_epochs {
        let plans = make_batches(
            &data.train.t,
            config.batch_size,
            data.unlabeled.rows(),
            &mut batch_rng,
            &mut unlabeled_rng,
        )?;
        let mut fact_sum = 0.0;
        for plan in &plans {
            let batch = data.batch(plan)?;
            fact_sum += trainer.train_batch(&batch)?;
        }
        let mut record = selection_value(&trainer.model, &data.val, config)?;
        record.epoch = epoch;
        record.train_factual = fact_sum / plans.len() as f64;
        if !record.criterion.is_finite() {
            return Err(Error::Training(format!(
                "validation criterion is not finite at epoch {epoch}"
            )));
        }
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", record.log_line())
                .map_err(|e| Error::Training(format!("cannot write history: {e}")))?;
        }
        let improved = best
            .as_ref()
            .is_none_or(|(v, _, _)| record.criterion < v - IMPROVEMENT_TOL);
        if improved {
            best = Some((record.criterion, epoch, trainer.model.clone()));
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
        model: FittedModel::Adbcr(model),
        best_value,
        best_epoch,
        history,
        stats: trainer.stats,
        config: config.clone(),
    })
}
