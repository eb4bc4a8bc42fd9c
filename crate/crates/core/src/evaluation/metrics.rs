use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::model::CateModel;
use crate::nn::Standardizer;

fn check(tau_true: &[f64], tau_hat: &[f64]) -> Result<()> {
    if tau_true.len() != tau_hat.len() {
        return Err(Error::Dimension(format!(
            "{} true effects but {} estimates",
            tau_true.len(),
            tau_hat.len()
        )));
    }
    if tau_true.is_empty() {
        return Err(Error::Domain("no effects to compare".into()));
    }
    Ok(())
}

/// Mean squared error between true and estimated effects.
pub fn pehe(tau_true: &[f64], tau_hat: &[f64]) -> Result<f64> {
    check(tau_true, tau_hat)?;
    let sse: f64 = tau_true.iter().zip(tau_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sse / tau_true.len() as f64)
}

/// Absolute difference between the mean true and mean estimated effect.
pub fn ate_error(tau_true: &[f64], tau_hat: &[f64]) -> Result<f64> {
    check(tau_true, tau_hat)?;
    let n = tau_true.len() as f64;
    Ok((tau_true.iter().sum::<f64>() / n - tau_hat.iter().sum::<f64>() / n).abs())
}

/// Effects imputed from the nearest row of the opposite arm, by Euclidean
/// distance on covariates standardized over the given rows. Ties go to the
/// lowest row index. Each imputed effect is oriented as `ỹ₁ − ỹ₀`.
pub fn nn_imputed_effects(x: &Tensor, t: &[u8], y: &[f64]) -> Result<Vec<f64>> {
    if x.rows() != t.len() || t.len() != y.len() {
        return Err(Error::Dimension(format!(
            "misaligned rows: x {}, t {}, y {}",
            x.rows(),
            t.len(),
            y.len()
        )));
    }
    let arms: [Vec<usize>; 2] = [0u8, 1].map(|a| (0..t.len()).filter(|&i| t[i] == a).collect());
    if arms.iter().any(Vec::is_empty) {
        return Err(Error::Domain("nearest-neighbour imputation needs both treatment arms".into()));
    }
    let z = Standardizer::fit(x).transform(x)?;
    let dist = |i: usize, j: usize| -> f64 {
        z.row(i).iter().zip(z.row(j)).map(|(a, b)| (a - b) * (a - b)).sum()
    };
    Ok((0..t.len())
        .map(|i| {
            let other = &arms[1 - t[i] as usize];
            let mut best = other[0];
            let mut best_d = dist(i, best);
            for &j in &other[1..] {
                let d = dist(i, j);
                if d < best_d {
                    best = j;
                    best_d = d;
                }
            }
            if t[i] == 1 {
                y[i] - y[best]
            } else {
                y[best] - y[i]
            }
        })
        .collect())
}

/// PEHE against nearest-neighbour imputed effects.
pub fn nn_pehe_rows(x: &Tensor, t: &[u8], y: &[f64], tau_hat: &[f64]) -> Result<f64> {
    pehe(&nn_imputed_effects(x, t, y)?, tau_hat)
}

/// [`nn_pehe_rows`] over every row of `ds`.
pub fn nn_pehe(ds: &Dataset, tau_hat: &[f64]) -> Result<f64> {
    nn_pehe_rows(&ds.x, &ds.t, &ds.y, tau_hat)
}

/// NN-PEHE of `model` on the rows of `split`.
pub fn nn_pehe_split(model: &dyn CateModel, ds: &Dataset, split: Split) -> Result<f64> {
    let rows = ds.indices(split);
    let x = ds.x.select_rows(&rows);
    let t: Vec<u8> = rows.iter().map(|&i| ds.t[i]).collect();
    let y: Vec<f64> = rows.iter().map(|&i| ds.y[i]).collect();
    nn_pehe_rows(&x, &t, &y, &model.cate(&x)?)
}

/// Which rows a report covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sample {
    /// Training, validation and stripped rows.
    Within,
    /// Test rows.
    OutOfSample,
}

impl Sample {
    pub fn as_str(self) -> &'static str {
        match self {
            Sample::Within => "within",
            Sample::OutOfSample => "out-of-sample",
        }
    }

    pub fn rows(self, ds: &Dataset) -> Vec<usize> {
        match self {
            Sample::Within => ds.indices_any(&[Split::Train, Split::Validation, Split::Stripped]),
            Sample::OutOfSample => ds.indices(Split::Test),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub split: String,
    pub n: usize,
    pub seed: u64,
    pub fingerprint: String,
    pub sqrt_pehe: Option<f64>,
    pub ate_error: Option<f64>,
    pub factual_mse: Option<f64>,
    pub validation_criterion: Option<f64>,
    /// Why effect metrics are absent, when they are.
    pub reason: Option<String>,
    pub status: String,
}

/// Context recorded alongside the metrics.
#[derive(Debug, Clone, Default)]
pub struct ReportMeta {
    pub model: String,
    pub seed: u64,
    pub fingerprint: String,
    pub validation_criterion: Option<f64>,
}

/// Metrics of `model` on `rows` of `ds`, on the original outcome scale.
pub fn evaluate_rows(
    model: &dyn CateModel,
    ds: &Dataset,
    rows: &[usize],
    split: &str,
    meta: &ReportMeta,
) -> Result<MetricsReport> {
    let mut report = MetricsReport {
        model: meta.model.clone(),
        split: split.to_string(),
        n: rows.len(),
        seed: meta.seed,
        fingerprint: meta.fingerprint.clone(),
        sqrt_pehe: None,
        ate_error: None,
        factual_mse: None,
        validation_criterion: meta.validation_criterion,
        reason: None,
        status: "ok".into(),
    };
    if rows.is_empty() {
        report.reason = Some("no rows in this sample".into());
        return Ok(report);
    }
    let x = ds.x.select_rows(rows);
    let po = model.potential_outcomes(&x)?;
    let t: Vec<u8> = rows.iter().map(|&i| ds.t[i]).collect();
    let pred = po.factual(&t);
    let mse = rows.iter().zip(&pred).map(|(&i, p)| (ds.y[i] - p).powi(2)).sum::<f64>() / rows.len() as f64;
    report.factual_mse = Some(mse);
    match ds.true_cate() {
        Some(tau) => {
            let tau: Vec<f64> = rows.iter().map(|&i| tau[i]).collect();
            let tau_hat = po.cate();
            report.sqrt_pehe = Some(pehe(&tau, &tau_hat)?.sqrt());
            report.ate_error = Some(ate_error(&tau, &tau_hat)?);
        }
        None => report.reason = Some("dataset has no mu0/mu1 ground truth".into()),
    }
    let finite = [report.sqrt_pehe, report.ate_error, report.factual_mse]
        .iter()
        .flatten()
        .all(|v| v.is_finite());
    if !finite {
        report.status = "failed".into();
        report.reason = Some("non-finite metric".into());
    }
    Ok(report)
}

pub fn evaluate(model: &dyn CateModel, ds: &Dataset, sample: Sample, meta: &ReportMeta) -> Result<MetricsReport> {
    evaluate_rows(model, ds, &sample.rows(ds), sample.as_str(), meta)
}

/// Mean and standard error of the mean.
pub fn mean_sem(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
