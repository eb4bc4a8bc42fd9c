//! L1-penalized linear outcome models fitted by cyclic coordinate descent.
//!
//! The solver minimizes `½n⁻¹‖y − Zw − b‖² + α‖w‖₁` where `Z` holds the
//! covariates z-scored internally; the intercept is not penalized. Fitted
//! weights are mapped back to the original covariate scale.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::autodiff::Tensor;
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::model::{CateModel, PotentialOutcomes};
use crate::rng::{stream, Stream};

pub const MAX_SWEEPS: usize = 10_000;
pub const TOLERANCE: f64 = 1e-7;
pub const FOLDS: usize = 5;

/// `10^k` for `k = -3..=2`.
pub fn default_alpha_grid() -> Vec<f64> {
    (-3..=2).map(|k| 10f64.powi(k)).collect()
}

pub fn soft_threshold(v: f64, alpha: f64) -> f64 {
    if v > alpha {
        v - alpha
    } else if v < -alpha {
        v + alpha
    } else {
        0.0
    }
}

/// Intercept and weights on the original covariate scale.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub intercept: f64,
    pub weights: Vec<f64>,
}

impl LinearFit {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn predict(&self, x: &Tensor) -> Vec<f64> {
        (0..x.rows()).map(|i| self.predict_row(x.row(i))).collect()
    }
}

struct Standardized {
    /// Column-major z-scored covariates; constant columns are all zero.
    columns: Vec<Vec<f64>>,
    mean: Vec<f64>,
    std: Vec<f64>,
    y_mean: f64,
    y_centered: Vec<f64>,
}

fn standardize(x: &Tensor, y: &[f64]) -> Standardized {
    let n = x.rows() as f64;
    let mut columns = Vec::with_capacity(x.cols());
    let mut mean = Vec::with_capacity(x.cols());
    let mut std = Vec::with_capacity(x.cols());
    for j in 0..x.cols() {
        let col: Vec<f64> = (0..x.rows()).map(|i| x.get(i, j)).collect();
        let m = col.iter().sum::<f64>() / n;
        let s = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
        if s > 1e-12 {
            columns.push(col.iter().map(|v| (v - m) / s).collect());
        } else {
            columns.push(vec![0.0; x.rows()]);
        }
        mean.push(m);
        std.push(s);
    }
    let y_mean = y.iter().sum::<f64>() / n;
    Standardized {
        columns,
        mean,
        std,
        y_mean,
        y_centered: y.iter().map(|v| v - y_mean).collect(),
    }
}

/// Objective on the internal scale for weights `w` with residual `r`.
fn objective(r: &[f64], w: &[f64], alpha: f64) -> f64 {
    let n = r.len() as f64;
    0.5 * r.iter().map(|v| v * v).sum::<f64>() / n + alpha * w.iter().map(|v| v.abs()).sum::<f64>()
}

/// Coordinate descent on z-scored columns. Returns the weights and, when
/// `trace` is given, pushes the objective after every sweep.
fn descend(s: &Standardized, alpha: f64, mut trace: Option<&mut Vec<f64>>) -> Vec<f64> {
    let n = s.y_centered.len() as f64;
    let mut w = vec![0.0; s.columns.len()];
    let mut r = s.y_centered.clone();
    // Column norms are n for standardized columns and 0 for constant ones.
    let norms: Vec<f64> = s.columns.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>() / n).collect();
    for _ in 0..MAX_SWEEPS {
        let mut max_change: f64 = 0.0;
        for (j, col) in s.columns.iter().enumerate() {
            if norms[j] == 0.0 {
                continue;
            }
            let rho = col.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / n + w[j] * norms[j];
            let new = soft_threshold(rho, alpha) / norms[j];
            let delta = new - w[j];
            if delta != 0.0 {
                for (ri, ci) in r.iter_mut().zip(col) {
                    *ri -= delta * ci;
                }
                w[j] = new;
            }
            max_change = max_change.max(delta.abs());
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(objective(&r, &w, alpha));
        }
        if max_change < TOLERANCE {
            break;
        }
    }
    w
}

fn check(x: &Tensor, y: &[f64], alpha: f64) -> Result<()> {
    if x.rows() != y.len() {
        return Err(Error::Dimension(format!("{} rows but {} outcomes", x.rows(), y.len())));
    }
    if x.rows() < 2 {
        return Err(Error::Domain("lasso needs at least 2 rows".into()));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("alpha {alpha} must be finite and non-negative")));
    }
    Ok(())
}

fn unscale(s: &Standardized, w: &[f64]) -> LinearFit {
    let weights: Vec<f64> = w
        .iter()
        .zip(&s.std)
        .map(|(wj, sd)| if *sd > 1e-12 { wj / sd } else { 0.0 })
        .collect();
    let intercept = s.y_mean - weights.iter().zip(&s.mean).map(|(a, b)| a * b).sum::<f64>();
    LinearFit { intercept, weights }
}

pub fn lasso_fit(x: &Tensor, y: &[f64], alpha: f64) -> Result<LinearFit> {
    check(x, y, alpha)?;
    let s = standardize(x, y);
    Ok(unscale(&s, &descend(&s, alpha, None)))
}

/// As [`lasso_fit`], also returning the internal-scale objective after each
/// sweep.
pub fn lasso_fit_traced(x: &Tensor, y: &[f64], alpha: f64) -> Result<(LinearFit, Vec<f64>)> {
    check(x, y, alpha)?;
    let s = standardize(x, y);
    let mut trace = vec![objective(&s.y_centered, &vec![0.0; s.columns.len()], alpha)];
    let w = descend(&s, alpha, Some(&mut trace));
    Ok((unscale(&s, &w), trace))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LassoVariant {
    /// One model with the treatment indicator as an extra covariate.
    Single,
    /// An independent model per treatment.
    PerTreatment,
}

impl LassoVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            LassoVariant::Single => "s-lasso",
            LassoVariant::PerTreatment => "t-lasso",
        }
    }
}

impl fmt::Display for LassoVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LassoVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s-lasso" | "single" | "s" => Ok(LassoVariant::Single),
            "t-lasso" | "per_treatment" | "per-treatment" | "t" => Ok(LassoVariant::PerTreatment),
            other => Err(Error::Config(format!("unknown lasso variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoModel {
    pub variant: LassoVariant,
    pub alpha: f64,
    /// One fit over `[x, t]` for the single variant, else one per treatment.
    pub fits: Vec<LinearFit>,
}

impl LassoModel {
    pub fn fit(x: &Tensor, t: &[u8], y: &[f64], variant: LassoVariant, alpha: f64) -> Result<Self> {
        if t.len() != x.rows() {
            return Err(Error::Dimension(format!("{} rows but {} treatments", x.rows(), t.len())));
        }
        let fits = match variant {
            LassoVariant::Single => vec![lasso_fit(&with_treatment(x, t), y, alpha)?],
            LassoVariant::PerTreatment => (0..2u8)
                .map(|arm| {
                    let rows: Vec<usize> = (0..t.len()).filter(|&i| t[i] == arm).collect();
                    let ys: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
                    lasso_fit(&x.select_rows(&rows), &ys, alpha)
                })
                .collect::<Result<_>>()?,
        };
        Ok(Self { variant, alpha, fits })
    }

    fn predict_arm(&self, x: &Tensor, arm: u8) -> Vec<f64> {
        match self.variant {
            LassoVariant::Single => self.fits[0].predict(&with_treatment(x, &vec![arm; x.rows()])),
            LassoVariant::PerTreatment => self.fits[arm as usize].predict(x),
        }
    }
}

/// Append the treatment indicator as the last column.
fn with_treatment(x: &Tensor, t: &[u8]) -> Tensor {
    let d = x.cols();
    let mut data = Vec::with_capacity(x.rows() * (d + 1));
    for i in 0..x.rows() {
        data.extend_from_slice(x.row(i));
        data.push(f64::from(t[i]));
    }
    Tensor::new(x.rows(), d + 1, data).expect("shape is consistent")
}

impl CateModel for LassoModel {
    fn input_dim(&self) -> usize {
        match self.variant {
            LassoVariant::Single => self.fits[0].weights.len() - 1,
            LassoVariant::PerTreatment => self.fits[0].weights.len(),
        }
    }

    fn potential_outcomes(&self, x: &Tensor) -> Result<PotentialOutcomes> {
        if x.cols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "{} covariate columns, model expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        Ok(PotentialOutcomes {
            y0: self.predict_arm(x, 0),
            y1: self.predict_arm(x, 1),
        })
    }
}

/// Per-row effect estimate.
pub fn lasso_cate(model: &LassoModel, x: &Tensor) -> Result<Vec<f64>> {
    model.cate(x)
}

/// Assign rows to folds, dealing each treatment arm out separately so every
/// fold holds both arms whenever each arm has at least `folds` rows.
pub fn stratified_folds(t: &[u8], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = stream(seed, Stream::Folds);
    let mut fold = vec![0; t.len()];
    let mut next = 0;
    for arm in 0..2u8 {
        let mut rows: Vec<usize> = (0..t.len()).filter(|&i| t[i] == arm).collect();
        rows.shuffle(&mut rng);
        for i in rows {
            fold[i] = next % folds;
            next += 1;
        }
    }
    fold
}

/// Cross-validated factual MSE of each grid value.
pub fn lasso_cv_scores(
    x: &Tensor,
    t: &[u8],
    y: &[f64],
    variant: LassoVariant,
    grid: &[f64],
    seed: u64,
) -> Result<Vec<f64>> {
    let fold = stratified_folds(t, FOLDS, seed);
    let mut scores = vec![0.0; grid.len()];
    for k in 0..FOLDS {
        let train: Vec<usize> = (0..t.len()).filter(|&i| fold[i] != k).collect();
        let held: Vec<usize> = (0..t.len()).filter(|&i| fold[i] == k).collect();
        if held.is_empty() {
            continue;
        }
        let pick = |rows: &[usize]| {
            (
                x.select_rows(rows),
                rows.iter().map(|&i| t[i]).collect::<Vec<_>>(),
                rows.iter().map(|&i| y[i]).collect::<Vec<_>>(),
            )
        };
        let (xa, ta, ya) = pick(&train);
        let (xb, tb, yb) = pick(&held);
        for (g, &alpha) in grid.iter().enumerate() {
            let m = LassoModel::fit(&xa, &ta, &ya, variant, alpha)?;
            let pred = m.potential_outcomes(&xb)?.factual(&tb);
            let sse: f64 = pred.iter().zip(&yb).map(|(p, v)| (p - v) * (p - v)).sum();
            scores[g] += sse / t.len() as f64;
        }
    }
    Ok(scores)
}

/// The grid value with the lowest cross-validated factual MSE over the
/// training and validation rows. Ties go to the stronger penalty.
pub fn lasso_select_alpha(ds: &Dataset, variant: LassoVariant, grid: &[f64], seed: u64) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::Config("alpha grid is empty".into()));
    }
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    let rows = fitting_rows(ds);
    let t: Vec<u8> = rows.iter().map(|&i| ds.t[i]).collect();
    let counts = ds.arm_counts(&rows);
    if variant == LassoVariant::PerTreatment && counts.iter().any(|&c| c < FOLDS + 1) {
        return Err(Error::Dataset(format!(
            "cross-validation needs more than {FOLDS} rows per treatment, has {counts:?}"
        )));
    }
    let y: Vec<f64> = rows.iter().map(|&i| ds.y[i]).collect();
    let scores = lasso_cv_scores(&ds.x.select_rows(&rows), &t, &y, variant, grid, seed)?;
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[a].total_cmp(&grid[b]));
    let mut best = order[0];
    for &g in &order[1..] {
        if scores[g] <= scores[best] {
            best = g;
        }
    }
    Ok(grid[best])
}

/// Select α by cross-validation and refit on all training and validation rows.
pub fn fit_lasso(ds: &Dataset, variant: LassoVariant, grid: &[f64], seed: u64) -> Result<LassoModel> {
    let alpha = lasso_select_alpha(ds, variant, grid, seed)?;
    let rows = fitting_rows(ds);
    LassoModel::fit(
        &ds.x.select_rows(&rows),
        &rows.iter().map(|&i| ds.t[i]).collect::<Vec<_>>(),
        &rows.iter().map(|&i| ds.y[i]).collect::<Vec<_>>(),
        variant,
        alpha,
    )
}

fn fitting_rows(ds: &Dataset) -> Vec<usize> {
    ds.indices_any(&[Split::Train, Split::Validation])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use rand::Rng as _;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_matrix(n: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = stream(seed, Stream::Custom(1));
        let data = (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect();
        Tensor::new(n, d, data).unwrap()
    }

    /// Least squares with intercept via the normal equations and Gaussian
    /// elimination with partial pivoting.
    fn least_squares(x: &Tensor, y: &[f64]) -> Vec<f64> {
        let p = x.cols() + 1;
        let row = |i: usize| -> Vec<f64> {
            let mut r = vec![1.0];
            r.extend_from_slice(x.row(i));
            r
        };
        let mut a = vec![vec![0.0; p + 1]; p];
        for i in 0..x.rows() {
            let r = row(i);
            for j in 0..p {
                for k in 0..p {
                    a[j][k] += r[j] * r[k];
                }
                a[j][p] += r[j] * y[i];
            }
        }
        for c in 0..p {
            let piv = (c..p).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, piv);
            for r in 0..p {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    for k in c..=p {
                        a[r][k] -= f * a[c][k];
                    }
                }
            }
        }
        (0..p).map(|i| a[i][p] / a[i][i]).collect()
    }

    #[test]
    fn unpenalized_fit_matches_normal_equations() {
        for seed in 0..20 {
            let x = normal_matrix(10, 3, seed);
            let mut rng = stream(seed, Stream::Custom(2));
            let y: Vec<f64> = (0..10).map(|_| rng.random_range(-2.0..2.0)).collect();
            let fit = lasso_fit(&x, &y, 0.0).unwrap();
            let ls = least_squares(&x, &y);
            assert!((fit.intercept - ls[0]).abs() < 1e-6);
            for j in 0..3 {
                assert!((fit.weights[j] - ls[j + 1]).abs() < 1e-6, "seed {seed}");
            }
        }
    }

    #[test]
    fn heavy_penalty_keeps_only_the_mean() {
        let x = normal_matrix(30, 4, 3);
        let y: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let fit = lasso_fit(&x, &y, 1e6).unwrap();
        assert!(fit.weights.iter().all(|&w| w == 0.0));
        assert!((fit.intercept - 14.5).abs() < 1e-12);
    }

    /// Covariate with mean 0 and unit population variance.
    fn unit_column(n: usize, seed: u64) -> Vec<f64> {
        let raw: Vec<f64> = normal_matrix(n, 1, seed).into_data();
        let m = raw.iter().sum::<f64>() / n as f64;
        let s = (raw.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64).sqrt();
        raw.iter().map(|v| (v - m) / s).collect()
    }

    #[test]
    fn scalar_problem_is_soft_thresholding() {
        let n = 40;
        let x = unit_column(n, 4);
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| 0.7 * v + (i % 5) as f64 * 0.1).collect();
        for alpha in [0.0, 0.1, 0.5, 2.0] {
            let fit = lasso_fit(&Tensor::column(&x), &y, alpha).unwrap();
            let xy = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / n as f64;
            let xx = x.iter().map(|a| a * a).sum::<f64>() / n as f64;
            let expect = soft_threshold(xy, alpha) / xx;
            assert!((fit.weights[0] - expect).abs() < 1e-9, "alpha {alpha}");
        }
    }

    #[test]
    fn matches_exhaustive_search_in_one_dimension() {
        let n = 50;
        let x = unit_column(n, 5);
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| -1.3 * v + ((i * 7) % 11) as f64 * 0.05).collect();
        let ybar = y.iter().sum::<f64>() / n as f64;
        let alpha = 0.3;
        let obj = |w: f64| {
            0.5 * x.iter().zip(&y).map(|(a, b)| (b - ybar - w * a).powi(2)).sum::<f64>() / n as f64
                + alpha * w.abs()
        };
        let mut best = 0.0;
        let mut w = -3.0;
        while w <= 3.0 {
            if obj(w) < obj(best) {
                best = w;
            }
            w += 1e-5;
        }
        let fit = lasso_fit(&Tensor::column(&x), &y, alpha).unwrap();
        assert!((fit.weights[0] - best).abs() < 1e-4);
    }

    #[test]
    fn constant_column_gets_zero_weight() {
        let mut x = normal_matrix(20, 2, 6);
        for i in 0..20 {
            x.set(i, 1, 3.0);
        }
        let y: Vec<f64> = (0..20).map(|i| x.get(i, 0) * 2.0 + 1.0).collect();
        let fit = lasso_fit(&x, &y, 0.0).unwrap();
        assert_eq!(fit.weights[1], 0.0);
        assert!((fit.weights[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = normal_matrix(1, 2, 0);
        assert!(lasso_fit(&x, &[1.0], 0.1).is_err());
        let x = normal_matrix(5, 2, 0);
        assert!(lasso_fit(&x, &[1.0; 5], -1.0).is_err());
        assert!(lasso_fit(&x, &[1.0; 4], 0.1).is_err());
    }

    #[test]
    fn single_variant_effect_is_constant() {
        let x = normal_matrix(60, 3, 7);
        let t: Vec<u8> = (0..60).map(|i| (i % 2) as u8).collect();
        let y: Vec<f64> = (0..60).map(|i| x.get(i, 0) + 2.0 * f64::from(t[i]) + x.get(i, 1) * f64::from(t[i])).collect();
        let m = LassoModel::fit(&x, &t, &y, LassoVariant::Single, 0.01).unwrap();
        let tau = lasso_cate(&m, &x).unwrap();
        assert!(tau.iter().all(|&v| (v - tau[0]).abs() < 1e-12));
        assert_eq!(tau[0], m.fits[0].weights[3]);
    }

    #[test]
    fn identical_arm_models_give_zero_effect() {
        let fit = LinearFit {
            intercept: 0.5,
            weights: vec![1.0, -2.0],
        };
        let m = LassoModel {
            variant: LassoVariant::PerTreatment,
            alpha: 0.1,
            fits: vec![fit.clone(), fit],
        };
        let tau = lasso_cate(&m, &normal_matrix(7, 2, 8)).unwrap();
        assert!(tau.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn folds_are_stratified() {
        let t: Vec<u8> = (0..53).map(|i| u8::from(i % 7 == 0)).collect();
        let f = stratified_folds(&t, 5, 1);
        for k in 0..5 {
            let arms: Vec<u8> = (0..53).filter(|&i| f[i] == k).map(|i| t[i]).collect();
            assert!(arms.contains(&0) && arms.contains(&1));
        }
        assert_eq!(f, stratified_folds(&t, 5, 1));
    }

    proptest::proptest! {
        #[test]
        fn objective_never_increases(seed in 0u64..500, alpha in 0.0f64..1.0) {
            let x = normal_matrix(25, 4, seed);
            let y: Vec<f64> = (0..25).map(|i| x.get(i, 0) - 0.5 * x.get(i, 2) + (i % 3) as f64).collect();
            let (_, trace) = lasso_fit_traced(&x, &y, alpha).unwrap();
            for w in trace.windows(2) {
                proptest::prop_assert!(w[1] <= w[0] + 1e-12);
            }
        }
    }
}
