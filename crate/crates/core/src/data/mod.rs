//! Observational datasets: covariates, a binary treatment, factual outcomes
//! and, when known, the noiseless potential outcomes.

mod csv_io;
mod synth;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

pub use csv_io::{load_csv, save_csv, CsvSchema};
pub use synth::{generate, DgpConfig, DgpTruth, Nonlinearity, PROPENSITY_CLIP};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.63, 0.27, 0.10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
    /// A training row whose outcome was removed; its covariates live in the
    /// unlabeled pool and its ground truth is kept for evaluation only.
    Stripped,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "val",
            Split::Test => "test",
            Split::Stripped => "stripped",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            "stripped" => Ok(Split::Stripped),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub covariate_names: Vec<String>,
    pub x: Tensor,
    pub t: Vec<u8>,
    pub y: Vec<f64>,
    pub y_cf: Option<Vec<f64>>,
    pub mu0: Option<Vec<f64>>,
    pub mu1: Option<Vec<f64>>,
    /// Covariate rows without treatment or outcome.
    pub unlabeled_x: Tensor,
    /// Per-row assignment; `None` until [`Dataset::split`] runs or the file
    /// carried one.
    pub splits: Option<Vec<Split>>,
}

impl Dataset {
    pub fn new(x: Tensor, t: Vec<u8>, y: Vec<f64>) -> Result<Self> {
        let d = x.cols();
        let ds = Self {
            covariate_names: (0..d).map(|j| format!("x{j}")).collect(),
            unlabeled_x: Tensor::zeros(0, d),
            x,
            t,
            y,
            y_cf: None,
            mu0: None,
            mu1: None,
            splits: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.t.len()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.t.len();
        if self.x.rows() != n || self.y.len() != n {
            return Err(Error::Dataset(format!(
                "misaligned lengths: x {}, t {n}, y {}",
                self.x.rows(),
                self.y.len()
            )));
        }
        if let Some(i) = self.t.iter().position(|&t| t > 1) {
            return Err(Error::Dataset(format!("row {i}: treatment must be 0 or 1")));
        }
        for (name, col) in [("y_cf", &self.y_cf), ("mu0", &self.mu0), ("mu1", &self.mu1)] {
            if col.as_ref().is_some_and(|c| c.len() != n) {
                return Err(Error::Dataset(format!("{name} length differs from n = {n}")));
            }
        }
        if self.mu0.is_some() != self.mu1.is_some() {
            return Err(Error::Dataset("mu0 and mu1 must be given together".into()));
        }
        if self.unlabeled_x.rows() > 0 && self.unlabeled_x.cols() != self.dim() {
            return Err(Error::Dataset("unlabeled rows have the wrong width".into()));
        }
        if let Some(s) = &self.splits {
            if s.len() != n {
                return Err(Error::Dataset("split assignment length differs from n".into()));
            }
        }
        if self.covariate_names.len() != self.dim() {
            return Err(Error::Dataset("covariate name count differs from width".into()));
        }
        Ok(())
    }

    /// True effect τ(x) = mu1 − mu0, when the potential outcomes are known.
    pub fn true_cate(&self) -> Option<Vec<f64>> {
        let (m0, m1) = (self.mu0.as_ref()?, self.mu1.as_ref()?);
        Some(m1.iter().zip(m0).map(|(a, b)| a - b).collect())
    }

    pub fn true_ate(&self) -> Option<f64> {
        let tau = self.true_cate()?;
        Some(tau.iter().sum::<f64>() / tau.len() as f64)
    }

    pub fn has_ground_truth(&self) -> bool {
        self.mu0.is_some() && self.mu1.is_some()
    }

    /// Row indices assigned to `split`. Without an assignment every row is
    /// treated as training data.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        match &self.splits {
            Some(s) => (0..self.n()).filter(|&i| s[i] == split).collect(),
            None if split == Split::Train => (0..self.n()).collect(),
            None => Vec::new(),
        }
    }

    /// Rows of either of the listed splits, in index order.
    pub fn indices_any(&self, splits: &[Split]) -> Vec<usize> {
        let mut idx: Vec<usize> = splits.iter().flat_map(|&s| self.indices(s)).collect();
        idx.sort_unstable();
        idx
    }

    pub fn arm_counts(&self, rows: &[usize]) -> [usize; 2] {
        let mut c = [0, 0];
        for &i in rows {
            c[self.t[i] as usize] += 1;
        }
        c
    }

    /// Assign rows to train/validation/test, stratified by treatment so each
    /// nonempty split contains both arms.
    pub fn split(&mut self, fractions: [f64; 3], seed: u64) -> Result<()> {
        if fractions.iter().any(|f| !(0.0..=1.0).contains(f))
            || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(format!(
                "split fractions {fractions:?} must be in [0, 1] and sum to 1"
            )));
        }
        let n = self.n();
        let totals = largest_remainder(n, &fractions);
        let mut rng = stream(seed, Stream::Split);
        let mut arms: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
        for i in 0..n {
            arms[self.t[i] as usize].push(i);
        }
        for arm in &mut arms {
            arm.shuffle(&mut rng);
        }

        // Control-arm share of each split, by largest remainder; the treated
        // arm takes the rest.
        let n0 = arms[0].len();
        let weights: Vec<f64> = totals.iter().map(|&c| c as f64 / n.max(1) as f64).collect();
        let mut per_arm = [largest_remainder(n0, &weights), [0; 3]];
        for s in 0..3 {
            per_arm[1][s] = totals[s] - per_arm[0][s].min(totals[s]);
            per_arm[0][s] = totals[s] - per_arm[1][s];
        }
        // Every nonempty split needs a row from each arm.
        for s in 0..3 {
            if totals[s] == 0 {
                continue;
            }
            for a in 0..2 {
                if per_arm[a][s] > 0 {
                    continue;
                }
                let other = 1 - a;
                let donor = (0..3)
                    .filter(|&u| u != s && per_arm[a][u] > 1)
                    .max_by_key(|&u| per_arm[a][u]);
                match donor {
                    Some(u) if per_arm[other][s] > 0 => {
                        per_arm[a][u] -= 1;
                        per_arm[a][s] += 1;
                        per_arm[other][s] -= 1;
                        per_arm[other][u] += 1;
                    }
                    _ => {
                        return Err(Error::Dataset(format!(
                            "cannot give split {s} a row of treatment {a}"
                        )))
                    }
                }
            }
        }

        let labels = [Split::Train, Split::Validation, Split::Test];
        let mut assignment = vec![Split::Train; n];
        for (a, rows) in arms.iter().enumerate() {
            let mut it = rows.iter();
            for s in 0..3 {
                for &i in it.by_ref().take(per_arm[a][s]) {
                    assignment[i] = labels[s];
                }
            }
        }
        self.splits = Some(assignment);
        Ok(())
    }

    /// Move the covariates of `rows` into the unlabeled pool. Training rows
    /// among them leave the training view; test rows keep their assignment.
    pub fn strip_outcomes(&mut self, rows: &[usize]) -> Result<()> {
        if let Some(&bad) = rows.iter().find(|&&i| i >= self.n()) {
            return Err(Error::Config(format!("row {bad} out of range")));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(&dup) = rows.iter().find(|&&i| !seen.insert(i)) {
            return Err(Error::Config(format!("row {dup} listed twice")));
        }
        let mut splits = self.splits.clone().unwrap_or_else(|| vec![Split::Train; self.n()]);
        for &i in rows {
            match splits[i] {
                Split::Validation => {
                    return Err(Error::Config(format!(
                        "row {i} belongs to the validation split used for model selection"
                    )))
                }
                Split::Stripped => {
                    return Err(Error::Config(format!("row {i} is already stripped")))
                }
                Split::Train => splits[i] = Split::Stripped,
                Split::Test => {}
            }
        }
        let pooled = self.x.select_rows(rows);
        self.unlabeled_x = self.unlabeled_x.vstack(&pooled)?;
        self.splits = Some(splits);
        Ok(())
    }

    /// Rows that contribute to the factual objective during training.
    pub fn training_rows(&self) -> Vec<usize> {
        self.indices(Split::Train)
    }
}

/// Integer counts proportional to `weights` summing to `n`.
fn largest_remainder(n: usize, weights: &[f64]) -> [usize; 3] {
    let total: f64 = weights.iter().sum();
    let mut counts = [0usize; 3];
    if total <= 0.0 {
        return counts;
    }
    let raw: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    for (c, r) in counts.iter_mut().zip(&raw) {
        *c = (r + 1e-9).floor() as usize;
    }
    let mut left = n - counts.iter().sum::<usize>().min(n);
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - counts[a] as f64;
        let fb = raw[b] - counts[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &s in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if weights[s] > 0.0 {
            counts[s] += 1;
            left -= 1;
        }
    }
    counts
}
