//! Synthetic observational data with biased treatment assignment and known
//! potential outcomes.
//!
//! Covariates are standard normal. Treatment follows a logistic propensity in
//! a random unit direction, clipped to [0.05, 0.95] so both treatments stay
//! possible everywhere. The control response is linear plus an optional
//! nonlinear term; the treated response adds a base effect and a
//! heterogeneous component of the same family.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::csv_io::fmt_f64;
use super::Dataset;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{stream, Rng, Stream};

pub const PROPENSITY_CLIP: (f64, f64) = (0.05, 0.95);

/// Weight of the nonlinear term relative to the linear one.
pub const NONLINEAR_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nonlinearity {
    Linear,
    Quadratic,
    Exp,
}

impl Nonlinearity {
    pub fn as_str(self) -> &'static str {
        match self {
            Nonlinearity::Linear => "linear",
            Nonlinearity::Quadratic => "quadratic",
            Nonlinearity::Exp => "exp",
        }
    }

    /// Mean-zero (under a standard normal index of variance `s2`) nonlinear
    /// term of the response surface.
    fn apply(self, index: f64, s2: f64) -> f64 {
        match self {
            Nonlinearity::Linear => 0.0,
            Nonlinearity::Quadratic => index * index - s2,
            Nonlinearity::Exp => (0.5 * index).exp() - (s2 / 8.0).exp(),
        }
    }
}

impl FromStr for Nonlinearity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Nonlinearity::Linear),
            "quadratic" => Ok(Nonlinearity::Quadratic),
            "exp" => Ok(Nonlinearity::Exp),
            other => Err(Error::Config(format!("unknown nonlinearity `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DgpConfig {
    pub n: usize,
    pub d: usize,
    /// Logit scale of the treatment assignment.
    pub bias_strength: f64,
    pub effect_heterogeneity: f64,
    pub base_effect: f64,
    pub noise_sd: f64,
    pub nonlinearity: Nonlinearity,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            d: 10,
            bias_strength: 2.0,
            effect_heterogeneity: 1.0,
            base_effect: 4.0,
            noise_sd: 1.0,
            nonlinearity: Nonlinearity::Quadratic,
            seed: 0,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 50 {
            return Err(Error::Config(format!("n = {} is below the minimum of 50", self.n)));
        }
        if self.d < 2 {
            return Err(Error::Config(format!("d = {} is below the minimum of 2", self.d)));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config(format!("noise_sd = {} must be >= 0", self.noise_sd)));
        }
        for (name, v) in [
            ("bias_strength", self.bias_strength),
            ("effect_heterogeneity", self.effect_heterogeneity),
            ("base_effect", self.base_effect),
        ] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        Ok(())
    }
}

/// Coefficients drawn for one generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DgpTruth {
    pub config: DgpConfig,
    /// Unit-norm propensity direction.
    pub w_propensity: Vec<f64>,
    /// Linear control response.
    pub beta: Vec<f64>,
    /// Direction of the nonlinear control term.
    pub gamma: Vec<f64>,
    /// Linear part of the effect.
    pub w_effect: Vec<f64>,
    /// Direction of the nonlinear effect term.
    pub v_effect: Vec<f64>,
}

impl DgpTruth {
    fn draw(config: &DgpConfig, rng: &mut Rng) -> Self {
        let d = config.d;
        let scale = 1.0 / (d as f64).sqrt();
        let mut normal = |s: f64| -> Vec<f64> {
            (0..d)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut *rng);
                    s * z
                })
                .collect::<Vec<f64>>()
        };
        let mut w_propensity = normal(1.0);
        let norm = w_propensity.iter().map(|v| v * v).sum::<f64>().sqrt();
        w_propensity.iter_mut().for_each(|v| *v /= norm);
        Self {
            config: config.clone(),
            w_propensity,
            beta: normal(scale),
            gamma: normal(scale),
            w_effect: normal(scale),
            v_effect: normal(scale),
        }
    }

    pub fn propensity(&self, x: &[f64]) -> f64 {
        let logit = self.config.bias_strength * dot(&self.w_propensity, x);
        let p = 1.0 / (1.0 + (-logit).exp());
        p.clamp(PROPENSITY_CLIP.0, PROPENSITY_CLIP.1)
    }

    pub fn mu0(&self, x: &[f64]) -> f64 {
        let s2 = dot(&self.gamma, &self.gamma);
        dot(&self.beta, x) + NONLINEAR_WEIGHT * self.config.nonlinearity.apply(dot(&self.gamma, x), s2)
    }

    pub fn effect(&self, x: &[f64]) -> f64 {
        let c = &self.config;
        if c.effect_heterogeneity == 0.0 {
            return c.base_effect;
        }
        let s2 = dot(&self.v_effect, &self.v_effect);
        let g = dot(&self.w_effect, x) + NONLINEAR_WEIGHT * c.nonlinearity.apply(dot(&self.v_effect, x), s2);
        c.base_effect + c.effect_heterogeneity * g
    }

    /// Key/value text, one entry per line, floats at 17 significant digits.
    pub fn to_sidecar(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        let vec = |v: &[f64]| v.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(",");
        let _ = writeln!(s, "n: {}", c.n);
        let _ = writeln!(s, "d: {}", c.d);
        let _ = writeln!(s, "seed: {}", c.seed);
        let _ = writeln!(s, "nonlinearity: {}", c.nonlinearity.as_str());
        let _ = writeln!(s, "bias_strength: {}", fmt_f64(c.bias_strength));
        let _ = writeln!(s, "effect_heterogeneity: {}", fmt_f64(c.effect_heterogeneity));
        let _ = writeln!(s, "base_effect: {}", fmt_f64(c.base_effect));
        let _ = writeln!(s, "noise_sd: {}", fmt_f64(c.noise_sd));
        let _ = writeln!(s, "propensity_clip: {},{}", fmt_f64(PROPENSITY_CLIP.0), fmt_f64(PROPENSITY_CLIP.1));
        let _ = writeln!(s, "w_propensity: {}", vec(&self.w_propensity));
        let _ = writeln!(s, "beta: {}", vec(&self.beta));
        let _ = writeln!(s, "gamma: {}", vec(&self.gamma));
        let _ = writeln!(s, "w_effect: {}", vec(&self.w_effect));
        let _ = writeln!(s, "v_effect: {}", vec(&self.v_effect));
        s
    }

    pub fn from_sidecar(text: &str) -> Result<Self> {
        let mut map = std::collections::HashMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("malformed sidecar line `{line}`")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            map.get(k)
                .cloned()
                .ok_or_else(|| Error::Config(format!("sidecar lacks `{k}`")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Config(format!("sidecar `{k}` is not a number")))
        };
        let int = |k: &str| -> Result<u64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Config(format!("sidecar `{k}` is not an integer")))
        };
        let vec = |k: &str| -> Result<Vec<f64>> {
            get(k)?
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("sidecar `{k}` has a bad entry")))
                })
                .collect()
        };
        let config = DgpConfig {
            n: int("n")? as usize,
            d: int("d")? as usize,
            bias_strength: num("bias_strength")?,
            effect_heterogeneity: num("effect_heterogeneity")?,
            base_effect: num("base_effect")?,
            noise_sd: num("noise_sd")?,
            nonlinearity: get("nonlinearity")?.parse()?,
            seed: int("seed")?,
        };
        Ok(Self {
            config,
            w_propensity: vec("w_propensity")?,
            beta: vec("beta")?,
            gamma: vec("gamma")?,
            w_effect: vec("w_effect")?,
            v_effect: vec("v_effect")?,
        })
    }

    pub fn write_sidecar(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_sidecar()).map_err(|e| Error::io(path, e))
    }
}

/// Draw a dataset and the coefficients that produced it.
pub fn generate(config: &DgpConfig) -> Result<(Dataset, DgpTruth)> {
    config.validate()?;
    let mut rng = stream(config.seed, Stream::Dgp);
    let truth = DgpTruth::draw(config, &mut rng);
    let (n, d) = (config.n, config.d);

    let xs: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let x = Tensor::new(n, d, xs)?;
    let mut t = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut y_cf = Vec::with_capacity(n);
    let mut mu0 = Vec::with_capacity(n);
    let mut mu1 = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row(i);
        let p = truth.propensity(row);
        let ti = u8::from(rng.random::<f64>() < p);
        let m0 = quantize(truth.mu0(row));
        let m1 = m0 + quantize(truth.effect(row));
        let e_f: f64 = StandardNormal.sample(&mut rng);
        let e_cf: f64 = StandardNormal.sample(&mut rng);
        let (mf, mcf) = if ti == 1 { (m1, m0) } else { (m0, m1) };
        t.push(ti);
        y.push(if config.noise_sd == 0.0 { mf } else { mf + config.noise_sd * e_f });
        y_cf.push(if config.noise_sd == 0.0 { mcf } else { mcf + config.noise_sd * e_cf });
        mu0.push(m0);
        mu1.push(m1);
    }
    let mut ds = Dataset::new(x, t, y)?;
    ds.y_cf = Some(y_cf);
    ds.mu0 = Some(mu0);
    ds.mu1 = Some(mu1);
    Ok((ds, truth))
}

/// Snap to a 2⁻³² grid. Sums of grid values below 2²⁰ in magnitude are exact,
/// so `mu1 − mu0` reproduces the drawn effect bit for bit.
fn quantize(v: f64) -> f64 {
    const GRID: f64 = 4_294_967_296.0;
    (v * GRID).round() / GRID
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
