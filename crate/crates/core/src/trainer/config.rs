use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::objectives::Metric;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Adbcr,
    /// Adbcr whose adversary also sees the unlabeled pool.
    Uadbcr,
    /// Two heads per treatment, factual fit only.
    ATarnet,
    /// One head per treatment plus a treatment discriminator.
    Danncr,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Adbcr => "adbcr",
            Mode::Uadbcr => "uadbcr",
            Mode::ATarnet => "a-tarnet",
            Mode::Danncr => "danncr",
        }
    }

    /// Whether selection uses the factual validation loss instead of the
    /// combined criterion.
    pub fn selects_on_factual(self) -> bool {
        matches!(self, Mode::ATarnet | Mode::Danncr)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adbcr" => Ok(Mode::Adbcr),
            "uadbcr" => Ok(Mode::Uadbcr),
            "a-tarnet" | "a_tarnet" | "atarnet" => Ok(Mode::ATarnet),
            "danncr" => Ok(Mode::Danncr),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub shared_layers: Vec<usize>,
    pub head_layers: Vec<usize>,
    pub dropout_p: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Balancing steps per batch.
    pub k: usize,
    /// Weight of the distance in the adversarial head update.
    pub adversary_weight: f64,
    /// Weight of the distance in the selection criterion.
    pub criterion_weight: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub mode: Mode,
    pub metric: Metric,
    /// Repeat the factual step after balancing within each batch.
    pub trailing_step_a: bool,
    /// Gradient reversal coefficient for the discriminator baseline.
    pub reversal_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            shared_layers: vec![50, 50],
            head_layers: vec![50, 50],
            dropout_p: 0.1,
            weight_decay: 0.001,
            batch_size: 100,
            learning_rate: 1e-3,
            k: 1,
            adversary_weight: 1.0,
            criterion_weight: 1.0,
            patience: 100,
            max_epochs: 1000,
            seed: 0,
            mode: Mode::Adbcr,
            metric: Metric::L1,
            trailing_step_a: true,
            reversal_weight: 1.0,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "shared_layers",
    "head_layers",
    "dropout",
    "weight_decay",
    "batch_size",
    "learning_rate",
    "k",
    "adversary_weight",
    "criterion_weight",
    "patience",
    "max_epochs",
    "seed",
    "mode",
    "metric",
    "trailing_step_a",
    "reversal_weight",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.k < 1 {
            return bad("k must be at least 1".into());
        }
        if self.patience < 1 {
            return bad("patience must be at least 1".into());
        }
        if self.max_epochs < 1 {
            return bad("max_epochs must be at least 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size {} is below 2", self.batch_size));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout {} not in [0, 1)", self.dropout_p));
        }
        for (name, v) in [
            ("weight_decay", self.weight_decay),
            ("adversary_weight", self.adversary_weight),
            ("criterion_weight", self.criterion_weight),
            ("reversal_weight", self.reversal_weight),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} {v} must be finite and non-negative"));
            }
        }
        if self.shared_layers.is_empty() || self.head_layers.is_empty() {
            return bad("layer lists must be nonempty".into());
        }
        if self.shared_layers.contains(&0) || self.head_layers.contains(&0) {
            return bad("zero-width layer".into());
        }
        Ok(())
    }

    /// Set one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let num = |v: &str| -> Result<f64> {
            v.parse()
                .map_err(|_| Error::Config(format!("{key}: `{v}` is not a number")))
        };
        let int = |v: &str| -> Result<u64> {
            v.parse()
                .map_err(|_| Error::Config(format!("{key}: `{v}` is not an integer")))
        };
        match key {
            "shared_layers" => self.shared_layers = parse_layers(value)?,
            "head_layers" => self.head_layers = parse_layers(value)?,
            "dropout" | "dropout_p" => self.dropout_p = num(value)?,
            "weight_decay" => self.weight_decay = num(value)?,
            "batch_size" => self.batch_size = int(value)? as usize,
            "learning_rate" | "lr" => self.learning_rate = num(value)?,
            "k" => self.k = int(value)? as usize,
            "adversary_weight" => self.adversary_weight = num(value)?,
            "criterion_weight" => self.criterion_weight = num(value)?,
            "patience" => self.patience = int(value)? as usize,
            "max_epochs" => self.max_epochs = int(value)? as usize,
            "seed" => self.seed = int(value)?,
            "mode" => self.mode = value.parse()?,
            "metric" => self.metric = value.parse()?,
            "trailing_step_a" => {
                self.trailing_step_a = match value {
                    "true" | "1" | "yes" => true,
                    "false" | "0" | "no" => false,
                    _ => return Err(Error::Config(format!("{key}: `{value}` is not a flag"))),
                }
            }
            "reversal_weight" => self.reversal_weight = num(value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Apply `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got `{line}`", no + 1))
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_kv(text)?;
        Ok(c)
    }

    /// Canonical `key=value` listing, one per line, in [`CONFIG_KEYS`] order.
    pub fn to_kv(&self) -> String {
        let layers = |l: &[usize]| l.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        [
            ("shared_layers", layers(&self.shared_layers)),
            ("head_layers", layers(&self.head_layers)),
            ("dropout", format!("{:?}", self.dropout_p)),
            ("weight_decay", format!("{:?}", self.weight_decay)),
            ("batch_size", self.batch_size.to_string()),
            ("learning_rate", format!("{:?}", self.learning_rate)),
            ("k", self.k.to_string()),
            ("adversary_weight", format!("{:?}", self.adversary_weight)),
            ("criterion_weight", format!("{:?}", self.criterion_weight)),
            ("patience", self.patience.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("mode", self.mode.to_string()),
            ("metric", self.metric.to_string()),
            ("trailing_step_a", self.trailing_step_a.to_string()),
            ("reversal_weight", format!("{:?}", self.reversal_weight)),
        ]
        .iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect()
    }

    /// Short stable hash of the canonical listing.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_kv().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn parse_layers(text: &str) -> Result<Vec<usize>> {
    let inner = text.trim().trim_start_matches('[').trim_end_matches(']');
    let layers = inner
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad layer width `{s}` in `{text}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    if layers.is_empty() || layers.contains(&0) {
        return Err(Error::Config(format!("invalid layer list `{text}`")));
    }
    Ok(layers)
}
