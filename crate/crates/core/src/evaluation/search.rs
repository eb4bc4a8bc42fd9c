use rand::Rng as _;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};
use crate::trainer::{parse_layers, train, TrainConfig, TrainResult};

/// How the learning rate is chosen per draw.
#[derive(Debug, Clone, PartialEq)]
pub enum Sampler {
    Values(Vec<f64>),
    /// Log-uniform on `[lo, hi]`.
    LogUniform(f64, f64),
}

impl Sampler {
    fn draw(&self, rng: &mut crate::rng::Rng) -> f64 {
        match self {
            Sampler::Values(v) => v[rng.random_range(0..v.len())],
            Sampler::LogUniform(lo, hi) => (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp(),
        }
    }
}

/// Architectures are searched exhaustively; every other entry is drawn at
/// random `draws` times per architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub shared_layers: Vec<Vec<usize>>,
    pub head_layers: Vec<Vec<usize>>,
    pub dropout: Vec<f64>,
    pub weight_decay: Vec<f64>,
    pub batch_size: Vec<usize>,
    pub learning_rate: Sampler,
    pub k: Vec<usize>,
    pub adversary_weight: Vec<f64>,
    pub draws: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            shared_layers: vec![vec![50, 50], vec![20, 20], vec![10, 10]],
            head_layers: vec![vec![50, 50], vec![20, 20], vec![10]],
            dropout: vec![0.1, 0.3, 0.5],
            weight_decay: vec![1.0, 0.1, 0.01, 0.001],
            batch_size: vec![100, 250, 500],
            learning_rate: Sampler::LogUniform(1e-5, 1e-2),
            k: vec![1, 2, 3],
            adversary_weight: vec![1.0],
            draws: 30,
        }
    }
}

impl SearchSpace {
    /// The single point described by `config`.
    pub fn point(config: &TrainConfig) -> Self {
        Self {
            shared_layers: vec![config.shared_layers.clone()],
            head_layers: vec![config.head_layers.clone()],
            dropout: vec![config.dropout_p],
            weight_decay: vec![config.weight_decay],
            batch_size: vec![config.batch_size],
            learning_rate: Sampler::Values(vec![config.learning_rate]),
            k: vec![config.k],
            adversary_weight: vec![config.adversary_weight],
            draws: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("shared_layers", self.shared_layers.is_empty()),
            ("head_layers", self.head_layers.is_empty()),
            ("dropout", self.dropout.is_empty()),
            ("weight_decay", self.weight_decay.is_empty()),
            ("batch_size", self.batch_size.is_empty()),
            ("k", self.k.is_empty()),
            ("adversary_weight", self.adversary_weight.is_empty()),
            ("learning_rate", matches!(&self.learning_rate, Sampler::Values(v) if v.is_empty())),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::Config(format!("search space entry `{name}` is empty")));
        }
        if self.draws < 1 {
            return Err(Error::Config("draws must be at least 1".into()));
        }
        if let Sampler::LogUniform(lo, hi) = self.learning_rate {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::Config(format!("learning rate range [{lo}, {hi}] is invalid")));
            }
        }
        Ok(())
    }

    /// Parse `key = value` lines. Layer lists are separated by `;`, other
    /// lists by `,`; the learning rate also accepts `lo..hi` for a
    /// log-uniform range. Unlisted keys keep their defaults.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut s = Self::default();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("search space line {}: expected key=value", no + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "shared_layers" => s.shared_layers = layer_lists(v)?,
                "head_layers" => s.head_layers = layer_lists(v)?,
                "dropout" => s.dropout = list(k, v)?,
                "weight_decay" => s.weight_decay = list(k, v)?,
                "batch_size" => s.batch_size = list(k, v)?,
                "k" => s.k = list(k, v)?,
                "adversary_weight" => s.adversary_weight = list(k, v)?,
                "learning_rate" => {
                    s.learning_rate = match v.split_once("..") {
                        Some((lo, hi)) => Sampler::LogUniform(number(k, lo)?, number(k, hi)?),
                        None => Sampler::Values(list(k, v)?),
                    }
                }
                "draws" => s.draws = number(k, v)?,
                other => return Err(Error::Config(format!("unknown search space key `{other}`"))),
            }
        }
        s.validate()?;
        Ok(s)
    }

    /// The run configurations: for each architecture pair (shared-major
    /// order), `draws` random settings. Run `i` trains with its own seed.
    pub fn configs(&self, base: &TrainConfig) -> Result<Vec<TrainConfig>> {
        self.validate()?;
        let mut rng = stream(base.seed, Stream::Search);
        let mut out = Vec::new();
        for shared in &self.shared_layers {
            for head in &self.head_layers {
                for _ in 0..self.draws {
                    let pick = |rng: &mut crate::rng::Rng, n: usize| rng.random_range(0..n);
                    let mut c = base.clone();
                    c.shared_layers = shared.clone();
                    c.head_layers = head.clone();
                    c.dropout_p = self.dropout[pick(&mut rng, self.dropout.len())];
                    c.weight_decay = self.weight_decay[pick(&mut rng, self.weight_decay.len())];
                    c.batch_size = self.batch_size[pick(&mut rng, self.batch_size.len())];
                    c.learning_rate = self.learning_rate.draw(&mut rng);
                    c.k = self.k[pick(&mut rng, self.k.len())];
                    c.adversary_weight = self.adversary_weight[pick(&mut rng, self.adversary_weight.len())];
                    c.seed = base.seed.wrapping_add(out.len() as u64);
                    out.push(c);
                }
            }
        }
        Ok(out)
    }

    pub fn run_count(&self) -> usize {
        self.shared_layers.len() * self.head_layers.len() * self.draws
    }
}

fn number<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("search space `{key}`: bad value `{}`", v.trim())))
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.trim_matches(|c| c == '{' || c == '}')
        .split(',')
        .map(|s| number(key, s))
        .collect()
}

fn layer_lists(v: &str) -> Result<Vec<Vec<usize>>> {
    v.split(';').map(parse_layers).collect()
}

/// One trained configuration of a search.
#[derive(Debug, Clone)]
pub struct SearchRun {
    pub index: usize,
    pub config: TrainConfig,
    /// The trained result, or the error message of a failed run.
    pub outcome: std::result::Result<TrainResult, String>,
}

impl SearchRun {
    pub fn selection_value(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(|r| r.best_value).filter(|v| v.is_finite())
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub runs: Vec<SearchRun>,
    /// Index into `runs` of the selected run.
    pub best: usize,
}

impl SearchOutcome {
    pub fn best_run(&self) -> &SearchRun {
        &self.runs[self.best]
    }

    pub fn best_result(&self) -> &TrainResult {
        self.runs[self.best].outcome.as_ref().expect("selected run succeeded")
    }

    pub fn completed(&self) -> usize {
        self.runs.iter().filter(|r| r.outcome.is_ok()).count()
    }
}

/// Index of the lowest finite score, the earliest on ties. `None` when no
/// score is finite.
pub fn argmin(scores: impl IntoIterator<Item = Option<f64>>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.into_iter().enumerate() {
        if let Some(v) = s.filter(|v| v.is_finite()) {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Train every configuration of `space` (at most `jobs` at a time) and select
/// the run with the lowest selection value. The selection value is the
/// combined criterion for the balancing modes and the factual validation loss
/// for the others. Failed runs are kept in the table but never selected.
pub fn search(ds: &Dataset, space: &SearchSpace, base: &TrainConfig, jobs: usize) -> Result<SearchOutcome> {
    let configs = space.configs(base)?;
    let run = |(index, config): (usize, &TrainConfig)| SearchRun {
        index,
        config: config.clone(),
        outcome: train(ds, config).map_err(|e| e.to_string()),
    };
    let runs: Vec<SearchRun> = if jobs <= 1 {
        configs.iter().enumerate().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Search(format!("cannot start worker pool: {e}")))?;
        pool.install(|| configs.par_iter().enumerate().map(run).collect())
    };
    let best = argmin(runs.iter().map(SearchRun::selection_value)).ok_or_else(|| {
        let first = runs
            .iter()
            .find_map(|r| r.outcome.as_ref().err().cloned())
            .unwrap_or_default();
        Error::Search(format!("all {} runs failed; first error: {first}", runs.len()))
    })?;
    Ok(SearchOutcome { runs, best })
}
