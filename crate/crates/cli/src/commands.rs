use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use adbcr::baselines::{default_alpha_grid, lasso_cv_scores, LassoModel, LassoVariant};
use adbcr::checkpoint::write_atomic;
use adbcr::data::{generate as draw, load_csv, save_csv, CsvSchema, DgpConfig};
use adbcr::evaluation::{evaluate, search as run_search, MetricsReport, ReportMeta, Sample, SearchSpace};
use adbcr::trainer::train_logged;
use adbcr::{Checkpoint, Dataset, Error, FittedModel, Mode, Split, TrainConfig};

use crate::manifest::RunManifest;
use crate::{DataArgs, EvalArgs, GenerateArgs, SearchArgs, TrainArgs, Unlabeled};

/// Configuration problems exit with 2, everything else with 1.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    let config = e
        .chain()
        .any(|c| matches!(c.downcast_ref::<Error>(), Some(Error::Config(_))));
    if config {
        2
    } else {
        1
    }
}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn parse_fractions(text: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| config_err(format!("fractions `{text}` are not numbers")))?;
    <[f64; 3]>::try_from(parts).map_err(|_| config_err(format!("fractions `{text}` need three entries")))
}

/// `key=value` lines, skipping blanks and `#` comments.
fn kv_lines(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| config_err(format!("line {}: expected key=value, got `{line}`", no + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn dgp_set(cfg: &mut DgpConfig, key: &str, value: &str) -> Result<()> {
    let num = |v: &str| -> Result<f64> { v.parse().map_err(|_| config_err(format!("{key}: `{v}` is not a number"))) };
    let int = |v: &str| -> Result<u64> { v.parse().map_err(|_| config_err(format!("{key}: `{v}` is not an integer"))) };
    match key {
        "n" => cfg.n = int(value)? as usize,
        "d" => cfg.d = int(value)? as usize,
        "bias" | "bias_strength" => cfg.bias_strength = num(value)?,
        "heterogeneity" | "effect_heterogeneity" => cfg.effect_heterogeneity = num(value)?,
        "base_effect" => cfg.base_effect = num(value)?,
        "noise" | "noise_sd" => cfg.noise_sd = num(value)?,
        "nonlinearity" => cfg.nonlinearity = value.parse()?,
        "seed" => cfg.seed = int(value)?,
        other => return Err(config_err(format!("unknown generator key `{other}`"))),
    }
    Ok(())
}

fn dgp_kv(cfg: &DgpConfig) -> String {
    format!(
        "n={}\nd={}\nbias_strength={:?}\neffect_heterogeneity={:?}\nbase_effect={:?}\nnoise_sd={:?}\nnonlinearity={}\nseed={}\n",
        cfg.n,
        cfg.d,
        cfg.bias_strength,
        cfg.effect_heterogeneity,
        cfg.base_effect,
        cfg.noise_sd,
        cfg.nonlinearity.as_str(),
        cfg.seed
    )
}

pub fn generate(a: &GenerateArgs, argv: &[String]) -> Result<()> {
    let mut manifest = RunManifest::start("generate", argv, 0);
    let mut cfg = DgpConfig::default();
    if let Some(path) = &a.config {
        for (k, v) in kv_lines(&read_text(path)?)? {
            dgp_set(&mut cfg, &k, &v)?;
        }
        manifest.input(path);
    }
    let set = |cfg: &mut DgpConfig, k: &str, v: Option<String>| match v {
        Some(v) => dgp_set(cfg, k, &v),
        None => Ok(()),
    };
    set(&mut cfg, "n", a.n.map(|v| v.to_string()))?;
    set(&mut cfg, "d", a.d.map(|v| v.to_string()))?;
    set(&mut cfg, "bias", a.bias.map(|v| v.to_string()))?;
    set(&mut cfg, "heterogeneity", a.heterogeneity.map(|v| v.to_string()))?;
    set(&mut cfg, "base_effect", a.base_effect.map(|v| v.to_string()))?;
    set(&mut cfg, "noise", a.noise.map(|v| v.to_string()))?;
    set(&mut cfg, "nonlinearity", a.nonlinearity.clone())?;
    set(&mut cfg, "seed", a.seed.map(|v| v.to_string()))?;
    let fractions = parse_fractions(&a.fractions)?;

    let (mut ds, truth) = draw(&cfg)?;
    ds.split(fractions, cfg.seed)?;
    fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    let data = a.out.join("data.csv");
    let sidecar = a.out.join("truth.txt");
    save_csv(&ds, &data)?;
    truth.write_sidecar(&sidecar)?;

    manifest.seed = cfg.seed;
    manifest.config_kv(&format!("{}fractions={}\n", dgp_kv(&cfg), a.fractions));
    manifest.output(&data);
    manifest.output(&sidecar);
    manifest.finish(&a.out)?;
    println!("wrote {} rows to {}", ds.n(), data.display());
    Ok(())
}

fn load_data(args: &DataArgs, seed: u64) -> Result<Dataset> {
    let mut ds = load_csv(&args.data, &CsvSchema::default())?;
    if ds.splits.is_none() {
        ds.split(parse_fractions(&args.fractions)?, seed)?;
    }
    if args.unlabeled == Unlabeled::Test {
        let test = ds.indices(Split::Test);
        ds.strip_outcomes(&test)?;
    }
    Ok(ds)
}

enum Estimator {
    Net(Mode),
    Lasso(LassoVariant),
}

impl Estimator {
    fn parse(mode: &str) -> Result<Self> {
        match mode.parse::<LassoVariant>() {
            Ok(v) => Ok(Estimator::Lasso(v)),
            Err(_) => Ok(Estimator::Net(mode.parse()?)),
        }
    }
}

/// Training configuration from the config file, the overrides and the seed
/// flag, in that order of precedence. The `alpha` key sets the Lasso grid.
fn resolve_config(
    config: Option<&Path>,
    overrides: &[String],
    seed: Option<u64>,
    estimator: &Estimator,
) -> Result<(TrainConfig, Vec<f64>)> {
    let mut cfg = TrainConfig::default();
    let mut grid = default_alpha_grid();
    let mut entries = match config {
        Some(p) => kv_lines(&read_text(p)?)?,
        None => Vec::new(),
    };
    entries.extend(kv_lines(&overrides.join("\n"))?);
    for (k, v) in entries {
        if k == "alpha" {
            grid = v
                .split(',')
                .map(|a| a.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| config_err(format!("alpha: `{v}` is not a list of numbers")))?;
        } else {
            cfg.set(&k, &v)?;
        }
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Estimator::Net(mode) = estimator {
        cfg.mode = *mode;
    }
    cfg.validate()?;
    if grid.is_empty() || grid.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
        return Err(config_err("alpha grid must be nonempty and non-negative"));
    }
    Ok((cfg, grid))
}

#[derive(Serialize)]
struct Report {
    status: String,
    error: Option<String>,
    within: Option<MetricsReport>,
    out_of_sample: Option<MetricsReport>,
}

impl Report {
    fn failed(error: &anyhow::Error) -> Self {
        Self {
            status: "failed".into(),
            error: Some(format!("{error:#}")),
            within: None,
            out_of_sample: None,
        }
    }

    fn of(model: &FittedModel, ds: &Dataset, meta: &ReportMeta) -> Result<Self> {
        let within = evaluate(model, ds, Sample::Within, meta)?;
        let out = evaluate(model, ds, Sample::OutOfSample, meta)?;
        let status = if within.status == "ok" && out.status == "ok" { "ok" } else { "failed" };
        Ok(Self {
            status: status.into(),
            error: None,
            within: Some(within),
            out_of_sample: Some(out),
        })
    }

    fn write(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join("report.json"), &serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

struct Fitted {
    checkpoint: Checkpoint,
    history: Vec<u8>,
    seed: u64,
}

fn fit_lasso(ds: &Dataset, variant: LassoVariant, grid: &[f64], seed: u64) -> Result<Fitted> {
    let rows = ds.indices_any(&[Split::Train, Split::Validation]);
    let x = ds.x.select_rows(&rows);
    let t: Vec<u8> = rows.iter().map(|&i| ds.t[i]).collect();
    let y: Vec<f64> = rows.iter().map(|&i| ds.y[i]).collect();
    let mut history = Vec::new();
    let alpha = adbcr::baselines::lasso_select_alpha(ds, variant, grid, seed)?;
    let mut criterion = f64::NAN;
    if grid.len() > 1 {
        let scores = lasso_cv_scores(&x, &t, &y, variant, grid, seed)?;
        for (a, s) in grid.iter().zip(&scores) {
            history.extend(format!("alpha={a:e} cv_mse={s:.6}\n").bytes());
            if *a == alpha {
                criterion = *s;
            }
        }
    }
    history.extend(format!("selected alpha={alpha:e}\n").bytes());
    let model = LassoModel::fit(&x, &t, &y, variant, alpha)?;
    Ok(Fitted {
        checkpoint: Checkpoint {
            model: FittedModel::Lasso(model),
            fingerprint: format!("{}-{alpha:e}", variant.as_str()),
            criterion,
        },
        history,
        seed,
    })
}

fn fit_net(ds: &Dataset, cfg: &TrainConfig) -> Result<Fitted> {
    let mut history = Vec::new();
    let result = train_logged(ds, cfg, Some(&mut history))?;
    Ok(Fitted {
        checkpoint: Checkpoint {
            model: result.model,
            fingerprint: cfg.fingerprint(),
            criterion: result.best_value,
        },
        history,
        seed: cfg.seed,
    })
}

fn meta_of(checkpoint: &Checkpoint, seed: u64) -> ReportMeta {
    ReportMeta {
        model: checkpoint.model.kind().to_string(),
        seed,
        fingerprint: checkpoint.fingerprint.clone(),
        validation_criterion: Some(checkpoint.criterion).filter(|v| v.is_finite()),
    }
}

/// Run `body`; on failure leave a failed report and manifest in `out`.
fn guarded(out: &Path, mut manifest: RunManifest, body: impl FnOnce(&mut RunManifest) -> Result<()>) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    match body(&mut manifest) {
        Ok(()) => manifest.finish(out),
        Err(e) => {
            let _ = Report::failed(&e).write(out);
            manifest.status = "failed".into();
            manifest.output(&out.join("report.json"));
            let _ = manifest.finish(out);
            Err(e)
        }
    }
}

pub fn train(a: &TrainArgs, argv: &[String]) -> Result<()> {
    let manifest = RunManifest::start("train", argv, a.seed.unwrap_or(0));
    guarded(&a.out, manifest, |manifest| {
        let estimator = Estimator::parse(&a.mode)?;
        let (cfg, grid) = resolve_config(a.config.as_deref(), &a.overrides, a.seed, &estimator)?;
        manifest.seed = cfg.seed;
        let mut kv = cfg.to_kv();
        if let Estimator::Lasso(v) = &estimator {
            kv = format!("mode={}\nseed={}\nalpha={}\n", v.as_str(), cfg.seed, fmt_list(&grid));
        }
        manifest.config_kv(&format!("{kv}fractions={}\nunlabeled={}\n", a.data.fractions, unlabeled_str(a.data.unlabeled)));
        if let Some(p) = &a.config {
            manifest.input(p);
        }
        manifest.input(&a.data.data);

        let ds = load_data(&a.data, cfg.seed)?;
        let fitted = match estimator {
            Estimator::Lasso(v) => fit_lasso(&ds, v, &grid, cfg.seed)?,
            Estimator::Net(_) => fit_net(&ds, &cfg)?,
        };
        write_outputs(&a.out, &fitted, "model.ckpt", &ds, manifest)
    })
}

fn write_outputs(out: &Path, fitted: &Fitted, ckpt_name: &str, ds: &Dataset, manifest: &mut RunManifest) -> Result<()> {
    let ckpt = out.join(ckpt_name);
    let history = out.join("history.log");
    fitted.checkpoint.save(&ckpt)?;
    write_atomic(&history, &fitted.history)?;
    let report = Report::of(&fitted.checkpoint.model, ds, &meta_of(&fitted.checkpoint, fitted.seed))?;
    report.write(out)?;
    for p in [ckpt, history, out.join("report.json")] {
        manifest.output(&p);
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    if report.status != "ok" {
        bail!(Error::Training("metrics are not finite".into()));
    }
    Ok(())
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|a| format!("{a:?}")).collect::<Vec<_>>().join(",")
}

fn unlabeled_str(u: Unlabeled) -> &'static str {
    match u {
        Unlabeled::None => "none",
        Unlabeled::Test => "test",
    }
}

pub fn search(a: &SearchArgs, argv: &[String]) -> Result<()> {
    let manifest = RunManifest::start("search", argv, a.seed.unwrap_or(0));
    guarded(&a.out, manifest, |manifest| {
        let estimator = Estimator::parse(&a.mode)?;
        if let Estimator::Lasso(_) = estimator {
            return Err(config_err("lasso modes select alpha by cross-validation in `train`"));
        }
        let (base, _) = resolve_config(a.config.as_deref(), &a.overrides, a.seed, &estimator)?;
        let mut space = match &a.space {
            Some(p) => {
                manifest.input(p);
                SearchSpace::from_kv(&read_text(p)?)?
            }
            None => SearchSpace::default(),
        };
        if let Some(d) = a.draws {
            space.draws = d;
        }
        space.validate()?;
        if a.jobs == 0 {
            return Err(config_err("jobs must be at least 1"));
        }
        manifest.seed = base.seed;
        manifest.config_kv(&format!(
            "{}draws={}\njobs={}\nfractions={}\nunlabeled={}\n",
            base.to_kv(),
            space.draws,
            a.jobs,
            a.data.fractions,
            unlabeled_str(a.data.unlabeled)
        ));
        manifest.input(&a.data.data);

        let ds = load_data(&a.data, base.seed)?;
        let outcome = run_search(&ds, &space, &base, a.jobs)?;

        let runs = a.out.join("runs.csv");
        write_atomic(&runs, &runs_table(&outcome)?)?;
        manifest.output(&runs);

        let best = outcome.best_result();
        let mut history = Vec::new();
        for record in &best.history {
            history.extend(record.log_line().bytes());
            history.push(b'\n');
        }
        let fitted = Fitted {
            checkpoint: Checkpoint {
                model: best.model.clone(),
                fingerprint: best.config.fingerprint(),
                criterion: best.best_value,
            },
            history,
            seed: best.config.seed,
        };
        eprintln!(
            "{} of {} runs completed; best run {} (selection value {:.6})",
            outcome.completed(),
            outcome.runs.len(),
            outcome.best,
            best.best_value
        );
        write_outputs(&a.out, &fitted, "best.ckpt", &ds, manifest)
    })
}

fn runs_table(outcome: &adbcr::evaluation::SearchOutcome) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "index",
        "status",
        "selection_value",
        "best_epoch",
        "epochs_run",
        "fingerprint",
        "shared_layers",
        "head_layers",
        "dropout",
        "weight_decay",
        "batch_size",
        "learning_rate",
        "k",
        "adversary_weight",
        "seed",
        "error",
    ])?;
    for run in &outcome.runs {
        let c = &run.config;
        let layers = |l: &[usize]| l.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let (status, value, best_epoch, epochs, error) = match &run.outcome {
            Ok(r) => ("ok", format!("{:?}", r.best_value), r.best_epoch.to_string(), r.epochs_run().to_string(), String::new()),
            Err(e) => ("failed", String::new(), String::new(), String::new(), e.clone()),
        };
        w.write_record([
            run.index.to_string(),
            status.into(),
            value,
            best_epoch,
            epochs,
            c.fingerprint(),
            layers(&c.shared_layers),
            layers(&c.head_layers),
            format!("{:?}", c.dropout_p),
            format!("{:?}", c.weight_decay),
            c.batch_size.to_string(),
            format!("{:?}", c.learning_rate),
            c.k.to_string(),
            format!("{:?}", c.adversary_weight),
            c.seed.to_string(),
            error,
        ])?;
    }
    Ok(w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?)
}

pub fn eval(a: &EvalArgs, argv: &[String]) -> Result<()> {
    let mut manifest = RunManifest::start("eval", argv, a.seed);
    let checkpoint = Checkpoint::load(&a.checkpoint)?;
    let mut ds = load_csv(&a.data, &CsvSchema::default())?;
    if ds.splits.is_none() {
        ds.split(parse_fractions(&a.fractions)?, a.seed)?;
    }
    let report = Report::of(&checkpoint.model, &ds, &meta_of(&checkpoint, a.seed))?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(out) = &a.out {
        fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
        report.write(out)?;
        manifest.config_kv(&format!("fractions={}\n", a.fractions));
        manifest.input(&a.checkpoint);
        manifest.input(&a.data);
        manifest.output(&out.join("report.json"));
        manifest.finish(out)?;
    }
    Ok(())
}
