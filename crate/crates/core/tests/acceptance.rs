//! End-to-end acceptance checks. Each test prints one `[PASS]`/`[FAIL]` line;
//! run with `--nocapture` to see them.

use std::sync::OnceLock;
use std::time::Instant;

use adbcr::autodiff::{Adam, Tensor};
use adbcr::baselines::{default_alpha_grid, fit_lasso, lasso_fit, LassoVariant};
use adbcr::data::{generate, DgpConfig, DEFAULT_FRACTIONS, PROPENSITY_CLIP};
use adbcr::evaluation::{ate_error, evaluate, nn_pehe, nn_pehe_split, pehe, search, ReportMeta, Sample, Sampler, SearchSpace};
use adbcr::objectives::{discriminative_distance, factual_loss, BatchView, Forward, Metric};
use adbcr::rng::{stream, Rng, Stream};
use adbcr::trainer::{make_batches, Prepared, Trainer};
use adbcr::{train, AdbcrModel, CateModel, Checkpoint, Dataset, FittedModel, Mode, ParamGroup, Split, TrainConfig};
use rand::Rng as _;

fn report(id: u32, pass: bool, detail: String) {
    println!("criterion {id:>2} [{}] {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {id} failed: {detail}");
}

fn benchmark(seed: u64, heterogeneity: f64) -> Dataset {
    let (mut ds, _) = generate(&DgpConfig {
        n: 1000,
        d: 10,
        bias_strength: 2.0,
        effect_heterogeneity: heterogeneity,
        seed,
        ..DgpConfig::default()
    })
    .unwrap();
    ds.split(DEFAULT_FRACTIONS, seed).unwrap();
    ds
}

fn oos_sqrt_pehe(model: &dyn CateModel, ds: &Dataset) -> f64 {
    evaluate(model, ds, Sample::OutOfSample, &ReportMeta::default())
        .unwrap()
        .sqrt_pehe
        .unwrap()
}

// ---------------------------------------------------------------- gradients

fn random_batch(rng: &mut Rng, n: usize, d: usize) -> BatchView {
    let x = Tensor::new(n, d, (0..n * d).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap();
    let mut t: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<bool>())).collect();
    t[0] = 0;
    t[1] = 1;
    let y = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    BatchView::new(x, t, y).unwrap()
}

/// The batch without rows whose paired counterfactual heads differ by less
/// than `tol`, where the l1 distance has a kink.
fn away_from_kinks(model: &AdbcrModel, batch: &BatchView, tol: f64) -> Option<BatchView> {
    let gap = |t: usize| -> Vec<f64> {
        let a = model.forward_head(&batch.x, t, 0, None).unwrap();
        let b = model.forward_head(&batch.x, t, 1, None).unwrap();
        a.iter().zip(&b).map(|(u, v)| (u - v).abs()).collect()
    };
    let gaps = [gap(0), gap(1)];
    let keep: Vec<usize> = (0..batch.len())
        .filter(|&i| gaps[1 - batch.t[i] as usize][i] >= tol)
        .collect();
    let t: Vec<u8> = keep.iter().map(|&i| batch.t[i]).collect();
    if !t.contains(&0) || !t.contains(&1) {
        return None;
    }
    BatchView::new(batch.x.select_rows(&keep), t, keep.iter().map(|&i| batch.y[i]).collect()).ok()
}

/// Worst elementwise relative error between analytic and central-difference
/// gradients of `objective` over every parameter.
fn worst_gradient_error(
    model: &AdbcrModel,
    objective: impl Fn(&AdbcrModel) -> f64,
    analytic: impl Fn(&AdbcrModel) -> Vec<Tensor>,
) -> f64 {
    const H: f64 = 1e-5;
    let grads = analytic(model);
    let mut worst: f64 = 0.0;
    let mut probe = model.clone();
    for (p, g) in grads.iter().enumerate() {
        for j in 0..g.len() {
            let orig = probe.params().get(p).data()[j];
            probe.params_mut().get_mut(p).data_mut()[j] = orig + H;
            let up = objective(&probe);
            probe.params_mut().get_mut(p).data_mut()[j] = orig - H;
            let down = objective(&probe);
            probe.params_mut().get_mut(p).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * H);
            let a = g.data()[j];
            let scale = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / scale);
        }
    }
    worst
}

fn analytic_grads(model: &AdbcrModel, batch: &BatchView, distance: Option<Metric>) -> Vec<Tensor> {
    let mut f = Forward::new(model, batch, ParamGroup::All, distance.is_some(), None).unwrap();
    let root = match distance {
        None => f.factual_loss(batch, None).unwrap(),
        Some(m) => f.distance(batch, m, None).unwrap(),
    };
    let grads = f.tape.backward(root).unwrap();
    f.bound()
        .vars()
        .iter()
        .zip(model.params().values())
        .map(|(&v, p)| grads.wrt(v, p.shape()))
        .collect()
}

#[test]
fn c01_gradient_fidelity() {
    let start = Instant::now();
    let mut rng = stream(2024, Stream::Custom(1));
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut excluded = 0;
    while checked < 25 {
        let d = rng.random_range(1..=8);
        let width = |rng: &mut Rng| -> Vec<usize> { (0..rng.random_range(1..=2)).map(|_| rng.random_range(2..=16)).collect() };
        let shared = width(&mut rng);
        let heads = width(&mut rng);
        let model = AdbcrModel::init(d, &shared, &heads, 0.0, rng.random()).unwrap();
        let n = rng.random_range(6..=12);
        let batch = random_batch(&mut rng, n, d);
        worst = worst.max(worst_gradient_error(&model, |m| factual_loss(m, &batch).unwrap(), |m| {
            analytic_grads(m, &batch, None)
        }));
        worst = worst.max(worst_gradient_error(
            &model,
            |m| discriminative_distance(m, &batch, Metric::Squared).unwrap(),
            |m| analytic_grads(m, &batch, Some(Metric::Squared)),
        ));
        let full = batch.len();
        match away_from_kinks(&model, &batch, 1e-3) {
            Some(smooth) => {
                excluded += full - smooth.len();
                worst = worst.max(worst_gradient_error(
                    &model,
                    |m| discriminative_distance(m, &smooth, Metric::L1).unwrap(),
                    |m| analytic_grads(m, &smooth, Some(Metric::L1)),
                ));
            }
            None => excluded += full,
        }
        checked += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        worst < 1e-4 && secs < 30.0,
        format!("gradient check on {checked} networks: worst relative error {worst:.2e}, {excluded} rows near the l1 kink excluded, {secs:.1}s"),
    );
}

// ---------------------------------------------------------------- optimizer

#[test]
fn c02_adam_matches_reference() {
    // Textbook scalar Adam.
    let (lr, b1, b2, eps) = (0.01, 0.9, 0.999, 1e-8);
    let (mut theta, mut m, mut v) = (1.5f64, 0.0f64, 0.0f64);
    let mut reference = Vec::new();
    for step in 1..=200 {
        let g = 2.0 * theta;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1.powi(step));
        let v_hat = v / (1.0 - b2.powi(step));
        theta -= lr * m_hat / (v_hat.sqrt() + eps);
        reference.push(theta);
    }

    let mut adam = Adam::new(lr, 0.0);
    let mut p = Tensor::scalar(1.5);
    let mut worst: f64 = 0.0;
    for expected in &reference {
        let g = Tensor::scalar(2.0 * p.item());
        adam.step(&mut [&mut p], &[g]).unwrap();
        worst = worst.max((p.item() - expected).abs());
    }
    report(2, worst < 1e-10, format!("200 Adam steps on θ², max |Δθ| {worst:.2e}"));
}

// ---------------------------------------------------------------- training contracts

fn small_config(mode: Mode, seed: u64) -> TrainConfig {
    TrainConfig {
        shared_layers: vec![12, 12],
        head_layers: vec![8],
        batch_size: 64,
        learning_rate: 3e-3,
        k: 2,
        max_epochs: 6,
        patience: 6,
        dropout_p: 0.1,
        mode,
        seed,
        ..TrainConfig::default()
    }
}

fn small_dataset(seed: u64) -> Dataset {
    let (mut ds, _) = generate(&DgpConfig {
        n: 400,
        d: 6,
        seed,
        ..DgpConfig::default()
    })
    .unwrap();
    ds.split(DEFAULT_FRACTIONS, seed).unwrap();
    ds
}

fn bits(t: &[Tensor]) -> Vec<u64> {
    t.iter().flat_map(|x| x.data().iter().map(|v| v.to_bits())).collect()
}

#[test]
fn c03_freeze_contracts() {
    let ds = small_dataset(3);
    let cfg = small_config(Mode::Adbcr, 3);
    let prep = Prepared::new(&ds, false).unwrap();
    let model = AdbcrModel::init(ds.dim(), &cfg.shared_layers, &cfg.head_layers, cfg.dropout_p, cfg.seed).unwrap();
    let shared = model.group_range(ParamGroup::Shared);
    let heads = model.group_range(ParamGroup::Heads);
    let mut trainer = Trainer::new(model, cfg.clone());
    let plans = make_batches(
        &prep.train.t,
        cfg.batch_size,
        0,
        &mut stream(cfg.seed, Stream::Batching),
        &mut stream(cfg.seed, Stream::Unlabeled),
    )
    .unwrap();
    let (mut b_steps, mut c_steps, mut violations) = (0, 0, 0);
    let group = |t: &Trainer, r: &std::ops::Range<usize>| bits(&t.model.params().values()[r.clone()]);
    for plan in &plans {
        let batch = prep.batch(plan).unwrap();
        trainer.step_a(&batch).unwrap();
        let before = group(&trainer, &shared);
        let heads_before = group(&trainer, &heads);
        trainer.step_b(&batch).unwrap();
        b_steps += 1;
        violations += usize::from(group(&trainer, &shared) != before);
        violations += usize::from(group(&trainer, &heads) == heads_before);
        for _ in 0..cfg.k {
            let before = group(&trainer, &heads);
            let shared_before = group(&trainer, &shared);
            trainer.step_c(&batch).unwrap();
            c_steps += 1;
            violations += usize::from(group(&trainer, &heads) != before);
            violations += usize::from(group(&trainer, &shared) == shared_before);
        }
    }
    report(
        3,
        violations == 0 && b_steps == plans.len(),
        format!("one epoch, {b_steps} head steps and {c_steps} representation steps, {violations} contract violations"),
    );
}

#[test]
fn c04_algorithm_reductions() {
    let ds = small_dataset(4);
    let a = train(&ds, &small_config(Mode::Adbcr, 11)).unwrap();
    let u = train(&ds, &small_config(Mode::Uadbcr, 11)).unwrap();
    let record_bits = |r: &adbcr::TrainResult| -> Vec<u64> {
        r.history
            .iter()
            .flat_map(|e| [e.train_factual, e.factual, e.distance.unwrap_or(f64::NAN), e.criterion].map(f64::to_bits))
            .collect()
    };
    let same_history = record_bits(&a) == record_bits(&u) && a.history.len() == u.history.len();
    let tar = train(&ds, &small_config(Mode::ATarnet, 11)).unwrap();
    let no_distance = tar.stats.distance_gradients == 0 && tar.stats.step_b == 0 && tar.stats.step_c == 0;
    let adbcr_uses = a.stats.distance_gradients > 0;
    report(
        4,
        same_history && no_distance && adbcr_uses,
        format!(
            "empty-pool uadbcr history bit-identical: {same_history} over {} epochs; a-tarnet distance gradients {} (adbcr {})",
            a.history.len(),
            tar.stats.distance_gradients,
            a.stats.distance_gradients
        ),
    );
}

// ---------------------------------------------------------------- synthetic benchmark

/// The 12-configuration search run per seed: every pairing of two
/// representation and two head architectures, three random draws each.
fn benchmark_space() -> SearchSpace {
    SearchSpace {
        shared_layers: vec![vec![20, 20], vec![10, 10]],
        head_layers: vec![vec![20, 20], vec![10]],
        dropout: vec![0.0],
        weight_decay: vec![0.01, 0.001],
        batch_size: vec![100],
        learning_rate: Sampler::LogUniform(1e-3, 1e-2),
        k: vec![1, 2, 3],
        adversary_weight: vec![1.0],
        draws: 3,
    }
}

struct SeedPool {
    /// Out-of-sample √PEHE of the selected ADBCR and A-TARNet models.
    adbcr: f64,
    tarnet: f64,
    /// Per ADBCR run: out-of-sample √PEHE and validation NN-PEHE.
    runs: Vec<(f64, f64)>,
}

struct Pool {
    seeds: Vec<SeedPool>,
    secs: f64,
}

/// Searches shared by the balancing and model-selection checks.
fn pool() -> &'static Pool {
    static POOL: OnceLock<Pool> = OnceLock::new();
    POOL.get_or_init(|| {
        let start = Instant::now();
        let space = benchmark_space();
        let seeds = (0..10)
            .map(|seed| {
                let ds = benchmark(seed, 1.0);
                let run = |mode| {
                    let base = TrainConfig {
                        mode,
                        max_epochs: 400,
                        patience: 100,
                        seed: seed * 100,
                        ..TrainConfig::default()
                    };
                    search(&ds, &space, &base, 1).unwrap()
                };
                let a = run(Mode::Adbcr);
                let t = run(Mode::ATarnet);
                let runs = a
                    .runs
                    .iter()
                    .map(|r| {
                        let m = &r.outcome.as_ref().unwrap().model;
                        (oos_sqrt_pehe(m, &ds), nn_pehe_split(m, &ds, Split::Validation).unwrap())
                    })
                    .collect();
                SeedPool {
                    adbcr: oos_sqrt_pehe(&a.best_result().model, &ds),
                    tarnet: oos_sqrt_pehe(&t.best_result().model, &ds),
                    runs,
                }
            })
            .collect();
        Pool {
            seeds,
            secs: start.elapsed().as_secs_f64(),
        }
    })
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn c05_balancing_benefit() {
    let pool = pool();
    let wins = pool.seeds.iter().filter(|s| s.adbcr < s.tarnet).count();
    let (ma, mt) = (mean(pool.seeds.iter().map(|s| s.adbcr)), mean(pool.seeds.iter().map(|s| s.tarnet)));
    let pairs: Vec<String> = pool.seeds.iter().map(|s| format!("{:.2}/{:.2}", s.adbcr, s.tarnet)).collect();
    report(
        5,
        ma <= mt && wins >= 7 && pool.secs < 900.0,
        format!(
            "mean out-of-sample √PEHE ADBCR {ma:.3} vs A-TARNet {mt:.3}, ADBCR lower in {wins}/10 seeds ({}), {:.0}s",
            pairs.join(" "),
            pool.secs
        ),
    );
}

#[test]
fn c07_model_selection_ablation() {
    let pool = pool();
    let mut by_nn = Vec::new();
    for s in &pool.seeds {
        let pick = s
            .runs
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|r| r.0)
            .unwrap();
        by_nn.push(pick);
    }
    let ok = pool.seeds.iter().zip(&by_nn).filter(|(s, nn)| s.adbcr <= **nn).count();
    let (mc, mn) = (mean(pool.seeds.iter().map(|s| s.adbcr)), mean(by_nn.iter().copied()));
    report(
        7,
        mc <= mn && ok >= 6,
        format!("mean out-of-sample √PEHE selecting by criterion {mc:.3} vs by NN-PEHE {mn:.3}; criterion no worse in {ok}/10 seeds"),
    );
}

// ---------------------------------------------------------------- linear baselines

#[test]
fn c06_linear_baseline_ordering() {
    let grid = default_alpha_grid();
    let mut t_wins = 0;
    let mut s_ate_ok = 0;
    let mut detail = Vec::new();
    for seed in 0..10 {
        let ds = benchmark(seed, 1.0);
        let s = fit_lasso(&ds, LassoVariant::Single, &grid, seed).unwrap();
        let t = fit_lasso(&ds, LassoVariant::PerTreatment, &grid, seed).unwrap();
        let (ps, pt) = (oos_sqrt_pehe(&s, &ds), oos_sqrt_pehe(&t, &ds));
        t_wins += usize::from(pt < ps);
        detail.push(format!("{pt:.2}/{ps:.2}"));

        let flat = benchmark(seed, 0.0);
        let s = fit_lasso(&flat, LassoVariant::Single, &grid, seed).unwrap();
        let ate = evaluate(&s, &flat, Sample::OutOfSample, &ReportMeta::default())
            .unwrap()
            .ate_error
            .unwrap();
        s_ate_ok += usize::from(ate < 0.1);
    }
    report(
        6,
        t_wins >= 8 && s_ate_ok >= 8,
        format!(
            "T-Lasso beats S-Lasso in {t_wins}/10 seeds (T/S √PEHE {}); S-Lasso ATE error < 0.1 without heterogeneity in {s_ate_ok}/10",
            detail.join(" ")
        ),
    );
}

// ---------------------------------------------------------------- metric oracles

fn brute_pehe(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]).powi(2);
    }
    s / a.len() as f64
}

fn brute_ate(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    (a.iter().sum::<f64>() / n - b.iter().sum::<f64>() / n).abs()
}

/// NN-PEHE by explicit loops: z-score each column (population sd), match
/// each row to the closest opposite-arm row, lowest index on ties.
fn brute_nn_pehe(x: &[Vec<f64>], t: &[u8], y: &[f64], tau_hat: &[f64]) -> f64 {
    let (n, d) = (x.len(), x[0].len());
    let mut z = x.to_vec();
    for j in 0..d {
        let mean = x.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let var = x.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        for i in 0..n {
            z[i][j] = (x[i][j] - mean) / sd;
        }
    }
    let mut total = 0.0;
    for i in 0..n {
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for k in 0..n {
            if t[k] == t[i] {
                continue;
            }
            let dist: f64 = (0..d).map(|j| (z[i][j] - z[k][j]).powi(2)).sum();
            if dist < best_d {
                best_d = dist;
                best = k;
            }
        }
        let imputed = if t[i] == 1 { y[i] - y[best] } else { y[best] - y[i] };
        total += (imputed - tau_hat[i]).powi(2);
    }
    total / n as f64
}

/// Solve a small dense system by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

#[test]
fn c08_metric_oracles() {
    let mut rng = stream(8, Stream::Custom(8));
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let d = rng.random_range(1..=4);
        let x: Vec<Vec<f64>> = (0..20).map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let mut t: Vec<u8> = (0..20).map(|_| u8::from(rng.random::<bool>())).collect();
        t[0] = 0;
        t[1] = 1;
        let y: Vec<f64> = (0..20).map(|_| rng.random_range(-5.0..5.0)).collect();
        let tau: Vec<f64> = (0..20).map(|_| rng.random_range(-2.0..2.0)).collect();
        let tau_hat: Vec<f64> = (0..20).map(|_| rng.random_range(-2.0..2.0)).collect();
        worst = worst.max((pehe(&tau, &tau_hat).unwrap() - brute_pehe(&tau, &tau_hat)).abs());
        worst = worst.max((ate_error(&tau, &tau_hat).unwrap() - brute_ate(&tau, &tau_hat)).abs());

        let mut ds = Dataset::new(Tensor::from_rows(&x).unwrap(), t.clone(), y.clone()).unwrap();
        ds.splits = Some(vec![Split::Test; 20]);
        worst = worst.max((nn_pehe(&ds, &tau_hat).unwrap() - brute_nn_pehe(&x, &t, &y, &tau_hat)).abs());
    }

    let mut lasso_worst: f64 = 0.0;
    for _ in 0..20 {
        let x: Vec<Vec<f64>> = (0..10).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let y: Vec<f64> = (0..10).map(|_| rng.random_range(-3.0..3.0)).collect();
        // Normal equations with an intercept column.
        let design: Vec<Vec<f64>> = x.iter().map(|r| [vec![1.0], r.clone()].concat()).collect();
        let mut xtx = vec![vec![0.0; 4]; 4];
        let mut xty = vec![0.0; 4];
        for (row, &yi) in design.iter().zip(&y) {
            for a in 0..4 {
                xty[a] += row[a] * yi;
                for b in 0..4 {
                    xtx[a][b] += row[a] * row[b];
                }
            }
        }
        let beta = solve(xtx, xty);
        let fit = lasso_fit(&Tensor::from_rows(&x).unwrap(), &y, 0.0).unwrap();
        lasso_worst = lasso_worst.max((fit.intercept - beta[0]).abs());
        for j in 0..3 {
            lasso_worst = lasso_worst.max((fit.weights[j] - beta[j + 1]).abs());
        }
    }
    report(
        8,
        worst < 1e-10 && lasso_worst < 1e-6,
        format!("metrics vs brute force on 50 instances: max error {worst:.1e}; lasso α=0 vs normal equations on 20 systems: {lasso_worst:.1e}"),
    );
}

// ---------------------------------------------------------------- persistence

#[test]
fn c09_determinism_and_persistence() {
    let ds = small_dataset(9);
    let dir = tempfile::tempdir().unwrap();
    let mut rng = stream(9, Stream::Custom(9));
    let rows = Tensor::new(100, ds.dim(), (0..100 * ds.dim()).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
    let mut identical = 0;
    let mut exact = 0;
    let mut kinds = Vec::new();
    let fits: Vec<Box<dyn Fn() -> Checkpoint>> = vec![
        Box::new(|| {
            let r = train(&ds, &small_config(Mode::Adbcr, 5)).unwrap();
            Checkpoint { model: r.model, fingerprint: r.config.fingerprint(), criterion: r.best_value }
        }),
        Box::new(|| {
            let r = train(&ds, &small_config(Mode::Danncr, 5)).unwrap();
            Checkpoint { model: r.model, fingerprint: r.config.fingerprint(), criterion: r.best_value }
        }),
        Box::new(|| {
            let m = fit_lasso(&ds, LassoVariant::PerTreatment, &default_alpha_grid(), 5).unwrap();
            Checkpoint { model: FittedModel::Lasso(m), fingerprint: "t-lasso".into(), criterion: 0.0 }
        }),
    ];
    for (i, fit) in fits.iter().enumerate() {
        let (a, b) = (fit(), fit());
        kinds.push(a.model.kind());
        identical += usize::from(a.to_bytes() == b.to_bytes());
        let path = dir.path().join(format!("m{i}.ckpt"));
        a.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        let p0 = a.model.potential_outcomes(&rows).unwrap();
        let p1 = loaded.model.potential_outcomes(&rows).unwrap();
        let same = |u: &[f64], v: &[f64]| u.iter().zip(v).all(|(x, y)| x.to_bits() == y.to_bits());
        exact += usize::from(same(&p0.y0, &p1.y0) && same(&p0.y1, &p1.y1));
    }
    report(
        9,
        identical == fits.len() && exact == fits.len(),
        format!("{kinds:?}: repeated runs byte-identical {identical}/3, reloaded predictions bit-identical {exact}/3 on 100 rows"),
    );
}

// ---------------------------------------------------------------- overlap

#[test]
fn c10_overlap_guarantee() {
    let mut count = 0usize;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (seed, bias) in [(0u64, 0.0), (1, 2.0), (2, 5.0), (3, 20.0), (4, 1e6)] {
        let (ds, truth) = generate(&DgpConfig {
            n: 200_000,
            d: 10,
            bias_strength: bias,
            seed,
            ..DgpConfig::default()
        })
        .unwrap();
        for i in 0..ds.n() {
            let p = truth.propensity(ds.x.row(i));
            lo = lo.min(p);
            hi = hi.max(p);
            count += 1;
        }
    }
    let (a, b) = PROPENSITY_CLIP;
    report(
        10,
        count == 1_000_000 && lo >= a && hi <= b && a == 0.05 && b == 0.95,
        format!("{count} propensities in [{lo}, {hi}]"),
    );
}
