use adbcr::autodiff::Tensor;
use adbcr::baselines::{default_alpha_grid, lasso_select_alpha, LassoVariant};
use adbcr::data::{generate, load_csv, save_csv, CsvSchema, DgpConfig, DgpTruth, DEFAULT_FRACTIONS};
use adbcr::evaluation::{evaluate, ReportMeta, Sample};
use adbcr::rng::{stream, Stream};
use adbcr::{train, CateModel, Checkpoint, Dataset, Mode, Split, TrainConfig};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

fn dataset(seed: u64, n: usize) -> Dataset {
    let (mut ds, _) = generate(&DgpConfig {
        n,
        d: 5,
        seed,
        ..DgpConfig::default()
    })
    .unwrap();
    ds.split(DEFAULT_FRACTIONS, seed).unwrap();
    ds
}

#[test]
fn pure_noise_selects_the_strongest_penalty() {
    let grid = default_alpha_grid();
    let largest = grid.iter().cloned().fold(f64::MIN, f64::max);
    let mut hits = 0;
    for seed in 0..10 {
        let mut rng = stream(seed, Stream::Custom(77));
        let n = 300;
        let x = Tensor::new(n, 6, (0..n * 6).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap();
        let t = (0..n).map(|_| u8::from(rng.random::<bool>())).collect();
        let y = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut ds = Dataset::new(x, t, y).unwrap();
        ds.split(DEFAULT_FRACTIONS, seed).unwrap();
        let alpha = lasso_select_alpha(&ds, LassoVariant::PerTreatment, &grid, seed).unwrap();
        hits += usize::from(alpha == largest);
    }
    assert!(hits >= 7, "largest alpha chosen in {hits}/10 seeds");
}

#[test]
fn csv_round_trip_keeps_everything() {
    let dir = tempfile::tempdir().unwrap();
    let mut ds = dataset(3, 120);
    let test = ds.indices(Split::Test);
    ds.strip_outcomes(&test).unwrap();
    let path = dir.path().join("d.csv");
    save_csv(&ds, &path).unwrap();
    let back = load_csv(&path, &CsvSchema::default()).unwrap();
    assert_eq!(back, ds);
    assert_eq!(back.true_cate(), ds.true_cate());
}

#[test]
fn sidecar_reproduces_the_generator() {
    let cfg = DgpConfig {
        n: 80,
        d: 4,
        seed: 12,
        ..DgpConfig::default()
    };
    let (ds, truth) = generate(&cfg).unwrap();
    let parsed = DgpTruth::from_sidecar(&truth.to_sidecar()).unwrap();
    assert_eq!(parsed, truth);
    let mu0 = ds.mu0.as_ref().unwrap();
    let mu1 = ds.mu1.as_ref().unwrap();
    for i in 0..ds.n() {
        let x = ds.x.row(i);
        assert!((parsed.mu0(x) - mu0[i]).abs() < 1e-9);
        assert!((parsed.mu0(x) + parsed.effect(x) - mu1[i]).abs() < 1e-9);
    }
}

#[test]
fn trained_model_survives_a_checkpoint_file() {
    let ds = dataset(5, 300);
    let cfg = TrainConfig {
        shared_layers: vec![10],
        head_layers: vec![6],
        batch_size: 50,
        max_epochs: 8,
        mode: Mode::Uadbcr,
        seed: 2,
        ..TrainConfig::default()
    };
    let result = train(&ds, &cfg).unwrap();
    assert!(result.best_epoch >= 1 && result.best_epoch <= result.epochs_run());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let ckpt = Checkpoint {
        model: result.model.clone(),
        fingerprint: cfg.fingerprint(),
        criterion: result.best_value,
    };
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.fingerprint, cfg.fingerprint());
    assert_eq!(loaded.criterion.to_bits(), result.best_value.to_bits());
    let meta = ReportMeta::default();
    for sample in [Sample::Within, Sample::OutOfSample] {
        let a = evaluate(&result.model, &ds, sample, &meta).unwrap();
        let b = evaluate(&loaded.model, &ds, sample, &meta).unwrap();
        assert_eq!(a, b);
    }
    assert_eq!(loaded.model.input_dim(), ds.dim());
}

#[test]
fn every_split_holds_both_arms() {
    for seed in 0..20 {
        let ds = dataset(seed, 60);
        for split in [Split::Train, Split::Validation, Split::Test] {
            let c = ds.arm_counts(&ds.indices(split));
            assert!(c[0] > 0 && c[1] > 0, "seed {seed} {split}: {c:?}");
        }
    }
}
