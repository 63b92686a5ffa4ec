use std::path::PathBuf;

use lmdl::data::{generate_synthetic, load_csv, make_folds, standardize, ColumnRef, Dataset, SyntheticKind};
use lmdl::eval::{loo_accuracy, predict_all, projected_view};
use lmdl::kernel::{to_kernel_coordinates, KernelDescriptor};
use lmdl::trainer::{fit_from, initialize, train, untrained, Mode, Model, TrainConfig};
use lmdl::{FactorMetric, Kernel, PrototypeSet};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn iris() -> Dataset {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/iris.csv");
    load_csv(path, &ColumnRef::Name("class".into()), &[]).unwrap()
}

#[test]
fn permuted_labels_give_chance_accuracy() {
    let mut total = 0.0;
    let runs = 20;
    for seed in 0..runs {
        let ds = generate_synthetic(SyntheticKind::TwoGaussians, 200, 1.0, seed).unwrap();
        let mut labels = ds.labels().to_vec();
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed + 100));
        let shuffled = Dataset::new(ds.features().clone(), labels).unwrap();
        let model = untrained(&shuffled, &TrainConfig { seed, ..Default::default() }).unwrap();
        total += loo_accuracy(&shuffled, &model).unwrap();
    }
    let mean = total / runs as f64;
    assert!((mean - 0.5).abs() <= 0.1, "{mean}");
}

#[test]
fn helix_training_does_not_lose_accuracy() {
    let ds = generate_synthetic(SyntheticKind::Helix, 300, 0.08, 1).unwrap();
    let cfg = TrainConfig::default();
    let before = loo_accuracy(&ds, &untrained(&ds, &cfg).unwrap()).unwrap();
    let after = loo_accuracy(&ds, &train(&ds, &cfg).unwrap()).unwrap();
    assert!(after >= before, "{before} -> {after}");
}

/// Linear-kernel model whose factors start at `B = X^+ W` for the linear
/// model's starting factors `W`, so both begin as the same classifier.
fn matched_pair(train_ds: &Dataset, cfg: &TrainConfig) -> (Model, Model, f64) {
    let (sd, rec) = standardize(train_ds).unwrap();
    let x = sd.features().clone();
    let init = initialize(&sd, cfg).unwrap();
    let pinv = x.transpose() * (&x * x.transpose()).try_inverse().unwrap();
    let factors = init.metrics().iter().map(|m| FactorMetric::new(&pinv * m.factor()).unwrap()).collect();
    let kinit = PrototypeSet::new(x.transpose() * init.positions(), init.labels().to_vec(), factors).unwrap();
    let kd = KernelDescriptor::new(Kernel::Linear, x.clone()).unwrap();
    let kdata = sd.with_features(to_kernel_coordinates(&x, &kd).unwrap().coords).unwrap();

    let (lin_ps, lin_sum) = fit_from(&sd, cfg, init).unwrap();
    let (ker_ps, ker_sum) = fit_from(&kdata, cfg, kinit).unwrap();
    let gap = (lin_sum.initial_objective - ker_sum.initial_objective).abs();
    let model = |prototypes, mode, kernel, summary| Model {
        prototypes,
        mode,
        kernel,
        scaling: Some(rec.clone()),
        beta: cfg.beta,
        input_dim: train_ds.dim(),
        class_names: train_ds.class_names().to_vec(),
        summary,
    };
    (model(lin_ps, Mode::Linear, None, lin_sum), model(ker_ps, Mode::Kernel, Some(kd), ker_sum), gap)
}

#[test]
fn linear_kernel_tracks_linear_mode() {
    let ds = iris();
    let plan = &make_folds(&ds, 5, 1, 4).unwrap()[0];
    let mut agree = 0;
    let mut total = 0;
    for f in 0..plan.fold_count {
        let (tr, te) = plan.split(f);
        let (train_ds, test_ds) = (ds.select(&tr).unwrap(), ds.select(&te).unwrap());
        let cfg = TrainConfig { seed: f as u64, ..Default::default() };
        let (lin, ker, gap) = matched_pair(&train_ds, &cfg);
        assert!(gap < 1e-9, "starting objectives differ by {gap}");
        let a = predict_all(&test_ds, &lin).unwrap();
        let b = predict_all(&test_ds, &ker).unwrap();
        agree += a.iter().zip(&b).filter(|(x, y)| x == y).count();
        total += a.len();
    }
    let rate = agree as f64 / total as f64;
    assert!(rate >= 0.95, "{rate}");
}

#[test]
fn projection_of_a_prototype_is_the_origin() {
    let ds = iris();
    let model = train(&ds, &TrainConfig { rank: Some(2), standardize: false, ..Default::default() }).unwrap();
    let ps = &model.prototypes;
    for s in 0..ps.len() {
        let z = ps.project(ps.position(s), s).unwrap();
        assert_eq!(z.as_slice(), [0.0, 0.0]);
    }
    let (view, nearest) = projected_view(&ds, &model).unwrap();
    assert_eq!(view.shape(), (2, 150));
    for (i, &s) in nearest.iter().enumerate() {
        let z = ps.project(ds.point(i), s).unwrap();
        assert_eq!(view.column(i).as_slice(), z.as_slice());
    }
}
