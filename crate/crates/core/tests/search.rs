use ibm2_core::feature_store::FeatureDataset;
use ibm2_core::linear_trainer::{init_head, TrainConfig};
use ibm2_core::margin_search::{search_epsilon, train_and_eval, SearchConfig};
use ibm2_core::noise::{RangeVector, VirtualSetSpec};

fn two_class_line() -> FeatureDataset {
    FeatureDataset::from_rows(&[vec![1.0], vec![-1.0]], vec![0, 1], 2).unwrap()
}

fn trainer() -> TrainConfig {
    TrainConfig {
        init_lr: 1.0,
        batch_size: 64,
        epochs: 30,
        seed: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn overlapping_shells_counted_by_brute_force() {
    let ds = two_class_line();
    let range = RangeVector::ones(1);
    let mut head = init_head(1, 2, 1);
    let acc = train_and_eval(&mut head, &ds, 10.0, &range, 100, 9, &trainer()).unwrap();
    let spec = VirtualSetSpec::new(&ds, 10.0, 100, &range, 9).unwrap();
    let correct = spec
        .iter()
        .filter(|(x, label)| head.predict(x).unwrap() == *label)
        .count();
    assert_eq!(acc, correct as f64 / 200.0);
    assert!(acc < 1.0);
}

#[test]
fn radius_matches_grid_search_with_same_trainer() {
    let ds = two_class_line();
    let range = RangeVector::ones(1);
    let threshold = 0.999;
    let search = SearchConfig {
        t_init: threshold,
        replicas: 100,
        epochs: 30,
        seed: 12,
        ..SearchConfig::default()
    };
    let base = TrainConfig {
        batch_size: 64,
        ..TrainConfig::default()
    };
    let trace = search_epsilon(&ds, &range, threshold, &search, &base).unwrap();

    // cold-started probe at every grid point, same noise and recipe
    let grid_step = 0.05;
    let cfg = search.train_config(&base);
    let best = (1..=200)
        .map(|k| k as f64 * grid_step)
        .filter(|&eps| {
            let mut head = init_head(1, 2, 3);
            let acc = train_and_eval(&mut head, &ds, eps, &range, 100, search.noise_seed(), &cfg)
                .unwrap();
            acc > threshold
        })
        .fold(0.0, f64::max);
    assert!(
        (trace.eps_hat - best).abs() <= search.tol + grid_step,
        "search {} grid {best}",
        trace.eps_hat
    );
}
