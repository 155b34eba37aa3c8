//! Directional behavior on planted-community data. This is a stand-in for
//! the full-size experiments: the trends should point the same way, the
//! magnitudes are not comparable.

mod common;

use cdcgcn::community::louvain;
use cdcgcn::config::TrainingConfig;
use cdcgcn::dataset::{split_dataset, SplitRatios};
use cdcgcn::experiment::{base_scorer, evaluate_cdcgcn, relative_change, sweep, TestSets};
use cdcgcn::synthetic::{planted, PlantedConfig};
use cdcgcn::train::{pretrain, train_cdcgcn};

fn setup() -> (cdcgcn::dataset::InteractionDataset, cdcgcn::community::CommunityAssignment, TrainingConfig) {
    let raw = planted(&PlantedConfig::default());
    let ds = split_dataset(raw, SplitRatios::default(), 42).unwrap();
    let a = louvain(&ds, 42, 1.0);
    let cfg = TrainingConfig {
        dim: 32,
        hidden: 32,
        global_dim: 8,
        learning_rate: 1e-2,
        batch_size: 256,
        epochs: 40,
        eval_every: 5,
        patience: 4,
        alpha: 0.8,
        beta: 1.0,
        ..Default::default()
    };
    (ds, a, cfg)
}

#[test]
fn debiasing_lowers_the_bubble_index() {
    let (ds, a, cfg) = setup();
    let tests = TestSets::new(&ds, &a, cfg.seed);
    let (pre, _) = pretrain::<f32>(&ds, &cfg, Some(&a), &mut |_| {}).unwrap();
    let base = tests.evaluate(&base_scorer(&pre, &ds), &ds, &a, &[20]);
    let (cd, _) = train_cdcgcn::<f32>(&ds, &a, Some(&pre), &cfg, &mut |_| {}).unwrap();
    let ours = evaluate_cdcgcn(&cd, Some(&pre), &ds, &a, &tests, &[20]);
    let (b, o) = (base.original.at(20).unwrap(), ours.original.at(20).unwrap());
    assert!(relative_change(o.ilfbi, b.ilfbi) < 0.0, "base {b:?}, debiased {o:?}");
}

#[test]
fn stronger_community_negatives_lower_the_bubble_index() {
    let (ds, a, cfg) = setup();
    let (pre, _) = pretrain::<f32>(&ds, &cfg, Some(&a), &mut |_| {}).unwrap();
    let points = sweep(&ds, &a, Some(&pre), &cfg, &[(0.0, 1.0), (1.0, 1.0)], &[20], &mut |_| {}).unwrap();
    assert!(points[1].ilfbi20 < points[0].ilfbi20, "{points:?}");
}
