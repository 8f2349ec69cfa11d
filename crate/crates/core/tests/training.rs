use persearch_core::data::{gen_dataset, Dataset, DatasetSpec, DetectionNoise};
use persearch_core::eval::{evaluate, gallery_sweep, EvalConfig};
use persearch_core::harness::{
    extract_features, summarize, train, train_and_evaluate, EvalSetup, LossKind, TrainConfig,
};
use persearch_core::model::Encoder;

fn tiny_dataset() -> Dataset {
    gen_dataset(&DatasetSpec {
        n_identities: 30,
        n_query_identities: 8,
        n_gallery_only_identities: 4,
        n_unlabeled_distractors: 20,
        n_test_distractors: 20,
        n_scenes: 16,
        n_gallery_scenes: 20,
        ..DatasetSpec::default()
    })
    .unwrap()
}

fn tiny_config() -> TrainConfig {
    let mut c = TrainConfig::desk();
    c.epochs = 2;
    c.batch_size = 4;
    c.labeled_queue = 16;
    c.unlabeled_queue = 16;
    c.schedule.warmup_iters = 2;
    c.schedule.milestones = vec![1];
    c.schedule.factors = vec![0.1];
    c
}

fn tiny_setup() -> EvalSetup {
    EvalSetup {
        protocol: EvalConfig {
            gallery_sizes: vec![5, 10, 20],
            ..EvalConfig::desk()
        },
        ..EvalSetup::default()
    }
}

#[test]
fn momentum_one_freezes_the_average() {
    let ds = tiny_dataset();
    let cfg = TrainConfig {
        momentum: 1.0,
        ..tiny_config()
    };
    let (ck, record) = train(&cfg, &ds).unwrap();
    assert_eq!(record.iterations, 8);
    let init = Encoder::new(cfg.encoder.clone())
        .unwrap()
        .init_params(cfg.seed);
    assert_eq!(ck.state.average(), &init);
    assert_ne!(ck.state.online(), &init);
}

#[test]
fn baseline_runs_without_unlabeled_queue() {
    let ds = tiny_dataset();
    let cfg = TrainConfig {
        loss: LossKind::Oim,
        labeled_queue: 0,
        unlabeled_queue: 0,
        ..tiny_config()
    };
    let (ck, record) = train_and_evaluate(&cfg, &ds, &tiny_setup()).unwrap();
    assert!(ck.table.as_ref().is_some_and(|t| !t.is_empty()));
    assert!(ck.bank.is_empty());
    assert!(record.losses.iter().all(|l| l.is_finite()));
    assert_eq!(record.reports.len(), 3);
}

#[test]
fn runs_are_deterministic_and_seed_sensitive() {
    let ds = tiny_dataset();
    let cfg = tiny_config();
    let a = train_and_evaluate(&cfg, &ds, &tiny_setup()).unwrap();
    let b = train_and_evaluate(&cfg, &ds, &tiny_setup()).unwrap();
    assert_eq!(a, b);
    let c = train(&TrainConfig { seed: 1, ..cfg }, &ds).unwrap();
    assert_ne!(a.0.state.online(), c.0.state.online());
}

#[test]
fn full_size_sweep_equals_plain_evaluation() {
    let ds = tiny_dataset();
    let cfg = tiny_config();
    let (ck, _) = train(&cfg, &ds).unwrap();
    let encoder = Encoder::new(ck.encoder.clone()).unwrap();
    let (q, g, gt) =
        extract_features(&encoder, ck.state.online(), &ds, &DetectionNoise::default()).unwrap();
    let protocol = EvalConfig::desk();
    let full = evaluate(&q, &g, &gt, &protocol).unwrap();
    let swept = gallery_sweep(&q, &g, &gt, &[g.len()], 9, &protocol).unwrap();
    assert_eq!(swept[0].map, full.map);
    assert_eq!(swept[0].per_query_ap, full.per_query_ap);
}

#[test]
fn summary_tables_have_expected_shape() {
    let ds = tiny_dataset();
    let setup = tiny_setup();
    let records: Vec<_> = [0.0, 0.9]
        .into_iter()
        .map(|m| {
            train_and_evaluate(
                &TrainConfig {
                    momentum: m,
                    ..tiny_config()
                },
                &ds,
                &setup,
            )
            .unwrap()
            .1
        })
        .collect();
    let summary = summarize(&records[..1]);
    assert_eq!(summary.table("runs").unwrap().rows.len(), 1);
    assert_eq!(summary.table("gallery_sweep").unwrap().rows.len(), 3);

    let summary = summarize(&records);
    let momentum = summary.table("momentum").unwrap();
    assert_eq!(momentum.columns.len(), 3);
    assert!(summary.to_markdown().contains("### momentum"));
}
