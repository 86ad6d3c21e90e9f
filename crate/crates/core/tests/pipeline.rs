use imbal_core::aggregate::{build_feature_space, AggregationConfig};
use imbal_core::classifier::{predict, train, Channel, Mode, TrainConfig};
use imbal_core::graph::{Dataset, LabelSet, Split};
use imbal_core::harness::{
    generate_synth, run_on, run_repetition, stratified_split, subsample_to_ratio, sweep_lambda, ExperimentConfig,
    Method, SplitFractions, SynthSpec,
};
use imbal_core::io::{load_dataset, write_edges, write_features_csv, write_labels};
use imbal_core::metrics::evaluate;
use imbal_core::oversample::{oversample_channels, OversampleConfig};

fn quick_train() -> TrainConfig {
    TrainConfig {
        hidden: 16,
        max_epochs: 60,
        lr: 1e-2,
        ..Default::default()
    }
}

fn quick(method: Method) -> ExperimentConfig {
    ExperimentConfig {
        method,
        train: quick_train(),
        repetitions: 2,
        ..Default::default()
    }
}

fn synth(rho: f64, n: usize) -> Dataset {
    generate_synth(
        &SynthSpec {
            num_nodes: n,
            rho,
            ..Default::default()
        },
        0,
    )
    .unwrap()
}

#[test]
fn balanced_input_makes_oversampling_a_no_op() {
    let ds = synth(1.0, 200);
    let labels = stratified_split(&ds.labels, &SplitFractions::default(), 3).unwrap();
    let ds = ds.with_labels(labels).unwrap();
    assert_eq!(ds.labels.train_counts()[0], ds.labels.train_counts()[1]);

    let agg = AggregationConfig::default();
    let xs = build_feature_space(&ds, &agg).unwrap();
    let (xt, lt, plan) = oversample_channels(&xs, &ds.labels, &OversampleConfig::default(), 3).unwrap();
    assert!(plan.is_empty());
    assert_eq!(xt, xs);

    let cfg = TrainConfig {
        lambda: 1.0,
        seed: 3,
        ..quick_train()
    };
    let (via_pipeline, _) = train(Mode::OsMlp, &[Channel::plain(&xt[0])], &lt, &cfg).unwrap();
    let (direct, _) = train(Mode::OsMlp, &[Channel::plain(&xs[0])], &ds.labels, &cfg).unwrap();
    assert_eq!(via_pipeline, direct);

    let exp = ExperimentConfig {
        train: TrainConfig { lambda: 1.0, ..quick_train() },
        ..quick(Method::OsGnn)
    };
    let rep = run_repetition(&synth(1.0, 200), &exp, 3).unwrap();
    let preds = predict(&direct, &[Channel::plain(&xs[0])]).unwrap();
    let direct_metrics = evaluate(&preds, &ds.labels, Split::Test, rep.minority_class).unwrap();
    assert_eq!(rep.test, direct_metrics);
    assert_eq!(rep.synthetic_nodes, 0);
}

#[test]
fn synthetic_rows_never_reach_evaluation() {
    let ds = synth(0.2, 300);
    let xs = build_feature_space(&ds, &AggregationConfig::default()).unwrap();
    let (xt, lt, plan) = oversample_channels(&xs, &ds.labels, &OversampleConfig::default(), 0).unwrap();
    assert!(!plan.is_empty());
    let (model, _) = train(Mode::OsMlp, &[Channel::plain(&xt[0])], &lt, &quick_train()).unwrap();
    // scoring the augmented prediction vector against the augmented labels
    // must equal scoring the original rows against the original labels
    let all = predict(&model, &[Channel::plain(&xt[0])]).unwrap();
    let real = predict(&model, &[Channel::plain(&xs[0])]).unwrap();
    assert_eq!(&all[..ds.num_nodes()], &real[..]);
    for split in [Split::Train, Split::Val, Split::Test] {
        let a = evaluate(&all, &lt, split, 1).unwrap();
        let b = evaluate(&real, &ds.labels, split, 1).unwrap();
        assert_eq!(a, b, "{split}");
    }
}

#[test]
fn subsampled_dataset_runs_end_to_end() {
    let ds = synth(0.3, 400);
    let small = subsample_to_ratio(&ds, 0.1, 5).unwrap();
    let counts = small.labels.labeled_counts();
    assert!(counts[1] as f64 / counts[0] as f64 <= 0.1 + 1e-12);
    let t = run_on(&small, &quick(Method::OsGnn)).unwrap();
    assert_eq!(t.repetitions.len(), 2);
    assert!(t.repetitions.iter().all(|r| r.synthetic_nodes > 0));
}

#[test]
fn multi_relation_files_run_through_every_method() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth(0.3, 150);
    // split the edges over two relations by parity of the smaller endpoint
    let edges: Vec<_> = ds.graph.edges().into_iter().filter(|e| e.0 < e.1).map(|(s, d, _)| (s, d, s % 2)).collect();
    let graph = imbal_core::SparseGraph::build(ds.num_nodes(), &edges, true, Some(2)).unwrap();
    let ids: Vec<String> = (0..ds.num_nodes()).map(|i| format!("user{i}")).collect();
    let p = |n: &str| dir.path().join(n);
    write_edges(&graph, &ids, std::fs::File::create(p("e.tsv")).unwrap()).unwrap();
    write_features_csv(&ids, &ds.features, std::fs::File::create(p("f.csv")).unwrap()).unwrap();
    write_labels(&ds.labels, &ids, std::fs::File::create(p("l.csv")).unwrap()).unwrap();

    let loaded = load_dataset(&p("e.tsv"), &p("f.csv"), &p("l.csv"), true).unwrap();
    assert_eq!(loaded.dataset.graph, graph);
    assert_eq!(loaded.dataset.labels, ds.labels);
    assert_eq!(build_feature_space(&loaded.dataset, &AggregationConfig::default()).unwrap().len(), 2);
    for method in [Method::OsGnn, Method::Sgc, Method::VanillaGcn] {
        let t = run_on(&loaded.dataset, &quick(method)).unwrap();
        assert_eq!(t.repetitions.len(), 2, "{method:?}");
    }
}

#[test]
fn lambda_sweep_reports_each_value() {
    let ds = synth(0.1, 300);
    let rows = sweep_lambda(&ds, &quick(Method::OsGnn), &[0.0, 0.5, 1.0]).unwrap();
    assert_eq!(rows.iter().map(|r| r.lambda).collect::<Vec<_>>(), vec![0.0, 0.5, 1.0]);
    let csv = imbal_core::harness::sweep_csv(&rows);
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.lines().nth(2).unwrap().starts_with("0.5,"));
}

#[test]
fn unlabeled_nodes_only_feed_propagation() {
    let ds = synth(0.3, 200);
    let labels: Vec<Option<usize>> = (0..200).map(|i| if i % 7 == 0 { None } else { ds.labels.label(i) }).collect();
    let split: Vec<Split> = (0..200).map(|i| if i % 7 == 0 { Split::Unlabeled } else { Split::Test }).collect();
    let ds = ds.with_labels(LabelSet::new(2, labels, split).unwrap()).unwrap();
    let resplit = stratified_split(&ds.labels, &SplitFractions::default(), 0).unwrap();
    let labeled = resplit.real_in(Split::Train).len() + resplit.real_in(Split::Val).len() + resplit.real_in(Split::Test).len();
    assert_eq!(labeled, (0..200).filter(|i| i % 7 != 0).count());
    let t = run_on(&ds, &quick(Method::OsGnn)).unwrap();
    let tested: u64 = t.repetitions[0].test.confusion.counts.iter().flatten().sum();
    assert_eq!(tested as usize, resplit.real_in(Split::Test).len());
}
