mod common;

use kgh_core::embed::{build_features, FeatureMatrix, HashedProvider};
use kgh_core::estimator::{gradient_check, predict, train, ModelKind, RegressorModel, TinyInstance, TrainConfig};
use kgh_core::oracle::{PlantedOracle, PlantedOracleConfig};
use kgh_core::synth::{planted_graph, PlantedGraphConfig};
use kgh_core::{EntityId, EntityScoreTable, Error};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn gradients_match_finite_differences() {
    for kind in [ModelKind::Gnn, ModelKind::Mlp] {
        for seed in 0..5 {
            let err = gradient_check(&TinyInstance::sample(kind, seed), 1e-5).unwrap();
            assert!(err < 1e-4, "{kind} seed {seed}: {err}");
        }
    }
}

#[test]
fn small_learning_rate_never_increases_loss() {
    for kind in [ModelKind::Gnn, ModelKind::Mlp] {
        for seed in 0..5u64 {
            let g = common::random_graph(seed, 10, 15);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let features = FeatureMatrix { rows: Array2::from_shape_fn((g.num_entities(), 6), |_| rng.gen_range(-1.0..1.0)) };
            let mut targets = EntityScoreTable::new();
            for v in g.entities() {
                targets.insert(v, rng.gen_range(0.0..1.0), 1);
            }
            let cfg = TrainConfig { learning_rate: 1e-3, epochs: 200, seed, hidden_dim: 8, ..Default::default() };
            let (_, report) = train(kind, &g, &features, &targets, &cfg).unwrap();
            assert_eq!(report.loss_curve.len(), 200);
            for w in report.loss_curve.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{kind} seed {seed}: {} -> {}", w[0], w[1]);
            }
        }
    }
}

#[test]
fn training_is_seed_deterministic_and_outputs_lie_in_unit_interval() {
    let g = common::random_graph(1, 30, 60);
    let f = build_features(&g, &HashedProvider::new(16).unwrap()).unwrap();
    let mut t = EntityScoreTable::new();
    for v in g.entities().step_by(2) {
        t.insert(v, (v.0 % 3) as f64 / 2.0, 1);
    }
    let cfg = TrainConfig { epochs: 50, ..Default::default() };
    let (a, ra) = train(ModelKind::Gnn, &g, &f, &t, &cfg).unwrap();
    let (b, rb) = train(ModelKind::Gnn, &g, &f, &t, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
    let p = predict(&a, &g, &f, g.entities()).unwrap();
    assert_eq!(p.len(), g.num_entities());
    assert!(p.iter().all(|(_, y)| y > 0.0 && y < 1.0));
}

#[test]
fn model_file_round_trip_preserves_predictions() {
    let g = common::random_graph(2, 20, 40);
    let f = build_features(&g, &HashedProvider::new(8).unwrap()).unwrap();
    let mut t = EntityScoreTable::new();
    t.insert(EntityId(0), 0.2, 1);
    t.insert(EntityId(1), 0.9, 1);
    for kind in [ModelKind::Gnn, ModelKind::Mlp] {
        let (m, _) = train(kind, &g, &f, &t, &TrainConfig { epochs: 10, ..Default::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        m.save(&p).unwrap();
        let back = RegressorModel::load(&p).unwrap();
        assert_eq!(back.kind, kind);
        assert_eq!(m.forward(&g, &f).unwrap(), back.forward(&g, &f).unwrap());
    }
}

#[test]
fn bad_inputs_are_rejected() {
    let g = common::random_graph(3, 10, 20);
    let f = build_features(&g, &HashedProvider::new(8).unwrap()).unwrap();
    let empty = EntityScoreTable::new();
    assert!(train(ModelKind::Gnn, &g, &f, &empty, &TrainConfig::default()).is_err());

    let mut t = EntityScoreTable::new();
    t.insert(EntityId(0), 0.5, 1);
    assert!(train(ModelKind::Gnn, &g, &f, &t, &TrainConfig { epochs: 0, ..Default::default() }).is_err());

    let other = common::random_graph(3, 12, 20);
    let wrong = build_features(&other, &HashedProvider::new(8).unwrap()).unwrap();
    assert!(train(ModelKind::Gnn, &g, &wrong, &t, &TrainConfig::default()).is_err());

    let mut bad = EntityScoreTable::new();
    bad.insert(EntityId(0), f64::NAN, 1);
    assert!(train(ModelKind::Mlp, &g, &f, &bad, &TrainConfig::default()).is_err());

    let huge = TrainConfig { learning_rate: 1e300, epochs: 5, ..Default::default() };
    match train(ModelKind::Mlp, &g, &f, &t, &huge) {
        Err(Error::Divergence { .. }) | Ok(_) => {}
        Err(e) => panic!("unexpected error {e}"),
    }
}

#[test]
fn message_passing_generalizes_better_than_mlp() {
    let mut wins = 0;
    for seed in 0..3u64 {
        let p = planted_graph(&PlantedGraphConfig { n_entities: 1000, seed, ..Default::default() }).unwrap();
        let g = &p.graph;
        let oracle = PlantedOracle::new(g, &PlantedOracleConfig::two_communities(0.9, 0.1, 0.05, seed)).unwrap();
        let truth = oracle.true_scores(g);
        let mut ids: Vec<EntityId> = g.entities().collect();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (tr, te) = ids.split_at(300);
        let mut train_set = EntityScoreTable::new();
        for &v in tr {
            train_set.insert(v, truth.get(v).unwrap(), 1);
        }
        let f = build_features(g, &HashedProvider::new(64).unwrap()).unwrap();
        let mae = |kind| {
            let (m, _) = train(kind, g, &f, &train_set, &TrainConfig { seed, ..Default::default() }).unwrap();
            let pred = predict(&m, g, &f, te.iter().copied()).unwrap();
            te.iter().map(|&v| (pred.get(v).unwrap() - truth.get(v).unwrap()).abs()).sum::<f64>() / te.len() as f64
        };
        let (gnn, mlp) = (mae(ModelKind::Gnn), mae(ModelKind::Mlp));
        eprintln!("seed {seed}: gnn MAE {gnn:.4}, mlp MAE {mlp:.4}");
        wins += usize::from(gnn < mlp);
    }
    assert!(wins >= 2);
}
