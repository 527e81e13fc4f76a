use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use kgh_ffi::*;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn cstring(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(kgh_last_error()) }.to_string_lossy().into_owned()
}

fn load_graph() -> *mut KghGraph {
    let path = cstring(&data("synthetic_1k.tsv"));
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { kgh_graph_load(path.as_ptr(), false, &mut g) }, KghStatus::Ok);
    assert!(!g.is_null());
    g
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(kgh_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn graph_counts_and_labels() {
    let g = load_graph();
    unsafe {
        let (mut n, mut m) = (0usize, 0usize);
        assert_eq!(kgh_graph_num_entities(g, &mut n), KghStatus::Ok);
        assert_eq!(kgh_graph_num_triplets(g, &mut m), KghStatus::Ok);
        assert_eq!((n, m), (1000, 3000));

        let mut len = 0usize;
        assert_eq!(
            kgh_graph_entity_label(g, 0, ptr::null_mut(), 0, &mut len),
            KghStatus::BufferTooSmall
        );
        assert!(len > 0);
        let mut buf = vec![0 as std::ffi::c_char; len + 1];
        assert_eq!(kgh_graph_entity_label(g, 0, buf.as_mut_ptr(), buf.len(), &mut len), KghStatus::Ok);
        let label = CStr::from_ptr(buf.as_ptr()).to_owned();
        assert_eq!(label.as_bytes().len(), len);

        let mut id = u32::MAX;
        assert_eq!(kgh_graph_entity_by_label(g, label.as_ptr(), &mut id), KghStatus::Ok);
        assert_eq!(id, 0);
        let missing = CString::new("no such entity").unwrap();
        assert_eq!(kgh_graph_entity_by_label(g, missing.as_ptr(), &mut id), KghStatus::NotFound);

        assert_eq!(kgh_graph_entity_label(g, 5000, buf.as_mut_ptr(), buf.len(), &mut len), KghStatus::NotFound);
        kgh_graph_free(g);
    }
}

#[test]
fn null_and_bad_inputs_report_errors() {
    unsafe {
        let mut g = ptr::null_mut();
        assert_eq!(kgh_graph_load(ptr::null(), false, &mut g), KghStatus::NullPointer);
        assert!(last_error().contains("path"));

        let missing = CString::new("/nonexistent/graph.tsv").unwrap();
        assert_eq!(kgh_graph_load(missing.as_ptr(), false, &mut g), KghStatus::Io);
        assert!(!last_error().is_empty());
        assert!(g.is_null());

        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.tsv");
        std::fs::write(&bad, "only\ttwo\n").unwrap();
        let bad = cstring(&bad);
        assert_eq!(kgh_graph_load(bad.as_ptr(), false, &mut g), KghStatus::Parse);

        let mut n = 0usize;
        assert_eq!(kgh_graph_num_entities(ptr::null(), &mut n), KghStatus::NullPointer);
        // freeing null is a no-op
        kgh_graph_free(ptr::null_mut());
        kgh_scores_free(ptr::null_mut());
        kgh_model_free(ptr::null_mut());
    }
}

#[test]
fn planted_scores_homophily_and_baseline() {
    let g = load_graph();
    unsafe {
        let mut s = ptr::null_mut();
        assert_eq!(kgh_planted_scores(g, 0.9, 0.1, 0.05, 0, &mut s), KghStatus::Ok);
        let mut len = 0usize;
        kgh_scores_len(s, &mut len);
        assert_eq!(len, 1000);
        let mut k = -1.0;
        assert_eq!(kgh_scores_get(s, 3, &mut k), KghStatus::Ok);
        assert!((0.0..=1.0).contains(&k));

        let mut h = 0.0;
        assert_eq!(kgh_homophily_mean(g, s, &mut h), KghStatus::Ok);
        let mut b = KghBaseline::default();
        assert_eq!(kgh_baseline(g, s, 100, 2, &mut b), KghStatus::Ok);
        assert_eq!(b.trials, 100);
        assert_eq!(b.true_mean, h);
        assert!(b.z > 0.0 && b.p_two_tailed < 0.01);
        assert!((b.ci99_low - (b.baseline_mean - 2.576 * b.baseline_std)).abs() < 1e-12);

        assert_eq!(kgh_baseline(g, s, 1, 2, &mut b), KghStatus::InvalidArgument);

        let dir = tempfile::tempdir().unwrap();
        let csv = cstring(&dir.path().join("scores.csv"));
        assert_eq!(kgh_scores_save_csv(g, s, csv.as_ptr()), KghStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(kgh_scores_load_csv(csv.as_ptr(), &mut back), KghStatus::Ok);
        let mut k2 = -1.0;
        kgh_scores_get(back, 3, &mut k2);
        assert_eq!(k, k2);

        kgh_scores_free(back);
        kgh_scores_free(s);
        kgh_graph_free(g);
    }
}

#[test]
fn model_round_trip_through_file() {
    use kgh_core::embed::{build_features, HashedProvider};
    use kgh_core::estimator::{predict, train, ModelKind, TrainConfig};
    use kgh_core::oracle::{PlantedOracle, PlantedOracleConfig};

    let graph = kgh_core::KnowledgeGraph::load(&data("synthetic_1k.tsv"), kgh_core::GraphFormat::Tsv).unwrap();
    let oracle = PlantedOracle::new(&graph, &PlantedOracleConfig::two_communities(0.9, 0.1, 0.05, 0)).unwrap();
    let feats = build_features(&graph, &HashedProvider::new(16).unwrap()).unwrap();
    let cfg = TrainConfig { epochs: 20, hidden_dim: 8, ..Default::default() };
    let (model, _) = train(ModelKind::Gnn, &graph, &feats, &oracle.true_scores(&graph), &cfg).unwrap();
    let expected = predict(&model, &graph, &feats, graph.entities()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();

    let g = load_graph();
    unsafe {
        let mut m = ptr::null_mut();
        let p = cstring(&path);
        assert_eq!(kgh_model_load(p.as_ptr(), &mut m), KghStatus::Ok);
        let mut preds = ptr::null_mut();
        assert_eq!(kgh_model_predict_hashed(m, g, 16, &mut preds), KghStatus::Ok);
        for v in [0u32, 17, 999] {
            let mut x = 0.0;
            kgh_scores_get(preds, v, &mut x);
            assert_eq!(x, expected.get(kgh_core::EntityId(v)).unwrap());
        }
        kgh_scores_free(preds);

        // wrong feature width is rejected, not a crash
        let mut bad = ptr::null_mut();
        assert_ne!(kgh_model_predict_hashed(m, g, 32, &mut bad), KghStatus::Ok);
        assert!(bad.is_null());
        kgh_model_free(m);
        kgh_graph_free(g);
    }
}

#[test]
fn pipeline_runs_into_requested_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.toml");
    std::fs::write(
        &cfg_path,
        format!(
            "[dataset]\npath = {:?}\ntemplates = {:?}\n[retrieval]\nn_per_hop = 5\n",
            data("synthetic_1k.tsv"),
            data("synthetic_1k_templates.tsv")
        ),
    )
    .unwrap();
    let out = dir.path().join("out");
    let (c, o) = (cstring(&cfg_path), cstring(&out));
    assert_eq!(unsafe { kgh_run_pipeline(c.as_ptr(), o.as_ptr()) }, KghStatus::Ok, "{}", last_error());
    assert!(out.join("manifest.json").exists());

    let missing = CString::new("/nonexistent/run.toml").unwrap();
    assert_eq!(unsafe { kgh_run_pipeline(missing.as_ptr(), ptr::null()) }, KghStatus::Io);
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/kgh.h")).unwrap();
    for name in [
        "kgh_version",
        "kgh_last_error",
        "kgh_graph_load",
        "kgh_graph_free",
        "kgh_graph_num_entities",
        "kgh_graph_num_triplets",
        "kgh_graph_entity_label",
        "kgh_graph_entity_by_label",
        "kgh_planted_scores",
        "kgh_scores_load_csv",
        "kgh_scores_save_csv",
        "kgh_scores_free",
        "kgh_scores_len",
        "kgh_scores_get",
        "kgh_homophily_mean",
        "kgh_baseline",
        "kgh_model_load",
        "kgh_model_free",
        "kgh_model_predict_hashed",
        "kgh_run_pipeline",
        "KGH_STATUS_PANIC",
        "typedef struct KghGraph KghGraph",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}
