mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use kgh_core::config::{OracleKind, RunConfig};
use kgh_core::homophily::entity_knowledgeability;
use kgh_core::oracle::{
    parse_label, probe_batch, verbalize, ChatBackend, CommunityAssignment, DateMode, HttpChatBackend, Labeler,
    LlmOracle, OracleConfig, OracleError, PlantedOracle, PlantedOracleConfig, ProbeCache, RelationTemplate,
    TemplateTable, SYSTEM_MESSAGE,
};
use kgh_core::pipeline::{cmd_probe, Workspace};
use kgh_core::synth::{planted_graph, write_planted, PlantedGraphConfig};
use kgh_core::{GraphBuilder, KnowledgeGraph, LabelSource};

/// A minimal chat-completions server: answers "True" when the user message
/// contains `yes_marker`, "False" otherwise, and records every request body.
struct FakeServer {
    url: String,
    requests: Arc<Mutex<Vec<serde_json::Value>>>,
    headers: Arc<Mutex<Vec<String>>>,
}

fn fake_server(yes_marker: &'static str) -> FakeServer {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let requests = Arc::new(Mutex::new(Vec::new()));
    let headers = Arc::new(Mutex::new(Vec::new()));
    let (reqs, hdrs) = (requests.clone(), headers.clone());
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let (reqs, hdrs) = (reqs.clone(), hdrs.clone());
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        return;
                    }
                    let line = line.trim_end().to_string();
                    if line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    hdrs.lock().unwrap().push(line);
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                let req: serde_json::Value = serde_json::from_slice(&body).unwrap();
                let user = req["messages"][1]["content"].as_str().unwrap_or("").to_string();
                reqs.lock().unwrap().push(req);
                let answer = if user.contains(yes_marker) { "True." } else { "False" };
                let resp = serde_json::json!({"choices": [{"message": {"role": "assistant", "content": answer}}]})
                    .to_string();
                let _ = write!(
                    stream,
                    "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                    resp.len(),
                    resp
                );
            });
        }
    });
    FakeServer { url, requests, headers }
}

fn small_graph() -> (KnowledgeGraph, TemplateTable) {
    let mut b = GraphBuilder::new();
    b.triplet("Paris", "capital_of", "France");
    b.triplet("Lyon", "located_in", "France");
    b.triplet("Berlin", "capital_of", "Germany");
    b.triplet("Paris", "capital_of", "France");
    let g = b.build();
    let mut t = TemplateTable::new();
    t.insert(RelationTemplate::new(g.relation_by_label("capital_of").unwrap(), "{SUB} is the capital of {OBJ}.").unwrap());
    t.insert(RelationTemplate::new(g.relation_by_label("located_in").unwrap(), "{SUB} is located in {OBJ}.").unwrap());
    (g, t)
}

#[test]
fn http_backend_sends_system_message_and_zero_temperature() {
    let server = fake_server("Paris");
    let cfg = OracleConfig {
        endpoint: server.url.clone(),
        model_name: "test-model".into(),
        api_key: Some("secret".into()),
        ..Default::default()
    };
    let backend = HttpChatBackend::new(&cfg);
    let text = backend.complete("test-model", SYSTEM_MESSAGE, "Paris is the capital of France.").unwrap();
    assert_eq!(parse_label(&text), Some(1));

    let reqs = server.requests.lock().unwrap();
    assert_eq!(reqs.len(), 1);
    let r = &reqs[0];
    assert_eq!(r["model"], "test-model");
    assert_eq!(r["temperature"], 0.0);
    assert_eq!(r["messages"][0]["role"], "system");
    assert_eq!(r["messages"][0]["content"], SYSTEM_MESSAGE);
    assert_eq!(r["messages"][1]["role"], "user");
    let headers = server.headers.lock().unwrap();
    assert!(headers.iter().any(|h| h == "Authorization: Bearer secret" || h == "authorization: Bearer secret"));
}

#[test]
fn warm_cache_makes_no_upstream_requests() {
    let server = fake_server("capital");
    let (g, templates) = small_graph();
    let dir = tempfile::tempdir().unwrap();
    let cache_path = dir.path().join("cache.jsonl");
    let cfg = OracleConfig {
        endpoint: server.url.clone(),
        parallelism: 3,
        ..Default::default()
    };
    let backend = HttpChatBackend::new(&cfg);
    let all: Vec<usize> = (0..g.num_triplets()).collect();

    let cold = {
        let cache = ProbeCache::open(&cache_path).unwrap();
        let oracle = LlmOracle { cfg: cfg.clone(), backend: &backend, cache: &cache, templates: &templates, date_mode: DateMode::None };
        oracle.label_batch(&g, &all)
    };
    // triplets 0 and 3 verbalize identically and share one request
    assert_eq!(cold.upstream_requests, 3);
    assert_eq!(cold.labels.len(), 4);
    assert_eq!(cold.labels.get(0), Some(1));
    assert_eq!(cold.labels.get(1), Some(0));
    assert_eq!(server.requests.lock().unwrap().len(), 3);

    let cache = ProbeCache::open(&cache_path).unwrap();
    assert_eq!(cache.len(), 3);
    let oracle = LlmOracle { cfg, backend: &backend, cache: &cache, templates: &templates, date_mode: DateMode::None };
    let warm = oracle.label_batch(&g, &all);
    assert_eq!(warm.upstream_requests, 0);
    assert_eq!(warm.cache_hits, 4);
    assert_eq!(warm.labels.iter().map(|l| l.value).collect::<Vec<_>>(), cold.labels.iter().map(|l| l.value).collect::<Vec<_>>());
    assert!(warm.labels.iter().all(|l| l.source == LabelSource::Cache));
    assert_eq!(server.requests.lock().unwrap().len(), 3);
}

struct Flaky {
    calls: AtomicUsize,
    answers: Vec<&'static str>,
}

impl ChatBackend for Flaky {
    fn complete(&self, _: &str, _: &str, _: &str) -> Result<String, OracleError> {
        let i = self.calls.fetch_add(1, Ordering::SeqCst);
        match self.answers.get(i) {
            Some(&"ERR") => Err(OracleError::Transport("connection reset".into())),
            Some(a) => Ok(a.to_string()),
            None => Ok("maybe".into()),
        }
    }
}

#[test]
fn retries_then_records_unparseable_failures() {
    let (g, templates) = small_graph();
    let stmts = vec![verbalize(&g, 1, &templates, DateMode::None).unwrap()];
    let cfg = OracleConfig { max_retries: 2, ..Default::default() };

    let ok = Flaky { calls: AtomicUsize::new(0), answers: vec!["ERR", "I think so", "FALSE, it is not"] };
    let out = probe_batch(&stmts, &cfg, &ok, &ProbeCache::in_memory());
    assert_eq!(out.labels.get(1), Some(0));
    assert_eq!(ok.calls.load(Ordering::SeqCst), 3);

    let bad = Flaky { calls: AtomicUsize::new(0), answers: vec![] };
    let out = probe_batch(&stmts, &cfg, &bad, &ProbeCache::in_memory());
    assert!(out.labels.is_empty());
    assert!(matches!(out.errors[0].error, OracleError::UnparseableLabel { attempts: 3, .. }));
}

#[test]
fn missing_template_and_timestamp_are_per_triplet_failures() {
    let mut b = GraphBuilder::new();
    b.triplet("a", "known", "b");
    b.triplet("a", "unknown", "c");
    let g = b.build();
    let mut t = TemplateTable::new();
    t.insert(RelationTemplate::new(g.relation_by_label("known").unwrap(), "{SUB} knows {OBJ}.").unwrap());
    let backend = Flaky { calls: AtomicUsize::new(0), answers: vec!["True"] };
    let cache = ProbeCache::in_memory();
    let oracle = LlmOracle { cfg: OracleConfig::default(), backend: &backend, cache: &cache, templates: &t, date_mode: DateMode::None };
    let out = oracle.label_batch(&g, &[0, 1]);
    assert_eq!(out.labels.get(0), Some(1));
    assert_eq!(out.errors.len(), 1);
    assert_eq!(out.errors[0].triplet, 1);
    assert!(verbalize(&g, 0, &t, DateMode::AppendDate).is_err());
}

#[test]
fn sampled_llm_probe_labels_exactly_the_sample() {
    let server = fake_server("0");
    let dir = tempfile::tempdir().unwrap();
    let p = planted_graph(&PlantedGraphConfig { n_entities: 200, seed: 3, ..Default::default() }).unwrap();
    let (gp, tp) = (dir.path().join("g.tsv"), dir.path().join("t.tsv"));
    write_planted(&p, &gp, &tp).unwrap();

    let mut cfg = RunConfig::default();
    cfg.dataset.path = gp;
    cfg.dataset.templates = Some(tp);
    cfg.output_dir = dir.path().join("out");
    cfg.oracle.kind = OracleKind::Llm;
    cfg.oracle.llm.endpoint = server.url.clone();
    cfg.oracle.llm.parallelism = 8;
    cfg.oracle.llm.cache_path = Some(dir.path().join("cache.jsonl"));
    let ws = Workspace::open(cfg.clone()).unwrap();
    let log = cmd_probe(&ws, Some(100)).unwrap();
    assert_eq!(log.n_requested, 100);
    assert_eq!(log.n_labeled, 100);
    assert_eq!(log.n_failed, 0);
    assert_eq!(log.upstream_requests, server.requests.lock().unwrap().len());
    let labels = kgh_core::TripletLabelTable::read_jsonl(&ws.out("labels.jsonl")).unwrap();
    assert_eq!(labels.len(), 100);
    drop(ws);

    let ws = Workspace::open(cfg).unwrap();
    let again = cmd_probe(&ws, Some(100)).unwrap();
    assert_eq!(again.upstream_requests, 0);
    assert_eq!(again.n_labeled, 100);
}

#[test]
fn planted_labels_follow_community_rates() {
    let p = planted_graph(&PlantedGraphConfig { n_entities: 2000, seed: 1, ..Default::default() }).unwrap();
    let g = &p.graph;
    let oracle = PlantedOracle::new(g, &PlantedOracleConfig::two_communities(0.9, 0.1, 0.0, 1)).unwrap();
    let (mut hi, mut nhi, mut lo, mut nlo) = (0.0, 0.0, 0.0, 0.0);
    for (i, t) in g.triplets().iter().enumerate() {
        let (ch, ct) = (oracle.community(t.head), oracle.community(t.tail));
        if ch == 0 && ct == 0 {
            hi += f64::from(oracle.label(g, i));
            nhi += 1.0;
        } else if ch == 1 && ct == 1 {
            lo += f64::from(oracle.label(g, i));
            nlo += 1.0;
        }
    }
    assert!((hi / nhi - 0.9).abs() < 0.03, "{}", hi / nhi);
    assert!((lo / nlo - 0.1).abs() < 0.03, "{}", lo / nlo);

    // true_scores agrees with aggregating the oracle's own labels
    let all: Vec<usize> = (0..g.num_triplets()).collect();
    let measured = entity_knowledgeability(g, &oracle.label_batch(g, &all).labels).unwrap();
    let truth = oracle.true_scores(g);
    for (v, k) in truth.iter() {
        assert_eq!(measured.get(v), Some(k));
    }
}

#[test]
fn planted_sparsified_graph_sees_root_labels() {
    let g = common::random_graph(5, 40, 200);
    let cfg = PlantedOracleConfig {
        n_communities: 3,
        community_rates: vec![0.8, 0.5, 0.2],
        assignment: CommunityAssignment::Random,
        noise: 0.1,
        seed: 9,
    };
    let oracle = PlantedOracle::new(&g, &cfg).unwrap();
    let s = g.sparsify(0.5, 1).unwrap();
    let idx: Vec<usize> = (0..s.num_triplets()).collect();
    let out = oracle.label_batch(&s, &idx);
    for i in idx {
        assert_eq!(out.labels.get(i), Some(oracle.label(&g, s.origin_index(i))));
    }
    let bad = PlantedOracleConfig { noise: 0.5, ..cfg };
    assert!(PlantedOracle::new(&g, &bad).is_err());
}
