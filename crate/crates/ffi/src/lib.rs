//! C ABI for kgh-core.
//!
//! Objects cross the boundary as opaque handles. Each `*_load` or `*_new`
//! style function writes a handle through an out-pointer and the matching
//! `*_free` releases it. Fallible functions return a [`KghStatus`]. After a
//! failure, [`kgh_last_error`] describes it for the calling thread.
//! Panics never unwind into C; they surface as `KGH_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use kgh_core::config::RunConfig;
use kgh_core::embed::{build_features, HashedProvider};
use kgh_core::estimator::{predict, RegressorModel};
use kgh_core::graph::read_scores_csv;
use kgh_core::homophily::{degree_matched_baseline, entity_knowledgeability, node_homophily, DEFAULT_BINS};
use kgh_core::oracle::{Labeler, PlantedOracle, PlantedOracleConfig};
use kgh_core::pipeline::{cmd_pipeline, Workspace};
use kgh_core::{EntityId, EntityScoreTable, Error, GraphFormat, KnowledgeGraph};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KghStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Data = 5,
    Oracle = 6,
    NotFound = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// A loaded knowledge graph.
pub struct KghGraph(KnowledgeGraph);

/// Per-entity knowledgeability scores.
pub struct KghScores(EntityScoreTable);

/// A trained knowledgeability regressor.
pub struct KghModel(RegressorModel);

/// Degree-matched baseline summary.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KghBaseline {
    pub true_mean: f64,
    pub baseline_mean: f64,
    pub baseline_std: f64,
    pub z: f64,
    pub p_two_tailed: f64,
    pub ci99_low: f64,
    pub ci99_high: f64,
    pub trials: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

type Failure = (KghStatus, String);

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> KghStatus {
    match e {
        Error::Io { .. } => KghStatus::Io,
        Error::Parse { .. } | Error::EmptyGraph(_) | Error::Serde(_) => KghStatus::Parse,
        Error::Oracle(_) => KghStatus::Oracle,
        Error::InvalidArgument(_) | Error::Usage(_) => KghStatus::InvalidArgument,
        Error::UnknownEntity(_) | Error::UnknownTriplet(_) => KghStatus::NotFound,
        Error::Stage { source, .. } => status_of(source),
        _ => KghStatus::Data,
    }
}

fn fail(e: Error) -> Failure {
    (status_of(&e), e.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> KghStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KghStatus::Ok,
        Ok(Err((status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            KghStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err((KghStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (KghStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| (KghStatus::NullPointer, format!("{what} is null")))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err((KghStatus::NullPointer, format!("{what} is null")));
    }
    out.write(value);
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn kgh_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failure on this thread; empty if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn kgh_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a TSV graph (`head⇥relation⇥tail`, or with a fourth date column
/// when `temporal` is true).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn kgh_graph_load(path: *const c_char, temporal: bool, out: *mut *mut KghGraph) -> KghStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let format = if temporal { GraphFormat::TsvTemporal } else { GraphFormat::Tsv };
        let g = KnowledgeGraph::load(path.as_ref(), format).map_err(fail)?;
        write_out(out, Box::into_raw(Box::new(KghGraph(g))), "out")
    })
}

/// # Safety
/// `g` must be null or a handle from [`kgh_graph_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kgh_graph_free(g: *mut KghGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// # Safety
/// `g` must be a live graph handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kgh_graph_num_entities(g: *const KghGraph, out: *mut usize) -> KghStatus {
    guard(|| write_out(out, ref_arg(g, "graph")?.0.num_entities(), "out"))
}

/// # Safety
/// `g` must be a live graph handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kgh_graph_num_triplets(g: *const KghGraph, out: *mut usize) -> KghStatus {
    guard(|| write_out(out, ref_arg(g, "graph")?.0.num_triplets(), "out"))
}

/// Copies the label of `entity` into `buf` with a trailing NUL. `out_len`
/// receives the label length in bytes (without the NUL) even when the
/// buffer is too small.
///
/// # Safety
/// `g` must be a live graph handle, `buf` must have room for `buf_len`
/// bytes (it may be null when `buf_len` is 0) and `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kgh_graph_entity_label(
    g: *const KghGraph,
    entity: u32,
    buf: *mut c_char,
    buf_len: usize,
    out_len: *mut usize,
) -> KghStatus {
    guard(|| {
        let g = &ref_arg(g, "graph")?.0;
        g.check_entity(EntityId(entity)).map_err(fail)?;
        let label = g.entity_label(EntityId(entity)).as_bytes();
        write_out(out_len, label.len(), "out_len")?;
        if buf_len <= label.len() {
            return Err((
                KghStatus::BufferTooSmall,
                format!("label needs {} bytes, buffer has {buf_len}", label.len() + 1),
            ));
        }
        if buf.is_null() {
            return Err((KghStatus::NullPointer, "buf is null".into()));
        }
        std::ptr::copy_nonoverlapping(label.as_ptr(), buf.cast::<u8>(), label.len());
        buf.add(label.len()).write(0);
        Ok(())
    })
}

/// # Safety
/// `g` must be a live graph handle, `label` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kgh_graph_entity_by_label(g: *const KghGraph, label: *const c_char, out: *mut u32) -> KghStatus {
    guard(|| {
        let g = &ref_arg(g, "graph")?.0;
        let label = str_arg(label, "label")?;
        let v = g
            .entity_by_label(label)
            .ok_or_else(|| (KghStatus::NotFound, format!("no entity labeled `{label}`")))?;
        write_out(out, v.0, "out")
    })
}

/// Labels every triplet with a two-community planted oracle and aggregates
/// entity scores.
///
/// # Safety
/// `g` must be a live graph handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kgh_planted_scores(
    g: *const KghGraph,
    high_rate: f64,
    low_rate: f64,
    noise: f64,
    seed: u64,
    out: *mut *mut KghScores,
) -> KghStatus {
    guard(|| {
        let g = &ref_arg(g, "graph")?.0;
        let oracle = PlantedOracle::new(g, &PlantedOracleConfig::two_communities(high_rate, low_rate, noise, seed))
            .map_err(fail)?;
        let all: Vec<usize> = (0..g.num_triplets()).collect();
        let labels = oracle.label_batch(g, &all).labels;
        let scores = entity_knowledgeability(g, &labels).map_err(fail)?;
        write_out(out, Box::into_raw(Box::new(KghScores(scores))), "out")
    })
}

/// Reads scores from a CSV with columns `entity_id,label,k_score,degree`.
///
/// # Safety
/// `path` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kgh_scores_load_csv(path: *const c_char, out: *mut *mut KghScores) -> KghStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let s = read_scores_csv(path.as_ref()).map_err(fail)?;
        write_out(out, Box::into_raw(Box::new(KghScores(s))), "out")
    })
}

/// # Safety
/// `g` and `s` must be live handles and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn kgh_scores_save_csv(g: *const KghGraph, s: *const KghScores, path: *const c_char) -> KghStatus {
    guard(|| {
        let g = &ref_arg(g, "graph")?.0;
        let s = &ref_arg(s, "scores")?.0;
        let path = str_arg(path, "path")?;
        g.export_scores_csv(s, path.as_ref()).map_err(fail)
    })
}

/// # Safety
/// `s` must be null or a live scores handle.
#[no_mangle]
pub unsafe extern "C" fn kgh_scores_free(s: *mut KghScores) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// # Safety
/// `s` must be a live scores handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kgh_scores_len(s: *const KghScores, out: *mut usize) -> KghStatus {
    guard(|| write_out(out, ref_arg(s, "scores")?.0.len(), "out"))
}

/// Score of `entity`, or `KGH_STATUS_NOT_FOUND` when it has none.
///
/// # Safety
/// `s` must be a live scores handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kgh_scores_get(s: *const KghScores, entity: u32, out: *mut f64) -> KghStatus {
    guard(|| {
        let v = ref_arg(s, "scores")?
            .0
            .get(EntityId(entity))
            .ok_or_else(|| (KghStatus::NotFound, format!("entity {entity} has no score")))?;
        write_out(out, v, "out")
    })
}

/// Mean node homophily over entities with at least one scored neighbor.
///
/// # Safety
/// `g` and `s` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kgh_homophily_mean(g: *const KghGraph, s: *const KghScores, out: *mut f64) -> KghStatus {
    guard(|| {
        let g = &ref_arg(g, "graph")?.0;
        let s = &ref_arg(s, "scores")?.0;
        let r = node_homophily(g, s, DEFAULT_BINS).map_err(fail)?;
        write_out(out, r.graph_mean, "out")
    })
}

/// # Safety
/// `g` and `s` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kgh_baseline(
    g: *const KghGraph,
    s: *const KghScores,
    trials: usize,
    seed: u64,
    out: *mut KghBaseline,
) -> KghStatus {
    guard(|| {
        let g = &ref_arg(g, "graph")?.0;
        let s = &ref_arg(s, "scores")?.0;
        let r = degree_matched_baseline(g, s, trials, seed).map_err(fail)?;
        write_out(
            out,
            KghBaseline {
                true_mean: r.true_mean,
                baseline_mean: r.baseline_mean,
                baseline_std: r.baseline_std,
                z: r.z,
                p_two_tailed: r.p_two_tailed,
                ci99_low: r.ci99.0,
                ci99_high: r.ci99.1,
                trials: r.trials,
            },
            "out",
        )
    })
}

/// Loads a model saved by `kgh train`.
///
/// # Safety
/// `path` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kgh_model_load(path: *const c_char, out: *mut *mut KghModel) -> KghStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let m = RegressorModel::load(path.as_ref()).map_err(fail)?;
        write_out(out, Box::into_raw(Box::new(KghModel(m))), "out")
    })
}

/// # Safety
/// `m` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn kgh_model_free(m: *mut KghModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Predicts every entity using hashed label features of size `dim`, which
/// must match the dimension the model was trained with.
///
/// # Safety
/// `m` and `g` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kgh_model_predict_hashed(
    m: *const KghModel,
    g: *const KghGraph,
    dim: usize,
    out: *mut *mut KghScores,
) -> KghStatus {
    guard(|| {
        let m = &ref_arg(m, "model")?.0;
        let g = &ref_arg(g, "graph")?.0;
        let provider = HashedProvider::new(dim).map_err(fail)?;
        let features = build_features(g, &provider).map_err(fail)?;
        let preds = predict(m, g, &features, g.entities()).map_err(fail)?;
        write_out(out, Box::into_raw(Box::new(KghScores(preds))), "out")
    })
}

/// Runs the whole pipeline from a TOML config. `out_dir` may be null to
/// keep the configured output directory.
///
/// # Safety
/// `config_path` must be NUL-terminated; `out_dir` null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn kgh_run_pipeline(config_path: *const c_char, out_dir: *const c_char) -> KghStatus {
    guard(|| {
        let mut cfg = RunConfig::load(str_arg(config_path, "config_path")?.as_ref()).map_err(fail)?;
        if !out_dir.is_null() {
            cfg.output_dir = PathBuf::from(str_arg(out_dir, "out_dir")?);
        }
        let ws = Workspace::open(cfg).map_err(fail)?;
        cmd_pipeline(&ws, false).map(|_| ()).map_err(fail)
    })
}
