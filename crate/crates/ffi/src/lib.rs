//! C interface to `rage`.
//!
//! Objects cross the boundary as opaque handles (`RageDataset`,
//! `RageModel`) that the caller releases with the matching `_free`
//! function. Every fallible call returns a `RageStatus`; on failure
//! `rage_last_error` describes what went wrong on the calling thread.
//! Panics never unwind into C: they are reported as `RAGE_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use rage::bilevel;
use rage::cli::RunConfig;
use rage::eval;
use rage::explainer::{influence, ExplainerParams};
use rage::gnn::{predict, GnnParams, ParamSet};
use rage::graphdata::{generate_planted_clique, load_jsonl, save_jsonl, split, Dataset, FeatureKind, PlantedCliqueParams};
use rage::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RageStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Divergence = 5,
    UndefinedMetric = 6,
    Internal = 7,
}

/// A loaded or generated graph dataset.
pub struct RageDataset {
    inner: Dataset,
}

/// A trained explainer and predictor pair.
pub struct RageModel {
    explainer: ExplainerParams,
    predictor: GnnParams,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Failure {
    Null(&'static str),
    Lib(Error),
    Arg(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn status_of(e: &Error) -> RageStatus {
    match e {
        Error::Config(_) | Error::Parameter(_) | Error::Contract(_) | Error::Domain(_) | Error::Shape { .. } => {
            RageStatus::InvalidArgument
        }
        Error::Io { .. } => RageStatus::Io,
        Error::Parse { .. } | Error::Schema { .. } => RageStatus::Parse,
        Error::Divergence { .. } => RageStatus::Divergence,
        Error::UndefinedMetric(_) | Error::Degenerate(_) => RageStatus::UndefinedMetric,
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RageStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RageStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_last_error(format!("null pointer passed as {what}"));
            RageStatus::NullPointer
        }
        Ok(Err(Failure::Arg(msg))) => {
            set_last_error(msg);
            RageStatus::InvalidArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal error: {msg}"));
            RageStatus::Internal
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Arg(format!("{what} is not valid UTF-8")))
}

unsafe fn get<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

fn graph_index(ds: &RageDataset, index: usize) -> Result<usize, Failure> {
    if index < ds.inner.len() {
        Ok(index)
    } else {
        Err(Failure::Arg(format!(
            "graph index {index} out of range for {} graphs",
            ds.inner.len()
        )))
    }
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rage_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rage_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Reads a JSON-lines dataset.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out_dataset` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rage_dataset_load(path: *const c_char, out_dataset: *mut *mut RageDataset) -> RageStatus {
    guard(|| {
        let path = text(path, "path")?;
        let slot = out(out_dataset, "out_dataset")?;
        let inner = load_jsonl(path)?;
        *slot = Box::into_raw(Box::new(RageDataset { inner }));
        Ok(())
    })
}

/// Generates a planted-clique dataset with one-hot degree features.
///
/// # Safety
/// `out_dataset` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rage_dataset_planted_clique(
    num_graphs: usize,
    num_nodes: usize,
    edge_prob: f64,
    clique_size: usize,
    feature_dim: usize,
    seed: u64,
    out_dataset: *mut *mut RageDataset,
) -> RageStatus {
    guard(|| {
        let slot = out(out_dataset, "out_dataset")?;
        let (inner, _) = generate_planted_clique(&PlantedCliqueParams {
            num_graphs,
            num_nodes,
            edge_prob,
            clique_size,
            feature_dim,
            features: FeatureKind::DegreeOneHot,
            seed,
        })?;
        *slot = Box::into_raw(Box::new(RageDataset { inner }));
        Ok(())
    })
}

/// Writes the dataset as JSON lines.
///
/// # Safety
/// `dataset` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn rage_dataset_save(dataset: *const RageDataset, path: *const c_char) -> RageStatus {
    guard(|| {
        let ds = get(dataset, "dataset")?;
        save_jsonl(&ds.inner, text(path, "path")?)?;
        Ok(())
    })
}

/// Number of graphs, or 0 for NULL.
///
/// # Safety
/// `dataset` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn rage_dataset_len(dataset: *const RageDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.len())
}

/// Edge count of graph `index`.
///
/// # Safety
/// `dataset` must come from this library and `out_edges` be valid.
#[no_mangle]
pub unsafe extern "C" fn rage_dataset_num_edges(
    dataset: *const RageDataset,
    index: usize,
    out_edges: *mut usize,
) -> RageStatus {
    guard(|| {
        let ds = get(dataset, "dataset")?;
        let slot = out(out_edges, "out_edges")?;
        *slot = ds.inner.graphs[graph_index(ds, index)?].num_edges();
        Ok(())
    })
}

/// # Safety
/// `dataset` must be NULL or come from this library, and is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn rage_dataset_free(dataset: *mut RageDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Trains on `dataset` with split seed and hyperparameters taken from
/// `config`: `key = value` lines in the command line config format, or
/// NULL for the defaults. `method` selects `rage`, `rage-single` or
/// `rage-keep`.
///
/// # Safety
/// `dataset` must come from this library, `config` must be NULL or
/// NUL-terminated, `out_model` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rage_train(
    dataset: *const RageDataset,
    config: *const c_char,
    seed: u64,
    out_model: *mut *mut RageModel,
) -> RageStatus {
    guard(|| {
        let ds = get(dataset, "dataset")?;
        let slot = out(out_model, "out_model")?;
        let cfg = if config.is_null() {
            RunConfig::default()
        } else {
            RunConfig::parse(text(config, "config")?)?
        };
        cfg.validate()?;
        let splits = split(&ds.inner, cfg.split_seed)?;
        let trained = bilevel::run(cfg.method, &ds.inner, &splits, &cfg.train_for_seed(seed))?;
        *slot = Box::into_raw(Box::new(RageModel {
            explainer: trained.explainer,
            predictor: trained.predictor,
        }));
        Ok(())
    })
}

/// Writes `explainer.params` and `predictor.params` into directory `dir`.
///
/// # Safety
/// `model` must come from this library; `dir` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn rage_model_save(model: *const RageModel, dir: *const c_char) -> RageStatus {
    guard(|| {
        let m = get(model, "model")?;
        let dir = PathBuf::from(text(dir, "dir")?);
        std::fs::create_dir_all(&dir).map_err(|e| Failure::Arg(format!("{}: {e}", dir.display())))?;
        m.explainer.params().save(dir.join("explainer.params"))?;
        m.predictor.params().save(dir.join("predictor.params"))?;
        Ok(())
    })
}

/// Reads a model saved by `rage_model_save` or a `rage train` run directory.
///
/// # Safety
/// `dir` must be NUL-terminated and `out_model` valid.
#[no_mangle]
pub unsafe extern "C" fn rage_model_load(dir: *const c_char, out_model: *mut *mut RageModel) -> RageStatus {
    guard(|| {
        let dir = PathBuf::from(text(dir, "dir")?);
        let slot = out(out_model, "out_model")?;
        let explainer = ExplainerParams::from_params(ParamSet::load(dir.join("explainer.params"))?)?;
        let predictor = GnnParams::from_params(ParamSet::load(dir.join("predictor.params"))?)?;
        *slot = Box::into_raw(Box::new(RageModel { explainer, predictor }));
        Ok(())
    })
}

/// Edge influences of graph `index`, in canonical edge order. `out_values`
/// must hold `capacity` doubles; `out_len` receives the edge count. When the
/// buffer is too small nothing is written and the call fails with
/// `RAGE_STATUS_INVALID_ARGUMENT`; query the size with
/// `rage_dataset_num_edges`.
///
/// # Safety
/// Handles must come from this library; `out_values` must point to
/// `capacity` writable doubles (may be NULL when `capacity` is 0).
#[no_mangle]
pub unsafe extern "C" fn rage_influence(
    model: *const RageModel,
    dataset: *const RageDataset,
    index: usize,
    out_values: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> RageStatus {
    guard(|| {
        let m = get(model, "model")?;
        let ds = get(dataset, "dataset")?;
        let len = out(out_len, "out_len")?;
        let g = &ds.inner.graphs[graph_index(ds, index)?];
        let z = influence(g, &m.explainer)?.values;
        *len = z.len();
        if z.len() > capacity {
            return Err(Failure::Arg(format!("buffer holds {capacity} values, graph has {} edges", z.len())));
        }
        if !z.is_empty() {
            if out_values.is_null() {
                return Err(Failure::Null("out_values"));
            }
            std::slice::from_raw_parts_mut(out_values, z.len()).copy_from_slice(&z);
        }
        Ok(())
    })
}

/// Raw prediction (logit for classification) of graph `index` under its
/// own explanation.
///
/// # Safety
/// Handles must come from this library and `out_prediction` be valid.
#[no_mangle]
pub unsafe extern "C" fn rage_predict(
    model: *const RageModel,
    dataset: *const RageDataset,
    index: usize,
    out_prediction: *mut f64,
) -> RageStatus {
    guard(|| {
        let m = get(model, "model")?;
        let ds = get(dataset, "dataset")?;
        let slot = out(out_prediction, "out_prediction")?;
        let g = &ds.inner.graphs[graph_index(ds, index)?];
        let z = influence(g, &m.explainer)?.values;
        *slot = predict(&[g], Some(&[z]), &m.predictor)?[0];
        Ok(())
    })
}

/// Test-split metric (AUC for classification, MSE for regression) under
/// the split drawn with `split_seed`.
///
/// # Safety
/// Handles must come from this library and `out_metric` be valid.
#[no_mangle]
pub unsafe extern "C" fn rage_test_metric(
    model: *const RageModel,
    dataset: *const RageDataset,
    split_seed: u64,
    out_metric: *mut f64,
) -> RageStatus {
    guard(|| {
        let m = get(model, "model")?;
        let ds = get(dataset, "dataset")?;
        let slot = out(out_metric, "out_metric")?;
        let splits = split(&ds.inner, split_seed)?;
        *slot = bilevel::evaluate(&ds.inner, &splits.test, Some(&m.explainer), &m.predictor)?;
        Ok(())
    })
}

/// ROC AUC of `len` scores against 0/1 labels.
///
/// # Safety
/// `scores` and `labels` must point to `len` doubles; `out_auc` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rage_auc(scores: *const f64, labels: *const f64, len: usize, out_auc: *mut f64) -> RageStatus {
    guard(|| {
        if len > 0 && (scores.is_null() || labels.is_null()) {
            return Err(Failure::Null("scores or labels"));
        }
        let slot = out(out_auc, "out_auc")?;
        let (s, l) = if len == 0 {
            (&[][..], &[][..])
        } else {
            (std::slice::from_raw_parts(scores, len), std::slice::from_raw_parts(labels, len))
        };
        *slot = eval::auc(s, l)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or come from this library, and is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn rage_model_free(model: *mut RageModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
