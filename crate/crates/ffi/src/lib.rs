//! C interface to `ndfusion`.
//!
//! Every fallible call returns an [`NdfStatus`]. On failure the message is
//! kept per thread and can be copied out with [`ndf_last_error`]. Objects
//! cross the boundary as opaque handles that the caller frees with the
//! matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ndfusion::checkpoint;
use ndfusion::config::RunConfig;
use ndfusion::data::make_splits;
use ndfusion::decoder::kl_gaussian_value;
use ndfusion::eval::{evaluate, metrics, Provenance};
use ndfusion::fusion::FusionScheme;
use ndfusion::model::{Ndf, NdfConfig, Regressor, WindowInput};
use ndfusion::testbed::Scenario;
use ndfusion::train::{prepare, train, Prepared, TrainConfig};
use ndfusion::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NdfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Diverged = 4,
    Checkpoint = 5,
    Internal = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NdfSplit {
    Train = 0,
    Val = 1,
    Test = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NdfFusion {
    Mlp = 0,
    Pairwise = 1,
    Weighted = 2,
}

/// Localisation error summary in metres.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NdfMetrics {
    pub mean: f64,
    pub median: f64,
    pub cdf90: f64,
    pub points: usize,
}

/// Simulated or loaded dataset, scaled and ready for a model.
pub struct NdfDataset {
    prepared: Prepared,
}

pub struct NdfModel {
    inner: Ndf,
    trained: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> NdfStatus {
    match e {
        Error::Io { .. } => NdfStatus::Io,
        Error::Diverged { .. } | Error::NonFiniteLoss { .. } => NdfStatus::Diverged,
        Error::Checkpoint(_) => NdfStatus::Checkpoint,
        Error::Json(_) => NdfStatus::Internal,
        _ => NdfStatus::InvalidArgument,
    }
}

struct Fail(NdfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(NdfStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> NdfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            NdfStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            NdfStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| Fail(NdfStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

fn split_of(d: &NdfDataset, split: NdfSplit) -> &[WindowInput] {
    match split {
        NdfSplit::Train => &d.prepared.train,
        NdfSplit::Val => &d.prepared.val,
        NdfSplit::Test => &d.prepared.test,
    }
}

/// Copy the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `cap`). Returns the full message length without
/// the terminator. `buf` may be null to query the length.
///
/// # Safety
/// Non-null pointers must be valid for the reads and writes described,
/// and handles must be live handles from this library.
#[no_mangle]
pub unsafe extern "C" fn ndf_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ndf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Simulate `duration` seconds of the standard scenario, window it with
/// `step` seconds and split it 80:10:10 at random.
///
/// # Safety
/// Non-null pointers must be valid for the reads and writes described,
/// and handles must be live handles from this library.
#[no_mangle]
pub unsafe extern "C" fn ndf_dataset_simulate(duration: f64, step: f64, seed: u64, out: *mut *mut NdfDataset) -> NdfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let mut cfg = RunConfig::default();
        cfg.simulate.duration = duration;
        cfg.simulate.step = step;
        let cfg = cfg.resolve(Some(seed));
        cfg.validate()?;
        let scenario = Scenario::standard(cfg.dataset.clone(), cfg.simulate.feature_seed);
        let frames = scenario.simulate(duration, seed)?;
        let built = make_splits(&frames, cfg.dataset.window_span, &cfg.split)?;
        let prepared = prepare(&built.splits)?;
        *out = Box::into_raw(Box::new(NdfDataset { prepared }));
        Ok(())
    })
}

/// Load `train.jsonl`, `val.jsonl` and `test.jsonl` from `dir`.
///
/// # Safety
/// Non-null pointers must be valid for the reads and writes described,
/// and handles must be live handles from this library.
#[no_mangle]
pub unsafe extern "C" fn ndf_dataset_load(dir: *const c_char, out: *mut *mut NdfDataset) -> NdfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let dir = path_arg(dir)?;
        let read = |name: &str| ndfusion::data::read_split(&dir.join(format!("{name}.jsonl"))).map(|f| f.windows());
        let splits = ndfusion::data::Splits { train: read("train")?, val: read("val")?, test: read("test")? };
        *out = Box::into_raw(Box::new(NdfDataset { prepared: prepare(&splits)? }));
        Ok(())
    })
}

/// Number of windows in `split`.
///
/// # Safety
/// Non-null pointers must be valid for the reads and writes described,
/// and handles must be live handles from this library.
#[no_mangle]
pub unsafe extern "C" fn ndf_dataset_window_count(dataset: *const NdfDataset, split: NdfSplit, out: *mut usize) -> NdfStatus {
    guard(|| {
        let d = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = split_of(d, split).len();
        Ok(())
    })
}

/// Release a dataset.
///
/// # Safety
/// The handle must be null or a live handle from this library. It is
/// invalid after the call.
#[no_mangle]
pub unsafe extern "C" fn ndf_dataset_free(dataset: *mut NdfDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Fresh model with default dimensions for 36-dimensional streams.
///
/// # Safety
/// Non-null pointers must be valid for the reads and writes described,
/// and handles must be live handles from this library.
#[no_mangle]
pub unsafe extern "C" fn ndf_model_new(fusion: NdfFusion, seed: u64, out: *mut *mut NdfModel) -> NdfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let fusion = match fusion {
            NdfFusion::Mlp => FusionScheme::Mlp,
            NdfFusion::Pairwise => FusionScheme::Pairwise,
            NdfFusion::Weighted => FusionScheme::Weighted,
        };
        let inner = Ndf::new(NdfConfig { fusion, ..Default::default() }, seed)?;
        *out = Box::into_raw(Box::new(NdfModel { inner, trained: false }));
        Ok(())
    })
}

/// Train on the dataset's train split, selecting on its validation split.
/// `best_val_loss` may be null.
///
/// # Safety
/// Non-null pointers must be valid for the reads and writes described,
/// and handles must be live handles from this library.
#[no_mangle]
pub unsafe extern "C" fn ndf_model_train(model: *mut NdfModel, dataset: *const NdfDataset, epochs: usize, seed: u64, best_val_loss: *mut f64) -> NdfStatus {
    guard(|| {
        let m = model.as_mut().ok_or_else(|| null("model"))?;
        let d = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let cfg = TrainConfig { epochs, seed, ..Default::default() };
        let report = train(&mut m.inner, &d.prepared.train, &d.prepared.val, &cfg, None);
        m.trained = true;
        let report = report?;
        if !best_val_loss.is_null() {
            *best_val_loss = report.best_val_loss;
        }
        Ok(())
    })
}

/// Metrics of the model on `split` of the dataset.
///
/// # Safety
/// Non-null pointers must be valid for the reads and writes described,
/// and handles must be live handles from this library.
#[no_mangle]
pub unsafe extern "C" fn ndf_model_evaluate(model: *const NdfModel, dataset: *const NdfDataset, split: NdfSplit, out: *mut NdfMetrics) -> NdfStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let d = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let provenance = if m.trained { Provenance::Trained } else { Provenance::RandomInit };
        let r = evaluate(&m.inner, split_of(d, split), "ffi", provenance)?;
        *out = NdfMetrics { mean: r.mean, median: r.median, cdf90: r.cdf90, points: r.points };
        Ok(())
    })
}

/// Predicted coordinates of one window as interleaved `x, y` pairs. Writes
/// at most `cap` values and stores the number required in `needed`.
///
/// # Safety
/// Non-null pointers must be valid for the reads and writes described,
/// and handles must be live handles from this library.
#[no_mangle]
pub unsafe extern "C" fn ndf_model_predict(
    model: *const NdfModel,
    dataset: *const NdfDataset,
    split: NdfSplit,
    index: usize,
    xy: *mut f64,
    cap: usize,
    needed: *mut usize,
) -> NdfStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let d = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let ws = split_of(d, split);
        let w = ws.get(index).ok_or_else(|| Fail(NdfStatus::InvalidArgument, format!("window {index} out of range ({})", ws.len())))?;
        let p = m.inner.predict(w)?;
        let data = p.data();
        if !needed.is_null() {
            *needed = data.len();
        }
        if cap > 0 {
            if xy.is_null() {
                return Err(null("xy"));
            }
            let n = data.len().min(cap);
            ptr::copy_nonoverlapping(data.as_ptr(), xy, n);
        }
        Ok(())
    })
}

/// Write the parameters and architecture to `dir`.
///
/// # Safety
/// Non-null pointers must be valid for the reads and writes described,
/// and handles must be live handles from this library.
#[no_mangle]
pub unsafe extern "C" fn ndf_model_save(model: *const NdfModel, dir: *const c_char) -> NdfStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let dir = path_arg(dir)?;
        let hash = m.inner.config_hash()?;
        let meta = serde_json::json!({ "config": m.inner.config, "trained": m.trained });
        checkpoint::save(&dir, "model", &m.inner.store, &hash, meta)?;
        Ok(())
    })
}

/// Load a model written by `ndf_model_save`.
///
/// # Safety
/// Non-null pointers must be valid for the reads and writes described,
/// and handles must be live handles from this library.
#[no_mangle]
pub unsafe extern "C" fn ndf_model_load(dir: *const c_char, out: *mut *mut NdfModel) -> NdfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let dir = path_arg(dir)?;
        let manifest = checkpoint::read_manifest(&dir, "model")?;
        let config: NdfConfig = serde_json::from_value(manifest.meta["config"].clone()).map_err(Error::from)?;
        let trained = manifest.meta["trained"].as_bool().unwrap_or(false);
        let mut inner = Ndf::new(config, 0)?;
        let hash = inner.config_hash()?;
        checkpoint::load(&dir, "model", &mut inner.store, &hash)?;
        *out = Box::into_raw(Box::new(NdfModel { inner, trained }));
        Ok(())
    })
}

/// Release a model.
///
/// # Safety
/// The handle must be null or a live handle from this library. It is
/// invalid after the call.
#[no_mangle]
pub unsafe extern "C" fn ndf_model_free(model: *mut NdfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Mean, median and 90th percentile of `n` errors.
///
/// # Safety
/// Non-null pointers must be valid for the reads and writes described,
/// and handles must be live handles from this library.
#[no_mangle]
pub unsafe extern "C" fn ndf_metrics(errors: *const f64, n: usize, out: *mut NdfMetrics) -> NdfStatus {
    guard(|| {
        if errors.is_null() || out.is_null() {
            return Err(null("errors or out"));
        }
        let e = std::slice::from_raw_parts(errors, n);
        let m = metrics(e)?;
        *out = NdfMetrics { mean: m.mean, median: m.median, cdf90: m.cdf90, points: n };
        Ok(())
    })
}

/// `KL(N(μ, diag σ²) ‖ N(0, I))` over `n` dimensions.
///
/// # Safety
/// Non-null pointers must be valid for the reads and writes described,
/// and handles must be live handles from this library.
#[no_mangle]
pub unsafe extern "C" fn ndf_kl_gaussian(mu: *const f64, sigma: *const f64, n: usize, out: *mut f64) -> NdfStatus {
    guard(|| {
        if mu.is_null() || sigma.is_null() || out.is_null() {
            return Err(null("mu, sigma or out"));
        }
        *out = kl_gaussian_value(std::slice::from_raw_parts(mu, n), std::slice::from_raw_parts(sigma, n))?;
        Ok(())
    })
}
