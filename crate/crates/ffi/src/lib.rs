//! C ABI over the `cadad` engine.
//!
//! Every fallible call returns a [`CadadStatus`]; on failure the message is
//! kept per thread and read back with [`cadad_last_error`]. Networks are
//! opaque [`CadadNetwork`] handles owned by the caller and released with
//! [`cadad_network_free`]. Buffers are row-major `double` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use cadad::checkpoint::Checkpoint;
use cadad::delay;
use cadad::network::{Network, PassOptions};
use cadad::CadadError;
use ndarray::{ArrayView2, ArrayView3};

/// Result codes. Configuration, numeric and I/O codes match the exit codes
/// of the command-line tool.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CadadStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Numeric = 3,
    Io = 4,
    Contract = 5,
    Index = 6,
    Parse = 7,
    Panic = 8,
}

/// Trained network loaded from a checkpoint.
pub struct CadadNetwork {
    net: Network,
    epoch: u32,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &CadadError) -> CadadStatus {
    match e {
        CadadError::Config(_) => CadadStatus::Config,
        CadadError::Numeric(_) => CadadStatus::Numeric,
        CadadError::Io { .. } | CadadError::Serde(_) => CadadStatus::Io,
        CadadError::Contract(_) => CadadStatus::Contract,
        CadadError::Index(_) => CadadStatus::Index,
        CadadError::Parse { .. } => CadadStatus::Parse,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (CadadStatus, String)>) -> CadadStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CadadStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("panic inside cadad");
            CadadStatus::Panic
        }
    }
}

fn lift(e: CadadError) -> (CadadStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (CadadStatus, String) {
    (CadadStatus::NullPointer, format!("{what} is null"))
}

fn contract(msg: String) -> (CadadStatus, String) {
    (CadadStatus::Contract, msg)
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (CadadStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| contract(format!("{what} is not UTF-8")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], (CadadStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], (CadadStatus, String)> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// Message of the last failed call on this thread; empty when none failed.
/// Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cadad_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cadad_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

fn into_handle(ck: Checkpoint, out: *mut *mut CadadNetwork) {
    let h = Box::new(CadadNetwork {
        net: ck.network,
        epoch: ck.epoch,
    });
    unsafe { *out = Box::into_raw(h) };
}

/// Loads a checkpoint file into a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cadad_network_load(path: *const c_char, out: *mut *mut CadadNetwork) -> CadadStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = c_str(path, "path")?;
        let ck = Checkpoint::load(Path::new(p)).map_err(lift)?;
        into_handle(ck, out);
        Ok(())
    })
}

/// Parses checkpoint JSON into a new handle.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cadad_network_from_json(json: *const c_char, out: *mut *mut CadadNetwork) -> CadadStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = c_str(json, "json")?;
        let ck = Checkpoint::from_json(text).map_err(lift)?;
        into_handle(ck, out);
        Ok(())
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `net` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cadad_network_free(net: *mut CadadNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Input channels; 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cadad_network_n_inputs(net: *const CadadNetwork) -> usize {
    net.as_ref().map_or(0, |h| h.net.spec.n_inputs())
}

/// Output classes; 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cadad_network_n_classes(net: *const CadadNetwork) -> usize {
    net.as_ref().map_or(0, |h| h.net.spec.n_classes)
}

/// Layers including the readout; 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cadad_network_n_layers(net: *const CadadNetwork) -> usize {
    net.as_ref().map_or(0, |h| h.net.layers.len())
}

/// Training epoch stored with the checkpoint.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cadad_network_epoch(net: *const CadadNetwork) -> u32 {
    net.as_ref().map_or(0, |h| h.epoch)
}

/// Class scores of a batch.
///
/// `input` is `[batch x steps x channels]`, `scores` receives
/// `[batch x n_classes]`. A nonzero `discretize` rounds delays to whole steps.
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn cadad_network_forward(
    net: *const CadadNetwork,
    input: *const f64,
    batch: usize,
    steps: usize,
    channels: usize,
    discretize: i32,
    scores: *mut f64,
    scores_len: usize,
) -> CadadStatus {
    guard(|| {
        let h = net.as_ref().ok_or_else(|| null("net"))?;
        let n = batch * steps * channels;
        let x = slice(input, n, "input")?;
        let x = ArrayView3::from_shape((batch, steps, channels), x).map_err(|e| contract(e.to_string()))?;
        let k = h.net.spec.n_classes;
        if scores_len != batch * k {
            return Err(contract(format!(
                "scores holds {scores_len} values, need {}",
                batch * k
            )));
        }
        let out = slice_mut(scores, scores_len, "scores")?;
        let s = h
            .net
            .predict(&x.to_owned(), PassOptions::eval(h.epoch, discretize != 0))
            .map_err(lift)?;
        for (dst, src) in out.iter_mut().zip(s.iter()) {
            *dst = *src;
        }
        Ok(())
    })
}

/// Shift scale at `epoch`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cadad_anneal_scale(
    epoch: u32,
    s_max: f64,
    s_min: f64,
    e_decay: u32,
    out: *mut f64,
) -> CadadStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = delay::anneal_scale(epoch, s_max, s_min, e_decay).map_err(lift)?;
        Ok(())
    })
}

/// Slope-limited copy of a raw shift sequence; `input` and `output` hold `len` values.
///
/// # Safety
/// Both buffers must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn cadad_slope_limit(input: *const f64, output: *mut f64, len: usize) -> CadadStatus {
    guard(|| {
        let x = slice(input, len, "input")?;
        let y = delay::slope_limit(x);
        slice_mut(output, len, "output")?.copy_from_slice(&y);
        Ok(())
    })
}

/// Interpolated delayed read of a `[steps x channels]` signal with one delay
/// per step and channel.
///
/// # Safety
/// `signal`, `delays` and `output` must each hold `steps * channels` values.
#[no_mangle]
pub unsafe extern "C" fn cadad_delayed_read(
    signal: *const f64,
    delays: *const f64,
    steps: usize,
    channels: usize,
    output: *mut f64,
) -> CadadStatus {
    guard(|| {
        let n = steps * channels;
        let s = ArrayView2::from_shape((steps, channels), slice(signal, n, "signal")?)
            .map_err(|e| contract(e.to_string()))?;
        let d = ArrayView2::from_shape((steps, channels), slice(delays, n, "delays")?)
            .map_err(|e| contract(e.to_string()))?;
        let y = delay::delayed_read(s, d).map_err(lift)?;
        for (dst, src) in slice_mut(output, n, "output")?.iter_mut().zip(y.iter()) {
            *dst = *src;
        }
        Ok(())
    })
}
