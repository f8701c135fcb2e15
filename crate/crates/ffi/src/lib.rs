//! C ABI over the representation store and the foundation model.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `*_free`. Every fallible call returns an [`RtStatus`]; on failure
//! [`rt_last_error`] describes the most recent error on the calling thread.
//! Vector outputs follow one pattern: the caller passes a buffer and its
//! capacity, the library always writes the required length to `out_len`, and
//! returns `RT_STATUS_BUFFER_TOO_SMALL` without touching the buffer when it does not fit.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use reptransfer::lfm::{checkpoint, LfmModel, TapName};
use reptransfer::nncore::Tensor;
use reptransfer::repstore::{ReprKey, ReprKind, Store, StoreConfig};
use reptransfer::simstream::Domain;
use reptransfer::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RtStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    /// Write rejected because the kind is frozen or the write was anomalous.
    Frozen = 3,
    NotFound = 4,
    Integrity = 5,
    Io = 6,
    BufferTooSmall = 7,
    Panic = 8,
    Other = 9,
}

pub const RT_KIND_UR: u32 = 0;
pub const RT_KIND_IR: u32 = 1;
pub const RT_KIND_CR_USER: u32 = 2;
pub const RT_KIND_CR_ITEM: u32 = 3;

pub const RT_DOMAIN_CONTENT: u32 = 0;
pub const RT_DOMAIN_AD: u32 = 1;

/// Opaque representation store.
pub struct RtStore(Store);

/// Opaque pretrained foundation model.
pub struct RtLfm(LfmModel);

/// Store settings; start from [`rt_store_config_default`].
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct RtStoreConfig {
    pub tau: f64,
    pub threshold: f64,
    pub window: usize,
    pub min_fill: usize,
    pub aggregate_cr: bool,
    pub keep_snapshots: usize,
}

impl From<StoreConfig> for RtStoreConfig {
    fn from(c: StoreConfig) -> Self {
        RtStoreConfig {
            tau: c.tau,
            threshold: c.threshold,
            window: c.window,
            min_fill: c.min_fill,
            aggregate_cr: c.aggregate_cr,
            keep_snapshots: c.keep_snapshots,
        }
    }
}

impl From<RtStoreConfig> for StoreConfig {
    fn from(c: RtStoreConfig) -> Self {
        StoreConfig {
            tau: c.tau,
            threshold: c.threshold,
            window: c.window,
            min_fill: c.min_fill,
            aggregate_cr: c.aggregate_cr,
            keep_snapshots: c.keep_snapshots,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg).unwrap_or_else(|e| {
        let mut bytes = e.into_vec();
        bytes.retain(|&b| b != 0);
        CString::new(bytes).expect("nul bytes removed")
    });
    LAST_ERROR.with(|l| *l.borrow_mut() = Some(c));
}

struct Fail(RtStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Frozen(_) | Error::Numeric(_) => RtStatus::Frozen,
            Error::NotFound(_) | Error::MissingPrerequisite(_) => RtStatus::NotFound,
            Error::Integrity(_) => RtStatus::Integrity,
            Error::Io(_) => RtStatus::Io,
            Error::Config(_) | Error::Dimension(_) | Error::Lookup { .. } | Error::Tap(_) | Error::Domain(_) | Error::Clock { .. } => {
                RtStatus::InvalidArgument
            }
            _ => RtStatus::Other,
        };
        Fail(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(RtStatus::InvalidArgument, msg.into())
}

fn null(what: &str) -> Fail {
    Fail(RtStatus::NullArgument, format!("{what} is null"))
}

/// Runs `f`, turning errors and panics into a status plus the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RtStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p.downcast_ref::<&str>().map(|s| s.to_string()).or_else(|| p.downcast_ref::<String>().cloned());
            set_error(format!("panic: {}", msg.unwrap_or_default()));
            RtStatus::Panic
        }
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

fn kind(k: u32) -> Result<ReprKind, Fail> {
    u8::try_from(k).ok().and_then(ReprKind::from_byte).ok_or_else(|| invalid(format!("unknown representation kind {k}")))
}

fn domain(d: u32) -> Result<Domain, Fail> {
    match d {
        RT_DOMAIN_CONTENT => Ok(Domain::Content),
        RT_DOMAIN_AD => Ok(Domain::Ad),
        _ => Err(invalid(format!("unknown domain {d}"))),
    }
}

fn index(v: u64, what: &str) -> Result<usize, Fail> {
    usize::try_from(v).map_err(|_| invalid(format!("{what} {v} out of range")))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn copy_out(values: &[f64], out: *mut f64, cap: usize, out_len: *mut usize) -> Result<(), Fail> {
    if out_len.is_null() {
        return Err(null("out_len"));
    }
    *out_len = values.len();
    if values.len() > cap {
        return Err(Fail(RtStatus::BufferTooSmall, format!("need {} values, buffer holds {cap}", values.len())));
    }
    if !values.is_empty() {
        if out.is_null() {
            return Err(null("out"));
        }
        ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    }
    Ok(())
}

/// Message of the last failed call on this thread, or null if none failed.
/// Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rt_last_error() -> *const c_char {
    LAST_ERROR.with(|l| l.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn rt_store_config_default() -> RtStoreConfig {
    StoreConfig::default().into()
}

/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn rt_store_new(config: RtStoreConfig, out: *mut *mut RtStore) -> RtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let store = Store::new(config.into())?;
        *out = Box::into_raw(Box::new(RtStore(store)));
        Ok(())
    })
}

/// # Safety
/// `store` must come from [`rt_store_new`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn rt_store_free(store: *mut RtStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Writes `len` values under `(kind, entity_id)` at time `now`.
/// Returns `RT_STATUS_FROZEN` when the write is rejected by the monitor.
///
/// # Safety
/// `store` must be a live handle and `values` valid for `len` reads.
#[no_mangle]
pub unsafe extern "C" fn rt_store_put(store: *mut RtStore, kind_id: u32, entity_id: u64, values: *const f64, len: usize, now: f64) -> RtStatus {
    guard(|| {
        let s = handle_mut(store, "store")?;
        if values.is_null() {
            return Err(null("values"));
        }
        if len == 0 {
            return Err(invalid("empty representation"));
        }
        let v = Tensor::row_vector(std::slice::from_raw_parts(values, len).to_vec());
        s.0.put(ReprKey::new(kind(kind_id)?, entity_id), &v, now)?;
        Ok(())
    })
}

/// Reads the stored vector; `RT_STATUS_NOT_FOUND` when the key was never written.
///
/// # Safety
/// `store` must be a live handle, `out` valid for `cap` writes, `out_len` for one.
#[no_mangle]
pub unsafe extern "C" fn rt_store_get(store: *const RtStore, kind_id: u32, entity_id: u64, out: *mut f64, cap: usize, out_len: *mut usize) -> RtStatus {
    guard(|| {
        let s = handle(store, "store")?;
        let key = ReprKey::new(kind(kind_id)?, entity_id);
        let v = s.0.get(key).ok_or_else(|| Fail(RtStatus::NotFound, format!("no {} entry for entity {entity_id}", key.kind)))?;
        copy_out(v.data(), out, cap, out_len)
    })
}

/// # Safety
/// `store` must be a live handle and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn rt_store_is_frozen(store: *const RtStore, kind_id: u32, out: *mut bool) -> RtStatus {
    guard(|| {
        let s = handle(store, "store")?;
        let k = kind(kind_id)?;
        *handle_mut(out, "out")? = s.0.status(k).is_frozen();
        Ok(())
    })
}

/// Number of stored entries; 0 for a null handle.
///
/// # Safety
/// `store` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn rt_store_len(store: *const RtStore) -> usize {
    store.as_ref().map_or(0, |s| s.0.len())
}

/// Takes an in-memory snapshot; refused with `RT_STATUS_FROZEN` while any kind is frozen.
///
/// # Safety
/// `store` must be a live handle and `out_id` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn rt_store_snapshot(store: *mut RtStore, now: f64, out_id: *mut u64) -> RtStatus {
    guard(|| {
        let s = handle_mut(store, "store")?;
        let out = handle_mut(out_id, "out_id")?;
        *out = s.0.snapshot(now)?;
        Ok(())
    })
}

/// Restores snapshot `id` and unfreezes every kind.
///
/// # Safety
/// `store` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rt_store_rollback(store: *mut RtStore, id: u64) -> RtStatus {
    guard(|| {
        handle_mut(store, "store")?.0.rollback(id)?;
        Ok(())
    })
}

/// Loads a checkpoint file written by the `pretrain` command.
/// `RT_STATUS_INTEGRITY` on a corrupted or truncated file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn rt_lfm_load(path: *const c_char, out: *mut *mut RtLfm) -> RtStatus {
    guard(|| {
        let p = c_str(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let bytes = std::fs::read(p).map_err(|e| {
            let status = if e.kind() == std::io::ErrorKind::NotFound { RtStatus::NotFound } else { RtStatus::Io };
            Fail(status, format!("{p}: {e}"))
        })?;
        *out = Box::into_raw(Box::new(RtLfm(checkpoint::from_bytes(&bytes)?)));
        Ok(())
    })
}

/// Same as [`rt_lfm_load`] from an in-memory checkpoint.
///
/// # Safety
/// `bytes` must be valid for `len` reads and `out` for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn rt_lfm_load_bytes(bytes: *const u8, len: usize, out: *mut *mut RtLfm) -> RtStatus {
    guard(|| {
        if bytes.is_null() {
            return Err(null("bytes"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let model = checkpoint::from_bytes(std::slice::from_raw_parts(bytes, len))?;
        *out = Box::into_raw(Box::new(RtLfm(model)));
        Ok(())
    })
}

/// # Safety
/// `lfm` must come from a load call and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn rt_lfm_free(lfm: *mut RtLfm) {
    if !lfm.is_null() {
        drop(Box::from_raw(lfm));
    }
}

/// Click probability of `(user, item)` through the branch for `domain_id`.
///
/// # Safety
/// `lfm` must be a live handle and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn rt_lfm_predict(lfm: *const RtLfm, user: u64, item: u64, domain_id: u32, out: *mut f64) -> RtStatus {
    guard(|| {
        let m = handle(lfm, "lfm")?;
        let o = m.0.forward(index(user, "user")?, index(item, "item")?, domain(domain_id)?)?;
        *handle_mut(out, "out")? = o.prediction;
        Ok(())
    })
}

/// User tower output for `user`.
///
/// # Safety
/// As [`rt_store_get`] for the buffer arguments; `lfm` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rt_lfm_user_repr(lfm: *const RtLfm, user: u64, out: *mut f64, cap: usize, out_len: *mut usize) -> RtStatus {
    guard(|| {
        let m = handle(lfm, "lfm")?;
        copy_out(m.0.user_repr(&[index(user, "user")?])?.data(), out, cap, out_len)
    })
}

/// Item tower output for `item`.
///
/// # Safety
/// As [`rt_lfm_user_repr`].
#[no_mangle]
pub unsafe extern "C" fn rt_lfm_item_repr(lfm: *const RtLfm, item: u64, out: *mut f64, cap: usize, out_len: *mut usize) -> RtStatus {
    guard(|| {
        let m = handle(lfm, "lfm")?;
        copy_out(m.0.item_repr(&[index(item, "item")?])?.data(), out, cap, out_len)
    })
}

/// Ad-branch activation for `(user, item)` at `tap`, e.g. `"dnn/1"`, or
/// the penultimate layer when `tap` is null.
///
/// # Safety
/// `tap` must be null or NUL-terminated; otherwise as [`rt_lfm_user_repr`].
#[no_mangle]
pub unsafe extern "C" fn rt_lfm_extract_cr(
    lfm: *const RtLfm,
    user: u64,
    item: u64,
    tap: *const c_char,
    out: *mut f64,
    cap: usize,
    out_len: *mut usize,
) -> RtStatus {
    guard(|| {
        let m = handle(lfm, "lfm")?;
        let t = if tap.is_null() { m.0.config.penultimate_tap() } else { c_str(tap, "tap")?.parse::<TapName>()? };
        copy_out(m.0.extract_cr(index(user, "user")?, index(item, "item")?, t)?.data(), out, cap, out_len)
    })
}
