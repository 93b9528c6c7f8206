//! C ABI for the dpe pipeline.
//!
//! Conventions:
//! - Every function returns a [`DpeStatus`]; out-parameters are written only
//!   on `DPE_STATUS_OK`.
//! - On any failure the thread-local message read by [`dpe_last_error`] is
//!   set; it stays valid until the same thread's next dpe call.
//! - Handles created by `dpe_config_*` must be released with
//!   [`dpe_config_free`]; strings returned through out-parameters with
//!   [`dpe_string_free`]. Null handles/strings are ignored by the free
//!   functions.
//! - Panics never unwind across the boundary; they surface as
//!   `DPE_STATUS_PANIC`.
//!
//! The committed header lives at `include/dpe.h`; regenerate with
//! `cbindgen --config cbindgen.toml --crate dpe-ffi --output include/dpe.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use dpe_core::coupling::{evaluate, CouplingEntry, CouplingMap, KlDirection, MeasurementChannel};
use dpe_core::gaussian::{kl_gaussian, GaussianMoments};
use dpe_core::pipeline::{
    cmd_cluster, cmd_couple, cmd_evaluate, cmd_ingest, cmd_report, cmd_segment, cmd_simulate,
};
use dpe_core::{PipelineConfig, PipelineError};

/// Status code returned by every dpe call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpeStatus {
    /// Success; out-parameters are valid.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The configuration failed to parse or validate.
    InvalidConfig = 3,
    /// Bad input data, a failed fleet query, or a stage run out of order.
    DataError = 4,
    /// A numerical failure (singular covariance, divergent sampler).
    NumericalError = 5,
    /// An operating-system I/O failure.
    IoError = 6,
    /// An internal panic was caught at the boundary.
    Panic = 7,
}

/// Measurement channel selector for `dpe_evaluate`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpeChannel {
    /// Gallons-per-mile equivalent; MPG is derived.
    Fuel = 0,
    /// Grams-per-mile equivalent; MPG is not applicable.
    Emission = 1,
}

impl From<DpeChannel> for MeasurementChannel {
    fn from(c: DpeChannel) -> Self {
        match c {
            DpeChannel::Fuel => MeasurementChannel::Fuel,
            DpeChannel::Emission => MeasurementChannel::Emission,
        }
    }
}

/// Opaque pipeline configuration handle.
pub struct DpeConfig {
    inner: PipelineConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).expect("NULs stripped");
    });
}

fn status_of(err: &PipelineError) -> DpeStatus {
    match err {
        PipelineError::Config(_) => DpeStatus::InvalidConfig,
        PipelineError::Io { .. } => DpeStatus::IoError,
        e if e.exit_code() == 4 => DpeStatus::NumericalError,
        _ => DpeStatus::DataError,
    }
}

/// Run `body` with panics converted to `DPE_STATUS_PANIC`.
fn guarded(body: impl FnOnce() -> DpeStatus) -> DpeStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("internal panic: {msg}"));
            DpeStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` must be null or a NUL-terminated string valid for reads.
unsafe fn required_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, DpeStatus> {
    if ptr.is_null() {
        set_error(&format!("{what} must not be null"));
        return Err(DpeStatus::NullArgument);
    }
    unsafe { CStr::from_ptr(ptr) }.to_str().map_err(|_| {
        set_error(&format!("{what} is not valid UTF-8"));
        DpeStatus::InvalidUtf8
    })
}

/// # Safety
/// `ptr` must be null or a valid `DpeConfig` handle.
unsafe fn required_config<'a>(ptr: *const DpeConfig) -> Result<&'a PipelineConfig, DpeStatus> {
    if ptr.is_null() {
        set_error("config must not be null");
        return Err(DpeStatus::NullArgument);
    }
    Ok(unsafe { &(*ptr).inner })
}

fn required_out<T>(ptr: *mut T, what: &str) -> Result<(), DpeStatus> {
    if ptr.is_null() {
        set_error(&format!("{what} must not be null"));
        return Err(DpeStatus::NullArgument);
    }
    Ok(())
}

/// Library version as a static NUL-terminated string; never null, never freed.
#[no_mangle]
pub extern "C" fn dpe_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Message for the calling thread's most recent failure. Never null; empty
/// before the first failure. Valid until this thread's next dpe call.
#[no_mangle]
pub extern "C" fn dpe_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Parse a configuration from JSON (all fields optional) and validate it.
/// On success writes a handle the caller must release with
/// `dpe_config_free`.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dpe_config_from_json(
    json: *const c_char,
    out: *mut *mut DpeConfig,
) -> DpeStatus {
    guarded(|| {
        if let Err(status) = required_out(out, "out") {
            return status;
        }
        let json = match unsafe { required_str(json, "json") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let config: PipelineConfig = match serde_json::from_str(json) {
            Ok(c) => c,
            Err(e) => {
                set_error(&format!("failed to parse config JSON: {e}"));
                return DpeStatus::InvalidConfig;
            }
        };
        if let Err(e) = config.validate() {
            set_error(&e.to_string());
            return DpeStatus::InvalidConfig;
        }
        unsafe { *out = Box::into_raw(Box::new(DpeConfig { inner: config })) };
        DpeStatus::Ok
    })
}

/// Create the default configuration rooted at `store_dir`.
///
/// # Safety
/// `store_dir` must be a NUL-terminated string; `out` must be valid for
/// writes.
#[no_mangle]
pub unsafe extern "C" fn dpe_config_default(
    store_dir: *const c_char,
    out: *mut *mut DpeConfig,
) -> DpeStatus {
    guarded(|| {
        if let Err(status) = required_out(out, "out") {
            return status;
        }
        let store_dir = match unsafe { required_str(store_dir, "store_dir") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let config = PipelineConfig {
            store_dir: PathBuf::from(store_dir),
            ..Default::default()
        };
        unsafe { *out = Box::into_raw(Box::new(DpeConfig { inner: config })) };
        DpeStatus::Ok
    })
}

/// Release a configuration handle. Null is a no-op.
///
/// # Safety
/// `config` must be null or an unreleased handle from `dpe_config_*`.
#[no_mangle]
pub unsafe extern "C" fn dpe_config_free(config: *mut DpeConfig) {
    if !config.is_null() {
        drop(unsafe { Box::from_raw(config) });
    }
}

fn run_stage(result: Result<impl Sized, PipelineError>) -> DpeStatus {
    match result {
        Ok(_) => DpeStatus::Ok,
        Err(e) => {
            let status = status_of(&e);
            set_error(&e.to_string());
            status
        }
    }
}

/// Generate the configured synthetic fleet (or the built-in demo fleet)
/// under `out_dir`. Writes the vehicle count to `n_vehicles` when non-null.
///
/// # Safety
/// `config` and `out_dir` as documented above; `n_vehicles` null or valid
/// for writes.
#[no_mangle]
pub unsafe extern "C" fn dpe_simulate(
    config: *const DpeConfig,
    out_dir: *const c_char,
    n_vehicles: *mut usize,
) -> DpeStatus {
    guarded(|| {
        let config = match unsafe { required_config(config) } {
            Ok(c) => c,
            Err(status) => return status,
        };
        let out_dir = match unsafe { required_str(out_dir, "out_dir") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        match cmd_simulate(config, Path::new(out_dir)) {
            Ok(n) => {
                if !n_vehicles.is_null() {
                    unsafe { *n_vehicles = n };
                }
                DpeStatus::Ok
            }
            Err(e) => {
                let status = status_of(&e);
                set_error(&e.to_string());
                status
            }
        }
    })
}

/// Ingest trip CSVs from `input_dir` into the artifact store.
///
/// # Safety
/// `config` and `input_dir` as documented above.
#[no_mangle]
pub unsafe extern "C" fn dpe_ingest(
    config: *const DpeConfig,
    input_dir: *const c_char,
    force: bool,
) -> DpeStatus {
    guarded(|| {
        let config = match unsafe { required_config(config) } {
            Ok(c) => c,
            Err(status) => return status,
        };
        let input_dir = match unsafe { required_str(input_dir, "input_dir") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        run_stage(cmd_ingest(config, Path::new(input_dir), force))
    })
}

/// Segment every ingested vehicle into driving primitives.
///
/// # Safety
/// `config` as documented above.
#[no_mangle]
pub unsafe extern "C" fn dpe_segment(config: *const DpeConfig, force: bool) -> DpeStatus {
    guarded(|| {
        let config = match unsafe { required_config(config) } {
            Ok(c) => c,
            Err(status) => return status,
        };
        run_stage(cmd_segment(config, force))
    })
}

/// Cluster primitives across the fleet. A non-null `eval_vehicle` is held
/// out of training, as required before coupling against it.
///
/// # Safety
/// `config` as documented above; `eval_vehicle` null or a NUL-terminated
/// string.
#[no_mangle]
pub unsafe extern "C" fn dpe_cluster(
    config: *const DpeConfig,
    eval_vehicle: *const c_char,
    force: bool,
) -> DpeStatus {
    guarded(|| {
        let config = match unsafe { required_config(config) } {
            Ok(c) => c,
            Err(status) => return status,
        };
        let eval = if eval_vehicle.is_null() {
            None
        } else {
            match unsafe { required_str(eval_vehicle, "eval_vehicle") } {
                Ok(s) => Some(s),
                Err(status) => return status,
            }
        };
        run_stage(cmd_cluster(config, eval, force))
    })
}

/// Couple each ranked cluster to the evaluated vehicle's KL-nearest
/// primitive.
///
/// # Safety
/// `config` and `eval_vehicle` as documented above.
#[no_mangle]
pub unsafe extern "C" fn dpe_couple(
    config: *const DpeConfig,
    eval_vehicle: *const c_char,
    force: bool,
) -> DpeStatus {
    guarded(|| {
        let config = match unsafe { required_config(config) } {
            Ok(c) => c,
            Err(status) => return status,
        };
        let eval = match unsafe { required_str(eval_vehicle, "eval_vehicle") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        run_stage(cmd_couple(config, eval, force))
    })
}

/// Compute E = Σ ω_i·E_i for the evaluated vehicle. Writes E to `e_out`
/// and MPG to `mpg_out` (NaN when not applicable) when the pointers are
/// non-null.
///
/// # Safety
/// `config` and `eval_vehicle` as documented above; `e_out` and `mpg_out`
/// null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dpe_evaluate(
    config: *const DpeConfig,
    eval_vehicle: *const c_char,
    channel: DpeChannel,
    force: bool,
    e_out: *mut f64,
    mpg_out: *mut f64,
) -> DpeStatus {
    guarded(|| {
        let config = match unsafe { required_config(config) } {
            Ok(c) => c,
            Err(status) => return status,
        };
        let eval = match unsafe { required_str(eval_vehicle, "eval_vehicle") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        match cmd_evaluate(config, eval, channel.into(), force) {
            Ok(artifact) => {
                if !e_out.is_null() {
                    unsafe { *e_out = artifact.result.e };
                }
                if !mpg_out.is_null() {
                    unsafe { *mpg_out = artifact.result.mpg.unwrap_or(f64::NAN) };
                }
                DpeStatus::Ok
            }
            Err(e) => {
                let status = status_of(&e);
                set_error(&e.to_string());
                status
            }
        }
    })
}

/// Write the report files. On success writes the report directory path to
/// `report_dir_out` (release with `dpe_string_free`).
///
/// # Safety
/// `config` and `eval_vehicle` as documented above; `report_dir_out` null
/// or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dpe_report(
    config: *const DpeConfig,
    eval_vehicle: *const c_char,
    force: bool,
    report_dir_out: *mut *mut c_char,
) -> DpeStatus {
    guarded(|| {
        let config = match unsafe { required_config(config) } {
            Ok(c) => c,
            Err(status) => return status,
        };
        let eval = match unsafe { required_str(eval_vehicle, "eval_vehicle") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        match cmd_report(config, eval, force) {
            Ok(dir) => {
                if !report_dir_out.is_null() {
                    let text = dir.to_string_lossy().replace('\0', " ");
                    let c = CString::new(text).expect("NULs stripped");
                    unsafe { *report_dir_out = c.into_raw() };
                }
                DpeStatus::Ok
            }
            Err(e) => {
                let status = status_of(&e);
                set_error(&e.to_string());
                status
            }
        }
    })
}

/// Release a string returned through an out-parameter. Null is a no-op.
///
/// # Safety
/// `s` must be null or an unreleased string from a dpe out-parameter.
#[no_mangle]
pub unsafe extern "C" fn dpe_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// KL(p ‖ q) between two 2-D Gaussians. `mu_*` point to 2 doubles, and
/// `sigma_*` to 4 doubles in row-major order; covariances are floored
/// before inversion, exactly as in coupling.
///
/// # Safety
/// `mu_p`/`mu_q` must point to 2 readable doubles, `sigma_p`/`sigma_q` to
/// 4; `kl_out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dpe_kl_gaussian(
    mu_p: *const f64,
    sigma_p: *const f64,
    mu_q: *const f64,
    sigma_q: *const f64,
    kl_out: *mut f64,
) -> DpeStatus {
    guarded(|| {
        for (ptr, what) in [
            (mu_p, "mu_p"),
            (sigma_p, "sigma_p"),
            (mu_q, "mu_q"),
            (sigma_q, "sigma_q"),
        ] {
            if ptr.is_null() {
                set_error(&format!("{what} must not be null"));
                return DpeStatus::NullArgument;
            }
        }
        if let Err(status) = required_out(kl_out, "kl_out") {
            return status;
        }
        let moments = |mu: *const f64, sigma: *const f64| unsafe {
            GaussianMoments::new(
                [*mu, *mu.add(1)],
                [[*sigma, *sigma.add(1)], [*sigma.add(2), *sigma.add(3)]],
            )
        };
        match kl_gaussian(&moments(mu_p, sigma_p), &moments(mu_q, sigma_q)) {
            Ok(kl) => {
                unsafe { *kl_out = kl };
                DpeStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                DpeStatus::NumericalError
            }
        }
    })
}

/// Weighted score E = Σ ω_i·E_i over `n` clusters; weights are
/// renormalized to a convex combination. Writes E to `e_out`.
///
/// # Safety
/// `omega` and `e_values` must point to `n` readable doubles; `e_out` must
/// be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dpe_evaluate_weighted(
    omega: *const f64,
    e_values: *const f64,
    n: usize,
    e_out: *mut f64,
) -> DpeStatus {
    guarded(|| {
        if omega.is_null() || e_values.is_null() {
            set_error("omega and e_values must not be null");
            return DpeStatus::NullArgument;
        }
        if let Err(status) = required_out(e_out, "e_out") {
            return status;
        }
        if n == 0 {
            set_error("n must be >= 1");
            return DpeStatus::DataError;
        }
        let omega = unsafe { std::slice::from_raw_parts(omega, n) };
        let e_values = unsafe { std::slice::from_raw_parts(e_values, n) };
        let map = CouplingMap {
            direction: KlDirection::ClusterToPrimitive,
            entries: (0..n)
                .map(|i| CouplingEntry {
                    cluster: i,
                    rank: i,
                    primitive_label: i,
                    kl: 0.0,
                })
                .collect(),
        };
        match evaluate(&map, omega, e_values, MeasurementChannel::Emission) {
            Ok(result) => {
                unsafe { *e_out = result.e };
                DpeStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                DpeStatus::DataError
            }
        }
    })
}
