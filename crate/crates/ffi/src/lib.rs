//! C ABI over `acksiege`.
//!
//! Handles are opaque and owned by the caller once returned; free them with
//! the matching `*_free`. Every fallible call returns an [`AcksStatus`] and
//! writes its result through an out-pointer. On failure the message is kept
//! per thread and can be read with [`acks_last_error_message`]. Panics are
//! caught at the boundary and reported as [`AcksStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use acksiege::attack::CounterSemantics;
use acksiege::chain::{j_max, ChainModel};
use acksiege::cli::{cmd_analyze, cmd_simulate, CliError, CommonArgs, Loaded};
use acksiege::lds::{steady_state, SteadyState, SystemModel};
use acksiege::rational::parse_rational;
use acksiege::schedule::{build_offline_schedule, offline_j_closed_form, reduce_energy_budget};
use acksiege::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcksStatus {
    Ok = 0,
    /// Null pointer, bad UTF-8 or an out-of-range argument.
    InvalidArgument = 1,
    /// The model, budget or config was rejected.
    Config = 2,
    /// A solver or series failed to converge.
    Numerical = 3,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcksSemantics {
    EveryFlag = 0,
    ChargeOnLoss = 1,
}

impl From<AcksSemantics> for CounterSemantics {
    fn from(s: AcksSemantics) -> Self {
        match s {
            AcksSemantics::EveryFlag => CounterSemantics::EveryFlag,
            AcksSemantics::ChargeOnLoss => CounterSemantics::ChargeOnLoss,
        }
    }
}

/// A system model together with its steady-state covariance.
pub struct AcksModel {
    model: SystemModel,
    ss: SteadyState,
}

/// A solved attacked-detector Markov chain.
pub struct AcksChain {
    chain: ChainModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(AcksStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::DivergedSolver { .. } | Error::DivergingSeries(_) | Error::Analysis { .. } => {
                Failure(AcksStatus::Numerical, e.to_string())
            }
            _ => Failure(AcksStatus::Config, e.to_string()),
        }
    }
}

impl From<CliError> for Failure {
    fn from(e: CliError) -> Self {
        let status = match e {
            CliError::Numerical(_) => AcksStatus::Numerical,
            _ => AcksStatus::Config,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: &str) -> Failure {
    Failure(AcksStatus::InvalidArgument, msg.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AcksStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            AcksStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            AcksStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(invalid(&format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(&format!("{name} is not valid UTF-8")))
}

unsafe fn put<T>(out: *mut T, v: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(invalid("output pointer is null"));
    }
    out.write(v);
    Ok(())
}

unsafe fn model_ref<'a>(m: *const AcksModel) -> Result<&'a AcksModel, Failure> {
    m.as_ref().ok_or_else(|| invalid("model handle is null"))
}

unsafe fn chain_ref<'a>(c: *const AcksChain) -> Result<&'a AcksChain, Failure> {
    c.as_ref().ok_or_else(|| invalid("chain handle is null"))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn acks_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn acks_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds a scalar model (`Pi0 = Q`) and solves its steady state.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn acks_model_new_scalar(
    a: f64,
    c: f64,
    q: f64,
    r: f64,
    lambda: f64,
    out: *mut *mut AcksModel,
) -> AcksStatus {
    guard(|| {
        let model = SystemModel::scalar(a, c, q, r, lambda)?;
        let ss = steady_state(&model)?;
        put(out, Box::into_raw(Box::new(AcksModel { model, ss })))
    })
}

/// Builds a model from the `system` and `channel` sections of a JSON
/// experiment config.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn acks_model_from_json(config_json: *const c_char, out: *mut *mut AcksModel) -> AcksStatus {
    guard(|| {
        let text = str_arg(config_json, "config_json")?;
        let cfg = acksiege::ExperimentConfig::from_json(text)?;
        let model = cfg.system_model()?;
        let ss = steady_state(&model)?;
        put(out, Box::into_raw(Box::new(AcksModel { model, ss })))
    })
}

/// # Safety
/// `m` must be NULL or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn acks_model_free(m: *mut AcksModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// `Tr h^i(P̄)`; `i = 0` gives `Tr P̄`.
///
/// # Safety
/// `m` must be a live model handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn acks_model_h_trace(m: *const AcksModel, i: usize, out: *mut f64) -> AcksStatus {
    guard(|| {
        let m = model_ref(m)?;
        put(out, m.ss.h_power_trace(i))
    })
}

/// Average covariance trace when every flag is blocked.
///
/// # Safety
/// `m` must be a live model handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn acks_model_j_max(m: *const AcksModel, tail_tol: f64, out: *mut f64) -> AcksStatus {
    guard(|| {
        let m = model_ref(m)?;
        if !(tail_tol > 0.0) {
            return Err(invalid("tail_tol must be positive"));
        }
        put(out, j_max(&m.model, &m.ss, tail_tol)?.value)
    })
}

/// Average covariance trace of the optimal offline schedule for the budget
/// given as rational strings such as `"8"`, `"1"`, `"2"`.
///
/// # Safety
/// `m` must be a live model handle, the strings NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn acks_offline_j(
    m: *const AcksModel,
    delta_high: *const c_char,
    delta_low: *const c_char,
    psi: *const c_char,
    out: *mut f64,
) -> AcksStatus {
    guard(|| {
        let m = model_ref(m)?;
        let em = reduce_energy_budget(
            parse_rational(str_arg(delta_high, "delta_high")?)?,
            parse_rational(str_arg(delta_low, "delta_low")?)?,
            parse_rational(str_arg(psi, "psi")?)?,
        )?;
        put(
            out,
            offline_j_closed_form(&build_offline_schedule(&em), &m.ss, m.model.lambda()),
        )
    })
}

/// Builds and solves the chain for window `z0` and budget `r/t` at the
/// model's arrival rate. `(r, t) = (0, 1)` is the unattacked detector.
///
/// # Safety
/// `m` must be a live model handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn acks_chain_new(
    m: *const AcksModel,
    z0: u32,
    r: u64,
    t: u64,
    semantics: AcksSemantics,
    out: *mut *mut AcksChain,
) -> AcksStatus {
    guard(|| {
        let m = model_ref(m)?;
        let chain = ChainModel::new(z0, r, t, m.model.lambda(), semantics.into())?;
        put(out, Box::into_raw(Box::new(AcksChain { chain })))
    })
}

/// # Safety
/// `c` must be NULL or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn acks_chain_free(c: *mut AcksChain) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Number of chain states.
///
/// # Safety
/// `c` must be a live chain handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn acks_chain_len(c: *const AcksChain, out: *mut usize) -> AcksStatus {
    guard(|| put(out, chain_ref(c)?.chain.len()))
}

/// Copies the stationary distribution into `buf`, which must hold
/// `acks_chain_len` doubles. States are ordered by counter, then holding time.
///
/// # Safety
/// `c` must be a live chain handle and `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn acks_chain_stationary(c: *const AcksChain, buf: *mut f64, len: usize) -> AcksStatus {
    guard(|| {
        let c = chain_ref(c)?;
        if buf.is_null() {
            return Err(invalid("buf is null"));
        }
        if len != c.chain.len() {
            return Err(invalid(&format!(
                "buffer holds {len} values, chain has {}",
                c.chain.len()
            )));
        }
        ptr::copy_nonoverlapping(c.chain.pi_star.as_ptr(), buf, len);
        Ok(())
    })
}

/// Long-run average covariance trace of the chain under model `m`.
///
/// # Safety
/// Both handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn acks_chain_j(c: *const AcksChain, m: *const AcksModel, out: *mut f64) -> AcksStatus {
    guard(|| {
        let c = chain_ref(c)?;
        let m = model_ref(m)?;
        put(out, c.chain.chain_j(&m.ss))
    })
}

/// Per-step rates of sent flags and delivered flags.
///
/// # Safety
/// `c` must be a live chain handle and both outputs writable.
#[no_mangle]
pub unsafe extern "C" fn acks_chain_flag_rates(
    c: *const AcksChain,
    flag_rate: *mut f64,
    passed_flag_rate: *mut f64,
) -> AcksStatus {
    guard(|| {
        let rates = chain_ref(c)?.chain.flag_rates();
        if flag_rate.is_null() || passed_flag_rate.is_null() {
            return Err(invalid("output pointer is null"));
        }
        flag_rate.write(rates.flag_rate);
        passed_flag_rate.write(rates.passed_flag_rate);
        Ok(())
    })
}

fn into_c_string(s: String, out: *mut *mut c_char) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|_| invalid("result contains NUL"))?;
    // SAFETY: callers check `out` through `put`.
    unsafe { put(out, c.into_raw()) }
}

/// Full analysis of a JSON experiment config; writes the JSON report.
/// Free the result with [`acks_string_free`].
///
/// # Safety
/// `config_json` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn acks_analyze_json(config_json: *const c_char, out: *mut *mut c_char) -> AcksStatus {
    guard(|| {
        let loaded = Loaded::from_text(str_arg(config_json, "config_json")?, &CommonArgs::default())?;
        let (json, _) = cmd_analyze(&loaded)?;
        into_c_string(json, out)
    })
}

/// Monte Carlo run of a JSON experiment config; writes the JSON summary.
/// Free the result with [`acks_string_free`].
///
/// # Safety
/// `config_json` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn acks_simulate_json(config_json: *const c_char, out: *mut *mut c_char) -> AcksStatus {
    guard(|| {
        let loaded = Loaded::from_text(str_arg(config_json, "config_json")?, &CommonArgs::default())?;
        let (_, json) = cmd_simulate(&loaded)?;
        into_c_string(json, out)
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn acks_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
