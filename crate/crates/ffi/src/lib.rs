//! C ABI for the costgate proxy.
//!
//! A gateway is an opaque handle owning its own tokio runtime. Requests and
//! responses cross the boundary as UTF-8 JSON with the same shapes as the
//! HTTP API. Every fallible function returns a [`CostgateStatus`]; on failure
//! [`costgate_last_error`] describes the error for the calling thread.
//! Strings returned through `out` parameters must be released with
//! [`costgate_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::ptr;
use std::sync::Arc;

use costgate::catalog::Catalog;
use costgate::gateway::{Coordinator, GatewayConfig, ProxyRequest};
use costgate::{Error, TokenUsage};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostgateStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidJson = 3,
    BadRequest = 4,
    NotFound = 5,
    QueueFull = 6,
    ContextOverflow = 7,
    Upstream = 8,
    Config = 9,
    Internal = 10,
}

impl From<&Error> for CostgateStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::BadRequest(_) | Error::Precondition(_) | Error::CatalogMiss(_) | Error::Filter(_) => {
                CostgateStatus::BadRequest
            }
            Error::NotFound(_) => CostgateStatus::NotFound,
            Error::QueueFull(_) => CostgateStatus::QueueFull,
            Error::ContextOverflow { .. } => CostgateStatus::ContextOverflow,
            Error::Transport { .. } | Error::Escalation { .. } | Error::JudgeFormat(_) => CostgateStatus::Upstream,
            Error::Config(_) | Error::Catalog(_) => CostgateStatus::Config,
            _ => CostgateStatus::Internal,
        }
    }
}

/// Opaque gateway handle.
pub struct CostgateGateway {
    runtime: tokio::runtime::Runtime,
    coordinator: Arc<Coordinator>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(status: CostgateStatus, message: impl Into<String>) -> CostgateStatus {
    let msg = CString::new(message.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
    status
}

fn fail(e: &Error) -> CostgateStatus {
    set_error(e.into(), format!("{}: {e}", e.kind()))
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, CostgateStatus> {
    if p.is_null() {
        return Err(set_error(CostgateStatus::NullArgument, "null string argument"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| set_error(CostgateStatus::InvalidUtf8, "argument is not UTF-8"))
}

unsafe fn write_out(out: *mut *mut c_char, s: String) -> CostgateStatus {
    match CString::new(s) {
        Ok(c) => {
            *out = c.into_raw();
            CostgateStatus::Ok
        }
        Err(_) => set_error(CostgateStatus::Internal, "output contains a NUL byte"),
    }
}

macro_rules! try_ffi {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(status) => return status,
        }
    };
}

/// Creates a gateway from a JSON configuration (the TOML file's fields),
/// or defaults when `config_json` is null or empty. Models of providers
/// without credentials in the environment are served by the mock.
///
/// # Safety
/// `config_json` is null or a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn costgate_gateway_new(
    config_json: *const c_char,
    out: *mut *mut CostgateGateway,
) -> CostgateStatus {
    if out.is_null() {
        return set_error(CostgateStatus::NullArgument, "null out pointer");
    }
    *out = ptr::null_mut();
    let cfg: GatewayConfig = if config_json.is_null() {
        GatewayConfig::default()
    } else {
        let text = try_ffi!(read_str(config_json));
        if text.trim().is_empty() {
            GatewayConfig::default()
        } else {
            match serde_json::from_str(text) {
                Ok(c) => c,
                Err(e) => return set_error(CostgateStatus::InvalidJson, format!("config: {e}")),
            }
        }
    };
    let runtime = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(r) => r,
        Err(e) => return set_error(CostgateStatus::Internal, format!("runtime: {e}")),
    };
    let coordinator = {
        let _guard = runtime.enter();
        match cfg.build() {
            Ok(c) => c,
            Err(e) => return fail(&e),
        }
    };
    *out = Box::into_raw(Box::new(CostgateGateway { runtime, coordinator }));
    CostgateStatus::Ok
}

/// # Safety
/// `gateway` is null or a handle from [`costgate_gateway_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn costgate_gateway_free(gateway: *mut CostgateGateway) {
    if !gateway.is_null() {
        drop(Box::from_raw(gateway));
    }
}

unsafe fn gateway_ref<'a>(gateway: *const CostgateGateway) -> Result<&'a CostgateGateway, CostgateStatus> {
    gateway
        .as_ref()
        .ok_or_else(|| set_error(CostgateStatus::NullArgument, "null gateway"))
}

/// Serves one chat request (JSON as for `POST /v1/chat`) and writes the
/// response JSON to `out`. Blocks until the answer is ready.
///
/// # Safety
/// `gateway` is a live handle, `request_json` a NUL-terminated string and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn costgate_chat(
    gateway: *const CostgateGateway,
    request_json: *const c_char,
    out: *mut *mut c_char,
) -> CostgateStatus {
    let gw = try_ffi!(gateway_ref(gateway));
    let text = try_ffi!(read_str(request_json));
    if out.is_null() {
        return set_error(CostgateStatus::NullArgument, "null out pointer");
    }
    let req: ProxyRequest = match serde_json::from_str(text) {
        Ok(r) => r,
        Err(e) => return set_error(CostgateStatus::InvalidJson, format!("request: {e}")),
    };
    let coordinator = gw.coordinator.clone();
    match gw.runtime.block_on(coordinator.handle(req)) {
        Ok(resp) => match serde_json::to_string(&resp) {
            Ok(json) => write_out(out, json),
            Err(e) => set_error(CostgateStatus::Internal, e.to_string()),
        },
        Err(e) => fail(&e),
    }
}

/// Writes the stored record of `request_id` as JSON to `out`.
///
/// # Safety
/// As for [`costgate_chat`].
#[no_mangle]
pub unsafe extern "C" fn costgate_get_request(
    gateway: *const CostgateGateway,
    request_id: *const c_char,
    out: *mut *mut c_char,
) -> CostgateStatus {
    let gw = try_ffi!(gateway_ref(gateway));
    let id = try_ffi!(read_str(request_id));
    if out.is_null() {
        return set_error(CostgateStatus::NullArgument, "null out pointer");
    }
    match gw.coordinator.get_request(id) {
        Ok(rec) => match serde_json::to_string(&rec) {
            Ok(json) => write_out(out, json),
            Err(e) => set_error(CostgateStatus::Internal, e.to_string()),
        },
        Err(e) => fail(&e),
    }
}

/// Writes the session's records, oldest first, as a JSON array to `out`.
///
/// # Safety
/// As for [`costgate_chat`].
#[no_mangle]
pub unsafe extern "C" fn costgate_session(
    gateway: *const CostgateGateway,
    user_id: *const c_char,
    session_id: *const c_char,
    out: *mut *mut c_char,
) -> CostgateStatus {
    let gw = try_ffi!(gateway_ref(gateway));
    let user = try_ffi!(read_str(user_id));
    let session = try_ffi!(read_str(session_id));
    if out.is_null() {
        return set_error(CostgateStatus::NullArgument, "null out pointer");
    }
    match gw.coordinator.session(user, session) {
        Ok(entries) => match serde_json::to_string(&entries) {
            Ok(json) => write_out(out, json),
            Err(e) => set_error(CostgateStatus::Internal, e.to_string()),
        },
        Err(e) => fail(&e),
    }
}

/// Mock token count of `text`; 0 for null or non-UTF-8 input.
///
/// # Safety
/// `text` is null or a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn costgate_count_tokens(text: *const c_char) -> u64 {
    match read_str(text) {
        Ok(s) => costgate::count_tokens(s),
        Err(_) => 0,
    }
}

/// Exact cost in USD of a call to `model_id` in the built-in catalog,
/// written to `out` as a decimal string.
///
/// # Safety
/// `model_id` is a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn costgate_cost_of(
    model_id: *const c_char,
    input_tokens: u64,
    output_tokens: u64,
    out: *mut *mut c_char,
) -> CostgateStatus {
    let id = try_ffi!(read_str(model_id));
    if out.is_null() {
        return set_error(CostgateStatus::NullArgument, "null out pointer");
    }
    match Catalog::builtin().cost_of(TokenUsage::new(input_tokens, output_tokens), id) {
        Ok(usd) => write_out(out, usd.to_string()),
        Err(e) => fail(&e),
    }
}

/// Total chat input tokens of `n` messages under last-`k` context, given
/// per-message input and output token counts.
///
/// # Safety
/// `inputs` and `outputs` point to `n` values each (or are null when `n` is 0).
#[no_mangle]
pub unsafe extern "C" fn costgate_lastk_input_tokens(
    inputs: *const u64,
    outputs: *const u64,
    n: usize,
    k: usize,
) -> u64 {
    if n == 0 || inputs.is_null() || outputs.is_null() {
        return 0;
    }
    let ins = std::slice::from_raw_parts(inputs, n);
    let outs = std::slice::from_raw_parts(outputs, n);
    let msgs: Vec<TokenUsage> = ins.iter().zip(outs).map(|(&i, &o)| TokenUsage::new(i, o)).collect();
    costgate::lastk_input_tokens(&msgs, k)
}

/// Message of the last failure on this thread, or null. Valid until the
/// next failing call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn costgate_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` is null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn costgate_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
