//! C ABI over the evolgym environments.
//!
//! Every fallible function returns an [`EvolgymStatus`]. On anything other
//! than `EVOLGYM_STATUS_OK` a message is available from
//! [`evolgym_last_error`] on the same thread until the next call. Strings
//! handed out through `out` parameters are owned by the caller and released
//! with [`evolgym_string_free`]. Structured results are JSON with the same
//! layout as the HTTP protocol bodies.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use evolgym::dataset::InstructionSet;
use evolgym::envs;
use evolgym::policy::react::{parse_react, ParseError};
use evolgym::protocol::wire::CreateEnvResponse;
use evolgym::protocol::{ProtocolError, SessionManager};
use evolgym::trajectory::binarize_reward;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvolgymStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    UnknownEnv = 3,
    UnknownInstruction = 4,
    UnknownSession = 5,
    SessionDone = 6,
    BadRequest = 7,
    /// Agent output without a usable `Action:` block.
    ParseError = 8,
    /// A number outside the accepted range.
    DomainError = 9,
    /// A bug on this side of the boundary, including caught panics.
    Internal = 10,
}

/// Opaque session table over the built-in environments at their default
/// difficulties. Sessions are created from seeds.
pub struct EvolgymEnv {
    manager: SessionManager,
}

struct Failure(EvolgymStatus, String);

impl From<ProtocolError> for Failure {
    fn from(e: ProtocolError) -> Self {
        let status = match e {
            ProtocolError::UnknownEnv(_) => EvolgymStatus::UnknownEnv,
            ProtocolError::UnknownInstruction(_) => EvolgymStatus::UnknownInstruction,
            ProtocolError::UnknownSession(_) => EvolgymStatus::UnknownSession,
            ProtocolError::SessionDone(_) => EvolgymStatus::SessionDone,
            ProtocolError::BadRequest(_) => EvolgymStatus::BadRequest,
            ProtocolError::Internal(_) => EvolgymStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

impl From<ParseError> for Failure {
    fn from(e: ParseError) -> Self {
        Failure(EvolgymStatus::ParseError, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: Option<String>) {
    let c = msg.map(|m| CString::new(m.replace('\0', " ")).expect("nul bytes replaced"));
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

/// Runs `f`, records its error and turns panics into `Internal`.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EvolgymStatus {
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(Failure(EvolgymStatus::Internal, msg))
    });
    match result {
        Ok(()) => {
            set_last_error(None);
            EvolgymStatus::Ok
        }
        Err(Failure(status, msg)) => {
            set_last_error(Some(msg));
            status
        }
    }
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(EvolgymStatus::NullArgument, format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(EvolgymStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

unsafe fn env<'a>(h: *const EvolgymEnv) -> Result<&'a EvolgymEnv, Failure> {
    h.as_ref()
        .ok_or_else(|| Failure(EvolgymStatus::NullArgument, "`env` is null".into()))
}

unsafe fn hand_out(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(EvolgymStatus::NullArgument, "`out` is null".into()));
    }
    let c = CString::new(s).map_err(|_| Failure(EvolgymStatus::Internal, "result contains a nul byte".into()))?;
    *out = c.into_raw();
    Ok(())
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String, Failure> {
    serde_json::to_string(v).map_err(|e| Failure(EvolgymStatus::Internal, e.to_string()))
}

/// Message for the last failed call on this thread, or null after a
/// successful one. Owned by the library.
#[no_mangle]
pub extern "C" fn evolgym_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn evolgym_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version, owned by the library.
#[no_mangle]
pub extern "C" fn evolgym_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// A new session table, or null if construction failed.
#[no_mangle]
pub extern "C" fn evolgym_env_new() -> *mut EvolgymEnv {
    let made = catch_unwind(|| {
        let instructions = InstructionSet::new(Vec::new()).expect("an empty set is valid");
        Box::new(EvolgymEnv {
            manager: SessionManager::new(envs::default_registry(), instructions),
        })
    });
    made.map_or(ptr::null_mut(), Box::into_raw)
}

/// # Safety
/// `env` must be null or a handle from [`evolgym_env_new`], freed once.
#[no_mangle]
pub unsafe extern "C" fn evolgym_env_free(env: *mut EvolgymEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Starts a session of `env_name` from `seed`. `out` receives
/// `{"session_id", "system_prompt", "observation"}`.
///
/// # Safety
/// Pointers must be valid; strings nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn evolgym_env_create(
    env: *const EvolgymEnv,
    env_name: *const c_char,
    seed: u64,
    out: *mut *mut c_char,
) -> EvolgymStatus {
    guard(|| {
        let e = self::env(env)?;
        let c = e.manager.create(text(env_name, "env_name")?, None, Some(seed))?;
        let body = CreateEnvResponse {
            session_id: c.session_id,
            system_prompt: c.system_prompt,
            observation: c.observation,
        };
        hand_out(out, to_json(&body)?)
    })
}

/// Applies `action`. `out` receives
/// `{"observation", "step_reward", "reward", "done", "available_actions"}`.
///
/// # Safety
/// Pointers must be valid; strings nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn evolgym_env_step(
    env: *const EvolgymEnv,
    session_id: *const c_char,
    action: *const c_char,
    out: *mut *mut c_char,
) -> EvolgymStatus {
    guard(|| {
        let r = self::env(env)?
            .manager
            .step(text(session_id, "session_id")?, text(action, "action")?)?;
        hand_out(out, to_json(&r)?)
    })
}

/// `out` receives the current observation as plain text.
///
/// # Safety
/// Pointers must be valid; strings nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn evolgym_env_observation(
    env: *const EvolgymEnv,
    session_id: *const c_char,
    out: *mut *mut c_char,
) -> EvolgymStatus {
    guard(|| {
        let o = self::env(env)?.manager.observation(text(session_id, "session_id")?)?;
        hand_out(out, o)
    })
}

/// `out` receives the available actions as a JSON array of strings.
///
/// # Safety
/// Pointers must be valid; strings nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn evolgym_env_available_actions(
    env: *const EvolgymEnv,
    session_id: *const c_char,
    out: *mut *mut c_char,
) -> EvolgymStatus {
    guard(|| {
        let a = self::env(env)?
            .manager
            .available_actions(text(session_id, "session_id")?)?;
        hand_out(out, to_json(&a)?)
    })
}

/// Restarts the session's episode; `out` receives the first observation.
///
/// # Safety
/// Pointers must be valid; strings nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn evolgym_env_reset(
    env: *const EvolgymEnv,
    session_id: *const c_char,
    out: *mut *mut c_char,
) -> EvolgymStatus {
    guard(|| {
        let o = self::env(env)?.manager.reset(text(session_id, "session_id")?)?;
        hand_out(out, o)
    })
}

/// Drops a session. Unknown ids are ignored.
///
/// # Safety
/// Pointers must be valid; strings nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn evolgym_env_close(env: *const EvolgymEnv, session_id: *const c_char) -> EvolgymStatus {
    guard(|| {
        self::env(env)?.manager.close(text(session_id, "session_id")?);
        Ok(())
    })
}

/// Number of open sessions, or 0 for a null handle.
///
/// # Safety
/// `env` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn evolgym_env_session_count(env: *const EvolgymEnv) -> usize {
    env.as_ref().map_or(0, |e| e.manager.session_count())
}

/// Splits agent output into its last thought and action. `out` receives
/// `{"thought", "action"}`.
///
/// # Safety
/// Pointers must be valid; strings nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn evolgym_parse_react(text_in: *const c_char, out: *mut *mut c_char) -> EvolgymStatus {
    guard(|| {
        let parsed = parse_react(text(text_in, "text")?)?;
        hand_out(out, to_json(&parsed)?)
    })
}

/// Writes 1 to `out` if `reward` is 1 and 0 otherwise. Rewards outside
/// [0, 1] are a domain error.
///
/// # Safety
/// `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn evolgym_binarize_reward(reward: f64, out: *mut u8) -> EvolgymStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(EvolgymStatus::NullArgument, "`out` is null".into()));
        }
        *out = binarize_reward(reward).map_err(|e| Failure(EvolgymStatus::DomainError, e.to_string()))?;
        Ok(())
    })
}

/// Scores `guess` against `target`, both five lowercase ASCII letters.
/// `out` receives the marks as `"b y g b b"`.
///
/// # Safety
/// Pointers must be valid; strings nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn evolgym_wordle_feedback(
    target: *const c_char,
    guess: *const c_char,
    out: *mut *mut c_char,
) -> EvolgymStatus {
    guard(|| {
        let (t, g) = (text(target, "target")?, text(guess, "guess")?);
        for (name, w) in [("target", t), ("guess", g)] {
            if w.len() != 5 || !w.bytes().all(|b| b.is_ascii_lowercase()) {
                return Err(Failure(
                    EvolgymStatus::BadRequest,
                    format!("`{name}` must be five lowercase letters, got `{w}`"),
                ));
            }
        }
        hand_out(out, envs::wordle::render_feedback(&envs::wordle::wordle_feedback(t, g)))
    })
}
