//! C ABI over the environments and saved MPC controllers.
//!
//! Every entry point returns an [`EmpcStatus`]. On failure the message is
//! kept per thread and read back with [`empc_last_error_message`]. Handles
//! are opaque, owned by the caller, and released with the matching `_free`.
//! Panics never cross the boundary; they surface as `EMPC_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use energy_mpc::envs::{make_env, EnvState, Environment};
use energy_mpc::error::Error;
use energy_mpc::harness::SavedPolicy;
use energy_mpc::io::Checkpoint;
use energy_mpc::planner::MpcAgent;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmpcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    NonFinite = 4,
    Config = 5,
    Format = 6,
    Io = 7,
    Divergence = 8,
    Contract = 9,
    /// `empc_env_step` called before `empc_env_reset`.
    NotReset = 10,
    Panic = 11,
}

/// Environment instance holding its current state.
pub struct EmpcEnv {
    env: Arc<dyn Environment>,
    state: Option<EnvState>,
}

/// Receding-horizon controller rebuilt from a checkpoint.
pub struct EmpcAgent {
    agent: MpcAgent,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(EmpcStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Shape(_) => EmpcStatus::Shape,
            Error::NonFinite(_) | Error::Truncated { .. } => EmpcStatus::NonFinite,
            Error::Contract(_) => EmpcStatus::Contract,
            Error::Config(_) => EmpcStatus::Config,
            Error::Divergence { .. } => EmpcStatus::Divergence,
            Error::Format(_) => EmpcStatus::Format,
            Error::Io(_) => EmpcStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: EmpcStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EmpcStatus {
    let (status, msg) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => (EmpcStatus::Ok, String::new()),
        Ok(Err(Failure(s, m))) => (s, m),
        Err(p) => {
            let m = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            (EmpcStatus::Panic, format!("panic: {m}"))
        }
    };
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
    status
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(EmpcStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(EmpcStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(EmpcStatus::NullPointer, format!("{what} is null")))
}

unsafe fn mut_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(EmpcStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, want: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len != want {
        return Err(fail(EmpcStatus::Shape, format!("{what} has length {len}, expected {want}")));
    }
    if p.is_null() {
        return Err(fail(EmpcStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out(p: *mut f64, len: usize, src: &[f64], what: &str) -> Result<(), Failure> {
    if len != src.len() {
        return Err(fail(
            EmpcStatus::Shape,
            format!("{what} has length {len}, expected {}", src.len()),
        ));
    }
    if p.is_null() {
        return Err(fail(EmpcStatus::NullPointer, format!("{what} is null")));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), p, len);
    Ok(())
}

/// Copy the calling thread's last error message into `buf` as a
/// NUL-terminated string, truncating to `len - 1` bytes. Returns the full
/// message length excluding the terminator. Empty after a successful call.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn empc_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Create an environment by name (`pendulum`, `cartpole_swingup`,
/// `point_mass`).
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn empc_env_new(name: *const c_char, out: *mut *mut EmpcEnv) -> EmpcStatus {
    guard(|| {
        let out = mut_arg(out, "out")?;
        *out = ptr::null_mut();
        let env = make_env(str_arg(name, "name")?)?;
        *out = Box::into_raw(Box::new(EmpcEnv { env, state: None }));
        Ok(())
    })
}

/// # Safety
/// `env` must be null or a handle from [`empc_env_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn empc_env_free(env: *mut EmpcEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Observation and action widths plus the episode length.
///
/// # Safety
/// `env` must be a live handle; each output must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn empc_env_dims(
    env: *const EmpcEnv,
    state_dim: *mut usize,
    action_dim: *mut usize,
    episode_length: *mut usize,
) -> EmpcStatus {
    guard(|| {
        let spec = ref_arg(env, "env")?.env.spec();
        if let Some(p) = state_dim.as_mut() {
            *p = spec.state_dim;
        }
        if let Some(p) = action_dim.as_mut() {
            *p = spec.action_dim;
        }
        if let Some(p) = episode_length.as_mut() {
            *p = spec.horizon;
        }
        Ok(())
    })
}

/// Draw an initial state from `seed` and write its observation.
///
/// # Safety
/// `env` must be a live handle; `obs` must be valid for `obs_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn empc_env_reset(env: *mut EmpcEnv, seed: u64, obs: *mut f64, obs_len: usize) -> EmpcStatus {
    guard(|| {
        let h = mut_arg(env, "env")?;
        let state = h.env.reset(seed);
        write_out(obs, obs_len, &state.obs, "obs")?;
        h.state = Some(state);
        Ok(())
    })
}

/// Apply `action` (clipped to the bounds), write the next observation and
/// the reward of the transition, and set `done` once the episode length is
/// reached. The state is unchanged on error.
///
/// # Safety
/// `env` must be a live handle; the buffers must be valid for their
/// lengths; `reward` and `done` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn empc_env_step(
    env: *mut EmpcEnv,
    action: *const f64,
    action_len: usize,
    obs: *mut f64,
    obs_len: usize,
    reward: *mut f64,
    done: *mut bool,
) -> EmpcStatus {
    guard(|| {
        let h = mut_arg(env, "env")?;
        let spec = h.env.spec();
        let a = slice_arg(action, action_len, spec.action_dim, "action")?;
        if obs_len != spec.state_dim {
            return Err(fail(
                EmpcStatus::Shape,
                format!("obs has length {obs_len}, expected {}", spec.state_dim),
            ));
        }
        let state = h
            .state
            .as_ref()
            .ok_or_else(|| fail(EmpcStatus::NotReset, "environment has not been reset"))?;
        let out = h.env.step(state, a)?;
        let r = h.env.reward(&state.obs, &out.action);
        write_out(obs, obs_len, &out.state.obs, "obs")?;
        if let Some(p) = reward.as_mut() {
            *p = r;
        }
        if let Some(p) = done.as_mut() {
            *p = out.state.step >= spec.horizon;
        }
        h.state = Some(out.state);
        Ok(())
    })
}

/// Load a checkpoint written by `energy-mpc train` and build its MPC agent
/// for `env`. `seed` selects the planner's sampling streams.
///
/// # Safety
/// `path` must be a NUL-terminated string, `env` a live handle and `out`
/// valid for a write.
#[no_mangle]
pub unsafe extern "C" fn empc_agent_load(
    path: *const c_char,
    env: *const EmpcEnv,
    seed: u64,
    out: *mut *mut EmpcAgent,
) -> EmpcStatus {
    guard(|| {
        let out = mut_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let env = ref_arg(env, "env")?.env.clone();
        let ck = Checkpoint::load(path)?;
        let agent = SavedPolicy::from_checkpoint(&ck, env)?.agent(seed, 0)?;
        *out = Box::into_raw(Box::new(EmpcAgent { agent }));
        Ok(())
    })
}

/// # Safety
/// `agent` must be null or a handle from [`empc_agent_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn empc_agent_free(agent: *mut EmpcAgent) {
    if !agent.is_null() {
        drop(Box::from_raw(agent));
    }
}

/// Forget the warm start, for use at episode boundaries.
///
/// # Safety
/// `agent` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn empc_agent_reset(agent: *mut EmpcAgent) -> EmpcStatus {
    guard(|| {
        mut_arg(agent, "agent")?.agent.reset();
        Ok(())
    })
}

/// Plan from `obs` at `timestep` and write the first action.
///
/// # Safety
/// `agent` must be a live handle; the buffers must be valid for their
/// lengths.
#[no_mangle]
pub unsafe extern "C" fn empc_agent_act(
    agent: *mut EmpcAgent,
    obs: *const f64,
    obs_len: usize,
    timestep: u64,
    action: *mut f64,
    action_len: usize,
) -> EmpcStatus {
    guard(|| {
        let h = mut_arg(agent, "agent")?;
        let spec = h.agent.env.spec();
        let s = slice_arg(obs, obs_len, spec.state_dim, "obs")?;
        if action_len != spec.action_dim {
            return Err(fail(
                EmpcStatus::Shape,
                format!("action has length {action_len}, expected {}", spec.action_dim),
            ));
        }
        let (a, _) = h.agent.act(s, timestep)?;
        write_out(action, action_len, &a, "action")
    })
}
