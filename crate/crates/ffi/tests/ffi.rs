use std::ffi::{c_char, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use energy_mpc::envs::make_env;
use energy_mpc::io::Checkpoint;
use energy_mpc_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 512];
    let n = unsafe { empc_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(511)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

fn new_env(name: &str) -> *mut EmpcEnv {
    let name = CString::new(name).unwrap();
    let mut env = ptr::null_mut();
    assert_eq!(unsafe { empc_env_new(name.as_ptr(), &mut env) }, EmpcStatus::Ok);
    assert!(!env.is_null());
    env
}

#[test]
fn unknown_environment_is_a_config_error() {
    let name = CString::new("acrobot").unwrap();
    let mut env = ptr::null_mut();
    let s = unsafe { empc_env_new(name.as_ptr(), &mut env) };
    assert_eq!(s, EmpcStatus::Config);
    assert!(env.is_null());
    assert!(last_error().contains("acrobot"));
}

#[test]
fn null_arguments_are_reported() {
    let mut env = ptr::null_mut();
    assert_eq!(unsafe { empc_env_new(ptr::null(), &mut env) }, EmpcStatus::NullPointer);
    let mut obs = [0.0; 3];
    assert_eq!(
        unsafe { empc_env_reset(ptr::null_mut(), 0, obs.as_mut_ptr(), 3) },
        EmpcStatus::NullPointer
    );
    unsafe {
        empc_env_free(ptr::null_mut());
        empc_agent_free(ptr::null_mut());
    }
}

#[test]
fn error_message_truncates_and_clears() {
    let name = CString::new("nope").unwrap();
    let mut env = ptr::null_mut();
    unsafe { empc_env_new(name.as_ptr(), &mut env) };
    let full = unsafe { empc_last_error_message(ptr::null_mut(), 0) };
    assert!(full > 4);
    let mut buf = [1 as c_char; 4];
    assert_eq!(unsafe { empc_last_error_message(buf.as_mut_ptr(), 4) }, full);
    assert_eq!(buf[3], 0);

    let env = new_env("pendulum");
    assert_eq!(unsafe { empc_last_error_message(ptr::null_mut(), 0) }, 0);
    unsafe { empc_env_free(env) };
}

#[test]
fn stepping_matches_the_library() {
    let env = new_env("pendulum");
    let (mut sd, mut ad, mut len) = (0, 0, 0);
    assert_eq!(unsafe { empc_env_dims(env, &mut sd, &mut ad, &mut len) }, EmpcStatus::Ok);
    assert_eq!((sd, ad, len), (3, 1, 200));

    let mut obs = [0.0; 3];
    let a = [0.0];
    let mut r = 0.0;
    let mut done = false;
    let s = unsafe { empc_env_step(env, a.as_ptr(), 1, obs.as_mut_ptr(), 3, &mut r, &mut done) };
    assert_eq!(s, EmpcStatus::NotReset);

    assert_eq!(unsafe { empc_env_reset(env, 7, obs.as_mut_ptr(), 3) }, EmpcStatus::Ok);
    let lib = make_env("pendulum").unwrap();
    let mut state = lib.reset(7);
    assert_eq!(obs.to_vec(), state.obs);

    for t in 0..200 {
        let a = [3.0 * ((t as f64) * 0.1).sin()];
        let s = unsafe { empc_env_step(env, a.as_ptr(), 1, obs.as_mut_ptr(), 3, &mut r, &mut done) };
        assert_eq!(s, EmpcStatus::Ok);
        let out = lib.step(&state, &a).unwrap();
        assert_eq!(r.to_bits(), lib.reward(&state.obs, &out.action).to_bits());
        state = out.state;
        assert_eq!(obs.to_vec(), state.obs);
        assert_eq!(done, t == 199);
    }
    unsafe { empc_env_free(env) };
}

#[test]
fn wrong_lengths_leave_the_state_alone() {
    let env = new_env("point_mass");
    let mut obs = [0.0; 4];
    assert_eq!(unsafe { empc_env_reset(env, 1, obs.as_mut_ptr(), 3) }, EmpcStatus::Shape);
    assert_eq!(unsafe { empc_env_reset(env, 1, obs.as_mut_ptr(), 4) }, EmpcStatus::Ok);
    let before = obs;
    let a = [0.5];
    let s = unsafe { empc_env_step(env, a.as_ptr(), 1, obs.as_mut_ptr(), 4, ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(s, EmpcStatus::Shape);
    assert_eq!(obs, before);
    let nan = [f64::NAN, 0.0];
    let s = unsafe { empc_env_step(env, nan.as_ptr(), 2, obs.as_mut_ptr(), 4, ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(s, EmpcStatus::NonFinite);
    unsafe { empc_env_free(env) };
}

fn oracle_checkpoint(dir: &Path, env: &str) -> CString {
    let meta = serde_json_meta(env);
    let ck = Checkpoint {
        meta: Some(meta),
        ..Checkpoint::default()
    };
    let path = dir.join("oracle.bin");
    ck.save(&path).unwrap();
    CString::new(path.to_str().unwrap()).unwrap()
}

fn serde_json_meta(env: &str) -> String {
    format!(
        r#"{{"env":"{env}","regularizer":"none","cost_multiplier":0.0,"planner":{{"horizon":10,"population":60,"elites":6,"iterations":3}}}}"#
    )
}

#[test]
fn agent_from_checkpoint_drives_point_mass_home() {
    let dir = tempfile::tempdir().unwrap();
    let path = oracle_checkpoint(dir.path(), "point_mass");
    let env = new_env("point_mass");
    let mut agent = ptr::null_mut();
    let s = unsafe { empc_agent_load(path.as_ptr(), env, 3, &mut agent) };
    assert_eq!(s, EmpcStatus::Ok, "{}", last_error());

    let mut obs = [0.0; 4];
    assert_eq!(unsafe { empc_env_reset(env, 11, obs.as_mut_ptr(), 4) }, EmpcStatus::Ok);
    let start = (obs[0] * obs[0] + obs[1] * obs[1]).sqrt();
    let mut a = [0.0; 2];
    for t in 0..60 {
        assert_eq!(unsafe { empc_agent_act(agent, obs.as_ptr(), 4, t, a.as_mut_ptr(), 2) }, EmpcStatus::Ok);
        let s = unsafe { empc_env_step(env, a.as_ptr(), 2, obs.as_mut_ptr(), 4, ptr::null_mut(), ptr::null_mut()) };
        assert_eq!(s, EmpcStatus::Ok);
    }
    let end = (obs[0] * obs[0] + obs[1] * obs[1]).sqrt();
    assert!(end < 0.5 * start.max(0.2), "distance {start} -> {end}");

    assert_eq!(unsafe { empc_agent_reset(agent) }, EmpcStatus::Ok);
    let short = [0.0; 3];
    assert_eq!(
        unsafe { empc_agent_act(agent, short.as_ptr(), 3, 0, a.as_mut_ptr(), 2) },
        EmpcStatus::Shape
    );
    unsafe {
        empc_agent_free(agent);
        empc_env_free(env);
    }
}

#[test]
fn agent_rejects_a_checkpoint_for_another_environment() {
    let dir = tempfile::tempdir().unwrap();
    let path = oracle_checkpoint(dir.path(), "cartpole_swingup");
    let env = new_env("pendulum");
    let mut agent = ptr::null_mut();
    assert_eq!(unsafe { empc_agent_load(path.as_ptr(), env, 0, &mut agent) }, EmpcStatus::Config);
    assert!(agent.is_null());

    let missing = CString::new(dir.path().join("missing.bin").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { empc_agent_load(missing.as_ptr(), env, 0, &mut agent) }, EmpcStatus::Io);

    let garbage = dir.path().join("garbage.bin");
    std::fs::write(&garbage, b"not a model").unwrap();
    let garbage = CString::new(garbage.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { empc_agent_load(garbage.as_ptr(), env, 0, &mut agent) }, EmpcStatus::Format);
    unsafe { empc_env_free(env) };
}

#[test]
fn header_is_valid_c_and_cpp() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/energy_mpc.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in [
        "empc_last_error_message",
        "empc_env_new",
        "empc_env_free",
        "empc_env_dims",
        "empc_env_reset",
        "empc_env_step",
        "empc_agent_load",
        "empc_agent_free",
        "empc_agent_reset",
        "empc_agent_act",
    ] {
        assert!(text.contains(&format!("{f}(")), "{f} missing from the header");
    }
    for (cc, lang) in [("cc", "c"), ("c++", "c++")] {
        let Ok(out) = Command::new(cc)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg(&header)
            .output()
        else {
            continue;
        };
        assert!(out.status.success(), "{cc}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
