//! The exported functions through raw pointers, and a C program built
//! against the generated header.

use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use evolgym_ffi::*;
use serde_json::Value;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

/// Takes ownership of a returned string.
unsafe fn take(p: *mut c_char) -> String {
    assert!(!p.is_null());
    let s = CStr::from_ptr(p).to_str().unwrap().to_string();
    evolgym_string_free(p);
    s
}

fn last_error() -> Option<String> {
    let p = evolgym_last_error();
    (!p.is_null()).then(|| unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string())
}

#[test]
fn a_maze_session_runs_through_the_handle() {
    unsafe {
        let env = evolgym_env_new();
        assert!(!env.is_null());
        let mut out = ptr::null_mut();
        assert_eq!(
            evolgym_env_create(env, c("maze").as_ptr(), 11, &mut out),
            EvolgymStatus::Ok
        );
        let created: Value = serde_json::from_str(&take(out)).unwrap();
        let sid = c(created["session_id"].as_str().unwrap());
        assert_eq!(evolgym_env_session_count(env), 1);

        assert_eq!(
            evolgym_env_available_actions(env, sid.as_ptr(), &mut out),
            EvolgymStatus::Ok
        );
        let actions: Vec<String> = serde_json::from_str(&take(out)).unwrap();
        assert!(!actions.is_empty());

        assert_eq!(
            evolgym_env_step(env, sid.as_ptr(), c(&actions[0]).as_ptr(), &mut out),
            EvolgymStatus::Ok
        );
        let step: Value = serde_json::from_str(&take(out)).unwrap();
        for key in ["observation", "step_reward", "reward", "done", "available_actions"] {
            assert!(step.get(key).is_some(), "{key} missing from {step}");
        }
        assert_eq!(evolgym_env_observation(env, sid.as_ptr(), &mut out), EvolgymStatus::Ok);
        assert_eq!(take(out), step["observation"].as_str().unwrap());

        assert_eq!(evolgym_env_reset(env, sid.as_ptr(), &mut out), EvolgymStatus::Ok);
        assert_eq!(take(out), created["observation"].as_str().unwrap());
        assert_eq!(last_error(), None);

        assert_eq!(evolgym_env_close(env, sid.as_ptr()), EvolgymStatus::Ok);
        assert_eq!(evolgym_env_session_count(env), 0);
        evolgym_env_free(env);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let env = evolgym_env_new();
        let mut out = ptr::null_mut();
        assert_eq!(
            evolgym_env_create(env, c("chess").as_ptr(), 1, &mut out),
            EvolgymStatus::UnknownEnv
        );
        assert!(out.is_null());
        assert!(last_error().unwrap().contains("chess"));
        assert_eq!(
            evolgym_env_step(env, c("nope").as_ptr(), c("move up").as_ptr(), &mut out),
            EvolgymStatus::UnknownSession
        );
        assert_eq!(
            evolgym_env_create(ptr::null(), c("maze").as_ptr(), 1, &mut out),
            EvolgymStatus::NullArgument
        );
        assert_eq!(
            evolgym_env_create(env, ptr::null(), 1, &mut out),
            EvolgymStatus::NullArgument
        );
        assert_eq!(
            evolgym_env_create(env, c("maze").as_ptr(), 1, ptr::null_mut()),
            EvolgymStatus::NullArgument
        );
        let bad = [0xffu8, 0];
        assert_eq!(
            evolgym_env_create(env, bad.as_ptr().cast(), 1, &mut out),
            EvolgymStatus::InvalidUtf8
        );

        // A wordle session out of rounds rejects further steps.
        assert_eq!(
            evolgym_env_create(env, c("wordle").as_ptr(), 9, &mut out),
            EvolgymStatus::Ok
        );
        let created: Value = serde_json::from_str(&take(out)).unwrap();
        let sid = c(created["session_id"].as_str().unwrap());
        let mut status = EvolgymStatus::Ok;
        for _ in 0..20 {
            status = evolgym_env_step(env, sid.as_ptr(), c("zzzzz").as_ptr(), &mut out);
            if status != EvolgymStatus::Ok {
                break;
            }
            evolgym_string_free(out);
        }
        assert_eq!(status, EvolgymStatus::SessionDone);

        evolgym_env_free(env);
        evolgym_env_free(ptr::null_mut());
        evolgym_string_free(ptr::null_mut());
    }
}

#[test]
fn helpers_match_the_library() {
    unsafe {
        let mut out = ptr::null_mut();
        let agent = "Thought: left is open\nAction: \"move left\"";
        assert_eq!(evolgym_parse_react(c(agent).as_ptr(), &mut out), EvolgymStatus::Ok);
        let parsed: Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(
            parsed,
            serde_json::json!({"thought": "left is open", "action": "move left"})
        );
        assert_eq!(
            evolgym_parse_react(c("Thought: hmm").as_ptr(), &mut out),
            EvolgymStatus::ParseError
        );

        let mut bit = 7u8;
        assert_eq!(evolgym_binarize_reward(1.0, &mut bit), EvolgymStatus::Ok);
        assert_eq!(bit, 1);
        assert_eq!(evolgym_binarize_reward(0.5, &mut bit), EvolgymStatus::Ok);
        assert_eq!(bit, 0);
        assert_eq!(evolgym_binarize_reward(1.5, &mut bit), EvolgymStatus::DomainError);
        assert_eq!(evolgym_binarize_reward(f64::NAN, &mut bit), EvolgymStatus::DomainError);
        assert_eq!(
            evolgym_binarize_reward(1.0, ptr::null_mut()),
            EvolgymStatus::NullArgument
        );

        for (t, g, want) in [
            ("apple", "eerie", "b b b b g"),
            ("abbey", "babes", "y y g g b"),
            ("crane", "nanny", "b y b g b"),
        ] {
            assert_eq!(
                evolgym_wordle_feedback(c(t).as_ptr(), c(g).as_ptr(), &mut out),
                EvolgymStatus::Ok
            );
            assert_eq!(take(out), want);
        }
        assert_eq!(
            evolgym_wordle_feedback(c("Apple").as_ptr(), c("eerie").as_ptr(), &mut out),
            EvolgymStatus::BadRequest
        );
        assert_eq!(
            evolgym_wordle_feedback(c("apple").as_ptr(), c("eeri").as_ptr(), &mut out),
            EvolgymStatus::BadRequest
        );

        assert_eq!(
            CStr::from_ptr(evolgym_version()).to_str().unwrap(),
            env!("CARGO_PKG_VERSION")
        );
    }
}

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

/// target/<profile>, two levels above this test binary in deps/.
fn profile_dir() -> PathBuf {
    std::env::current_exe()
        .unwrap()
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf()
}

#[test]
fn header_lists_every_export() {
    let header = std::fs::read_to_string(crate_dir().join("include/evolgym.h")).unwrap();
    let source = std::fs::read_to_string(crate_dir().join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = source
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 14, "{exports:?}");
    for f in exports {
        assert!(header.contains(&format!("{f}(")), "{f} missing from the header");
    }
    assert!(header.contains("typedef struct EvolgymEnv EvolgymEnv;"));
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "evolgym.h"

int main(void) {
    char *out = NULL;
    if (evolgym_wordle_feedback("abbey", "babes", &out) != EVOLGYM_STATUS_OK) return 2;
    if (strcmp(out, "y y g g b") != 0) return 3;
    evolgym_string_free(out);

    EvolgymEnv *env = evolgym_env_new();
    if (env == NULL) return 4;
    if (evolgym_env_create(env, "craft", 5, &out) != EVOLGYM_STATUS_OK) return 5;
    if (strstr(out, "\"session_id\":\"craft-") == NULL) return 6;
    evolgym_string_free(out);
    if (evolgym_env_create(env, "chess", 5, &out) != EVOLGYM_STATUS_UNKNOWN_ENV) return 7;
    if (evolgym_last_error() == NULL) return 8;
    if (evolgym_env_session_count(env) != 1) return 9;
    evolgym_env_free(env);

    uint8_t bit = 0;
    if (evolgym_binarize_reward(1.0, &bit) != EVOLGYM_STATUS_OK || bit != 1) return 10;
    printf("ok\n");
    return 0;
}
"#;

fn compile_and_run(dir: &Path, link: &[&str]) -> String {
    let src = dir.join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let exe = dir.join("main");
    let mut cc = Command::new("cc");
    cc.arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg(&src)
        .arg("-o")
        .arg(&exe);
    let built = cc.args(link).output().unwrap();
    assert!(built.status.success(), "cc: {}", String::from_utf8_lossy(&built.stderr));
    let run = Command::new(&exe)
        .env("LD_LIBRARY_PATH", profile_dir())
        .output()
        .unwrap();
    assert!(
        run.status.success(),
        "exit {:?}: {}",
        run.status.code(),
        String::from_utf8_lossy(&run.stderr)
    );
    String::from_utf8(run.stdout).unwrap()
}

#[test]
fn c_program_links_against_the_static_and_shared_libraries() {
    let dir = tempfile::tempdir().unwrap();
    let lib = profile_dir();
    let archive = lib.join("libevolgym_ffi.a");
    assert!(archive.exists(), "{} not built", archive.display());
    let out = compile_and_run(dir.path(), &[archive.to_str().unwrap(), "-lpthread", "-ldl", "-lm"]);
    assert_eq!(out, "ok\n");
    let out = compile_and_run(dir.path(), &["-L", lib.to_str().unwrap(), "-levolgym_ffi"]);
    assert_eq!(out, "ok\n");
}
