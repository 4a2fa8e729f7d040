use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use c2w2c::checkpoint::Checkpoint;
use c2w2c::corpus::{parse_sentences, CharVocab};
use c2w2c::inference::{score_sentence, ScoreOptions};
use c2w2c::model::{AnyModel, C2w2cModel as Core, ModelDims};
use c2w2c::training::TrainConfig;
use c2w2c_ffi::*;

fn toy_model() -> Core<f64> {
    let s = parse_sentences("talo talossa talossani\nkissa kissalla\n", false);
    let mut dims = ModelDims::uniform(6);
    dims.max_word_len = 12;
    Core::new(dims, CharVocab::build(&s).unwrap(), 4).unwrap()
}

fn saved(dir: &Path) -> (PathBuf, Core<f64>) {
    let m = toy_model();
    let path = dir.join("toy.ck");
    Checkpoint::new(AnyModel::C2w2c(m.clone()), TrainConfig::default()).save(&path).unwrap();
    (path, m)
}

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(c2w2c_last_error()) }.to_str().unwrap().to_owned()
}

fn load(path: &Path) -> *mut C2w2cModel {
    let mut h = ptr::null_mut();
    let p = cstr(path.to_str().unwrap());
    assert_eq!(unsafe { c2w2c_model_load(p.as_ptr(), &mut h) }, C2w2cStatus::Ok);
    assert!(!h.is_null());
    h
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(c2w2c_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn score_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let (path, m) = saved(dir.path());
    let h = load(&path);
    let mut got = 0.0;
    let s = cstr("talo kissa");
    assert_eq!(unsafe { c2w2c_score_sentence(h, s.as_ptr(), false, &mut got) }, C2w2cStatus::Ok);
    let toks = vec!["talo".to_string(), "kissa".to_string()];
    let want = score_sentence(&m, &toks, ScoreOptions::default()).unwrap().score;
    assert_eq!(got, want);

    let mut n = 0u64;
    assert_eq!(unsafe { c2w2c_model_param_count(h, &mut n) }, C2w2cStatus::Ok);
    assert_eq!(n as usize, m.params.numel());

    let mut ppl = 0.0;
    let text = cstr("talo\nkissa talossa\n");
    assert_eq!(unsafe { c2w2c_perplexity(h, text.as_ptr(), &mut ppl) }, C2w2cStatus::Ok);
    assert!(ppl.is_finite() && ppl > 1.0);
    unsafe { c2w2c_model_free(h) };
}

#[test]
fn unknown_character_reports_words() {
    let dir = tempfile::tempdir().unwrap();
    let (path, _) = saved(dir.path());
    let h = load(&path);
    let mut got = 0.0;
    let s = cstr("talo xyz");
    assert_eq!(unsafe { c2w2c_score_sentence(h, s.as_ptr(), false, &mut got) }, C2w2cStatus::UnknownCharacter);
    assert!(last_error().contains("xyz"));
    unsafe { c2w2c_model_free(h) };
}

#[test]
fn sample_returns_owned_text() {
    let dir = tempfile::tempdir().unwrap();
    let (path, _) = saved(dir.path());
    let h = load(&path);
    let ctx = cstr("talo");
    for beam in [false, true] {
        let mut out = ptr::null_mut();
        assert_eq!(unsafe { c2w2c_sample(h, ctx.as_ptr(), beam, 3, 2, 4, &mut out) }, C2w2cStatus::Ok);
        let text = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_owned();
        unsafe { c2w2c_string_free(out) };
        let lines = text.lines().count();
        assert!(if beam { (1..=2).contains(&lines) } else { lines == 1 }, "{text}");
        assert!(text.starts_with("1\t"));
    }
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { c2w2c_sample(h, ctx.as_ptr(), true, 0, 2, 4, &mut out) }, C2w2cStatus::InvalidArgument);
    assert!(out.is_null());
    unsafe { c2w2c_model_free(h) };
}

#[test]
fn bad_arguments() {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { c2w2c_model_load(ptr::null(), &mut h) }, C2w2cStatus::NullPointer);
    let missing = cstr("/nonexistent/model.ck");
    assert_eq!(unsafe { c2w2c_model_load(missing.as_ptr(), &mut h) }, C2w2cStatus::Io);
    assert!(h.is_null());
    assert!(last_error().contains("nonexistent"));

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.ck");
    std::fs::write(&junk, b"not a checkpoint\n").unwrap();
    let p = cstr(junk.to_str().unwrap());
    assert_eq!(unsafe { c2w2c_model_load(p.as_ptr(), &mut h) }, C2w2cStatus::Format);

    let mut x = 0.0;
    let s = cstr("talo");
    assert_eq!(unsafe { c2w2c_score_sentence(ptr::null(), s.as_ptr(), false, &mut x) }, C2w2cStatus::NullPointer);
    let bad = [0xffu8, 0xfe, 0];
    let (path, _) = saved(dir.path());
    let h = load(&path);
    assert_eq!(unsafe { c2w2c_score_sentence(h, bad.as_ptr().cast(), false, &mut x) }, C2w2cStatus::InvalidUtf8);
    unsafe {
        c2w2c_model_free(h);
        c2w2c_model_free(ptr::null_mut());
        c2w2c_string_free(ptr::null_mut());
    }
}

/// Compiles and runs a C program against the generated header and the
/// static library, if a C compiler is on the path.
#[test]
fn c_program_links_against_header() {
    let target = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_owned();
    let lib = target.join("libc2w2c_ffi.a");
    if Command::new("cc").arg("--version").output().is_err() || !lib.exists() {
        eprintln!("skipping: no C compiler or static library");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let (ck, _) = saved(dir.path());
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "c2w2c.h"
int main(int argc, char **argv) {
    C2w2cModel *m = NULL;
    if (c2w2c_model_load(argv[1], &m) != C2W2C_STATUS_OK) { fprintf(stderr, "%s\n", c2w2c_last_error()); return 1; }
    double s = 0;
    if (c2w2c_score_sentence(m, "talo kissa", false, &s) != C2W2C_STATUS_OK) return 2;
    if (c2w2c_score_sentence(m, "qqq", false, &s) != C2W2C_STATUS_UNKNOWN_CHARACTER) return 3;
    char *out = NULL;
    if (c2w2c_sample(m, "talo", true, 3, 2, 4, &out) != C2W2C_STATUS_OK) return 4;
    printf("%s", out);
    c2w2c_string_free(out);
    c2w2c_model_free(m);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("main");
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let run = Command::new(&exe).arg(&ck).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("1\t"));
}
