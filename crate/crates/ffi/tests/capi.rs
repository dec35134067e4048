use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use seval_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(seval_last_error()) }.to_string_lossy().into_owned()
}

fn parse(text: &str) -> (SevalStatus, *mut SevalInstance) {
    let c = CString::new(text).unwrap();
    let mut out = ptr::null_mut();
    let st = unsafe { seval_instance_parse(c.as_ptr(), &mut out) };
    (st, out)
}

#[test]
fn solve_and_read_back() {
    let (st, inst) = parse("2 2\n0 3 1 2\n1 4 0 1\n");
    assert_eq!(st, SevalStatus::Ok);
    unsafe {
        assert_eq!(seval_instance_num_jobs(inst), 2);
        assert_eq!(seval_instance_num_ops(inst), 4);
        let mut s = ptr::null_mut();
        assert_eq!(seval_solve_exact(inst, 0.0, &mut s), SevalStatus::Ok);
        assert_eq!(seval_schedule_makespan(s), 6);
        assert_eq!(seval_schedule_is_optimal(s), 1);
        let mut n = 0;
        assert_eq!(seval_schedule_starts(s, ptr::null_mut(), 0, &mut n), SevalStatus::BufferTooSmall);
        assert_eq!(n, 4);
        let mut buf = [0u32; 4];
        assert_eq!(seval_schedule_starts(s, buf.as_mut_ptr(), 4, &mut n), SevalStatus::Ok);
        assert_eq!(buf, [0, 4, 0, 4]);
        let mut text = ptr::null_mut();
        assert_eq!(seval_schedule_export(s, &mut text), SevalStatus::Ok);
        assert!(CStr::from_ptr(text).to_str().unwrap().lines().count() >= 4);
        seval_string_free(text);
        seval_schedule_free(s);
        seval_instance_free(inst);
    }
}

#[test]
fn errors_set_status_and_message() {
    let (st, inst) = parse("3 3\n0 1\n");
    assert_eq!(st, SevalStatus::Parse);
    assert!(inst.is_null());
    assert!(!last_error().is_empty());
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(seval_instance_parse(ptr::null(), &mut out), SevalStatus::NullArgument);
        assert_eq!(seval_instance_generate(0, 3, 1, &mut out), SevalStatus::InvalidArgument);
        let bad = [0xffu8, 0];
        assert_eq!(seval_instance_parse(bad.as_ptr().cast(), &mut out), SevalStatus::InvalidUtf8);
        let mut s = ptr::null_mut();
        assert_eq!(seval_dispatch(ptr::null(), SevalRule::Spt, &mut s), SevalStatus::NullArgument);
        let path = CString::new("/nonexistent/model.ckpt").unwrap();
        let mut m = ptr::null_mut();
        assert_eq!(seval_model_load(path.as_ptr(), &mut m), SevalStatus::Io);
        assert!(m.is_null());
        // Null handles are accepted by the release functions.
        seval_instance_free(ptr::null_mut());
        seval_schedule_free(ptr::null_mut());
        seval_model_free(ptr::null_mut());
        seval_string_free(ptr::null_mut());
    }
    let (st, inst) = parse("1 1\n0 5\n");
    assert_eq!(st, SevalStatus::Ok);
    assert!(last_error().is_empty());
    unsafe { seval_instance_free(inst) };
}

#[test]
fn model_inference_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let model = seval_core::model::Model::<f32>::new(seval_core::model::ModelConfig::tiny(), 1).unwrap();
    seval_core::model::Checkpoint::new(model, serde_json::Value::Null).save(&path).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(seval_model_load(cpath.as_ptr(), &mut m), SevalStatus::Ok);
        let mut inst = ptr::null_mut();
        assert_eq!(seval_instance_generate(4, 4, 3, &mut inst), SevalStatus::Ok);
        let mut greedy = ptr::null_mut();
        let mut best = ptr::null_mut();
        assert_eq!(seval_infer(m, inst, 1, 0, &mut greedy), SevalStatus::Ok);
        assert_eq!(seval_infer(m, inst, 8, 0, &mut best), SevalStatus::Ok);
        assert!(seval_schedule_makespan(greedy) > 0 && seval_schedule_makespan(best) > 0);
        let mut none = ptr::null_mut();
        assert_eq!(seval_infer(m, inst, 0, 0, &mut none), SevalStatus::InvalidArgument);
        seval_schedule_free(greedy);
        seval_schedule_free(best);
        seval_instance_free(inst);
        seval_model_free(m);
    }
    std::fs::write(&path, b"garbage").unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { seval_model_load(cpath.as_ptr(), &mut m) }, SevalStatus::Model);
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/seval.h")).unwrap();
    let src = include_str!("../src/lib.rs");
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|l| l.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 15);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    assert!(header.contains("SEVAL_STATUS_BUFFER_TOO_SMALL = 7"));
}

/// Compiles the C smoke program against the static library and runs it.
#[test]
fn c_program_links_and_runs() {
    let exe = std::env::current_exe().unwrap();
    // Test builds leave the archive beside the test binary in deps/.
    let deps = exe.parent().unwrap();
    let lib = [deps.join("libseval_ffi.a"), deps.parent().unwrap().join("libseval_ffi.a")]
        .into_iter()
        .find(|p| p.exists())
        .expect("static library not built");
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let out = tempfile::tempdir().unwrap();
    let bin = out.path().join("smoke");
    let status = Command::new("cc")
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("C compiler");
    assert!(status.success());
    let run = Command::new(&bin).output().unwrap();
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(run.status.success(), "exit {:?}: {stdout}", run.status.code());
    assert!(stdout.contains("makespan 6 optimal 1"), "{stdout}");
    assert!(stdout.contains("error "), "{stdout}");
}
