use std::ffi::{CStr, CString};
use std::ptr;

use oak_ffi::*;

const GEN: &str = "n_images=48\nprobe_per_class=1\nlabeled_per_class=3\ncontexts=color:4,count:4\ndepth=1\nwidth=16\nheads=2\nmlp_ratio=2\n";
const TRAIN: &str = "epochs=1\nbatch_size=16\nn_tokens=2\nn_init=2\n";

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = oak_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn take(p: *mut std::ffi::c_char) -> String {
    let s = CStr::from_ptr(p).to_string_lossy().into_owned();
    oak_string_free(p);
    s
}

#[test]
fn generate_train_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = c(dir.path().to_str().unwrap());
    let cfg = c(GEN);
    unsafe {
        let mut b = ptr::null_mut();
        assert_eq!(oak_bundle_generate(cfg.as_ptr(), out.as_ptr(), &mut b), OakStatus::Ok);
        assert_eq!(oak_bundle_len(b), 48);
        assert_eq!(oak_bundle_context_count(b), 2);
        let mut id = ptr::null_mut();
        assert_eq!(oak_bundle_context_id(b, 1, &mut id), OakStatus::Ok);
        assert_eq!(take(id), "count");
        assert_eq!(oak_bundle_context_id(b, 7, &mut id), OakStatus::Config);
        oak_bundle_free(b);

        let mut b = ptr::null_mut();
        assert_eq!(oak_bundle_open(out.as_ptr(), &mut b), OakStatus::Ok);
        let train = c(TRAIN);
        for ctx in ["color", "count"] {
            let ctx = c(ctx);
            let st = oak_train(b, ctx.as_ptr(), OakMethod::Gcd, 0, train.as_ptr(), ptr::null());
            assert_eq!(st, OakStatus::Ok, "{}", last_error());
        }
        let mut tsv = ptr::null_mut();
        assert_eq!(oak_evaluate(b, OakMethod::Gcd, 0, ptr::null(), &mut tsv), OakStatus::Ok);
        let report = take(tsv);
        assert!(report.contains("omni\t"), "{report}");
        assert_eq!(oak_evaluate(b, OakMethod::ZeroShot, 0, ptr::null(), &mut tsv), OakStatus::Ok);
        assert!(take(tsv).contains("color\tnovel\tNA"));
        oak_bundle_free(b);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    unsafe {
        let mut b = ptr::null_mut();
        assert_eq!(oak_bundle_open(ptr::null(), &mut b), OakStatus::NullPointer);
        assert!(last_error().contains("dir"));
        let missing = c("/nonexistent/oak-ffi");
        assert_eq!(oak_bundle_open(missing.as_ptr(), &mut b), OakStatus::Io);
        assert!(last_error().starts_with("io: "));
        assert!(b.is_null());
        let bad = c("bogus=1");
        let out = c("/tmp/never-written");
        assert_eq!(oak_bundle_generate(bad.as_ptr(), out.as_ptr(), &mut b), OakStatus::Config);
        assert!(last_error().starts_with("config: "));
        let ctx = c("color");
        assert_eq!(oak_train(ptr::null(), ctx.as_ptr(), OakMethod::Oak, 0, ptr::null(), ptr::null()), OakStatus::NullPointer);
        oak_bundle_free(ptr::null_mut());
        oak_string_free(ptr::null_mut());
    }
}

#[test]
fn aggregate_matches_the_sample_statistics() {
    let a = c("#method\toak\ncolor\tall\t0.5\n");
    let b = c("#method\toak\ncolor\tall\t0.7\n");
    let reports = [a.as_ptr(), b.as_ptr()];
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(oak_aggregate(reports.as_ptr(), 2, &mut out), OakStatus::Ok);
        let s = take(out);
        assert!(s.contains("color\tall\t0.600000\t0.141421"), "{s}");
        assert_eq!(oak_aggregate(reports.as_ptr(), 1, &mut out), OakStatus::Evaluation);
    }
}

#[test]
fn cli_entry_point_reports_usage_errors() {
    let args = [c("oak"), c("frobnicate")];
    let argv: Vec<_> = args.iter().map(|a| a.as_ptr()).collect();
    assert_eq!(unsafe { oak_run_cli(2, argv.as_ptr()) }, 2);
    assert_eq!(unsafe { oak_run_cli(0, ptr::null()) }, 2);
    let v = unsafe { CStr::from_ptr(oak_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/oak.h")).unwrap();
    for f in [
        "oak_last_error", "oak_string_free", "oak_bundle_generate", "oak_bundle_open", "oak_bundle_free", "oak_bundle_len",
        "oak_bundle_context_count", "oak_bundle_context_id", "oak_train", "oak_evaluate", "oak_aggregate", "oak_run_cli",
        "oak_version",
    ] {
        assert!(h.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(h.contains("typedef struct OakBundle OakBundle;"));
}
