use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use dynlab::cma::{build_index, CmaComponents, IndexMethod, IndexOptions};
use dynlab::estimator::{fit, FitOptions, ModelSpec};
use dynlab::panel::build_design;
use dynlab::simulate::{generate_panel, DgpConfig};
use dynlab_ffi::*;
use serde_json::Value;

const POOLED: &str = r#"{"heterogeneity": "none", "initial_conditions": "exogenous", "time_means": [], "initial": []}"#;

fn last_error() -> String {
    let p = dynlab_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn take(s: *mut c_char) -> String {
    let out = unsafe { CStr::from_ptr(s) }.to_string_lossy().into_owned();
    unsafe { dynlab_string_free(s) };
    out
}

fn simulated(persons: usize, seed: u64) -> *mut DynlabPanel {
    let cfg = CString::new(format!(r#"{{"persons": {persons}, "waves": 5}}"#)).unwrap();
    let mut panel = ptr::null_mut();
    assert_eq!(unsafe { dynlab_simulate(cfg.as_ptr(), seed, &mut panel) }, DynlabStatus::Ok);
    panel
}

#[test]
fn null_arguments_are_reported() {
    unsafe {
        assert_eq!(dynlab_panel_load(ptr::null(), ptr::null_mut()), DynlabStatus::NullArgument);
        assert!(last_error().contains("out_panel"));
        let mut panel = ptr::null_mut();
        assert_eq!(dynlab_panel_load(ptr::null(), &mut panel), DynlabStatus::NullArgument);
        assert!(panel.is_null());
        assert_eq!(dynlab_fit_n_params(ptr::null(), &mut 0), DynlabStatus::NullArgument);
        dynlab_panel_free(ptr::null_mut());
        dynlab_fit_free(ptr::null_mut());
        dynlab_string_free(ptr::null_mut());
        assert!(CStr::from_ptr(dynlab_version()).to_str().unwrap().starts_with("0."));
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut panel = ptr::null_mut();
        let missing = CString::new("/no/such/panel.csv").unwrap();
        assert_eq!(dynlab_panel_load(missing.as_ptr(), &mut panel), DynlabStatus::DataError);
        let bad = CString::new(r#"{"persons": 10, "wavez": 2}"#).unwrap();
        assert_eq!(dynlab_simulate(bad.as_ptr(), 1, &mut panel), DynlabStatus::InvalidArgument);
        assert!(last_error().contains("wavez"));

        let panel = simulated(150, 8);
        let mut f = ptr::null_mut();
        let spec = CString::new(POOLED).unwrap();
        assert_eq!(dynlab_fit(panel, spec.as_ptr(), 1, &mut f), DynlabStatus::NotConverged);
        assert!(f.is_null());
        let unknown = CString::new(r#"{"current": ["shoe_size"]}"#).unwrap();
        assert_eq!(dynlab_fit(panel, unknown.as_ptr(), 0, &mut f), DynlabStatus::InvalidArgument);
        assert!(last_error().contains("shoe_size"));
        dynlab_panel_free(panel);
    }
}

#[test]
fn fit_matches_the_library() {
    let cfg = DgpConfig { persons: 200, waves: 5, seed: 21, ..DgpConfig::default() };
    let ds = generate_panel(&cfg).unwrap().dataset;
    let spec: ModelSpec = serde_json::from_str(POOLED).unwrap();
    let direct = fit(&spec, &build_design(&ds, &spec).unwrap(), &FitOptions::default()).unwrap();

    unsafe {
        let panel = simulated(200, 21);
        let (mut rows, mut persons) = (0, 0);
        assert_eq!(dynlab_panel_shape(panel, &mut rows, &mut persons), DynlabStatus::Ok);
        assert_eq!((rows, persons), (ds.n_rows(), ds.n_persons()));

        let mut f = ptr::null_mut();
        let spec = CString::new(POOLED).unwrap();
        assert_eq!(dynlab_fit(panel, spec.as_ptr(), 0, &mut f), DynlabStatus::Ok);
        let mut k = 0;
        assert_eq!(dynlab_fit_n_params(f, &mut k), DynlabStatus::Ok);
        assert_eq!(k, direct.estimates.len());

        let mut written = 0;
        let mut buf = vec![0.0; k];
        assert_eq!(dynlab_fit_estimates(f, buf.as_mut_ptr(), k - 1, &mut written), DynlabStatus::BufferTooSmall);
        assert_eq!(written, k);
        assert_eq!(dynlab_fit_estimates(f, buf.as_mut_ptr(), k, &mut written), DynlabStatus::Ok);
        assert_eq!(buf, direct.estimates);
        assert_eq!(dynlab_fit_std_errors(f, buf.as_mut_ptr(), k, ptr::null_mut()), DynlabStatus::Ok);
        assert_eq!(buf, direct.std_errors);

        let mut name = ptr::null();
        assert_eq!(dynlab_fit_param_name(f, 0, &mut name), DynlabStatus::Ok);
        assert_eq!(CStr::from_ptr(name).to_str().unwrap(), direct.names[0]);
        assert_eq!(dynlab_fit_param_name(f, k, &mut name), DynlabStatus::InvalidArgument);

        let (mut ll, mut conv) = (0.0, false);
        assert_eq!(dynlab_fit_summary(f, &mut ll, &mut conv), DynlabStatus::Ok);
        assert_eq!(ll, direct.log_likelihood);
        assert!(conv);

        let mut s = ptr::null_mut();
        assert_eq!(dynlab_fit_json(f, &mut s), DynlabStatus::Ok);
        let v: Value = serde_json::from_str(&take(s)).unwrap();
        assert_eq!(v["names"].as_array().unwrap().len(), k);

        let target = CString::new("cma_index").unwrap();
        assert_eq!(dynlab_average_marginal_effects(f, target.as_ptr(), &mut s), DynlabStatus::Ok);
        let ame: Value = serde_json::from_str(&take(s)).unwrap();
        assert_eq!(ame["target"], "cma_index");
        let nope = CString::new("not_a_column").unwrap();
        assert_eq!(dynlab_average_marginal_effects(f, nope.as_ptr(), &mut s), DynlabStatus::InvalidArgument);

        dynlab_fit_free(f);
        dynlab_panel_free(panel);
    }
}

#[test]
fn cma_index_matches_the_library() {
    let presence = [1u8, 1, 2, 2, 3, 3];
    let ds = [20.0, 5.0, 0.0, 0.0, 0.0, 0.0];
    let d_o = [35.0, 12.0, 8.0, 30.0, 0.0, 0.0];
    let off = [0.10, 0.15, 0.18, 0.22, 0.25, 0.33];
    let rows: Vec<CmaComponents> = (0..6).map(|i| CmaComponents::new(presence[i], ds[i], d_o[i], off[i]).unwrap()).collect();
    for (m, method) in [(DynlabIndexMethod::Zscore, IndexMethod::Zscore), (DynlabIndexMethod::Pca, IndexMethod::Pca)] {
        let mut out = [0.0; 6];
        let s = unsafe { dynlab_cma_index(m, 6, presence.as_ptr(), ds.as_ptr(), d_o.as_ptr(), off.as_ptr(), out.as_mut_ptr()) };
        assert_eq!(s, DynlabStatus::Ok);
        assert_eq!(out.to_vec(), build_index(&rows, method, IndexOptions::default()).unwrap().values);
    }
    let bad = [1u8, 1, 2, 2, 3, 4];
    let mut out = [0.0; 6];
    let s = unsafe { dynlab_cma_index(DynlabIndexMethod::Zscore, 6, bad.as_ptr(), ds.as_ptr(), d_o.as_ptr(), off.as_ptr(), out.as_mut_ptr()) };
    assert_eq!(s, DynlabStatus::DataError);
    assert!(last_error().contains("bank_presence"));
}

#[test]
fn borrowing_values() {
    let (mut b, mut t) = (0.0, 0.0);
    unsafe {
        assert_eq!(dynlab_desired_borrowing(100.0, 0.1, 0.0, 0.0, 0.05, &mut b, &mut t), DynlabStatus::Ok);
    }
    assert!((b - 5.0).abs() < 1e-12);
    assert!((t - 1.0).abs() < 1e-12);
}

/// Compiles a C program against the generated header and links it to the
/// static library built alongside this test.
#[test]
fn c_program_links_against_header() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    // `cargo test` refreshes the archive in `deps` without copying it up
    let lib = exe.parent().unwrap().join("libdynlab_ffi.a");
    assert!(lib.exists(), "{} missing", lib.display());
    let bin = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("dynlab_smoke");
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Wextra", "-Werror", "-I"])
        .arg(crate_dir.join("include"))
        .arg(crate_dir.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .expect("C compiler");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok 0."));
}
