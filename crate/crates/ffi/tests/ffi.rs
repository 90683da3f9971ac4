use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use abpc::config::{preset, Overrides};
use abpc::harness::run_closed_loop;
use abpc::plants::Plant;
use abpc_ffi::*;

fn last_error() -> String {
    let p = abpc_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn controller(source: &str, kernel: Option<&str>) -> *mut AbpcController {
    let source = CString::new(source).unwrap();
    let kernel = kernel.map(|k| CString::new(k).unwrap());
    let mut h = ptr::null_mut();
    let st = unsafe { abpc_controller_from_preset(source.as_ptr(), kernel.as_ref().map_or(ptr::null(), |k| k.as_ptr()), &mut h) };
    assert_eq!(st, AbpcStatus::Ok);
    assert!(!h.is_null());
    h
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(abpc_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_arguments_are_reported() {
    let mut h = ptr::null_mut();
    let st = unsafe { abpc_controller_from_preset(ptr::null(), ptr::null(), &mut h) };
    assert_eq!(st, AbpcStatus::NullPointer);
    assert!(h.is_null());
    assert!(last_error().contains("source"));

    let st = unsafe { abpc_controller_push_input(ptr::null_mut(), [0.0].as_ptr(), 1) };
    assert_eq!(st, AbpcStatus::NullPointer);
    assert_eq!(unsafe { abpc_controller_outputs(ptr::null()) }, 0);
    unsafe { abpc_controller_free(ptr::null_mut()) };
}

#[test]
fn unknown_preset_and_bad_toml() {
    let mut h = ptr::null_mut();
    let name = CString::new("no_such_preset").unwrap();
    assert_eq!(unsafe { abpc_controller_from_preset(name.as_ptr(), ptr::null(), &mut h) }, AbpcStatus::Config);
    assert!(last_error().contains("no_such_preset"));

    let text = CString::new("name = \"x\"\nbogus = 1\n").unwrap();
    assert_eq!(unsafe { abpc_controller_from_toml(text.as_ptr(), &mut h) }, AbpcStatus::Config);
    assert!(h.is_null());
    assert!(last_error().contains("line 2"));

    let kernel = CString::new("spline").unwrap();
    let e1 = CString::new("e1").unwrap();
    assert_eq!(unsafe { abpc_controller_from_preset(e1.as_ptr(), kernel.as_ptr(), &mut h) }, AbpcStatus::Config);
}

#[test]
fn dimension_mismatch() {
    let h = controller("e3", None);
    unsafe {
        assert_eq!(abpc_controller_outputs(h), 3);
        assert_eq!(abpc_controller_inputs(h), 2);
        assert_eq!(abpc_controller_push_input(h, [0.0; 3].as_ptr(), 3), AbpcStatus::DimensionMismatch);
        assert!(last_error().contains("expected 2"));
        assert_eq!(abpc_controller_push_input(h, [0.0; 2].as_ptr(), 2), AbpcStatus::Ok);
        assert_eq!(abpc_controller_observe(h, [0.0; 2].as_ptr(), 2, ptr::null_mut()), AbpcStatus::DimensionMismatch);
        let mut u = [0.0; 2];
        let r = [0.0; 3];
        assert_eq!(abpc_controller_compute(h, r.as_ptr(), 3, u.as_mut_ptr(), 1, ptr::null_mut()), AbpcStatus::DimensionMismatch);
        abpc_controller_free(h);
    }
}

#[test]
fn handle_loop_reproduces_harness() {
    for kernel in ["unitary", "rbf", "poly2"] {
        let exp = preset("e1")
            .unwrap()
            .resolve(&Overrides { seed: None, kernel: Some(abpc::config::parse_kernel_flag(kernel, 1e3).unwrap()) })
            .unwrap();
        let log = run_closed_loop(&exp).unwrap();
        assert!(log.completed());

        let h = controller("e1", Some(kernel));
        let mut plant = Plant::new(exp.plant.clone());
        let mut u_next = [0.0];
        for k in 1..=exp.steps {
            let rec = &log.records[k - 1];
            let u = if k <= exp.warmup { rec.u.clone() } else { u_next.to_vec() };
            assert_eq!(u, rec.u, "{kernel} u at k = {k}");
            let y = plant.step(&u, k).unwrap();
            let mut yhat = [f64::NAN];
            unsafe {
                assert_eq!(abpc_controller_push_input(h, u.as_ptr(), 1), AbpcStatus::Ok);
                assert_eq!(abpc_controller_observe(h, y.as_ptr(), 1, yhat.as_mut_ptr()), AbpcStatus::Ok);
            }
            assert_eq!(yhat.to_vec(), rec.yhat_prior);
            if k >= exp.warmup && k < exp.steps {
                let r = exp.reference.at(k + 1);
                let mut cost = f64::NAN;
                let st = unsafe { abpc_controller_compute(h, r.as_ptr(), 1, u_next.as_mut_ptr(), 1, &mut cost) };
                assert_eq!(st, AbpcStatus::Ok);
                assert_eq!(Some(cost), rec.cost);
            }
        }
        unsafe { abpc_controller_free(h) };
    }
}

#[test]
fn run_preset_metrics() {
    let name = CString::new("e1").unwrap();
    let mut m = AbpcMetrics {
        rmse: 0.0,
        iae: 0.0,
        tv_u: 0.0,
        peak_u: 0.0,
        window_start: 0,
        window_end: 0,
        steps_run: 0,
        completed: 0,
        failure_step: 0,
    };
    let seed = 42u64;
    assert_eq!(unsafe { abpc_run_preset(name.as_ptr(), ptr::null(), &seed, &mut m) }, AbpcStatus::Ok);
    assert_eq!(m.completed, 1);
    assert_eq!(m.steps_run, 250);
    assert_eq!((m.window_start, m.window_end), (51, 250));
    assert_eq!(m.failure_step, 0);
    assert!(m.rmse > 0.0 && m.rmse <= 0.05, "rmse {}", m.rmse);
    assert!(m.tv_u >= 0.0 && m.peak_u > 0.0);

    assert_eq!(unsafe { abpc_run_preset(name.as_ptr(), ptr::null(), ptr::null(), ptr::null_mut()) }, AbpcStatus::NullPointer);
}

fn header_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include").join("abpc.h")
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(header_path()).unwrap();
    let src = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("src").join("lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 10);
    for f in exports {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(header.contains("typedef struct AbpcController AbpcController;"));
    assert!(header.contains("ABPC_STATUS_NUMERICAL = 5"));
}

#[test]
fn header_compiles_as_c() {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("no C compiler found; skipping");
        return;
    }
    let dir = tempfile_dir();
    let src = dir.join("use_header.c");
    std::fs::write(
        &src,
        "#include \"abpc.h\"\n\
         int main(void) {\n\
           AbpcController *h = 0;\n\
           AbpcStatus st = abpc_controller_from_preset(\"e1\", 0, &h);\n\
           double u = 0.0;\n\
           st = abpc_controller_push_input(h, &u, 1);\n\
           abpc_controller_free(h);\n\
           return st == ABPC_STATUS_OK ? 0 : 1;\n\
         }\n",
    )
    .unwrap();
    let out = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header_path().parent().unwrap())
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn tempfile_dir() -> PathBuf {
    let dir = std::env::temp_dir().join(format!("abpc_ffi_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
