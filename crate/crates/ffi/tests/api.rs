use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use drssl_ffi::*;

const TINY: &str = "channels = 2
window_len = 16
n_classes = 2
conv_filters = 2
kernel_len = 3
pool_w = 2
latent_dim = 4
disc_hidden = 4
n_per_class = 8
epochs = 2
batch_l = 4
batch_u = 4
";

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn cpath(p: &Path) -> CString {
    c(p.to_str().unwrap())
}

fn last_error() -> String {
    let p = drssl_last_error();
    assert!(!p.is_null(), "no error message recorded");
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned()
}

struct Split {
    cfg: *mut DrsslConfig,
    l: *mut DrsslDataset,
    u: *mut DrsslDataset,
    t: *mut DrsslDataset,
}

impl Split {
    fn new() -> Self {
        let mut s = Split {
            cfg: ptr::null_mut(),
            l: ptr::null_mut(),
            u: ptr::null_mut(),
            t: ptr::null_mut(),
        };
        unsafe {
            assert_eq!(
                drssl_config_parse(c(TINY).as_ptr(), &mut s.cfg),
                DrsslStatus::Ok
            );
            assert_eq!(
                drssl_generate_split(s.cfg, &mut s.l, &mut s.u, &mut s.t),
                DrsslStatus::Ok
            );
        }
        s
    }
}

impl Drop for Split {
    fn drop(&mut self) {
        unsafe {
            drssl_dataset_free(self.l);
            drssl_dataset_free(self.u);
            drssl_dataset_free(self.t);
            drssl_config_free(self.cfg);
        }
    }
}

fn window(d: *const DrsslDataset, i: usize) -> (Vec<f64>, i32) {
    let (mut ch, mut len) = (0, 0);
    unsafe {
        assert_eq!(
            drssl_dataset_shape(d, &mut ch, &mut len, ptr::null_mut()),
            DrsslStatus::Ok
        );
        let mut x = vec![0.0; ch * len];
        let mut label = 7;
        assert_eq!(
            drssl_dataset_window(d, i, x.as_mut_ptr(), x.len(), &mut label),
            DrsslStatus::Ok
        );
        (x, label)
    }
}

#[test]
fn version_names_the_crate() {
    let v = unsafe { CStr::from_ptr(drssl_version()) }.to_str().unwrap();
    assert!(v.starts_with(env!("CARGO_PKG_VERSION")), "{v}");
}

#[test]
fn config_rejects_unknown_keys_and_keeps_its_state() {
    let mut cfg = ptr::null_mut();
    unsafe {
        assert_eq!(drssl_config_new(&mut cfg), DrsslStatus::Ok);
        assert_eq!(
            drssl_config_set(cfg, c("thre_rec").as_ptr(), c("0.5").as_ptr()),
            DrsslStatus::Ok
        );
        assert!(drssl_last_error().is_null());
        assert_eq!(
            drssl_config_set(cfg, c("thre_recc").as_ptr(), c("1").as_ptr()),
            DrsslStatus::Usage
        );
        assert!(last_error().contains("thre_recc"));
        assert_eq!(
            drssl_config_set(cfg, c("epochs").as_ptr(), c("many").as_ptr()),
            DrsslStatus::Usage
        );
        assert_eq!(
            drssl_config_set(cfg, c("batch_l").as_ptr(), c("1").as_ptr()),
            DrsslStatus::Usage
        );
        assert_eq!(
            drssl_config_parse(c("shift = 0.5\nbogus = 1").as_ptr(), &mut ptr::null_mut()),
            DrsslStatus::Usage
        );
        drssl_config_free(cfg);
    }
}

#[test]
fn dataset_round_trips_through_a_file() {
    let s = Split::new();
    let dir = tempfile::tempdir().unwrap();
    let p = cpath(&dir.path().join("l.ssld"));
    let mut back = ptr::null_mut();
    unsafe {
        assert_eq!(drssl_dataset_save(s.l, p.as_ptr()), DrsslStatus::Ok);
        assert_eq!(drssl_dataset_load(p.as_ptr(), &mut back), DrsslStatus::Ok);
        let n = drssl_dataset_len(s.l);
        assert_eq!(n, 16);
        assert_eq!(drssl_dataset_len(back), n);
        for i in 0..n {
            let (a, b) = (window(s.l, i), window(back, i));
            assert_eq!(a.1, b.1);
            assert!(a
                .0
                .iter()
                .zip(&b.0)
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let mut x = vec![0.0; 5];
        assert_eq!(
            drssl_dataset_window(back, 0, x.as_mut_ptr(), 5, ptr::null_mut()),
            DrsslStatus::BufferSize
        );
        assert_eq!(
            drssl_dataset_window(back, n, x.as_mut_ptr(), 32, ptr::null_mut()),
            DrsslStatus::Usage
        );
        drssl_dataset_free(back);
    }
}

#[test]
fn unlabeled_set_reports_missing_labels() {
    let s = Split::new();
    let n = unsafe { drssl_dataset_len(s.u) };
    assert!((0..n).all(|i| window(s.u, i).1 == -1));
    assert!((0..n).all(|i| (0..2).contains(&window(s.t, i).1)));
}

#[test]
fn load_failures_map_to_documented_codes() {
    let s = Split::new();
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.ssld");
    unsafe {
        assert_eq!(
            drssl_dataset_save(s.t, cpath(&good).as_ptr()),
            DrsslStatus::Ok
        );
    }
    let bytes = std::fs::read(&good).unwrap();
    let cases: Vec<(&str, Vec<u8>, DrsslStatus)> = vec![
        (
            "magic",
            [b"XXXX".as_slice(), &bytes[4..]].concat(),
            DrsslStatus::CorruptHeader,
        ),
        (
            "version",
            [&bytes[..4], &[9, 0], &bytes[6..]].concat(),
            DrsslStatus::UnsupportedVersion,
        ),
        (
            "truncated",
            bytes[..bytes.len() - 3].to_vec(),
            DrsslStatus::TruncatedPayload,
        ),
    ];
    for (name, data, want) in cases {
        let p = dir.path().join(format!("{name}.ssld"));
        std::fs::write(&p, data).unwrap();
        let mut out = ptr::null_mut();
        let got = unsafe { drssl_dataset_load(cpath(&p).as_ptr(), &mut out) };
        assert_eq!(got, want, "{name}: {}", last_error());
        assert!(out.is_null(), "{name}: a handle escaped a failed load");
    }
    let missing = dir.path().join("absent.ssld");
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { drssl_dataset_load(cpath(&missing).as_ptr(), &mut out) },
        DrsslStatus::Data
    );
    assert!(last_error().contains("absent.ssld"));
}

#[test]
fn null_arguments_are_rejected() {
    unsafe {
        assert_eq!(drssl_config_new(ptr::null_mut()), DrsslStatus::NullPointer);
        assert_eq!(
            drssl_dataset_load(ptr::null(), &mut ptr::null_mut()),
            DrsslStatus::NullPointer
        );
        assert_eq!(
            drssl_model_predict(ptr::null(), ptr::null(), ptr::null_mut(), 0),
            DrsslStatus::NullPointer
        );
        assert_eq!(drssl_dataset_len(ptr::null()), 0);
        drssl_dataset_free(ptr::null_mut());
        drssl_model_free(ptr::null_mut());
    }
}

#[test]
fn trained_model_predicts_and_survives_a_file_round_trip() {
    let s = Split::new();
    let dir = tempfile::tempdir().unwrap();
    let p = cpath(&dir.path().join("m.sslc"));
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(drssl_train(s.cfg, s.l, s.u, &mut m), DrsslStatus::Ok);
        let n = drssl_dataset_len(s.t);
        let mut a = vec![9u32; n];
        assert_eq!(
            drssl_model_predict(m, s.t, a.as_mut_ptr(), n),
            DrsslStatus::Ok
        );
        assert!(a.iter().all(|&y| y < 2));
        assert_eq!(
            drssl_model_predict(m, s.t, a.as_mut_ptr(), n + 1),
            DrsslStatus::BufferSize
        );

        let mut metrics = DrsslMetrics::default();
        assert_eq!(drssl_model_evaluate(m, s.t, &mut metrics), DrsslStatus::Ok);
        let correct = (0..n).filter(|&i| window(s.t, i).1 == a[i] as i32).count();
        assert_eq!(metrics.n_samples, n);
        assert_eq!(metrics.accuracy, correct as f64 / n as f64);

        assert_eq!(drssl_model_save(m, p.as_ptr()), DrsslStatus::Ok);
        let mut m2 = ptr::null_mut();
        assert_eq!(drssl_model_load(p.as_ptr(), &mut m2), DrsslStatus::Ok);
        let mut b = vec![9u32; n];
        assert_eq!(
            drssl_model_predict(m2, s.t, b.as_mut_ptr(), n),
            DrsslStatus::Ok
        );
        assert_eq!(a, b);
        drssl_model_free(m);
        drssl_model_free(m2);
    }
}

fn exported_functions() -> Vec<String> {
    let src = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    src.lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap().to_owned())
        .collect()
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/drssl.h")
}

#[test]
fn header_declares_every_export() {
    let h = std::fs::read_to_string(header()).unwrap();
    let fns = exported_functions();
    assert!(fns.len() >= 18, "{fns:?}");
    for f in fns {
        assert!(h.contains(&format!("{f}(")), "{f} missing from drssl.h");
    }
    for name in [
        "typedef struct DrsslDataset DrsslDataset",
        "DRSSL_STATUS_TRUNCATED_PAYLOAD = 13",
        "DRSSL_STATUS_NON_FINITE = 3",
    ] {
        assert!(h.contains(name), "{name} missing from drssl.h");
    }
}

/// The directory holding this crate's static library: the test binary sits
/// in `<profile>/deps`.
fn static_lib_dir() -> PathBuf {
    std::env::current_exe()
        .unwrap()
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf()
}

#[test]
fn c_program_links_against_the_static_library() {
    let lib = static_lib_dir().join("libdrssl_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/c/smoke.c");
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .status()
        .expect("a C compiler named cc");
    assert!(status.success());
    let out = Command::new(&exe).arg(dir.path()).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout.starts_with(env!("CARGO_PKG_VERSION")), "{stdout}");
}
