use std::ffi::{CStr, CString};
use std::ptr;

use jcpa::baselines::{closest_split, exhaustive, wmmse_allocation, ClosestOrder, WmmseConfig, DEFAULT_GUARD};
use jcpa::jcpgnn::{forward, init_params, save_checkpoint, Mode};
use jcpa::metrics::{objective, Allocation};
use jcpa::netgen::{sample_instance, FadingConfig, GeometryConfig};
use jcpa_ffi::*;

fn sample(d: usize, m: usize, seed: u64) -> *mut JcpaInstance {
    let mut inst = ptr::null_mut();
    assert_eq!(unsafe { jcpa_instance_sample(d, m, seed, &mut inst) }, JcpaStatus::Ok);
    assert!(!inst.is_null());
    inst
}

fn last_error() -> String {
    let p = jcpa_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn sampled_instance_matches_library() {
    let inst = sample(6, 2, 42);
    let reference = sample_instance(&GeometryConfig::new(6, 2), &FadingConfig::default(), 42).unwrap();
    let (mut d, mut m) = (0, 0);
    unsafe {
        assert_eq!(jcpa_instance_dims(inst, &mut d, &mut m), JcpaStatus::Ok);
        assert_eq!((d, m), (6, 2));
        let mut g = 0.0;
        assert_eq!(jcpa_instance_gain(inst, 3, 1, 1, &mut g), JcpaStatus::Ok);
        assert_eq!(g, reference.gain(3, 1, 1));
        assert_eq!(jcpa_instance_gain(inst, 6, 0, 0, &mut g), JcpaStatus::Dimension);
        jcpa_instance_free(inst);
    }
}

#[test]
fn objective_and_wmmse_match_library() {
    let inst = sample(5, 2, 7);
    let reference = sample_instance(&GeometryConfig::new(5, 2), &FadingConfig::default(), 7).unwrap();
    let assignment = [0usize, 1, 0, 1, 1];
    let mut power = [0.0; 5];
    unsafe {
        assert_eq!(jcpa_wmmse_power(inst, assignment.as_ptr(), 5, power.as_mut_ptr()), JcpaStatus::Ok);
    }
    let channel = Allocation::from_assignment(&assignment, 2, vec![0.0; 5]).channel;
    let expected = wmmse_allocation(&reference, &channel, &WmmseConfig::default()).unwrap();
    assert_eq!(power.to_vec(), expected.power);

    let mut value = 0.0;
    unsafe {
        assert_eq!(
            jcpa_objective(inst, assignment.as_ptr(), power.as_ptr(), 5, &mut value),
            JcpaStatus::Ok
        );
        jcpa_instance_free(inst);
    }
    assert_eq!(value, objective(&reference, &expected).unwrap());
}

#[test]
fn solvers_match_library() {
    let inst = sample(6, 2, 3);
    let reference = sample_instance(&GeometryConfig::new(6, 2), &FadingConfig::default(), 3).unwrap();
    let cfg = WmmseConfig::default();
    let (mut a, mut p) = ([0usize; 6], [0.0; 6]);
    unsafe {
        assert_eq!(jcpa_exhaustive(inst, 6, a.as_mut_ptr(), p.as_mut_ptr()), JcpaStatus::Ok);
    }
    let best = exhaustive(&reference, &cfg, DEFAULT_GUARD).unwrap();
    assert_eq!(a.to_vec(), best.assignment());
    assert_eq!(p.to_vec(), best.power);

    unsafe {
        assert_eq!(jcpa_closest(inst, 6, a.as_mut_ptr(), p.as_mut_ptr()), JcpaStatus::Ok);
        jcpa_instance_free(inst);
    }
    let closest = wmmse_allocation(&reference, &closest_split(&reference, ClosestOrder::Proximity), &cfg).unwrap();
    assert_eq!(a.to_vec(), closest.assignment());
    assert_eq!(p.to_vec(), closest.power);
}

#[test]
fn explicit_gains_round_trip() {
    // two pairs, one channel: strong direct links, weak cross links
    let gains = [1.0, 0.01, 0.02, 0.5];
    let weights = [1.0, 1.0];
    let mut inst = ptr::null_mut();
    unsafe {
        assert_eq!(
            jcpa_instance_from_gains(2, 1, gains.as_ptr(), weights.as_ptr(), 1e-3, 1.0, &mut inst),
            JcpaStatus::Ok
        );
        let mut g = 0.0;
        jcpa_instance_gain(inst, 0, 1, 0, &mut g);
        assert_eq!(g, 0.01);
        jcpa_instance_gain(inst, 1, 0, 0, &mut g);
        assert_eq!(g, 0.02);

        let mut value = 0.0;
        let (a, p) = ([0usize, 0], [1.0, 0.0]);
        assert_eq!(jcpa_objective(inst, a.as_ptr(), p.as_ptr(), 2, &mut value), JcpaStatus::Ok);
        assert!((value - (1.0f64 + 1.0 / 1e-3).log2()).abs() < 1e-12);
        jcpa_instance_free(inst);

        let bad = [1.0, -0.5, 0.0, 1.0];
        assert_eq!(
            jcpa_instance_from_gains(2, 1, bad.as_ptr(), weights.as_ptr(), 1e-3, 1.0, &mut inst),
            JcpaStatus::InvalidArgument
        );
    }
}

#[test]
fn model_allocation_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let params = init_params(2, 3, 11).unwrap();
    save_checkpoint(&params, &path).unwrap();
    let c_path = CString::new(path.to_str().unwrap()).unwrap();

    let mut model = ptr::null_mut();
    let inst = sample(8, 2, 5);
    let reference = sample_instance(&GeometryConfig::new(8, 2), &FadingConfig::default(), 5).unwrap();
    let (mut a, mut p) = ([0usize; 8], [0.0; 8]);
    unsafe {
        assert_eq!(jcpa_model_load(c_path.as_ptr(), &mut model), JcpaStatus::Ok);
        let mut m = 0;
        assert_eq!(jcpa_model_channels(model, &mut m), JcpaStatus::Ok);
        assert_eq!(m, 2);
        assert_eq!(
            jcpa_model_allocate(model, inst, 8, a.as_mut_ptr(), p.as_mut_ptr()),
            JcpaStatus::Ok
        );
    }
    let expected = forward(&params.graph(&reference), &params, Mode::Hard).unwrap();
    assert_eq!(a.to_vec(), expected.assignment());
    assert_eq!(p.to_vec(), expected.power);

    let other = sample(4, 3, 1);
    unsafe {
        assert_eq!(
            jcpa_model_allocate(model, other, 4, a.as_mut_ptr(), p.as_mut_ptr()),
            JcpaStatus::Dimension
        );
        jcpa_instance_free(other);
        jcpa_instance_free(inst);
        jcpa_model_free(model);
    }
    assert!(last_error().contains("M=3"));
}

#[test]
fn errors_are_reported() {
    let inst = sample(4, 2, 1);
    let mut out = 0.0;
    let (mut a, mut p) = ([0usize; 4], [0.0; 4]);
    unsafe {
        assert_eq!(
            jcpa_objective(ptr::null(), a.as_ptr(), p.as_ptr(), 4, &mut out),
            JcpaStatus::NullPointer
        );
        assert_eq!(last_error(), "instance is null");

        assert_eq!(jcpa_exhaustive(inst, 3, a.as_mut_ptr(), p.as_mut_ptr()), JcpaStatus::Dimension);
        assert!(last_error().contains("D=4"));

        let bad = [0usize, 2, 0, 0];
        assert_eq!(
            jcpa_objective(inst, bad.as_ptr(), p.as_ptr(), 4, &mut out),
            JcpaStatus::InvalidArgument
        );

        assert_eq!(jcpa_instance_sample(0, 2, 1, &mut ptr::null_mut()), JcpaStatus::InvalidArgument);

        let missing = CString::new("/nonexistent/model.json").unwrap();
        let mut model = ptr::null_mut();
        assert_eq!(jcpa_model_load(missing.as_ptr(), &mut model), JcpaStatus::Io);
        assert!(model.is_null());

        jcpa_instance_free(inst);
        jcpa_instance_free(ptr::null_mut());
        jcpa_model_free(ptr::null_mut());
    }
}

#[test]
fn exhaustive_guard_refuses_large_networks() {
    let inst = sample(21, 2, 9);
    let (mut a, mut p) = ([0usize; 21], [0.0; 21]);
    unsafe {
        assert_eq!(jcpa_exhaustive(inst, 21, a.as_mut_ptr(), p.as_mut_ptr()), JcpaStatus::Guard);
        jcpa_instance_free(inst);
    }
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(jcpa_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/jcpa.h")).unwrap();
    for name in [
        "typedef struct JcpaInstance JcpaInstance",
        "typedef struct JcpaModel JcpaModel",
        "JCPA_STATUS_OK = 0",
        "JCPA_STATUS_GUARD = 6",
        "jcpa_instance_sample(",
        "jcpa_model_allocate(",
        "jcpa_last_error_message(",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"jcpa.h\"\n\
         int check(void) {\n\
           JcpaInstance *inst = NULL;\n\
           size_t a[4]; double p[4];\n\
           if (jcpa_instance_sample(4, 2, 1, &inst) != JCPA_STATUS_OK) return 1;\n\
           JcpaStatus s = jcpa_closest(inst, 4, a, p);\n\
           jcpa_instance_free(inst);\n\
           return s == JCPA_STATUS_OK ? 0 : 1;\n\
         }\n",
    )
    .unwrap();
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let out = match std::process::Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang, "-I", include])
            .arg(&src)
            .output()
        {
            Ok(out) => out,
            Err(_) => {
                eprintln!("{compiler} not available, skipping");
                continue;
            }
        };
        assert!(out.status.success(), "{compiler}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
