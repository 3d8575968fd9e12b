use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use pbdcae::cli::random_model;
use pbdcae::layers::Architecture;
use pbdcae::modelio::PackedModel;
use pbdcae::Image8;
use pbdcae_ffi::*;

fn model() -> PackedModel {
    random_model(Architecture::desk(), 11).unwrap()
}

fn pixels(h: usize, w: usize, seed: u32) -> Vec<u8> {
    let mut x = seed.wrapping_mul(2654435761) | 1;
    (0..h * w * 3)
        .map(|_| {
            x ^= x << 13;
            x ^= x >> 17;
            x ^= x << 5;
            (x >> 24) as u8
        })
        .collect()
}

fn load(m: &PackedModel) -> *mut PbdcaeModel {
    let bytes = m.to_bytes();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { pbdcae_model_from_bytes(bytes.as_ptr(), bytes.len(), &mut h) }, PbdcaeStatus::Ok);
    assert!(!h.is_null());
    h
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(pbdcae_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn session_matches_library_step_by_step() {
    let m = model();
    let h = load(&m);
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { pbdcae_session_new(h, &mut s) }, PbdcaeStatus::Ok);
    // The session keeps the model alive after the handle is released.
    unsafe { pbdcae_model_free(h) };

    let mut state = m.lstm().initial_state();
    let mut motor = [0.0f32; PBDCAE_MOTOR_DIM];
    for t in 0..4 {
        let px = pixels(80, 96, t);
        let mut next = [0.0f32; PBDCAE_MOTOR_DIM];
        let st = unsafe { pbdcae_session_step(s, px.as_ptr(), 80, 96, motor.as_ptr(), next.as_mut_ptr(), motor.len()) };
        assert_eq!(st, PbdcaeStatus::Ok, "{}", last_error());

        let img = Image8::from_hwc(80, 96, 3, &px).unwrap();
        let mut norm: Vec<f32> = motor[..12].iter().map(|d| d / 180.0).collect();
        norm.push(motor[12]);
        let (y, st2) = m.step(&img, &norm, &state).unwrap();
        state = st2;
        let off = m.arch().feature_dim;
        for j in 0..12 {
            assert_eq!(next[j], y[off + j] * 180.0);
        }
        assert_eq!(next[12], y[off + 12].clamp(0.0, 1.0));
        motor = next;
    }

    // Reset restores the zero state, so the first step repeats exactly.
    let px = pixels(80, 96, 0);
    let zero = [0.0f32; PBDCAE_MOTOR_DIM];
    let (mut a, mut b) = ([0.0f32; PBDCAE_MOTOR_DIM], [0.0f32; PBDCAE_MOTOR_DIM]);
    unsafe {
        assert_eq!(pbdcae_session_reset(s), PbdcaeStatus::Ok);
        pbdcae_session_step(s, px.as_ptr(), 80, 96, zero.as_ptr(), a.as_mut_ptr(), 13);
        pbdcae_session_reset(s);
        pbdcae_session_step(s, px.as_ptr(), 80, 96, zero.as_ptr(), b.as_mut_ptr(), 13);
        pbdcae_session_free(s);
    }
    assert_eq!(a, b);
}

#[test]
fn encode_matches_packed_encoder() {
    let m = model();
    let h = load(&m);
    let mut info = PbdcaeModelInfo::default();
    assert_eq!(unsafe { pbdcae_model_info(h, &mut info) }, PbdcaeStatus::Ok);
    let a = m.arch();
    assert_eq!(
        (info.input_size, info.input_channels, info.feature_dim, info.motor_dim, info.lstm_layers, info.mode),
        (a.input_size as u32, 3, a.feature_dim as u32, 13, 2, 1)
    );

    let px = pixels(a.input_size, a.input_size, 5);
    let mut f = vec![0.0f32; a.feature_dim];
    let st = unsafe { pbdcae_encode(h, px.as_ptr(), a.input_size, a.input_size, f.as_mut_ptr(), f.len()) };
    assert_eq!(st, PbdcaeStatus::Ok);
    let img = Image8::from_hwc(a.input_size, a.input_size, 3, &px).unwrap();
    assert_eq!(f, m.encoder().forward(&img).unwrap().into_data());
    assert!(f.iter().all(|v| *v == 1.0 || *v == -1.0));

    let st = unsafe { pbdcae_encode(h, px.as_ptr(), a.input_size, a.input_size, f.as_mut_ptr(), f.len() - 1) };
    assert_eq!(st, PbdcaeStatus::ShapeMismatch);
    assert!(last_error().contains("feature buffer"));
    unsafe { pbdcae_model_free(h) };
}

#[test]
fn errors_map_to_status_codes() {
    let mut h = ptr::null_mut();
    let mut bytes = model().to_bytes();
    unsafe {
        assert_eq!(pbdcae_model_from_bytes(ptr::null(), 4, &mut h), PbdcaeStatus::NullPointer);
        assert_eq!(pbdcae_model_from_bytes(bytes.as_ptr(), bytes.len(), ptr::null_mut()), PbdcaeStatus::NullPointer);
        assert_eq!(pbdcae_model_from_bytes(b"XXXX".as_ptr(), 4, &mut h), PbdcaeStatus::Format);
        assert!(h.is_null());

        let last = bytes.len() - 1;
        bytes[last] ^= 0x40;
        assert_eq!(pbdcae_model_from_bytes(bytes.as_ptr(), bytes.len(), &mut h), PbdcaeStatus::Checksum);
        bytes[last] ^= 0x40;
        bytes[4] = 9;
        assert_eq!(pbdcae_model_from_bytes(bytes.as_ptr(), bytes.len(), &mut h), PbdcaeStatus::UnsupportedVersion);

        let missing = CString::new("/nonexistent/model.pbdc").unwrap();
        assert_eq!(pbdcae_model_load(missing.as_ptr(), &mut h), PbdcaeStatus::Io);
        assert!(!last_error().is_empty());

        assert_eq!(pbdcae_session_new(ptr::null(), &mut ptr::null_mut()), PbdcaeStatus::NullPointer);
        assert_eq!(pbdcae_session_reset(ptr::null_mut()), PbdcaeStatus::NullPointer);
        pbdcae_model_free(ptr::null_mut());
        pbdcae_session_free(ptr::null_mut());

        let m = load(&model());
        let mut s = ptr::null_mut();
        pbdcae_session_new(m, &mut s);
        let px = pixels(8, 8, 1);
        let motor = [0.0f32; 13];
        let mut out = [0.0f32; 13];
        assert_eq!(pbdcae_session_step(s, px.as_ptr(), 8, 8, motor.as_ptr(), out.as_mut_ptr(), 12), PbdcaeStatus::ShapeMismatch);
        assert_eq!(pbdcae_session_step(s, ptr::null(), 8, 8, motor.as_ptr(), out.as_mut_ptr(), 13), PbdcaeStatus::NullPointer);
        pbdcae_session_free(s);
        pbdcae_model_free(m);

        let name = CStr::from_ptr(pbdcae_status_str(PbdcaeStatus::Checksum));
        assert_eq!(name.to_str().unwrap(), "checksum mismatch");
    }
}

#[test]
fn load_from_file() {
    let path = std::env::temp_dir().join(format!("pbdcae-ffi-{}.pbdc", std::process::id()));
    std::fs::write(&path, model().to_bytes()).unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { pbdcae_model_load(c.as_ptr(), &mut h) }, PbdcaeStatus::Ok);
    unsafe { pbdcae_model_free(h) };
    std::fs::remove_file(path).unwrap();
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let header = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/pbdcae.h");
    assert!(header.exists());
    for (cc, lang) in [("cc", "c"), ("c++", "c++")] {
        let Ok(out) = Command::new(cc).args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang]).arg(&header).output() else {
            eprintln!("{cc} not available; skipping");
            continue;
        };
        assert!(out.status.success(), "{cc}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
