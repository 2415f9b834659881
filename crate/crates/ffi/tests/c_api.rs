use std::ffi::{CStr, CString};
use std::ptr;

use avseg_ffi::*;

const MICRO: &str = "d_model = 16\nn_head = 2\nn_enc_layers = 1\nn_dec_layers = 1\nn_query = 2\n\
                     height = 32\nwidth = 32\nframes = 1\nstub_width = 4\nsteps = 2\neval_clips = 1\n";

fn last_error() -> String {
    unsafe { CStr::from_ptr(avseg_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn micro_model(seed: u64) -> *mut AvsegModel {
    let cfg = CString::new(MICRO).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { avseg_model_new(cfg.as_ptr(), seed, &mut m) },
        AvsegStatus::Ok
    );
    assert!(!m.is_null());
    m
}

#[test]
fn predict_on_generated_clip() {
    unsafe {
        let m = micro_model(1);
        let mut info = AvsegModelInfo::default();
        assert_eq!(avseg_model_info(m, &mut info), AvsegStatus::Ok);
        assert_eq!(
            (info.height, info.mask_height, info.n_class, info.audio_dim),
            (32, 8, 1, 16)
        );

        let mut clip = ptr::null_mut();
        assert_eq!(avseg_clip_generate(m, 5, &mut clip), AvsegStatus::Ok);
        let mut shape = AvsegClipShape::default();
        assert_eq!(avseg_clip_shape(clip, &mut shape), AvsegStatus::Ok);
        assert_eq!(shape.frames, 1);

        let mut frames = vec![0.0; shape.frames * 3 * shape.height * shape.width];
        let mut audio = vec![0.0; shape.frames * shape.audio_dim];
        let mut labels = vec![0u16; shape.frames * (shape.height / 4) * (shape.width / 4)];
        assert_eq!(
            avseg_clip_frames(clip, frames.as_mut_ptr(), frames.len()),
            AvsegStatus::Ok
        );
        assert_eq!(
            avseg_clip_audio(clip, audio.as_mut_ptr(), audio.len()),
            AvsegStatus::Ok
        );
        assert_eq!(
            avseg_clip_labels(clip, labels.as_mut_ptr(), labels.len()),
            AvsegStatus::Ok
        );
        assert!(labels.iter().any(|&l| l != 0));

        let n = shape.frames * info.n_class * info.mask_height * info.mask_width;
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        for out in [&mut a, &mut b] {
            let st = avseg_model_predict(
                m,
                shape.frames,
                frames.as_ptr(),
                audio.as_ptr(),
                out.as_mut_ptr(),
                n,
            );
            assert_eq!(st, AvsegStatus::Ok, "{}", last_error());
        }
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite()));

        let st = avseg_model_predict(
            m,
            shape.frames,
            frames.as_ptr(),
            audio.as_ptr(),
            a.as_mut_ptr(),
            n - 1,
        );
        assert_eq!(st, AvsegStatus::BufferTooSmall);
        assert!(last_error().contains("needed"));

        avseg_clip_free(clip);
        avseg_model_free(m);
    }
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
    unsafe {
        let m = micro_model(2);
        assert_eq!(avseg_model_save(m, path.as_ptr()), AvsegStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(avseg_model_load(path.as_ptr(), &mut back), AvsegStatus::Ok);
        let frames = vec![0.25; 3 * 32 * 32];
        let audio = [0.1; 16];
        let (mut a, mut b) = (vec![0.0; 64], vec![0.0; 64]);
        avseg_model_predict(m, 1, frames.as_ptr(), audio.as_ptr(), a.as_mut_ptr(), 64);
        avseg_model_predict(back, 1, frames.as_ptr(), audio.as_ptr(), b.as_mut_ptr(), 64);
        assert_eq!(a, b);
        avseg_model_free(m);
        avseg_model_free(back);
    }
}

#[test]
fn errors_map_to_codes() {
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(
            avseg_model_new(ptr::null(), 0, &mut m),
            AvsegStatus::NullArgument
        );
        let bad = CString::new("mystery = 3").unwrap();
        assert_eq!(
            avseg_model_new(bad.as_ptr(), 0, &mut m),
            AvsegStatus::Config
        );
        assert!(last_error().contains("mystery"));
        let missing = CString::new("/nonexistent/model.ckpt").unwrap();
        assert_eq!(avseg_model_load(missing.as_ptr(), &mut m), AvsegStatus::Io);

        let dir = tempfile::tempdir().unwrap();
        let junk = dir.path().join("junk.ckpt");
        std::fs::write(&junk, b"NOPE0000").unwrap();
        let junk = CString::new(junk.to_str().unwrap()).unwrap();
        assert_eq!(avseg_model_load(junk.as_ptr(), &mut m), AvsegStatus::Format);
        assert!(m.is_null());

        let good = micro_model(0);
        let frames = vec![0.0; 3 * 32 * 32];
        let audio = [0.0; 16];
        let mut out = vec![0.0; 64];
        let st = avseg_model_predict(
            good,
            0,
            frames.as_ptr(),
            audio.as_ptr(),
            out.as_mut_ptr(),
            64,
        );
        assert_eq!(st, AvsegStatus::Dimension);
        let st = avseg_model_predict(good, 1, ptr::null(), audio.as_ptr(), out.as_mut_ptr(), 64);
        assert_eq!(st, AvsegStatus::NullArgument);
        assert!(last_error().contains("frames"));
        avseg_model_free(good);
        avseg_model_free(ptr::null_mut());
    }
}
