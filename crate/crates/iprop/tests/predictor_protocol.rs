//! Exercises the subprocess predictor protocol against the bundled
//! synthetic predictor binary and against misbehaving stand-ins.

use iprop::imaging::RgbImage;
use iprop::predictor::{Predictor, PredictorSession};
use iprop::Error;

const PREDICTOR_BIN: &str = env!("CARGO_BIN_EXE_iprop-predictor");

fn args(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn write_mask_png(path: &std::path::Path, h: u32, w: u32, lit: &[(u32, u32)]) {
    let mut img = image::GrayImage::new(w, h);
    for &(r, c) in lit {
        img.put_pixel(c, r, image::Luma([255]));
    }
    img.save(path).unwrap();
}

#[test]
fn constant_mode_end_to_end() {
    let mut session = PredictorSession::open(
        PREDICTOR_BIN,
        &args(&["--mode", "constant", "--prob", "0.7"]),
    )
    .unwrap();
    let img = RgbImage::from_fn(4, 4, |r, c| [(r * 30) as u8, (c * 30) as u8, 5]).unwrap();
    for _ in 0..3 {
        assert_eq!(session.predict_image(&img, 2).unwrap(), 0.7);
    }
}

#[test]
fn region_mean_mode_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let mask = dir.path().join("region.png");
    write_mask_png(&mask, 2, 2, &[(0, 0), (0, 1)]);
    let mut session = PredictorSession::open(
        PREDICTOR_BIN,
        &args(&["--mode", "region-mean", "--region", mask.to_str().unwrap()]),
    )
    .unwrap();

    let black = RgbImage::from_fn(2, 2, |_, _| [0, 0, 0]).unwrap();
    assert_eq!(session.predict_image(&black, 0).unwrap(), 0.0);

    let lit = RgbImage::from_fn(2, 2, |r, _| if r == 0 { [255; 3] } else { [0; 3] }).unwrap();
    assert_eq!(session.predict_image(&lit, 0).unwrap(), 1.0);

    let half = RgbImage::from_fn(2, 2, |r, c| {
        if r == 0 && c == 0 {
            [255; 3]
        } else {
            [0; 3]
        }
    })
    .unwrap();
    assert_eq!(session.predict_image(&half, 0).unwrap(), 0.5);
}

#[test]
fn ids_are_monotone_and_lockstep() {
    let mut session = PredictorSession::open(
        PREDICTOR_BIN,
        &args(&["--mode", "constant", "--prob", "0.25"]),
    )
    .unwrap();
    let img = RgbImage::from_fn(2, 2, |_, _| [9, 9, 9]).unwrap();
    let png = img.encode_png().unwrap();
    let first = session.predict_png(&png, 0).unwrap();
    let second = session.predict_png(&png, 0).unwrap();
    assert!(second.id > first.id);
    assert_eq!(first.argmax_class, 0);
}

#[test]
fn missing_region_file_fails_startup() {
    let result = PredictorSession::open(
        PREDICTOR_BIN,
        &args(&["--mode", "region-mean", "--region", "/no/such/mask.png"]),
    );
    assert!(result.is_err());
}

#[test]
fn nonexistent_executable_is_a_spawn_error() {
    assert!(matches!(
        PredictorSession::open("/no/such/predictor", &[]),
        Err(Error::Predictor(_))
    ));
}

#[test]
fn malformed_response_kills_the_session() {
    // handshake then garbage forever
    let script = r#"echo '{"protocol":"iprop-predict","version":1}'; while read -r _; do echo not-json; done"#;
    let mut session = PredictorSession::open("/bin/sh", &args(&["-c", script])).unwrap();
    let img = RgbImage::from_fn(2, 2, |_, _| [1, 1, 1]).unwrap();
    let png = img.encode_png().unwrap();
    assert!(matches!(
        session.predict_png(&png, 0),
        Err(Error::Protocol(_))
    ));
    // session is dead afterwards; later requests fail fast
    assert!(matches!(
        session.predict_png(&png, 0),
        Err(Error::Predictor(_))
    ));
}

#[test]
fn version_mismatch_is_rejected() {
    let script = r#"echo '{"protocol":"iprop-predict","version":2}'; sleep 1"#;
    assert!(matches!(
        PredictorSession::open("/bin/sh", &args(&["-c", script])),
        Err(Error::Protocol(_))
    ));
}
