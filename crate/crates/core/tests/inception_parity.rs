//! Compares the InceptionV3 port with torchvision on a probe image.
//!
//! Needs a weight directory exported with
//! `scripts/export_inception.py --random SEED --out DIR --probe DIR/probe.json`
//! named by `SIGAN_INCEPTION_PROBE`; without it the test only reports that it
//! was skipped.

use std::path::PathBuf;

use sigan::evaluation::{FeatureExtractor, InceptionV3};
use sigan_tensor::Tensor;

fn probe_image(size: usize) -> Tensor<f32> {
    Tensor::from_fn([size, size], |i| {
        let (y, x) = ((i / size) as f32, (i % size) as f32);
        (x / 9.0).sin() * (y / 13.0).cos() * 0.8 + (x - y) / (4.0 * size as f32)
    })
}

#[test]
fn matches_torchvision_features() {
    let Some(dir) = std::env::var_os("SIGAN_INCEPTION_PROBE").map(PathBuf::from) else {
        eprintln!("SIGAN_INCEPTION_PROBE not set; skipping the torchvision comparison");
        return;
    };
    let probe: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("probe.json")).unwrap()).unwrap();
    let expected: Vec<f64> = serde_json::from_value(probe["features"].clone()).unwrap();
    let size = probe["size"].as_u64().unwrap() as usize;

    let net = InceptionV3::load(&dir).unwrap();
    let got = net.extract(&probe_image(size)).unwrap();
    assert_eq!(got.len(), expected.len());
    let scale = expected.iter().map(|v| v.abs()).fold(0.0f64, f64::max).max(1e-6);
    let worst = got.iter().zip(&expected).map(|(a, b)| (a - b).abs()).fold(0.0f64, f64::max);
    assert!(worst <= 1e-4 * scale, "max deviation {worst:e} (feature scale {scale:e})");
}
