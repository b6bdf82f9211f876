use std::fs;

use cpvt_core::digest::fnv1a64;
use cpvt_core::model::{build_model, load_checkpoint, save_checkpoint, DynModel, Model, ModelConfig};
use cpvt_core::pos_encoding::EncodingScheme;
use cpvt_core::{Error, Precision, Seed, Tensor};
use rand::Rng;

fn images<T: cpvt_core::Float>(seed: u64) -> Tensor<T> {
    let mut rng = Seed(seed).stream("test/images");
    Tensor::from_fn(vec![2, 1, 32, 32], |_| T::of(rng.gen_range(-1.0..1.0)))
}

fn saved(cfg: &ModelConfig) -> (tempfile::TempDir, std::path::PathBuf, Model<f32>) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    let m: Model<f32> = build_model(cfg, 3).unwrap();
    save_checkpoint(&m, &path).unwrap();
    (dir, path, m)
}

#[test]
fn round_trip_is_bitwise() {
    for scheme in [EncodingScheme::Learnable, EncodingScheme::Relative { clip: 2, value_bias: true }, ModelConfig::toy().scheme] {
        let cfg = ModelConfig {
            scheme,
            ..ModelConfig::toy()
        };
        let (_dir, path, m) = saved(&cfg);
        let loaded = load_checkpoint(&path).unwrap().into_f32().unwrap();
        assert_eq!(loaded.cfg, m.cfg);
        assert_eq!(loaded.checksum(), m.checksum());
        let x = images::<f32>(1);
        let (a, b) = (m.predict(&x).unwrap(), loaded.predict(&x).unwrap());
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn precision_is_stored_in_the_file() {
    let cfg = ModelConfig {
        precision: Precision::F64,
        ..ModelConfig::toy()
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m64.bin");
    let m = DynModel::build(&cfg, 4).unwrap();
    m.save(&path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.precision(), Precision::F64);
    let (m, loaded) = (m.into_f64().unwrap(), loaded.into_f64().unwrap());
    let x = images::<f64>(2);
    assert_eq!(m.predict(&x).unwrap(), loaded.predict(&x).unwrap());
}

#[test]
fn truncated_file_is_corruption() {
    let (_dir, path, _) = saved(&ModelConfig::toy());
    let bytes = fs::read(&path).unwrap();
    for keep in [0, 10, bytes.len() / 2, bytes.len() - 1] {
        fs::write(&path, &bytes[..keep]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Corruption { .. })), "keep={keep}");
    }
}

#[test]
fn flipped_byte_is_corruption() {
    let (_dir, path, _) = saved(&ModelConfig::toy());
    let bytes = fs::read(&path).unwrap();
    for at in [0, 9, bytes.len() / 2, bytes.len() - 20, bytes.len() - 1] {
        let mut bad = bytes.clone();
        bad[at] ^= 0x40;
        fs::write(&path, &bad).unwrap();
        match load_checkpoint(&path) {
            Err(Error::Corruption { reason, .. }) => assert!(reason.contains("digest"), "{reason}"),
            other => panic!("byte {at}: {other:?}"),
        }
    }
}

fn resealed(mut body: Vec<u8>) -> Vec<u8> {
    let d = fnv1a64(&body);
    body.extend_from_slice(&d.to_le_bytes());
    body
}

#[test]
fn other_version_is_version_error() {
    let (_dir, path, _) = saved(&ModelConfig::toy());
    let bytes = fs::read(&path).unwrap();
    let mut body = bytes[..bytes.len() - 8].to_vec();
    body[8..12].copy_from_slice(&2u32.to_le_bytes());
    fs::write(&path, resealed(body)).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Version { found: 2, expected: 1 })));
}

#[test]
fn wrong_magic_is_corruption() {
    let (_dir, path, _) = saved(&ModelConfig::toy());
    let bytes = fs::read(&path).unwrap();
    let mut body = bytes[..bytes.len() - 8].to_vec();
    body[..8].copy_from_slice(b"NOTACKPT");
    fs::write(&path, resealed(body)).unwrap();
    match load_checkpoint(&path) {
        Err(Error::Corruption { reason, .. }) => assert!(reason.contains("magic")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn missing_file_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_checkpoint(&dir.path().join("absent.bin")), Err(Error::Io { .. })));
}
