//! Replays the checked-in fuzz seeds, plus deterministic mutations of them,
//! through every decoder. Nothing may panic; accepted inputs must round-trip.

use std::path::PathBuf;

use bwla::pipeline::{Artifact, BwlaConfig, Tensor};
use bwla::synth::{rng_for, SynthSpec};
use rand::Rng;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let path = e.unwrap().path();
            (path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&path).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn mutations(bytes: &[u8], seed: u64) -> Vec<Vec<u8>> {
    let mut rng = rng_for(seed);
    let mut out = Vec::new();
    for cut in 0..bytes.len().min(64) {
        out.push(bytes[..cut].to_vec());
    }
    for _ in 0..300 {
        let mut b = bytes.to_vec();
        for _ in 0..rng.random_range(1..4) {
            match rng.random_range(0..3) {
                0 if !b.is_empty() => {
                    let i = rng.random_range(0..b.len());
                    b[i] ^= 1 << rng.random_range(0..8);
                }
                1 if !b.is_empty() => {
                    let i = rng.random_range(0..b.len());
                    b[i] = [0x00, 0xff, 0x7f, 0x80][rng.random_range(0..4)];
                }
                _ => {
                    let i = rng.random_range(0..=b.len());
                    b.insert(i, rng.random());
                }
            }
        }
        out.push(b);
    }
    out
}

fn check_tensor(bytes: &[u8]) {
    if let Ok(t) = Tensor::from_bytes(bytes) {
        assert_eq!(t.to_bytes(), bytes);
        let _ = t.to_matrix();
    }
}

fn check_artifact(bytes: &[u8]) {
    if let Ok(a) = Artifact::from_bytes(bytes) {
        let again = a.to_bytes().unwrap();
        assert_eq!(Artifact::from_bytes(&again).unwrap(), a);
    }
}

fn check_config(bytes: &[u8]) {
    if let Ok(text) = std::str::from_utf8(bytes) {
        if let Ok(cfg) = BwlaConfig::from_toml(text) {
            assert_eq!(BwlaConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
        }
    }
}

fn check_synth(bytes: &[u8]) {
    if let Ok(text) = std::str::from_utf8(bytes) {
        if let Ok(spec) = SynthSpec::parse(text) {
            spec.validate().unwrap();
        }
    }
}

fn replay(target: &str, check: fn(&[u8])) {
    for (i, (_, bytes)) in seeds(target).iter().enumerate() {
        check(bytes);
        for m in mutations(bytes, i as u64) {
            check(&m);
        }
    }
}

#[test]
fn tensor_seeds() {
    replay("tensor", check_tensor);
    assert!(Tensor::from_bytes(&seeds("tensor").iter().find(|(n, _)| n == "matrix_2x3").unwrap().1).is_ok());
}

#[test]
fn artifact_seeds() {
    replay("artifact", check_artifact);
    for (name, bytes) in seeds("artifact") {
        assert!(Artifact::from_bytes(&bytes).is_ok(), "{name}");
    }
}

#[test]
fn config_seeds() {
    replay("config", check_config);
    let all = seeds("config");
    let get = |n: &str| std::str::from_utf8(&all.iter().find(|(name, _)| name == n).unwrap().1).unwrap().to_owned();
    assert!(BwlaConfig::from_toml(&get("default.toml")).is_ok());
    assert!(BwlaConfig::from_toml(&get("synth.toml")).is_ok());
    assert!(BwlaConfig::from_toml(&get("bad_bits.toml")).is_err());
}

#[test]
fn synth_spec_seeds() {
    replay("synth_spec", check_synth);
}
