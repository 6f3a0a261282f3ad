use bwla::binarize::Axis;
use bwla::error::BwlaError;
use bwla::kernel::full_inference;
use bwla::numerics::Matrix;
use bwla::okt::Phase;
use bwla::pipeline::{
    is_monotone, load_layer, run_bwla, run_many, save_layer, trajectory_csv, Artifact, BwlaConfig, RotationInit,
    RunReport, Schedule, Tensor, ARTIFACT_VERSION, MONOTONE_SLACK, TENSOR_VERSION, TRAJECTORY_HEADER,
};
use bwla::synth::{gaussian_matrix, gaussian_vec, gen, rng_for, SynthKind, SynthOutput, SynthSpec};

fn small_config() -> BwlaConfig {
    BwlaConfig {
        okt_iters: 8,
        psp_iters: 4,
        seed: 5,
        ..BwlaConfig::default()
    }
}

#[test]
fn synth_is_deterministic_per_seed() {
    for spec in ["gaussian:12x20,sigma=0.5..2", "planted:8x16,noise=0.01", "heavy_tail:4x64,rate=0.05"] {
        let spec = SynthSpec::parse(spec).unwrap().with_seed(9);
        assert_eq!(gen(&spec).unwrap(), gen(&spec).unwrap());
        assert_ne!(gen(&spec).unwrap(), gen(&spec.clone().with_seed(10)).unwrap());
    }
}

#[test]
fn planted_instances_carry_their_answer() {
    let spec = SynthSpec::new(SynthKind::PlantedBimodal, 10, 36, 3);
    let SynthOutput::Planted(p) = gen(&spec).unwrap() else {
        panic!("expected a planted instance");
    };
    let frame = p.rotation.apply_to_rows(&p.w).unwrap();
    assert!(frame.max_abs_diff(&p.signs.scale(p.center)) < 1e-12);
    for i in 0..p.signs.rows() {
        assert_eq!(p.signs.row(i).iter().sum::<f64>(), 0.0);
    }
}

#[test]
fn synth_spec_rejects_malformed_text() {
    for bad in ["", "gaussian", "gaussian:0x4", "nope:4x4", "gaussian:4x4,c", "gaussian:4x4,z=1", "planted:4x5"] {
        assert!(SynthSpec::parse(bad).is_err(), "{bad}");
    }
}

#[test]
fn runs_are_deterministic() {
    let w = gaussian_matrix(12, 16, &mut rng_for(41));
    for schedule in [Schedule::Sequential, Schedule::Interleaved] {
        let cfg = BwlaConfig { schedule, ..small_config() };
        let a = run_bwla(&w, &cfg, "w").unwrap();
        let b = run_bwla(&w, &cfg, "w").unwrap();
        assert_eq!(a.artifact.to_bytes().unwrap(), b.artifact.to_bytes().unwrap());
        assert_eq!(a.report, b.report);
        assert_eq!(trajectory_csv(&a.trajectory), trajectory_csv(&b.trajectory));
    }
}

#[test]
fn run_many_matches_single_runs() {
    let mut rng = rng_for(42);
    let inputs: Vec<(String, Matrix)> =
        (0..3).map(|i| (format!("m{i}"), gaussian_matrix(6 + i, 9, &mut rng))).collect();
    let cfg = small_config();
    let many = run_many(&inputs, &cfg).unwrap();
    for ((id, w), run) in inputs.iter().zip(&many) {
        assert_eq!(run.report.id, *id);
        assert_eq!(run.artifact, run_bwla(w, &cfg, id).unwrap().artifact);
    }
}

#[test]
fn losses_decrease_and_report_round_trips() {
    let w = gaussian_matrix(16, 24, &mut rng_for(43));
    let run = run_bwla(&w, &small_config(), "w").unwrap();
    assert!(is_monotone(&run.trajectory, Phase::Okt, MONOTONE_SLACK));
    assert!(is_monotone(&run.trajectory, Phase::Psp, MONOTONE_SLACK));
    assert!(run.report.okt_monotone && run.report.psp_monotone);
    assert!(run.report.nll_final <= run.report.nll_initial);
    let csv = trajectory_csv(&run.trajectory);
    assert_eq!(csv.lines().next(), Some(TRAJECTORY_HEADER));
    assert_eq!(csv.lines().count(), run.trajectory.len() + 1);

    let report = RunReport::new(&small_config(), vec![run.report.clone()]);
    let json = report.to_json().unwrap();
    assert_eq!(RunReport::from_json(&json).unwrap(), report);
    let newer = json.replacen("\"schema_version\": 1", "\"schema_version\": 2", 1);
    assert!(matches!(RunReport::from_json(&newer), Err(BwlaError::Version { .. })));
}

#[test]
fn artifact_save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let w = gaussian_matrix(10, 18, &mut rng_for(44));
    for axis in [Axis::Row, Axis::Column] {
        let run = run_bwla(&w, &BwlaConfig { axis, ..small_config() }, "w").unwrap();
        let path = dir.path().join("w.bwla");
        save_layer(&path, &run.artifact).unwrap();
        let loaded = load_layer(&path).unwrap();
        assert_eq!(loaded.to_bytes().unwrap(), std::fs::read(&path).unwrap());
        assert_eq!(loaded, run.artifact);
        assert_eq!(BwlaConfig::from_toml(&loaded.config_toml).unwrap().axis, axis);

        let x = gaussian_vec(18, &mut rng_for(45));
        assert_eq!(full_inference(&loaded.layer, &x).unwrap(), full_inference(&run.artifact.layer, &x).unwrap());
    }
}

#[test]
fn corrupt_headers_are_rejected() {
    let w = gaussian_matrix(4, 6, &mut rng_for(46));
    let bytes = run_bwla(&w, &small_config(), "w").unwrap().artifact.to_bytes().unwrap();

    let mut bad_magic = bytes.clone();
    bad_magic[0] ^= 0xff;
    assert!(matches!(Artifact::from_bytes(&bad_magic), Err(BwlaError::Format { .. })));

    let mut newer = bytes.clone();
    newer[12..16].copy_from_slice(&(ARTIFACT_VERSION + 1).to_le_bytes());
    assert!(matches!(Artifact::from_bytes(&newer), Err(BwlaError::Version { .. })));

    for cut in [0, 10, 16, bytes.len() / 2, bytes.len() - 1] {
        assert!(Artifact::from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
    }
    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(Artifact::from_bytes(&trailing).is_err());

    let t = Tensor::from_matrix(&w).to_bytes();
    assert_eq!(Tensor::from_bytes(&t).unwrap().to_bytes(), t);
    let mut t_newer = t.clone();
    t_newer[12..16].copy_from_slice(&(TENSOR_VERSION + 1).to_le_bytes());
    assert!(matches!(Tensor::from_bytes(&t_newer), Err(BwlaError::Version { .. })));
}

#[test]
fn planted_weights_recovered_end_to_end() {
    let spec = SynthSpec::new(SynthKind::PlantedBimodal, 32, 36, 47);
    let w = gen(&spec).unwrap().into_matrix();
    let cfg = BwlaConfig {
        init: RotationInit::Kurtosis,
        okt_iters: 20,
        psp_iters: 0,
        ..BwlaConfig::default()
    };
    let run = run_bwla(&w, &cfg, "planted").unwrap();
    // stored factors are single precision
    assert!(run.report.mse_after < 1e-8, "mse {}", run.report.mse_after);
}

#[test]
fn bad_inputs_name_the_matrix() {
    let mut w = gaussian_matrix(3, 4, &mut rng_for(48));
    w[(1, 2)] = f64::INFINITY;
    let err = run_bwla(&w, &small_config(), "layer7").unwrap_err();
    assert!(err.to_string().contains("layer7"), "{err}");
    assert!(run_bwla(&Matrix::zeros(0, 4), &small_config(), "e").is_err());
    let zero = run_bwla(&Matrix::zeros(3, 4), &small_config(), "z").unwrap();
    assert!(zero.report.degenerate);
}

#[test]
fn config_rejects_unknown_keys_and_bad_values() {
    assert!(BwlaConfig::from_toml("okt_iterz = 3").is_err());
    assert!(BwlaConfig::from_toml("act_bits = 1").is_err());
    assert!(BwlaConfig::from_toml("rank_ratio = -0.5").is_err());
    let cfg = small_config();
    assert_eq!(BwlaConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
}
