use std::path::Path;
use std::process::Command;

use uddl::{load_features, AdaptOptions, KsvdConfig, SynthSpec};
use uddl_cli::commands::{cmd_adapt, cmd_eval, cmd_pipeline, cmd_synth, MODEL_FILE, REPORT_FILE};
use uddl_cli::config::parse_pairs;
use uddl_cli::model::{parse_list, AdaptedModel};
use uddl_cli::{EvalOptions, TrialReport};

fn small_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        images_per_class: 12,
        features_per_image: 10,
        seed,
        ..SynthSpec::default()
    }
}

fn adapt_options(num_atoms: usize) -> AdaptOptions {
    AdaptOptions {
        ksvd: KsvdConfig {
            num_atoms,
            sparsity: 3,
            iterations: 10,
            ..KsvdConfig::default()
        },
        standardize_coupling: false,
    }
}

fn sink() -> std::io::Sink {
    std::io::sink()
}

#[test]
fn synth_files_are_loadable_and_replayable() {
    let dir = tempfile::tempdir().unwrap();
    let a = cmd_synth(&small_spec(4), &dir.path().join("a"), false, &mut sink()).unwrap();
    let b = cmd_synth(&small_spec(4), &dir.path().join("b"), false, &mut sink()).unwrap();
    for (x, y) in [
        (&a.source, &b.source),
        (&a.target, &b.target),
        (&a.ground_truth, &b.ground_truth),
    ] {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
    let (f, images) = load_features::<f64>(&a.source).unwrap();
    assert_eq!(f.count(), 5 * 12 * 10);
    assert_eq!(images.unwrap().len(), 60);
    let (gt, none) = load_features::<f64>(&a.ground_truth).unwrap();
    assert_eq!((gt.dim(), gt.count()), (20, 30));
    assert!(none.is_none());
}

#[test]
fn moment_check_accepts_unshifted_domains() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..3 {
        let spec = SynthSpec {
            shift_strength: 0.0,
            seed,
            ..SynthSpec::default()
        };
        let out = cmd_synth(&spec, dir.path(), true, &mut sink()).unwrap();
        let check = out.check.unwrap();
        assert!(check.passed(), "seed {seed}: {check:?}");
        assert_eq!(check.tests, 2 * 5 * 20);
    }
}

#[test]
fn moment_check_flags_strong_shift() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        shift_strength: 4.0,
        ..SynthSpec::default()
    };
    let check = cmd_synth(&spec, dir.path(), true, &mut sink())
        .unwrap()
        .check
        .unwrap();
    assert!(!check.passed(), "{check:?}");
}

#[test]
fn adapt_writes_verifiable_model() {
    let dir = tempfile::tempdir().unwrap();
    let files = cmd_synth(&small_spec(1), dir.path(), false, &mut sink()).unwrap();
    let model_path = dir.path().join(MODEL_FILE);
    let mut log = Vec::new();
    let summary = cmd_adapt(
        &files.source,
        &files.target,
        &adapt_options(40),
        &model_path,
        &mut log,
    )
    .unwrap();
    assert!(summary.warnings.is_empty());
    assert!(summary.block.relative_error <= 1e-9);
    assert!(String::from_utf8(log).unwrap().contains("iteration   1"));

    let model = AdaptedModel::load(&model_path).unwrap();
    assert_eq!(model, summary.model);
    assert_eq!(model.dictionaries.source_dict.atoms().dim(), (20, 40));

    let before = parse_list(model.meta_value("sweep_before").unwrap()).unwrap();
    let after = parse_list(model.meta_value("sweep_after").unwrap()).unwrap();
    assert_eq!(before.len(), after.len());
    assert!(before
        .iter()
        .zip(&after)
        .all(|(b, a)| *a <= b * (1.0 + 1e-9)));
    assert_eq!(
        model.objective_trace().unwrap().len(),
        summary.report.iterations_run
    );

    let (s, _) = load_features::<f64>(&files.source).unwrap();
    let (t, _) = load_features::<f64>(&files.target).unwrap();
    model.verify_block_identity(&s, &t).unwrap();
}

#[test]
fn model_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let files = cmd_synth(&small_spec(2), dir.path(), false, &mut sink()).unwrap();
    let path = dir.path().join(MODEL_FILE);
    let summary = cmd_adapt(
        &files.source,
        &files.target,
        &adapt_options(32),
        &path,
        &mut sink(),
    )
    .unwrap();
    let mut buf = Vec::new();
    summary.model.write(&mut buf).unwrap();
    let back = AdaptedModel::read(&mut buf.as_slice()).unwrap();
    let bits = |m: &AdaptedModel| -> Vec<u64> {
        let d = &m.dictionaries;
        d.source_dict
            .atoms()
            .iter()
            .chain(d.target_dict.atoms().iter())
            .map(|v| v.to_bits())
            .collect()
    };
    assert_eq!(bits(&back), bits(&summary.model));
    let mut again = Vec::new();
    back.write(&mut again).unwrap();
    assert_eq!(buf, again);
}

#[test]
fn corrupted_model_is_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let files = cmd_synth(&small_spec(2), dir.path(), false, &mut sink()).unwrap();
    let path = dir.path().join(MODEL_FILE);
    let summary = cmd_adapt(
        &files.source,
        &files.target,
        &adapt_options(16),
        &path,
        &mut sink(),
    )
    .unwrap();
    let mut buf = Vec::new();
    summary.model.write(&mut buf).unwrap();

    let mut bad = buf.clone();
    bad[0] = b'X';
    assert_eq!(
        AdaptedModel::read(&mut bad.as_slice())
            .unwrap_err()
            .exit_code(),
        2
    );
    let truncated = &buf[..buf.len() - 3];
    assert_eq!(
        AdaptedModel::read(&mut &truncated[..])
            .unwrap_err()
            .exit_code(),
        2
    );
}

#[test]
fn oversized_dictionary_warns_and_proceeds() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        images_per_class: 2,
        features_per_image: 5,
        ..SynthSpec::default()
    };
    let files = cmd_synth(&spec, dir.path(), false, &mut sink()).unwrap();
    let summary = cmd_adapt(
        &files.source,
        &files.target,
        &adapt_options(64),
        &dir.path().join("m.uddm"),
        &mut sink(),
    )
    .unwrap();
    assert_eq!(summary.warnings.len(), 1);
    assert!(summary.warnings[0].contains("64"));
    assert_eq!(summary.model.dictionaries.num_atoms(), 64);
}

fn eval_opts(trials: usize, jobs: usize) -> EvalOptions {
    EvalOptions {
        trials,
        per_class_source: 5,
        labeled_target_per_class: 2,
        baselines: vec![uddl_cli::Baseline::SourceOnly, uddl_cli::Baseline::Bow],
        bow_bins: 20,
        jobs,
        seed: 3,
        ..EvalOptions::default()
    }
}

#[test]
fn eval_is_deterministic_and_job_count_independent() {
    let dir = tempfile::tempdir().unwrap();
    let files = cmd_synth(&small_spec(5), dir.path(), false, &mut sink()).unwrap();
    let model = dir.path().join(MODEL_FILE);
    cmd_adapt(
        &files.source,
        &files.target,
        &adapt_options(32),
        &model,
        &mut sink(),
    )
    .unwrap();

    let run = |trials, jobs, name: &str| {
        let path = dir.path().join(name);
        cmd_eval(
            &model,
            &files.source,
            &files.target,
            &eval_opts(trials, jobs),
            vec![],
            Some(&path),
            &mut sink(),
        )
        .unwrap();
        std::fs::read_to_string(path).unwrap()
    };
    assert_eq!(run(1, 1, "a.tsv"), run(1, 1, "b.tsv"));
    let seq = run(4, 1, "seq.tsv");
    assert_eq!(seq, run(4, 3, "par.tsv"));
    let report = TrialReport::parse(&seq).unwrap();
    let names: Vec<_> = report.methods.iter().map(|m| m.method.as_str()).collect();
    assert_eq!(names, ["adapted", "source-only", "bow"]);
    for m in &report.methods {
        assert_eq!(m.accuracies.len(), 4);
        assert!(m.accuracies.iter().all(|a| (0.0..=1.0).contains(a)));
    }
}

#[test]
fn eval_rejects_dimension_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let files = cmd_synth(&small_spec(5), &dir.path().join("a"), false, &mut sink()).unwrap();
    let other = cmd_synth(
        &SynthSpec {
            dim: 12,
            ..small_spec(5)
        },
        &dir.path().join("b"),
        false,
        &mut sink(),
    )
    .unwrap();
    let model = dir.path().join(MODEL_FILE);
    cmd_adapt(
        &files.source,
        &files.target,
        &adapt_options(16),
        &model,
        &mut sink(),
    )
    .unwrap();
    let err = cmd_eval(
        &model,
        &other.source,
        &other.target,
        &eval_opts(1, 1),
        vec![],
        None,
        &mut sink(),
    )
    .unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn pipeline_report_echoes_config_and_means() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    let text = format!(
        "# small run\nout_dir = {}\nseed = 2\nsynth_images_per_class = 10\nsynth_features_per_image = 8\nnum_atoms = 24\nsparsity = 3\nksvd_iterations = 5\ntrials = 3\nper_class_source = 5\nsvm_lambda = 1e-3\nbaselines = bow\nbow_bins = 16\n",
        dir.path().join("out").display()
    );
    std::fs::write(&cfg, &text).unwrap();
    let report = cmd_pipeline(&cfg, &[], &mut sink()).unwrap();
    let written = std::fs::read_to_string(dir.path().join("out").join(REPORT_FILE)).unwrap();
    let parsed = TrialReport::parse(&written).unwrap();
    assert_eq!(parsed.config, parse_pairs(&text).unwrap());
    assert_eq!(parsed.methods, report.methods);
    for m in &parsed.methods {
        let mean = m.accuracies.iter().sum::<f64>() / m.accuracies.len() as f64;
        assert_eq!(m.mean(), mean);
        assert!(written.contains(&format!("{}\tmean\t{mean:?}\n", m.method)));
    }

    let overridden = cmd_pipeline(&cfg, &[("trials".into(), "2".into())], &mut sink()).unwrap();
    assert_eq!(overridden.methods[0].accuracies.len(), 2);
    assert!(overridden.config.contains(&("trials".into(), "2".into())));
}

fn uddl(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_uddl"))
        .args(args)
        .current_dir(dir)
        .env_remove("UDDL_SEED")
        .output()
        .unwrap()
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let ok = uddl(
        &[
            "synth",
            "--out-dir",
            "d",
            "--images-per-class",
            "6",
            "--features-per-image",
            "5",
        ],
        p,
    );
    assert!(
        ok.status.success(),
        "{}",
        String::from_utf8_lossy(&ok.stderr)
    );
    assert!(String::from_utf8_lossy(&ok.stdout).contains("synth_dim = 20"));

    std::fs::write(p.join("bad.dmat"), b"XMAT0000").unwrap();
    let fmt = uddl(
        &[
            "adapt",
            "--source",
            "bad.dmat",
            "--target",
            "d/target.dmat",
            "--out",
            "m.uddm",
        ],
        p,
    );
    assert_eq!(fmt.status.code(), Some(2));

    let ok = uddl(
        &[
            "synth",
            "--out-dir",
            "e",
            "--dim",
            "12",
            "--images-per-class",
            "6",
            "--features-per-image",
            "5",
        ],
        p,
    );
    assert!(ok.status.success());
    let shape = uddl(
        &[
            "adapt",
            "--source",
            "d/source.dmat",
            "--target",
            "e/target.dmat",
            "--out",
            "m.uddm",
        ],
        p,
    );
    assert_eq!(shape.status.code(), Some(3));

    let ok = uddl(
        &[
            "adapt",
            "--source",
            "d/source.dmat",
            "--target",
            "d/target.dmat",
            "--out",
            "m.uddm",
            "--num-atoms",
            "16",
            "--ksvd-iterations",
            "3",
        ],
        p,
    );
    assert!(
        ok.status.success(),
        "{}",
        String::from_utf8_lossy(&ok.stderr)
    );
    let sampling = uddl(
        &[
            "eval",
            "--model",
            "m.uddm",
            "--source",
            "d/source.dmat",
            "--target",
            "d/target.dmat",
            "--per-class-source",
            "7",
            "--trials",
            "1",
        ],
        p,
    );
    assert_eq!(sampling.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&sampling.stderr).contains("class"));

    let missing = uddl(
        &[
            "adapt",
            "--source",
            "nope.dmat",
            "--target",
            "d/target.dmat",
            "--out",
            "m.uddm",
        ],
        p,
    );
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn seed_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str, seed: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_uddl"));
        cmd.args([
            "synth",
            "--out-dir",
            sub,
            "--images-per-class",
            "3",
            "--features-per-image",
            "4",
        ])
        .current_dir(dir.path())
        .env_remove("UDDL_SEED");
        if let Some(s) = seed {
            cmd.env("UDDL_SEED", s);
        }
        assert!(cmd.output().unwrap().status.success());
        std::fs::read(dir.path().join(sub).join("source.dmat")).unwrap()
    };
    let env7 = run("a", Some("7"));
    let default = run("b", None);
    assert_ne!(env7, default);
    let flag = {
        let out = uddl(
            &[
                "synth",
                "--out-dir",
                "c",
                "--images-per-class",
                "3",
                "--features-per-image",
                "4",
                "--seed",
                "7",
            ],
            dir.path(),
        );
        assert!(out.status.success());
        std::fs::read(dir.path().join("c").join("source.dmat")).unwrap()
    };
    assert_eq!(env7, flag);
}
