use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index::sample;
use rayon::prelude::*;
use uddl::rng::{derive_seed, stage_rng, Stage};
use uddl::{
    adapt_fit_with, bow_encode, encode_image_set, evaluate_accuracy, joint_objective, kmeans_fit,
    ksvd_fit, load_features, sample_protocol, save_features, svm_predict, svm_train,
    synth_domain_pair, AdaptOptions, Dictionary, FeatureMatrix, ImageDescriptor, ImageSet,
    KsvdConfig, SvmParams, SynthSpec,
};

use crate::config::{parse_pairs, Baseline, EvalOptions, PipelineConfig};
use crate::error::{CliError, CliResult};
use crate::model::{format_list, AdaptedModel, BlockIdentity};
use crate::report::{MethodResult, TrialReport};

pub const SOURCE_FILE: &str = "source.dmat";
pub const TARGET_FILE: &str = "target.dmat";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.dmat";
pub const TARGET_GROUND_TRUTH_FILE: &str = "target_ground_truth.dmat";
pub const MODEL_FILE: &str = "model.uddm";
pub const REPORT_FILE: &str = "report.tsv";

/// Largest |z| tolerated by the domain-moment check.
pub const MOMENT_Z_THRESHOLD: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct MomentCheck {
    /// Largest |z| over per-class, per-dimension mean differences.
    pub max_z_mean: f64,
    /// Same for second moments.
    pub max_z_second: f64,
    pub tests: usize,
}

impl MomentCheck {
    pub fn passed(&self) -> bool {
        self.max_z_mean < MOMENT_Z_THRESHOLD && self.max_z_second < MOMENT_Z_THRESHOLD
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutputs {
    pub source: PathBuf,
    pub target: PathBuf,
    pub ground_truth: PathBuf,
    pub target_ground_truth: PathBuf,
    pub check: Option<MomentCheck>,
}

fn class_features(images: &ImageSet) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); images.num_classes()];
    for img in images.images() {
        if let Some(c) = img.label {
            out[c].extend(img.range());
        }
    }
    out
}

fn welch_z(a: &[f64], b: &[f64]) -> f64 {
    let stats = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        (m, v / n)
    };
    let (ma, va) = stats(a);
    let (mb, vb) = stats(b);
    let se = (va + vb).sqrt();
    if se == 0.0 {
        if ma == mb {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (ma - mb).abs() / se
    }
}

/// Two-sample z statistics comparing source and target features class by class,
/// on every dimension's mean and second moment. Without a domain shift both
/// domains share one distribution, so every |z| reflects sampling noise only.
pub fn domain_moment_check(
    source: &FeatureMatrix<f64>,
    source_images: &ImageSet,
    target: &FeatureMatrix<f64>,
    target_images: &ImageSet,
) -> CliResult<MomentCheck> {
    if source.dim() != target.dim() {
        return Err(CliError::Core(uddl::Error::Shape(format!(
            "source dimension {} differs from target dimension {}",
            source.dim(),
            target.dim()
        ))));
    }
    let sc = class_features(source_images);
    let tc = class_features(target_images);
    let mut check = MomentCheck {
        max_z_mean: 0.0,
        max_z_second: 0.0,
        tests: 0,
    };
    for (s_ids, t_ids) in sc.iter().zip(&tc) {
        if s_ids.len() < 2 || t_ids.len() < 2 {
            continue;
        }
        for i in 0..source.dim() {
            let a: Vec<f64> = s_ids.iter().map(|&j| source.values()[[i, j]]).collect();
            let b: Vec<f64> = t_ids.iter().map(|&j| target.values()[[i, j]]).collect();
            check.max_z_mean = check.max_z_mean.max(welch_z(&a, &b));
            let a2: Vec<f64> = a.iter().map(|v| v * v).collect();
            let b2: Vec<f64> = b.iter().map(|v| v * v).collect();
            check.max_z_second = check.max_z_second.max(welch_z(&a2, &b2));
            check.tests += 2;
        }
    }
    Ok(check)
}

pub fn synth_pairs(spec: &SynthSpec) -> Vec<(String, String)> {
    vec![
        ("synth_dim".into(), spec.dim.to_string()),
        ("synth_atoms".into(), spec.atoms.to_string()),
        ("synth_classes".into(), spec.classes.to_string()),
        (
            "synth_images_per_class".into(),
            spec.images_per_class.to_string(),
        ),
        (
            "synth_features_per_image".into(),
            spec.features_per_image.to_string(),
        ),
        ("synth_sparsity".into(), spec.sparsity.to_string()),
        (
            "synth_shift_strength".into(),
            spec.shift_strength.to_string(),
        ),
        ("synth_noise_sigma".into(), spec.noise_sigma.to_string()),
        ("seed".into(), spec.seed.to_string()),
    ]
}

/// Generates a synthetic domain pair and writes it to `out_dir`.
pub fn cmd_synth(
    spec: &SynthSpec,
    out_dir: &Path,
    check: bool,
    out: &mut dyn Write,
) -> CliResult<SynthOutputs> {
    let pair = synth_domain_pair::<f64>(spec)?;
    std::fs::create_dir_all(out_dir)?;
    let outputs = SynthOutputs {
        source: out_dir.join(SOURCE_FILE),
        target: out_dir.join(TARGET_FILE),
        ground_truth: out_dir.join(GROUND_TRUTH_FILE),
        target_ground_truth: out_dir.join(TARGET_GROUND_TRUTH_FILE),
        check: if check {
            Some(domain_moment_check(
                &pair.source,
                &pair.source_images,
                &pair.target,
                &pair.target_images,
            )?)
        } else {
            None
        },
    };
    save_features(&pair.source, Some(&pair.source_images), &outputs.source)?;
    save_features(&pair.target, Some(&pair.target_images), &outputs.target)?;
    save_features(
        &pair.ground_truth.as_features(),
        None,
        &outputs.ground_truth,
    )?;
    save_features(
        &pair.target_ground_truth.as_features(),
        None,
        &outputs.target_ground_truth,
    )?;

    for (k, v) in synth_pairs(spec) {
        writeln!(out, "{k} = {v}")?;
    }
    writeln!(
        out,
        "wrote {} and {} ({} features each)",
        outputs.source.display(),
        outputs.target.display(),
        pair.source.count()
    )?;
    if let Some(c) = &outputs.check {
        writeln!(
            out,
            "moment check: max |z| mean {:.3}, second moment {:.3} over {} tests (threshold {}): {}",
            c.max_z_mean,
            c.max_z_second,
            c.tests,
            MOMENT_Z_THRESHOLD,
            if c.passed() { "pass" } else { "FAIL" }
        )?;
    }
    Ok(outputs)
}

#[derive(Debug, Clone)]
pub struct AdaptSummary {
    pub warnings: Vec<String>,
    pub report: uddl::FitReport,
    pub block: BlockIdentity,
    pub model: AdaptedModel,
}

pub fn ksvd_pairs(options: &AdaptOptions) -> Vec<(String, String)> {
    let k = &options.ksvd;
    vec![
        ("num_atoms".into(), k.num_atoms.to_string()),
        ("sparsity".into(), k.sparsity.to_string()),
        ("ksvd_iterations".into(), k.iterations.to_string()),
        ("convergence_tol".into(), format!("{:?}", k.convergence_tol)),
        (
            "unused_atom_threshold".into(),
            k.unused_atom_threshold.to_string(),
        ),
        (
            "standardize".into(),
            options.standardize_coupling.to_string(),
        ),
        ("seed".into(), k.seed.to_string()),
    ]
}

fn ksvd_from_model(model: &AdaptedModel) -> CliResult<KsvdConfig> {
    let get = |key: &str| {
        model
            .meta_value(key)
            .ok_or_else(|| crate::error::format_err(format!("model metadata lacks {key}")))
    };
    let num = |key: &str| -> CliResult<f64> { model.meta_f64(key) };
    let parse_usize = |key: &str| -> CliResult<usize> {
        get(key)?.parse().map_err(|_| {
            crate::error::format_err(format!("model metadata {key} is not an integer"))
        })
    };
    Ok(KsvdConfig {
        num_atoms: parse_usize("num_atoms")?,
        sparsity: parse_usize("sparsity")?,
        iterations: parse_usize("ksvd_iterations")?,
        seed: get("seed")?
            .parse()
            .map_err(|_| crate::error::format_err("model metadata seed is not an integer"))?,
        unused_atom_threshold: parse_usize("unused_atom_threshold")?,
        convergence_tol: num("convergence_tol")?,
    })
}

/// Learns the adapted dictionaries and writes the model file.
pub fn cmd_adapt(
    source_path: &Path,
    target_path: &Path,
    options: &AdaptOptions,
    model_path: &Path,
    out: &mut dyn Write,
) -> CliResult<AdaptSummary> {
    let (source, _) = load_features::<f64>(source_path)?;
    let (target, _) = load_features::<f64>(target_path)?;
    let mut warnings = Vec::new();
    if options.ksvd.num_atoms > target.count() {
        warnings.push(format!(
            "num_atoms {} exceeds the {} target features; the fit proceeds with padded initial atoms",
            options.ksvd.num_atoms,
            target.count()
        ));
    }
    for w in &warnings {
        eprintln!("warning: {w}");
    }

    let fit = adapt_fit_with(&source, &target, options)?;
    let (term_source, term_target) = joint_objective(
        &source,
        &target,
        &fit.coupling,
        &fit.dictionaries,
        &fit.codes,
    )?;
    let r = &fit.report;
    let mut meta = ksvd_pairs(options);
    meta.push(("iterations_run".into(), r.iterations_run.to_string()));
    meta.push(("atoms_replaced".into(), r.atoms_replaced.to_string()));
    meta.push((
        "objective_trace".into(),
        format_list(&r.objective_per_iteration),
    ));
    let before: Vec<f64> = r.sweeps.iter().map(|s| s.before).collect();
    let after: Vec<f64> = r.sweeps.iter().map(|s| s.after).collect();
    meta.push(("sweep_before".into(), format_list(&before)));
    meta.push(("sweep_after".into(), format_list(&after)));
    meta.push((
        "stacked_objective".into(),
        format!("{:?}", fit.stacked_objective),
    ));
    meta.push(("term_source".into(), format!("{term_source:?}")));
    meta.push(("term_target".into(), format!("{term_target:?}")));

    let model = AdaptedModel {
        dictionaries: fit.dictionaries,
        coupling: fit.coupling,
        codes: fit.codes,
        svm: None,
        meta,
    };
    model.save(model_path)?;
    let model = AdaptedModel::load(model_path)?;
    let block = model.verify_block_identity(&source, &target)?;

    for (i, obj) in r.objective_per_iteration.iter().enumerate() {
        writeln!(out, "iteration {:>3}  objective {obj:.6e}", i + 1)?;
    }
    writeln!(
        out,
        "stacked objective {:.6e} = source {:.6e} + target {:.6e} (relative error {:.1e})",
        block.stacked, block.term_source, block.term_target, block.relative_error
    )?;
    if r.atoms_replaced > 0 {
        writeln!(out, "replaced {} unused atoms", r.atoms_replaced)?;
    }
    writeln!(out, "wrote {}", model_path.display())?;
    Ok(AdaptSummary {
        warnings,
        report: fit.report,
        block,
        model,
    })
}

fn load_labeled(path: &Path) -> CliResult<(FeatureMatrix<f64>, ImageSet)> {
    let (features, images) = load_features::<f64>(path)?;
    let images = images.ok_or_else(|| {
        CliError::Core(uddl::Error::Input(format!(
            "{} has no image index",
            path.display()
        )))
    })?;
    Ok((features, images))
}

fn pick(descriptors: &[ImageDescriptor<f64>], ids: &[usize]) -> Vec<ImageDescriptor<f64>> {
    ids.iter().map(|&i| descriptors[i].clone()).collect()
}

struct DomainDescriptors {
    method: String,
    source: Vec<ImageDescriptor<f64>>,
    target: Vec<ImageDescriptor<f64>>,
}

fn run_trial(
    methods: &[DomainDescriptors],
    source_images: &ImageSet,
    target_images: &ImageSet,
    num_classes: usize,
    opts: &EvalOptions,
    trial: usize,
) -> CliResult<Vec<f64>> {
    let seed = derive_seed(opts.seed, trial as u64);
    let split = sample_protocol(
        source_images,
        target_images,
        opts.per_class_source,
        opts.labeled_target_per_class,
        seed,
    )?;
    let params = SvmParams {
        seed: derive_seed(opts.svm.seed, trial as u64),
        ..opts.svm
    };
    methods
        .iter()
        .map(|m| {
            let mut train = pick(&m.source, &split.source_train);
            train.extend(pick(&m.target, &split.target_train));
            let test = pick(&m.target, &split.target_test);
            let model = svm_train(&train, num_classes, params)?;
            let predictions = svm_predict(&model, &test)?;
            let labels: Vec<usize> = test
                .iter()
                .map(|d| d.label.expect("test images are labeled"))
                .collect();
            Ok(evaluate_accuracy(&predictions, &labels)?)
        })
        .collect()
}

fn bow_descriptors(
    source: &FeatureMatrix<f64>,
    source_images: &ImageSet,
    target: &FeatureMatrix<f64>,
    target_images: &ImageSet,
    opts: &EvalOptions,
) -> CliResult<DomainDescriptors> {
    let training = if opts.bow_sample > 0 && opts.bow_sample < source.count() {
        let mut rng = stage_rng(opts.seed, Stage::Subsample, 0);
        let mut ids = sample(&mut rng, source.count(), opts.bow_sample).into_vec();
        ids.sort_unstable();
        source.select_columns(&ids)?
    } else {
        source.clone()
    };
    let fit = kmeans_fit(&training, opts.bow_bins, opts.seed, opts.bow_iterations)?;
    Ok(DomainDescriptors {
        method: Baseline::Bow.name().into(),
        source: bow_encode(source_images, source, &fit.codebook)?,
        target: bow_encode(target_images, target, &fit.codebook)?,
    })
}

pub fn eval_pairs(opts: &EvalOptions) -> Vec<(String, String)> {
    vec![
        ("trials".into(), opts.trials.to_string()),
        ("per_class_source".into(), opts.per_class_source.to_string()),
        (
            "labeled_target_per_class".into(),
            opts.labeled_target_per_class.to_string(),
        ),
        ("pool".into(), opts.pool.mode.to_string()),
        ("l2_normalize".into(), opts.pool.l2_normalize.to_string()),
        ("svm_lambda".into(), format!("{:?}", opts.svm.reg_lambda)),
        ("svm_epochs".into(), opts.svm.epochs.to_string()),
        (
            "baselines".into(),
            opts.baselines
                .iter()
                .map(|b| b.name())
                .collect::<Vec<_>>()
                .join(","),
        ),
        ("bow_bins".into(), opts.bow_bins.to_string()),
        ("bow_iterations".into(), opts.bow_iterations.to_string()),
        ("bow_sample".into(), opts.bow_sample.to_string()),
        ("seed".into(), opts.seed.to_string()),
    ]
}

/// Runs the recognition protocol for the adapted model and any baselines.
/// `echo` is embedded in the report as the configuration record.
pub fn cmd_eval(
    model_path: &Path,
    source_path: &Path,
    target_path: &Path,
    opts: &EvalOptions,
    echo: Vec<(String, String)>,
    report_path: Option<&Path>,
    out: &mut dyn Write,
) -> CliResult<TrialReport> {
    let started = Instant::now();
    if opts.trials == 0 {
        return Err(CliError::Core(uddl::Error::Config(
            "trials must be at least 1".into(),
        )));
    }
    let model = AdaptedModel::load(model_path)?;
    let (source, source_images) = load_labeled(source_path)?;
    let (target, target_images) = load_labeled(target_path)?;
    let dim = model.dictionaries.dim();
    if source.dim() != dim || target.dim() != dim {
        return Err(CliError::Core(uddl::Error::Shape(format!(
            "model dimension {dim} does not match features (source {}, target {})",
            source.dim(),
            target.dim()
        ))));
    }
    let ksvd = ksvd_from_model(&model)?;
    let sparsity = ksvd.sparsity;
    let num_classes = source_images.num_classes().max(target_images.num_classes());

    let mut methods = vec![DomainDescriptors {
        method: "adapted".into(),
        source: encode_image_set(
            &source_images,
            &source,
            &model.dictionaries.source_dict,
            sparsity,
            opts.pool,
        )?,
        target: encode_image_set(
            &target_images,
            &target,
            &model.dictionaries.target_dict,
            sparsity,
            opts.pool,
        )?,
    }];
    for baseline in &opts.baselines {
        methods.push(match baseline {
            Baseline::SourceOnly => {
                let (dict, _, _): (Dictionary<f64>, _, _) = ksvd_fit(&source, &ksvd)?;
                DomainDescriptors {
                    method: baseline.name().into(),
                    source: encode_image_set(&source_images, &source, &dict, sparsity, opts.pool)?,
                    target: encode_image_set(&target_images, &target, &dict, sparsity, opts.pool)?,
                }
            }
            Baseline::Bow => {
                bow_descriptors(&source, &source_images, &target, &target_images, opts)?
            }
        });
    }

    let trial = |t: usize| {
        run_trial(
            &methods,
            &source_images,
            &target_images,
            num_classes,
            opts,
            t,
        )
    };
    let per_trial: Vec<Vec<f64>> = if opts.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| {
                CliError::Usage(format!("cannot start {} worker threads: {e}", opts.jobs))
            })?;
        pool.install(|| {
            (0..opts.trials)
                .into_par_iter()
                .map(trial)
                .collect::<CliResult<_>>()
        })?
    } else {
        (0..opts.trials).map(trial).collect::<CliResult<_>>()?
    };

    let report = TrialReport {
        config: echo,
        methods: methods
            .iter()
            .enumerate()
            .map(|(i, m)| MethodResult {
                method: m.method.clone(),
                accuracies: per_trial.iter().map(|row| row[i]).collect(),
            })
            .collect(),
        runtime_seconds: started.elapsed().as_secs_f64(),
    };
    if let Some(path) = report_path {
        report.save(path)?;
    }
    write!(out, "{}", report.summary())?;
    Ok(report)
}

/// Reads a config file, applies `overrides` and runs synth (unless feature
/// paths are given), adapt and eval. The report lands in `out_dir`.
pub fn cmd_pipeline(
    config_path: &Path,
    overrides: &[(String, String)],
    out: &mut dyn Write,
) -> CliResult<TrialReport> {
    let text = std::fs::read_to_string(config_path)?;
    let mut pairs = parse_pairs(&text)?;
    for (k, v) in overrides {
        match pairs.iter_mut().find(|(pk, _)| pk == k) {
            Some(slot) => slot.1 = v.clone(),
            None => pairs.push((k.clone(), v.clone())),
        }
    }
    let mut config = PipelineConfig::default();
    for (k, v) in &pairs {
        config.set(k, v)?;
    }
    run_pipeline(&config, pairs, out)
}

pub fn run_pipeline(
    config: &PipelineConfig,
    echo: Vec<(String, String)>,
    out: &mut dyn Write,
) -> CliResult<TrialReport> {
    let started = Instant::now();
    let cfg = config.resolved();
    std::fs::create_dir_all(&cfg.out_dir)?;
    let (source, target) = match (&cfg.source, &cfg.target) {
        (Some(s), Some(t)) => (s.clone(), t.clone()),
        (None, None) => {
            let files = cmd_synth(&cfg.synth, &cfg.out_dir, false, out)?;
            (files.source, files.target)
        }
        _ => {
            return Err(CliError::Usage(
                "source and target must be given together".into(),
            ))
        }
    };
    let model_path = cfg.out_dir.join(MODEL_FILE);
    cmd_adapt(&source, &target, &cfg.adapt, &model_path, out)?;
    let report_path = cfg.out_dir.join(REPORT_FILE);
    let mut report = cmd_eval(
        &model_path,
        &source,
        &target,
        &cfg.eval,
        echo,
        Some(&report_path),
        &mut std::io::sink(),
    )?;
    report.runtime_seconds = started.elapsed().as_secs_f64();
    write!(out, "{}", report.summary())?;
    writeln!(out, "wrote {}", report_path.display())?;
    Ok(report)
}
