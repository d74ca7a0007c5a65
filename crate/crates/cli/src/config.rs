//! `key = value` pipeline configuration.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use uddl::{AdaptOptions, KsvdConfig, PoolMode, PoolOptions, SvmParams, SynthSpec};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    SourceOnly,
    Bow,
}

impl Baseline {
    pub fn name(self) -> &'static str {
        match self {
            Baseline::SourceOnly => "source-only",
            Baseline::Bow => "bow",
        }
    }
}

impl FromStr for Baseline {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s.trim() {
            "source-only" => Ok(Baseline::SourceOnly),
            "bow" => Ok(Baseline::Bow),
            other => Err(CliError::Usage(format!(
                "unknown baseline {other:?}, expected source-only|bow"
            ))),
        }
    }
}

/// Parses `key = value` lines. `#` starts a comment; blank lines are skipped.
pub fn parse_pairs(text: &str) -> CliResult<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Usage(format!(
                "line {}: expected key = value, got {raw:?}",
                n + 1
            )));
        };
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

/// Settings of the evaluation stage.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub trials: usize,
    pub per_class_source: usize,
    pub labeled_target_per_class: usize,
    pub pool: PoolOptions,
    pub svm: SvmParams,
    pub baselines: Vec<Baseline>,
    pub bow_bins: usize,
    pub bow_iterations: usize,
    /// Source features used to train the BOW codebook (0 = all).
    pub bow_sample: usize,
    pub jobs: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            trials: 20,
            per_class_source: 20,
            labeled_target_per_class: 0,
            pool: PoolOptions::default(),
            svm: SvmParams::default(),
            baselines: Vec::new(),
            bow_bins: 800,
            bow_iterations: 50,
            bow_sample: 0,
            jobs: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Precomputed features; when absent a synthetic pair is generated.
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub synth: SynthSpec,
    pub adapt: AdaptOptions,
    pub eval: EvalOptions,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            source: None,
            target: None,
            out_dir: PathBuf::from("uddl-out"),
            synth: SynthSpec::default(),
            adapt: AdaptOptions {
                ksvd: KsvdConfig::default(),
                standardize_coupling: false,
            },
            eval: EvalOptions::default(),
            seed: 0,
        }
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> CliResult<T> {
    value
        .parse()
        .map_err(|_| CliError::Usage(format!("invalid value {value:?} for {key}")))
}

fn flag(key: &str, value: &str) -> CliResult<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::Usage(format!(
            "invalid boolean {value:?} for {key}"
        ))),
    }
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    pub fn from_text(text: &str) -> CliResult<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_pairs(text)? {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let v = value;
        match key {
            "source" => self.source = Some(PathBuf::from(v)),
            "target" => self.target = Some(PathBuf::from(v)),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "seed" => self.seed = num(key, v)?,
            "synth_dim" => self.synth.dim = num(key, v)?,
            "synth_atoms" => self.synth.atoms = num(key, v)?,
            "synth_classes" => self.synth.classes = num(key, v)?,
            "synth_images_per_class" => self.synth.images_per_class = num(key, v)?,
            "synth_features_per_image" => self.synth.features_per_image = num(key, v)?,
            "synth_sparsity" => self.synth.sparsity = num(key, v)?,
            "synth_shift_strength" => self.synth.shift_strength = num(key, v)?,
            "synth_noise_sigma" => self.synth.noise_sigma = num(key, v)?,
            "num_atoms" => self.adapt.ksvd.num_atoms = num(key, v)?,
            "sparsity" => self.adapt.ksvd.sparsity = num(key, v)?,
            "ksvd_iterations" => self.adapt.ksvd.iterations = num(key, v)?,
            "convergence_tol" => self.adapt.ksvd.convergence_tol = num(key, v)?,
            "unused_atom_threshold" => self.adapt.ksvd.unused_atom_threshold = num(key, v)?,
            "standardize" => self.adapt.standardize_coupling = flag(key, v)?,
            "trials" => self.eval.trials = num(key, v)?,
            "per_class_source" => self.eval.per_class_source = num(key, v)?,
            "labeled_target_per_class" => self.eval.labeled_target_per_class = num(key, v)?,
            "pool" => self.eval.pool.mode = v.parse::<PoolMode>()?,
            "l2_normalize" => self.eval.pool.l2_normalize = flag(key, v)?,
            "svm_lambda" => self.eval.svm.reg_lambda = num(key, v)?,
            "svm_epochs" => self.eval.svm.epochs = num(key, v)?,
            "baselines" => {
                self.eval.baselines = v
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(str::parse)
                    .collect::<CliResult<_>>()?
            }
            "bow_bins" => self.eval.bow_bins = num(key, v)?,
            "bow_iterations" => self.eval.bow_iterations = num(key, v)?,
            "bow_sample" => self.eval.bow_sample = num(key, v)?,
            "jobs" => self.eval.jobs = num(key, v)?,
            _ => return Err(CliError::Usage(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Seed-dependent settings derived from the single top-level seed.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        out.synth.seed = self.seed;
        out.adapt.ksvd.seed = self.seed;
        out.eval.seed = self.seed;
        out.eval.svm.seed = self.seed;
        out
    }

    /// Every setting as `key = value` pairs in a fixed order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut p: Vec<(&str, String)> = Vec::new();
        if let Some(s) = &self.source {
            p.push(("source", s.display().to_string()));
        }
        if let Some(t) = &self.target {
            p.push(("target", t.display().to_string()));
        }
        p.push(("out_dir", self.out_dir.display().to_string()));
        p.push(("seed", self.seed.to_string()));
        if self.source.is_none() {
            let s = &self.synth;
            p.push(("synth_dim", s.dim.to_string()));
            p.push(("synth_atoms", s.atoms.to_string()));
            p.push(("synth_classes", s.classes.to_string()));
            p.push(("synth_images_per_class", s.images_per_class.to_string()));
            p.push(("synth_features_per_image", s.features_per_image.to_string()));
            p.push(("synth_sparsity", s.sparsity.to_string()));
            p.push(("synth_shift_strength", s.shift_strength.to_string()));
            p.push(("synth_noise_sigma", s.noise_sigma.to_string()));
        }
        let k = &self.adapt.ksvd;
        p.push(("num_atoms", k.num_atoms.to_string()));
        p.push(("sparsity", k.sparsity.to_string()));
        p.push(("ksvd_iterations", k.iterations.to_string()));
        p.push(("convergence_tol", k.convergence_tol.to_string()));
        p.push(("unused_atom_threshold", k.unused_atom_threshold.to_string()));
        p.push(("standardize", self.adapt.standardize_coupling.to_string()));
        let e = &self.eval;
        p.push(("trials", e.trials.to_string()));
        p.push(("per_class_source", e.per_class_source.to_string()));
        p.push((
            "labeled_target_per_class",
            e.labeled_target_per_class.to_string(),
        ));
        p.push(("pool", e.pool.mode.to_string()));
        p.push(("l2_normalize", e.pool.l2_normalize.to_string()));
        p.push(("svm_lambda", e.svm.reg_lambda.to_string()));
        p.push(("svm_epochs", e.svm.epochs.to_string()));
        p.push((
            "baselines",
            e.baselines
                .iter()
                .map(|b| b.name())
                .collect::<Vec<_>>()
                .join(","),
        ));
        p.push(("bow_bins", e.bow_bins.to_string()));
        p.push(("bow_iterations", e.bow_iterations.to_string()));
        p.push(("bow_sample", e.bow_sample.to_string()));
        p.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}
