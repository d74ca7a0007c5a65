use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use uddl::{AdaptOptions, KsvdConfig, PoolMode, PoolOptions, SvmParams, SynthSpec};
use uddl_cli::commands::eval_pairs;
use uddl_cli::{
    cmd_adapt, cmd_eval, cmd_pipeline, cmd_synth, Baseline, CliError, CliResult, EvalOptions,
};

#[derive(Parser)]
#[command(
    name = "uddl",
    version,
    about = "Unsupervised domain-adaptation dictionary learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic source/target feature pair.
    Synth(SynthArgs),
    /// Learn adapted source/target dictionaries.
    Adapt(AdaptArgs),
    /// Run the recognition protocol with an adapted model.
    Eval(EvalArgs),
    /// Run synth, adapt and eval from a config file.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SeedArg {
    /// Master seed.
    #[arg(long, env = "UDDL_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    dim: usize,
    #[arg(long, default_value_t = 30)]
    atoms: usize,
    #[arg(long, default_value_t = 5)]
    classes: usize,
    #[arg(long, default_value_t = 40)]
    images_per_class: usize,
    #[arg(long, default_value_t = 30)]
    features_per_image: usize,
    #[arg(long, default_value_t = 3)]
    sparsity: usize,
    #[arg(long, default_value_t = 0.5)]
    shift_strength: f64,
    #[arg(long, default_value_t = 0.02)]
    noise_sigma: f64,
    #[arg(long)]
    out_dir: PathBuf,
    /// Compare per-class feature moments across domains and fail on a significant difference.
    #[arg(long)]
    check: bool,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args)]
struct AdaptArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 512)]
    num_atoms: usize,
    #[arg(long, default_value_t = 5)]
    sparsity: usize,
    #[arg(long, default_value_t = 50)]
    ksvd_iterations: usize,
    #[arg(long, default_value_t = 1e-5)]
    convergence_tol: f64,
    #[arg(long, default_value_t = 1)]
    unused_atom_threshold: usize,
    /// Z-score both domains with pooled statistics before nearest-neighbour coupling.
    #[arg(long)]
    standardize: bool,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// Report output path.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 20)]
    per_class_source: usize,
    #[arg(long, default_value_t = 0)]
    labeled_target_per_class: usize,
    #[arg(long, default_value = "abs")]
    pool: PoolMode,
    #[arg(long)]
    no_l2_normalize: bool,
    #[arg(long, default_value_t = 1e-4)]
    svm_lambda: f64,
    #[arg(long, default_value_t = 100)]
    svm_epochs: usize,
    /// Extra baseline rows: source-only, bow (repeatable).
    #[arg(long = "baseline", value_parser = parse_baseline)]
    baselines: Vec<Baseline>,
    #[arg(long, default_value_t = 800)]
    bow_bins: usize,
    #[arg(long, default_value_t = 50)]
    bow_iterations: usize,
    /// Source features sampled for the BOW codebook (0 = all).
    #[arg(long, default_value_t = 0)]
    bow_sample: usize,
    /// Trials run in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args)]
struct PipelineArgs {
    config: PathBuf,
    /// Override a config value (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_override)]
    overrides: Vec<(String, String)>,
    #[arg(long, env = "UDDL_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn parse_baseline(s: &str) -> Result<Baseline, String> {
    s.parse().map_err(|e: CliError| e.to_string())
}

fn parse_override(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))
}

fn run(cli: Cli) -> CliResult<()> {
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::Synth(a) => {
            let spec = SynthSpec {
                dim: a.dim,
                atoms: a.atoms,
                classes: a.classes,
                images_per_class: a.images_per_class,
                features_per_image: a.features_per_image,
                sparsity: a.sparsity,
                shift_strength: a.shift_strength,
                noise_sigma: a.noise_sigma,
                seed: a.seed.seed,
            };
            let files = cmd_synth(&spec, &a.out_dir, a.check, &mut out)?;
            if files.check.is_some_and(|c| !c.passed()) {
                return Err(CliError::Check("domain moment check failed".into()));
            }
        }
        Command::Adapt(a) => {
            let options = AdaptOptions {
                ksvd: KsvdConfig {
                    num_atoms: a.num_atoms,
                    sparsity: a.sparsity,
                    iterations: a.ksvd_iterations,
                    seed: a.seed.seed,
                    unused_atom_threshold: a.unused_atom_threshold,
                    convergence_tol: a.convergence_tol,
                },
                standardize_coupling: a.standardize,
            };
            cmd_adapt(&a.source, &a.target, &options, &a.out, &mut out)?;
        }
        Command::Eval(a) => {
            let opts = EvalOptions {
                trials: a.trials,
                per_class_source: a.per_class_source,
                labeled_target_per_class: a.labeled_target_per_class,
                pool: PoolOptions {
                    mode: a.pool,
                    l2_normalize: !a.no_l2_normalize,
                },
                svm: SvmParams {
                    reg_lambda: a.svm_lambda,
                    epochs: a.svm_epochs,
                    seed: a.seed.seed,
                },
                baselines: a.baselines,
                bow_bins: a.bow_bins,
                bow_iterations: a.bow_iterations,
                bow_sample: a.bow_sample,
                jobs: a.jobs,
                seed: a.seed.seed,
            };
            let mut echo = vec![
                ("model".to_string(), a.model.display().to_string()),
                ("source".to_string(), a.source.display().to_string()),
                ("target".to_string(), a.target.display().to_string()),
            ];
            echo.extend(eval_pairs(&opts));
            cmd_eval(
                &a.model,
                &a.source,
                &a.target,
                &opts,
                echo,
                a.report.as_deref(),
                &mut out,
            )?;
        }
        Command::Pipeline(a) => {
            let mut overrides = Vec::new();
            if let Some(seed) = a.seed {
                overrides.push(("seed".to_string(), seed.to_string()));
            }
            if let Some(jobs) = a.jobs {
                overrides.push(("jobs".to_string(), jobs.to_string()));
            }
            if let Some(dir) = a.out_dir {
                overrides.push(("out_dir".to_string(), dir.display().to_string()));
            }
            overrides.extend(a.overrides);
            cmd_pipeline(&a.config, &overrides, &mut out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
