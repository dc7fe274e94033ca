//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on runtime failures, 2 on usage errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use crate::decouple::decouple_dataset;
use crate::error_distance::{analyze_dataset, DEFAULT_BAND_RADIUS, DEFAULT_BINS};
use crate::io::write_atomic;
use crate::losses::Reduction;
use crate::metrics::{evaluate_dataset, ThresholdMode};
use crate::net::checkpoint::save_checkpoint;
use crate::net::gradcheck::{grad_check, GradCheckConfig};
use crate::net::model::ModelConfig;
use crate::net::train::{train, training_log_csv, SupervisionMode, TrainConfig};
use crate::synth::{load_dataset, synth_generate, write_dataset};

#[derive(Debug, Parser)]
#[command(name = "ldf", version, about = "Saliency label decoupling and evaluation toolkit")]
pub struct Cli {
    /// Worker threads for dataset-level work (defaults to all cores).
    #[arg(long, global = true, env = "LDF_JOBS", value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: Option<u16>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split every ground-truth mask into body and detail labels.
    Decouple {
        /// Directory of ground-truth PNG masks.
        #[arg(long)]
        gt: PathBuf,
        /// Output directory for `<name>.body.png` / `<name>.detail.png`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute MAE, mean F-measure and E-measure for a prediction set.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Report file; the averaged PR curve goes to `<stem>.curves.csv`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
        report: ReportFormat,
        /// Binarization behind mF and E.
        #[arg(long, value_enum, default_value_t = ThresholdMode::ThresholdMean)]
        mf_mode: ThresholdMode,
    },
    /// Bin prediction error by normalized distance to the ground-truth edge.
    Errdist {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BINS, value_parser = positive_usize)]
        bins: usize,
        /// Edge-band radius in pixels.
        #[arg(long, default_value_t = DEFAULT_BAND_RADIUS)]
        band: u32,
        /// Histogram CSV; per-image band scores go to `<stem>.edgeband.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic shapes dataset (`images/`, `masks/`).
    Synth {
        #[arg(long, value_parser = positive_usize)]
        n: usize,
        /// Side length in pixels (multiple of 16).
        #[arg(long, value_parser = side_length)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the toy interaction network.
    Train(TrainArgs),
    /// Compare end-to-end gradients with central differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory with `images/` and `masks/`; synthetic data is
    /// generated when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Synthetic sample count.
    #[arg(long, default_value_t = 64, value_parser = positive_usize)]
    pub n: usize,
    /// Synthetic side length.
    #[arg(long, default_value_t = 32, value_parser = side_length)]
    pub size: usize,
    #[arg(long, default_value_t = 2000, value_parser = positive_usize)]
    pub steps: usize,
    #[arg(long, default_value_t = 8, value_parser = positive_usize)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.05, value_parser = positive_f64)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = SupervisionMode::BodyDetail)]
    pub mode: SupervisionMode,
    #[arg(long, default_value_t = 1)]
    pub interactions: usize,
    /// Checkpoint path; the loss log goes to `<stem>.loss.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = SupervisionMode::BodyDetail)]
    pub mode: SupervisionMode,
    #[arg(long, default_value_t = 1)]
    pub interactions: usize,
    #[arg(long, value_enum, default_value_t = Reduction::Mean)]
    pub reduction: Reduction,
    /// Parameters to compare.
    #[arg(long, default_value_t = 120, value_parser = positive_usize)]
    pub samples: usize,
    #[arg(long, default_value_t = 1e-5, value_parser = positive_f64)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4, value_parser = positive_f64)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn positive_usize(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        Ok(_) => Err("must be at least 1".into()),
        Err(e) => Err(e.to_string()),
    }
}

fn side_length(s: &str) -> Result<usize, String> {
    let v = positive_usize(s)?;
    if v % 16 != 0 {
        return Err(format!("{v} is not a multiple of 16"));
    }
    Ok(v)
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("{v} must be positive and finite")),
        Err(e) => Err(e.to_string()),
    }
}

/// `<dir>/<stem>.<suffix>` next to `path`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

fn execute(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Decouple { gt, out } => {
            let done = decouple_dataset(&gt, &out)?;
            if done == 0 {
                bail!("no masks could be decoupled in {}", gt.display());
            }
            println!("decoupled {done} masks into {}", out.display());
        }
        Command::Eval {
            pred,
            gt,
            out,
            report,
            mf_mode,
        } => {
            let r = evaluate_dataset::<f64>(&pred, &gt, mf_mode)?;
            let body = match report {
                ReportFormat::Csv => r.to_csv(),
                ReportFormat::Json => r.to_json(),
            };
            ensure_parent(&out)?;
            write_atomic(&out, body.as_bytes())?;
            write_atomic(&sibling(&out, "curves.csv"), r.curve.to_csv().as_bytes())?;
            println!("mae={} mF={} E={} ({} images)", r.mae, r.mean_f, r.e_measure, r.images.len());
        }
        Command::Errdist {
            pred,
            gt,
            bins,
            band,
            out,
        } => {
            let r = analyze_dataset::<f64>(&pred, &gt, bins, band)?;
            if r.bands.is_empty() {
                bail!("every ground truth in {} is constant", gt.display());
            }
            ensure_parent(&out)?;
            write_atomic(&out, r.histogram.to_csv().as_bytes())?;
            write_atomic(&sibling(&out, "edgeband.csv"), r.bands_csv().as_bytes())?;
            println!("analyzed {} images, skipped {}", r.bands.len(), r.skipped.len());
        }
        Command::Synth { n, size, seed, out } => {
            let samples = synth_generate::<f64>(n, size, seed)?;
            write_dataset(&samples, &out)?;
            println!("wrote {n} samples to {}", out.display());
        }
        Command::Train(a) => {
            let data = match &a.data {
                Some(dir) => load_dataset::<f32>(dir)?,
                None => synth_generate::<f32>(a.n, a.size, a.seed)?,
            };
            let config = TrainConfig {
                steps: a.steps,
                batch_size: a.batch,
                learning_rate: a.lr,
                seed: a.seed,
                mode: a.mode,
                model: ModelConfig {
                    n_interactions: a.interactions,
                    ..ModelConfig::default()
                },
                ..TrainConfig::default()
            };
            info!("training on {} samples: {config:?}", data.len());
            let outcome = train(&config, &data)?;
            ensure_parent(&a.out)?;
            save_checkpoint(&outcome.model, &a.out)?;
            write_atomic(&sibling(&a.out, "loss.csv"), training_log_csv(&outcome.log).as_bytes())?;
            let means = outcome.epoch_means();
            println!(
                "trained {} steps: epoch-mean loss {:.6} -> {:.6}",
                a.steps,
                means.first().copied().unwrap_or(f64::NAN),
                means.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Gradcheck(a) => {
            let r = grad_check(&GradCheckConfig {
                mode: a.mode,
                n_interactions: a.interactions,
                reduction: a.reduction,
                samples: a.samples,
                step: a.step,
                seed: a.seed,
                ..GradCheckConfig::default()
            })?;
            println!(
                "max relative error {:e} over {} of {} parameters, {} draws skipped at ReLU kinks (worst: {}[{}])",
                r.max_rel_error, r.checked, r.param_count, r.skipped_kinks, r.worst.0, r.worst.1
            );
            if r.max_rel_error.is_nan() || r.max_rel_error >= a.tolerance {
                bail!("gradient check failed: {:e} exceeds tolerance {:e}", r.max_rel_error, a.tolerance);
            }
        }
    }
    Ok(())
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs as usize).build_global() {
            log::debug!("thread pool already configured: {e}");
        }
    }
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
