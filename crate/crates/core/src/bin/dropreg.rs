use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dropreg::data::image_io::{read_labels, write_png_rgb};
use dropreg::data::{
    colorize_labels, read_synthetic_dataset, voc_palette, write_synthetic_dataset, AugmentSpec,
    SyntheticSceneSpec, VocDataset,
};
use dropreg::error::{Error, Result};
use dropreg::harness::train::SampleSet;
use dropreg::harness::{evaluate, headline, run_experiment, run_matrix, table2, ExperimentConfig};
use dropreg::model::Model;
use dropreg::regularizers::RegularizerSpec;
use dropreg::varlab::{run_sweep, sweep_csv, ShiftMethod, SweepEntry};

#[derive(Parser)]
#[command(
    name = "dropreg",
    version,
    about = "Structured dropout experiments for semantic segmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// All 16 rows of the testing matrix.
    Table2,
    /// `none` against scheduled `all-chandrop`.
    Headline,
}

#[derive(Subcommand)]
enum Command {
    /// Train one experiment from a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Defaults to `runs/<name>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a built-in experiment matrix and write summary.csv.
    Matrix {
        #[arg(long, value_enum)]
        preset: Preset,
        /// Use the linear ramp on every active hook (table2 only).
        #[arg(long)]
        scheduled: bool,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        #[arg(long)]
        out: PathBuf,
        /// Base experiment whose training and model settings every row shares.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Monte Carlo variance-shift sweep, printed as CSV.
    Varshift {
        /// JSON list of {method, mu, v, p_or_beta[, n_samples, seed]}.
        /// Without it, dropout at p = 0.1 and UOut at beta = 0.1 are run.
        #[arg(long)]
        sweep: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a synthetic dataset directory or VOC root.
    Eval {
        /// The `.json` sidecar written next to the weights.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// VOC split to evaluate.
        #[arg(long, default_value = "val")]
        split: String,
        #[arg(long, default_value_t = 64)]
        crop: usize,
        #[arg(long, default_value_t = 4)]
        batch_size: usize,
    },
    /// Render a label map with the VOC palette.
    Colorize {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic dataset to disk.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn train(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let mut exp = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        exp.train.seed = s;
    }
    let out = out.unwrap_or_else(|| Path::new("runs").join(&exp.name));
    let o = run_experiment(&exp, &out)?;
    println!(
        "{}: best epoch {} val mIoU {:.4} (loss {:.4}), checkpoint {}",
        o.name,
        o.best.epoch,
        o.best.val.mean,
        o.best.val.loss,
        o.checkpoint.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn matrix(
    preset: Preset,
    scheduled: bool,
    parallel: usize,
    out: &Path,
    config: Option<PathBuf>,
    epochs: Option<usize>,
    seed: Option<u64>,
) -> Result<()> {
    let mut base = match config {
        Some(p) => ExperimentConfig::load(&p)?,
        None => ExperimentConfig::new(
            "base",
            RegularizerSpec::none(),
            RegularizerSpec::none(),
            RegularizerSpec::none(),
        ),
    };
    if let Some(e) = epochs {
        base.train.epochs = e;
    }
    if let Some(s) = seed {
        base.train.seed = s;
    }
    let rows = match preset {
        Preset::Table2 => table2(&base, scheduled),
        Preset::Headline => headline(&base),
    };
    let summary = run_matrix(&rows, parallel, out)?;
    for r in &summary {
        println!("{:<26} {:.4}", r.experiment, r.summary.mean);
    }
    Ok(())
}

fn varshift(sweep: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let entries: Vec<SweepEntry> = match sweep {
        Some(p) => {
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::config(format!("{}: {e}", p.display())))?
        }
        None => [ShiftMethod::Dropout, ShiftMethod::UOut]
            .into_iter()
            .map(|method| SweepEntry {
                method,
                mu: 0.0,
                v: 1.0,
                p_or_beta: 0.1,
                n_samples: 1_000_000,
                seed: 0,
            })
            .collect(),
    };
    let csv = sweep_csv(&run_sweep(&entries)?);
    match out {
        Some(p) => write_text(&p, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn eval(
    checkpoint: &Path,
    dataset: &Path,
    split: &str,
    crop: usize,
    batch_size: usize,
) -> Result<()> {
    let (mut model, _) = Model::load_checkpoint(checkpoint)?;
    let classes = model.config().num_classes;
    let set = if dataset.join("ImageSets").is_dir() {
        let ds = VocDataset::open(dataset, split)?;
        let indices = (0..ds.len()).collect();
        SampleSet::Voc {
            dataset: ds,
            indices,
        }
    } else {
        SampleSet::Memory(read_synthetic_dataset(dataset)?.1)
    };
    if batch_size == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    let summary = evaluate(
        &mut model,
        &set,
        &AugmentSpec::eval(crop),
        batch_size,
        classes,
    )?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn colorize(labels: &Path, out: &Path) -> Result<()> {
    let label = read_labels(labels)?;
    let img = colorize_labels(&label, &voc_palette(256))?;
    write_png_rgb(out, &img)
}

fn synth(out: &Path, count: u64, seed: u64) -> Result<()> {
    let spec = SyntheticSceneSpec {
        seed,
        ..SyntheticSceneSpec::default()
    };
    write_synthetic_dataset(out, &spec, count)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, seed, out } => train(&config, seed, out),
        Command::Matrix {
            preset,
            scheduled,
            parallel,
            out,
            config,
            epochs,
            seed,
        } => matrix(preset, scheduled, parallel, &out, config, epochs, seed),
        Command::Varshift { sweep, out } => varshift(sweep, out),
        Command::Eval {
            checkpoint,
            dataset,
            split,
            crop,
            batch_size,
        } => eval(&checkpoint, &dataset, &split, crop, batch_size),
        Command::Colorize { labels, out } => colorize(&labels, &out),
        Command::Synth { out, count, seed } => synth(&out, count, seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
