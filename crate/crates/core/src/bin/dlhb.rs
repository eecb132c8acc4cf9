use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use dlhb::dataset::{self, DATASET_VERSION};
use dlhb::harness::{self, ExperimentConfig};
use dlhb::network::{self, MODEL_VERSION};
use dlhb::{Error, Result};

#[derive(Parser)]
#[command(name = "dlhb", about = "Hybrid beamforming experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path; defaults to the config `output` field.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a training dataset.
    Gen(Common),
    /// Train the network on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Spectral efficiency versus SNR.
    SweepSnr {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Spectral efficiency versus channel corruption level.
    SweepCorruption {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Median run time of prediction and MO solve.
    Time {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn fail(code: &str, message: &str) -> ExitCode {
    eprintln!("dlhb-error code={code} message={}", one_line(message));
    ExitCode::from(2)
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = match (&common.out, &cfg.output) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => PathBuf::from(p),
        (None, None) => return Err(Error::Config("no --out given and no output in config".into())),
    };
    Ok((cfg, out))
}

/// Writes next to the target and renames, so failures leave no partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp-{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    if let Err(e) = std::fs::write(&tmp, bytes).and_then(|_| std::fs::rename(&tmp, path)) {
        let _ = std::fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(common) => {
            let (cfg, out) = load(&common)?;
            let ds = dataset::generate(&cfg.dataset_config())?;
            write_atomic(&out, &dataset::to_bytes(&ds)?)?;
            println!("wrote {} samples to {}", ds.len(), out.display());
        }
        Command::Train { common, dataset: path } => {
            let (cfg, out) = load(&common)?;
            let ds = dataset::load(&path)?;
            let (model, report) = network::train(&ds, &cfg.train_config(), &cfg.cnn_config())?;
            write_atomic(&out, &network::to_bytes(&model)?)?;
            println!("epoch,train_loss,val_loss");
            for (e, (t, v)) in report.train_loss.iter().zip(&report.val_loss).enumerate() {
                let v = v.map_or_else(|| "nan".to_string(), |v| format!("{v:.6e}"));
                println!("{e},{t:.6e},{v}");
            }
            println!(
                "best_epoch={} checksum={} wall_time_s={:.3}",
                report.best_epoch, report.checksum, report.wall_time_s
            );
        }
        Command::SweepSnr { common, model } => {
            let (cfg, out) = load(&common)?;
            let model = network::load_model(&model)?;
            let rows = harness::run_snr_sweep(&cfg, &model)?;
            write_atomic(&out, harness::to_csv(&rows).as_bytes())?;
        }
        Command::SweepCorruption { common, model } => {
            let (cfg, out) = load(&common)?;
            let model = network::load_model(&model)?;
            let rows = harness::run_corruption_sweep(&cfg, &model)?;
            write_atomic(&out, harness::to_csv(&rows).as_bytes())?;
        }
        Command::Time { common, model } => {
            let (cfg, out) = load(&common)?;
            let model = network::load_model(&model)?;
            let report = harness::time_methods(&cfg, &model)?;
            write_atomic(&out, report.to_csv().as_bytes())?;
            println!("speedup={:.2}", report.speedup());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let version = format!(
        "{} (dataset format {DATASET_VERSION}, model format {MODEL_VERSION})",
        env!("CARGO_PKG_VERSION")
    );
    let parsed = Cli::command()
        .version(version)
        .try_get_matches()
        .and_then(|m| Cli::from_arg_matches(&m));
    let cli = match parsed {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            return fail("usage", msg.lines().next().unwrap_or("invalid arguments"));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}
