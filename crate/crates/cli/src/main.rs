//! Reproducible experiment driver for the Walsh-Hadamard autoencoder lab.

mod config;
mod sweep;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Config, ConfigError};
use whlab_core::autoencoder::{checkpoint, train};
use whlab_core::channel::{fbl_threshold_snr_db, shannon_snr_db};
use whlab_core::error::Error as CoreError;
use whlab_core::evaluate::{bler_curve, curve_from_csv, curve_to_csv, threshold_snr};
use whlab_core::fmt::format_sig;
use whlab_core::polar::{construct, PolarSystem};
use whlab_core::powermodel::{model_power, polar_power};

#[derive(Parser)]
#[command(name = "whlab", version, about = "Walsh-Hadamard channel autoencoder laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an autoencoder; writes checkpoint, training log and config echo.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo BLER of a trained checkpoint over eval.snr_grid.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Threshold SNR for a target BLER from an existing curve CSV.
    Threshold {
        /// BLER CSV produced by evaluate or polar-sim.
        #[arg(long)]
        bler: PathBuf,
        /// Target BLER (default 1e-3, or eval.target_bler from --config).
        #[arg(long)]
        target: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Shannon and finite-blocklength threshold SNRs for a rate point.
    Bound {
        #[arg(long)]
        rate: f64,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        pe: f64,
    },
    /// Power and energy-efficiency report for a configuration.
    Power {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cartesian hyperparameter sweep: train/evaluate/threshold/power per point.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads (default: available parallelism).
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// BLER curve of the polar baseline over eval.snr_grid.
    PolarSim {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Exit codes: 1 malformed config or I/O, 2 unbracketed threshold,
/// 3 training aborted on a non-finite loss.
pub struct CliError {
    code: u8,
    message: String,
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError {
            code: 1,
            message: e.to_string(),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let code = match e {
            CoreError::Unbracketed { .. } => 2,
            CoreError::TrainAborted(_) => 3,
            _ => 1,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError {
            code: 1,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("whlab: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

/// Output directory: --out flag, else $WHLAB_OUT/<command>, else ./runs/<command>.
fn resolve_out(out: Option<PathBuf>, command: &str) -> PathBuf {
    out.unwrap_or_else(|| {
        let root = std::env::var("WHLAB_OUT").unwrap_or_else(|_| "runs".to_string());
        Path::new(&root).join(command)
    })
}

/// Writes via a temp file plus rename so failures never leave partial output.
fn write_atomic(path: &Path, content: &str) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, content)?;
    std::fs::rename(&tmp, path)
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train { config, seed, out } => {
            let mut cfg = Config::from_file(&config)?;
            if let Some(seed) = seed {
                cfg.set("seed", seed.to_string());
            }
            let dir = resolve_out(out, "train");
            run_train(&cfg, &dir)
        }
        Command::Evaluate {
            config,
            checkpoint,
            out,
        } => {
            let cfg = Config::from_file(&config)?;
            let dir = resolve_out(out, "evaluate");
            run_evaluate(&cfg, &checkpoint, &dir)
        }
        Command::Threshold {
            bler,
            target,
            config,
        } => {
            let target = match (target, config) {
                (Some(t), _) => t,
                (None, Some(path)) => Config::from_file(&path)?.target_bler()?,
                (None, None) => 1e-3,
            };
            let text = std::fs::read_to_string(&bler)?;
            let curve = curve_from_csv(&text)?;
            let th = threshold_snr(&curve, target)?;
            println!("threshold_snr_db={}", format_sig(th, 12));
            Ok(())
        }
        Command::Bound { rate, n, pe } => {
            let shannon = shannon_snr_db(rate);
            let fbl = fbl_threshold_snr_db(rate, pe, n)?;
            println!("shannon_snr_db={}", format_sig(shannon, 12));
            println!("fbl_threshold_snr_db={}", format_sig(fbl, 12));
            Ok(())
        }
        Command::Power { config, out } => {
            let cfg = Config::from_file(&config)?;
            let report = power_report(&cfg)?;
            print!("{report}");
            if let Some(dir) = out {
                write_atomic(&dir.join("power.csv"), &report)?;
                write_atomic(&dir.join("resolved.cfg"), &cfg.resolved_echo("power"))?;
            }
            Ok(())
        }
        Command::Sweep { config, jobs, out } => {
            let dir = resolve_out(out, "sweep");
            let jobs = jobs.unwrap_or_else(|| {
                std::thread::available_parallelism()
                    .map(|n| n.get())
                    .unwrap_or(1)
            });
            sweep::run_sweep(&config, jobs, &dir)
        }
        Command::PolarSim { config, out } => {
            let cfg = Config::from_file(&config)?;
            let dir = resolve_out(out, "polar-sim");
            run_polar_sim(&cfg, &dir)
        }
    }
}

pub fn run_train(cfg: &Config, dir: &Path) -> Result<(), CliError> {
    let model_cfg = cfg.model_config()?;
    let tcfg = cfg.train_config()?;
    let (model, log) = train(&model_cfg, &tcfg)?;
    std::fs::create_dir_all(dir)?;
    write_atomic(&dir.join("checkpoint.txt"), &checkpoint::save_string(&model))?;
    write_atomic(&dir.join("train_log.csv"), &log.to_csv())?;
    write_atomic(&dir.join("resolved.cfg"), &cfg.resolved_echo("train"))?;
    if let Some(last) = log.epochs.last() {
        println!(
            "trained {} epochs: val_loss={} val_acc={}",
            last.epoch,
            format_sig(last.val_loss, 6),
            format_sig(last.val_acc, 6)
        );
    }
    Ok(())
}

pub fn run_evaluate(cfg: &Config, ckpt_path: &Path, dir: &Path) -> Result<(), CliError> {
    let mut model = checkpoint::load_file(ckpt_path)?;
    let seed = cfg.seed()?;
    let grid = cfg.snr_grid()?;
    let stop = cfg.stop_rule()?;
    let model_id = ckpt_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".to_string());
    let metadata = BTreeMap::from([
        ("model".to_string(), model_id),
        ("n".to_string(), model.cfg.n.to_string()),
        ("k".to_string(), model.cfg.k.to_string()),
        ("seed".to_string(), seed.to_string()),
    ]);
    let curve = bler_curve(&mut model, &grid, &stop, seed, metadata)?;
    std::fs::create_dir_all(dir)?;
    write_atomic(&dir.join("bler.csv"), &curve_to_csv(&curve))?;
    write_atomic(&dir.join("resolved.cfg"), &cfg.resolved_echo("evaluate"))?;
    Ok(())
}

pub fn run_polar_sim(cfg: &Config, dir: &Path) -> Result<(), CliError> {
    let n = cfg.model_n()?;
    let k = cfg.model_k()?;
    let list_size = cfg.polar_list_size()?;
    let code = construct(
        n,
        k,
        cfg.polar_crc_len()?,
        list_size,
        cfg.polar_construction()?,
    )?;
    let mut system = PolarSystem::new(code);
    let seed = cfg.seed()?;
    let grid = cfg.snr_grid()?;
    let stop = cfg.stop_rule()?;
    let metadata = BTreeMap::from([
        ("model".to_string(), format!("polar_l{list_size}")),
        ("n".to_string(), n.to_string()),
        ("k".to_string(), k.to_string()),
        ("seed".to_string(), seed.to_string()),
    ]);
    let curve = bler_curve(&mut system, &grid, &stop, seed, metadata)?;
    std::fs::create_dir_all(dir)?;
    write_atomic(&dir.join("bler.csv"), &curve_to_csv(&curve))?;
    write_atomic(&dir.join("resolved.cfg"), &cfg.resolved_echo("polar-sim"))?;
    Ok(())
}

pub fn power_report(cfg: &Config) -> Result<String, CliError> {
    let pcfg = cfg.power_config()?;
    let report = match cfg.converters()?.as_str() {
        "polar" => polar_power(&pcfg, cfg.polar_list_size()?, cfg.model_k()?)?,
        _ => {
            let model_cfg = cfg.model_config()?;
            model_power(&model_cfg, cfg.converter_kind()?, &pcfg)?
        }
    };
    Ok(report.to_csv())
}
