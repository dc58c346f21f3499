//! Argument parsing and exit codes: 0 success, 1 validation error or bad
//! usage, 2 runtime failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use tfhts_core::gradcheck::TOLERANCE;
use tfhts_core::text::PoolingStrategy;

use crate::commands::{cmd_ablate, cmd_evaluate, cmd_gen_synthetic, cmd_grad_check, cmd_train};
use crate::config::{load_config, RunConfig};
use crate::error::{Error, Result};
use crate::executor::Rayon;
use crate::report::{export_report, read_report, REPORT_JSON};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "tfhts", version, about = "Text-conditioned patch-transformer forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Default)]
struct Overrides {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated forecast horizons.
    #[arg(long, value_delimiter = ',')]
    horizons: Option<Vec<usize>>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Pooling strategy (mean, bos, cls).
    #[arg(long)]
    strategy: Option<PoolingStrategy>,
    /// Series-only model.
    #[arg(long)]
    no_text: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one model per horizon and save checkpoints.
    Train(Overrides),
    /// Evaluate saved checkpoints on the test split.
    Evaluate {
        #[command(flatten)]
        common: Overrides,
        /// Single checkpoint instead of `<out>/model_h<h>.tfhc` per horizon.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// With-text vs without-text ablation over horizons and pooling strategies.
    Ablate(Overrides),
    /// Write the synthetic benchmark as series CSV, text sidecar and embedding file.
    GenSynthetic(Overrides),
    /// Finite-difference check of every op and a tiny end-to-end model.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render a saved ablation report as CSV and Markdown tables.
    ExportReport {
        #[command(flatten)]
        common: Overrides,
        /// Report JSON; defaults to `<out>/report.json`.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => load_config(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(h) = &self.horizons {
            cfg.horizons.clone_from(h);
        }
        if let Some(o) = &self.out {
            cfg.out_dir.clone_from(o);
        }
        if let Some(s) = self.strategy {
            cfg.pooling = s;
            cfg.strategies = vec![s];
        }
        if self.no_text {
            cfg.with_text = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn dispatch(cli: Cli, stdout: &mut dyn Write) -> Result<i32> {
    let io_err = |e| Error::io(std::path::Path::new("<stdout>"), e);
    match cli.command {
        Command::Train(o) => {
            let cfg = o.resolve()?;
            let exec = Rayon::from_env()?;
            for (h, out) in cmd_train(&cfg, &exec)? {
                writeln!(
                    stdout,
                    "h={h}: {} epochs, best epoch {} (val loss {:.6})",
                    out.checkpoint.epoch,
                    out.checkpoint.best_epoch,
                    out.checkpoint.best_val_loss()
                )
                .map_err(io_err)?;
            }
        }
        Command::Evaluate { common, checkpoint } => {
            let cfg = common.resolve()?;
            let exec = Rayon::from_env()?;
            for r in cmd_evaluate(&cfg, checkpoint.as_deref(), common.strategy, &exec)? {
                writeln!(
                    stdout,
                    "h={} {}: mae {:.6} wape {:.6}",
                    r.horizon,
                    r.model_variant().label(),
                    r.mae,
                    r.wape
                )
                .map_err(io_err)?;
            }
        }
        Command::Ablate(o) => {
            let cfg = o.resolve()?;
            let exec = Rayon::from_env()?;
            let report = cmd_ablate(&cfg, &exec)?;
            for c in &report.cells {
                writeln!(
                    stdout,
                    "h={} {}: mae {:.6} wape {:.6}",
                    c.horizon,
                    c.model_variant().label(),
                    c.mae,
                    c.wape
                )
                .map_err(io_err)?;
            }
        }
        Command::GenSynthetic(o) => {
            let mut cfg = o.resolve()?;
            if let Some(s) = o.seed {
                cfg.synthetic.seed = s;
            }
            cfg.synthetic.validate()?;
            for p in cmd_gen_synthetic(&cfg)? {
                writeln!(stdout, "{}", p.display()).map_err(io_err)?;
            }
        }
        Command::GradCheck { seed } => {
            let results = cmd_grad_check(seed)?;
            let mut worst: f64 = 0.0;
            for r in &results {
                writeln!(stdout, "{:<40} {:.3e}  ({} entries)", r.name, r.max_rel_error, r.n_checked)
                    .map_err(io_err)?;
                worst = worst.max(r.max_rel_error);
            }
            writeln!(stdout, "max relative error: {worst:.3e}").map_err(io_err)?;
            if worst >= TOLERANCE {
                return Ok(EXIT_RUNTIME);
            }
        }
        Command::ExportReport { common, report } => {
            let cfg = common.resolve()?;
            let path = report.unwrap_or_else(|| cfg.out_dir.join(REPORT_JSON));
            let doc = read_report(&path)?;
            for p in export_report(&doc, &cfg.out_dir)? {
                writeln!(stdout, "{}", p.display()).map_err(io_err)?;
            }
        }
    }
    Ok(EXIT_OK)
}

/// Runs the CLI against `argv` (program name first) and returns the exit code.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(stderr, "{text}");
                    EXIT_INVALID
                }
            };
        }
    };
    match dispatch(cli, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            if e.is_validation() {
                EXIT_INVALID
            } else {
                EXIT_RUNTIME
            }
        }
    }
}
