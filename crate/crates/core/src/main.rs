use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dps_hybrid::sim::{
    self, load_config, preset, summarize, write_file, write_gap_report, write_samples,
    write_summary, Scenario, SimError, SimResult,
};

/// Monte-Carlo spectral-efficiency simulator for DPS hybrid precoding.
#[derive(Parser)]
#[command(name = "dps-sim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write per-realization and summary CSVs.
    Run(RunArgs),
    /// List the built-in presets.
    Presets,
}

#[derive(Args)]
struct RunArgs {
    /// Built-in scenario (see `dps-sim presets`).
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// JSON scenario file; a "preset" key inside it selects the base.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    realizations: Option<usize>,
    /// Comma-separated SNR values in dB.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr_db: Option<Vec<f64>>,
    /// Comma-separated algorithm tags, e.g. `dps-full+bd,partial-kmeans+bd@nrf=8`.
    #[arg(long, value_delimiter = ',')]
    algorithms: Option<Vec<String>>,
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
    /// Summary CSV; defaults to `<out stem>_summary.csv`.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Per-realization gap between fully- and partially-connected residuals.
    #[arg(long)]
    gap_report: Option<PathBuf>,
    #[arg(long)]
    n_tx: Option<usize>,
    #[arg(long)]
    n_rx: Option<usize>,
    #[arg(long)]
    n_users: Option<usize>,
    #[arg(long)]
    n_subcarriers: Option<usize>,
    #[arg(long)]
    n_streams: Option<usize>,
    #[arg(long)]
    n_rf_tx: Option<usize>,
    #[arg(long)]
    n_rf_rx: Option<usize>,
}

fn scenario(args: &RunArgs) -> SimResult<Scenario> {
    let mut s = match (&args.preset, &args.config) {
        (Some(p), None) => preset(p)?,
        (None, Some(path)) => load_config(path)?,
        _ => {
            return Err(SimError::Config(
                "exactly one of --preset or --config is required".into(),
            ))
        }
    };
    let sys = &mut s.system;
    for (flag, field) in [
        (args.n_tx, &mut sys.n_tx),
        (args.n_rx, &mut sys.n_rx),
        (args.n_users, &mut sys.n_users),
        (args.n_subcarriers, &mut sys.n_subcarriers),
        (args.n_streams, &mut sys.n_streams),
        (args.n_rf_tx, &mut sys.n_rf_tx),
        (args.n_rf_rx, &mut sys.n_rf_rx),
    ] {
        if let Some(v) = flag {
            *field = v;
        }
    }
    if let Some(v) = &args.snr_db {
        sys.snr_grid_db = v.clone();
    }
    if let Some(v) = args.seed {
        s.seed = v;
    }
    if let Some(v) = args.realizations {
        s.realizations = v;
    }
    if let Some(v) = &args.algorithms {
        s.algorithms = v.clone();
    }
    Ok(s)
}

fn summary_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or("results".into(), |s| s.to_string_lossy());
    out.with_file_name(format!("{stem}_summary.csv"))
}

fn run(args: RunArgs) -> SimResult<()> {
    let s = scenario(&args)?;
    let out = sim::run(&s, args.threads, args.gap_report.is_some())?;
    write_file(&args.out, |w| write_samples(w, &s.name, &out.samples))?;
    let summary = summarize(&s.algorithms, &s.system.snr_grid_db, &out.samples);
    let summary_out = args.summary.clone().unwrap_or_else(|| summary_path(&args.out));
    write_file(&summary_out, |w| write_summary(w, &s.name, &summary))?;
    if let (Some(path), Some(gaps)) = (&args.gap_report, &out.gaps) {
        write_file(path, |w| write_gap_report(w, gaps))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Presets => {
            for p in sim::PRESETS {
                println!("{p}");
            }
            ExitCode::SUCCESS
        }
        Command::Run(args) => match run(args) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code() as u8)
            }
        },
    }
}
