//! Command-line front-end for seeded SNR sweeps.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use pathbf::harness::{
    emit_csv, metadata_line, parse_algorithms, parse_config, parse_snr, preset, run_sweep_with_threads, write_csv,
};
use pathbf::{Error, Result};

/// Compares instantaneous and pathwise CSIT beamformer designs over seeded
/// SNR sweeps and writes one CSV row per (geometry, SNR, algorithm).
#[derive(Debug, Parser)]
#[command(name = "pathbf", version)]
struct Cli {
    /// Config file (`key = value` lines).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Built-in configuration.
    #[arg(long, value_parser = ["fig2", "fig3", "fig4"])]
    preset: Option<String>,
    /// Master seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output CSV path; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Realizations per geometry.
    #[arg(long, value_name = "N")]
    trials: Option<usize>,
    /// SNR points in dB, `start:step:stop` or a comma list.
    #[arg(long, value_name = "SPEC", allow_hyphen_values = true)]
    snr: Option<String>,
    /// Comma list of wsmse, minorize_icsit, minorize_pwcsit.
    #[arg(long, value_name = "LIST")]
    algos: Option<String>,
    /// Number of geometry draws.
    #[arg(long, value_name = "N")]
    draws: Option<usize>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(_), Some(_)) => return Err(Error::Config("--config and --preset are mutually exclusive".into())),
        (Some(path), None) => parse_config(path)?,
        (None, Some(name)) => preset(name)?,
        (None, None) => return Err(Error::Config("one of --config or --preset is required".into())),
    };
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    if let Some(t) = cli.trials {
        cfg.trials = t;
    }
    if let Some(s) = &cli.snr {
        cfg.snr_db = parse_snr(s)?;
    }
    if let Some(a) = &cli.algos {
        cfg.algorithms = parse_algorithms(a)?;
    }
    if let Some(d) = cli.draws {
        cfg.slow_fading_draws = d;
    }
    cfg.validate()?;
    let threads = cli
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let rows = run_sweep_with_threads(&cfg, threads)?;
    let meta = metadata_line(&cfg);
    match &cli.out {
        Some(path) => emit_csv(&rows, Some(&meta), path),
        None => {
            let mut out = std::io::stdout().lock();
            write_csv(&rows, Some(&meta), &mut out)
                .and_then(|_| out.flush())
                .map_err(|source| Error::Io {
                    path: PathBuf::from("<stdout>"),
                    source,
                })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pathbf: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
