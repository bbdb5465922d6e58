use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use kesten_report::acceptance::DEFAULT_SEED;
use kesten_report::commands::{cmd_alpha, cmd_audit, cmd_exit, cmd_lyapunov, cmd_sweep_lr};
use kesten_report::{cmd_reproduce, CliError, ResultBundle, RunConfig};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Lyapunov,
    Alpha,
    Exit,
    Audit,
    SweepLr,
    Reproduce,
}

/// Monte Carlo estimates for random affine recursions X' = A X + B.
#[derive(Debug, Parser)]
#[command(name = "kesten", version)]
struct Args {
    command: Command,
    /// JSON run configuration; optional for `reproduce`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; KESTEN_THREADS takes precedence.
    #[arg(long)]
    threads: Option<usize>,
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    match std::env::var("KESTEN_THREADS") {
        Ok(v) => {
            v.trim().parse::<usize>().map(Some).map_err(|_| {
                CliError::Config(format!("KESTEN_THREADS={v:?} is not a thread count"))
            })
        }
        Err(_) => Ok(flag),
    }
}

fn run(args: Args) -> Result<(), CliError> {
    if let Some(n) = thread_count(args.threads)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let config = match &args.config {
        Some(path) => {
            let mut cfg = RunConfig::load(path)?;
            if let Some(seed) = args.seed {
                cfg.seed = seed;
            }
            if let Some(out) = &args.out {
                cfg.out = out.clone();
            }
            Some(cfg)
        }
        None => None,
    };
    if let Command::Reproduce = args.command {
        let seed = args
            .seed
            .or(config.as_ref().map(|c| c.seed))
            .unwrap_or(DEFAULT_SEED);
        let out = args
            .out
            .clone()
            .or(config.as_ref().map(|c| c.out.clone()))
            .unwrap_or_else(|| PathBuf::from("out"));
        let (bundle, outcomes) = cmd_reproduce(seed);
        for o in &outcomes {
            println!("{}", o.line());
        }
        bundle.write(&out)?;
        let failed = outcomes.iter().filter(|o| !o.passed).count();
        return if failed == 0 {
            Ok(())
        } else {
            Err(CliError::Acceptance {
                failed,
                total: outcomes.len(),
            })
        };
    }
    let cfg = config.ok_or_else(|| CliError::Config("--config is required".into()))?;
    let bundle: ResultBundle = match args.command {
        Command::Lyapunov => cmd_lyapunov(&cfg)?,
        Command::Alpha => cmd_alpha(&cfg)?,
        Command::Exit => cmd_exit(&cfg)?,
        Command::Audit => cmd_audit(&cfg)?,
        Command::SweepLr => cmd_sweep_lr(&cfg)?,
        Command::Reproduce => unreachable!("handled above"),
    };
    bundle.write(&cfg.out)?;
    for t in &bundle.tables {
        println!("{}", cfg.out.join(&t.file).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kesten: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
