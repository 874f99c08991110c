use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dumbbell_core::cli::{load_config, report, run_experiment, write_results, ExperimentConfig, ExperimentKind};

#[derive(Parser)]
#[command(
    name = "dumbbell",
    version,
    about = "Spectral experiments on thin-handle dumbbell domains"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
    /// Run the built-in oracle suite.
    OracleCheck {
        #[command(flatten)]
        flags: Flags,
    },
    /// Summarize a finished run directory and verify its manifest.
    Report { dir: PathBuf },
}

#[derive(clap::Args)]
struct Flags {
    /// Worker threads (0: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Omit timings from the record so reruns are byte-identical.
    #[arg(long)]
    deterministic: bool,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn execute(mut cfg: ExperimentConfig, flags: Flags) -> dumbbell_core::Result<bool> {
    let threads = flags.threads.map(|t| t.to_string());
    let mut overrides: Vec<(&str, &str)> = Vec::new();
    if let Some(t) = &threads {
        overrides.push(("threads", t));
    }
    if flags.deterministic {
        overrides.push(("deterministic", "true"));
    }
    if !overrides.is_empty() {
        cfg = cfg.with_overrides(&overrides)?;
    }
    let dir = flags.out.unwrap_or_else(|| cfg.output_dir.clone());
    let rec = run_experiment(&cfg)?;
    write_results(&rec, &dir)?;
    let (text, ok) = report(&dir)?;
    print!("{text}");
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.cmd {
        Cmd::Run { config, flags } => load_config(&config).and_then(|c| execute(c, flags)),
        Cmd::OracleCheck { flags } => {
            ExperimentConfig::defaults(ExperimentKind::OracleCheck).and_then(|c| execute(c, flags))
        }
        Cmd::Report { dir } => report(&dir).map(|(text, ok)| {
            print!("{text}");
            ok
        }),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("dumbbell: one or more assertions failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("dumbbell: {e}");
            ExitCode::from(2)
        }
    }
}
