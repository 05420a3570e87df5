use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use fuse_core::baselines::Method;
use fuse_core::commands::{cmd_eval, cmd_inspect, cmd_run, cmd_synth, exit_code, load_configured, write_diagnostics};
use fuse_core::config::RunConfig;
use fuse_core::ensemble::Mode;
use fuse_core::error::FuseError;

#[derive(Parser)]
#[command(name = "fuse", version, about = "Label-free verifier ensembling for best-of-N selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a TOML spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run selection methods and write a selections file.
    Run {
        #[command(flatten)]
        common: Common,
        /// Where to write the selections (JSON lines).
        #[arg(long, env = "FUSE_OUTPUT")]
        output: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Comma-separated method ids.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        #[arg(long)]
        workers: Option<usize>,
        /// Also write per-query pipeline diagnostics (JSON lines).
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Score a selections file against dataset labels.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, env = "FUSE_OUTPUT")]
        selections: Option<PathBuf>,
        /// Where to write the JSON report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Dump pipeline diagnostics for one query.
    Inspect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        query: String,
    },
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = "FUSE_MANIFEST")]
    manifest: Option<PathBuf>,
    #[arg(long, env = "FUSE_RECORDS")]
    records: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    Query,
    Batched,
}

impl Common {
    fn load(&self) -> Result<RunConfig, FuseError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(p) = &self.manifest {
            cfg.io.manifest = Some(p.clone());
        }
        if let Some(p) = &self.records {
            cfg.io.records = Some(p.clone());
        }
        Ok(cfg)
    }
}

fn fail(err: FuseError) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(exit_code(&err) as u8)
}

fn run(cli: Cli) -> Result<ExitCode, FuseError> {
    match cli.command {
        Command::Synth { spec, out } => {
            let (manifest, records) = cmd_synth(&spec, &out)?;
            println!("{}\n{}", manifest.display(), records.display());
        }
        Command::Run {
            common,
            output,
            mode,
            methods,
            workers,
            diagnostics,
        } => {
            let mut cfg = common.load()?;
            if let Some(p) = output {
                cfg.io.selections = Some(p);
            }
            if let Some(m) = mode {
                cfg.mode = match m {
                    ModeArg::Query => Mode::Query,
                    ModeArg::Batched => Mode::Batched,
                };
            }
            if let Some(list) = methods {
                cfg.methods = list.iter().map(|s| s.parse::<Method>()).collect::<Result<_, _>>()?;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            cfg.validate()?;
            let outcome = cmd_run(&cfg)?;
            if let Some(path) = diagnostics {
                write_diagnostics(&path, &cfg, &load_configured(&cfg)?)?;
            }
            for (method, results) in &outcome.results {
                let fallbacks = results.iter().filter(|r| r.fallback.is_some()).count();
                eprintln!("{method}: {} queries, {fallbacks} fallbacks", results.len());
            }
            for (method, reason) in &outcome.skipped {
                eprintln!("skipped {method}: {reason}");
            }
            if !outcome.skipped.is_empty() {
                return Ok(ExitCode::from(4));
            }
        }
        Command::Eval {
            common,
            selections,
            report,
        } => {
            let mut cfg = common.load()?;
            if let Some(p) = selections {
                cfg.io.selections = Some(p);
            }
            if let Some(p) = report {
                cfg.io.report = Some(p);
            }
            print!("{}", cmd_eval(&cfg)?.to_table());
        }
        Command::Inspect { common, query } => {
            let cfg = common.load()?;
            let dump = cmd_inspect(&cfg, &query)?;
            println!("{}", serde_json::to_string_pretty(&dump).expect("json"));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli).context("fuse failed") {
        Ok(code) => code,
        Err(err) => match err.downcast::<FuseError>() {
            Ok(e) => fail(e),
            Err(other) => {
                eprintln!("error: {other:#}");
                ExitCode::from(3)
            }
        },
    }
}
