use std::path::PathBuf;
use std::process::ExitCode;

use asym_ssm::pipeline::{Pipeline, PipelineConfig, Stage, RUN_REPORT_TXT};
use asym_ssm::Error;
use clap::Parser;

/// Bilateral shape asymmetry analysis: synthetic cohorts or manifest input,
/// particle correspondence, Procrustes alignment and point-wise statistics.
#[derive(Debug, Parser)]
#[command(name = "asym-ssm", version)]
struct Args {
    /// JSON configuration; built-in defaults when absent.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides the configuration seed.
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,

    /// Run a single stage: synth, optimize, align, asymmetry, stats or report.
    #[arg(long, value_name = "NAME")]
    stage: Option<String>,

    /// Worker threads (default: all cores).
    #[arg(long, value_name = "INT")]
    threads: Option<usize>,

    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
}

/// Exit status for each failure class.
fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) => 2,
        Error::Io { .. } => 3,
        Error::Ply { .. } | Error::Surface(_) | Error::Input(_) | Error::MissingArtifact(_) => 4,
        Error::Stats(_) => 5,
        Error::Stage { .. } => 1,
    }
}

fn run(args: &Args) -> Result<(), Error> {
    let mut config = match &args.config {
        Some(p) => PipelineConfig::load(p)?,
        None => {
            let mut c = PipelineConfig::default();
            c.resolve()?;
            c
        }
    };
    if let Some(seed) = args.seed {
        config = config.with_seed(seed)?;
    }
    if args.print_config {
        println!("{}", config.to_json());
        return Ok(());
    }
    let stage = args.stage.as_deref().map(str::parse::<Stage>).transpose()?;
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let pipeline = Pipeline::new(config, &args.out);
    match stage {
        Some(s) => pipeline.run_stage(s)?,
        None => {
            pipeline.run()?;
            let text = std::fs::read_to_string(pipeline.path(RUN_REPORT_TXT)).unwrap_or_default();
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = e.to_string();
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                let part = s.to_string();
                if !msg.contains(&part) {
                    msg.push_str(&format!(": {part}"));
                }
                src = s.source();
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
