use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gpla_core::gateway::BackendKind;
use gpla_core::pipeline::{init_demo, Pipeline, Step, DEFAULTS_TOML};
use gpla_core::{Error, ErrorKind};

#[derive(Parser)]
#[command(name = "gpla", version, about = "Value lexicon, measurement and value-system pipeline")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "gpla.toml")]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured backend.
    #[arg(long, global = true, value_enum)]
    backend: Option<Backend>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Remote,
    Mock,
}

#[derive(Subcommand)]
enum Command {
    /// Load corpus files into the corpus store.
    Ingest,
    /// Parse perceptions, generate values and build the deduplicated lexicon.
    Lexicon,
    /// Measure every subject on every lexicon value.
    Measure,
    /// Derive the value system from the construction half of the subjects.
    Structure,
    /// Confirmatory fit of the value system on the held-out half.
    Cfa,
    /// Circular placement of the factors.
    Circumplex,
    /// Train and cross-validate the pairwise safety probe.
    Probe,
    /// Distill an alignment target from preference triplets.
    Distill,
    /// Best-of-n selection of candidate responses against the target.
    Reward,
    /// Render figures and their CSV twins.
    Report,
    /// Run every step in order.
    All,
    /// Inspect configuration.
    Config {
        /// Print the commented default configuration.
        #[arg(long)]
        print_defaults: bool,
    },
    /// Write a self-contained mock project into DIR.
    InitDemo { dir: PathBuf },
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Backend => 3,
        ErrorKind::Numerical => 4,
        ErrorKind::Data => 1,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let step = match cli.command {
        Command::Config { print_defaults } => {
            if print_defaults {
                print!("{DEFAULTS_TOML}");
            } else {
                let p = Pipeline::load(&cli.config, cli.seed, cli.backend.map(to_kind))?;
                print!("{}", p.config().to_toml()?);
            }
            return Ok(());
        }
        Command::InitDemo { dir } => {
            let path = init_demo(&dir, cli.seed.unwrap_or(7))?;
            println!("{}", path.display());
            return Ok(());
        }
        Command::All => None,
        Command::Ingest => Some(Step::Ingest),
        Command::Lexicon => Some(Step::Lexicon),
        Command::Measure => Some(Step::Measure),
        Command::Structure => Some(Step::Structure),
        Command::Cfa => Some(Step::Cfa),
        Command::Circumplex => Some(Step::Circumplex),
        Command::Probe => Some(Step::Probe),
        Command::Distill => Some(Step::Distill),
        Command::Reward => Some(Step::Reward),
        Command::Report => Some(Step::Report),
    };
    let pipeline = Pipeline::load(&cli.config, cli.seed, cli.backend.map(to_kind))?;
    let steps = match step {
        Some(s) => vec![s],
        None => Step::ALL.to_vec(),
    };
    for s in steps {
        log::info!("running {}", s.name());
        let report = pipeline.run(s)?;
        println!("{}\t{}", s.name(), report.summary);
    }
    Ok(())
}

fn to_kind(b: Backend) -> BackendKind {
    match b {
        Backend::Remote => BackendKind::Remote,
        Backend::Mock => BackendKind::Mock,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
