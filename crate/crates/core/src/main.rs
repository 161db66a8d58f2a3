use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fbi_micro::cli::{execute, Command, Run};

#[derive(Parser)]
#[command(name = "fbi-micro", version, about = "FBI transforms, decay classification and wave-front reports")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for randomized sampling (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Certify the phase polynomial.
    ValidatePhase,
    /// Sample the transform on the configured grid.
    Transform,
    /// Classify an existing sample CSV.
    Classify {
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Sample, classify and summarize the wave-front set.
    Wavefront,
    /// Approximate inversion over an ε-sequence.
    Invert,
    /// Cone cover and microlocal decomposition.
    Decompose,
    /// Characteristic set, parametrix probe and inclusion audit.
    Elliptic,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(config) = cli.config.as_ref() else {
        eprintln!("error: --config is required");
        return ExitCode::from(4);
    };
    let (cmd, samples) = match &cli.command {
        Cmd::ValidatePhase => (Command::ValidatePhase, None),
        Cmd::Transform => (Command::Transform, None),
        Cmd::Classify { samples } => (Command::Classify, samples.clone()),
        Cmd::Wavefront => (Command::Wavefront, None),
        Cmd::Invert => (Command::Invert, None),
        Cmd::Decompose => (Command::Decompose, None),
        Cmd::Elliptic => (Command::Elliptic, None),
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(4);
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(4);
        }
    };
    let result = pool.install(|| {
        let run = Run::from_path(config, cli.seed)?;
        let out = execute(cmd, &run, samples.as_deref())?;
        out.write(&cli.out)?;
        Ok::<_, fbi_micro::Error>(out)
    });
    match result {
        Ok(out) => {
            for (name, _) in &out.files {
                eprintln!("wrote {}", cli.out.join(name).display());
            }
            ExitCode::from(out.status.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
