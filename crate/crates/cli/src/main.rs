use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rectnet_cli::{cmd_actstats, cmd_gradcheck, cmd_train, ActStatsArgs, CliError};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Train and check rectified-activation networks.
#[derive(Parser)]
#[command(name = "rectnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one (model × activation) cell from a key = value config.
    Train { config: PathBuf },
    /// Finite-difference check of every layer's backward pass.
    Gradcheck,
    /// Sparsity and slope statistics of one activation.
    Actstats {
        /// relu, leaky, prelu or rrelu
        kind: String,
        /// Leaky divisor (PReLU: freeze the slope at 1/a)
        #[arg(long)]
        a: Option<f64>,
        /// RReLU lower bound
        #[arg(long)]
        l: Option<f64>,
        /// RReLU upper bound
        #[arg(long)]
        u: Option<f64>,
        /// Number of inputs (at least 10000)
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut out = std::io::stdout().lock();
    let result: Result<(), CliError> = match cli.command {
        Command::Train { config } => cmd_train(&config, &mut out),
        Command::Gradcheck => cmd_gradcheck(&mut out),
        Command::Actstats { kind, a, l, u, n, seed } => cmd_actstats(&ActStatsArgs { kind, a, l, u, n, seed }, &mut out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rectnet: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
