use clap::{Parser, Subcommand};
use qkdnet_cli::{cmd_kms_serve, cmd_relay, cmd_simulate, cmd_sweep, cmd_validate, CliError};
use std::path::PathBuf;

/// Desk-scale simulator of a four-node trusted-node QKD ring.
#[derive(Parser)]
#[command(name = "qkdnet", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check a ring topology file against the network invariants
    Validate {
        /// Topology config to check
        topology: PathBuf,
    },
    /// Compute the key-rate curve over a loss grid into sweep.csv
    Sweep {
        /// Run configuration file
        #[arg(long)]
        config: PathBuf,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate the ring and write per-link series and a summary
    Simulate {
        /// Run configuration file
        #[arg(long)]
        config: PathBuf,
        /// Simulated span in days (overrides the config)
        #[arg(long)]
        days: Option<f64>,
        /// Root seed (overrides the config)
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Deliver one key between two nodes over the trusted-node relay
    Relay {
        /// Run configuration file
        #[arg(long)]
        config: PathBuf,
        /// Source node id
        #[arg(long)]
        src: String,
        /// Destination node id
        #[arg(long)]
        dst: String,
        /// Key length in bits
        #[arg(long)]
        bits: u64,
    },
    /// Serve the key-delivery protocol over a Unix socket or stdio
    KmsServe {
        /// Run configuration file
        #[arg(long)]
        config: PathBuf,
        /// Unix socket path; omitted serves a single stdio session
        #[arg(long)]
        socket: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Validate { topology } => cmd_validate(&topology, std::io::stdout()),
        Cmd::Sweep { config, out } => {
            let path = cmd_sweep(&config, &out)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Cmd::Simulate {
            config,
            days,
            seed,
            out,
        } => {
            for path in cmd_simulate(&config, days, seed, &out)? {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Cmd::Relay {
            config,
            src,
            dst,
            bits,
        } => cmd_relay(&config, &src, &dst, bits, std::io::stdout()),
        Cmd::KmsServe { config, socket } => cmd_kms_serve(&config, socket.as_deref()),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
