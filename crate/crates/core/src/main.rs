use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use halokeep::cli::{self, Context, ManifoldOptions};
use halokeep::halo::Branch;

#[derive(Parser)]
#[command(name = "halokeep", version, about = "Fuel-optimal stationkeeping for halo orbits with a safe-exit guarantee")]
struct Args {
    #[command(subcommand)]
    command: Command,
    /// Print progress to stderr.
    #[arg(long, global = true)]
    verbose: bool,
}

#[derive(clap::Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory; defaults to the scenario's [output] dir, then ./out.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Sign {
    Positive,
    Negative,
}

#[derive(Subcommand)]
enum Command {
    /// Correct the halo orbit and report its period and monodromy spectrum.
    GenOrbit(Common),
    /// Propagate the unstable manifold from every knot.
    Manifolds {
        #[command(flatten)]
        common: Common,
        /// Seed offset in nondimensional length.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Only one branch; both by default.
        #[arg(long, value_enum)]
        sign: Option<Sign>,
        /// Propagation time in orbit periods.
        #[arg(long)]
        tau: Option<f64>,
        /// Seed every n-th knot.
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Fly the stationkeeping mission.
    Simulate(Common),
    /// Classify uncontrolled exits from the states of a mission.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Mission log written by `simulate`; flown afresh if omitted.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Burn table and per-revolution digest of a `simulate` output directory.
    Report {
        /// Directory written by `simulate`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fly the scenario once per value of its [sweep] parameter.
    Sweep(Common),
}

fn run(args: Args) -> halokeep::Result<()> {
    let ctx = |c: Common| Context::new(&c.scenario, c.out, args.verbose);
    match args.command {
        Command::GenOrbit(c) => cli::gen_orbit(&ctx(c)?),
        Command::Manifolds {
            common,
            epsilon,
            sign,
            tau,
            stride,
        } => {
            let opts = ManifoldOptions {
                epsilon,
                branch: sign.map(|s| match s {
                    Sign::Positive => Branch::Positive,
                    Sign::Negative => Branch::Negative,
                }),
                tau_periods: tau,
                stride,
            };
            cli::manifolds(&ctx(common)?, opts)
        }
        Command::Simulate(c) => cli::simulate(&ctx(c)?).map(drop),
        Command::Verify { common, log } => cli::verify(&ctx(common)?, log.as_deref()).map(drop),
        Command::Report { out } => cli::report(&out).map(drop),
        Command::Sweep(c) => cli::sweep(&ctx(c)?).map(drop),
    }
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("halokeep: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
