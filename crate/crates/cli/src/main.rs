use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use infogeo_cli::commands::{self, Ctx, Flags, OrliczMode, Profile, DEFAULT_SEED};
use infogeo_cli::report::Report;
use infogeo_cli::verify;

#[derive(Parser)]
#[command(name = "infogeo", version, about = "Verification reports for parametrized measure models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Model spec (JSON).
    #[arg(long, global = true)]
    spec: Option<PathBuf>,
    /// Parameter point, comma separated.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    x: Option<Vec<f64>>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for report files; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "default")]
    tolerance_profile: Profile,
}

#[derive(Subcommand)]
enum Command {
    /// One-form, Fisher matrix and Amari-Chentsov tensor at `--x`.
    Tensors,
    /// L^k norms of the log-derivatives over the spec lattice.
    Integrability {
        #[arg(long)]
        k: u32,
    },
    /// Fisher-Neyman test for the spec statistic.
    Sufficiency,
    /// Tensor values before and after a sufficient statistic or congruent kernel.
    Invariance,
    /// Fisher information lost by the spec statistic at `--x`.
    Monotonicity,
    /// Information loss and its identity residual at `--x`.
    Infoloss,
    /// Kernel lift followed by the second projection.
    DecomposeKernel,
    /// Fit generated invariant fields against the canonical basis.
    ChentsovFit {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        order: u8,
    },
    /// Orlicz-space norms, tangent membership and similarity.
    Orlicz {
        #[arg(value_enum)]
        mode: OrliczMode,
    },
    /// Fisher-preconditioned descent from `--x`.
    Natgrad,
    /// Run every acceptance criterion.
    VerifyAll,
}

/// Errors from bad input exit 2; the rest are numerical verdicts and exit 1.
fn exit_code(err: &anyhow::Error) -> u8 {
    use infogeo::Error as E;
    match err.chain().find_map(|e| e.downcast_ref::<E>()) {
        Some(
            E::DivergentIntegral { .. }
            | E::NotSufficient { .. }
            | E::IllConditioned { .. }
            | E::NotInOrliczSpace { .. }
            | E::SingularMetric { .. }
            | E::LeftDomain { .. }
            | E::ZeroDenominator { .. }
            | E::ZeroMarginal { .. },
        ) => 1,
        _ => 2,
    }
}

fn verify_all(cli: &Cli) -> anyhow::Result<Report> {
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);
    let criteria = verify::run_all(seed);
    for c in &criteria {
        eprintln!("{}", c.summary_line());
    }
    let passed = criteria.iter().all(|c| c.passed);
    Report::new(
        "verify-all",
        json!({"seed": seed, "tolerance_profile": cli.tolerance_profile}),
        passed,
        json!({"criteria": criteria}),
    )
}

fn run(cli: &Cli) -> anyhow::Result<Report> {
    if let Command::VerifyAll = cli.command {
        return verify_all(cli);
    }
    let k = match cli.command {
        Command::Integrability { k } => Some(k),
        _ => None,
    };
    let ctx = Ctx::load(Flags {
        spec: cli.spec.clone(),
        x: cli.x.clone(),
        k,
        seed: cli.seed,
        out: cli.out.clone(),
        profile: cli.tolerance_profile,
    })?;
    match &cli.command {
        Command::Tensors => commands::tensors(&ctx),
        Command::Integrability { .. } => commands::integrability(&ctx),
        Command::Sufficiency => commands::sufficiency(&ctx),
        Command::Invariance => commands::invariance(&ctx),
        Command::Monotonicity => commands::monotonicity(&ctx),
        Command::Infoloss => commands::infoloss(&ctx),
        Command::DecomposeKernel => commands::decompose_kernel(&ctx),
        Command::ChentsovFit { order } => commands::chentsov_fit(&ctx, *order),
        Command::Orlicz { mode } => commands::orlicz(&ctx, *mode),
        Command::Natgrad => commands::natgrad(&ctx),
        Command::VerifyAll => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let report = match run(&cli) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(exit_code(&e));
        }
    };
    if let Err(e) = report.emit(cli.out.as_deref()) {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
