use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dhlab_cli::config::{self, CACHE_ENV};
use dhlab_cli::{run, write_outputs, Command, Overrides, EXIT_VALIDATION};

#[derive(Debug, Parser)]
#[command(name = "dhlab", version, about = "Lyapunov exponent of [[1, eps], [eps Z, Z]] products near eps = 0")]
struct Cli {
    /// Print the CSV column layout of every command and exit.
    #[arg(long)]
    schema: bool,
    #[command(subcommand)]
    command: Option<Cmd>,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Check the law of Z against the regime assumptions.
    Validate(Args),
    /// Solve M(alpha) = 1 and locate the root gap delta.
    Alpha(Args),
    /// Monte Carlo estimates of L(eps) by three methods.
    Lyapunov(Args),
    /// Fixed points nu_0, omega_0 and nu_eps as grids.
    FixedPoint(Args),
    /// Full pipeline with pass/fail checks (exit 4 on a failed check).
    DhVerify(Args),
    /// Full pipeline, report only.
    Sweep(Args),
}

#[derive(Debug, clap::Args)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; without it the envelope goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, help = format!("Cache root (overrides ${CACHE_ENV})"))]
    cache: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated eps values.
    #[arg(long, allow_hyphen_values = true)]
    eps: Option<String>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    grid: Option<usize>,
    /// Monte Carlo steps per eps after burn-in.
    #[arg(long)]
    steps: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.schema {
        print!("{}", dhlab_cli::output::SCHEMA);
        return ExitCode::SUCCESS;
    }
    let Some(cmd) = cli.command else {
        eprintln!("dhlab: no command given (see --help)");
        return ExitCode::from(EXIT_VALIDATION as u8);
    };
    let (kind, args) = match cmd {
        Cmd::Validate(a) => (Command::Validate, a),
        Cmd::Alpha(a) => (Command::Alpha, a),
        Cmd::Lyapunov(a) => (Command::Lyapunov, a),
        Cmd::FixedPoint(a) => (Command::FixedPoint, a),
        Cmd::DhVerify(a) => (Command::DhVerify, a),
        Cmd::Sweep(a) => (Command::Sweep, a),
    };
    match execute(kind, args) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("dhlab: [{}] {e}", e.code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(kind: Command, a: Args) -> Result<i32, dhlab_cli::CliError> {
    let eps = a.eps.as_deref().map(config::parse_eps_list).transpose()?;
    let ov = Overrides {
        out: a.out,
        cache: a.cache,
        seed: a.seed,
        eps,
        beta: a.beta,
        grid: a.grid,
        steps: a.steps,
    };
    let res = config::load(&a.config, &ov)?;
    let outcome = run(kind, &res)?;
    for w in &outcome.envelope.warnings {
        eprintln!("warning: {w}");
    }
    match &res.config.out {
        Some(dir) => {
            for p in write_outputs(dir, &outcome.envelope, &outcome.tables)? {
                eprintln!("wrote {}", p.display());
            }
        }
        None => {
            use std::io::Write;
            // a closed pipe on stdout is not an error of the run
            let _ = writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(&outcome.envelope)?);
        }
    }
    Ok(outcome.exit_code)
}
