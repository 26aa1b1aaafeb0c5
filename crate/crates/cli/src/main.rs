use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use fnouter_cli::{run, Command, FlareKind, Format, Overrides};

#[derive(Clone, Copy, ValueEnum)]
enum Cmd {
    Validate,
    Analyze,
    Stallings,
    Electric,
    Flare,
    Pingpong,
    Nielsen,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fmt {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Conjugacy,
    Strict,
    #[value(name = "3of4")]
    ThreeOfFour,
}

/// Free group outer automorphism experiments.
///
/// Exit codes: 0 all pass, 1 some experiment failed, 2 inconclusive (a cap
/// was reached), 3 input error.
#[derive(Parser)]
#[command(name = "fnouter", version)]
struct Cli {
    #[arg(value_enum)]
    command: Cmd,
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    format: Fmt,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flaring factor (flare).
    #[arg(long)]
    factor: Option<f64>,
    /// Exponent cap (flare, pingpong, analyze certificates).
    #[arg(long)]
    cap: Option<usize>,
    /// Flare mode.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Include wall-clock time in the report.
    #[arg(long)]
    timing: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = match cli.command {
        Cmd::Validate => Command::Validate,
        Cmd::Analyze => Command::Analyze,
        Cmd::Stallings => Command::Stallings,
        Cmd::Electric => Command::Electric,
        Cmd::Flare => Command::Flare,
        Cmd::Pingpong => Command::Pingpong,
        Cmd::Nielsen => Command::Nielsen,
    };
    let format = match cli.format {
        Fmt::Csv => Format::Csv,
        Fmt::Json => Format::Json,
    };
    let ov = Overrides {
        factor: cli.factor,
        cap: cli.cap,
        mode: cli.mode.map(|m| match m {
            Mode::Conjugacy => FlareKind::Conjugacy,
            Mode::Strict => FlareKind::Strict,
            Mode::ThreeOfFour => FlareKind::ThreeOfFour,
        }),
    };
    let text = match std::fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", cli.config.display());
            return ExitCode::from(3);
        }
    };
    let (out, status) = match run(&text, command, &ov, format, cli.timing) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    };
    match &cli.out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, out) {
                eprintln!("error: cannot write {}: {e}", path.display());
                return ExitCode::from(3);
            }
        }
        None => {
            use std::io::Write;
            let mut stdout = std::io::stdout().lock();
            // A closed pipe (e.g. `| head`) is not an error worth reporting.
            if let Err(e) = stdout.write_all(out.as_bytes()).and_then(|_| stdout.flush()) {
                if e.kind() != std::io::ErrorKind::BrokenPipe {
                    eprintln!("error: cannot write report: {e}");
                    return ExitCode::from(3);
                }
            }
        }
    }
    ExitCode::from(status.exit_code() as u8)
}
