//! Configuration, dispatch and report emission for the `fnouter` binary.

pub mod config;
pub mod execute;
pub mod report;

use std::time::Instant;

pub use config::{parse_config, Command, Config, ConfigError, FlareKind};
pub use execute::{execute, Overrides, RunError};
pub use report::{emit_report, parse_report, ExperimentReport, Format, Status};

/// Parses `text`, runs `command` and emits the report.
pub fn run(text: &str, command: Command, ov: &Overrides, format: Format, timing: bool) -> Result<(String, Status), RunError> {
    let start = Instant::now();
    let cfg = parse_config(text)?;
    let mut report = execute(&cfg, command, ov)?;
    if timing {
        report.wall_time_s = Some(start.elapsed().as_secs_f64());
    }
    Ok((emit_report(&report, format), report.status))
}
