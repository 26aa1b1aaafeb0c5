//! Fixture access shared by the acceptance suite.

use std::path::PathBuf;

use fnouter_cli::report::ExperimentResult;
use fnouter_cli::{execute, parse_config, Command, Overrides};
use serde_json::Value;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../cli/fixtures").join(name)
}

pub fn fixture(name: &str) -> String {
    let p = fixture_path(name);
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("cannot read {}: {e}", p.display()))
}

/// The house config with its experiment list replaced.
pub fn house_with(experiments: Value) -> String {
    let mut v: Value = serde_json::from_str(&fixture("house.json")).expect("house fixture is JSON");
    v["experiments"] = experiments;
    v.to_string()
}

/// Runs a config holding a single experiment of `command`.
pub fn execute_one(text: &str, command: Command) -> ExperimentResult {
    let cfg = parse_config(text).expect("config parses");
    execute(&cfg, command, &Overrides::default()).expect("experiment runs").experiments.remove(0)
}
