use std::path::PathBuf;
use std::process::Command as Proc;

use fnouter_cli::config::ConfigError;
use fnouter_cli::{emit_report, execute, parse_config, parse_report, run, Command, Format, Overrides, RunError, Status};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn house() -> String {
    std::fs::read_to_string(fixture("house.json")).unwrap()
}

fn fnouter(args: &[&str]) -> (i32, String, String) {
    let out = Proc::new(env!("CARGO_BIN_EXE_fnouter")).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8(out.stdout).unwrap(), String::from_utf8(out.stderr).unwrap())
}

#[test]
fn fixtures_parse_and_round_trip() {
    for name in ["minimal.json", "house.json"] {
        let text = std::fs::read_to_string(fixture(name)).unwrap();
        let cfg = parse_config(&text).unwrap();
        for phi in cfg.morphisms.values() {
            assert!(phi.verify_inverse_pair().unwrap());
        }
        let again = parse_config(&cfg.to_json()).unwrap();
        assert_eq!(again.raw, cfg.raw, "{name}");
        assert_eq!(again.to_json(), cfg.to_json());
    }
}

#[test]
fn mutated_inverse_names_generator() {
    let text = house().replace(r#""ADc""#, r#""ADC""#);
    match parse_config(&text) {
        Err(ConfigError::Inverse { morphism, generator, .. }) => {
            assert_eq!(morphism, "phi");
            assert_eq!(generator, 'd');
        }
        other => panic!("expected an inverse failure, got {other:?}"),
    }
}

#[test]
fn unresolved_name_is_input_error() {
    let text = house().replace(r#""psi": "psi""#, r#""psi": "chi""#);
    let err = parse_config(&text).unwrap_err();
    assert!(matches!(&err, ConfigError::Unresolved { name, .. } if name == "chi"), "{err}");
}

#[test]
fn analyze_house_golden_ratio() {
    let cfg = parse_config(&house()).unwrap();
    let r = execute(&cfg, Command::Analyze, &Overrides::default()).unwrap();
    let phi = &r.experiments[0];
    let top = &phi.rows[2];
    assert_eq!(top[2], "EG");
    let lambda = top[3].as_f64().unwrap();
    assert!((lambda - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-9);
    assert_eq!(top[5], serde_json::json!([[1, 1], [1, 0]]));
    assert_eq!(phi.summary["bcc"], 2);
    // β = c never certifies; cadac does at k = 5.
    let certs = phi.summary["expgrowth"].as_array().unwrap();
    assert!(certs[0]["k"].is_null());
    assert_eq!(certs[1]["k"], 5);
    assert_eq!(phi.status, Status::Inconclusive);
}

#[test]
fn flare_c_minimal_exponent_two() {
    let cfg = parse_config(&house()).unwrap();
    let r = execute(&cfg, Command::Flare, &Overrides::default()).unwrap();
    let e = r.experiments.iter().find(|e| e.name == "flare-c").unwrap();
    assert_eq!(e.summary["uniform_m"], 2);
    let row = e.rows.iter().find(|row| row[0] == "c" && row[1] == 2).unwrap();
    assert_eq!(row[2], 5);
    assert_eq!(e.columns, ["input", "k", "fwd_el", "bwd_el", "fwd_Hr", "bwd_Hr"]);
}

#[test]
fn stallings_experiments() {
    let cfg = parse_config(&house()).unwrap();
    let r = execute(&cfg, Command::Stallings, &Overrides::default()).unwrap();
    assert_eq!(r.status, Status::Pass);
    let by = |n: &str| r.experiments.iter().find(|e| e.name == n).unwrap();
    assert_eq!(by("malnormal-a2").summary["witness"]["conjugator"], "a");
    assert_eq!(by("meet").rows, vec![vec![serde_json::json!("component"), serde_json::json!(1), serde_json::json!("b")]]);
}

#[test]
fn electric_matches_oracle() {
    let cfg = parse_config(&house()).unwrap();
    let r = execute(&cfg, Command::Electric, &Overrides::default()).unwrap();
    assert_eq!(r.status, Status::Pass);
    let e = &r.experiments[0];
    assert_eq!(e.rows[0], vec![serde_json::json!("aaaaab"), serde_json::json!(1), serde_json::json!(1), serde_json::json!(true)]);
}

#[test]
fn json_report_round_trips() {
    let cfg = parse_config(&house()).unwrap();
    for c in [Command::Validate, Command::Analyze, Command::Stallings, Command::Electric, Command::Flare, Command::Nielsen] {
        let r = execute(&cfg, c, &Overrides::default()).unwrap();
        let text = emit_report(&r, Format::Json);
        assert_eq!(parse_report(&text).unwrap(), r, "{}", c.name());
    }
}

#[test]
fn overrides_apply() {
    let ov = Overrides { factor: Some(1.0), ..Overrides::default() };
    let (text, _) = run(&house(), Command::Flare, &ov, Format::Json, false).unwrap();
    let r = parse_report(&text).unwrap();
    let e = r.experiments.iter().find(|e| e.name == "flare-c").unwrap();
    assert_eq!(e.summary["factor"], 1.0);
    assert_eq!(e.summary["uniform_m"], 1);
}

#[test]
fn carried_input_is_precondition_error() {
    let text = house().replace(r#""inputs": ["c", "d"]"#, r#""inputs": ["abA"]"#);
    let err = run(&text, Command::Flare, &Overrides::default(), Format::Json, false).unwrap_err();
    assert!(matches!(&err, RunError::Precondition { experiment, .. } if experiment == "flare-c"), "{err}");
}

#[test]
fn binary_exit_codes() {
    let house = fixture("house.json");
    let house = house.to_str().unwrap();
    let (code, out, _) = fnouter(&["validate", "--config", house, "--format", "csv"]);
    assert_eq!(code, 0);
    assert!(out.starts_with("entity,kind,check,holds\n"));
    // The β = c certificate hits its cap.
    assert_eq!(fnouter(&["analyze", "--config", house]).0, 2);
    let (code, out, _) = fnouter(&["flare", "--config", house, "--format", "csv", "--mode", "conjugacy", "--factor", "3", "--cap", "20"]);
    assert_eq!(code, 0);
    assert!(out.starts_with("input,k,fwd_el,bwd_el,fwd_Hr,bwd_Hr\n"));
    let (code, _, err) = fnouter(&["validate", "--config", "/nonexistent/config.json"]);
    assert_eq!(code, 3);
    assert!(err.contains("cannot read"));

    let dir = std::env::temp_dir().join(format!("fnouter-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let bad = dir.join("bad.json");
    std::fs::write(&bad, "{\"rank\": 2,\n \"morphisms\": {\n").unwrap();
    let (code, _, err) = fnouter(&["validate", "--config", bad.to_str().unwrap()]);
    assert_eq!(code, 3);
    assert!(err.contains("line 3"), "{err}");
    let out_file = dir.join("report.json");
    let (code, out, _) = fnouter(&["electric", "--config", house, "--out", out_file.to_str().unwrap()]);
    assert_eq!((code, out.as_str()), (0, ""));
    assert!(parse_report(&std::fs::read_to_string(&out_file).unwrap()).is_ok());
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn minimal_config_empty_reports() {
    let text = std::fs::read_to_string(fixture("minimal.json")).unwrap();
    let (csv, status) = run(&text, Command::Flare, &Overrides::default(), Format::Csv, false).unwrap();
    assert_eq!(csv, "input,k,fwd_el,bwd_el,fwd_Hr,bwd_Hr\n");
    assert_eq!(status, Status::Pass);
}

#[test]
fn timing_only_on_request() {
    let (plain, _) = run(&house(), Command::Stallings, &Overrides::default(), Format::Json, false).unwrap();
    assert!(!plain.contains("wall_time_s"));
    let (timed, _) = run(&house(), Command::Stallings, &Overrides::default(), Format::Json, true).unwrap();
    assert!(timed.contains("wall_time_s"));
}
