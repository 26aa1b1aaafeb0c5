//! Experiment reports and their deterministic CSV/JSON emission.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Ordered by severity, so the report status is the maximum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Inconclusive,
    Fail,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Fail => 1,
            Status::Inconclusive => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub name: String,
    pub status: Status,
    pub summary: BTreeMap<String, Value>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl ExperimentResult {
    pub fn new(name: &str, columns: &[&str]) -> ExperimentResult {
        ExperimentResult {
            name: name.to_string(),
            status: Status::Pass,
            summary: BTreeMap::new(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, v: impl Into<Value>) {
        self.summary.insert(key.to_string(), canonical(v.into()));
    }

    pub fn row(&mut self, cells: Vec<Value>) {
        debug_assert_eq!(cells.len(), self.columns.len());
        self.rows.push(cells.into_iter().map(canonical).collect());
    }

    pub fn worsen(&mut self, s: Status) {
        self.status = self.status.max(s);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub command: String,
    pub status: Status,
    pub experiments: Vec<ExperimentResult>,
    /// Only with `--timing`; absent by default so re-runs are byte-identical.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

impl ExperimentReport {
    pub fn new(command: &str, experiments: Vec<ExperimentResult>) -> ExperimentReport {
        let status = experiments.iter().map(|e| e.status).max().unwrap_or(Status::Pass);
        ExperimentReport { command: command.to_string(), status, experiments, wall_time_s: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

/// Canonical CSV columns for a command (flare's 3-of-4 mode has its own).
pub fn schema(command: &str, mode: Option<&str>) -> &'static [&'static str] {
    match (command, mode) {
        ("validate", _) => &["entity", "kind", "check", "holds"],
        ("analyze", _) => &["stratum", "edges", "class", "eigenvalue", "irreducible", "matrix"],
        ("stallings", _) => &["op", "item", "value"],
        ("electric", _) => &["input", "el", "oracle", "match"],
        ("flare", Some("3of4")) => &["input", "n", "base", "phi", "phi_inv", "psi", "psi_inv", "bound", "meeting", "passed"],
        ("flare", _) => &["input", "k", "fwd_el", "bwd_el", "fwd_Hr", "bwd_Hr"],
        ("pingpong", _) => &["item", "name", "value"],
        ("nielsen", _) => &["path", "period", "indivisible", "height"],
        _ => &["name", "value"],
    }
}

/// Rounds to 10 significant digits; idempotent.
pub fn round10(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.9e}").parse().unwrap_or(x)
}

pub fn num(x: f64) -> Value {
    serde_json::Number::from_f64(round10(x)).map(Value::Number).unwrap_or(Value::Null)
}

fn canonical(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => num(n.as_f64().unwrap_or(f64::NAN)),
        Value::Array(a) => Value::Array(a.into_iter().map(canonical).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, canonical(v))).collect()),
        other => other,
    }
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn emit_report(r: &ExperimentReport, format: Format) -> String {
    match format {
        Format::Json => {
            // Going through `Value` sorts every object's keys.
            let v = canonical(serde_json::to_value(r).expect("report serializes"));
            let mut s = serde_json::to_string_pretty(&v).expect("value serializes");
            s.push('\n');
            s
        }
        Format::Csv => emit_csv(r),
    }
}

/// Rows of all experiments under the command's header; experiments with a
/// different column set start a new header block after a blank line.
fn emit_csv(r: &ExperimentReport) -> String {
    let mut out = String::new();
    let mut current: Option<&[String]> = None;
    let mut writer: Option<csv::Writer<Vec<u8>>> = None;
    let flush = |w: Option<csv::Writer<Vec<u8>>>, out: &mut String| {
        if let Some(w) = w {
            let bytes = w.into_inner().expect("in-memory writer");
            if !out.is_empty() {
                out.push('\n');
            }
            out.push_str(&String::from_utf8(bytes).expect("utf8 csv"));
        }
    };
    for e in &r.experiments {
        if current != Some(e.columns.as_slice()) {
            flush(writer.take(), &mut out);
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(&e.columns).expect("in-memory write");
            writer = Some(w);
            current = Some(e.columns.as_slice());
        }
        let w = writer.as_mut().expect("writer open");
        for row in &e.rows {
            w.write_record(row.iter().map(cell)).expect("in-memory write");
        }
    }
    if current.is_none() {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(schema(&r.command, None)).expect("in-memory write");
        writer = Some(w);
    }
    flush(writer, &mut out);
    out
}

pub fn parse_report(text: &str) -> Result<ExperimentReport, serde_json::Error> {
    serde_json::from_str(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample() -> ExperimentReport {
        let mut e = ExperimentResult::new("flare-c", schema("flare", None));
        e.set("uniform_m", 2);
        e.set("factor", 3.0);
        e.set("ratio", 1.0 / 3.0);
        e.row(vec![json!("c"), json!(0), json!(1), json!(1), json!(1), json!(1)]);
        e.row(vec![json!("c"), json!(1), json!(3), json!(1), json!(2), json!(1)]);
        ExperimentReport::new("flare", vec![e])
    }

    #[test]
    fn empty_csv_is_header() {
        let r = ExperimentReport::new("flare", Vec::new());
        assert_eq!(emit_report(&r, Format::Csv), "input,k,fwd_el,bwd_el,fwd_Hr,bwd_Hr\n");
    }

    #[test]
    fn flare_csv_schema() {
        let text = emit_report(&sample(), Format::Csv);
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("input,k,fwd_el,bwd_el,fwd_Hr,bwd_Hr"));
        assert_eq!(lines.next(), Some("c,0,1,1,1,1"));
    }

    #[test]
    fn json_round_trip_and_rounding() {
        let r = sample();
        let text = emit_report(&r, Format::Json);
        assert!(text.contains("0.3333333333"), "{text}");
        let back = parse_report(&text).unwrap();
        assert_eq!(back, r);
        assert_eq!(emit_report(&back, Format::Json), text);
    }

    #[test]
    fn round10_is_idempotent() {
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        for x in [golden, 1e-13, 123456789012.0, -2.5] {
            assert_eq!(round10(round10(x)), round10(x));
        }
        assert_eq!(round10(golden), 1.618033989);
    }
}
