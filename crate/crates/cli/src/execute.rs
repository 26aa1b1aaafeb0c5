//! Command dispatch: each experiment block becomes one `ExperimentResult`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;

use fnouter_core::electric::{
    bfs_electric_oracle, conjugacy_flaring_exponent, enumerate_classes, exclude_carried, three_of_four_test, word_flaring_exponent,
    ElectricContext, ElectricError, FlareMode, FlareOptions, FlareReport, OracleLimits,
};
use fnouter_core::graphs::{
    analyze_filtration, bcc_constant, check_rtt_conditions, find_nielsen_paths, illegal_turns, Protector, StratumClass,
};
use fnouter_core::laminations::{critical_constant, expgrowth_certificate, pingpong_search, PingPongCaps, PingPongSide};
use fnouter_core::subgroups::{
    check_malnormal, check_mutual_malnormality, fold_stallings, intersect_subgroups, intersection_at_base, meet_systems,
    nonattracting_subgraph, NielsenCaps, PathSystem, SubgroupGraph,
};
use fnouter_core::words::{CyclicWord, FreeWord, Letter};
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{Command, Config, ConfigError, Experiment, FlareKind, MapEntry, StallingsOp};
use crate::report::{num, schema, ExperimentReport, ExperimentResult, Status};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("experiment {experiment:?}: {detail}")]
    Precondition { experiment: String, detail: String },
}

/// Command-line overrides applied to every experiment of the command.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub factor: Option<f64>,
    pub cap: Option<usize>,
    pub mode: Option<FlareKind>,
}

const DEFAULT_EXPGROWTH_CAP: usize = 6;

fn pre<E: Display>(e: &Experiment) -> impl Fn(E) -> RunError + '_ {
    move |err| RunError::Precondition { experiment: e.name.clone(), detail: err.to_string() }
}

pub fn execute(cfg: &Config, command: Command, ov: &Overrides) -> Result<ExperimentReport, RunError> {
    let mut results = Vec::new();
    if command == Command::Validate {
        results.push(validate(cfg));
    }
    for e in cfg.experiments(command) {
        let r = match command {
            Command::Validate => continue,
            Command::Analyze => analyze(cfg, e, ov)?,
            Command::Stallings => stallings(cfg, e)?,
            Command::Electric => electric(cfg, e)?,
            Command::Flare => flare(cfg, e, ov)?,
            Command::Pingpong => pingpong(cfg, e, ov)?,
            Command::Nielsen => nielsen(cfg, e)?,
        };
        results.push(r);
    }
    Ok(ExperimentReport::new(command.name(), results))
}

fn validate(cfg: &Config) -> ExperimentResult {
    let mut r = ExperimentResult::new("config", schema("validate", None));
    for name in cfg.morphisms.keys() {
        r.row(vec![json!(name), json!("morphism"), json!("inverse_pair"), json!(true)]);
    }
    for name in cfg.maps.keys() {
        r.row(vec![json!(name), json!("map"), json!("filtration_invariant"), json!(true)]);
    }
    for (name, s) in &cfg.systems {
        r.row(vec![json!(name), json!("system"), json!("basis_aligned"), json!(s.is_basis_aligned())]);
    }
    for e in &cfg.raw.experiments {
        r.row(vec![json!(e.name), json!("experiment"), json!("references"), json!(true)]);
    }
    r.set("rank", cfg.rank());
    r.set("morphisms", cfg.morphisms.len());
    r.set("maps", cfg.maps.len());
    r.set("systems", cfg.systems.len());
    r.set("experiments", cfg.raw.experiments.len());
    r
}

fn map_entry<'a>(cfg: &'a Config, name: &Option<String>) -> &'a MapEntry {
    // References were resolved by `parse_config`.
    &cfg.maps[name.as_deref().expect("validated map reference")]
}

fn analyze(cfg: &Config, e: &Experiment, ov: &Overrides) -> Result<ExperimentResult, RunError> {
    let entry = map_entry(cfg, &e.map);
    let (f, filt) = (&entry.map, &entry.filt);
    let mut r = ExperimentResult::new(&e.name, schema("analyze", None));
    let strata = analyze_filtration(f, filt).map_err(pre(e))?;
    for s in &strata {
        let edges: Vec<String> = s.edges.iter().map(|&x| cfg.render_edge(entry, x)).collect();
        r.row(vec![
            json!(s.index + 1),
            json!(edges.join(" ")),
            json!(s.class.label()),
            s.eigenvalue().map(num).unwrap_or(Value::Null),
            json!(s.irreducible),
            json!(s.matrix),
        ]);
    }
    let st = entry.stratum;
    r.set("stratum", st + 1);
    let bcc = bcc_constant(f);
    r.set("bcc", bcc.value);
    r.set("bcc_stable", bcc.stable);
    let turns: Vec<String> = illegal_turns(f)
        .into_iter()
        .map(|t| format!("{{{},{}}}", cfg.render_path(entry, &[t.0]), cfg.render_path(entry, &[t.1])))
        .collect();
    r.set("illegal_turns", turns);
    if strata[st].class == StratumClass::Eg {
        if let Ok(c) = critical_constant(f, filt, st) {
            r.set("critical_constant", json!({"bcc": c.bcc, "lambda": c.lambda, "value": c.value, "working": c.working}));
        }
        let rtt = check_rtt_conditions(f, filt, st, e.max_len.unwrap_or(6));
        r.set(
            "rtt",
            json!({"legal_images": rtt.legal_images, "connecting_paths": rtt.connecting_paths, "directions": rtt.directions, "passed": rtt.passed()}),
        );
    }
    if !e.beta.is_empty() {
        let cap = ov.cap.or(e.cap).unwrap_or(DEFAULT_EXPGROWTH_CAP);
        let p = Protector::new(f);
        let mut certs = Vec::new();
        for b in &e.beta {
            let beta = cfg.parse_path(entry, b, &e.name)?;
            let g = expgrowth_certificate(&p, &beta, cap);
            if g.k.is_none() {
                r.worsen(Status::Inconclusive);
            }
            certs.push(json!({
                "beta": cfg.render_path(entry, &beta),
                "k": g.k,
                "cap": g.cap,
                "positions": g.positions,
                "lengths": g.lengths,
                "exact": g.exact,
            }));
        }
        r.set("expgrowth", certs);
    }
    Ok(r)
}

fn nielsen(cfg: &Config, e: &Experiment) -> Result<ExperimentResult, RunError> {
    let entry = map_entry(cfg, &e.map);
    let caps = NielsenCaps {
        max_len: e.max_len.unwrap_or(NielsenCaps::default().max_len),
        max_period: e.max_period.unwrap_or(NielsenCaps::default().max_period),
    };
    let mut r = ExperimentResult::new(&e.name, schema("nielsen", None));
    let paths = find_nielsen_paths(&entry.map, caps.max_len, caps.max_period);
    // Concatenations of indivisible paths are fixed too; rows list only the indivisible ones.
    for p in paths.iter().filter(|p| p.indivisible) {
        let h = entry.filt.height(&p.path.edges).map(|h| h + 1);
        r.row(vec![json!(cfg.render_path(entry, &p.path.edges)), json!(p.period), json!(p.indivisible), json!(h)]);
    }
    r.set("fixed_paths", paths.len());
    r.set("indivisible", paths.iter().filter(|p| p.indivisible).count());
    r.set("max_len", caps.max_len);
    r.set("max_period", caps.max_period);
    match nonattracting_subgraph(&entry.map, &entry.filt, entry.stratum, caps) {
        Ok(ps) => set_path_system(cfg, entry, &ps, &mut r),
        Err(err) => r.set("nonattracting", err.to_string()),
    }
    Ok(r)
}

fn z_names(cfg: &Config, entry: &MapEntry, ps: &PathSystem) -> Vec<String> {
    ps.z_edges.iter().map(|&x| cfg.render_edge(entry, x)).collect()
}

fn set_path_system(cfg: &Config, entry: &MapEntry, ps: &PathSystem, r: &mut ExperimentResult) {
    r.set("z_edges", z_names(cfg, entry, ps));
    match &ps.rho {
        Some((rho, period)) => {
            r.set("rho", cfg.render_path(entry, rho));
            r.set("rho_period", *period);
        }
        None => r.set("rho", Value::Null),
    }
}

fn render_gens(cfg: &Config, h: &SubgroupGraph) -> String {
    h.generators().iter().map(|g| cfg.basis.render(g.letters())).collect::<Vec<_>>().join(",")
}

fn words(cfg: &Config, ws: &[String], ctx: &str) -> Result<Vec<FreeWord>, RunError> {
    Ok(ws.iter().map(|w| cfg.word(w, ctx)).collect::<Result<_, _>>()?)
}

fn stallings(cfg: &Config, e: &Experiment) -> Result<ExperimentResult, RunError> {
    let mut r = ExperimentResult::new(&e.name, schema("stallings", None));
    let rank = cfg.rank();
    let op = e.op.expect("validated op");
    match op {
        StallingsOp::Fold => {
            let h = fold_stallings(rank, &words(cfg, &e.generators, &e.name)?).map_err(pre(e))?;
            r.set("vertices", h.vertex_count());
            r.set("edges", h.edges().len());
            r.set("rank", h.rank());
            r.set("basis", render_gens(cfg, &h));
            for w in words(cfg, &e.inputs, &e.name)? {
                r.row(vec![json!("contains"), json!(cfg.basis.render(w.letters())), json!(h.contains_word(&w))]);
            }
        }
        StallingsOp::Intersect => {
            let h = fold_stallings(rank, &words(cfg, &e.generators, &e.name)?).map_err(pre(e))?;
            let k = fold_stallings(rank, &words(cfg, &e.other_generators, &e.name)?).map_err(pre(e))?;
            let base = intersection_at_base(&h, &k);
            r.set("at_base", render_gens(cfg, &base));
            r.set("at_base_rank", base.rank());
            let comps = intersect_subgroups(&h, &k);
            r.set("components", comps.len());
            for (i, c) in comps.components().iter().enumerate() {
                r.row(vec![json!("component"), json!(i + 1), json!(render_gens(cfg, c))]);
            }
        }
        StallingsOp::Malnormal => {
            let s1 = &cfg.systems[e.system.as_deref().expect("validated system")];
            let verdict = match &e.other {
                Some(o) => check_mutual_malnormality(s1.system(), cfg.systems[o].system(), None),
                None => check_malnormal(s1.system()),
            };
            r.set("malnormal", verdict.malnormal);
            let w = verdict.witness.as_ref().map(|w| {
                json!({
                    "left": w.left + 1,
                    "right": w.right + 1,
                    "conjugator": cfg.basis.render(w.conjugator.letters()),
                    "element": cfg.basis.render(w.element.letters()),
                })
            });
            r.set("witness", w.unwrap_or(Value::Null));
            r.row(vec![json!("malnormal"), json!(e.system), json!(verdict.malnormal)]);
            if let Some(expect) = e.expect {
                r.set("expected", expect);
                if expect != verdict.malnormal {
                    r.worsen(Status::Fail);
                }
            }
        }
        StallingsOp::Meet => {
            let s1 = &cfg.systems[e.system.as_deref().expect("validated system")];
            let s2 = &cfg.systems[e.other.as_deref().expect("validated system")];
            let m = meet_systems(s1, s2);
            r.set("components", m.system().len());
            r.set("basis_aligned", m.is_basis_aligned());
            for (i, c) in m.system().components().iter().enumerate() {
                r.row(vec![json!("component"), json!(i + 1), json!(render_gens(cfg, c))]);
            }
        }
    }
    Ok(r)
}

fn context(cfg: &Config, e: &Experiment) -> ElectricContext {
    ElectricContext::new(cfg.rank(), &cfg.systems[e.system.as_deref().expect("validated system")])
}

fn electric(cfg: &Config, e: &Experiment) -> Result<ExperimentResult, RunError> {
    let ctx = context(cfg, e);
    let mut r = ExperimentResult::new(&e.name, schema("electric", None));
    let limits = OracleLimits { max_word_len: cfg.raw.caps.radius, ..OracleLimits::default() };
    let use_oracle = e.oracle.unwrap_or(true) && !e.cyclic;
    let mut mismatches = Vec::new();
    let mut capped = Vec::new();
    for w in words(cfg, &e.inputs, &e.name)? {
        let shown = cfg.basis.render(w.letters());
        let el = if e.cyclic {
            Some(ctx.electric_length_conjugacy(&CyclicWord::new(&w)).map_err(pre(e))?)
        } else {
            match ctx.electric_length(w.letters()) {
                Ok(v) => Some(v),
                Err(ElectricError::NotAligned) => None,
                Err(err) => return Err(pre(e)(err)),
            }
        };
        let oracle = if use_oracle {
            match bfs_electric_oracle(&ctx, &w, limits) {
                Ok(v) => Some(v),
                Err(ElectricError::CapExceeded { .. }) => {
                    capped.push(shown.clone());
                    None
                }
                Err(err) => return Err(pre(e)(err)),
            }
        } else {
            None
        };
        let matched = match (el, oracle) {
            (Some(a), Some(b)) => Some(a == b),
            _ => None,
        };
        if matched == Some(false) {
            mismatches.push(shown.clone());
        }
        r.row(vec![json!(shown), json!(el), json!(oracle), json!(matched)]);
    }
    r.set("aligned", ctx.is_aligned());
    r.set("cyclic", e.cyclic);
    r.set("oracle_radius", limits.max_word_len);
    if !capped.is_empty() {
        r.worsen(Status::Inconclusive);
    }
    if !mismatches.is_empty() {
        r.worsen(Status::Fail);
    }
    r.set("cap_exceeded", capped);
    r.set("mismatches", mismatches);
    Ok(r)
}

/// Explicit inputs first, then the enumerated sample; duplicates dropped.
/// Returns (kept, dropped because carried by the path system).
fn flare_sample(
    cfg: &Config,
    e: &Experiment,
    ctx: &ElectricContext,
    r: &mut ExperimentResult,
) -> Result<(Vec<CyclicWord>, usize), RunError> {
    let mut seen = BTreeSet::new();
    let mut sample = Vec::new();
    for w in words(cfg, &e.inputs, &e.name)? {
        let a = CyclicWord::new(&w);
        if seen.insert(a.clone()) {
            sample.push(a);
        }
    }
    if let Some(s) = e.sample {
        r.set("sample", json!({"max_nonfactor": s.max_nonfactor, "max_block": s.max_block}));
        for a in enumerate_classes(ctx, s.max_nonfactor, s.max_block).map_err(pre(e))? {
            if !ctx.carries(&a) && seen.insert(a.clone()) {
                sample.push(a);
            }
        }
    }
    let mut dropped = 0;
    let mut systems = Vec::new();
    for x in &e.exclude {
        let entry = &cfg.maps[x];
        let ps = nonattracting_subgraph(&entry.map, &entry.filt, entry.stratum, NielsenCaps::default()).map_err(pre(e))?;
        systems.push(json!({"map": x, "z_edges": z_names(cfg, entry, &ps), "rho": ps.rho.as_ref().map(|(p, n)| json!([cfg.render_path(entry, p), n]))}));
        let (kept, carried) = exclude_carried(sample, &ps);
        dropped += carried.len();
        sample = kept;
    }
    if !systems.is_empty() {
        r.set("path_systems", systems);
    }
    Ok((sample, dropped))
}

fn trajectory_rows(cfg: &Config, rep: &FlareReport, input: &[Letter], r: &mut ExperimentResult) {
    let shown = cfg.basis.render(input);
    for s in &rep.trajectory {
        r.row(vec![json!(shown), json!(s.k), json!(s.fwd_el), json!(s.bwd_el), json!(s.fwd_hr), json!(s.bwd_hr)]);
    }
}

/// `[M, count]` pairs in increasing `M`.
fn histogram(exps: impl Iterator<Item = usize>) -> Vec<[usize; 2]> {
    let mut h = BTreeMap::new();
    for m in exps {
        *h.entry(m).or_insert(0usize) += 1;
    }
    h.into_iter().map(|(m, c)| [m, c]).collect()
}

fn flare(cfg: &Config, e: &Experiment, ov: &Overrides) -> Result<ExperimentResult, RunError> {
    let kind = ov.mode.or(e.mode).unwrap_or(FlareKind::Conjugacy);
    let opts = FlareOptions {
        cap: ov.cap.or(e.cap).unwrap_or(cfg.raw.caps.depth),
        factor: ov.factor.or(e.factor).unwrap_or(3.0),
        strict: e.strict.unwrap_or(true),
        full_trajectory: false,
    };
    let ctx = context(cfg, e);
    let phi = &cfg.morphisms[e.morphism.as_deref().expect("validated morphism")];
    let mode_name = match kind {
        FlareKind::Conjugacy => "conjugacy",
        FlareKind::Strict => "strict",
        FlareKind::ThreeOfFour => "3of4",
    };
    let mut r = ExperimentResult::new(&e.name, schema("flare", Some(mode_name)));
    r.set("mode", mode_name);
    r.set("factor", opts.factor);
    r.set("cap", opts.cap);
    r.set("strict_inequality", opts.strict);
    let (sample, dropped) = flare_sample(cfg, e, &ctx, &mut r)?;
    r.set("inputs", sample.len());
    r.set("excluded", dropped);

    // Per-input minimal exponents for the flaring modes.
    let run_flare = |strict_words: bool| -> Result<Vec<(Vec<Letter>, FlareReport)>, RunError> {
        sample
            .iter()
            .map(|a| {
                let rep = if strict_words {
                    word_flaring_exponent(&ctx, phi, &a.as_word(), &opts)
                } else {
                    conjugacy_flaring_exponent(&ctx, phi, a, &opts)
                };
                rep.map(|rep| (a.letters().to_vec(), rep)).map_err(pre(e))
            })
            .collect()
    };
    let summarize = |reps: &[(Vec<Letter>, FlareReport)], r: &mut ExperimentResult| -> Option<usize> {
        let failures: Vec<String> = reps.iter().filter(|(_, x)| x.minimal_exponent.is_none()).map(|(w, _)| cfg.basis.render(w)).collect();
        let uniform = failures.is_empty().then(|| reps.iter().filter_map(|(_, x)| x.minimal_exponent).max().unwrap_or(0));
        r.set("minimal_exponents", histogram(reps.iter().filter_map(|(_, x)| x.minimal_exponent)));
        r.set("uniform_m", json!(uniform));
        r.set("cap_reached", failures);
        uniform
    };

    match kind {
        FlareKind::Conjugacy | FlareKind::Strict => {
            let reps = run_flare(kind == FlareKind::Strict)?;
            for (w, rep) in &reps {
                trajectory_rows(cfg, rep, w, &mut r);
            }
            if summarize(&reps, &mut r).is_none() {
                r.worsen(Status::Inconclusive);
            }
        }
        FlareKind::ThreeOfFour => {
            let psi = &cfg.morphisms[e.psi.as_deref().expect("validated psi")];
            let n = match e.n {
                Some(n) => {
                    r.set("n_source", "configured");
                    Some(n)
                }
                None => {
                    r.set("n_source", "uniform");
                    let reps = run_flare(e.words)?;
                    summarize(&reps, &mut r)
                }
            };
            let Some(n) = n else {
                r.worsen(Status::Inconclusive);
                return Ok(r);
            };
            r.set("n", n);
            let mode = if e.words { FlareMode::Word } else { FlareMode::Conjugacy };
            let mut counterexamples = Vec::new();
            for a in &sample {
                let t = three_of_four_test(&ctx, phi, psi, &a.as_word(), n, mode).map_err(pre(e))?;
                let shown = cfg.basis.render(a.letters());
                if !t.passed {
                    counterexamples.push(shown.clone());
                }
                let mut row = vec![json!(shown), json!(t.n), json!(t.base)];
                row.extend(t.values.iter().map(|v| json!(v)));
                row.extend([num(t.bound), json!(t.meeting), json!(t.passed)]);
                r.row(row);
            }
            r.set("passed", sample.len() - counterexamples.len());
            if !counterexamples.is_empty() {
                r.worsen(Status::Fail);
            }
            r.set("counterexamples", counterexamples);
        }
    }
    Ok(r)
}

fn pingpong(cfg: &Config, e: &Experiment, ov: &Overrides) -> Result<ExperimentResult, RunError> {
    let sides: Vec<PingPongSide> = e
        .sides
        .iter()
        .map(|name| {
            let m = &cfg.maps[name];
            PingPongSide { name: name.clone(), map: m.map.clone(), filt: m.filt.clone(), stratum: m.stratum }
        })
        .collect();
    let defaults = PingPongCaps::default();
    let caps = PingPongCaps {
        exponent: ov.cap.or(e.cap).unwrap_or(defaults.exponent),
        length: e.max_len.unwrap_or(cfg.raw.caps.length),
        max_m: cfg.raw.caps.depth,
        ..defaults
    };
    let mut r = ExperimentResult::new(&e.name, schema("pingpong", None));
    r.set("caps", json!({"exponent": caps.exponent, "length": caps.length, "leaf_len": caps.leaf_len, "max_m": caps.max_m}));
    let render = |side: &str, p: &[Letter]| cfg.render_path(&cfg.maps[side], p);
    match pingpong_search([&sides[0], &sides[1]], [&sides[2], &sides[3]], caps) {
        Ok(cert) => {
            for (key, v) in [
                ("C", cert.c),
                ("p", cert.p),
                ("q", cert.q),
                ("k", cert.k),
                ("m_bound", cert.m_bound),
                ("M", cert.m),
                ("m_direct", cert.m_direct),
            ] {
                r.set(key, v);
                r.row(vec![json!("constant"), json!(key), json!(v)]);
            }
            for (name, path) in &cert.neighborhoods {
                r.row(vec![json!("neighborhood"), json!(name), json!(render(name, path))]);
            }
            for s in &cert.stages {
                let detail = json!({
                    "alpha": render(&s.target, &s.alpha),
                    "alpha_padded": render(&s.target, &s.alpha_padded),
                    "attraction_t": s.attraction_t,
                    "p": s.p,
                    "window": [s.window.0, s.window.1],
                    "chain": s.chain,
                });
                r.row(vec![json!("stage"), json!(format!("{}->{}", s.source, s.target)), json!(detail.to_string())]);
            }
            for c in &cert.checks {
                r.row(vec![json!("check"), json!(c.description), json!(c.holds)]);
                if !c.holds {
                    r.worsen(Status::Fail);
                }
            }
            r.set("certified", true);
        }
        Err(f) => {
            r.set("certified", false);
            r.set("failed_step", f.step);
            r.set("failed_stage", f.stage.clone());
            r.set("detail", f.detail.clone());
            r.row(vec![json!("failure"), json!(f.stage), json!(f.to_string())]);
            r.worsen(Status::Inconclusive);
        }
    }
    Ok(r)
}
