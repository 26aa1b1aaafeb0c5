//! JSON configuration: named morphisms, graph maps, subgroup systems and
//! experiment blocks. Everything is resolved and checked at parse time.

use std::collections::BTreeMap;

use fnouter_core::graphs::{Filtration, GraphError, GraphMap, GraphMapSpec};
use fnouter_core::subgroups::{FreeFactorSystem, SubgroupSystem};
use fnouter_core::words::{Basis, FreeWord, Letter, Morphism, WordError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("{context}: {source}")]
    Word { context: String, source: WordError },
    #[error("unresolved {kind} {name:?} (referenced by {by})")]
    Unresolved { kind: &'static str, name: String, by: String },
    #[error("morphism {morphism:?}: inverse check fails on generator {generator} ({composition} sends it to {image:?})")]
    Inverse { morphism: String, generator: char, composition: String, image: String },
    #[error("map {map:?}: {detail}")]
    Map { map: String, detail: String },
    #[error("experiment {experiment:?}: {detail}")]
    Experiment { experiment: String, detail: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Caps {
    /// Iteration depth.
    pub depth: usize,
    /// Word/path length.
    pub length: usize,
    /// BFS oracle radius (longest word it accepts).
    pub radius: usize,
}

impl Default for Caps {
    fn default() -> Self {
        Caps { depth: 20, length: 10, radius: 12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawMorphism {
    pub images: Vec<String>,
    pub inverse: Vec<String>,
}

/// A graph map: either the rose map of a named morphism (optionally its
/// inverse) or an explicit graph. Strata list 1-based edge ids; `realizes`
/// and `stratum` are 1-based stratum indices.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawMap {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub morphism: Option<String>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub inverse: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<GraphMapSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strata: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realizes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stratum: Option<usize>,
}

/// `alphabets: ["ab", "c"]` for basis-aligned factors, or arbitrary
/// generator lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSystem {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alphabets: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generators: Option<Vec<Vec<String>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Validate,
    Analyze,
    Stallings,
    Electric,
    Flare,
    Pingpong,
    Nielsen,
}

impl Command {
    pub const ALL: [Command; 7] =
        [Command::Validate, Command::Analyze, Command::Stallings, Command::Electric, Command::Flare, Command::Pingpong, Command::Nielsen];

    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Analyze => "analyze",
            Command::Stallings => "stallings",
            Command::Electric => "electric",
            Command::Flare => "flare",
            Command::Pingpong => "pingpong",
            Command::Nielsen => "nielsen",
        }
    }

    pub fn parse(s: &str) -> Option<Command> {
        Command::ALL.into_iter().find(|c| c.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StallingsOp {
    Fold,
    Intersect,
    Malnormal,
    Meet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlareKind {
    #[serde(rename = "conjugacy")]
    Conjugacy,
    #[serde(rename = "strict")]
    Strict,
    #[serde(rename = "3of4")]
    ThreeOfFour,
}

impl FlareKind {
    pub fn parse(s: &str) -> Option<FlareKind> {
        match s {
            "conjugacy" => Some(FlareKind::Conjugacy),
            "strict" => Some(FlareKind::Strict),
            "3of4" => Some(FlareKind::ThreeOfFour),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSpec {
    pub max_nonfactor: usize,
    #[serde(default = "one")]
    pub max_block: usize,
}

fn one() -> usize {
    1
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// One experiment block. Which fields matter depends on `command`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub name: String,
    pub command: Command,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub morphism: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub other: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub op: Option<StallingsOp>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub generators: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub other_generators: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<SampleSpec>,
    /// Drop sample classes carried by the nonattracting path systems of these maps.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exclude: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<FlareKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strict: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// 3-of-4 on words (`> 2|w|_el`) instead of conjugacy classes.
    #[serde(default, skip_serializing_if = "is_false")]
    pub words: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    pub cyclic: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<bool>,
    /// Ping-pong sides: φ, φ⁻¹, ψ, ψ⁻¹ map names.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sides: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub beta: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_period: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    #[serde(default)]
    pub caps: Caps,
    #[serde(default)]
    pub morphisms: BTreeMap<String, RawMorphism>,
    #[serde(default)]
    pub maps: BTreeMap<String, RawMap>,
    #[serde(default)]
    pub systems: BTreeMap<String, RawSystem>,
    #[serde(default)]
    pub experiments: Vec<Experiment>,
}

#[derive(Debug, Clone)]
pub struct MapEntry {
    pub map: GraphMap,
    pub filt: Filtration,
    /// 0-based default stratum (the top one unless configured).
    pub stratum: usize,
    /// Edges named by basis letters (rose map of a morphism).
    pub named: bool,
}

#[derive(Debug, Clone)]
pub struct Config {
    pub raw: RawConfig,
    pub basis: Basis,
    pub morphisms: BTreeMap<String, Morphism>,
    pub maps: BTreeMap<String, MapEntry>,
    pub systems: BTreeMap<String, FreeFactorSystem>,
}

impl Config {
    pub fn rank(&self) -> usize {
        self.basis.rank()
    }

    pub fn word(&self, text: &str, context: &str) -> Result<FreeWord, ConfigError> {
        self.basis.parse(text).map_err(|source| ConfigError::Word { context: context.to_string(), source })
    }

    /// Renders a path of `entry`'s graph: basis letters for roses of
    /// morphisms, signed 1-based edge ids otherwise.
    pub fn render_path(&self, entry: &MapEntry, letters: &[Letter]) -> String {
        if entry.named {
            return self.basis.render(letters);
        }
        letters.iter().map(|l| fnouter_core::graphs::letter_to_signed_id(*l).to_string()).collect::<Vec<_>>().join(" ")
    }

    pub fn parse_path(&self, entry: &MapEntry, text: &str, context: &str) -> Result<Vec<Letter>, ConfigError> {
        if entry.named {
            return Ok(self.word(text, context)?.into_letters());
        }
        let n = entry.map.graph().edge_count();
        text.split_whitespace()
            .map(|t| {
                let id: i64 = t.parse().map_err(|_| ConfigError::Invalid(format!("{context}: bad edge id {t:?}")))?;
                fnouter_core::graphs::letter_from_signed_id(id, n).map_err(|e| ConfigError::Invalid(format!("{context}: {e}")))
            })
            .collect()
    }

    pub fn render_edge(&self, entry: &MapEntry, e: usize) -> String {
        self.render_path(entry, &[Letter::new(e, false)])
    }

    pub fn experiments(&self, command: Command) -> impl Iterator<Item = &Experiment> {
        self.raw.experiments.iter().filter(move |e| e.command == command)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.raw).expect("config serializes")
    }
}

pub fn parse_config(text: &str) -> Result<Config, ConfigError> {
    let raw: RawConfig =
        serde_json::from_str(text).map_err(|e| ConfigError::Syntax { line: e.line(), column: e.column(), message: e.to_string() })?;
    resolve(raw)
}

fn resolve(raw: RawConfig) -> Result<Config, ConfigError> {
    let basis = match (&raw.basis, raw.rank) {
        (Some(b), r) => {
            let basis = Basis::new(b).map_err(|source| ConfigError::Word { context: "basis".into(), source })?;
            if r.is_some_and(|r| r != basis.rank()) {
                return Err(ConfigError::Invalid(format!("rank {} disagrees with basis {b:?}", r.unwrap_or(0))));
            }
            basis
        }
        (None, Some(r)) if (1..=26).contains(&r) => Basis::standard(r),
        (None, Some(r)) => return Err(ConfigError::Invalid(format!("rank {r} out of range 1..=26"))),
        (None, None) => return Err(ConfigError::Invalid("config needs \"basis\" or \"rank\"".into())),
    };

    let mut morphisms = BTreeMap::new();
    for (name, m) in &raw.morphisms {
        let images: Vec<&str> = m.images.iter().map(String::as_str).collect();
        let inverse: Vec<&str> = m.inverse.iter().map(String::as_str).collect();
        let phi = Morphism::parse(&basis, &images, Some(&inverse))
            .map_err(|source| ConfigError::Word { context: format!("morphism {name:?}"), source })?;
        let mismatch = phi.inverse_mismatch().map_err(|source| ConfigError::Word { context: format!("morphism {name:?}"), source })?;
        if let Some(mm) = mismatch {
            return Err(ConfigError::Inverse {
                morphism: name.clone(),
                generator: basis.name(mm.generator),
                composition: mm.composition,
                image: basis.render(mm.image.letters()),
            });
        }
        morphisms.insert(name.clone(), phi);
    }

    let mut maps = BTreeMap::new();
    for (name, m) in &raw.maps {
        maps.insert(name.clone(), resolve_map(name, m, &morphisms, &basis)?);
    }

    let mut systems = BTreeMap::new();
    for (name, s) in &raw.systems {
        systems.insert(name.clone(), resolve_system(name, s, &basis)?);
    }

    let cfg = Config { raw, basis, morphisms, maps, systems };
    let mut seen = std::collections::BTreeSet::new();
    for e in &cfg.raw.experiments {
        if !seen.insert(e.name.as_str()) {
            return Err(ConfigError::Invalid(format!("duplicate experiment name {:?}", e.name)));
        }
        check_experiment(&cfg, e)?;
    }
    Ok(cfg)
}

fn resolve_map(name: &str, m: &RawMap, morphisms: &BTreeMap<String, Morphism>, basis: &Basis) -> Result<MapEntry, ConfigError> {
    let err = |detail: String| ConfigError::Map { map: name.to_string(), detail };
    let (map, spec_strata, named) = match (&m.morphism, &m.graph) {
        (Some(mname), None) => {
            let phi = morphisms.get(mname).ok_or_else(|| ConfigError::Unresolved {
                kind: "morphism",
                name: mname.clone(),
                by: format!("map {name:?}"),
            })?;
            let phi = if m.inverse { phi.inverse().map_err(|e| err(e.to_string()))? } else { phi.clone() };
            (GraphMap::from_morphism(&phi), None, true)
        }
        (None, Some(spec)) => {
            if m.inverse {
                return Err(err("\"inverse\" applies to morphism maps only".into()));
            }
            let (f, filt) = spec.build().map_err(|e| err(e.to_string()))?;
            (f, filt, false)
        }
        _ => return Err(err("give exactly one of \"morphism\" or \"graph\"".into())),
    };
    let n = map.graph().edge_count();
    let filt = match (&m.strata, spec_strata) {
        (Some(s), _) => {
            let zero_based = s
                .iter()
                .map(|st| {
                    st.iter()
                        .map(|&e| if e == 0 || e > n { Err(err(format!("edge id {e} out of range 1..={n}"))) } else { Ok(e - 1) })
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()?;
            Filtration::new(n, zero_based).map_err(|e| err(e.to_string()))?
        }
        (None, Some(f)) => f,
        (None, None) => Filtration::new(n, vec![(0..n).collect()]).map_err(|e| err(e.to_string()))?,
    };
    let entry_named = named && n == basis.rank();
    let edge_name = |e: usize| {
        if entry_named {
            basis.name(e).to_string()
        } else {
            format!("{}", e + 1)
        }
    };
    filt.check_invariance(&map).map_err(|e| match e {
        GraphError::NotInvariant { edge, stratum } => {
            err(format!("filtration not invariant: image of edge {} leaves G_{}", edge_name(edge), stratum + 1))
        }
        other => err(other.to_string()),
    })?;
    let filt = match m.realizes {
        Some(k) if k >= 1 => filt.realizing(k - 1).map_err(|e| err(e.to_string()))?,
        Some(_) => return Err(err("\"realizes\" is 1-based".into())),
        None => filt,
    };
    let stratum = match m.stratum {
        Some(k) if k >= 1 && k <= filt.len() => k - 1,
        Some(k) => return Err(err(format!("stratum {k} out of range 1..={}", filt.len()))),
        None => filt.len() - 1,
    };
    Ok(MapEntry { map, filt, stratum, named: entry_named })
}

fn resolve_system(name: &str, s: &RawSystem, basis: &Basis) -> Result<FreeFactorSystem, ConfigError> {
    let ctx = format!("system {name:?}");
    match (&s.alphabets, &s.generators) {
        (Some(alpha), None) => {
            let mut alphabets = Vec::new();
            for a in alpha {
                let gens = a
                    .chars()
                    .map(|c| basis.letter(c).map(|l| l.gen()))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|source| ConfigError::Word { context: ctx.clone(), source })?;
                alphabets.push(gens);
            }
            let all: Vec<usize> = alphabets.iter().flatten().copied().collect();
            let distinct: std::collections::BTreeSet<usize> = all.iter().copied().collect();
            if distinct.len() != all.len() {
                return Err(ConfigError::Invalid(format!("{ctx}: alphabets overlap")));
            }
            FreeFactorSystem::basis_aligned_from(basis.rank(), &alphabets).map_err(|e| ConfigError::Invalid(format!("{ctx}: {e}")))
        }
        (None, Some(gens)) => {
            let mut words = Vec::new();
            for g in gens {
                let ws = g
                    .iter()
                    .map(|w| basis.parse(w))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|source| ConfigError::Word { context: ctx.clone(), source })?;
                words.push(ws);
            }
            let sys = SubgroupSystem::from_generators(basis.rank(), &words).map_err(|e| ConfigError::Invalid(format!("{ctx}: {e}")))?;
            Ok(FreeFactorSystem::new(sys, None))
        }
        _ => Err(ConfigError::Invalid(format!("{ctx}: give exactly one of \"alphabets\" or \"generators\""))),
    }
}

fn check_experiment(cfg: &Config, e: &Experiment) -> Result<(), ConfigError> {
    let by = format!("experiment {:?}", e.name);
    let need =
        |field: &str| ConfigError::Experiment { experiment: e.name.clone(), detail: format!("{} needs field {field:?}", e.command.name()) };
    let map_ref = |n: &String| -> Result<(), ConfigError> {
        if cfg.maps.contains_key(n) {
            Ok(())
        } else {
            Err(ConfigError::Unresolved { kind: "map", name: n.clone(), by: by.clone() })
        }
    };
    let morph_ref = |n: &String| -> Result<(), ConfigError> {
        if cfg.morphisms.contains_key(n) {
            Ok(())
        } else {
            Err(ConfigError::Unresolved { kind: "morphism", name: n.clone(), by: by.clone() })
        }
    };
    let sys_ref = |n: &String| -> Result<(), ConfigError> {
        if cfg.systems.contains_key(n) {
            Ok(())
        } else {
            Err(ConfigError::Unresolved { kind: "system", name: n.clone(), by: by.clone() })
        }
    };
    let words = |ws: &[String]| -> Result<(), ConfigError> {
        for w in ws {
            cfg.word(w, &by)?;
        }
        Ok(())
    };
    match e.command {
        Command::Validate => {}
        Command::Analyze | Command::Nielsen => {
            let m = e.map.as_ref().ok_or_else(|| need("map"))?;
            map_ref(m)?;
            let entry = &cfg.maps[m];
            for b in &e.beta {
                cfg.parse_path(entry, b, &by)?;
            }
        }
        Command::Stallings => {
            let op = e.op.ok_or_else(|| need("op"))?;
            match op {
                StallingsOp::Fold => {
                    if e.generators.is_empty() {
                        return Err(need("generators"));
                    }
                    words(&e.generators)?;
                    words(&e.inputs)?;
                }
                StallingsOp::Intersect => {
                    if e.generators.is_empty() {
                        return Err(need("generators"));
                    }
                    if e.other_generators.is_empty() {
                        return Err(need("other_generators"));
                    }
                    words(&e.generators)?;
                    words(&e.other_generators)?;
                }
                StallingsOp::Malnormal => {
                    sys_ref(e.system.as_ref().ok_or_else(|| need("system"))?)?;
                    if let Some(o) = &e.other {
                        sys_ref(o)?;
                    }
                }
                StallingsOp::Meet => {
                    sys_ref(e.system.as_ref().ok_or_else(|| need("system"))?)?;
                    sys_ref(e.other.as_ref().ok_or_else(|| need("other"))?)?;
                }
            }
        }
        Command::Electric => {
            sys_ref(e.system.as_ref().ok_or_else(|| need("system"))?)?;
            words(&e.inputs)?;
        }
        Command::Flare => {
            morph_ref(e.morphism.as_ref().ok_or_else(|| need("morphism"))?)?;
            sys_ref(e.system.as_ref().ok_or_else(|| need("system"))?)?;
            if e.mode == Some(FlareKind::ThreeOfFour) {
                morph_ref(e.psi.as_ref().ok_or_else(|| need("psi"))?)?;
            } else if let Some(p) = &e.psi {
                morph_ref(p)?;
            }
            for x in &e.exclude {
                map_ref(x)?;
            }
            if e.inputs.is_empty() && e.sample.is_none() {
                return Err(need("inputs or sample"));
            }
            words(&e.inputs)?;
        }
        Command::Pingpong => {
            if e.sides.len() != 4 {
                return Err(ConfigError::Experiment {
                    experiment: e.name.clone(),
                    detail: "pingpong needs four sides: phi, phi inverse, psi, psi inverse".into(),
                });
            }
            for s in &e.sides {
                map_ref(s)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"rank": 2, "morphisms": {"id": {"images": ["a", "b"], "inverse": ["a", "b"]}}}"#;

    #[test]
    fn minimal_parses() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.rank(), 2);
        assert!(cfg.morphisms["id"].verify_inverse_pair().unwrap());
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse_config("{\n  \"rank\": 2,\n  oops\n}").unwrap_err();
        match err {
            ConfigError::Syntax { line, column, .. } => assert_eq!((line, column), (3, 3)),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_generator_named() {
        let text = r#"{"rank": 2, "morphisms": {"f": {"images": ["a", "z"], "inverse": ["a", "b"]}}}"#;
        let msg = parse_config(text).unwrap_err().to_string();
        assert!(msg.contains("'z'"), "{msg}");
    }

    #[test]
    fn unresolved_morphism() {
        let text = r#"{"rank": 2, "systems": {"F": {"alphabets": ["a"]}},
            "experiments": [{"name": "x", "command": "flare", "morphism": "psi", "system": "F", "inputs": ["b"]}]}"#;
        let err = parse_config(text).unwrap_err();
        assert!(matches!(&err, ConfigError::Unresolved { name, .. } if name == "psi"), "{err}");
    }

    #[test]
    fn bad_inverse_names_generator() {
        let text = r#"{"rank": 2, "morphisms": {"f": {"images": ["ab", "b"], "inverse": ["a", "b"]}}}"#;
        let err = parse_config(text).unwrap_err();
        assert!(matches!(&err, ConfigError::Inverse { morphism, generator: 'a', .. } if morphism == "f"), "{err}");
    }

    #[test]
    fn non_invariant_filtration_names_edge() {
        let text = r#"{"rank": 2, "morphisms": {"f": {"images": ["ab", "b"], "inverse": ["aB", "b"]}},
            "maps": {"f": {"morphism": "f", "strata": [[1], [2]]}}}"#;
        let msg = parse_config(text).unwrap_err().to_string();
        assert!(msg.contains("image of edge a leaves G_1"), "{msg}");
    }

    #[test]
    fn raw_round_trip() {
        let cfg = parse_config(MINIMAL).unwrap();
        let again = parse_config(&cfg.to_json()).unwrap();
        assert_eq!(cfg.raw, again.raw);
    }
}
