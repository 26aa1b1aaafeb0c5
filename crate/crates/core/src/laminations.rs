//! Attracting laminations at finite depth: leaf approximants, the critical
//! constant, legality of circuits, attracting neighborhoods, the
//! three-disjoint-copies growth certificate and the ping-pong search.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphs::{
    analyze_filtration, bcc_constant, iterate_protected, protected_power, Filtration, GraphError, GraphMap, Protector, StratumClass,
    TurnStructure, CLASS_TOL, DEFAULT_MAX_RAY,
};
use crate::words::{invert_letters, Letter};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LamError {
    #[error("stratum {0} is not exponentially growing")]
    NotExponential(usize),
    #[error("edge {edge} is not in stratum {stratum}")]
    EdgeNotInStratum { edge: usize, stratum: usize },
    #[error("stratum {0} has eigenvalue 1")]
    UnitEigenvalue(usize),
    #[error("leaf did not reach {0} edges within the depth cap")]
    NoGrowth(usize),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

fn eg_eigenvalue(f: &GraphMap, filt: &Filtration, r: usize) -> Result<f64, LamError> {
    let analysis = analyze_filtration(f, filt)?;
    let s = analysis.get(r).ok_or(GraphError::StratumOutOfRange(r))?;
    match (s.class, s.eigenvalue()) {
        (StratumClass::Eg, Some(l)) if l > 1.0 + CLASS_TOL => Ok(l),
        (StratumClass::Eg, _) => Err(LamError::UnitEigenvalue(r)),
        _ => Err(LamError::NotExponential(r)),
    }
}

/// `λ_k = f^k_#(E)` for an edge `E` of an EG stratum.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeafApproximant {
    pub edge: Letter,
    pub depth: usize,
    pub stratum: usize,
    pub leaf: Vec<Letter>,
    /// Each `f_##(λ_j)` was found inside `λ_{j+1}`.
    pub nested: bool,
    pub r_legal: bool,
}

pub const DEFAULT_LEAF_LEN: usize = 200;

pub fn leaf_approximant(f: &GraphMap, filt: &Filtration, r: usize, e: Letter, k: usize) -> Result<LeafApproximant, LamError> {
    eg_eigenvalue(f, filt, r)?;
    if filt.stratum_of(e.gen()) != r {
        return Err(LamError::EdgeNotInStratum { edge: e.gen(), stratum: r });
    }
    let p = Protector::new(f);
    let mut leaf = vec![e];
    let mut nested = true;
    for _ in 0..k {
        let next = f.map_letters(&leaf);
        let kept = p.protected_letters(&leaf);
        nested &= contains(&next, &kept);
        leaf = next;
    }
    let r_legal = TurnStructure::new(f, filt).is_r_legal(r, &leaf);
    Ok(LeafApproximant { edge: e, depth: k, stratum: r, leaf, nested, r_legal })
}

/// Least depth with `|λ_k| ≥ min_len`.
pub fn leaf_approximant_min_len(f: &GraphMap, filt: &Filtration, r: usize, e: Letter, min_len: usize) -> Result<LeafApproximant, LamError> {
    eg_eigenvalue(f, filt, r)?;
    let mut cur = vec![e];
    for k in 0..=64 {
        if cur.len() >= min_len {
            return leaf_approximant(f, filt, r, e, k);
        }
        cur = f.map_letters(&cur);
    }
    Err(LamError::NoGrowth(min_len))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalConstant {
    pub bcc: usize,
    pub lambda: f64,
    /// `2·BCC/(λ−1)`
    pub value: f64,
    /// `⌈value⌉ + 1`
    pub working: usize,
}

pub fn critical_constant(f: &GraphMap, filt: &Filtration, r: usize) -> Result<CriticalConstant, LamError> {
    let lambda = eg_eigenvalue(f, filt, r)?;
    let bcc = bcc_constant(f).value;
    Ok(critical_from(bcc, lambda))
}

pub fn critical_from(bcc: usize, lambda: f64) -> CriticalConstant {
    let value = 2.0 * bcc as f64 / (lambda - 1.0);
    CriticalConstant { bcc, lambda, value, working: value.ceil() as usize + 1 }
}

// ---------------------------------------------------------------------------
// Substring index over a leaf and its reverse

#[derive(Debug, Clone)]
struct SuffixAutomaton {
    next: Vec<HashMap<Letter, usize>>,
    link: Vec<Option<usize>>,
    len: Vec<usize>,
}

impl SuffixAutomaton {
    fn build(text: &[Letter]) -> SuffixAutomaton {
        let mut sa = SuffixAutomaton { next: vec![HashMap::new()], link: vec![None], len: vec![0] };
        let mut last = 0;
        for &c in text {
            let cur = sa.push(sa.len[last] + 1);
            let mut p = Some(last);
            while let Some(q) = p {
                if sa.next[q].contains_key(&c) {
                    break;
                }
                sa.next[q].insert(c, cur);
                p = sa.link[q];
            }
            match p {
                None => sa.link[cur] = Some(0),
                Some(p) => {
                    let q = sa.next[p][&c];
                    if sa.len[p] + 1 == sa.len[q] {
                        sa.link[cur] = Some(q);
                    } else {
                        let clone = sa.push(sa.len[p] + 1);
                        sa.next[clone] = sa.next[q].clone();
                        sa.link[clone] = sa.link[q];
                        let mut pp = Some(p);
                        while let Some(x) = pp {
                            if sa.next[x].get(&c) != Some(&q) {
                                break;
                            }
                            sa.next[x].insert(c, clone);
                            pp = sa.link[x];
                        }
                        sa.link[q] = Some(clone);
                        sa.link[cur] = Some(clone);
                    }
                }
            }
            last = cur;
        }
        sa
    }

    fn push(&mut self, len: usize) -> usize {
        self.next.push(HashMap::new());
        self.link.push(None);
        self.len.push(len);
        self.len.len() - 1
    }

    /// `ms[j]` = length of the longest suffix of `t[..=j]` occurring in the text.
    fn matching(&self, t: &[Letter]) -> Vec<usize> {
        let mut ms = Vec::with_capacity(t.len());
        let (mut state, mut l) = (0usize, 0usize);
        for &c in t {
            loop {
                if let Some(&n) = self.next[state].get(&c) {
                    state = n;
                    l += 1;
                    break;
                }
                match self.link[state] {
                    Some(s) => {
                        state = s;
                        l = self.len[s];
                    }
                    None => {
                        l = 0;
                        break;
                    }
                }
            }
            ms.push(l);
        }
        ms
    }
}

// ---------------------------------------------------------------------------
// Legality

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegalityReport {
    pub numerator: usize,
    pub denominator: usize,
    pub value: f64,
    /// Positions of `α` (cyclic) excised as copies of `σ`.
    pub excised: usize,
}

/// Everything `LEG_{H_r}` needs, prepared once per map and leaf.
#[derive(Debug, Clone)]
pub struct LegalityContext {
    turns: TurnStructure,
    filt: Filtration,
    r: usize,
    c: usize,
    index: SuffixAutomaton,
}

impl LegalityContext {
    pub fn new(f: &GraphMap, filt: &Filtration, r: usize, c: usize, leaf: &LeafApproximant) -> LegalityContext {
        // Segments may be read in either orientation; the sentinel keeps
        // matches from straddling the two copies.
        let mut text = leaf.leaf.clone();
        text.push(Letter::SENTINEL);
        text.extend(invert_letters(&leaf.leaf));
        LegalityContext { turns: TurnStructure::new(f, filt), filt: filt.clone(), r, c, index: SuffixAutomaton::build(&text) }
    }

    pub fn threshold(&self) -> usize {
        self.c
    }

    /// Fraction of `|α|_{H_r}` covered by r-legal leaf segments of
    /// `H_r`-length ≥ C, for a circuit `α`.
    pub fn legality(&self, alpha: &[Letter]) -> LegalityReport {
        self.legality_excising(alpha, None)
    }

    /// Geometric variant: copies of the closed Nielsen path `σ` (either
    /// orientation) count in neither numerator nor denominator.
    pub fn legality_excising(&self, alpha: &[Letter], sigma: Option<&[Letter]>) -> LegalityReport {
        let n = alpha.len();
        if n == 0 {
            return LegalityReport { numerator: 0, denominator: 0, value: 0.0, excised: 0 };
        }
        let mut excised = vec![false; n];
        if let Some(s) = sigma.filter(|s| !s.is_empty() && s.len() <= n) {
            let si = invert_letters(s);
            let reps = s.len().div_ceil(n) + 1;
            let t: Vec<Letter> = alpha.iter().copied().cycle().take(n * reps).collect();
            let mut i = 0;
            while i < n {
                if t[i..].starts_with(s) || t[i..].starts_with(&si) {
                    for j in i..i + s.len() {
                        excised[j % n] = true;
                    }
                    i += s.len();
                } else {
                    i += 1;
                }
            }
        }
        let in_r = |l: Letter| self.filt.stratum_of(l.gen()) == self.r;
        let t: Vec<Letter> = alpha.iter().chain(alpha.iter()).copied().collect();
        let ms = self.index.matching(&t);
        // Prefix counts of H_r letters for the H_r-length of a window.
        let mut hr = vec![0usize; t.len() + 1];
        for (i, &l) in t.iter().enumerate() {
            hr[i + 1] = hr[i] + usize::from(in_r(l));
        }
        let mut diff = vec![0i64; t.len() + 1];
        let mut legal_from = 0;
        for j in 0..t.len() {
            if j > 0 && self.turns.is_illegal_in(crate::graphs::Turn::crossing(t[j - 1], t[j]), self.r) {
                legal_from = j;
            }
            let s = (j + 1 - ms[j]).max(legal_from).max((j + 1).saturating_sub(n));
            if s <= j && hr[j + 1] - hr[s] >= self.c {
                diff[s] += 1;
                diff[j + 1] -= 1;
            }
        }
        let mut covered = vec![false; n];
        let mut run = 0i64;
        for (i, d) in diff.iter().take(t.len()).enumerate() {
            run += d;
            if run > 0 {
                covered[i % n] = true;
            }
        }
        let mut numerator = 0;
        let mut denominator = 0;
        for i in 0..n {
            if excised[i] || !in_r(alpha[i]) {
                continue;
            }
            denominator += 1;
            numerator += usize::from(covered[i]);
        }
        let value = if denominator == 0 { 0.0 } else { numerator as f64 / denominator as f64 };
        LegalityReport { numerator, denominator, value, excised: excised.iter().filter(|&&x| x).count() }
    }
}

pub fn legality(
    f: &GraphMap,
    filt: &Filtration,
    r: usize,
    alpha: &[Letter],
    c: usize,
    leaf: &LeafApproximant,
    sigma: Option<&[Letter]>,
) -> LegalityReport {
    LegalityContext::new(f, filt, r, c, leaf).legality_excising(alpha, sigma)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegalityRow {
    pub input: String,
    /// Best `max(LEG(φ^M α), LEG'(φ^{-M} α))` over `M ≤ cap`, and its `M`.
    pub best: f64,
    pub at: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegalitySurvey {
    /// Min over the sample of the per-class best legality.
    pub epsilon: f64,
    /// Least `M` with `max(LEG(φ^M α), LEG'(φ^{-M} α)) ≥ ε` for every class.
    pub uniform: Option<usize>,
    pub rows: Vec<LegalityRow>,
}

/// Empirical legality bound: fits `ε` over a sample of circuits,
/// measuring forward iterates against `f`'s leaf and backward iterates
/// against `g`'s (a representative of the inverse).
pub fn legality_survey(
    f: &GraphMap,
    fwd: &LegalityContext,
    g: &GraphMap,
    bwd: &LegalityContext,
    sample: &[Vec<Letter>],
    cap: usize,
    sigma: Option<&[Letter]>,
) -> LegalitySurvey {
    let mut table: Vec<Vec<f64>> = Vec::new();
    for a in sample {
        let (mut x, mut y) = (a.clone(), a.clone());
        let mut row = Vec::with_capacity(cap + 1);
        for m in 0..=cap {
            if m > 0 {
                x = f.map_circuit(&x);
                y = g.map_circuit(&y);
            }
            let v = fwd.legality_excising(&x, sigma).value.max(bwd.legality_excising(&y, sigma).value);
            row.push(v);
        }
        table.push(row);
    }
    let rows: Vec<LegalityRow> = sample
        .iter()
        .zip(&table)
        .map(|(a, row)| {
            let (at, best) = row.iter().enumerate().fold((0, 0.0f64), |acc, (m, &v)| if v > acc.1 { (m, v) } else { acc });
            LegalityRow { input: crate::words::FreeWord::from_reduced(a.clone()).to_string(), best, at }
        })
        .collect();
    let epsilon = rows.iter().map(|r| r.best).fold(f64::INFINITY, f64::min);
    let epsilon = if rows.is_empty() { 0.0 } else { epsilon };
    let uniform = if epsilon > 0.0 { (0..=cap).find(|&m| table.iter().all(|row| row[m] >= epsilon)) } else { None };
    LegalitySurvey { epsilon, uniform, rows }
}

/// Least `m ≤ cap` with `|f^m_#(α)|_{H_r} ≥ A·|α|_{H_r}`.
pub fn legal_growth_exponent(f: &GraphMap, filt: &Filtration, r: usize, alpha: &[Letter], a: f64, cap: usize) -> Option<usize> {
    let base = filt.stratum_length(alpha, r) as f64;
    let mut cur = alpha.to_vec();
    for m in 0..=cap {
        if m > 0 {
            cur = f.map_circuit(&cur);
        }
        if filt.stratum_length(&cur, r) as f64 >= a * base {
            return Some(m);
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Neighborhoods and copies

fn contains(hay: &[Letter], needle: &[Letter]) -> bool {
    needle.is_empty() || hay.windows(needle.len()).any(|w| w == needle)
}

/// `N(G, β)`: lines (paths, circuits) containing `β` or `β⁻¹`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttractingNeighborhood {
    pub beta: Vec<Letter>,
}

impl AttractingNeighborhood {
    pub fn new(beta: Vec<Letter>) -> AttractingNeighborhood {
        AttractingNeighborhood { beta }
    }

    pub fn contains(&self, p: &[Letter], cyclic: bool) -> bool {
        neighborhood_contains(&self.beta, p, cyclic)
    }
}

/// Circuits are read as periodic lines.
pub fn neighborhood_contains(beta: &[Letter], p: &[Letter], cyclic: bool) -> bool {
    let inv = invert_letters(beta);
    if !cyclic || p.is_empty() {
        return contains(p, beta) || contains(p, &inv);
    }
    let reps = beta.len().div_ceil(p.len()) + 1;
    let line: Vec<Letter> = p.iter().copied().cycle().take(p.len() * reps).collect();
    contains(&line, beta) || contains(&line, &inv)
}

/// Starting positions of the first three pairwise disjoint copies of `β`
/// or `β⁻¹`, found greedily (exact, all copies having the same length).
pub fn three_disjoint_copies(container: &[Letter], beta: &[Letter]) -> Option<[usize; 3]> {
    if beta.is_empty() {
        return None;
    }
    let inv = invert_letters(beta);
    let mut found = Vec::new();
    let mut i = 0;
    while i + beta.len() <= container.len() && found.len() < 3 {
        let w = &container[i..i + beta.len()];
        if w == beta || w == inv.as_slice() {
            found.push(i);
            i += beta.len();
        } else {
            i += 1;
        }
    }
    (found.len() == 3).then(|| [found[0], found[1], found[2]])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpGrowthReport {
    pub k: Option<usize>,
    pub cap: usize,
    pub positions: Option<[usize; 3]>,
    /// `|(f^j)_##(β)|` for `j = 1..`
    pub lengths: Vec<usize>,
    /// Every computed `(f^j)_##` was exact (otherwise `f_##` iterated `j`
    /// times was used, a subpath of it).
    pub exact: bool,
}

/// Least `k ≤ cap` such that `(f^k)_##(β)` contains three disjoint copies of `β`.
pub fn expgrowth_certificate(p: &Protector, beta: &[Letter], cap: usize) -> ExpGrowthReport {
    let mut lengths = Vec::new();
    let mut exact = true;
    for k in 1..=cap {
        let pp = protected_power(p, beta, k, DEFAULT_MAX_RAY);
        let kept = if pp.exact {
            pp.protected.kept().to_vec()
        } else {
            exact = false;
            iterate_protected(p, beta, k)
        };
        lengths.push(kept.len());
        if let Some(pos) = three_disjoint_copies(&kept, beta) {
            return ExpGrowthReport { k: Some(k), cap, positions: Some(pos), lengths, exact };
        }
    }
    ExpGrowthReport { k: None, cap, positions: None, lengths, exact }
}

/// Leaf segments that need no train-track property: a seed `β` with
/// `(f_##)^k(β)` holding three disjoint copies of `β` lies, with every
/// `(f_##)^{ik}(β)`, in a generic leaf of the attracting lamination.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertifiedLeaf {
    pub seed: Vec<Letter>,
    pub k: usize,
    pub leaf: Vec<Letter>,
}

/// Seeds are windows of `f^j_#(E)`, tried by depth, length, then position.
pub fn certified_leaf(p: &Protector, e: Letter, min_len: usize, max_k: usize) -> Option<CertifiedLeaf> {
    let f = p.map();
    let mut img = vec![e];
    for _ in 0..=8 {
        for len in 1..=img.len().min(12) {
            for start in 0..=img.len() - len {
                let seed = &img[start..start + len];
                let Some(k) = (1..=max_k).find(|&k| three_disjoint_copies(&iterate_protected(p, seed, k), seed).is_some()) else {
                    continue;
                };
                let mut leaf = seed.to_vec();
                while leaf.len() < min_len {
                    leaf = iterate_protected(p, &leaf, k);
                }
                return Some(CertifiedLeaf { seed: seed.to_vec(), k, leaf });
            }
        }
        img = f.map_letters(&img);
    }
    None
}

// ---------------------------------------------------------------------------
// Ping-pong

/// One of `φ^{±1}`, `ψ^{±1}` with its EG stratum.
#[derive(Debug, Clone)]
pub struct PingPongSide {
    pub name: String,
    pub map: GraphMap,
    pub filt: Filtration,
    pub stratum: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PingPongCaps {
    pub exponent: usize,
    pub length: usize,
    pub leaf_len: usize,
    /// Chain `T^{p+t}_##(β) ⊇ T^t_#(α)` for `t = 1..=verify_t`, recorded in Step 3.
    pub verify_t: usize,
    /// Largest `M` tried in the final verification.
    pub max_m: usize,
}

impl Default for PingPongCaps {
    fn default() -> Self {
        PingPongCaps { exponent: 10, length: 10, leaf_len: DEFAULT_LEAF_LEN, verify_t: 2, max_m: 20 }
    }
}

/// Record of one (leaf source `S`, iterated map `T`) pass of Steps 1–3.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub source: String,
    pub target: String,
    /// `α` padded by `C` edges on each side, a `T`-leaf segment.
    pub alpha_padded: Vec<Letter>,
    pub alpha: Vec<Letter>,
    /// Iterate of `S` at which `α_1` reached the `S`-leaf probe.
    pub attraction_t: usize,
    pub p: usize,
    /// Window of the `S` leaf approximant.
    pub window: (usize, usize),
    /// `T^{p+t}_##(window) ⊇ T^t_#(α)` for `t = 1..=verify_t`.
    pub chain: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContainmentCheck {
    pub description: String,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PingPongCertificate {
    pub c: usize,
    pub stages: Vec<StageRecord>,
    /// Neighborhood paths, keyed by side name.
    pub neighborhoods: Vec<(String, Vec<Letter>)>,
    pub p: usize,
    pub q: usize,
    pub k: usize,
    /// `max(p, q) + k`
    pub m_bound: usize,
    /// Least `M ≥ m_bound` at which every containment was verified.
    pub m: usize,
    /// Least `M` at which the same containments hold, ignoring the bound.
    pub m_direct: usize,
    pub checks: Vec<ContainmentCheck>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("step {step} ({stage}): {detail}")]
pub struct PingPongFailure {
    pub step: u8,
    pub stage: String,
    pub detail: String,
}

struct Prepared<'a> {
    side: &'a PingPongSide,
    protector: Protector,
    leaf: Vec<Letter>,
    probe: Vec<Letter>,
}

fn iterate_sharp(p: &Protector, beta: &[Letter], k: usize) -> Vec<Letter> {
    iterate_protected(p, beta, k)
}

fn either(hay: &[Letter], needle: &[Letter]) -> bool {
    contains(hay, needle) || contains(hay, &invert_letters(needle))
}

fn fail(step: u8, stage: &str, detail: String) -> PingPongFailure {
    PingPongFailure { step, stage: stage.to_string(), detail }
}

/// Steps 1–3 for leaf source `s` and iterated map `t`.
fn stage(s: &Prepared, t: &Prepared, c: usize, caps: &PingPongCaps) -> Result<StageRecord, PingPongFailure> {
    let name = format!("{}→{}", s.side.name, t.side.name);
    // Step 1: a T-leaf segment α_1 = pad·α·pad whose S-iterates reach the S-leaf probe.
    let mut chosen = None;
    'search: for l in 1..=caps.length {
        let w = l + 2 * c;
        if w > t.leaf.len() {
            break;
        }
        for start in 0..=t.leaf.len() - w {
            let a1 = &t.leaf[start..start + w];
            // α itself must begin and end in the EG stratum so that it grows.
            let in_r = |x: Letter| t.side.filt.stratum_of(x.gen()) == t.side.stratum;
            if !in_r(a1[c]) || !in_r(a1[c + l - 1]) {
                continue;
            }
            for it in 1..=caps.exponent {
                let img = iterate_sharp(&s.protector, a1, it);
                if img.is_empty() {
                    break;
                }
                if either(&img, &s.probe) {
                    chosen = Some((a1.to_vec(), l, it));
                    break 'search;
                }
            }
        }
    }
    let (mut a1, l, attraction_t) = chosen.ok_or_else(|| {
        fail(
            1,
            &name,
            format!(
                "no {} leaf segment of length ≤ {} is attracted to the {} leaf within {} iterates",
                t.side.name, caps.length, s.side.name, caps.exponent
            ),
        )
    })?;
    // Step 2: T^p_#(λ_S) ⊇ α_1.
    let mut img = s.leaf.clone();
    let mut p = None;
    for k in 1..=caps.exponent {
        img = t.side.map.map_letters(&img);
        if contains(&img, &a1) {
            p = Some(k);
            break;
        }
        let inv = invert_letters(&a1);
        if contains(&img, &inv) {
            a1 = inv;
            p = Some(k);
            break;
        }
    }
    let p = p.ok_or_else(|| {
        fail(2, &name, format!("{}^p of the {} leaf never contains α_1 for p ≤ {}", t.side.name, s.side.name, caps.exponent))
    })?;
    let alpha = a1[c..c + l].to_vec();
    // Step 3: shortest window β of λ_S with T^p_##(β) ⊇ α_1.
    let n = s.leaf.len();
    let ok = |i: usize, j: usize| contains(&iterate_sharp(&t.protector, &s.leaf[i..j], p), &a1);
    let mut best: Option<(usize, usize)> = None;
    for i in 0..n {
        if !ok(i, n) {
            continue;
        }
        let (mut lo, mut hi) = (i + 1, n);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if ok(i, mid) {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        if best.is_none_or(|(bi, bj)| lo - i < bj - bi) {
            best = Some((i, lo));
        }
    }
    let window =
        best.ok_or_else(|| fail(3, &name, format!("no window of the {} leaf protects α_1 under {}^{}", s.side.name, t.side.name, p)))?;
    // Guaranteed only for relative train tracks; recorded.
    let chain = (1..=caps.verify_t)
        .map(|tt| {
            let lhs = iterate_sharp(&t.protector, &s.leaf[window.0..window.1], p + tt);
            contains(&lhs, &t.side.map.iterate_letters(&alpha, tt))
        })
        .collect();
    Ok(StageRecord { source: s.side.name.clone(), target: t.side.name.clone(), alpha_padded: a1, alpha, attraction_t, p, window, chain })
}

/// Steps 1–5 for `φ^{±1}` (`phi[0]`, `phi[1]`) against `ψ^{±1}`.
pub fn pingpong_search(
    phi: [&PingPongSide; 2],
    psi: [&PingPongSide; 2],
    caps: PingPongCaps,
) -> Result<PingPongCertificate, PingPongFailure> {
    let sides = [phi[0], phi[1], psi[0], psi[1]];
    let g0 = sides[0].map.graph();
    if sides.iter().any(|s| s.map.graph().edges() != g0.edges() || s.map.graph().marking() != g0.marking()) {
        return Err(fail(0, "input", "maps must share one marked graph".to_string()));
    }
    let mut prepared = Vec::new();
    for s in sides {
        let e = Letter::new(s.filt.stratum(s.stratum)[0], false);
        eg_eigenvalue(&s.map, &s.filt, s.stratum).map_err(|err| fail(0, &s.name, err.to_string()))?;
        let protector = Protector::new(&s.map);
        let leaf = certified_leaf(&protector, e, caps.leaf_len, caps.exponent)
            .ok_or_else(|| fail(0, &s.name, "no seed path with three protected copies".to_string()))?;
        prepared.push(Prepared { side: s, protector, leaf: leaf.leaf, probe: Vec::new() });
    }
    let c = 2 * prepared.iter().map(|p| p.protector.bcc().value).max().unwrap_or(0) + 1;
    for p in &mut prepared {
        let w = (2 * c + 1).min(p.leaf.len());
        let mid = (p.leaf.len() - w) / 2;
        p.probe = p.leaf[mid..mid + w].to_vec();
    }
    // Steps 1–3: φ leaves pushed by ψ^{±1}; Step 4: the reverse.
    let mut stages = Vec::new();
    for (sources, targets) in [([0, 1], [2, 3]), ([2, 3], [0, 1])] {
        for &si in &sources {
            for &ti in &targets {
                stages.push((si, ti, stage(&prepared[si], &prepared[ti], c, &caps)?));
            }
        }
    }
    // Neighborhood path of each side: hull of its windows in its own leaf.
    let mut hull: Vec<Option<(usize, usize)>> = vec![None; 4];
    for (si, _, st) in &stages {
        let h = &mut hull[*si];
        *h = Some(match *h {
            None => st.window,
            Some((a, b)) => (a.min(st.window.0), b.max(st.window.1)),
        });
    }
    let nbhd: Vec<Vec<Letter>> = (0..4).map(|i| hull[i].map(|(a, b)| prepared[i].leaf[a..b].to_vec()).unwrap_or_default()).collect();
    let p = stages.iter().filter(|(si, _, _)| *si < 2).map(|(_, _, s)| s.p).max().unwrap_or(0);
    let q = stages.iter().filter(|(si, _, _)| *si >= 2).map(|(_, _, s)| s.p).max().unwrap_or(0);
    // Step 5: T^k_#(α) ⊇ three copies of T's neighborhood path.
    let k = (1..=caps.exponent)
        .find(|&k| {
            stages
                .iter()
                .all(|(_, ti, st)| three_disjoint_copies(&prepared[*ti].side.map.iterate_letters(&st.alpha, k), &nbhd[*ti]).is_some())
        })
        .ok_or_else(|| {
            let worst: Vec<String> = stages
                .iter()
                .filter(|(_, ti, st)| {
                    three_disjoint_copies(&prepared[*ti].side.map.iterate_letters(&st.alpha, caps.exponent), &nbhd[*ti]).is_none()
                })
                .map(|(si, ti, st)| {
                    format!("{}→{} (|α| = {}, |N| = {})", prepared[*si].side.name, prepared[*ti].side.name, st.alpha.len(), nbhd[*ti].len())
                })
                .collect();
            fail(5, "copies", format!("no k ≤ {} gives three disjoint copies for {}", caps.exponent, worst.join(", ")))
        })?;
    let m_bound = p.max(q) + k;
    // Re-verification: T^M_##(N_S) contains three disjoint copies of N_T.
    let run_checks = |m: usize| {
        let mut checks = Vec::new();
        for (si, ti, _) in &stages {
            let img = iterate_sharp(&prepared[*ti].protector, &nbhd[*si], m);
            let holds = three_disjoint_copies(&img, &nbhd[*ti]).is_some();
            checks.push(ContainmentCheck {
                description: format!("{}^{m}_##(N_{}) ⊇ 3·N_{}", prepared[*ti].side.name, prepared[*si].side.name, prepared[*ti].side.name),
                holds,
            });
        }
        // A mixed word ξ = T'^M ∘ T^M returning to S's neighborhood.
        for (si, ti, _) in stages.iter().filter(|(si, _, _)| *si < 2) {
            for back in [0usize, 1] {
                let once = iterate_sharp(&prepared[*ti].protector, &nbhd[*si], m);
                let twice = iterate_sharp(&prepared[back].protector, &once, m);
                checks.push(ContainmentCheck {
                    description: format!(
                        "({}^{m}∘{}^{m})_##(N_{}) ⊇ 3·N_{}",
                        prepared[back].side.name, prepared[*ti].side.name, prepared[*si].side.name, prepared[back].side.name
                    ),
                    holds: three_disjoint_copies(&twice, &nbhd[back]).is_some(),
                });
            }
        }
        checks
    };
    // Smallest exponent at which the direct containments already hold.
    let m_direct = (1..m_bound).find(|&m| run_checks(m).iter().all(|c| c.holds));
    let mut last_checks = Vec::new();
    for m in m_bound..=caps.max_m.max(m_bound) {
        let checks = run_checks(m);
        if checks.iter().all(|c| c.holds) {
            return Ok(PingPongCertificate {
                c,
                stages: stages.into_iter().map(|(_, _, s)| s).collect(),
                neighborhoods: (0..4).map(|i| (prepared[i].side.name.clone(), nbhd[i].clone())).collect(),
                p,
                q,
                k,
                m_bound,
                m,
                m_direct: m_direct.unwrap_or(m),
                checks,
            });
        }
        last_checks = checks;
    }
    let bad: Vec<String> = last_checks.into_iter().filter(|c| !c.holds).map(|c| c.description).collect();
    Err(fail(5, "verify", format!("containments fail up to M = {}: {}", caps.max_m.max(m_bound), bad.join("; "))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::words::{Basis, Morphism};

    fn house() -> (GraphMap, Filtration, Basis) {
        let b = Basis::standard(4);
        let phi = Morphism::parse(&b, &["a", "b", "cad", "c"], Some(&["a", "b", "d", "ADc"])).unwrap();
        (GraphMap::from_morphism(&phi), Filtration::new(4, vec![vec![0], vec![1], vec![2, 3]]).unwrap(), b)
    }

    #[test]
    fn leaves() {
        let (f, filt, b) = house();
        let c = b.letter('c').unwrap();
        let d = b.letter('d').unwrap();
        assert_eq!(b.render(&leaf_approximant(&f, &filt, 2, c, 2).unwrap().leaf), "cadac");
        assert_eq!(b.render(&leaf_approximant(&f, &filt, 2, c, 0).unwrap().leaf), "c");
        let l = leaf_approximant(&f, &filt, 2, d, 3).unwrap();
        assert_eq!(b.render(&l.leaf), "cadac");
        assert!(l.nested && l.r_legal);
        assert_eq!(leaf_approximant(&f, &filt, 0, b.letter('a').unwrap(), 2), Err(LamError::NotExponential(0)));
        let deep = leaf_approximant_min_len(&f, &filt, 2, c, DEFAULT_LEAF_LEN).unwrap();
        assert!(deep.leaf.len() >= DEFAULT_LEAF_LEN && deep.r_legal);
    }

    #[test]
    fn critical() {
        let (f, filt, _) = house();
        let cc = critical_constant(&f, &filt, 2).unwrap();
        assert_eq!(cc.bcc, 2);
        assert!((cc.value - 4.0 / (cc.lambda - 1.0)).abs() < 1e-12);
        assert_eq!(cc.working, 8);
        assert_eq!(critical_from(0, 1.5).working, 1);
        assert!(critical_constant(&f, &filt, 1).is_err());
    }

    #[test]
    fn suffix_automaton_matches_brute_force() {
        let (_, _, b) = house();
        let text = b.parse_letters("cadacacadacadac").unwrap();
        let sa = SuffixAutomaton::build(&text);
        let t = b.parse_letters("dacaccadacb").unwrap();
        let ms = sa.matching(&t);
        for j in 0..t.len() {
            let brute = (0..=j + 1).rev().find(|&l| contains(&text, &t[j + 1 - l..=j])).unwrap();
            assert_eq!(ms[j], brute, "{j}");
        }
    }

    #[test]
    fn legality_examples() {
        let (f, filt, b) = house();
        let leaf = leaf_approximant(&f, &filt, 2, b.letter('c').unwrap(), 5).unwrap();
        let ctx = LegalityContext::new(&f, &filt, 2, 2, &leaf);
        assert_eq!(ctx.legality(&b.parse_letters("ab").unwrap()).value, 0.0);
        let whole = ctx.legality(&b.parse_letters("cadacacad").unwrap());
        assert_eq!((whole.numerator, whole.denominator), (5, 5));
        // (c, d) is illegal: cdcd splits into H_r pieces of length 1 < C.
        let split = ctx.legality(&b.parse_letters("cd").unwrap());
        assert_eq!((split.numerator, split.denominator, split.value), (0, 2, 0.0));
        // The Nielsen circuit is two leaf segments of H_r-length 2 meeting at
        // its illegal turn: fully legal at C = 2, not at the working C = 8.
        let rho = b.parse_letters("CADcad").unwrap();
        assert_eq!(ctx.legality(&rho).value, 1.0);
        assert_eq!(LegalityContext::new(&f, &filt, 2, 8, &leaf).legality(&rho).value, 0.0);
        let ex = ctx.legality_excising(&rho, Some(&rho));
        assert_eq!((ex.denominator, ex.excised), (0, 6));
    }

    #[test]
    fn neighborhoods_and_copies() {
        let (_, _, b) = house();
        let p = |s: &str| b.parse_letters(s).unwrap();
        assert!(neighborhood_contains(&p("cad"), &p("cadacacad"), false));
        assert!(!neighborhood_contains(&p("cc"), &p("cadac"), false));
        assert!(neighborhood_contains(&p("dac"), &p("cada"), true));
        assert!(neighborhood_contains(&p("CAD"), &p("cadac"), false));
        assert_eq!(three_disjoint_copies(&p("cadacacad"), &p("c")), Some([0, 4, 6]));
        assert_eq!(three_disjoint_copies(&p("cadac"), &p("c")), None);
        assert_eq!(three_disjoint_copies(&p("ca"), &p("cadac")), None);
        // Overlapping copies do not count twice.
        assert_eq!(three_disjoint_copies(&p("aaaa"), &p("aa")), None);
    }

    #[test]
    fn growth_certificates() {
        let (f, _, b) = house();
        let pr = Protector::new(&f);
        let r = expgrowth_certificate(&pr, &b.parse_letters("cadac").unwrap(), 6);
        assert!(r.k.is_some() && r.exact);
        // f_##(c) = d, and every deeper protected image of c is empty.
        let c = expgrowth_certificate(&pr, &b.parse_letters("c").unwrap(), 6);
        assert_eq!(c.k, None);
        assert_eq!(c.lengths, vec![1, 0, 0, 0, 0, 0]);
        let id = GraphMap::from_morphism(&Morphism::identity(4));
        let r = expgrowth_certificate(&Protector::new(&id), &b.parse_letters("cad").unwrap(), 6);
        assert_eq!(r.k, None);
    }
}
