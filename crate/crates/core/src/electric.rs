//! Electric (coned-off) lengths relative to a free factor system, two BFS
//! oracles over the coned-off Cayley graph, and the flaring experiments.
//!
//! In the coned-off graph every left coset `gF` gets a cone point joined to
//! each of its elements by an edge of length 1/2. The BFS oracles double all
//! weights (generator step 2, half-edge 1) to stay in integers.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphs::{Filtration, GraphMap};
use crate::subgroups::{FreeFactorSystem, PathSystem, SubgroupGraph};
use crate::words::{CyclicWord, FreeWord, Letter, Morphism, WordError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ElectricError {
    #[error("closed form needs a basis-aligned factor system; use the BFS oracle")]
    NotAligned,
    #[error("factor alphabets overlap or leave the basis")]
    BadFactors,
    #[error("word length {len} exceeds oracle cap {cap}")]
    CapExceeded { len: usize, cap: usize },
    #[error("input {0} is carried by the factor system")]
    Carried(String),
    #[error("word {0} lies in a factor")]
    InFactor(String),
    #[error("peripheral word {0} is not root-free")]
    NotRootFree(String),
    #[error("comparison needs a rose with identity marking")]
    NotRose,
    #[error(transparent)]
    Word(#[from] WordError),
}

/// Coned-off Cayley graph data: factor subgroups plus an optional extra
/// peripheral cyclic subgroup `⟨σ⟩`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElectricContext {
    rank: usize,
    factors: Vec<SubgroupGraph>,
    /// Factor index of each generator when the system is basis-aligned.
    factor_of: Option<Vec<Option<usize>>>,
    sigma: Option<CyclicWord>,
}

impl ElectricContext {
    pub fn new(rank: usize, system: &FreeFactorSystem) -> ElectricContext {
        let factor_of = system.alphabets().map(|alphas| {
            let mut v = vec![None; rank];
            for (i, a) in alphas.iter().enumerate() {
                for &g in a {
                    v[g] = Some(i);
                }
            }
            v
        });
        ElectricContext { rank, factors: system.system().components().to_vec(), factor_of, sigma: None }
    }

    pub fn basis_aligned(rank: usize, alphabets: &[Vec<usize>]) -> Result<ElectricContext, ElectricError> {
        let all: Vec<usize> = alphabets.iter().flatten().copied().collect();
        let set: BTreeSet<usize> = all.iter().copied().collect();
        if set.len() != all.len() || all.iter().any(|&g| g >= rank) || alphabets.iter().any(|a| a.is_empty()) {
            return Err(ElectricError::BadFactors);
        }
        let sys = FreeFactorSystem::basis_aligned_from(rank, alphabets).map_err(|_| ElectricError::BadFactors)?;
        Ok(ElectricContext::new(rank, &sys))
    }

    /// Arbitrary peripheral subgroups (oracle-only unless they happen to be aligned).
    pub fn from_subgroups(rank: usize, factors: Vec<SubgroupGraph>) -> ElectricContext {
        ElectricContext { rank, factors, factor_of: None, sigma: None }
    }

    /// Adds `⟨σ⟩` to the peripheral structure (geometric case).
    pub fn with_peripheral(mut self, sigma: &CyclicWord) -> Result<ElectricContext, ElectricError> {
        if !sigma.is_root_free()? {
            return Err(ElectricError::NotRootFree(sigma.to_string()));
        }
        let g = crate::subgroups::fold_stallings(self.rank, &[sigma.as_word()]).map_err(|_| ElectricError::BadFactors)?;
        self.factors.push(g);
        self.factor_of = None;
        self.sigma = Some(sigma.clone());
        Ok(self)
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn factors(&self) -> &[SubgroupGraph] {
        &self.factors
    }

    pub fn is_aligned(&self) -> bool {
        self.factor_of.is_some()
    }

    pub fn sigma(&self) -> Option<&CyclicWord> {
        self.sigma.as_ref()
    }

    fn factor_of(&self) -> Result<&[Option<usize>], ElectricError> {
        self.factor_of.as_deref().ok_or(ElectricError::NotAligned)
    }

    /// Block formula: each maximal run of letters from one factor costs 1,
    /// every other letter costs 1.
    pub fn electric_length(&self, w: &[Letter]) -> Result<usize, ElectricError> {
        let fo = self.factor_of()?;
        let mut len = 0;
        let mut prev: Option<usize> = None;
        for l in w {
            let f = fo[l.gen()];
            if f.is_none() || f != prev {
                len += 1;
            }
            prev = f;
        }
        Ok(len)
    }

    pub fn electric_length_word(&self, w: &FreeWord) -> Result<usize, ElectricError> {
        self.electric_length(w.letters())
    }

    /// Cyclic block count; 0 for classes carried by one factor.
    pub fn electric_length_cyclic(&self, letters: &[Letter]) -> Result<usize, ElectricError> {
        let fo = self.factor_of()?;
        let n = letters.len();
        if n == 0 {
            return Ok(0);
        }
        let f0 = fo[letters[0].gen()];
        if f0.is_some() && letters.iter().all(|l| fo[l.gen()] == f0) {
            return Ok(0);
        }
        let mut len = 0;
        for i in 0..n {
            let f = fo[letters[i].gen()];
            let prev = fo[letters[(i + n - 1) % n].gen()];
            if f.is_none() || f != prev {
                len += 1;
            }
        }
        Ok(len)
    }

    pub fn electric_length_conjugacy(&self, alpha: &CyclicWord) -> Result<usize, ElectricError> {
        self.electric_length_cyclic(alpha.letters())
    }

    /// Letters outside every factor: `|·|_{H_r}` on a rose with aligned factors.
    pub fn nonfactor_count(&self, letters: &[Letter]) -> Result<usize, ElectricError> {
        let fo = self.factor_of()?;
        Ok(letters.iter().filter(|l| fo[l.gen()].is_none()).count())
    }

    /// The class is carried by the peripheral structure.
    pub fn carries(&self, alpha: &CyclicWord) -> bool {
        self.factors.iter().any(|f| f.carries(alpha))
    }

    /// The word lies in one of the factor subgroups themselves.
    pub fn in_factor(&self, w: &FreeWord) -> bool {
        self.factors.iter().any(|f| f.contains_word(w))
    }

    /// Left-coset key of `g·F_j`: where `g⁻¹` leaves the Stallings graph.
    fn coset_key(&self, j: usize, g: &[Letter]) -> (usize, Vec<Letter>) {
        let h = crate::words::invert_letters(g);
        let (v, used) = self.factors[j].read_prefix(0, &h);
        (v, h[used..].to_vec())
    }
}

// ---------------------------------------------------------------------------
// BFS oracles

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleLimits {
    /// Longest input word accepted.
    pub max_word_len: usize,
    /// Region explored: words within tree distance `slack` of the geodesic.
    pub slack: usize,
}

impl Default for OracleLimits {
    fn default() -> Self {
        OracleLimits { max_word_len: 12, slack: 2 }
    }
}

/// Dial's algorithm over small integer weights.
struct Buckets {
    buckets: Vec<Vec<u32>>,
    at: usize,
}

impl Buckets {
    fn new() -> Self {
        Buckets { buckets: Vec::new(), at: 0 }
    }
    fn push(&mut self, d: usize, node: u32) {
        if self.buckets.len() <= d {
            self.buckets.resize_with(d + 1, Vec::new);
        }
        self.buckets[d].push(node);
    }
    fn pop(&mut self) -> Option<(usize, u32)> {
        while self.at < self.buckets.len() {
            if let Some(n) = self.buckets[self.at].pop() {
                return Some((self.at, n));
            }
            self.at += 1;
        }
        None
    }
}

/// Electric distance from 1 to `w`, by shortest paths in the coned-off graph
/// restricted to a tube around the geodesic `[1, w]`. Works for any factor
/// subgroups, aligned or not.
pub fn bfs_electric_oracle(ctx: &ElectricContext, w: &FreeWord, limits: OracleLimits) -> Result<usize, ElectricError> {
    if w.len() > limits.max_word_len {
        return Err(ElectricError::CapExceeded { len: w.len(), cap: limits.max_word_len });
    }
    let letters = w.letters();
    let all: Vec<Letter> = (0..2 * ctx.rank).map(Letter::from_index).collect();
    let mut index: HashMap<Vec<Letter>, u32> = HashMap::new();
    let mut elems: Vec<Vec<Letter>> = Vec::new();
    fn grow(cur: &mut Vec<Letter>, depth: usize, all: &[Letter], index: &mut HashMap<Vec<Letter>, u32>, elems: &mut Vec<Vec<Letter>>) {
        if !index.contains_key(cur.as_slice()) {
            index.insert(cur.clone(), elems.len() as u32);
            elems.push(cur.clone());
        }
        if depth == 0 {
            return;
        }
        for &x in all {
            if cur.last() == Some(&x.inverse()) {
                continue;
            }
            cur.push(x);
            grow(cur, depth - 1, all, index, elems);
            cur.pop();
        }
    }
    for i in 0..=letters.len() {
        let mut p = letters[..i].to_vec();
        grow(&mut p, limits.slack, &all, &mut index, &mut elems);
    }
    let n = elems.len();
    let mut cone_index: HashMap<(usize, usize, Vec<Letter>), u32> = HashMap::new();
    let mut cone_members: Vec<Vec<u32>> = Vec::new();
    let mut elem_cones: Vec<Vec<u32>> = vec![Vec::new(); n];
    for (i, g) in elems.iter().enumerate() {
        for j in 0..ctx.factors.len() {
            let (v, r) = ctx.coset_key(j, g);
            let next = cone_members.len() as u32;
            let c = *cone_index.entry((j, v, r)).or_insert(next);
            if c == next {
                cone_members.push(Vec::new());
            }
            cone_members[c as usize].push(i as u32);
            elem_cones[i].push(c);
        }
    }
    let target = index[letters];
    let mut dist = vec![u32::MAX; n + cone_members.len()];
    let mut q = Buckets::new();
    dist[0] = 0;
    q.push(0, 0);
    while let Some((d, node)) = q.pop() {
        if d as u32 != dist[node as usize] {
            continue;
        }
        if node == target {
            return Ok(d / 2);
        }
        let mut relax = |m: u32, nd: usize, q: &mut Buckets| {
            if (nd as u32) < dist[m as usize] {
                dist[m as usize] = nd as u32;
                q.push(nd, m);
            }
        };
        if (node as usize) < n {
            let g = &elems[node as usize];
            for &x in &all {
                let mut h = g.clone();
                crate::words::push_reduced(&mut h, x);
                if let Some(&m) = index.get(&h) {
                    relax(m, d + 2, &mut q);
                }
            }
            for &c in &elem_cones[node as usize] {
                relax(n as u32 + c, d + 1, &mut q);
            }
        } else {
            for &m in &cone_members[node as usize - n] {
                relax(m, d + 1, &mut q);
            }
        }
    }
    unreachable!("the geodesic lies in the region")
}

/// Dense numbering of the reduced words of length ≤ R over `2·rank` letters.
#[derive(Debug, Clone)]
pub struct WordIndex {
    letters: usize,
    radius: usize,
    offsets: Vec<u64>,
    pow: Vec<u64>,
}

impl WordIndex {
    pub fn new(rank: usize, radius: usize) -> WordIndex {
        let l = 2 * rank as u64;
        let mut offsets = vec![0u64, 1];
        let mut pow = vec![1u64];
        for i in 1..=radius + 1 {
            pow.push(pow[i - 1] * (l - 1));
        }
        for len in 1..=radius {
            let count = l * pow[len - 1];
            offsets.push(offsets[len] + count);
        }
        WordIndex { letters: l as usize, radius, offsets, pow }
    }

    /// Number of words in the ball.
    pub fn size(&self) -> u64 {
        self.offsets[self.radius + 1]
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn encode(&self, w: &[Letter]) -> u64 {
        let n = w.len();
        if n == 0 {
            return 0;
        }
        let mut code = w[0].index() as u64;
        for i in 1..n {
            let forbidden = w[i - 1].inverse().index();
            let x = w[i].index();
            let c = if x < forbidden { x } else { x - 1 };
            code = code * (self.letters as u64 - 1) + c as u64;
        }
        self.offsets[n] + code
    }

    pub fn decode(&self, idx: u64, out: &mut Vec<Letter>) {
        out.clear();
        if idx == 0 {
            return;
        }
        let n = match self.offsets.iter().rposition(|&o| o <= idx) {
            Some(p) => p,
            None => unreachable!(),
        };
        let mut code = idx - self.offsets[n];
        let mut digits = vec![0usize; n];
        for i in (1..n).rev() {
            digits[i] = (code % (self.letters as u64 - 1)) as usize;
            code /= self.letters as u64 - 1;
        }
        digits[0] = code as usize;
        let _ = &self.pow;
        let mut prev: Option<Letter> = None;
        for d in digits {
            let x = match prev {
                None => d,
                Some(p) => {
                    let forbidden = p.inverse().index();
                    if d < forbidden {
                        d
                    } else {
                        d + 1
                    }
                }
            };
            let l = Letter::from_index(x);
            out.push(l);
            prev = Some(l);
        }
    }
}

/// Electric distances from 1 to every element of the ball of radius `R`,
/// computed once by a single shortest-path sweep of the coned-off graph
/// restricted to that ball.
pub struct ElectricBall {
    index: WordIndex,
    dist: Vec<u8>,
}

impl ElectricBall {
    pub fn new(ctx: &ElectricContext, radius: usize) -> ElectricBall {
        let index = WordIndex::new(ctx.rank, radius);
        let n = index.size() as usize;
        let vcounts: Vec<usize> = ctx.factors.iter().map(|f| f.vertex_count()).collect();
        let cone_base: Vec<usize> = vcounts
            .iter()
            .scan(n, |acc, &v| {
                let b = *acc;
                *acc += v * n;
                Some(b)
            })
            .collect();
        let total = n + vcounts.iter().map(|v| v * n).sum::<usize>();
        assert!(total < u32::MAX as usize, "ball too large");
        let mut dist = vec![u8::MAX; total];
        let all: Vec<Letter> = (0..2 * ctx.rank).map(Letter::from_index).collect();
        let mut q = Buckets::new();
        dist[0] = 0;
        q.push(0, 0);
        let mut g = Vec::with_capacity(radius + 1);
        let mut h = Vec::with_capacity(radius + 1);
        let mut member = Vec::with_capacity(radius + 1);
        while let Some((d, node)) = q.pop() {
            let node = node as usize;
            if d != dist[node] as usize {
                continue;
            }
            let mut relax = |m: usize, nd: usize, q: &mut Buckets| {
                if nd < dist[m] as usize {
                    dist[m] = nd as u8;
                    q.push(nd, m as u32);
                }
            };
            if node < n {
                index.decode(node as u64, &mut g);
                for &x in &all {
                    h.clear();
                    h.extend_from_slice(&g);
                    crate::words::push_reduced(&mut h, x);
                    if h.len() <= radius {
                        relax(index.encode(&h) as usize, d + 2, &mut q);
                    }
                }
                for (j, &base) in cone_base.iter().enumerate() {
                    let (v, r) = ctx.coset_key(j, &g);
                    relax(base + v * n + index.encode(&r) as usize, d + 1, &mut q);
                }
            } else {
                let j = cone_base.iter().rposition(|&b| b <= node).unwrap();
                let off = node - cone_base[j];
                let (v, ridx) = (off / n, off % n);
                let mut r = Vec::new();
                index.decode(ridx as u64, &mut r);
                // Members g with g⁻¹ = u·r, u a reduced path base → v.
                let f = &ctx.factors[j];
                let budget = radius.saturating_sub(r.len());
                let mut paths = Vec::new();
                enumerate_paths(f, 0, v, budget, r.first().copied(), &mut Vec::new(), &mut paths);
                for u in paths {
                    member.clear();
                    member.extend(crate::words::invert_letters(&r));
                    member.extend(crate::words::invert_letters(&u));
                    if member.len() <= radius {
                        relax(index.encode(&member) as usize, d + 1, &mut q);
                    }
                }
            }
        }
        dist.truncate(n);
        ElectricBall { index, dist }
    }

    pub fn index(&self) -> &WordIndex {
        &self.index
    }

    pub fn distance(&self, w: &[Letter]) -> Option<usize> {
        if w.len() > self.index.radius {
            return None;
        }
        Some(self.dist[self.index.encode(w) as usize] as usize / 2)
    }

    pub fn distance_at(&self, idx: u64) -> usize {
        self.dist[idx as usize] as usize / 2
    }
}

/// Reduced paths in `f` from `at` ending at `target`, of length ≤ `budget`,
/// whose last letter does not cancel against `next`.
fn enumerate_paths(
    f: &SubgroupGraph,
    at: usize,
    target: usize,
    budget: usize,
    next: Option<Letter>,
    cur: &mut Vec<Letter>,
    out: &mut Vec<Vec<Letter>>,
) {
    if at == target && cur.last().map(|&l| Some(l.inverse()) != next).unwrap_or(true) {
        out.push(cur.clone());
    }
    if cur.len() == budget {
        return;
    }
    for idx in 0..2 * f.rank_ambient() {
        let l = Letter::from_index(idx);
        if cur.last() == Some(&l.inverse()) {
            continue;
        }
        if let Some(nb) = f.read(at, &[l]) {
            cur.push(l);
            enumerate_paths(f, nb, target, budget, next, cur, out);
            cur.pop();
        }
    }
}

// ---------------------------------------------------------------------------
// Flaring experiments

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlareOptions {
    pub cap: usize,
    pub factor: f64,
    /// Require `factor·L₀ < max` rather than `≤`.
    pub strict: bool,
    /// Keep iterating to the cap after the exponent is found.
    pub full_trajectory: bool,
}

impl Default for FlareOptions {
    fn default() -> Self {
        FlareOptions { cap: 20, factor: 3.0, strict: true, full_trajectory: false }
    }
}

impl FlareOptions {
    fn meets(&self, base: usize, value: usize) -> bool {
        let lhs = self.factor * base as f64;
        if self.strict {
            lhs < value as f64
        } else {
            lhs <= value as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlareStep {
    pub k: usize,
    pub fwd_el: usize,
    pub bwd_el: usize,
    pub fwd_hr: usize,
    pub bwd_hr: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlareMode {
    Conjugacy,
    Word,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlareReport {
    pub input: String,
    pub mode: FlareMode,
    /// `k = 0` row first.
    pub trajectory: Vec<FlareStep>,
    pub minimal_exponent: Option<usize>,
}

impl FlareReport {
    pub fn base(&self) -> FlareStep {
        self.trajectory[0]
    }

    pub fn step(&self, k: usize) -> Option<&FlareStep> {
        self.trajectory.iter().find(|s| s.k == k)
    }
}

fn require_inverse(phi: &Morphism) -> Result<Morphism, ElectricError> {
    Ok(phi.inverse()?)
}

/// Least `M ≤ cap` with `factor·‖α‖ (<|≤) max(‖φ^M α‖, ‖φ^{-M} α‖)`.
pub fn conjugacy_flaring_exponent(
    ctx: &ElectricContext,
    phi: &Morphism,
    alpha: &CyclicWord,
    opts: &FlareOptions,
) -> Result<FlareReport, ElectricError> {
    if ctx.carries(alpha) {
        return Err(ElectricError::Carried(alpha.to_string()));
    }
    let inv = require_inverse(phi)?;
    let el0 = ctx.electric_length_cyclic(alpha.letters())?;
    let hr0 = ctx.nonfactor_count(alpha.letters())?;
    let mut trajectory = vec![FlareStep { k: 0, fwd_el: el0, bwd_el: el0, fwd_hr: hr0, bwd_hr: hr0 }];
    let mut fwd = alpha.letters().to_vec();
    let mut bwd = fwd.clone();
    let mut minimal = None;
    for k in 1..=opts.cap {
        fwd = crate::graphs::cyclically_tighten(phi.apply_letters(&fwd));
        bwd = crate::graphs::cyclically_tighten(inv.apply_letters(&bwd));
        let step = FlareStep {
            k,
            fwd_el: ctx.electric_length_cyclic(&fwd)?,
            bwd_el: ctx.electric_length_cyclic(&bwd)?,
            fwd_hr: ctx.nonfactor_count(&fwd)?,
            bwd_hr: ctx.nonfactor_count(&bwd)?,
        };
        trajectory.push(step);
        if minimal.is_none() && opts.meets(el0, step.fwd_el.max(step.bwd_el)) {
            minimal = Some(k);
            if !opts.full_trajectory {
                break;
            }
        }
    }
    Ok(FlareReport { input: alpha.as_word().to_string(), mode: FlareMode::Conjugacy, trajectory, minimal_exponent: minimal })
}

/// Word version for a lift `Φ`: `factor·|w| (<|≤) max(|Φ^n w|, |Φ^{-n} w|)`.
pub fn word_flaring_exponent(
    ctx: &ElectricContext,
    phi: &Morphism,
    w: &FreeWord,
    opts: &FlareOptions,
) -> Result<FlareReport, ElectricError> {
    if ctx.in_factor(w) {
        return Err(ElectricError::InFactor(w.to_string()));
    }
    let inv = require_inverse(phi)?;
    let el0 = ctx.electric_length(w.letters())?;
    let hr0 = ctx.nonfactor_count(w.letters())?;
    let mut trajectory = vec![FlareStep { k: 0, fwd_el: el0, bwd_el: el0, fwd_hr: hr0, bwd_hr: hr0 }];
    let mut fwd = w.letters().to_vec();
    let mut bwd = fwd.clone();
    let mut minimal = None;
    for k in 1..=opts.cap {
        fwd = phi.apply_letters(&fwd);
        bwd = inv.apply_letters(&bwd);
        let step = FlareStep {
            k,
            fwd_el: ctx.electric_length(&fwd)?,
            bwd_el: ctx.electric_length(&bwd)?,
            fwd_hr: ctx.nonfactor_count(&fwd)?,
            bwd_hr: ctx.nonfactor_count(&bwd)?,
        };
        trajectory.push(step);
        if minimal.is_none() && opts.meets(el0, step.fwd_el.max(step.bwd_el)) {
            minimal = Some(k);
            if !opts.full_trajectory {
                break;
            }
        }
    }
    Ok(FlareReport { input: w.to_string(), mode: FlareMode::Word, trajectory, minimal_exponent: minimal })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlareSummary {
    pub reports: Vec<FlareReport>,
    /// Max of the minimal exponents, when every input flared.
    pub uniform: Option<usize>,
    pub failures: Vec<String>,
}

fn summarize(reports: Vec<FlareReport>) -> FlareSummary {
    let failures: Vec<String> = reports.iter().filter(|r| r.minimal_exponent.is_none()).map(|r| r.input.clone()).collect();
    let uniform = if failures.is_empty() { Some(reports.iter().filter_map(|r| r.minimal_exponent).max().unwrap_or(0)) } else { None };
    FlareSummary { reports, uniform, failures }
}

pub fn strict_flaring_exponent(
    ctx: &ElectricContext,
    phi: &Morphism,
    words: &[FreeWord],
    opts: &FlareOptions,
) -> Result<FlareSummary, ElectricError> {
    let reports = words.iter().map(|w| word_flaring_exponent(ctx, phi, w, opts)).collect::<Result<Vec<_>, _>>()?;
    Ok(summarize(reports))
}

pub fn conjugacy_flaring_sample(
    ctx: &ElectricContext,
    phi: &Morphism,
    sample: &[CyclicWord],
    opts: &FlareOptions,
) -> Result<FlareSummary, ElectricError> {
    let reports = sample.iter().map(|a| conjugacy_flaring_exponent(ctx, phi, a, opts)).collect::<Result<Vec<_>, _>>()?;
    Ok(summarize(reports))
}

/// Cyclic words with `1..=max_nonfactor` letters outside the factors, whose
/// factor blocks between them are reduced words of length ≤ `max_block`
/// over the factor letters; canonical and sorted.
pub fn enumerate_classes(ctx: &ElectricContext, max_nonfactor: usize, max_block: usize) -> Result<Vec<CyclicWord>, ElectricError> {
    let fo = ctx.factor_of()?;
    let outside: Vec<Letter> = (0..2 * ctx.rank).map(Letter::from_index).filter(|l| fo[l.gen()].is_none()).collect();
    let inside: Vec<Letter> = (0..2 * ctx.rank).map(Letter::from_index).filter(|l| fo[l.gen()].is_some()).collect();
    let mut blocks: Vec<Vec<Letter>> = vec![Vec::new()];
    let mut frontier: Vec<Vec<Letter>> = vec![Vec::new()];
    for _ in 0..max_block {
        let mut next = Vec::new();
        for b in &frontier {
            for &x in &inside {
                if b.last() != Some(&x.inverse()) {
                    let mut c = b.clone();
                    c.push(x);
                    next.push(c);
                }
            }
        }
        blocks.extend(next.iter().cloned());
        frontier = next;
    }
    let mut out: BTreeSet<CyclicWord> = BTreeSet::new();
    for n in 1..=max_nonfactor {
        // Canonical forms start at a least letter; fixing the first outside
        // letter's slot at position 0 of the sequence covers every class.
        let mut seq: Vec<(usize, usize)> = vec![(0, 0); n];
        loop {
            let mut word = Vec::new();
            for &(o, b) in &seq {
                word.push(outside[o]);
                word.extend_from_slice(&blocks[b]);
            }
            if crate::words::is_reduced(&word) && word[0] != word[word.len() - 1].inverse() {
                out.insert(CyclicWord::from_letters(&word));
            }
            // odometer
            let mut i = n;
            loop {
                if i == 0 {
                    break;
                }
                i -= 1;
                seq[i].1 += 1;
                if seq[i].1 == blocks.len() {
                    seq[i].1 = 0;
                    seq[i].0 += 1;
                    if seq[i].0 == outside.len() {
                        seq[i].0 = 0;
                        continue;
                    }
                }
                break;
            }
            if seq.iter().all(|&(o, b)| o == 0 && b == 0) {
                break;
            }
        }
    }
    Ok(out.into_iter().collect())
}

/// Drops classes carried by `ps` (the path system `⟨Z, ρ̂⟩`).
pub fn exclude_carried(sample: Vec<CyclicWord>, ps: &PathSystem) -> (Vec<CyclicWord>, Vec<CyclicWord>) {
    sample.into_iter().partition(|a| !ps.carries_class(a))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreeOfFour {
    pub input: String,
    pub mode: FlareMode,
    pub n: usize,
    pub base: usize,
    /// `φ^n, φ^{-n}, ψ^n, ψ^{-n}` images.
    pub values: [usize; 4],
    pub bound: f64,
    pub meeting: usize,
    pub passed: bool,
}

/// Conjugacy mode counts values `≥ 3‖α‖`; word mode counts values `> 2|w|`.
pub fn three_of_four_test(
    ctx: &ElectricContext,
    phi: &Morphism,
    psi: &Morphism,
    input: &FreeWord,
    n: usize,
    mode: FlareMode,
) -> Result<ThreeOfFour, ElectricError> {
    let maps = [phi.clone(), phi.inverse()?, psi.clone(), psi.inverse()?];
    let (base, factor, strict) = match mode {
        FlareMode::Conjugacy => {
            let a = CyclicWord::new(input);
            if ctx.carries(&a) {
                return Err(ElectricError::Carried(a.to_string()));
            }
            (ctx.electric_length_cyclic(a.letters())?, 3.0, false)
        }
        FlareMode::Word => {
            if ctx.in_factor(input) {
                return Err(ElectricError::InFactor(input.to_string()));
            }
            (ctx.electric_length(input.letters())?, 2.0, true)
        }
    };
    let mut values = [0usize; 4];
    for (i, m) in maps.iter().enumerate() {
        let mut cur = match mode {
            FlareMode::Conjugacy => CyclicWord::new(input).letters().to_vec(),
            FlareMode::Word => input.letters().to_vec(),
        };
        for _ in 0..n {
            cur = m.apply_letters(&cur);
            if mode == FlareMode::Conjugacy {
                cur = crate::graphs::cyclically_tighten(cur);
            }
        }
        values[i] = match mode {
            FlareMode::Conjugacy => ctx.electric_length_cyclic(&cur)?,
            FlareMode::Word => ctx.electric_length(&cur)?,
        };
    }
    let opts = FlareOptions { cap: n, factor, strict, full_trajectory: false };
    let meeting = values.iter().filter(|&&v| opts.meets(base, v)).count();
    Ok(ThreeOfFour { input: input.to_string(), mode, n, base, values, bound: factor * base as f64, meeting, passed: meeting >= 3 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparabilityReport {
    pub k_low: f64,
    pub k_high: f64,
    /// `max(K_high, 1/K_low)`
    pub k: f64,
    pub ratios: Vec<(String, usize, usize)>,
}

/// Empirical bounds on `|α|_{H_r} / ‖α‖_el` over a sample, for a rose map.
pub fn comparability_bounds(
    ctx: &ElectricContext,
    f: &GraphMap,
    filt: &Filtration,
    r: usize,
    sample: &[CyclicWord],
) -> Result<ComparabilityReport, ElectricError> {
    if !f.graph().is_rose() {
        return Err(ElectricError::NotRose);
    }
    let mut ratios = Vec::new();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for a in sample {
        if ctx.carries(a) {
            return Err(ElectricError::Carried(a.to_string()));
        }
        let hr = filt.stratum_length(a.letters(), r);
        let el = ctx.electric_length_cyclic(a.letters())?;
        let q = hr as f64 / el as f64;
        lo = lo.min(q);
        hi = hi.max(q);
        ratios.push((a.as_word().to_string(), hr, el));
    }
    let k = if ratios.is_empty() { 1.0 } else { hi.max(1.0 / lo) };
    Ok(ComparabilityReport { k_low: lo, k_high: hi, k, ratios })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::words::Basis;

    fn ctx3() -> ElectricContext {
        ElectricContext::basis_aligned(3, &[vec![0], vec![1]]).unwrap()
    }

    fn ctx4() -> ElectricContext {
        ElectricContext::basis_aligned(4, &[vec![0, 1]]).unwrap()
    }

    fn house() -> Morphism {
        Morphism::parse(&Basis::standard(4), &["a", "b", "cad", "c"], Some(&["a", "b", "d", "ADc"])).unwrap()
    }

    #[test]
    fn closed_form_examples() {
        let b = Basis::standard(3);
        let c = ctx3();
        assert_eq!(c.electric_length_word(&b.parse("aaaaab").unwrap()).unwrap(), 2);
        assert_eq!(c.electric_length_word(&b.parse("aaa").unwrap()).unwrap(), 1);
        assert_eq!(c.electric_length_word(&FreeWord::identity()).unwrap(), 0);
        let b4 = Basis::standard(4);
        let c4 = ctx4();
        assert_eq!(c4.electric_length_conjugacy(&b4.parse_cyclic("cad").unwrap()).unwrap(), 3);
        assert_eq!(c4.electric_length_conjugacy(&b4.parse_cyclic("abA").unwrap()).unwrap(), 0);
        assert_eq!(c4.electric_length_conjugacy(&b4.parse_cyclic("caaad").unwrap()).unwrap(), 3);
    }

    #[test]
    fn oracle_examples() {
        let b = Basis::standard(3);
        let c = ctx3();
        let lim = OracleLimits::default();
        assert_eq!(bfs_electric_oracle(&c, &b.parse("aaaaab").unwrap(), lim).unwrap(), 2);
        assert_eq!(bfs_electric_oracle(&c, &b.parse("c").unwrap(), lim).unwrap(), 1);
        let long = b.parse(&"ab".repeat(7)).unwrap();
        assert!(matches!(bfs_electric_oracle(&c, &long, lim), Err(ElectricError::CapExceeded { .. })));
        // Non-aligned peripheral subgroup ⟨abA⟩: bbb is not in a conjugate, length 3.
        let h = crate::subgroups::fold_stallings(2, &[Basis::standard(2).parse("abA").unwrap()]).unwrap();
        let nc = ElectricContext::from_subgroups(2, vec![h]);
        assert_eq!(nc.electric_length(&[]), Err(ElectricError::NotAligned));
        let bb = Basis::standard(2);
        assert_eq!(bfs_electric_oracle(&nc, &bb.parse("bbb").unwrap(), lim).unwrap(), 3);
        assert_eq!(bfs_electric_oracle(&nc, &bb.parse("abbbA").unwrap(), lim).unwrap(), 1);
    }

    #[test]
    fn word_index_round_trip() {
        let idx = WordIndex::new(2, 4);
        assert_eq!(idx.size(), 1 + 4 + 12 + 36 + 108);
        let mut buf = Vec::new();
        for i in 0..idx.size() {
            idx.decode(i, &mut buf);
            assert!(crate::words::is_reduced(&buf));
            assert_eq!(idx.encode(&buf), i);
        }
    }

    #[test]
    fn ball_agrees_with_tube_oracle() {
        let c = ctx3();
        let ball = ElectricBall::new(&c, 5);
        let mut w = Vec::new();
        for i in 0..ball.index().size() {
            ball.index().decode(i, &mut w);
            let fw = FreeWord::from_reduced(w.clone());
            assert_eq!(ball.distance_at(i), bfs_electric_oracle(&c, &fw, OracleLimits::default()).unwrap(), "{fw}");
        }
    }

    #[test]
    fn flaring_of_c() {
        let b = Basis::standard(4);
        let r = conjugacy_flaring_exponent(&ctx4(), &house(), &b.parse_cyclic("c").unwrap(), &FlareOptions::default()).unwrap();
        assert_eq!(r.minimal_exponent, Some(2));
        assert_eq!(r.step(2).unwrap().fwd_el, 5);
        let ns = FlareOptions { strict: false, ..FlareOptions::default() };
        let r = conjugacy_flaring_exponent(&ctx4(), &house(), &b.parse_cyclic("c").unwrap(), &ns).unwrap();
        assert_eq!(r.minimal_exponent, Some(1));
        let err = conjugacy_flaring_exponent(&ctx4(), &house(), &b.parse_cyclic("abA").unwrap(), &FlareOptions::default());
        assert!(matches!(err, Err(ElectricError::Carried(_))));
    }

    #[test]
    fn strict_flaring_words() {
        let b = Basis::standard(4);
        let opts = FlareOptions { factor: 2.0, ..FlareOptions::default() };
        let s = strict_flaring_exponent(&ctx4(), &house(), &[b.parse("c").unwrap(), b.parse("ca").unwrap()], &opts).unwrap();
        assert_eq!(s.reports[0].minimal_exponent, Some(1));
        assert!(s.uniform.is_some());
        assert!(matches!(strict_flaring_exponent(&ctx4(), &house(), &[b.parse("a").unwrap()], &opts), Err(ElectricError::InFactor(_))));
    }

    #[test]
    fn class_enumeration() {
        let c = ctx4();
        let s = enumerate_classes(&c, 1, 1).unwrap();
        // c, d, C, D alone, or followed by one of a, A, b, B.
        assert_eq!(s.len(), 20);
        let s2 = enumerate_classes(&c, 2, 1).unwrap();
        assert!(s2.iter().all(|a| !c.carries(a)));
        assert!(s2.contains(&Basis::standard(4).parse_cyclic("cadB").unwrap()));
    }

    #[test]
    fn comparison_ratios() {
        let b = Basis::standard(4);
        let f = GraphMap::from_morphism(&house());
        let filt = Filtration::new(4, vec![vec![0], vec![1], vec![2, 3]]).unwrap();
        let r = comparability_bounds(&ctx4(), &f, &filt, 2, &[b.parse_cyclic("cadac").unwrap(), b.parse_cyclic("c").unwrap()]).unwrap();
        assert_eq!(r.ratios[0], ("accad".to_string(), 3, 5));
        assert!((r.k_low - 0.6).abs() < 1e-12 && (r.k_high - 1.0).abs() < 1e-12);
        assert!(comparability_bounds(&ctx4(), &f, &filt, 2, &[b.parse_cyclic("ab").unwrap()]).is_err());
    }
}
