//! Marked graphs, graph maps and their train-track invariants.
//!
//! An oriented edge is a [`Letter`] whose generator index is the edge id, so a
//! rose on `n` petals and the free basis of rank `n` share one alphabet.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::words::{invert_letters, is_reduced, push_reduced, reduce_letters, FreeWord, Letter, Morphism};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("vertex {0} out of range")]
    VertexOutOfRange(usize),
    #[error("edge {0} out of range")]
    EdgeOutOfRange(usize),
    #[error("edges do not concatenate at position {0}")]
    NotConcatenable(usize),
    #[error("path starts at vertex {found}, expected {expected}")]
    WrongStart { expected: usize, found: usize },
    #[error("image of edge {0} is not tightened")]
    UntightenedImage(usize),
    #[error("image of edge {edge} does not join the images of its endpoints")]
    EndpointMismatch { edge: usize },
    #[error("expected {expected} entries, found {found}")]
    Arity { expected: usize, found: usize },
    #[error("filtration is not a partition of the edges: {0}")]
    BadFiltration(String),
    #[error("filtration not invariant: image of edge {edge} leaves G_{stratum}")]
    NotInvariant { edge: usize, stratum: usize },
    #[error("stratum {0} out of range")]
    StratumOutOfRange(usize),
    #[error("matrix is empty or not square")]
    BadMatrix,
    #[error("matrix is reducible")]
    Reducible,
    #[error("stratum {0} is not exponentially growing")]
    NotExponential(usize),
    #[error("graph maps act on different graphs")]
    GraphMismatch,
}

/// Finite graph with oriented edges; `edges[e] = (initial, terminal)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkedGraph {
    vertex_count: usize,
    edges: Vec<(usize, usize)>,
    /// Word in the ambient basis read along each edge (tree edges read `1`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    marking: Option<Vec<FreeWord>>,
}

impl MarkedGraph {
    pub fn new(vertex_count: usize, edges: Vec<(usize, usize)>) -> Result<MarkedGraph, GraphError> {
        for &(u, v) in &edges {
            for x in [u, v] {
                if x >= vertex_count {
                    return Err(GraphError::VertexOutOfRange(x));
                }
            }
        }
        Ok(MarkedGraph { vertex_count, edges, marking: None })
    }

    /// One vertex, `n` loops, edge `i` marked by generator `i`.
    pub fn rose(n: usize) -> MarkedGraph {
        MarkedGraph { vertex_count: 1, edges: vec![(0, 0); n], marking: Some((0..n).map(FreeWord::generator).collect()) }
    }

    pub fn with_marking(mut self, marking: Vec<FreeWord>) -> Result<MarkedGraph, GraphError> {
        if marking.len() != self.edges.len() {
            return Err(GraphError::Arity { expected: self.edges.len(), found: marking.len() });
        }
        self.marking = Some(marking);
        Ok(self)
    }

    pub fn marking(&self) -> Option<&[FreeWord]> {
        self.marking.as_deref()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn is_rose(&self) -> bool {
        self.vertex_count == 1
    }

    pub fn init(&self, l: Letter) -> usize {
        let (u, v) = self.edges[l.gen()];
        if l.is_inverse() {
            v
        } else {
            u
        }
    }

    pub fn term(&self, l: Letter) -> usize {
        self.init(l.inverse())
    }

    /// All oriented edges, in letter order.
    pub fn directions(&self) -> Vec<Letter> {
        (0..2 * self.edges.len()).map(Letter::from_index).collect()
    }

    pub fn directions_at(&self, v: usize) -> Vec<Letter> {
        self.directions().into_iter().filter(|&d| self.init(d) == v).collect()
    }

    pub fn valence(&self, v: usize) -> usize {
        self.directions_at(v).len()
    }

    fn check_letters(&self, start: usize, letters: &[Letter]) -> Result<usize, GraphError> {
        if start >= self.vertex_count {
            return Err(GraphError::VertexOutOfRange(start));
        }
        let mut at = start;
        for (i, &l) in letters.iter().enumerate() {
            if l.gen() >= self.edges.len() {
                return Err(GraphError::EdgeOutOfRange(l.gen()));
            }
            if self.init(l) != at {
                return Err(GraphError::NotConcatenable(i));
            }
            at = self.term(l);
        }
        Ok(at)
    }

    pub fn path(&self, start: usize, letters: Vec<Letter>) -> Result<EdgePath, GraphError> {
        let end = self.check_letters(start, &letters)?;
        Ok(EdgePath { start, end, edges: letters })
    }

    /// Path from the first edge's initial vertex (vertex 0 when empty).
    pub fn path_from_letters(&self, letters: Vec<Letter>) -> Result<EdgePath, GraphError> {
        let start = letters.first().map(|&l| self.init(l)).unwrap_or(0);
        self.path(start, letters)
    }

    pub fn tighten_path(&self, p: &EdgePath) -> Result<EdgePath, GraphError> {
        self.check_letters(p.start, &p.edges)?;
        Ok(EdgePath { start: p.start, end: p.end, edges: reduce_letters(&p.edges) })
    }

    /// True when `letters` is a closed immersed loop read cyclically.
    pub fn is_circuit(&self, letters: &[Letter]) -> bool {
        match (letters.first(), letters.last()) {
            (Some(&f), Some(&l)) => {
                self.check_letters(self.init(f), letters).map(|end| end == self.init(f)).unwrap_or(false)
                    && is_reduced(letters)
                    && f != l.inverse()
            }
            _ => false,
        }
    }
}

/// Edge path; `edges` may be empty, in which case `start == end`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgePath {
    pub start: usize,
    pub end: usize,
    pub edges: Vec<Letter>,
}

impl EdgePath {
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn inverse(&self) -> EdgePath {
        EdgePath { start: self.end, end: self.start, edges: invert_letters(&self.edges) }
    }
}

/// Ordered partition of the edges into strata `H_1, …, H_K` (0-based here).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Filtration {
    strata: Vec<Vec<usize>>,
    stratum_of: Vec<usize>,
    /// Index `k` such that `G_k` realizes the caller's free factor system.
    realizes: Option<usize>,
}

impl Filtration {
    pub fn new(edge_count: usize, strata: Vec<Vec<usize>>) -> Result<Filtration, GraphError> {
        let mut stratum_of = vec![usize::MAX; edge_count];
        for (k, s) in strata.iter().enumerate() {
            if s.is_empty() {
                return Err(GraphError::BadFiltration(format!("stratum {k} is empty")));
            }
            for &e in s {
                if e >= edge_count {
                    return Err(GraphError::EdgeOutOfRange(e));
                }
                if stratum_of[e] != usize::MAX {
                    return Err(GraphError::BadFiltration(format!("edge {e} listed twice")));
                }
                stratum_of[e] = k;
            }
        }
        if let Some(e) = stratum_of.iter().position(|&k| k == usize::MAX) {
            return Err(GraphError::BadFiltration(format!("edge {e} missing")));
        }
        Ok(Filtration { strata, stratum_of, realizes: None })
    }

    /// Marks `G_k` as the filtration element realizing a free factor system.
    pub fn realizing(mut self, k: usize) -> Result<Filtration, GraphError> {
        if k >= self.strata.len() {
            return Err(GraphError::StratumOutOfRange(k));
        }
        self.realizes = Some(k);
        Ok(self)
    }

    pub fn realizes(&self) -> Option<usize> {
        self.realizes
    }

    pub fn len(&self) -> usize {
        self.strata.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strata.is_empty()
    }

    pub fn stratum(&self, k: usize) -> &[usize] {
        &self.strata[k]
    }

    pub fn strata(&self) -> &[Vec<usize>] {
        &self.strata
    }

    pub fn stratum_of(&self, edge: usize) -> usize {
        self.stratum_of[edge]
    }

    /// Highest stratum crossed; `None` for the trivial path.
    pub fn height(&self, letters: &[Letter]) -> Option<usize> {
        letters.iter().map(|l| self.stratum_of[l.gen()]).max()
    }

    /// Number of letters of `letters` in stratum `r`.
    pub fn stratum_length(&self, letters: &[Letter], r: usize) -> usize {
        letters.iter().filter(|l| self.stratum_of[l.gen()] == r).count()
    }

    pub fn check_invariance(&self, f: &GraphMap) -> Result<(), GraphError> {
        for e in 0..f.graph.edge_count() {
            let k = self.stratum_of[e];
            if let Some(l) = f.edge_images[e].iter().find(|l| self.stratum_of[l.gen()] > k) {
                let _ = l;
                return Err(GraphError::NotInvariant { edge: e, stratum: k });
            }
        }
        Ok(())
    }
}

/// Cellular map `f: G → G` sending vertices to vertices and edges to tight paths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphMap {
    graph: MarkedGraph,
    vertex_images: Vec<usize>,
    edge_images: Vec<Vec<Letter>>,
}

impl GraphMap {
    pub fn new(graph: MarkedGraph, vertex_images: Vec<usize>, edge_images: Vec<Vec<Letter>>) -> Result<GraphMap, GraphError> {
        if vertex_images.len() != graph.vertex_count() {
            return Err(GraphError::Arity { expected: graph.vertex_count(), found: vertex_images.len() });
        }
        if edge_images.len() != graph.edge_count() {
            return Err(GraphError::Arity { expected: graph.edge_count(), found: edge_images.len() });
        }
        if let Some(&v) = vertex_images.iter().find(|&&v| v >= graph.vertex_count()) {
            return Err(GraphError::VertexOutOfRange(v));
        }
        for (e, img) in edge_images.iter().enumerate() {
            let (u, v) = graph.edges[e];
            let end = graph.check_letters(vertex_images[u], img).map_err(|err| match err {
                GraphError::NotConcatenable(_) => GraphError::EndpointMismatch { edge: e },
                other => other,
            })?;
            if end != vertex_images[v] {
                return Err(GraphError::EndpointMismatch { edge: e });
            }
            if !is_reduced(img) {
                return Err(GraphError::UntightenedImage(e));
            }
        }
        Ok(GraphMap { graph, vertex_images, edge_images })
    }

    /// The topological representative of `phi` on the rose with identity marking.
    pub fn from_morphism(phi: &Morphism) -> GraphMap {
        GraphMap {
            graph: MarkedGraph::rose(phi.rank()),
            vertex_images: vec![0],
            edge_images: phi.images().iter().map(|w| w.letters().to_vec()).collect(),
        }
    }

    /// Reads a rose map back as a morphism (edge `i` = generator `i`).
    pub fn to_morphism(&self) -> Option<Morphism> {
        if !self.graph.is_rose() {
            return None;
        }
        Morphism::new(self.edge_images.iter().map(|v| FreeWord::from_reduced(v.clone())).collect()).ok()
    }

    pub fn graph(&self) -> &MarkedGraph {
        &self.graph
    }

    pub fn vertex_image(&self, v: usize) -> usize {
        self.vertex_images[v]
    }

    pub fn edge_images(&self) -> &[Vec<Letter>] {
        &self.edge_images
    }

    pub fn image(&self, l: Letter) -> Vec<Letter> {
        let w = &self.edge_images[l.gen()];
        if l.is_inverse() {
            invert_letters(w)
        } else {
            w.clone()
        }
    }

    /// Appends `f(l)` to a reduced stack, cancelling as it goes.
    #[inline]
    pub(crate) fn push_image(&self, out: &mut Vec<Letter>, l: Letter) {
        let w = &self.edge_images[l.gen()];
        if l.is_inverse() {
            for &x in w.iter().rev() {
                push_reduced(out, x.inverse());
            }
        } else {
            for &x in w {
                push_reduced(out, x);
            }
        }
    }

    /// `f_#` on a letter sequence assumed to be a path.
    pub fn map_letters(&self, letters: &[Letter]) -> Vec<Letter> {
        let mut out = Vec::with_capacity(letters.len() * 2);
        for &l in letters {
            self.push_image(&mut out, l);
        }
        out
    }

    pub fn map_path(&self, p: &EdgePath) -> EdgePath {
        EdgePath { start: self.vertex_images[p.start], end: self.vertex_images[p.end], edges: self.map_letters(&p.edges) }
    }

    /// `f^k_#`
    pub fn iterate_letters(&self, letters: &[Letter], k: usize) -> Vec<Letter> {
        let mut cur = letters.to_vec();
        for _ in 0..k {
            cur = self.map_letters(&cur);
        }
        cur
    }

    /// `f_#` on a circuit, cyclically tightened.
    pub fn map_circuit(&self, letters: &[Letter]) -> Vec<Letter> {
        cyclically_tighten(self.map_letters(letters))
    }

    /// `self ∘ other`
    pub fn compose(&self, other: &GraphMap) -> Result<GraphMap, GraphError> {
        if self.graph.edges != other.graph.edges || self.graph.vertex_count != other.graph.vertex_count {
            return Err(GraphError::GraphMismatch);
        }
        Ok(GraphMap {
            graph: self.graph.clone(),
            vertex_images: other.vertex_images.iter().map(|&v| self.vertex_images[v]).collect(),
            edge_images: other.edge_images.iter().map(|img| self.map_letters(img)).collect(),
        })
    }

    pub fn power(&self, k: usize) -> GraphMap {
        let mut out = GraphMap {
            graph: self.graph.clone(),
            vertex_images: (0..self.graph.vertex_count).collect(),
            edge_images: (0..self.graph.edge_count()).map(|e| vec![Letter::new(e, false)]).collect(),
        };
        for _ in 0..k {
            out = self.compose(&out).expect("same graph");
        }
        out
    }

    /// Direction map `Tf`: first edge of `f(d)`; `None` when `d` is collapsed.
    pub fn direction_image(&self, d: Letter) -> Option<Letter> {
        let w = &self.edge_images[d.gen()];
        if d.is_inverse() {
            w.last().map(|l| l.inverse())
        } else {
            w.first().copied()
        }
    }
}

/// Cyclic tightening of a reduced letter sequence (drops `x … x⁻¹` wrappers).
pub fn cyclically_tighten(mut v: Vec<Letter>) -> Vec<Letter> {
    let n = v.len();
    let mut k = 0;
    while 2 * k + 1 < n && v[k] == v[n - 1 - k].inverse() {
        k += 1;
    }
    v.truncate(n - k);
    v.drain(..k);
    v
}

// ---------------------------------------------------------------------------
// Bounded cancellation and protected images

/// Heads of `f_#(γ)` for reduced paths `γ` starting with a given direction.
/// Each trie node remembers the shortest `γ` producing a head through it.
#[derive(Debug, Clone)]
struct HeadTrie {
    // node -> (child letter -> node)
    children: Vec<BTreeMap<Letter, usize>>,
    min_len: Vec<usize>,
}

impl HeadTrie {
    fn new() -> HeadTrie {
        HeadTrie { children: vec![BTreeMap::new()], min_len: vec![usize::MAX] }
    }

    fn insert(&mut self, head: &[Letter], len: usize) {
        let mut node = 0;
        self.min_len[0] = self.min_len[0].min(len);
        for &l in head {
            node = match self.children[node].get(&l) {
                Some(&c) => c,
                None => {
                    self.children.push(BTreeMap::new());
                    self.min_len.push(usize::MAX);
                    let c = self.children.len() - 1;
                    self.children[node].insert(l, c);
                    c
                }
            };
            self.min_len[node] = self.min_len[node].min(len);
        }
    }

    /// Longest common prefix of `w` with a stored head whose path length is ≤ `budget`.
    fn longest_match(&self, w: &[Letter], budget: usize) -> usize {
        let mut node = 0;
        let mut depth = 0;
        for &l in w {
            match self.children[node].get(&l) {
                Some(&c) if self.min_len[c] <= budget => {
                    node = c;
                    depth += 1;
                }
                _ => break,
            }
        }
        depth
    }

    /// Max common prefix between a head here and one in `other`, subject to a
    /// combined path-length budget.
    fn max_common(&self, other: &HeadTrie, budget: usize) -> usize {
        let mut best = 0;
        let mut stack = vec![(0usize, 0usize, 0usize)];
        while let Some((a, b, depth)) = stack.pop() {
            best = best.max(depth);
            for (l, &ca) in &self.children[a] {
                if let Some(&cb) = other.children[b].get(l) {
                    if self.min_len[ca] + other.min_len[cb] <= budget {
                        stack.push((ca, cb, depth + 1));
                    }
                }
            }
        }
        best
    }
}

/// Tries of image heads for every direction, from paths of length ≤ `depth`.
#[derive(Debug, Clone)]
struct HeadTable {
    tries: Vec<HeadTrie>,
    truncation: usize,
}

impl HeadTable {
    fn build(f: &GraphMap, depth: usize, truncation: usize) -> HeadTable {
        let g = f.graph();
        let mut tries: Vec<HeadTrie> = (0..2 * g.edge_count()).map(|_| HeadTrie::new()).collect();
        for d in g.directions() {
            let mut img = Vec::new();
            f.push_image(&mut img, d);
            let trie = &mut tries[d.index()];
            Self::dfs(f, d, 1, depth, truncation, &img, trie);
        }
        HeadTable { tries, truncation }
    }

    fn dfs(f: &GraphMap, last: Letter, len: usize, depth: usize, trunc: usize, img: &[Letter], trie: &mut HeadTrie) {
        trie.insert(&img[..img.len().min(trunc)], len);
        if len == depth {
            return;
        }
        let g = f.graph();
        let v = g.term(last);
        for d in g.directions_at(v) {
            if d == last.inverse() {
                continue;
            }
            let mut next = img.to_vec();
            f.push_image(&mut next, d);
            Self::dfs(f, d, len + 1, depth, trunc, &next, trie);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BccReport {
    /// Largest cancellation found at the final scan length.
    pub value: usize,
    /// Total path length `|β| + |γ|` of the final scan.
    pub scan_length: usize,
    /// Two consecutive rounds agreed before the cap.
    pub stable: bool,
    pub cap: usize,
    /// `(scan_length, value)` per round.
    pub rounds: Vec<(usize, usize)>,
}

pub const DEFAULT_BCC_CAP: usize = 8;

/// Bounded cancellation constant by exhaustive scan over splittings `β·γ`
/// with `|β| + |γ| ≤ L`, doubling `L` from 2 until two rounds agree.
pub fn bcc_constant(f: &GraphMap) -> BccReport {
    bcc_constant_with_cap(f, DEFAULT_BCC_CAP)
}

pub fn bcc_constant_with_cap(f: &GraphMap, cap: usize) -> BccReport {
    let cap = cap.max(2);
    let mut trunc = 8;
    loop {
        let table = HeadTable::build(f, cap - 1, trunc);
        let mut rounds = Vec::new();
        let mut l = 2;
        let mut truncated = false;
        let mut stable = false;
        loop {
            let v = scan_value(f, &table, l);
            truncated |= v >= table.truncation;
            rounds.push((l, v));
            let n = rounds.len();
            if n >= 2 && rounds[n - 1].1 == rounds[n - 2].1 {
                stable = true;
                break;
            }
            if l >= cap {
                break;
            }
            l = (2 * l).min(cap);
        }
        if truncated {
            trunc *= 2;
            continue;
        }
        let &(scan_length, value) = rounds.last().unwrap();
        return BccReport { value, scan_length, stable, cap, rounds };
    }
}

// Cancellation between f_#(β) and f_#(γ) equals the common prefix of
// f_#(β⁻¹) and f_#(γ), where β⁻¹ and γ leave the same vertex in distinct
// directions.
fn scan_value(f: &GraphMap, table: &HeadTable, budget: usize) -> usize {
    let g = f.graph();
    let mut best = 0;
    for v in 0..g.vertex_count() {
        let dirs = g.directions_at(v);
        for (i, &u) in dirs.iter().enumerate() {
            for &y in &dirs[i + 1..] {
                let c = table.tries[u.index()].max_common(&table.tries[y.index()], budget);
                best = best.max(c);
            }
        }
    }
    best
}

/// Position of `f_##(β)` inside `f_#(β)`: the kept window is `image[start..end]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtectedImage {
    pub image: Vec<Letter>,
    pub start: usize,
    pub end: usize,
}

impl ProtectedImage {
    pub fn kept(&self) -> &[Letter] {
        &self.image[self.start..self.end]
    }
}

/// Computes `f_##`: `f_#(β)` minus the longest prefix (suffix) that some
/// extension `P·β` (`β·S`) cancels. Extensions up to the BCC scan length are
/// searched, which is exact once bounded cancellation has stabilized.
#[derive(Debug, Clone)]
pub struct Protector {
    map: GraphMap,
    table: HeadTable,
    bcc: BccReport,
}

impl Protector {
    pub fn new(f: &GraphMap) -> Protector {
        let bcc = bcc_constant(f);
        let table = HeadTable::build(f, bcc.cap - 1, bcc.value + 1);
        Protector { map: f.clone(), table, bcc }
    }

    pub fn bcc(&self) -> &BccReport {
        &self.bcc
    }

    pub fn map(&self) -> &GraphMap {
        &self.map
    }

    fn strip(&self, first: Letter, image: &[Letter]) -> usize {
        let g = self.map.graph();
        g.directions_at(g.init(first))
            .into_iter()
            .filter(|&u| u != first)
            .map(|u| self.table.tries[u.index()].longest_match(image, usize::MAX))
            .max()
            .unwrap_or(0)
    }

    pub fn protected(&self, beta: &[Letter]) -> ProtectedImage {
        let image = self.map.map_letters(beta);
        if beta.is_empty() {
            return ProtectedImage { image, start: 0, end: 0 };
        }
        let left = self.strip(beta[0], &image);
        let right = self.strip(beta[beta.len() - 1].inverse(), &invert_letters(&image));
        let n = image.len();
        let (start, end) = if left + right >= n { (left.min(n), left.min(n)) } else { (left, n - right) };
        ProtectedImage { image, start, end }
    }

    pub fn protected_letters(&self, beta: &[Letter]) -> Vec<Letter> {
        self.protected(beta).kept().to_vec()
    }
}

/// `f_##` applied `k` times (a subpath of `(f^k)_##`).
pub fn iterate_protected(p: &Protector, beta: &[Letter], k: usize) -> Vec<Letter> {
    let mut cur = beta.to_vec();
    for _ in 0..k {
        if cur.is_empty() {
            break;
        }
        cur = p.protected_letters(&cur);
    }
    cur
}

/// `(f^k)_##(β)` computed exactly, without a cancellation table for `f^k`.
///
/// For an extension ray `P` leaving `init(β)`, `R_0 = P` and
/// `R_j = f_#(R_{j-1})` minus the suffix any continuation can cancel is a prefix of
/// `f^j_#(P')` for every `P' ⊇ P`. When `R_k` already disagrees with
/// `f^k_#(β)` the cancellation of every extension of `P` is settled;
/// otherwise `P` is extended by one more edge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtectedPower {
    pub protected: ProtectedImage,
    /// False when some ray reached `max_ray` edges still matching.
    pub exact: bool,
}

/// Ray length that keeps `(f^k)_##` exact for `k ≤ 7` on the test maps.
pub const DEFAULT_MAX_RAY: usize = 256;

pub fn protected_power(p: &Protector, beta: &[Letter], k: usize, max_ray: usize) -> ProtectedPower {
    let f = p.map();
    let image = f.iterate_letters(beta, k);
    if beta.is_empty() {
        return ProtectedPower { protected: ProtectedImage { image, start: 0, end: 0 }, exact: true };
    }
    let (left, lx) = power_strip(p, beta[0], &image, k, max_ray);
    let inv = invert_letters(&image);
    let (right, rx) = power_strip(p, beta[beta.len() - 1].inverse(), &inv, k, max_ray);
    let n = image.len();
    let (start, end) = if left + right >= n { (left.min(n), left.min(n)) } else { (left, n - right) };
    ProtectedPower { protected: ProtectedImage { image, start, end }, exact: lx && rx }
}

fn power_strip(p: &Protector, first: Letter, image: &[Letter], k: usize, max_ray: usize) -> (usize, bool) {
    let f = p.map();
    let g = f.graph();
    let mut best = 0;
    let mut exact = true;
    let mut stack: Vec<Vec<Letter>> = g.directions_at(g.init(first)).into_iter().filter(|&u| u != first).map(|u| vec![u]).collect();
    while let Some(ray) = stack.pop() {
        // Actual cancellation for this finite extension.
        let full = f.iterate_letters(&ray, k);
        best = best.max(crate::words::cancellation(&invert_letters(&full), image));
        let mut reliable = ray.clone();
        for _ in 0..k {
            if reliable.is_empty() {
                break;
            }
            let last = reliable[reliable.len() - 1];
            reliable = f.map_letters(&reliable);
            let cut = p.strip(last.inverse(), &invert_letters(&reliable));
            reliable.truncate(reliable.len().saturating_sub(cut));
        }
        let m = reliable.iter().zip(image).take_while(|(a, b)| a == b).count();
        if m < reliable.len() || m == image.len() {
            best = best.max(m);
            continue;
        }
        if ray.len() >= max_ray {
            exact = false;
            continue;
        }
        let last = ray[ray.len() - 1];
        for d in g.directions_at(g.term(last)) {
            if d != last.inverse() {
                let mut next = ray.clone();
                next.push(d);
                stack.push(next);
            }
        }
    }
    (best, exact)
}

/// Span of the middle segment after tightening `a·b·c`: `Some((s, e))` when
/// `f_#` keeps all of `b` and it sits at `[s, e)`; `None` when `b` is eaten.
pub fn middle_span(a: &[Letter], b: &[Letter], c: &[Letter]) -> Option<(usize, usize)> {
    if b.is_empty() {
        return None;
    }
    let left = crate::words::cancellation(a, b);
    let right = crate::words::cancellation(b, c);
    if left > 0 || right > 0 {
        return None;
    }
    Some((a.len(), a.len() + b.len()))
}

// ---------------------------------------------------------------------------
// Transition matrices and Perron-Frobenius data

pub type IntMatrix = Vec<Vec<u64>>;

pub fn transition_matrix(f: &GraphMap, filt: &Filtration, k: usize) -> Result<IntMatrix, GraphError> {
    if k >= filt.len() {
        return Err(GraphError::StratumOutOfRange(k));
    }
    filt.check_invariance(f)?;
    let edges = filt.stratum(k);
    let mut m = vec![vec![0u64; edges.len()]; edges.len()];
    for (j, &ej) in edges.iter().enumerate() {
        for l in &f.edge_images[ej] {
            if let Some(i) = edges.iter().position(|&e| e == l.gen()) {
                m[i][j] += 1;
            }
        }
    }
    Ok(m)
}

/// Strong connectivity of the support digraph; a zero 1×1 matrix is reducible.
pub fn is_irreducible(m: &IntMatrix) -> bool {
    let n = m.len();
    if n == 0 || m.iter().any(|r| r.len() != n) {
        return false;
    }
    let reach = |forward: bool| -> bool {
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let w = if forward { m[i][j] } else { m[j][i] };
                if w > 0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.iter().all(|&s| s)
    };
    if n == 1 {
        return m[0][0] > 0;
    }
    reach(true) && reach(false)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerronFrobenius {
    pub eigenvalue: f64,
    /// Max-normalized, strictly positive.
    pub eigenvector: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

const PF_STEP_TOL: f64 = 1e-12;
const PF_MAX_ITER: usize = 1_000_000;

/// Power iteration on `I + M` (aperiodic even when `M` is not) from the all-ones vector.
pub fn pf_eigenvalue(m: &IntMatrix) -> Result<PerronFrobenius, GraphError> {
    let n = m.len();
    if n == 0 || m.iter().any(|r| r.len() != n) {
        return Err(GraphError::BadMatrix);
    }
    if !is_irreducible(m) {
        return Err(GraphError::Reducible);
    }
    let apply = |v: &[f64]| -> Vec<f64> { (0..n).map(|i| (0..n).map(|j| m[i][j] as f64 * v[j]).sum()).collect() };
    let mut v = vec![1.0; n];
    let mut iterations = 0;
    while iterations < PF_MAX_ITER {
        iterations += 1;
        let mv = apply(&v);
        let mut w: Vec<f64> = v.iter().zip(&mv).map(|(a, b)| a + b).collect();
        let norm = w.iter().cloned().fold(0.0, f64::max);
        w.iter_mut().for_each(|x| *x /= norm);
        let delta = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = w;
        if delta <= PF_STEP_TOL {
            break;
        }
    }
    let mv = apply(&v);
    let ratios: Vec<f64> = mv.iter().zip(&v).map(|(a, b)| a / b).collect();
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let eigenvalue = (lo + hi) / 2.0;
    let residual = mv.iter().zip(&v).map(|(a, b)| (a - eigenvalue * b).abs()).fold(0.0, f64::max);
    Ok(PerronFrobenius { eigenvalue, eigenvector: v, residual, iterations })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StratumClass {
    Zero,
    #[serde(rename = "NEG")]
    Neg,
    #[serde(rename = "EG")]
    Eg,
    /// Nonzero but reducible: the filtration is not maximal here.
    Reducible,
}

impl StratumClass {
    pub fn label(self) -> &'static str {
        match self {
            StratumClass::Zero => "zero",
            StratumClass::Neg => "NEG",
            StratumClass::Eg => "EG",
            StratumClass::Reducible => "reducible",
        }
    }
}

pub const CLASS_TOL: f64 = 1e-9;

pub fn classify_matrix(m: &IntMatrix) -> (StratumClass, Option<PerronFrobenius>) {
    if m.iter().all(|r| r.iter().all(|&x| x == 0)) {
        return (StratumClass::Zero, None);
    }
    match pf_eigenvalue(m) {
        Ok(pf) if pf.eigenvalue > 1.0 + CLASS_TOL => (StratumClass::Eg, Some(pf)),
        Ok(pf) => (StratumClass::Neg, Some(pf)),
        Err(_) => (StratumClass::Reducible, None),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumAnalysis {
    pub index: usize,
    pub edges: Vec<usize>,
    pub matrix: IntMatrix,
    pub irreducible: bool,
    pub class: StratumClass,
    pub pf: Option<PerronFrobenius>,
    /// `G_index` realizes the marked free factor system.
    pub realizes_factor_system: bool,
}

impl StratumAnalysis {
    pub fn eigenvalue(&self) -> Option<f64> {
        self.pf.as_ref().map(|p| p.eigenvalue)
    }
}

pub fn analyze_filtration(f: &GraphMap, filt: &Filtration) -> Result<Vec<StratumAnalysis>, GraphError> {
    filt.check_invariance(f)?;
    (0..filt.len())
        .map(|k| {
            let matrix = transition_matrix(f, filt, k)?;
            let (class, pf) = classify_matrix(&matrix);
            Ok(StratumAnalysis {
                index: k,
                edges: filt.stratum(k).to_vec(),
                irreducible: is_irreducible(&matrix),
                matrix,
                class,
                pf,
                realizes_factor_system: filt.realizes() == Some(k),
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Turns

/// Unordered pair of directions at a common vertex, stored sorted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Turn(pub Letter, pub Letter);

impl Turn {
    pub fn new(a: Letter, b: Letter) -> Turn {
        if a <= b {
            Turn(a, b)
        } else {
            Turn(b, a)
        }
    }

    pub fn is_degenerate(self) -> bool {
        self.0 == self.1
    }

    /// The turn `(ē, e')` taken by a path crossing `e` then `e'`.
    pub fn crossing(e: Letter, next: Letter) -> Turn {
        Turn::new(e.inverse(), next)
    }
}

/// Nondegenerate turns whose `Tf`-orbit degenerates.
pub fn illegal_turns(f: &GraphMap) -> BTreeSet<Turn> {
    let g = f.graph();
    let mut illegal = BTreeSet::new();
    for v in 0..g.vertex_count() {
        let dirs = g.directions_at(v);
        for (i, &a) in dirs.iter().enumerate() {
            for &b in &dirs[i + 1..] {
                let mut t = Turn::new(a, b);
                let mut seen = HashSet::new();
                loop {
                    if t.is_degenerate() {
                        illegal.insert(Turn::new(a, b));
                        break;
                    }
                    if !seen.insert(t) {
                        break;
                    }
                    match (f.direction_image(t.0), f.direction_image(t.1)) {
                        (Some(x), Some(y)) => t = Turn::new(x, y),
                        _ => break,
                    }
                }
            }
        }
    }
    illegal
}

/// Cached turn data for legality queries against one map and filtration.
#[derive(Debug, Clone)]
pub struct TurnStructure {
    illegal: BTreeSet<Turn>,
    stratum_of: Vec<usize>,
}

impl TurnStructure {
    pub fn new(f: &GraphMap, filt: &Filtration) -> TurnStructure {
        TurnStructure { illegal: illegal_turns(f), stratum_of: (0..f.graph().edge_count()).map(|e| filt.stratum_of(e)).collect() }
    }

    pub fn illegal(&self) -> &BTreeSet<Turn> {
        &self.illegal
    }

    pub fn is_illegal(&self, t: Turn) -> bool {
        self.illegal.contains(&t)
    }

    /// The turn is illegal and one of its directions lies in `H_r`.
    pub fn is_illegal_in(&self, t: Turn, r: usize) -> bool {
        (self.stratum_of[t.0.gen()] == r || self.stratum_of[t.1.gen()] == r) && self.is_illegal(t)
    }

    pub fn height(&self, letters: &[Letter]) -> Option<usize> {
        letters.iter().map(|l| self.stratum_of[l.gen()]).max()
    }

    pub fn is_r_legal(&self, r: usize, letters: &[Letter]) -> bool {
        self.height(letters) == Some(r) && letters.windows(2).all(|w| !self.is_illegal_in(Turn::crossing(w[0], w[1]), r))
    }

    /// Positions `i` such that the turn between letters `i` and `i+1` is an
    /// illegal turn involving `H_r`.
    pub fn illegal_positions(&self, r: usize, letters: &[Letter]) -> Vec<usize> {
        letters.windows(2).enumerate().filter(|(_, w)| self.is_illegal_in(Turn::crossing(w[0], w[1]), r)).map(|(i, _)| i).collect()
    }
}

pub fn is_r_legal(f: &GraphMap, filt: &Filtration, r: usize, p: &EdgePath) -> bool {
    TurnStructure::new(f, filt).is_r_legal(r, &p.edges)
}

// ---------------------------------------------------------------------------
// Nielsen paths

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NielsenPath {
    pub path: EdgePath,
    pub period: usize,
    pub indivisible: bool,
}

/// Calls `visit` on every nonempty tight path of length ≤ `max_len`, in
/// (start vertex, letter) lexicographic DFS order.
pub fn for_each_tight_path(g: &MarkedGraph, max_len: usize, mut visit: impl FnMut(&[Letter])) {
    fn go(g: &MarkedGraph, cur: &mut Vec<Letter>, max_len: usize, visit: &mut dyn FnMut(&[Letter])) {
        visit(cur);
        if cur.len() == max_len {
            return;
        }
        let last = *cur.last().unwrap();
        for d in g.directions_at(g.term(last)) {
            if d != last.inverse() {
                cur.push(d);
                go(g, cur, max_len, visit);
                cur.pop();
            }
        }
    }
    if max_len == 0 {
        return;
    }
    for d in g.directions() {
        let mut cur = vec![d];
        go(g, &mut cur, max_len, &mut visit);
    }
}

/// Periodic Nielsen paths with endpoints at vertices, length ≤ `max_len` and
/// period ≤ `max_period`, sorted by (length, start, letters).
pub fn find_nielsen_paths(f: &GraphMap, max_len: usize, max_period: usize) -> Vec<NielsenPath> {
    let g = f.graph();
    let powers: Vec<GraphMap> = (1..=max_period).map(|j| f.power(j)).collect();
    let mut found: Vec<(Vec<Letter>, usize)> = Vec::new();
    for_each_tight_path(g, max_len, |p| {
        let (u, v) = (g.init(p[0]), g.term(p[p.len() - 1]));
        for (j, fj) in powers.iter().enumerate() {
            if fj.vertex_image(u) == u && fj.vertex_image(v) == v && fj.map_letters(p) == p {
                found.push((p.to_vec(), j + 1));
                break;
            }
        }
    });
    let set: HashSet<&[Letter]> = found.iter().map(|(p, _)| p.as_slice()).collect();
    let mut out: Vec<NielsenPath> = found
        .iter()
        .map(|(p, period)| {
            let divisible = (1..p.len()).any(|i| set.contains(&p[..i]) && set.contains(&p[i..]));
            NielsenPath { path: g.path_from_letters(p.clone()).expect("enumerated path"), period: *period, indivisible: !divisible }
        })
        .collect();
    out.sort_by(|a, b| (a.path.len(), a.path.start, &a.path.edges).cmp(&(b.path.len(), b.path.start, &b.path.edges)));
    out
}

// ---------------------------------------------------------------------------
// Relative train track conditions

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RttReport {
    pub stratum: usize,
    pub max_len: usize,
    /// (i) `f_#` of every sampled r-legal path is r-legal.
    pub legal_images: bool,
    /// (ii) connecting paths of height `< r` map to nontrivial paths.
    pub connecting_paths: bool,
    /// (iii) `Tf` keeps `H_r` directions in `H_r`.
    pub directions: bool,
    pub witnesses: Vec<String>,
}

impl RttReport {
    pub fn passed(&self) -> bool {
        self.legal_images && self.connecting_paths && self.directions
    }
}

pub fn check_rtt_conditions(f: &GraphMap, filt: &Filtration, r: usize, max_len: usize) -> RttReport {
    let g = f.graph();
    let ts = TurnStructure::new(f, filt);
    let mut report = RttReport { stratum: r, max_len, legal_images: true, connecting_paths: true, directions: true, witnesses: Vec::new() };
    for e in filt.stratum(r) {
        for d in [Letter::new(*e, false), Letter::new(*e, true)] {
            match f.direction_image(d) {
                Some(x) if filt.stratum_of(x.gen()) == r => {}
                other => {
                    report.directions = false;
                    report.witnesses.push(format!("(iii) Tf({d:?}) = {other:?}"));
                }
            }
        }
    }
    // Connecting paths: maximal paths in G_{r-1} whose endpoints meet H_r.
    let touches_r: HashSet<usize> = filt.stratum(r).iter().flat_map(|&e| [g.edges()[e].0, g.edges()[e].1]).collect();
    for_each_tight_path(g, max_len, |p| {
        if report.witnesses.len() > 16 {
            return;
        }
        if ts.is_r_legal(r, p) && !ts.is_r_legal(r, &f.map_letters(p)) {
            report.legal_images = false;
            report.witnesses.push(format!("(i) {}", FreeWord::from_reduced(p.to_vec())));
        }
        let below = ts.height(p).map(|h| h < r).unwrap_or(false);
        if below && touches_r.contains(&g.init(p[0])) && touches_r.contains(&g.term(p[p.len() - 1])) && f.map_letters(p).is_empty() {
            report.connecting_paths = false;
            report.witnesses.push(format!("(ii) {}", FreeWord::from_reduced(p.to_vec())));
        }
    });
    report
}

/// Serializable form: edge ids are 1-based, negative ids reverse an edge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphMapSpec {
    pub vertex_count: usize,
    pub edges: Vec<(usize, usize)>,
    pub vertex_images: Vec<usize>,
    pub edge_images: Vec<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strata: Option<Vec<Vec<usize>>>,
}

pub fn letter_from_signed_id(id: i64, edge_count: usize) -> Result<Letter, GraphError> {
    let e = id.unsigned_abs() as usize;
    if id == 0 || e > edge_count {
        return Err(GraphError::EdgeOutOfRange(e));
    }
    Ok(Letter::new(e - 1, id < 0))
}

pub fn letter_to_signed_id(l: Letter) -> i64 {
    let e = l.gen() as i64 + 1;
    if l.is_inverse() {
        -e
    } else {
        e
    }
}

impl GraphMapSpec {
    pub fn build(&self) -> Result<(GraphMap, Option<Filtration>), GraphError> {
        let g = MarkedGraph::new(self.vertex_count, self.edges.clone())?;
        let n = g.edge_count();
        let images = self
            .edge_images
            .iter()
            .map(|ids| ids.iter().map(|&id| letter_from_signed_id(id, n)).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        let f = GraphMap::new(g, self.vertex_images.clone(), images)?;
        let filt = match &self.strata {
            Some(s) => {
                let zero_based = s
                    .iter()
                    .map(|st| {
                        st.iter()
                            .map(|&e| if e == 0 || e > n { Err(GraphError::EdgeOutOfRange(e)) } else { Ok(e - 1) })
                            .collect::<Result<Vec<_>, _>>()
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Some(Filtration::new(n, zero_based)?)
            }
            None => None,
        };
        Ok((f, filt))
    }

    pub fn from_map(f: &GraphMap, filt: Option<&Filtration>) -> GraphMapSpec {
        GraphMapSpec {
            vertex_count: f.graph.vertex_count,
            edges: f.graph.edges.clone(),
            vertex_images: f.vertex_images.clone(),
            edge_images: f.edge_images.iter().map(|img| img.iter().map(|&l| letter_to_signed_id(l)).collect()).collect(),
            strata: filt.map(|fl| fl.strata.iter().map(|s| s.iter().map(|e| e + 1).collect()).collect()),
        }
    }
}

/// Occurrence digraph: `e → e'` when `f(e)` crosses `e'`.
pub fn occurrence_digraph(f: &GraphMap) -> Vec<BTreeSet<usize>> {
    f.edge_images.iter().map(|img| img.iter().map(|l| l.gen()).collect()).collect()
}

/// Edges reachable from `start` in the occurrence digraph (including `start`).
pub fn reachable_edges(f: &GraphMap, start: usize) -> BTreeSet<usize> {
    let dg = occurrence_digraph(f);
    let mut seen = BTreeSet::from([start]);
    let mut stack = vec![start];
    while let Some(e) = stack.pop() {
        for &x in &dg[e] {
            if seen.insert(x) {
                stack.push(x);
            }
        }
    }
    seen
}

/// Counts occurrences (either orientation) of each edge in a letter sequence.
pub fn edge_counts(letters: &[Letter], edge_count: usize) -> Vec<usize> {
    let mut c = vec![0; edge_count];
    for l in letters {
        c[l.gen()] += 1;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::words::Basis;

    fn b4() -> Basis {
        Basis::standard(4)
    }

    fn house() -> GraphMap {
        let m = Morphism::parse(&b4(), &["a", "b", "cad", "c"], None).unwrap();
        GraphMap::from_morphism(&m)
    }

    fn house_filtration() -> Filtration {
        Filtration::new(4, vec![vec![0], vec![1], vec![2, 3]]).unwrap()
    }

    fn w(s: &str) -> Vec<Letter> {
        b4().parse_letters(s).unwrap()
    }

    fn show(l: &[Letter]) -> String {
        b4().render(l)
    }

    #[test]
    fn tightening() {
        let g = MarkedGraph::rose(4);
        let p = g.path(0, w("abBc")).unwrap();
        assert_eq!(show(&g.tighten_path(&p).unwrap().edges), "ac");
        assert!(g.tighten_path(&g.path(0, w("aA")).unwrap()).unwrap().is_empty());
        let two = MarkedGraph::new(2, vec![(0, 1), (1, 0)]).unwrap();
        assert_eq!(two.path(0, w("aa")), Err(GraphError::NotConcatenable(1)));
    }

    #[test]
    fn map_path_examples() {
        let f = house();
        assert_eq!(show(&f.map_letters(&w("c"))), "cad");
        assert_eq!(show(&f.map_letters(&w("Cd"))), "DA");
        assert!(f.map_letters(&[]).is_empty());
    }

    #[test]
    fn bcc_values() {
        let id = GraphMap::from_morphism(&Morphism::identity(3));
        assert_eq!(bcc_constant(&id).value, 0);
        let fib = GraphMap::from_morphism(&Morphism::parse(&Basis::standard(2), &["ab", "a"], None).unwrap());
        assert_eq!(bcc_constant(&fib).value, 1);
        let r = bcc_constant(&house());
        // f_#(C)·f_#(da) = DAC·cada: the junction loses two letters on each side.
        assert_eq!(r.value, 2);
        assert!(r.stable);
    }

    #[test]
    fn protected_images() {
        let p = Protector::new(&house());
        let pi = p.protected(&w("cad"));
        assert_eq!(show(&pi.image), "cadac");
        assert_eq!(show(pi.kept()), "dac");
        assert!(p.protected_letters(&w("a")).is_empty());
        let id = Protector::new(&GraphMap::from_morphism(&Morphism::identity(3)));
        assert_eq!(id.protected_letters(&w("abC")), w("abC"));
    }

    #[test]
    fn transition_and_pf() {
        let f = house();
        let filt = house_filtration();
        assert_eq!(transition_matrix(&f, &filt, 2).unwrap(), vec![vec![1, 1], vec![1, 0]]);
        let pf = pf_eigenvalue(&vec![vec![1, 1], vec![1, 0]]).unwrap();
        assert!((pf.eigenvalue - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-9);
        assert!(pf.residual <= 1e-9);
        assert!((pf_eigenvalue(&vec![vec![2]]).unwrap().eigenvalue - 2.0).abs() < 1e-12);
        assert!((pf_eigenvalue(&vec![vec![0, 1], vec![1, 0]]).unwrap().eigenvalue - 1.0).abs() < 1e-12);
        assert_eq!(pf_eigenvalue(&vec![vec![1, 1], vec![0, 1]]).unwrap_err(), GraphError::Reducible);
    }

    #[test]
    fn analysis_classes() {
        let a = analyze_filtration(&house(), &house_filtration()).unwrap();
        let classes: Vec<_> = a.iter().map(|s| s.class).collect();
        assert_eq!(classes, vec![StratumClass::Neg, StratumClass::Neg, StratumClass::Eg]);
        let bad = Filtration::new(4, vec![vec![0], vec![2], vec![1, 3]]).unwrap();
        assert_eq!(analyze_filtration(&house(), &bad).unwrap_err(), GraphError::NotInvariant { edge: 2, stratum: 1 });
        // A collapsed edge on a two-vertex graph gives a zero stratum.
        let g = MarkedGraph::new(2, vec![(0, 1), (0, 1)]).unwrap();
        let f = GraphMap::new(g, vec![0, 0], vec![vec![], vec![]]).unwrap();
        let filt = Filtration::new(2, vec![vec![0, 1]]).unwrap();
        assert_eq!(analyze_filtration(&f, &filt).unwrap()[0].class, StratumClass::Zero);
    }

    #[test]
    fn turns() {
        let f = house();
        let ill = illegal_turns(&f);
        // Tf: c -> c, C -> D, d -> c, D -> C.
        assert!(ill.contains(&Turn::new(w("c")[0], w("d")[0])));
        assert!(!ill.contains(&Turn::new(w("C")[0], w("D")[0])));
        for t in &ill {
            let top = |l: Letter| l.gen() >= 2;
            assert!(top(t.0) && top(t.1), "{t:?} mixes strata");
        }
        assert!(illegal_turns(&GraphMap::from_morphism(&Morphism::identity(3))).is_empty());
        let filt = house_filtration();
        let ts = TurnStructure::new(&f, &filt);
        assert!(ts.is_r_legal(2, &w("c")));
        assert!(!ts.is_r_legal(2, &w("Cd")));
        assert!(ts.is_r_legal(2, &w("cD")));
        assert!(!ts.is_r_legal(2, &w("ab")));
    }

    #[test]
    fn nielsen_search() {
        let f = house();
        let found = find_nielsen_paths(&f, 3, 1);
        assert!(found.iter().any(|n| n.path.edges == w("a") && n.period == 1 && n.indivisible));
        assert!(found.iter().all(|n| n.path.edges.iter().all(|l| l.gen() < 2)));
        let id = GraphMap::from_morphism(&Morphism::identity(2));
        // 4 + 4·3 + 4·9 tight paths of length ≤ 3.
        assert_eq!(find_nielsen_paths(&id, 3, 1).len(), 52);
    }

    #[test]
    fn rtt_house() {
        let r = check_rtt_conditions(&house(), &house_filtration(), 2, 4);
        assert!(r.passed(), "{:?}", r.witnesses);
        let id = GraphMap::from_morphism(&Morphism::identity(2));
        let filt = Filtration::new(2, vec![vec![0], vec![1]]).unwrap();
        assert!(check_rtt_conditions(&id, &filt, 1, 4).passed());
    }

    #[test]
    fn untightened_image_rejected() {
        let g = MarkedGraph::rose(4);
        let r = GraphMap::new(g, vec![0], vec![w("a"), w("b"), vec![w("c")[0], w("D")[0], w("d")[0]], w("c")]);
        assert_eq!(r.unwrap_err(), GraphError::UntightenedImage(2));
    }

    #[test]
    fn graph_map_spec_round_trip() {
        let f = house();
        let s = GraphMapSpec::from_map(&f, Some(&house_filtration()));
        assert_eq!(s.edge_images[2], vec![3, 1, 4]);
        let (g, filt) = s.build().unwrap();
        assert_eq!(g.edge_images(), f.edge_images());
        assert_eq!(filt.unwrap().strata(), house_filtration().strata());
    }
}
