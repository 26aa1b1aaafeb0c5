//! Stallings graphs of finitely generated subgroups and the subgroup-system
//! algebra built on them: membership, conjugacy, fiber products,
//! malnormality, meets, free factorizations, and nonattracting subgraphs.

use std::collections::{BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphs::{analyze_filtration, find_nielsen_paths, reachable_edges, Filtration, GraphError, GraphMap, MarkedGraph, StratumClass};
use crate::words::{invert_letters, CyclicWord, FreeWord, Letter};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SubgroupError {
    #[error("generator {0} has letters outside rank {1}")]
    RankMismatch(String, usize),
    #[error("stratum {0} is not exponentially growing")]
    NotExponential(usize),
    #[error("edge {0} is not an edge of the graph")]
    NotASubgraph(usize),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Folded graph with edges `(from, generator, to)` and base vertex 0.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "SubgroupGraphSpec", into = "SubgroupGraphSpec")]
pub struct SubgroupGraph {
    rank: usize,
    vertex_count: usize,
    edges: Vec<(usize, usize, usize)>,
    out: Vec<Vec<Option<usize>>>,
    inn: Vec<Vec<Option<usize>>>,
}

/// Serialized form: vertex count, labeled edges, base id (always 0).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgroupGraphSpec {
    pub rank: usize,
    pub vertex_count: usize,
    pub base: usize,
    pub edges: Vec<(usize, usize, usize)>,
}

impl From<SubgroupGraphSpec> for SubgroupGraph {
    fn from(s: SubgroupGraphSpec) -> Self {
        SubgroupGraph::from_parts(s.rank, s.vertex_count, s.base, s.edges)
    }
}

impl From<SubgroupGraph> for SubgroupGraphSpec {
    fn from(g: SubgroupGraph) -> Self {
        SubgroupGraphSpec { rank: g.rank, vertex_count: g.vertex_count, base: 0, edges: g.edges }
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut y = x;
        while self.0[y] != r {
            let next = self.0[y];
            self.0[y] = r;
            y = next;
        }
        r
    }
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (a, b) = (self.find(a), self.find(b));
        if a == b {
            return false;
        }
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        self.0[hi] = lo;
        true
    }
}

fn fold_edges(vertex_count: usize, edges: &[(usize, usize, usize)]) -> Vec<(usize, usize, usize)> {
    let mut uf = UnionFind::new(vertex_count);
    loop {
        let mut changed = false;
        let mut out: HashMap<(usize, usize), usize> = HashMap::new();
        let mut inn: HashMap<(usize, usize), usize> = HashMap::new();
        for &(u, g, v) in edges {
            let (u, v) = (uf.find(u), uf.find(v));
            match out.get(&(u, g)).copied() {
                Some(w) => changed |= uf.union(w, v),
                None => {
                    out.insert((u, g), v);
                }
            }
            let v = uf.find(v);
            let u = uf.find(u);
            match inn.get(&(v, g)).copied() {
                Some(w) => changed |= uf.union(w, u),
                None => {
                    inn.insert((v, g), u);
                }
            }
        }
        if !changed {
            break;
        }
    }
    let set: BTreeSet<(usize, usize, usize)> = edges.iter().map(|&(u, g, v)| (uf.find(u), g, uf.find(v))).collect();
    set.into_iter().collect()
}

/// Repeatedly deletes valence-1 vertices (other than `keep`).
fn trim(vertex_count: usize, mut edges: Vec<(usize, usize, usize)>, keep: Option<usize>) -> Vec<(usize, usize, usize)> {
    loop {
        let mut valence = vec![0usize; vertex_count];
        for &(u, _, v) in &edges {
            valence[u] += 1;
            valence[v] += 1;
        }
        let before = edges.len();
        edges.retain(|&(u, _, v)| {
            let leaf = |x: usize| valence[x] == 1 && Some(x) != keep;
            !(leaf(u) || leaf(v))
        });
        if edges.len() == before {
            return edges;
        }
    }
}

/// `table[v][g]`: the neighbour across the `g`-edge, if any.
type Adjacency = Vec<Vec<Option<usize>>>;

fn adjacency(rank: usize, n: usize, edges: &[(usize, usize, usize)]) -> (Adjacency, Adjacency) {
    let mut out = vec![vec![None; rank]; n];
    let mut inn = vec![vec![None; rank]; n];
    for &(u, g, v) in edges {
        out[u][g] = Some(v);
        inn[v][g] = Some(u);
    }
    (out, inn)
}

/// BFS renumbering from `root`, exploring labels in letter order.
fn canonical(rank: usize, edges: &[(usize, usize, usize)], root: usize) -> (usize, Vec<(usize, usize, usize)>) {
    let n = edges.iter().map(|&(u, _, v)| u.max(v) + 1).max().unwrap_or(0).max(root + 1);
    let (out, inn) = adjacency(rank, n, edges);
    let mut id = vec![usize::MAX; n];
    id[root] = 0;
    let mut order = vec![root];
    let mut i = 0;
    while i < order.len() {
        let v = order[i];
        i += 1;
        for g in 0..rank {
            for nb in [out[v][g], inn[v][g]].into_iter().flatten() {
                if id[nb] == usize::MAX {
                    id[nb] = order.len();
                    order.push(nb);
                }
            }
        }
    }
    let mut e: Vec<(usize, usize, usize)> =
        edges.iter().filter(|&&(u, _, _)| id[u] != usize::MAX).map(|&(u, g, v)| (id[u], g, id[v])).collect();
    e.sort();
    (order.len(), e)
}

impl SubgroupGraph {
    fn from_parts(rank: usize, vertex_count: usize, base: usize, edges: Vec<(usize, usize, usize)>) -> SubgroupGraph {
        let folded = fold_edges(vertex_count.max(base + 1), &edges);
        let trimmed = trim(vertex_count.max(base + 1), folded, Some(base));
        let (vertex_count, edges) = canonical(rank, &trimmed, base);
        let (out, inn) = adjacency(rank, vertex_count, &edges);
        SubgroupGraph { rank, vertex_count, edges, out, inn }
    }

    pub fn trivial(rank: usize) -> SubgroupGraph {
        SubgroupGraph::from_parts(rank, 1, 0, Vec::new())
    }

    pub fn rank_ambient(&self) -> usize {
        self.rank
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn edges(&self) -> &[(usize, usize, usize)] {
        &self.edges
    }

    /// Rank of the subgroup, `E − V + 1`.
    pub fn rank(&self) -> usize {
        self.edges.len() + 1 - self.vertex_count
    }

    pub fn is_trivial(&self) -> bool {
        self.edges.is_empty()
    }

    fn step(&self, v: usize, l: Letter) -> Option<usize> {
        if l.is_inverse() {
            self.inn[v][l.gen()]
        } else {
            self.out[v][l.gen()]
        }
    }

    /// Follows `letters` from `v`; `None` when some edge is missing.
    pub fn read(&self, v: usize, letters: &[Letter]) -> Option<usize> {
        letters.iter().try_fold(v, |at, &l| self.step(at, l))
    }

    /// Reads as far as possible: `(vertex reached, letters consumed)`.
    pub fn read_prefix(&self, v: usize, letters: &[Letter]) -> (usize, usize) {
        let mut at = v;
        for (i, &l) in letters.iter().enumerate() {
            match self.step(at, l) {
                Some(next) => at = next,
                None => return (at, i),
            }
        }
        (at, letters.len())
    }

    pub fn contains_word(&self, w: &FreeWord) -> bool {
        self.read(0, w.letters()) == Some(0)
    }

    /// Reduced paths from the base along a BFS spanning tree.
    pub fn tree_paths(&self) -> Vec<Vec<Letter>> {
        let mut paths: Vec<Option<Vec<Letter>>> = vec![None; self.vertex_count];
        paths[0] = Some(Vec::new());
        let mut queue = VecDeque::from([0]);
        while let Some(v) = queue.pop_front() {
            for idx in 0..2 * self.rank {
                let l = Letter::from_index(idx);
                if let Some(nb) = self.step(v, l) {
                    if paths[nb].is_none() {
                        let mut p = paths[v].clone().unwrap();
                        p.push(l);
                        paths[nb] = Some(p);
                        queue.push_back(nb);
                    }
                }
            }
        }
        paths.into_iter().map(|p| p.unwrap_or_default()).collect()
    }

    /// Free basis read off the spanning tree: one generator per non-tree edge.
    pub fn generators(&self) -> Vec<FreeWord> {
        let paths = self.tree_paths();
        let mut tree_edges = BTreeSet::new();
        for p in &paths {
            if let Some(&l) = p.last() {
                let end = self.read(0, p).unwrap();
                let start = self.step(end, l.inverse()).unwrap();
                tree_edges.insert(if l.is_inverse() { (end, l.gen(), start) } else { (start, l.gen(), end) });
            }
        }
        self.edges
            .iter()
            .filter(|e| !tree_edges.contains(e))
            .map(|&(u, g, v)| {
                let mut w = paths[u].clone();
                w.push(Letter::new(g, false));
                w.extend(invert_letters(&paths[v]));
                FreeWord::reduce(&w)
            })
            .collect()
    }

    /// Core with the base hair removed, or `None` for the trivial subgroup.
    fn hairless_core(&self) -> Option<Vec<(usize, usize, usize)>> {
        let e = trim(self.vertex_count, self.edges.clone(), None);
        if e.is_empty() {
            None
        } else {
            Some(e)
        }
    }

    /// Canonical encoding of the conjugacy class: the least BFS encoding of
    /// the hairless core over all root choices.
    pub fn conjugacy_key(&self) -> Vec<(usize, usize, usize)> {
        match self.hairless_core() {
            None => Vec::new(),
            Some(core) => {
                let verts: BTreeSet<usize> = core.iter().flat_map(|&(u, _, v)| [u, v]).collect();
                verts.into_iter().map(|r| canonical(self.rank, &core, r).1).min().unwrap()
            }
        }
    }

    /// Same subgroup graph rebased at the first vertex of its hairless core.
    pub fn core_representative(&self) -> SubgroupGraph {
        match self.hairless_core() {
            None => SubgroupGraph::trivial(self.rank),
            Some(core) => {
                let root = core.iter().map(|&(u, _, _)| u).min().unwrap();
                SubgroupGraph::from_parts(self.rank, self.vertex_count, root, core)
            }
        }
    }

    pub fn is_conjugate(&self, other: &SubgroupGraph) -> bool {
        self.conjugacy_key() == other.conjugacy_key()
    }

    /// A closed loop reading the cyclic word exists at some vertex.
    pub fn carries(&self, alpha: &CyclicWord) -> bool {
        if alpha.is_empty() {
            return true;
        }
        (0..self.vertex_count).any(|v| self.read(v, alpha.letters()) == Some(v))
    }

    /// Some conjugate of `self` is a subgroup of `other`.
    pub fn is_conjugate_into(&self, other: &SubgroupGraph) -> bool {
        let Some(core) = self.hairless_core() else { return true };
        let root = core[0].0;
        let (out, core_inn) = adjacency(self.rank, self.vertex_count, &core);
        'targets: for w in 0..other.vertex_count {
            let mut image = vec![usize::MAX; self.vertex_count];
            image[root] = w;
            let mut stack = vec![root];
            while let Some(v) = stack.pop() {
                for g in 0..self.rank {
                    for (nb, forward) in [(out[v][g], true), (core_inn[v][g], false)] {
                        let Some(nb) = nb else { continue };
                        let target = if forward { other.out[image[v]][g] } else { other.inn[image[v]][g] };
                        match target {
                            None => continue 'targets,
                            Some(t) if image[nb] == usize::MAX => {
                                image[nb] = t;
                                stack.push(nb);
                            }
                            Some(t) if image[nb] != t => continue 'targets,
                            _ => {}
                        }
                    }
                }
            }
            return true;
        }
        false
    }

    /// Subgroup generated by a subset of the basis: one vertex, one loop per letter.
    pub fn basis_alphabet(&self) -> Option<Vec<usize>> {
        if self.vertex_count == 1 {
            Some(self.edges.iter().map(|&(_, g, _)| g).collect())
        } else {
            None
        }
    }
}

pub fn fold_stallings(rank: usize, generators: &[FreeWord]) -> Result<SubgroupGraph, SubgroupError> {
    let mut edges = Vec::new();
    let mut n = 1;
    for w in generators {
        if let Some(m) = w.max_gen() {
            if m >= rank {
                return Err(SubgroupError::RankMismatch(w.to_string(), rank));
            }
        }
        let ls = w.letters();
        let mut at = 0;
        for (i, &l) in ls.iter().enumerate() {
            let next = if i + 1 == ls.len() {
                0
            } else {
                n += 1;
                n - 1
            };
            edges.push(if l.is_inverse() { (next, l.gen(), at) } else { (at, l.gen(), next) });
            at = next;
        }
    }
    Ok(SubgroupGraph::from_parts(rank, n, 0, edges))
}

pub fn contains_word(h: &SubgroupGraph, w: &FreeWord) -> bool {
    h.contains_word(w)
}

/// Conjugacy classes of subgroups, deduplicated, in canonical order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgroupSystem {
    components: Vec<SubgroupGraph>,
}

impl SubgroupSystem {
    /// Drops trivial components and duplicate conjugacy classes.
    pub fn new(components: Vec<SubgroupGraph>) -> SubgroupSystem {
        let mut keyed: Vec<(_, SubgroupGraph)> = Vec::new();
        for c in components {
            if c.is_trivial() {
                continue;
            }
            let k = c.conjugacy_key();
            if k.is_empty() || keyed.iter().any(|(k2, _)| *k2 == k) {
                continue;
            }
            keyed.push((k, c));
        }
        keyed.sort_by(|a, b| a.0.cmp(&b.0));
        SubgroupSystem { components: keyed.into_iter().map(|(_, c)| c).collect() }
    }

    pub fn from_generators(rank: usize, gens: &[Vec<FreeWord>]) -> Result<SubgroupSystem, SubgroupError> {
        Ok(SubgroupSystem::new(gens.iter().map(|g| fold_stallings(rank, g)).collect::<Result<_, _>>()?))
    }

    pub fn empty() -> SubgroupSystem {
        SubgroupSystem { components: Vec::new() }
    }

    pub fn components(&self) -> &[SubgroupGraph] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn carries(&self, alpha: &CyclicWord) -> bool {
        self.components.iter().any(|c| c.carries(alpha))
    }

    /// Every component is conjugate into some component of `other` (`self ⊏ other`).
    pub fn is_below(&self, other: &SubgroupSystem) -> bool {
        self.components.iter().all(|c| other.components.iter().any(|d| c.is_conjugate_into(d)))
    }

    pub fn keys(&self) -> Vec<Vec<(usize, usize, usize)>> {
        self.components.iter().map(|c| c.conjugacy_key()).collect()
    }
}

pub fn carries_conjugacy(s: &SubgroupSystem, alpha: &CyclicWord) -> bool {
    s.carries(alpha)
}

/// Component of a fiber product with the product vertex used as its base.
#[derive(Debug, Clone)]
struct ProductComponent {
    graph: SubgroupGraph,
    /// Product vertex used as the base of `graph`; `None` when the component
    /// carries no loop.
    anchor: Option<(usize, usize)>,
    contains_base: bool,
}

fn fiber_product(h: &SubgroupGraph, k: &SubgroupGraph) -> Vec<ProductComponent> {
    let nk = k.vertex_count;
    let idx = |u: usize, v: usize| u * nk + v;
    let n = h.vertex_count * nk;
    let mut edges = Vec::new();
    for &(u, g, u2) in &h.edges {
        for v in 0..nk {
            if let Some(v2) = k.out[v][g] {
                edges.push((idx(u, v), g, idx(u2, v2)));
            }
        }
    }
    let mut uf = UnionFind::new(n);
    for &(a, _, b) in &edges {
        uf.union(a, b);
    }
    let mut groups: Vec<Vec<(usize, usize, usize)>> = vec![Vec::new(); n];
    for &e in &edges {
        let r = uf.find(e.0);
        groups[r].push(e);
    }
    let base_root = uf.find(0);
    let mut out = Vec::new();
    for (r, es) in groups.into_iter().enumerate() {
        if es.is_empty() {
            continue;
        }
        let contains_base = r == base_root;
        let core = trim(n, es.clone(), None);
        let core_vertex = core.iter().flat_map(|&(a, _, b)| [a, b]).min().map(|x| (x / nk, x % nk));
        let (graph, anchor) = if contains_base {
            (SubgroupGraph::from_parts(h.rank, n, 0, es), core_vertex.map(|_| (0, 0)))
        } else {
            match core_vertex {
                Some((u, v)) => (SubgroupGraph::from_parts(h.rank, n, idx(u, v), core), core_vertex),
                None => continue,
            }
        };
        out.push(ProductComponent { graph, anchor, contains_base });
    }
    out
}

/// Representatives of the nontrivial intersections `H ∩ K^x`, up to conjugacy.
pub fn intersect_subgroups(h: &SubgroupGraph, k: &SubgroupGraph) -> SubgroupSystem {
    SubgroupSystem::new(fiber_product(h, k).into_iter().map(|c| c.graph.core_representative()).collect())
}

/// `H ∩ K` itself (the base component of the fiber product).
pub fn intersection_at_base(h: &SubgroupGraph, k: &SubgroupGraph) -> SubgroupGraph {
    fiber_product(h, k).into_iter().find(|c| c.contains_base).map(|c| c.graph).unwrap_or_else(|| SubgroupGraph::trivial(h.rank))
}

/// A violation: `left_i ∩ x⁻¹·right_j·x` contains the nontrivial `element`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MalnormalityWitness {
    pub left: usize,
    pub right: usize,
    pub conjugator: FreeWord,
    pub element: FreeWord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MalnormalityVerdict {
    pub malnormal: bool,
    pub witness: Option<MalnormalityWitness>,
    /// Relative mode only: the free factor system lies below both systems.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_precondition: Option<bool>,
}

fn witness(h: &SubgroupGraph, k: &SubgroupGraph, comp: &ProductComponent, i: usize, j: usize) -> MalnormalityWitness {
    let (u, v) = comp.anchor.expect("nontrivial component");
    let p = &h.tree_paths()[u];
    let q = &k.tree_paths()[v];
    let loop_word = comp.graph.generators().into_iter().next().unwrap_or_default();
    // The component is based at (u, v), so its generators are loops there.
    let mut x = q.clone();
    x.extend(invert_letters(p));
    let x = FreeWord::reduce(&x);
    let pw = FreeWord::reduce(p);
    MalnormalityWitness { left: i, right: j, conjugator: x, element: pw.conjugate(&loop_word) }
}

/// `S` is malnormal: `H_i^x ∩ H_j ≠ 1` only when `i = j` and `x ∈ H_i`.
pub fn check_malnormal(s: &SubgroupSystem) -> MalnormalityVerdict {
    let cs = s.components();
    for i in 0..cs.len() {
        for j in i..cs.len() {
            for comp in fiber_product(&cs[i], &cs[j]) {
                if comp.anchor.is_none() || (i == j && comp.contains_base) {
                    continue;
                }
                return MalnormalityVerdict {
                    malnormal: false,
                    witness: Some(witness(&cs[i], &cs[j], &comp, i, j)),
                    relative_precondition: None,
                };
            }
        }
    }
    MalnormalityVerdict { malnormal: true, witness: None, relative_precondition: None }
}

/// Mutual malnormality; with `rel`, intersections carried by `rel` are allowed.
pub fn check_mutual_malnormality(s1: &SubgroupSystem, s2: &SubgroupSystem, rel: Option<&SubgroupSystem>) -> MalnormalityVerdict {
    for (i, h) in s1.components().iter().enumerate() {
        for (j, k) in s2.components().iter().enumerate() {
            for comp in fiber_product(h, k) {
                if comp.anchor.is_none() {
                    continue;
                }
                if let Some(f) = rel {
                    let c = comp.graph.core_representative();
                    if f.components().iter().any(|fc| c.is_conjugate_into(fc)) {
                        continue;
                    }
                }
                return MalnormalityVerdict {
                    malnormal: false,
                    witness: Some(witness(h, k, &comp, i, j)),
                    relative_precondition: rel.map(|f| f.is_below(s1) && f.is_below(s2)),
                };
            }
        }
    }
    MalnormalityVerdict { malnormal: true, witness: None, relative_precondition: rel.map(|f| f.is_below(s1) && f.is_below(s2)) }
}

/// Subgroup system together with the free-factor metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreeFactorSystem {
    system: SubgroupSystem,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    complement: Option<SubgroupGraph>,
    basis_aligned: bool,
}

impl FreeFactorSystem {
    pub fn new(system: SubgroupSystem, complement: Option<SubgroupGraph>) -> FreeFactorSystem {
        let alphabets: Option<Vec<Vec<usize>>> = system.components().iter().map(|c| c.basis_alphabet()).collect();
        let basis_aligned = match &alphabets {
            Some(a) => {
                let all: Vec<usize> = a.iter().flatten().copied().collect();
                let set: BTreeSet<usize> = all.iter().copied().collect();
                set.len() == all.len()
            }
            None => false,
        };
        FreeFactorSystem { system, complement, basis_aligned }
    }

    /// Factors generated by disjoint sets of basis letters.
    pub fn basis_aligned_from(rank: usize, alphabets: &[Vec<usize>]) -> Result<FreeFactorSystem, SubgroupError> {
        let gens: Vec<Vec<FreeWord>> = alphabets.iter().map(|a| a.iter().map(|&g| FreeWord::generator(g)).collect()).collect();
        Ok(FreeFactorSystem::new(SubgroupSystem::from_generators(rank, &gens)?, None))
    }

    pub fn system(&self) -> &SubgroupSystem {
        &self.system
    }

    pub fn complement(&self) -> Option<&SubgroupGraph> {
        self.complement.as_ref()
    }

    pub fn is_basis_aligned(&self) -> bool {
        self.basis_aligned
    }

    /// Letter sets of the factors when basis-aligned.
    pub fn alphabets(&self) -> Option<Vec<Vec<usize>>> {
        if !self.basis_aligned {
            return None;
        }
        self.system.components().iter().map(|c| c.basis_alphabet()).collect()
    }

    /// Checks the recorded complement, when there is one.
    pub fn verify(&self, rank: usize) -> Option<bool> {
        self.complement.as_ref().map(|c| verify_free_factorization(rank, self.system.components(), c))
    }
}

/// Components of all pairwise intersections, deduplicated up to conjugacy;
/// classes conjugate into another component are dropped.
pub fn meet_systems(s1: &FreeFactorSystem, s2: &FreeFactorSystem) -> FreeFactorSystem {
    let mut comps = Vec::new();
    for h in s1.system.components() {
        for k in s2.system.components() {
            comps.extend(intersect_subgroups(h, k).components);
        }
    }
    let sys = SubgroupSystem::new(comps);
    let keep: Vec<SubgroupGraph> = sys
        .components()
        .iter()
        .enumerate()
        .filter(|(i, c)| !sys.components().iter().enumerate().any(|(j, d)| j != *i && c.is_conjugate_into(d) && !d.is_conjugate_into(c)))
        .map(|(_, c)| c.clone())
        .collect();
    FreeFactorSystem::new(SubgroupSystem::new(keep), None)
}

/// Ranks add up and the factors with the complement generate the whole group.
pub fn verify_free_factorization(rank: usize, factors: &[SubgroupGraph], complement: &SubgroupGraph) -> bool {
    let total: usize = factors.iter().map(|f| f.rank()).sum::<usize>() + complement.rank();
    if total != rank {
        return false;
    }
    let gens: Vec<FreeWord> = factors.iter().chain(std::iter::once(complement)).flat_map(|f| f.generators()).collect();
    match fold_stallings(rank, &gens) {
        Ok(j) => j.vertex_count() == 1 && j.edges().len() == rank,
        Err(_) => false,
    }
}

/// The nonattracting subgraph `Z` with the optional Nielsen path `ρ̂`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathSystem {
    pub stratum: usize,
    pub z_edges: BTreeSet<usize>,
    /// Indivisible Nielsen path of height `s` (with its period), if found.
    pub rho: Option<(Vec<Letter>, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NielsenCaps {
    pub max_len: usize,
    pub max_period: usize,
}

impl Default for NielsenCaps {
    fn default() -> Self {
        NielsenCaps { max_len: 6, max_period: 2 }
    }
}

pub fn nonattracting_subgraph(f: &GraphMap, filt: &Filtration, s: usize, caps: NielsenCaps) -> Result<PathSystem, SubgroupError> {
    let analysis = analyze_filtration(f, filt)?;
    let st = analysis.get(s).ok_or(GraphError::StratumOutOfRange(s))?;
    if st.class != StratumClass::Eg {
        return Err(SubgroupError::NotExponential(s));
    }
    let hs: BTreeSet<usize> = filt.stratum(s).iter().copied().collect();
    let mut z = BTreeSet::new();
    for a in &analysis {
        if a.index == s || !a.irreducible {
            continue;
        }
        let attracted = a.edges.iter().any(|&e| !reachable_edges(f, e).is_disjoint(&hs));
        if !attracted {
            z.extend(a.edges.iter().copied());
        }
    }
    let rho = find_nielsen_paths(f, caps.max_len, caps.max_period)
        .into_iter()
        .find(|n| n.indivisible && filt.height(&n.path.edges) == Some(s))
        .map(|n| (n.path.edges, n.period));
    Ok(PathSystem { stratum: s, z_edges: z, rho })
}

impl PathSystem {
    fn pieces(&self) -> Vec<Vec<Letter>> {
        match &self.rho {
            Some((r, _)) if !r.is_empty() => vec![r.clone(), invert_letters(r)],
            _ => Vec::new(),
        }
    }

    /// Linear decomposition into `Z` edges and copies of `ρ̂^{±1}`.
    pub fn carries_path(&self, letters: &[Letter]) -> bool {
        let pieces = self.pieces();
        let n = letters.len();
        let mut ok = vec![false; n + 1];
        ok[0] = true;
        for i in 0..n {
            if !ok[i] {
                continue;
            }
            if self.z_edges.contains(&letters[i].gen()) {
                ok[i + 1] = true;
            }
            for p in &pieces {
                if letters[i..].starts_with(p) {
                    ok[i + p.len()] = true;
                }
            }
        }
        ok[n]
    }

    /// Cyclic version: some rotation decomposes (pieces may not wrap past it).
    pub fn carries_circuit(&self, letters: &[Letter]) -> bool {
        if letters.is_empty() {
            return true;
        }
        let mut rot = letters.to_vec();
        for _ in 0..letters.len() {
            if self.carries_path(&rot) {
                return true;
            }
            rot.rotate_left(1);
        }
        false
    }

    pub fn carries_class(&self, alpha: &CyclicWord) -> bool {
        self.carries_circuit(alpha.letters())
    }
}

pub fn carried_by_path_system(ps: &PathSystem, letters: &[Letter]) -> bool {
    ps.carries_path(letters)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoedgeCount {
    pub count: usize,
    pub multi_edge: bool,
}

/// Edges of `G` outside the subgraph `H`.
pub fn coedge_count(g: &MarkedGraph, h_edges: &[usize]) -> Result<CoedgeCount, SubgroupError> {
    if let Some(&e) = h_edges.iter().find(|&&e| e >= g.edge_count()) {
        return Err(SubgroupError::NotASubgraph(e));
    }
    let h: BTreeSet<usize> = h_edges.iter().copied().collect();
    let count = g.edge_count() - h.len();
    Ok(CoedgeCount { count, multi_edge: count >= 2 })
}
