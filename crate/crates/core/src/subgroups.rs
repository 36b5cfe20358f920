//! Finitely generated subgroups of `F_n` as Stallings core graphs, and finite
//! truncations of the quotient graph `G \ Cay(F_n)`.
//!
//! A graph is stored as a slot table: `adj[v][2g]` is the target of the
//! outgoing `a_g` edge at `v` and `adj[v][2g + 1]` the source of the incoming
//! one, so following slot `s` from `v` reads the letter
//! [`Letter::from_slot`](crate::freegroup::Letter::from_slot)`(s)`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::freegroup::{words_up_to, ReducedWord};

/// Default cap on explicit graph sizes and conjugate counts.
pub const DEFAULT_GRAPH_CAP: usize = 2_000_000;

/// A folded, trimmed, connected graph with a base vertex (always vertex 0),
/// labelled canonically by breadth-first search in slot order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "CoreGraphJson", into = "CoreGraphJson")]
pub struct CoreGraph {
    rank: usize,
    adj: Vec<Vec<Option<usize>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Index {
    Finite(usize),
    Infinite,
}

/// A directed edge `(vertex, slot)` of a slot table.
pub type DirectedEdge = (usize, usize);

impl CoreGraph {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn base(&self) -> usize {
        0
    }

    pub fn vertex_count(&self) -> usize {
        self.adj.len()
    }

    /// Number of (undirected) labelled edges; a loop counts once.
    pub fn edge_count(&self) -> usize {
        self.directed_edges().len() / 2
    }

    pub fn neighbor(&self, v: usize, slot: usize) -> Option<usize> {
        self.adj[v][slot]
    }

    pub fn slots(&self) -> &[Vec<Option<usize>>] {
        &self.adj
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].iter().flatten().count()
    }

    /// Every `(v, slot)` with a neighbour; each undirected edge appears in
    /// both orientations.
    pub fn directed_edges(&self) -> Vec<DirectedEdge> {
        let mut out = Vec::new();
        for (v, row) in self.adj.iter().enumerate() {
            for (s, t) in row.iter().enumerate() {
                if t.is_some() {
                    out.push((v, s));
                }
            }
        }
        out
    }

    /// Half-edges `(v, slot)` with no neighbour.
    pub fn missing_half_edges(&self) -> Vec<DirectedEdge> {
        let mut out = Vec::new();
        for (v, row) in self.adj.iter().enumerate() {
            for (s, t) in row.iter().enumerate() {
                if t.is_none() {
                    out.push((v, s));
                }
            }
        }
        out
    }

    /// Follows `w` from the base vertex.
    pub fn read(&self, w: &ReducedWord) -> Option<usize> {
        let mut v = 0;
        for l in w.letters() {
            if l.generator() >= self.rank {
                return None;
            }
            v = self.adj[v][l.slot()]?;
        }
        Some(v)
    }

    /// Whether `w` labels a closed path at the base, i.e. `w ∈ G`.
    pub fn member(&self, w: &ReducedWord) -> bool {
        self.read(w) == Some(0)
    }

    pub fn index(&self) -> Index {
        if self.adj.iter().all(|row| row.iter().all(Option::is_some)) {
            Index::Finite(self.adj.len())
        } else {
            Index::Infinite
        }
    }

    /// Checks the folded/core/connected invariants; used when deserializing.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Spec(m));
        if self.adj.is_empty() {
            return bad("core graph has no base vertex".into());
        }
        for (v, row) in self.adj.iter().enumerate() {
            if row.len() != 2 * self.rank {
                return bad(format!("vertex {v} has {} slots, expected {}", row.len(), 2 * self.rank));
            }
            for (s, t) in row.iter().enumerate() {
                if let Some(t) = *t {
                    if t >= self.adj.len() || self.adj[t][s ^ 1] != Some(v) {
                        return bad(format!("edge ({v}, slot {s}) has no matching reverse edge"));
                    }
                }
            }
            if v != 0 && self.degree(v) < 2 {
                return bad(format!("vertex {v} has degree {} outside the base", self.degree(v)));
            }
        }
        let mut seen = vec![false; self.adj.len()];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(v) = queue.pop_front() {
            for t in self.adj[v].iter().flatten() {
                if !seen[*t] {
                    seen[*t] = true;
                    queue.push_back(*t);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return bad("core graph is not connected".into());
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct CoreGraphJson {
    rank: usize,
    base: usize,
    vertices: usize,
    /// `[from, to, generator]` for each `a_g` edge `from → to`.
    edges: Vec<[usize; 3]>,
}

impl From<CoreGraph> for CoreGraphJson {
    fn from(g: CoreGraph) -> Self {
        let mut edges = Vec::new();
        for (v, row) in g.adj.iter().enumerate() {
            for gen in 0..g.rank {
                if let Some(t) = row[2 * gen] {
                    edges.push([v, t, gen]);
                }
            }
        }
        CoreGraphJson {
            rank: g.rank,
            base: 0,
            vertices: g.adj.len(),
            edges,
        }
    }
}

impl TryFrom<CoreGraphJson> for CoreGraph {
    type Error = Error;

    fn try_from(j: CoreGraphJson) -> Result<Self> {
        if j.base >= j.vertices.max(1) {
            return Err(Error::Spec(format!("base {} out of range", j.base)));
        }
        let n = j.vertices.max(1);
        let mut adj = vec![vec![None; 2 * j.rank]; n];
        for [from, to, gen] in j.edges {
            if from >= n || to >= n || gen >= j.rank {
                return Err(Error::Spec(format!("edge [{from}, {to}, {gen}] out of range")));
            }
            if adj[from][2 * gen].is_some() || adj[to][2 * gen + 1].is_some() {
                return Err(Error::Spec(format!("edge [{from}, {to}, {gen}] clashes with another edge of the same label")));
            }
            adj[from][2 * gen] = Some(to);
            adj[to][2 * gen + 1] = Some(from);
        }
        // Swap the base into position 0 so `validate` sees it there.
        let mut g = CoreGraph { rank: j.rank, adj };
        if j.base != 0 {
            let swap = |v: usize| if v == 0 { j.base } else if v == j.base { 0 } else { v };
            g.adj.swap(0, j.base);
            for row in &mut g.adj {
                for t in row.iter_mut().flatten() {
                    *t = swap(*t);
                }
            }
        }
        g.validate()?;
        Ok(canonical(g.rank, &g.adj, 0))
    }
}

/// Union-find folding state.
struct Folder {
    rank: usize,
    parent: Vec<usize>,
    adj: Vec<Vec<Option<usize>>>,
    pending: Vec<(usize, usize)>,
}

impl Folder {
    fn new(rank: usize, vertices: usize) -> Self {
        Folder {
            rank,
            parent: (0..vertices).collect(),
            adj: vec![vec![None; 2 * rank]; vertices],
            pending: Vec::new(),
        }
    }

    fn add_vertex(&mut self) -> usize {
        self.parent.push(self.parent.len());
        self.adj.push(vec![None; 2 * self.rank]);
        self.parent.len() - 1
    }

    fn find(&mut self, mut v: usize) -> usize {
        while self.parent[v] != v {
            self.parent[v] = self.parent[self.parent[v]];
            v = self.parent[v];
        }
        v
    }

    /// Adds the edge `v --slot--> w` and folds until no label clashes remain.
    fn attach(&mut self, v: usize, slot: usize, w: usize) {
        let (v, w) = (self.find(v), self.find(w));
        match self.adj[v][slot] {
            Some(x) => self.pending.push((x, w)),
            None => self.adj[v][slot] = Some(w),
        }
        match self.adj[w][slot ^ 1] {
            Some(y) => self.pending.push((y, v)),
            None => self.adj[w][slot ^ 1] = Some(v),
        }
        self.drain();
    }

    fn drain(&mut self) {
        while let Some((a, b)) = self.pending.pop() {
            let (a, b) = (self.find(a), self.find(b));
            if a == b {
                continue;
            }
            // Keep the smaller index as representative so the base stays a root.
            let (keep, gone) = if a < b { (a, b) } else { (b, a) };
            self.parent[gone] = keep;
            for s in 0..2 * self.rank {
                if let Some(t) = self.adj[gone][s].take() {
                    match self.adj[keep][s] {
                        Some(t2) => self.pending.push((t, t2)),
                        None => self.adj[keep][s] = Some(t),
                    }
                }
            }
        }
    }

    /// Resolves representatives, trims hanging trees and relabels canonically.
    fn finish(mut self, base: usize) -> CoreGraph {
        let base = self.find(base);
        let n = self.adj.len();
        let mut adj: Vec<Vec<Option<usize>>> = vec![Vec::new(); n];
        for v in 0..n {
            if self.find(v) != v {
                continue;
            }
            let row: Vec<Option<usize>> = (0..2 * self.rank)
                .map(|s| self.adj[v][s].map(|t| self.find(t)))
                .collect();
            adj[v] = row;
        }
        let alive: Vec<bool> = (0..n).map(|v| self.find(v) == v).collect();
        let mut alive = alive;
        let degree = |row: &Vec<Option<usize>>| row.iter().flatten().count();
        let mut stack: Vec<usize> = (0..n).filter(|&v| alive[v] && v != base && degree(&adj[v]) <= 1).collect();
        while let Some(v) = stack.pop() {
            if !alive[v] || v == base || degree(&adj[v]) > 1 {
                continue;
            }
            alive[v] = false;
            for s in 0..2 * self.rank {
                if let Some(t) = adj[v][s].take() {
                    adj[t][s ^ 1] = None;
                    if t != base && degree(&adj[t]) <= 1 {
                        stack.push(t);
                    }
                }
            }
        }
        canonical(self.rank, &adj, base)
    }
}

/// BFS relabelling from `base`, visiting slots in order.
fn canonical(rank: usize, adj: &[Vec<Option<usize>>], base: usize) -> CoreGraph {
    let mut label = vec![usize::MAX; adj.len()];
    let mut order = vec![base];
    label[base] = 0;
    let mut head = 0;
    while head < order.len() {
        let v = order[head];
        head += 1;
        for t in adj[v].iter().flatten() {
            if label[*t] == usize::MAX {
                label[*t] = order.len();
                order.push(*t);
            }
        }
    }
    let adj = order
        .iter()
        .map(|&v| adj[v].iter().map(|t| t.map(|t| label[t])).collect())
        .collect();
    CoreGraph { rank, adj }
}

/// Stallings folding of the bouquet of `generators`. Trivial words are dropped;
/// an empty generating set gives the one-vertex graph with no edges.
pub fn fold(rank: usize, generators: &[ReducedWord]) -> Result<CoreGraph> {
    if rank == 0 {
        return Err(Error::InvalidParameter("rank must be ≥ 1".into()));
    }
    let mut f = Folder::new(rank, 1);
    for g in generators {
        if g.min_rank() > rank {
            return Err(Error::IndexOutOfRange {
                index: g.min_rank() - 1,
                rank,
            });
        }
        let letters = g.letters();
        let mut v = 0;
        for (k, l) in letters.iter().enumerate() {
            let w = if k + 1 == letters.len() { 0 } else { f.add_vertex() };
            f.attach(v, l.slot(), w);
            v = w;
        }
    }
    Ok(f.finish(0))
}

/// The core of the subgroup generated by `w g w⁻¹` for every generator `g` and
/// every reduced `w` with `|w| ≤ depth`.
pub fn normal_closure_exhaustion(
    rank: usize,
    generators: &[ReducedWord],
    depth: usize,
    cap: usize,
) -> Result<CoreGraph> {
    let conjugators = words_up_to(rank, depth, cap)?;
    if conjugators.len().saturating_mul(generators.len()) > cap {
        return Err(Error::ResourceCap {
            what: "conjugate generators",
            cap,
        });
    }
    let mut gens: Vec<ReducedWord> = conjugators
        .iter()
        .flat_map(|w| generators.iter().map(move |g| w.conjugate(g)))
        .collect();
    gens.sort();
    gens.dedup();
    fold(rank, &gens)
}

/// A core graph with `(2n−1)`-branching trees of depth `L` hung on every
/// missing half-edge. Tree vertices at depth `L` form the boundary; their
/// outward half-edges are left open (Dirichlet condition).
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedQuotient {
    pub rank: usize,
    pub core_size: usize,
    pub depth: usize,
    /// Slot table over all vertices, core first.
    pub adj: Vec<Vec<Option<usize>>>,
    /// Tree depth of each vertex (0 on the core).
    pub level: Vec<usize>,
    pub boundary: Vec<usize>,
    /// Core half-edges the trees are attached to.
    pub missing_half_edges: Vec<DirectedEdge>,
}

impl TruncatedQuotient {
    pub fn vertex_count(&self) -> usize {
        self.adj.len()
    }
}

/// Vertex count of [`truncate_quotient`] without building it.
pub fn truncated_size(core: &CoreGraph, depth: usize) -> Option<usize> {
    let m = core.missing_half_edges().len();
    let b = 2 * core.rank() - 1;
    let mut per_tree: usize = 0;
    let mut level: usize = 1;
    for _ in 0..depth {
        per_tree = per_tree.checked_add(level)?;
        level = level.checked_mul(b)?;
    }
    core.vertex_count().checked_add(m.checked_mul(per_tree)?)
}

pub fn truncate_quotient(core: &CoreGraph, depth: usize, cap: usize) -> Result<TruncatedQuotient> {
    let size = truncated_size(core, depth).unwrap_or(usize::MAX);
    if size > cap {
        return Err(Error::ResourceCap {
            what: "truncated quotient",
            cap,
        });
    }
    let rank = core.rank();
    let mut adj = core.slots().to_vec();
    let mut level = vec![0; adj.len()];
    let missing = core.missing_half_edges();
    let mut frontier: Vec<DirectedEdge> = if depth > 0 { missing.clone() } else { Vec::new() };
    for d in 1..=depth {
        let mut next = Vec::new();
        for (v, s) in frontier {
            let t = adj.len();
            adj.push(vec![None; 2 * rank]);
            level.push(d);
            adj[v][s] = Some(t);
            adj[t][s ^ 1] = Some(v);
            if d < depth {
                next.extend((0..2 * rank).filter(|&c| c != s ^ 1).map(|c| (t, c)));
            }
        }
        frontier = next;
    }
    let boundary = if depth == 0 {
        Vec::new()
    } else {
        (0..adj.len()).filter(|&v| level[v] == depth).collect()
    };
    Ok(TruncatedQuotient {
        rank,
        core_size: core.vertex_count(),
        depth,
        adj,
        level,
        boundary,
        missing_half_edges: missing,
    })
}

/// JSON description of a subgroup.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SubgroupSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    pub generators: Vec<String>,
    #[serde(default)]
    pub normal_closure: bool,
    #[serde(default)]
    pub conjugacy_depth: usize,
}

impl SubgroupSpec {
    pub fn new(rank: usize, generators: &[&str]) -> Self {
        SubgroupSpec {
            rank: Some(rank),
            generators: generators.iter().map(|s| s.to_string()).collect(),
            normal_closure: false,
            conjugacy_depth: 0,
        }
    }

    /// The declared rank, or the smallest rank ≥ 2 covering every letter used.
    pub fn effective_rank(&self) -> Result<usize> {
        if let Some(r) = self.rank {
            if r == 0 || r > 26 {
                return Err(Error::Spec(format!("rank must be in 1..=26, got {r}")));
            }
            return Ok(r);
        }
        let mut rank = 2;
        for g in &self.generators {
            let w = ReducedWord::parse(26, g).map_err(|e| Error::Spec(e.to_string()))?;
            rank = rank.max(w.min_rank());
        }
        Ok(rank)
    }

    pub fn words(&self) -> Result<Vec<ReducedWord>> {
        let rank = self.effective_rank()?;
        self.generators
            .iter()
            .map(|g| ReducedWord::parse(rank, g).map_err(|e| Error::Spec(e.to_string())))
            .collect()
    }

    /// Display key used to sort suite results.
    pub fn key(&self) -> String {
        let mut k = format!("<{}>", self.generators.join(","));
        if self.normal_closure {
            k = format!("<{k}>_{}", self.conjugacy_depth);
        }
        k
    }

    pub fn core(&self, cap: usize) -> Result<CoreGraph> {
        let rank = self.effective_rank()?;
        let words = self.words()?;
        if self.normal_closure {
            normal_closure_exhaustion(rank, &words, self.conjugacy_depth, cap)
        } else {
            fold(rank, &words)
        }
    }
}
