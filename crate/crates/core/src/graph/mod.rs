//! Global graph representations: edge lists, symmetric CSR, and the
//! upper/lower triangular split used by the counting kernel.

mod dcsr;
pub mod io;

pub use dcsr::{DcsrBlock, GridCoord, Orientation, Triangle, BLOB_HEADER_BYTES, BLOB_VERSION};

use crate::error::{Error, Result};

/// Largest admissible vertex count (ids are below 2⁴⁸).
pub const MAX_VERTICES: u64 = 1 << 48;

/// A graph as `n` vertices plus a list of `(u, v)` pairs.
///
/// Raw lists may contain self-loops, duplicates and both orientations of an
/// edge; [`canonicalize`] removes all of those.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EdgeList {
    pub n: u64,
    pub edges: Vec<(u64, u64)>,
}

impl EdgeList {
    pub fn new(n: u64, edges: Vec<(u64, u64)>) -> Self {
        EdgeList { n, edges }
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// True when every edge is stored once as `(min, max)`, without
    /// self-loops, in strictly increasing lexicographic order.
    pub fn is_canonical(&self) -> bool {
        self.edges.iter().all(|&(u, v)| u < v && v < self.n)
            && self.edges.windows(2).all(|w| w[0] < w[1])
    }

    /// Applies a relabeling `old -> position[old]` and re-canonicalizes.
    pub fn relabel(&self, position: &[u64]) -> Result<EdgeList> {
        check_permutation(self.n, position)?;
        let edges = self
            .edges
            .iter()
            .map(|&(u, v)| (position[u as usize], position[v as usize]))
            .collect();
        canonicalize(&EdgeList::new(self.n, edges))
    }
}

/// Drops self-loops and duplicates, stores each edge as `(min, max)` and
/// sorts lexicographically.
pub fn canonicalize(raw: &EdgeList) -> Result<EdgeList> {
    if raw.n > MAX_VERTICES {
        return Err(Error::MalformedInput(format!(
            "vertex count {} exceeds 2^48",
            raw.n
        )));
    }
    let mut edges = Vec::with_capacity(raw.edges.len());
    for &(u, v) in &raw.edges {
        if u >= raw.n || v >= raw.n {
            return Err(Error::MalformedInput(format!(
                "edge ({u}, {v}) references a vertex outside [0, {})",
                raw.n
            )));
        }
        if u != v {
            edges.push((u.min(v), u.max(v)));
        }
    }
    edges.sort_unstable();
    edges.dedup();
    Ok(EdgeList::new(raw.n, edges))
}

/// Compressed sparse rows: the neighbors of `v` are
/// `neighbors[offsets[v]..offsets[v + 1]]`, sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsrGraph {
    pub n: u64,
    pub offsets: Vec<u64>,
    pub neighbors: Vec<u64>,
}

impl CsrGraph {
    /// Builds a CSR from per-row lists; each row is sorted here.
    pub fn from_rows(rows: Vec<Vec<u64>>) -> Self {
        let n = rows.len() as u64;
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        offsets.push(0);
        let total = rows.iter().map(Vec::len).sum();
        let mut neighbors = Vec::with_capacity(total);
        for mut row in rows {
            row.sort_unstable();
            neighbors.extend_from_slice(&row);
            offsets.push(neighbors.len() as u64);
        }
        CsrGraph {
            n,
            offsets,
            neighbors,
        }
    }

    pub fn neighbors(&self, v: u64) -> &[u64] {
        let v = v as usize;
        &self.neighbors[self.offsets[v] as usize..self.offsets[v + 1] as usize]
    }

    pub fn degree(&self, v: u64) -> u64 {
        let v = v as usize;
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn degrees(&self) -> Vec<u64> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Number of stored directed entries.
    pub fn nnz(&self) -> u64 {
        self.neighbors.len() as u64
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> + '_ {
        (0..self.n).map(move |v| self.neighbors(v))
    }
}

/// Symmetric CSR of a canonical edge list: every edge lands in both
/// endpoint lists.
pub fn to_csr(g: &EdgeList) -> Result<CsrGraph> {
    let n = usize::try_from(g.n)
        .map_err(|_| Error::MalformedInput(format!("vertex count {} too large", g.n)))?;
    let mut degree = vec![0u64; n + 1];
    for &(u, v) in &g.edges {
        if u >= g.n || v >= g.n {
            return Err(Error::MalformedInput(format!(
                "edge ({u}, {v}) references a vertex outside [0, {})",
                g.n
            )));
        }
        degree[u as usize + 1] += 1;
        degree[v as usize + 1] += 1;
    }
    for i in 1..=n {
        degree[i] += degree[i - 1];
    }
    let offsets = degree;
    let mut cursor = offsets[..n].to_vec();
    let mut neighbors = vec![0u64; offsets[n] as usize];
    for &(u, v) in &g.edges {
        neighbors[cursor[u as usize] as usize] = v;
        cursor[u as usize] += 1;
        neighbors[cursor[v as usize] as usize] = u;
        cursor[v as usize] += 1;
    }
    for v in 0..n {
        neighbors[offsets[v] as usize..offsets[v + 1] as usize].sort_unstable();
    }
    Ok(CsrGraph {
        n: g.n,
        offsets,
        neighbors,
    })
}

fn check_permutation(n: u64, position: &[u64]) -> Result<()> {
    if position.len() as u64 != n {
        return Err(Error::InvalidPermutation(format!(
            "length {} does not match vertex count {n}",
            position.len()
        )));
    }
    let mut seen = vec![false; position.len()];
    for (old, &new) in position.iter().enumerate() {
        if new >= n || std::mem::replace(&mut seen[new as usize], true) {
            return Err(Error::InvalidPermutation(format!(
                "vertex {old} maps to {new}, which is out of range or already taken"
            )));
        }
    }
    Ok(())
}

/// Splits a symmetric CSR into the upper part `U` (entries `(i, j)` with
/// `i < j` after relabeling) and `L = Uᵀ`, both in the relabeled id space.
pub fn split_upper_lower(g: &CsrGraph, position: &[u64]) -> Result<(CsrGraph, CsrGraph)> {
    check_permutation(g.n, position)?;
    let n = g.n as usize;
    let mut upper = vec![Vec::new(); n];
    let mut lower = vec![Vec::new(); n];
    for v in 0..g.n {
        let a = position[v as usize];
        for &u in g.neighbors(v) {
            let b = position[u as usize];
            if b > a {
                upper[a as usize].push(b);
            } else {
                lower[a as usize].push(b);
            }
        }
    }
    Ok((CsrGraph::from_rows(upper), CsrGraph::from_rows(lower)))
}

/// Sequential non-decreasing degree ordering, ties by vertex id:
/// returns `position[old] = new`.
pub fn degree_ordering(g: &CsrGraph) -> Vec<u64> {
    let degrees = g.degrees();
    let mut order: Vec<u64> = (0..g.n).collect();
    order.sort_by_key(|&v| degrees[v as usize]);
    let mut position = vec![0u64; g.n as usize];
    for (new, &old) in order.iter().enumerate() {
        position[old as usize] = new as u64;
    }
    position
}

/// Summary quantities used by the cost model.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct GraphStats {
    pub n: u64,
    pub m: u64,
    pub d_avg: f64,
    pub d_max: u64,
}

impl GraphStats {
    pub fn new(n: u64, m: u64, d_max: u64) -> Self {
        let d_avg = if n == 0 { 0.0 } else { 2.0 * m as f64 / n as f64 };
        GraphStats { n, m, d_avg, d_max }
    }

    pub fn of(g: &CsrGraph) -> Self {
        let d_max = g.degrees().into_iter().max().unwrap_or(0);
        GraphStats::new(g.n, g.nnz() / 2, d_max)
    }
}
