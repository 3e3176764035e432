//! Distributed preprocessing: 1-D block input → cyclic ownership → degree
//! relabeling (distributed counting sort) → 2-D cyclic blocks of `U`, `L`
//! and the task matrix.
//!
//! Every function here is an SPMD step: all ranks call it together.

use crate::error::{Error, Result};
use crate::graph::{CsrGraph, DcsrBlock, GraphStats, GridCoord, Orientation, Triangle};
use crate::transport::{grid_side, Communicator};

/// Adjacency lists of a set of vertices, in the order of `vertices`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LocalAdjacency {
    pub vertices: Vec<u64>,
    pub offsets: Vec<u64>,
    pub neighbors: Vec<u64>,
}

impl LocalAdjacency {
    pub fn from_rows(rows: impl IntoIterator<Item = (u64, Vec<u64>)>) -> Self {
        let mut adj = LocalAdjacency {
            offsets: vec![0],
            ..Default::default()
        };
        for (v, row) in rows {
            adj.vertices.push(v);
            adj.neighbors.extend_from_slice(&row);
            adj.offsets.push(adj.neighbors.len() as u64);
        }
        adj
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn row(&self, idx: usize) -> &[u64] {
        &self.neighbors[self.offsets[idx] as usize..self.offsets[idx + 1] as usize]
    }

    pub fn rows(&self) -> impl Iterator<Item = (u64, &[u64])> + '_ {
        self.vertices
            .iter()
            .enumerate()
            .map(move |(i, &v)| (v, self.row(i)))
    }

    pub fn nnz(&self) -> usize {
        self.neighbors.len()
    }
}

/// A contiguous range of vertices `first..first + adjacency.len()` with
/// their lists: the input distribution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSlice {
    pub n: u64,
    pub first: u64,
    pub adjacency: LocalAdjacency,
}

/// Cuts a global CSR into `p` contiguous blocks of `⌈n/p⌉` vertices.
pub fn block_slices(g: &CsrGraph, p: usize) -> Vec<BlockSlice> {
    let chunk = g.n.div_ceil(p as u64).max(1);
    (0..p as u64)
        .map(|r| {
            let first = (r * chunk).min(g.n);
            let last = ((r + 1) * chunk).min(g.n);
            BlockSlice {
                n: g.n,
                first,
                adjacency: LocalAdjacency::from_rows(
                    (first..last).map(|v| (v, g.neighbors(v).to_vec())),
                ),
            }
        })
        .collect()
}

/// Vertices owned by one rank with their sorted adjacency lists.
///
/// After [`cyclic_redistribute`] ids are original and rank `r` owns exactly
/// the `v` with `v % p == r`, ascending. After [`resolve_neighbor_ids`] the
/// same vertices (same order) carry their degree-ordered ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalSlice {
    pub owner: usize,
    pub p: usize,
    pub n: u64,
    pub adjacency: LocalAdjacency,
}

/// The label a vertex gets when cyclic ownership is made contiguous:
/// rank-major, then position within the rank. Equal-degree vertices keep
/// this order through the degree relabel.
pub fn cyclic_label(v: u64, n: u64, p: u64) -> u64 {
    (v % p) * n.div_ceil(p) + v / p
}

fn encode_words(words: &[u64], out: &mut Vec<u8>) {
    for w in words {
        out.extend_from_slice(&w.to_le_bytes());
    }
}

fn decode_words(bytes: &[u8]) -> Result<Vec<u64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::Protocol(format!(
            "payload of {} bytes is not word aligned",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Moves every vertex `v` and its list to rank `v % p`.
pub fn cyclic_redistribute<C: Communicator>(comm: &mut C, input: BlockSlice) -> Result<LocalSlice> {
    let (me, p) = (comm.rank(), comm.size());
    let count = input.adjacency.len() as u64;

    let expected_first = comm.exscan_sum_vec(vec![count])?[0];
    let total = comm.allreduce_sum_u64(count)?;
    let n = comm.allreduce_max_u64(input.n)?;
    let contiguous = input
        .adjacency
        .vertices
        .iter()
        .enumerate()
        .all(|(i, &v)| v == input.first + i as u64);
    let in_range = input.adjacency.neighbors.iter().all(|&u| u < input.n);
    let local_bad = input.n != n || input.first != expected_first || !contiguous || !in_range;
    if comm.allreduce_max_u64(local_bad as u64)? != 0 || total != n {
        return Err(Error::MalformedDistribution(format!(
            "rank {me}: input blocks do not partition [0, {n}) contiguously \
             (this rank starts at {} with {count} vertices, {total} vertices in total)",
            input.first
        )));
    }

    let mut outgoing = vec![Vec::new(); p];
    for (v, row) in input.adjacency.rows() {
        let buf = &mut outgoing[(v % p as u64) as usize];
        encode_words(&[v, row.len() as u64], buf);
        encode_words(row, buf);
    }
    let incoming = comm.alltoallv_bytes(outgoing)?;

    let mut rows = Vec::new();
    for bytes in incoming {
        let words = decode_words(&bytes)?;
        let mut at = 0;
        while at < words.len() {
            let (v, deg) = (words[at], words.get(at + 1).copied().unwrap_or(u64::MAX));
            let end = (at as u64 + 2).saturating_add(deg);
            if end > words.len() as u64 {
                return Err(Error::Protocol(format!("rank {me}: truncated adjacency record")));
            }
            let mut row = words[at + 2..end as usize].to_vec();
            row.sort_unstable();
            rows.push((v, row));
            at = end as usize;
        }
    }
    rows.sort_unstable_by_key(|(v, _)| *v);
    let owned = if (me as u64) < n { (n - me as u64).div_ceil(p as u64) } else { 0 };
    let ok = rows.len() as u64 == owned
        && rows
            .iter()
            .enumerate()
            .all(|(i, (v, _))| *v == me as u64 + i as u64 * p as u64);
    if !ok {
        return Err(Error::Protocol(format!(
            "rank {me}: received {} vertices, expected the {owned} with residue {me}",
            rows.len()
        )));
    }
    Ok(LocalSlice {
        owner: me,
        p,
        n,
        adjacency: LocalAdjacency::from_rows(rows),
    })
}

/// This rank's shard of the old-id → new-id permutation: the vertices it
/// owns (original ids, ascending) and where each one lands.
#[derive(Debug, Clone, PartialEq)]
pub struct RelabelMap {
    pub owner: usize,
    pub p: usize,
    pub n: u64,
    pub old_ids: Vec<u64>,
    pub new_ids: Vec<u64>,
    pub stats: GraphStats,
}

impl RelabelMap {
    /// New id of an old id owned by this rank.
    pub fn lookup(&self, old: u64) -> Option<u64> {
        if old >= self.n || old % self.p as u64 != self.owner as u64 {
            return None;
        }
        self.new_ids.get((old / self.p as u64) as usize).copied()
    }
}

/// Stable distributed counting sort by degree.
///
/// New id = number of vertices of smaller degree + number of equal-degree
/// vertices on lower ranks + position among this rank's equal-degree
/// vertices in old-id order.
pub fn degree_relabel<C: Communicator>(comm: &mut C, slice: &LocalSlice) -> Result<RelabelMap> {
    let degrees: Vec<u64> = slice
        .adjacency
        .offsets
        .windows(2)
        .map(|w| w[1] - w[0])
        .collect();
    let local_max = degrees.iter().copied().max().unwrap_or(0);
    let d_max = comm.allreduce_max_u64(local_max)?;
    let m2 = comm.allreduce_sum_u64(degrees.iter().sum())?;

    let buckets = usize::try_from(d_max + 1)
        .map_err(|_| Error::Overflow(format!("degree {d_max} too large to bucket")))?;
    let mut histogram = vec![0u64; buckets];
    for &d in &degrees {
        histogram[d as usize] += 1;
    }
    let lower_ranks = comm.exscan_sum_vec(histogram.clone())?;
    let totals = comm.allreduce_sum_vec(histogram)?;

    let mut cursor = Vec::with_capacity(buckets);
    let mut base = 0u64;
    for (d, &total) in totals.iter().enumerate() {
        cursor.push(base + lower_ranks[d]);
        base += total;
    }
    let new_ids = degrees
        .iter()
        .map(|&d| {
            let id = cursor[d as usize];
            cursor[d as usize] += 1;
            id
        })
        .collect();
    Ok(RelabelMap {
        owner: slice.owner,
        p: slice.p,
        n: slice.n,
        old_ids: slice.adjacency.vertices.clone(),
        new_ids,
        stats: GraphStats::new(slice.n, m2 / 2, d_max),
    })
}

/// Rewrites owned vertices and their neighbors into new ids. Neighbors
/// owned elsewhere are resolved by one query/response all-to-all with one
/// query per adjacency entry. Returns the slice and the number of remote
/// queries this rank sent.
pub fn resolve_neighbor_ids<C: Communicator>(
    comm: &mut C,
    slice: &LocalSlice,
    map: &RelabelMap,
) -> Result<(LocalSlice, u64)> {
    let (me, p) = (comm.rank(), comm.size());
    let adj = &slice.adjacency;
    let mut translated = vec![u64::MAX; adj.nnz()];
    let mut queries: Vec<Vec<u64>> = vec![Vec::new(); p];
    let mut waiting: Vec<Vec<usize>> = vec![Vec::new(); p];
    for (slot, &u) in adj.neighbors.iter().enumerate() {
        let owner = (u % p as u64) as usize;
        if owner == me {
            translated[slot] = map.lookup(u).ok_or_else(|| {
                Error::Protocol(format!("rank {me}: no new id for owned vertex {u}"))
            })?;
        } else {
            queries[owner].push(u);
            waiting[owner].push(slot);
        }
    }
    let remote: u64 = queries.iter().map(|q| q.len() as u64).sum();

    let outgoing = queries
        .iter()
        .map(|q| {
            let mut buf = Vec::with_capacity(q.len() * 8);
            encode_words(q, &mut buf);
            buf
        })
        .collect();
    let asked = comm.alltoallv_bytes(outgoing)?;
    let mut replies = Vec::with_capacity(p);
    for (src, bytes) in asked.iter().enumerate() {
        let mut buf = Vec::with_capacity(bytes.len());
        for old in decode_words(bytes)? {
            let new = map.lookup(old).ok_or_else(|| {
                Error::Protocol(format!(
                    "rank {me}: rank {src} asked for unknown vertex {old}"
                ))
            })?;
            buf.extend_from_slice(&new.to_le_bytes());
        }
        replies.push(buf);
    }
    let answers = comm.alltoallv_bytes(replies)?;
    for (owner, bytes) in answers.iter().enumerate() {
        let words = decode_words(bytes)?;
        if words.len() != waiting[owner].len() {
            return Err(Error::Protocol(format!(
                "rank {me}: sent {} queries to rank {owner}, got {} answers",
                waiting[owner].len(),
                words.len()
            )));
        }
        for (&slot, new) in waiting[owner].iter().zip(words) {
            translated[slot] = new;
        }
    }

    let rows = map.new_ids.iter().enumerate().map(|(i, &new)| {
        let mut row =
            translated[adj.offsets[i] as usize..adj.offsets[i + 1] as usize].to_vec();
        row.sort_unstable();
        (new, row)
    });
    Ok((
        LocalSlice {
            owner: slice.owner,
            p: slice.p,
            n: slice.n,
            adjacency: LocalAdjacency::from_rows(rows),
        },
        remote,
    ))
}

/// One rank's share of the 2-D cyclic decomposition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankBlocks {
    pub coord: GridCoord,
    /// `U` entries `(i, j)` with `i ≡ x`, `j ≡ y`; row-major
    pub upper: DcsrBlock,
    /// `L` entries `(k, j)` with `k ≡ x`, `j ≡ y`; column-major
    pub lower: DcsrBlock,
    /// the same `L` entries, row-major: the ⟨j,i,k⟩ task block
    pub tasks: DcsrBlock,
}

/// Routes every relabeled entry to its cyclic owner `(row % side, col % side)`
/// as blob-encoded `U`/`L` shards and assembles this rank's blocks.
pub fn build_2d_blocks<C: Communicator>(
    comm: &mut C,
    slice: &LocalSlice,
    side: u64,
) -> Result<RankBlocks> {
    let (me, p) = (comm.rank(), comm.size());
    if grid_side(p)? != side {
        return Err(Error::Config(format!(
            "{p} ranks cannot form a {side}x{side} grid"
        )));
    }
    let n = slice.n;
    let mut upper: Vec<Vec<(u64, u64)>> = vec![Vec::new(); p];
    let mut lower: Vec<Vec<(u64, u64)>> = vec![Vec::new(); p];
    for (a, row) in slice.adjacency.rows() {
        for &b in row {
            let dest = GridCoord::new(a % side, b % side).rank(side);
            if b > a {
                upper[dest].push((a, b));
            } else if b < a {
                lower[dest].push((a, b));
            } else {
                return Err(Error::MalformedInput(format!("self-loop at vertex {a}")));
            }
        }
    }
    let mut outgoing = Vec::with_capacity(p);
    for (dest, (u, l)) in upper.into_iter().zip(lower).enumerate() {
        let coord = GridCoord::from_rank(dest, side);
        let u = DcsrBlock::from_entries(side, coord, Orientation::RowMajor, Triangle::Upper, n, u)?;
        let l = DcsrBlock::from_entries(side, coord, Orientation::ColumnMajor, Triangle::Lower, n, l)?;
        let mut buf = Vec::with_capacity(u.encoded_len() + l.encoded_len());
        u.encode_into(&mut buf);
        l.encode_into(&mut buf);
        outgoing.push(buf);
    }
    let incoming = comm.alltoallv_bytes(outgoing)?;

    let coord = GridCoord::from_rank(me, side);
    let mut u_entries = Vec::new();
    let mut l_entries = Vec::new();
    for (src, bytes) in incoming.iter().enumerate() {
        let shard_err =
            |e: Error| Error::Protocol(format!("rank {me}: bad shard from rank {src}: {e}"));
        let (u, used) = DcsrBlock::decode_prefix(bytes).map_err(shard_err)?;
        let l = DcsrBlock::decode(&bytes[used..]).map_err(shard_err)?;
        if u.coord != coord || l.coord != coord {
            return Err(Error::Protocol(format!(
                "rank {me} at {coord} received shards addressed to {} / {}",
                u.coord, l.coord
            )));
        }
        u_entries.extend(u.entries());
        l_entries.extend(l.entries());
    }
    let upper = DcsrBlock::from_entries(side, coord, Orientation::RowMajor, Triangle::Upper, n, u_entries)?;
    let lower =
        DcsrBlock::from_entries(side, coord, Orientation::ColumnMajor, Triangle::Lower, n, l_entries)?;
    let tasks = lower.reoriented(Orientation::RowMajor);
    Ok(RankBlocks {
        coord,
        upper,
        lower,
        tasks,
    })
}

/// Per-rank preprocessing output.
#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub blocks: RankBlocks,
    pub relabel: RelabelMap,
    pub remote_queries: u64,
}

/// Runs the whole preprocessing pipeline on one rank.
pub fn preprocess<C: Communicator>(comm: &mut C, input: BlockSlice) -> Result<Preprocessed> {
    let side = grid_side(comm.size())?;
    let cyclic = cyclic_redistribute(comm, input)?;
    let relabel = degree_relabel(comm, &cyclic)?;
    let (relabeled, remote_queries) = resolve_neighbor_ids(comm, &cyclic, &relabel)?;
    let blocks = build_2d_blocks(comm, &relabeled, side)?;
    Ok(Preprocessed {
        blocks,
        relabel,
        remote_queries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{canonicalize, to_csr, EdgeList};
    use crate::transport::{spmd_run, SpmdConfig};

    fn csr(n: u64, edges: &[(u64, u64)]) -> CsrGraph {
        to_csr(&canonicalize(&EdgeList::new(n, edges.to_vec())).unwrap()).unwrap()
    }

    fn cycle(n: u64) -> CsrGraph {
        let edges: Vec<_> = (0..n).map(|v| (v, (v + 1) % n)).collect();
        csr(n, &edges)
    }

    #[test]
    fn cyclic_ownership() {
        let slices = block_slices(&cycle(6), 2);
        let out = spmd_run(SpmdConfig::new(2), |c| cyclic_redistribute(c, slices[c.rank()].clone())).unwrap();
        assert_eq!(out[0].adjacency.vertices, vec![0, 2, 4]);
        assert_eq!(out[1].adjacency.vertices, vec![1, 3, 5]);
        assert_eq!(out[0].adjacency.row(0), &[1, 5]);
    }

    #[test]
    fn single_rank_redistribution_is_identity() {
        let g = cycle(5);
        let slices = block_slices(&g, 1);
        let out = spmd_run(SpmdConfig::new(1), |c| cyclic_redistribute(c, slices[0].clone())).unwrap();
        assert_eq!(out[0].adjacency, slices[0].adjacency);
    }

    #[test]
    fn star_entries_spread_within_max_degree() {
        let n = 40;
        let edges: Vec<_> = (1..n).map(|v| (0, v)).collect();
        let g = csr(n, &edges);
        let p = 4;
        let slices = block_slices(&g, p);
        let out = spmd_run(SpmdConfig::new(p), |c| cyclic_redistribute(c, slices[c.rank()].clone())).unwrap();
        let counts: Vec<usize> = out.iter().map(|s| s.adjacency.nnz()).collect();
        let spread = counts.iter().max().unwrap() - counts.iter().min().unwrap();
        assert!((spread as u64) < n, "{counts:?}");
        assert_eq!(counts.iter().sum::<usize>() as u64, 2 * (n - 1));
    }

    #[test]
    fn rejects_gapped_partition() {
        let g = cycle(6);
        let mut slices = block_slices(&g, 2);
        slices[1].first = 4;
        slices[1].adjacency.vertices = vec![4, 5, 6];
        let err = spmd_run(SpmdConfig::new(2), |c| cyclic_redistribute(c, slices[c.rank()].clone())).unwrap_err();
        assert!(matches!(err, Error::MalformedDistribution(_)), "{err}");
    }

    #[test]
    fn relabel_stable_counting_sort() {
        // degrees [2, 1, 1, 2]: path 1-0-3-2 closed as 0-3 and 0-1, 3-2
        let g = csr(4, &[(0, 1), (0, 3), (2, 3)]);
        assert_eq!(g.degrees(), vec![2, 1, 1, 2]);
        let slices = block_slices(&g, 1);
        let out = spmd_run(SpmdConfig::new(1), |c| {
            let s = cyclic_redistribute(c, slices[0].clone())?;
            degree_relabel(c, &s)
        })
        .unwrap();
        assert_eq!(out[0].new_ids, vec![2, 0, 1, 3]);
    }

    #[test]
    fn regular_graph_orders_by_rank_then_id() {
        let g = cycle(6);
        let slices = block_slices(&g, 2);
        let out = spmd_run(SpmdConfig::new(2), |c| {
            let s = cyclic_redistribute(c, slices[c.rank()].clone())?;
            degree_relabel(c, &s)
        })
        .unwrap();
        assert_eq!(out[0].new_ids, vec![0, 1, 2]);
        assert_eq!(out[1].new_ids, vec![3, 4, 5]);
        for map in &out {
            for (&old, &new) in map.old_ids.iter().zip(&map.new_ids) {
                assert_eq!(new, cyclic_label(old, 6, 2));
            }
        }
    }

    #[test]
    fn resolve_edge_with_swapped_ids() {
        // edge (0, 1); degrees tie, so 0 -> 0 and 1 -> 1 under the stable
        // sort. Use a pendant to force 0 -> 1, 1 -> 0: 0 also touches 2.
        let g = csr(3, &[(0, 1), (0, 2)]);
        let slices = block_slices(&g, 1);
        let out = spmd_run(SpmdConfig::new(1), |c| {
            let s = cyclic_redistribute(c, slices[0].clone())?;
            let map = degree_relabel(c, &s)?;
            resolve_neighbor_ids(c, &s, &map)
        })
        .unwrap();
        let (slice, remote) = &out[0];
        assert_eq!(*remote, 0);
        // vertex 0 has the largest degree and becomes 2
        assert_eq!(slice.adjacency.vertices, vec![2, 0, 1]);
        assert_eq!(slice.adjacency.row(0), &[0, 1]);

        let g = csr(2, &[(0, 1)]);
        let slices = block_slices(&g, 2);
        let out = spmd_run(SpmdConfig::new(2), |c| {
            let s = cyclic_redistribute(c, slices[c.rank()].clone())?;
            let mut map = degree_relabel(c, &s)?;
            // swap 0 <-> 1 by hand
            map.new_ids = vec![1 - c.rank() as u64];
            resolve_neighbor_ids(c, &s, &map)
        })
        .unwrap();
        assert_eq!(out[0].0.adjacency.vertices, vec![1]);
        assert_eq!(out[0].0.adjacency.row(0), &[0]);
        assert_eq!((out[0].1, out[1].1), (1, 1));
    }

    #[test]
    fn triangle_task_block_on_one_rank() {
        let g = csr(3, &[(0, 1), (0, 2), (1, 2)]);
        let slices = block_slices(&g, 1);
        let out = spmd_run(SpmdConfig::grid(1), |c| preprocess(c, slices[0].clone())).unwrap();
        let tasks: Vec<_> = out[0].blocks.tasks.entries().collect();
        assert_eq!(tasks, vec![(1, 0), (2, 0), (2, 1)]);
    }

    #[test]
    fn k4_on_four_ranks_respects_residues() {
        let edges: Vec<_> = (0..4).flat_map(|u| (u + 1..4).map(move |v| (u, v))).collect();
        let g = csr(4, &edges);
        let slices = block_slices(&g, 4);
        let out = spmd_run(SpmdConfig::grid(4), |c| preprocess(c, slices[c.rank()].clone())).unwrap();
        let mut total = 0;
        for pre in &out {
            let b = &pre.blocks;
            for (i, j) in b.upper.entries() {
                assert_eq!((i % 2, j % 2), (b.coord.x, b.coord.y));
            }
            total += b.upper.nnz();
            assert_eq!(b.tasks.nnz(), b.lower.nnz());
        }
        assert_eq!(total, 6);
    }

    #[test]
    fn grid_mismatch_is_config_error() {
        let g = cycle(6);
        let slices = block_slices(&g, 4);
        let err = spmd_run(SpmdConfig::new(4), |c| {
            let s = cyclic_redistribute(c, slices[c.rank()].clone())?;
            build_2d_blocks(c, &s, 3)
        })
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }
}
