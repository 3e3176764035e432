//! Sequential reference counts.
//!
//! Nothing here shares code with the distributed kernel: `count_serial`
//! merges sorted lists under the ⟨i,j,k⟩ enumeration, `count_matrix` forms
//! the dense product `U·L` masked by `U`.

use crate::error::{Error, Result};
use crate::graph::EdgeList;

/// Largest graph `count_matrix` accepts.
pub const MATRIX_ORACLE_MAX_N: u64 = 64;

/// Σ over edges `(i, j)`, `i < j`, of `|{k > j : (i,k), (j,k) ∈ E}|`.
pub fn count_serial(g: &EdgeList) -> u64 {
    let n = g.n as usize;
    let mut higher: Vec<Vec<u64>> = vec![Vec::new(); n];
    for &(u, v) in &g.edges {
        if u == v {
            continue;
        }
        let (lo, hi) = (u.min(v), u.max(v));
        higher[lo as usize].push(hi);
    }
    for list in &mut higher {
        list.sort_unstable();
        list.dedup();
    }
    let mut total = 0u64;
    for i in 0..n {
        for &j in &higher[i] {
            total += merge_count(&higher[i], &higher[j as usize], j);
        }
    }
    total
}

/// Common elements of two sorted lists that exceed `floor`.
fn merge_count(a: &[u64], b: &[u64], floor: u64) -> u64 {
    let a = &a[a.partition_point(|&x| x <= floor)..];
    let b = &b[b.partition_point(|&x| x <= floor)..];
    let (mut i, mut j, mut hits) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                hits += 1;
                i += 1;
                j += 1;
            }
        }
    }
    hits
}

/// Dense `C = U·L` summed over the nonzeros of `U`.
pub fn count_matrix(g: &EdgeList) -> Result<u64> {
    if g.n > MATRIX_ORACLE_MAX_N {
        return Err(Error::Size(format!(
            "matrix oracle handles at most {MATRIX_ORACLE_MAX_N} vertices, got {}",
            g.n
        )));
    }
    let n = g.n as usize;
    let mut upper = vec![vec![0u64; n]; n];
    let mut lower = vec![vec![0u64; n]; n];
    for &(u, v) in &g.edges {
        if u == v {
            continue;
        }
        let (i, j) = (u.min(v) as usize, u.max(v) as usize);
        upper[i][j] = 1;
        lower[j][i] = 1;
    }
    let mut total = 0;
    for i in 0..n {
        for j in 0..n {
            if upper[i][j] == 0 {
                continue;
            }
            total += (0..n).map(|k| upper[i][k] * lower[k][j]).sum::<u64>();
        }
    }
    Ok(total)
}
