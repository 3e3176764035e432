use super::scratch::{HashScratch, ScratchMode};
use super::EngineOptions;
use crate::error::{Error, Result};
use crate::graph::{DcsrBlock, Orientation};

/// Work done by one call of [`count_block`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BlockCount {
    pub triangles: u64,
    pub probes: u64,
    pub collision_steps: u64,
    pub tasks_invoked: u64,
    pub rows_visited: u64,
    pub direct_rows: u64,
    pub hashed_rows: u64,
}

const ABSENT: u32 = u32::MAX;

/// Local major index → lane index, or `ABSENT`.
fn dense_index(block: &DcsrBlock) -> Vec<u32> {
    let mut index = vec![ABSENT; block.local_major_span() as usize];
    for (lane, &local) in block.present_majors.iter().enumerate() {
        index[local as usize] = lane as u32;
    }
    index
}

fn lane_at<'a>(block: &'a DcsrBlock, index: &[u32], local: u64) -> &'a [u64] {
    match index.get(local as usize) {
        Some(&lane) if lane != ABSENT => block.lane(lane as usize),
        _ => &[],
    }
}

/// Longest major of a block; sizes the scratch table.
pub fn longest_lane(block: &DcsrBlock) -> usize {
    block
        .offsets
        .windows(2)
        .map(|w| (w[1] - w[0]) as usize)
        .max()
        .unwrap_or(0)
}

/// Counts the triangles closed by the tasks of `task` using one aligned
/// pair of operand blocks.
///
/// For every task `(a, b)` the row `a` of `upper` is loaded into `scratch`
/// once per task row and the column `b` of `lower` is looked up against
/// it, descending, stopping below the smallest hashed id when pruning is
/// on. Under ⟨j,i,k⟩ the tasks are `L` entries `(j, i)`; under ⟨i,j,k⟩ they
/// are `U` entries `(i, j)`. Either way the hits are `|U_a ∩ U_b|`
/// restricted to the current operand class, and every hit has `k > a > b`
/// or `k > b > a` by construction.
pub fn count_block(
    task: &DcsrBlock,
    upper: &DcsrBlock,
    lower: &DcsrBlock,
    scratch: &mut HashScratch,
    opts: &EngineOptions,
) -> Result<BlockCount> {
    if task.orientation != Orientation::RowMajor
        || upper.orientation != Orientation::RowMajor
        || lower.orientation != Orientation::ColumnMajor
    {
        return Err(Error::Internal("operand blocks have the wrong orientation".into()));
    }
    if upper.coord.y != lower.coord.x
        || upper.coord.x != task.coord.x
        || lower.coord.y != task.coord.y
    {
        return Err(Error::Internal(format!(
            "misaligned operands: tasks {}, U {}, L {}",
            task.coord, upper.coord, lower.coord
        )));
    }

    let mut out = BlockCount::default();
    if upper.is_empty() || lower.is_empty() || task.is_empty() {
        return Ok(out);
    }
    let upper_index = dense_index(upper);
    let lower_index = dense_index(lower);

    let mut visit = |row: u64, tasks: &[u64], out: &mut BlockCount| -> Result<()> {
        out.rows_visited += 1;
        let hashed = lane_at(upper, &upper_index, row / upper.grid_side);
        if hashed.is_empty() || tasks.is_empty() {
            return Ok(());
        }
        match scratch.load(row, hashed, opts.direct_hash)? {
            ScratchMode::Direct => out.direct_rows += 1,
            ScratchMode::OpenAddressing => out.hashed_rows += 1,
        }
        let floor = scratch.min_key();
        for &col in tasks {
            out.tasks_invoked += 1;
            let candidates = lane_at(lower, &lower_index, col / lower.grid_side);
            if opts.prune {
                for &k in candidates.iter().rev() {
                    if k < floor {
                        break;
                    }
                    let (hit, extra) = scratch.lookup(k);
                    out.probes += 1;
                    out.collision_steps += extra;
                    out.triangles += hit as u64;
                }
            } else {
                for &k in candidates {
                    let (hit, extra) = scratch.lookup(k);
                    out.probes += 1;
                    out.collision_steps += extra;
                    out.triangles += hit as u64;
                }
            }
        }
        Ok(())
    };

    if opts.doubly_sparse {
        for (row, tasks) in task.majors() {
            visit(row, tasks, &mut out)?;
        }
    } else {
        let task_index = dense_index(task);
        for local in 0..task.local_major_span() {
            let row = task.global_major(local);
            visit(row, lane_at(task, &task_index, local), &mut out)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Enumeration;
    use crate::graph::{GridCoord, Triangle};

    fn k3_blocks() -> (DcsrBlock, DcsrBlock, DcsrBlock) {
        let origin = GridCoord::new(0, 0);
        let upper = DcsrBlock::from_entries(
            1,
            origin,
            Orientation::RowMajor,
            Triangle::Upper,
            3,
            [(0, 1), (0, 2), (1, 2)],
        )
        .unwrap();
        let lower = DcsrBlock::from_entries(
            1,
            origin,
            Orientation::ColumnMajor,
            Triangle::Lower,
            3,
            [(1, 0), (2, 0), (2, 1)],
        )
        .unwrap();
        let tasks = lower.reoriented(Orientation::RowMajor);
        (tasks, upper, lower)
    }

    #[test]
    fn worked_k3() {
        let (tasks, upper, lower) = k3_blocks();
        let mut scratch = HashScratch::new(longest_lane(&upper), 1);
        let c = count_block(&tasks, &upper, &lower, &mut scratch, &EngineOptions::default()).unwrap();
        assert_eq!(c.triangles, 1);
        // only task row 1 has a non-empty U row; it serves task (1, 0)
        assert_eq!(c.tasks_invoked, 1);
    }

    #[test]
    fn every_toggle_counts_k3() {
        let (tasks, upper, lower) = k3_blocks();
        for opts in EngineOptions::all_combinations() {
            let tasks = match opts.enumeration {
                Enumeration::Jik => tasks.clone(),
                Enumeration::Ijk => upper.clone(),
            };
            let mut scratch = HashScratch::new(longest_lane(&upper), 1);
            let c = count_block(&tasks, &upper, &lower, &mut scratch, &opts).unwrap();
            assert_eq!(c.triangles, 1, "{opts:?}");
        }
    }

    #[test]
    fn empty_upper_counts_nothing() {
        let (tasks, _, lower) = k3_blocks();
        let upper = DcsrBlock::empty(1, GridCoord::new(0, 0), Orientation::RowMajor, Triangle::Upper, 3);
        let mut scratch = HashScratch::new(0, 1);
        let c = count_block(&tasks, &upper, &lower, &mut scratch, &EngineOptions::default()).unwrap();
        assert_eq!((c.triangles, c.probes), (0, 0));
    }

    #[test]
    fn misaligned_operands_rejected() {
        let side = 2;
        let tasks = DcsrBlock::empty(side, GridCoord::new(0, 0), Orientation::RowMajor, Triangle::Lower, 4);
        let upper = DcsrBlock::empty(side, GridCoord::new(0, 1), Orientation::RowMajor, Triangle::Upper, 4);
        let lower = DcsrBlock::empty(side, GridCoord::new(0, 0), Orientation::ColumnMajor, Triangle::Lower, 4);
        let mut scratch = HashScratch::new(0, side);
        let err = count_block(&tasks, &upper, &lower, &mut scratch, &EngineOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Internal(_)));
    }
}
