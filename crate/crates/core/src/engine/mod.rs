//! Distributed triangle counting on the `√p × √p` grid.
//!
//! Blocks are first aligned so that rank `(x, y)` holds `U_{x,w}` and
//! `L_{w,y}` with `w = (x + y) mod √p`; then `√p` rounds of local counting
//! follow, each but the last ending with `U` blocks moving one rank left
//! and `L` blocks one rank up, which advances `w` by one.

mod kernel;
mod scratch;

pub use kernel::{count_block, longest_lane, BlockCount};
pub use scratch::{HashScratch, ScratchMode};

use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{DcsrBlock, GridCoord};
use crate::metrics::ShiftMetrics;
use crate::preprocess::RankBlocks;
use crate::transport::{grid_side, Communicator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Enumeration {
    /// tasks are `U` entries `(i, j)`; the smaller endpoint's row is hashed
    Ijk,
    /// tasks are `L` entries `(j, i)`; the larger endpoint's row is hashed
    Jik,
}

impl std::str::FromStr for Enumeration {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ijk" => Ok(Enumeration::Ijk),
            "jik" => Ok(Enumeration::Jik),
            other => Err(Error::Usage(format!(
                "unknown enumeration `{other}`, expected ijk or jik"
            ))),
        }
    }
}

/// Deliberate corruption for exercising the validation path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Fault {
    /// rank 0 empties its home `U`, `L` and task blocks before alignment
    DropHomeBlocks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EngineOptions {
    pub direct_hash: bool,
    pub doubly_sparse: bool,
    pub prune: bool,
    pub enumeration: Enumeration,
    pub fault: Option<Fault>,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            direct_hash: true,
            doubly_sparse: true,
            prune: true,
            enumeration: Enumeration::Jik,
            fault: None,
        }
    }
}

impl EngineOptions {
    /// All 16 combinations of the four toggles.
    pub fn all_combinations() -> Vec<EngineOptions> {
        (0..16u8)
            .map(|bits| EngineOptions {
                direct_hash: bits & 1 != 0,
                doubly_sparse: bits & 2 != 0,
                prune: bits & 4 != 0,
                enumeration: if bits & 8 != 0 {
                    Enumeration::Jik
                } else {
                    Enumeration::Ijk
                },
                fault: None,
            })
            .collect()
    }
}

/// Operand class a rank at `(x, y)` works on at shift `z`.
pub fn cannon_operand_class(x: u64, y: u64, z: u64, side: u64) -> u64 {
    (x + y + z) % side
}

/// Blocks held by one rank between shifts.
#[derive(Debug, Clone)]
pub struct ShiftState {
    pub z: u64,
    pub upper: DcsrBlock,
    pub lower: DcsrBlock,
    pub triangles: u64,
}

fn decode_block(bytes: &[u8], what: &str, z: u64, rank: usize) -> Result<DcsrBlock> {
    DcsrBlock::decode(bytes).map_err(|e| {
        Error::Protocol(format!("rank {rank}, shift {z}: undecodable {what} block: {e}"))
    })
}

/// Sends `upper` to `upper_dest` and `lower` to `lower_dest`, then receives
/// the replacements. A block whose peer is this rank stays put.
fn exchange<C: Communicator>(
    comm: &mut C,
    (upper, upper_dest, upper_src): (DcsrBlock, usize, usize),
    (lower, lower_dest, lower_src): (DcsrBlock, usize, usize),
    z: u64,
) -> Result<(DcsrBlock, DcsrBlock)> {
    let me = comm.rank();
    let mut kept_upper = None;
    let mut kept_lower = None;
    if upper_dest == me {
        kept_upper = Some(upper);
    } else {
        comm.send_bytes(upper_dest, upper.encode())?;
    }
    if lower_dest == me {
        kept_lower = Some(lower);
    } else {
        comm.send_bytes(lower_dest, lower.encode())?;
    }
    let upper = match kept_upper {
        Some(b) => b,
        None => decode_block(&comm.recv_bytes(upper_src)?, "U", z, me)?,
    };
    let lower = match kept_lower {
        Some(b) => b,
        None => decode_block(&comm.recv_bytes(lower_src)?, "L", z, me)?,
    };
    Ok((upper, lower))
}

/// Moves the home blocks into Cannon alignment: afterwards rank `(x, y)`
/// holds `U_{x,(x+y) mod √p}` and `L_{(x+y) mod √p, y}`.
pub fn initial_align<C: Communicator>(
    comm: &mut C,
    upper: DcsrBlock,
    lower: DcsrBlock,
) -> Result<(DcsrBlock, DcsrBlock)> {
    let side = grid_side(comm.size())?;
    let GridCoord { x, y } = GridCoord::from_rank(comm.rank(), side);
    let at = |x: u64, y: u64| GridCoord::new(x % side, y % side).rank(side);
    exchange(
        comm,
        (upper, at(x, y + side - x), at(x, x + y)),
        (lower, at(x + side - y, y), at(x + y, y)),
        0,
    )
}

/// One Cannon shift: `U` goes left, `L` goes up, `z` advances.
pub fn shift_step<C: Communicator>(comm: &mut C, state: ShiftState) -> Result<ShiftState> {
    let side = grid_side(comm.size())?;
    if state.z + 1 >= side {
        return Err(Error::Internal(format!(
            "shift {} is the last of {side}",
            state.z
        )));
    }
    let GridCoord { x, y } = GridCoord::from_rank(comm.rank(), side);
    let at = |x: u64, y: u64| GridCoord::new(x % side, y % side).rank(side);
    let (upper, lower) = exchange(
        comm,
        (state.upper, at(x, y + side - 1), at(x, y + 1)),
        (state.lower, at(x + side - 1, y), at(x + 1, y)),
        state.z + 1,
    )?;
    Ok(ShiftState {
        z: state.z + 1,
        upper,
        lower,
        triangles: state.triangles,
    })
}

/// Result of the counting phase on one rank.
#[derive(Debug, Clone)]
pub struct CountOutcome {
    pub local_triangles: u64,
    pub global_triangles: u64,
    pub task_count: u64,
    pub shifts: Vec<ShiftMetrics>,
}

/// The counting phase: align, count and shift `√p` times, then reduce.
pub fn count_triangles_distributed<C: Communicator>(
    comm: &mut C,
    blocks: RankBlocks,
    opts: &EngineOptions,
) -> Result<CountOutcome> {
    let side = grid_side(comm.size())?;
    let me = comm.rank();
    let GridCoord { x, y } = GridCoord::from_rank(me, side);
    if blocks.coord != GridCoord::new(x, y) {
        return Err(Error::Config(format!(
            "rank {me} was handed blocks for {}",
            blocks.coord
        )));
    }
    let RankBlocks {
        upper,
        lower,
        tasks,
        ..
    } = blocks;
    let tasks = match opts.enumeration {
        Enumeration::Jik => tasks,
        Enumeration::Ijk => upper.clone(),
    };
    let (upper, lower, tasks) = if opts.fault == Some(Fault::DropHomeBlocks) && me == 0 {
        let clear = |b: &DcsrBlock| DcsrBlock::empty(b.grid_side, b.coord, b.orientation, b.triangle, b.n);
        (clear(&upper), clear(&lower), clear(&tasks))
    } else {
        (upper, lower, tasks)
    };

    let (upper, lower) = initial_align(comm, upper, lower)?;
    let mut state = ShiftState {
        z: 0,
        upper,
        lower,
        triangles: 0,
    };
    let mut shifts = Vec::with_capacity(side as usize);
    loop {
        let z = state.z;
        let w = cannon_operand_class(x, y, z, side);
        if state.upper.coord != GridCoord::new(x, w) || state.lower.coord != GridCoord::new(w, y) {
            return Err(Error::Internal(format!(
                "rank ({x}, {y}) at shift {z} holds U {} and L {}, expected class {w}",
                state.upper.coord, state.lower.coord
            )));
        }
        let started = Instant::now();
        let mut scratch = HashScratch::new(longest_lane(&state.upper), side);
        let counted = count_block(&tasks, &state.upper, &state.lower, &mut scratch, opts)?;
        let compute_time = started.elapsed();
        state.triangles += counted.triangles;
        let mut metrics = ShiftMetrics {
            z,
            w,
            upper_coord: state.upper.coord,
            lower_coord: state.lower.coord,
            triangles: counted.triangles,
            probes: counted.probes,
            collision_steps: counted.collision_steps,
            tasks_invoked: counted.tasks_invoked,
            rows_visited: counted.rows_visited,
            direct_rows: counted.direct_rows,
            hashed_rows: counted.hashed_rows,
            compute_time,
            ..Default::default()
        };
        if z + 1 == side {
            shifts.push(metrics);
            break;
        }
        let before = comm.stats();
        state = shift_step(comm, state)?;
        let moved = comm.stats().since(&before);
        metrics.shift_comm_time = moved.comm_time;
        metrics.bytes_shifted = moved.bytes_sent;
        shifts.push(metrics);
    }
    let global = comm.allreduce_sum_u64(state.triangles)?;
    Ok(CountOutcome {
        local_triangles: state.triangles,
        global_triangles: global,
        task_count: tasks.nnz() as u64,
        shifts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Orientation, Triangle};
    use crate::transport::{spmd_run, SpmdConfig};

    #[test]
    fn operand_class_formula() {
        assert_eq!(cannon_operand_class(1, 2, 0, 3), 0);
        for z in 0..3 {
            assert_eq!(cannon_operand_class(0, 0, z, 3), z);
        }
        assert_eq!(cannon_operand_class(0, 0, 0, 1), 0);
    }

    /// Empty blocks labelled with their home coordinate.
    fn home_blocks(rank: usize, side: u64) -> (DcsrBlock, DcsrBlock) {
        let c = GridCoord::from_rank(rank, side);
        (
            DcsrBlock::empty(side, c, Orientation::RowMajor, Triangle::Upper, 100),
            DcsrBlock::empty(side, c, Orientation::ColumnMajor, Triangle::Lower, 100),
        )
    }

    #[test]
    fn alignment_on_one_rank_is_identity() {
        let out = spmd_run(SpmdConfig::grid(1), |c| {
            let (u, l) = home_blocks(0, 1);
            initial_align(c, u, l)
        })
        .unwrap();
        assert_eq!(out[0].0.coord, GridCoord::new(0, 0));
    }

    #[test]
    fn alignment_two_by_two() {
        let out = spmd_run(SpmdConfig::grid(4), |c| {
            let (u, l) = home_blocks(c.rank(), 2);
            initial_align(c, u, l)
        })
        .unwrap();
        // rank (0, 1) holds U class 1 and L class 1
        assert_eq!(out[1].0.coord, GridCoord::new(0, 1));
        assert_eq!(out[1].1.coord, GridCoord::new(1, 1));
    }

    #[test]
    fn shifts_permute_and_cycle() {
        let side = 3u64;
        let out = spmd_run(SpmdConfig::grid(9), |c| {
            let (u, l) = home_blocks(c.rank(), side);
            let (upper, lower) = initial_align(c, u, l)?;
            let mut state = ShiftState { z: 0, upper, lower, triangles: 0 };
            let mut held = vec![(state.upper.coord, state.lower.coord)];
            while state.z + 1 < side {
                state = shift_step(c, state)?;
                held.push((state.upper.coord, state.lower.coord));
            }
            Ok(held)
        })
        .unwrap();
        for z in 0..side as usize {
            let mut uppers: Vec<_> = out.iter().map(|h| h[z].0).collect();
            uppers.sort();
            let homes: Vec<_> = (0..9).map(|r| GridCoord::from_rank(r, side)).collect();
            assert_eq!(uppers, homes, "shift {z}");
        }
        for (rank, held) in out.iter().enumerate() {
            let GridCoord { x, y } = GridCoord::from_rank(rank, side);
            for (z, &(u, l)) in held.iter().enumerate() {
                let w = cannon_operand_class(x, y, z as u64, side);
                assert_eq!((u, l), (GridCoord::new(x, w), GridCoord::new(w, y)));
            }
        }
    }

    #[test]
    fn shift_after_last_is_rejected() {
        let err = spmd_run(SpmdConfig::grid(1), |c| {
            let (upper, lower) = home_blocks(0, 1);
            shift_step(c, ShiftState { z: 0, upper, lower, triangles: 0 })
        })
        .unwrap_err();
        assert!(matches!(err, Error::Internal(_)));
    }

    #[test]
    fn enumeration_parses() {
        assert_eq!("ijk".parse::<Enumeration>().unwrap(), Enumeration::Ijk);
        assert_eq!("jik".parse::<Enumeration>().unwrap(), Enumeration::Jik);
        assert!("kji".parse::<Enumeration>().is_err());
        assert_eq!(EngineOptions::all_combinations().len(), 16);
    }
}
