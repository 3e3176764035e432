//! End-to-end runs: preprocessing plus counting on `p` simulated ranks, and
//! the reports built from them.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::engine::{count_triangles_distributed, EngineOptions};
use crate::error::{Error, Result};
use crate::graph::{canonicalize, to_csr, EdgeList, GraphStats, GridCoord};
use crate::metrics::{
    comm_fraction, cost_model_pre, cost_model_tc, load_imbalance, shift_imbalance, CostModelInputs,
    PhaseTimings, ShiftMetrics,
};
use crate::oracle::{count_matrix, count_serial, MATRIX_ORACLE_MAX_N};
use crate::preprocess::{block_slices, preprocess};
use crate::transport::{grid_side, spmd_run, CommStats, Communicator, SpmdConfig};

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RunConfig {
    pub ranks: usize,
    pub options: EngineOptions,
    #[serde(skip)]
    pub timeout: Duration,
}

impl RunConfig {
    pub fn new(ranks: usize) -> Self {
        RunConfig {
            ranks,
            options: EngineOptions::default(),
            timeout: SpmdConfig::new(1).timeout,
        }
    }

    pub fn with_options(mut self, options: EngineOptions) -> Self {
        self.options = options;
        self
    }
}

/// What one rank measured.
#[derive(Debug, Clone, Serialize)]
pub struct RankReport {
    pub rank: usize,
    pub coord: GridCoord,
    pub local_triangles: u64,
    /// nonzeros of this rank's task block
    pub tasks: u64,
    pub remote_queries: u64,
    pub preprocess_secs: f64,
    pub count_secs: f64,
    pub preprocess_comm: CommStats,
    pub count_comm: CommStats,
    pub shifts: Vec<ShiftMetrics>,
}

/// Counters summed over ranks and shifts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Totals {
    pub tasks: u64,
    pub tasks_invoked: u64,
    pub probes: u64,
    pub collision_steps: u64,
    pub rows_visited: u64,
    pub direct_rows: u64,
    pub hashed_rows: u64,
    pub remote_queries: u64,
    pub preprocess_bytes: u64,
    pub count_bytes: u64,
    pub shifted_bytes: u64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CostPrediction {
    pub preprocess: f64,
    pub count: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub ranks: usize,
    pub options: EngineOptions,
    pub stats: GraphStats,
    pub triangles: u64,
    pub totals: Totals,
    /// max/mean of task-block sizes over ranks
    pub task_imbalance: Option<f64>,
    pub cost_model: CostPrediction,
    pub per_rank: Vec<RankReport>,
}

/// Counts the triangles of `graph` on `config.ranks` simulated ranks.
///
/// The input is canonicalized, cut into contiguous vertex blocks (the input
/// distribution) and handed to one thread per rank.
pub fn run(graph: &EdgeList, config: &RunConfig) -> Result<RunReport> {
    let p = config.ranks;
    grid_side(p).map_err(|_| Error::Usage(format!("{p} ranks do not form a square grid")))?;
    let canonical;
    let graph = if graph.is_canonical() {
        graph
    } else {
        canonical = canonicalize(graph)?;
        &canonical
    };
    let slices = block_slices(&to_csr(graph)?, p);
    let spmd = SpmdConfig {
        timeout: config.timeout,
        ..SpmdConfig::grid(p)
    };
    let opts = config.options;
    let outputs = spmd_run(spmd, |comm| {
        let rank = comm.rank();
        let t0 = Instant::now();
        let c0 = comm.stats();
        let pre = preprocess(comm, slices[rank].clone())?;
        let preprocess_secs = t0.elapsed().as_secs_f64();
        let c1 = comm.stats();
        let coord = pre.blocks.coord;
        let t1 = Instant::now();
        let outcome = count_triangles_distributed(comm, pre.blocks, &opts)?;
        let count_secs = t1.elapsed().as_secs_f64();
        let c2 = comm.stats();
        Ok((
            RankReport {
                rank,
                coord,
                local_triangles: outcome.local_triangles,
                tasks: outcome.task_count,
                remote_queries: pre.remote_queries,
                preprocess_secs,
                count_secs,
                preprocess_comm: c1.since(&c0),
                count_comm: c2.since(&c1),
                shifts: outcome.shifts,
            },
            outcome.global_triangles,
            pre.relabel.stats,
        ))
    })?;

    let triangles = outputs[0].1;
    if outputs.iter().any(|o| o.1 != triangles) {
        return Err(Error::Internal("ranks disagree on the reduced count".into()));
    }
    let stats = outputs[0].2;
    let per_rank: Vec<RankReport> = outputs.into_iter().map(|o| o.0).collect();
    if per_rank.iter().map(|r| r.local_triangles).sum::<u64>() != triangles {
        return Err(Error::Internal("local counts do not sum to the reduced count".into()));
    }

    let mut totals = Totals::default();
    for r in &per_rank {
        totals.tasks += r.tasks;
        totals.remote_queries += r.remote_queries;
        totals.preprocess_bytes += r.preprocess_comm.bytes_sent;
        totals.count_bytes += r.count_comm.bytes_sent;
        for s in &r.shifts {
            totals.tasks_invoked += s.tasks_invoked;
            totals.probes += s.probes;
            totals.collision_steps += s.collision_steps;
            totals.rows_visited += s.rows_visited;
            totals.direct_rows += s.direct_rows;
            totals.hashed_rows += s.hashed_rows;
            totals.shifted_bytes += s.bytes_shifted;
        }
    }
    let task_sizes: Vec<f64> = per_rank.iter().map(|r| r.tasks as f64).collect();
    let inputs = CostModelInputs::from_stats(&stats, p);
    Ok(RunReport {
        ranks: p,
        options: opts,
        stats,
        triangles,
        totals,
        task_imbalance: load_imbalance(&task_sizes).ok(),
        cost_model: CostPrediction {
            preprocess: cost_model_pre(&inputs),
            count: cost_model_tc(&inputs),
        },
        per_rank,
    })
}

impl RunReport {
    pub fn timings(&self) -> PhaseTimings {
        let shifts = self.per_rank.first().map_or(0, |r| r.shifts.len());
        let per_shift = |f: &dyn Fn(&ShiftMetrics) -> f64| -> Vec<Vec<f64>> {
            (0..shifts)
                .map(|z| self.per_rank.iter().map(|r| f(&r.shifts[z])).collect())
                .collect()
        };
        PhaseTimings {
            preprocess: self.per_rank.iter().map(|r| r.preprocess_secs).collect(),
            count: self.per_rank.iter().map(|r| r.count_secs).collect(),
            preprocess_comm: self
                .per_rank
                .iter()
                .map(|r| r.preprocess_comm.comm_time.as_secs_f64())
                .collect(),
            count_comm: self
                .per_rank
                .iter()
                .map(|r| r.count_comm.comm_time.as_secs_f64())
                .collect(),
            shift_compute: per_shift(&|s| s.compute_time.as_secs_f64()),
            shift_comm: per_shift(&|s| s.shift_comm_time.as_secs_f64()),
            preprocess_bytes: self.per_rank.iter().map(|r| r.preprocess_comm.bytes_sent).collect(),
            count_bytes: self.per_rank.iter().map(|r| r.count_comm.bytes_sent).collect(),
        }
    }

    /// Slowest rank's preprocessing time.
    pub fn preprocess_secs(&self) -> f64 {
        self.per_rank.iter().map(|r| r.preprocess_secs).fold(0.0, f64::max)
    }

    /// Slowest rank's counting time.
    pub fn count_secs(&self) -> f64 {
        self.per_rank.iter().map(|r| r.count_secs).fold(0.0, f64::max)
    }

    /// `key=value` lines, one per quantity.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let t = &self.totals;
        let o = &self.options;
        let _ = writeln!(out, "ranks={}", self.ranks);
        let _ = writeln!(
            out,
            "options=direct_hash:{} dcsr:{} prune:{} enum:{:?}",
            o.direct_hash, o.doubly_sparse, o.prune, o.enumeration
        );
        let _ = writeln!(out, "n={} m={}", self.stats.n, self.stats.m);
        let _ = writeln!(out, "d_avg={:.4} d_max={}", self.stats.d_avg, self.stats.d_max);
        let _ = writeln!(out, "triangles={}", self.triangles);
        let _ = writeln!(out, "tasks={}", t.tasks);
        let _ = writeln!(out, "tasks_invoked={}", t.tasks_invoked);
        let _ = writeln!(out, "probes={}", t.probes);
        let _ = writeln!(out, "collision_steps={}", t.collision_steps);
        let _ = writeln!(out, "rows_visited={}", t.rows_visited);
        let _ = writeln!(out, "direct_rows={} hashed_rows={}", t.direct_rows, t.hashed_rows);
        let _ = writeln!(out, "remote_queries={}", t.remote_queries);
        let _ = writeln!(out, "bytes_preprocess={}", t.preprocess_bytes);
        let _ = writeln!(out, "bytes_count={}", t.count_bytes);
        if let Some(i) = self.task_imbalance {
            let _ = writeln!(out, "task_imbalance={i:.4}");
        }
        let _ = writeln!(out, "time_preprocess={:.6}", self.preprocess_secs());
        let _ = writeln!(out, "time_count={:.6}", self.count_secs());
        let timings = self.timings();
        if let Ok(f) = comm_fraction(&timings) {
            let _ = writeln!(out, "comm_fraction_preprocess={:.4}", f.preprocess);
            let _ = writeln!(out, "comm_fraction_count={:.4}", f.count);
        }
        for (z, (compute, with_wait)) in shift_imbalance(&timings).into_iter().enumerate() {
            let show = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(
                out,
                "shift{z}_imbalance compute={} compute_wait={}",
                show(compute),
                show(with_wait)
            );
        }
        let _ = writeln!(out, "model_preprocess={:.3}", self.cost_model.preprocess);
        let _ = writeln!(out, "model_count={:.3}", self.cost_model.count);
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Engine count next to both oracles.
#[derive(Debug, Clone, Serialize)]
pub struct Validation {
    pub engine: u64,
    pub serial: u64,
    /// `None` when the graph is too large for the dense oracle
    pub matrix: Option<u64>,
}

impl Validation {
    pub fn agrees(&self) -> bool {
        self.engine == self.serial && self.matrix.is_none_or(|m| m == self.serial)
    }

    pub fn render(&self) -> String {
        let matrix = self
            .matrix
            .map_or(format!("skipped (n > {MATRIX_ORACLE_MAX_N})"), |m| m.to_string());
        format!(
            "{} engine={} serial={} matrix={}",
            if self.agrees() { "match" } else { "MISMATCH" },
            self.engine,
            self.serial,
            matrix
        )
    }
}

pub fn validate(graph: &EdgeList, config: &RunConfig) -> Result<Validation> {
    let graph = canonicalize(graph)?;
    let engine = run(&graph, config)?.triangles;
    let matrix = if graph.n <= MATRIX_ORACLE_MAX_N {
        Some(count_matrix(&graph)?)
    } else {
        None
    };
    Ok(Validation {
        engine,
        serial: count_serial(&graph),
        matrix,
    })
}

/// One row of a rank sweep.
#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub ranks: usize,
    pub triangles: u64,
    pub preprocess_secs: f64,
    pub count_secs: f64,
    pub overall_secs: f64,
    /// relative to the smallest rank count in the sweep
    pub speedup: f64,
    pub expected_speedup: f64,
    pub tasks: u64,
    pub tasks_invoked: u64,
    pub probes: u64,
}

/// Runs the same graph at every rank count, smallest first.
pub fn bench(graph: &EdgeList, ranks: &[usize], options: EngineOptions) -> Result<Vec<BenchRow>> {
    let mut ranks = ranks.to_vec();
    ranks.sort_unstable();
    ranks.dedup();
    if ranks.is_empty() {
        return Err(Error::Usage("no rank counts to sweep".into()));
    }
    let graph = canonicalize(graph)?;
    let mut rows: Vec<BenchRow> = Vec::with_capacity(ranks.len());
    for &p in &ranks {
        let report = run(&graph, &RunConfig::new(p).with_options(options))?;
        let (pre, tc) = (report.preprocess_secs(), report.count_secs());
        rows.push(BenchRow {
            ranks: p,
            triangles: report.triangles,
            preprocess_secs: pre,
            count_secs: tc,
            overall_secs: pre + tc,
            speedup: 1.0,
            expected_speedup: p as f64 / ranks[0] as f64,
            tasks: report.totals.tasks,
            tasks_invoked: report.totals.tasks_invoked,
            probes: report.totals.probes,
        });
    }
    let base = rows[0].overall_secs;
    for row in rows.iter_mut().skip(1) {
        row.speedup = if row.overall_secs > 0.0 { base / row.overall_secs } else { f64::INFINITY };
    }
    Ok(rows)
}

pub fn render_bench(rows: &[BenchRow]) -> String {
    let mut out = format!(
        "{:>6} {:>12} {:>12} {:>12} {:>9} {:>9} {:>14} {:>14}\n",
        "ranks", "ppt(s)", "tct(s)", "overall(s)", "speedup", "expected", "tasks", "invoked"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:>6} {:>12.6} {:>12.6} {:>12.6} {:>9.2} {:>9.2} {:>14} {:>14}",
            r.ranks,
            r.preprocess_secs,
            r.count_secs,
            r.overall_secs,
            r.speedup,
            r.expected_speedup,
            r.tasks,
            r.tasks_invoked
        );
    }
    out
}

pub fn bench_json(rows: &[BenchRow]) -> String {
    serde_json::to_string_pretty(rows).expect("rows serialize")
}
