//! Instrumentation records, overhead metrics and the analytical cost model.

use std::time::Duration;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{GraphStats, GridCoord};

/// What one rank did in one shift of the counting phase.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ShiftMetrics {
    pub z: u64,
    /// operand class used at this shift
    pub w: u64,
    /// coordinates of the `U` and `L` blocks actually held
    pub upper_coord: GridCoord,
    pub lower_coord: GridCoord,
    pub triangles: u64,
    /// hash-map lookups
    pub probes: u64,
    /// extra slots inspected by open-addressing lookups
    pub collision_steps: u64,
    /// task entries that ran an intersection against a non-empty hashed row
    pub tasks_invoked: u64,
    /// task rows visited by the traversal
    pub rows_visited: u64,
    pub direct_rows: u64,
    pub hashed_rows: u64,
    #[serde(serialize_with = "secs")]
    pub compute_time: Duration,
    /// time spent moving blocks after this shift's compute
    #[serde(serialize_with = "secs")]
    pub shift_comm_time: Duration,
    pub bytes_shifted: u64,
}

fn secs<S: serde::Serializer>(d: &Duration, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

/// Max over mean. Uniform input gives 1.0.
pub fn load_imbalance(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Undefined("load imbalance of an empty vector".into()));
    }
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Undefined("load imbalance needs finite non-negative values".into()));
    }
    let max = values.iter().copied().fold(0.0, f64::max);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    imbalance_ratio(max, mean)
}

/// Max over mean from already-summarized values, as tables report them.
pub fn imbalance_ratio(max: f64, mean: f64) -> Result<f64> {
    if !(max.is_finite() && mean.is_finite()) || max < mean || mean < 0.0 {
        return Err(Error::Undefined(format!("no distribution has max {max} and mean {mean}")));
    }
    if mean == 0.0 {
        return Err(Error::Undefined("load imbalance of an all-zero vector".into()));
    }
    Ok(max / mean)
}

/// Successive percentage increases of `(ranks, count)` pairs, ordered by
/// rank count.
pub fn task_growth_exact(counts: &[(u64, u64)]) -> Result<Vec<f64>> {
    if counts.len() < 2 {
        return Err(Error::Undefined("task growth needs at least two runs".into()));
    }
    let mut sorted = counts.to_vec();
    sorted.sort_by_key(|&(p, _)| p);
    sorted
        .windows(2)
        .map(|w| {
            let (prev, next) = (w[0].1, w[1].1);
            if prev == 0 {
                return Err(Error::Undefined(format!(
                    "task growth from zero tasks at {} ranks",
                    w[0].0
                )));
            }
            Ok((next as f64 - prev as f64) / prev as f64 * 100.0)
        })
        .collect()
}

/// [`task_growth_exact`] rounded to the nearest percent.
pub fn task_growth(counts: &[(u64, u64)]) -> Result<Vec<i64>> {
    Ok(task_growth_exact(counts)?
        .into_iter()
        .map(|g| g.round() as i64)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostModelInputs {
    pub n: f64,
    pub m: f64,
    pub p: f64,
    pub d_avg: f64,
    pub d_max: f64,
}

impl CostModelInputs {
    pub fn from_stats(stats: &GraphStats, p: usize) -> Self {
        CostModelInputs {
            n: stats.n as f64,
            m: stats.m as f64,
            p: p as f64,
            d_avg: stats.d_avg,
            d_max: stats.d_max as f64,
        }
    }
}

/// Preprocessing time in abstract units:
/// `p + m/p + n/p + log p + d_max + d_max·log p` (log base 2).
pub fn cost_model_pre(c: &CostModelInputs) -> f64 {
    let log_p = c.p.log2();
    c.p + c.m / c.p + c.n / c.p + log_p + c.d_max + c.d_max * log_p
}

/// Counting time over all `√p` shifts: `d_avg · (n/√p) · (d_avg/√p + 1)`.
pub fn cost_model_tc(c: &CostModelInputs) -> f64 {
    let side = c.p.sqrt();
    c.d_avg * (c.n / side) * (c.d_avg / side + 1.0)
}

/// Per-rank and per-shift wall times and traffic of one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PhaseTimings {
    pub preprocess: Vec<f64>,
    pub count: Vec<f64>,
    pub preprocess_comm: Vec<f64>,
    pub count_comm: Vec<f64>,
    /// `[shift][rank]` compute seconds
    pub shift_compute: Vec<Vec<f64>>,
    /// `[shift][rank]` seconds spent moving blocks after the compute
    pub shift_comm: Vec<Vec<f64>>,
    pub preprocess_bytes: Vec<u64>,
    pub count_bytes: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CommFractions {
    pub preprocess: f64,
    pub count: f64,
}

/// `comm / total`, in `[0, 1]`.
pub fn fraction(comm: f64, total: f64) -> Result<f64> {
    if total <= 0.0 || !total.is_finite() {
        return Err(Error::Undefined("communication fraction of a zero-length phase".into()));
    }
    Ok((comm / total).clamp(0.0, 1.0))
}

/// Share of each phase spent communicating, summed over ranks.
pub fn comm_fraction(t: &PhaseTimings) -> Result<CommFractions> {
    Ok(CommFractions {
        preprocess: fraction(t.preprocess_comm.iter().sum(), t.preprocess.iter().sum())?,
        count: fraction(t.count_comm.iter().sum(), t.count.iter().sum())?,
    })
}

/// Per-shift load imbalance over ranks: compute only, and compute plus the
/// following block exchange.
pub fn shift_imbalance(t: &PhaseTimings) -> Vec<(Option<f64>, Option<f64>)> {
    t.shift_compute
        .iter()
        .zip(&t.shift_comm)
        .map(|(compute, comm)| {
            let with_wait: Vec<f64> = compute.iter().zip(comm).map(|(a, b)| a + b).collect();
            (load_imbalance(compute).ok(), load_imbalance(&with_wait).ok())
        })
        .collect()
}
