//! SPMD message passing.
//!
//! [`Communicator`] is the contract the rest of the crate programs against:
//! tagged point-to-point byte messages with per-pair FIFO order, plus
//! collectives layered on top of them. [`LocalComm`] implements it for `p`
//! ranks running as threads of one process, connected by unbounded FIFO
//! channels, and [`spmd_run`] drives a program over all of them.

use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::error::{Error, Result};

/// Message class; a receive fails if the next message from that peer has a
/// different tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    PointToPoint,
    Collective,
}

/// Counters accumulated by one rank's endpoint.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct CommStats {
    pub messages_sent: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    /// time spent inside send/receive calls, waiting included
    #[serde(serialize_with = "secs")]
    pub comm_time: Duration,
}

fn secs<S: serde::Serializer>(d: &Duration, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

impl CommStats {
    /// Counter growth since an earlier snapshot.
    pub fn since(&self, earlier: &CommStats) -> CommStats {
        CommStats {
            messages_sent: self.messages_sent - earlier.messages_sent,
            bytes_sent: self.bytes_sent - earlier.bytes_sent,
            bytes_received: self.bytes_received - earlier.bytes_received,
            comm_time: self.comm_time.saturating_sub(earlier.comm_time),
        }
    }
}

pub trait Communicator {
    fn rank(&self) -> usize;
    fn size(&self) -> usize;
    fn send_tagged(&mut self, dest: usize, tag: Tag, payload: Vec<u8>) -> Result<()>;
    fn recv_tagged(&mut self, src: usize, tag: Tag) -> Result<Vec<u8>>;
    fn stats(&self) -> CommStats;

    fn send_bytes(&mut self, dest: usize, payload: Vec<u8>) -> Result<()> {
        self.send_tagged(dest, Tag::PointToPoint, payload)
    }

    fn recv_bytes(&mut self, src: usize) -> Result<Vec<u8>> {
        self.recv_tagged(src, Tag::PointToPoint)
    }

    fn barrier(&mut self) -> Result<()> {
        self.allreduce_sum_u64(0).map(drop)
    }

    fn allreduce_sum_u64(&mut self, local: u64) -> Result<u64> {
        let out = reduce_vectors(self, vec![local], |all| {
            let mut total = 0u64;
            for v in all {
                total = total
                    .checked_add(v[0])
                    .ok_or_else(|| Error::Overflow("allreduce sum exceeds 64 bits".into()))?;
            }
            Ok(vec![vec![total]; all.len()])
        })?;
        Ok(out[0])
    }

    fn allreduce_max_u64(&mut self, local: u64) -> Result<u64> {
        let out = reduce_vectors(self, vec![local], |all| {
            let max = all.iter().map(|v| v[0]).max().unwrap_or(0);
            Ok(vec![vec![max]; all.len()])
        })?;
        Ok(out[0])
    }

    /// Elementwise sum of equal-length vectors, delivered to every rank.
    fn allreduce_sum_vec(&mut self, local: Vec<u64>) -> Result<Vec<u64>> {
        reduce_vectors(self, local, |all| {
            let total = prefix_sums(all)?.pop().unwrap();
            Ok(vec![total; all.len()])
        })
    }

    /// Rank `r` receives the elementwise sum of the vectors of ranks
    /// `0..r`; rank 0 receives zeros.
    fn exscan_sum_vec(&mut self, local: Vec<u64>) -> Result<Vec<u64>> {
        reduce_vectors(self, local, |all| {
            let mut prefixes = prefix_sums(all)?;
            prefixes.pop();
            Ok(prefixes)
        })
    }

    /// Personalized all-to-all: `outgoing[i]` goes to rank `i`, and the
    /// result's entry `j` is what rank `j` addressed to this rank. Built from
    /// point-to-point messages, destinations staggered as `(rank + step) % p`.
    fn alltoallv_bytes(&mut self, mut outgoing: Vec<Vec<u8>>) -> Result<Vec<Vec<u8>>> {
        let (me, p) = (self.rank(), self.size());
        if outgoing.len() != p {
            return Err(Error::Usage(format!(
                "alltoallv needs {p} buffers, got {}",
                outgoing.len()
            )));
        }
        for step in 1..p {
            let dest = (me + step) % p;
            let payload = std::mem::take(&mut outgoing[dest]);
            self.send_tagged(dest, Tag::Collective, payload)?;
        }
        let mut incoming = vec![Vec::new(); p];
        incoming[me] = std::mem::take(&mut outgoing[me]);
        for step in 1..p {
            let src = (me + p - step) % p;
            incoming[src] = self.recv_tagged(src, Tag::Collective)?;
        }
        Ok(incoming)
    }
}

/// `out[r]` = sum of vectors `0..r`, for `r` in `0..=p`.
fn prefix_sums(all: &[Vec<u64>]) -> Result<Vec<Vec<u64>>> {
    let len = all[0].len();
    if let Some((rank, v)) = all.iter().enumerate().find(|(_, v)| v.len() != len) {
        return Err(Error::Protocol(format!(
            "rank {rank} contributed {} elements, rank 0 contributed {len}",
            v.len()
        )));
    }
    let mut out = Vec::with_capacity(all.len() + 1);
    let mut acc = vec![0u64; len];
    out.push(acc.clone());
    for v in all {
        for (a, &x) in acc.iter_mut().zip(v) {
            *a = a
                .checked_add(x)
                .ok_or_else(|| Error::Overflow("vector reduction exceeds 64 bits".into()))?;
        }
        out.push(acc.clone());
    }
    Ok(out)
}

fn encode_words(words: &[u64]) -> Vec<u8> {
    words.iter().flat_map(|w| w.to_le_bytes()).collect()
}

fn decode_words(bytes: &[u8]) -> Result<Vec<u64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::Protocol(format!(
            "collective payload of {} bytes is not word aligned",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

const REPLY_OK: u8 = 0;
const REPLY_ERR: u8 = 1;

/// Gathers every rank's vector on rank 0, applies `combine` there, and
/// sends rank `r` the `r`-th result. An error in `combine` is delivered to
/// every rank. No rank returns before all ranks have entered.
fn reduce_vectors<C, F>(comm: &mut C, local: Vec<u64>, combine: F) -> Result<Vec<u64>>
where
    C: Communicator + ?Sized,
    F: FnOnce(&[Vec<u64>]) -> Result<Vec<Vec<u64>>>,
{
    let (me, p) = (comm.rank(), comm.size());
    if me != 0 {
        comm.send_tagged(0, Tag::Collective, encode_words(&local))?;
        let reply = comm.recv_tagged(0, Tag::Collective)?;
        return match reply.split_first() {
            Some((&REPLY_OK, body)) => decode_words(body),
            Some((&REPLY_ERR, body)) => Err(rebuild_error(body)),
            _ => Err(Error::Protocol("malformed collective reply".into())),
        };
    }
    let mut all = Vec::with_capacity(p);
    all.push(local);
    for src in 1..p {
        let bytes = comm.recv_tagged(src, Tag::Collective)?;
        all.push(decode_words(&bytes)?);
    }
    match combine(&all) {
        Ok(mut results) => {
            for (dest, result) in results.iter().enumerate().skip(1) {
                let mut reply = vec![REPLY_OK];
                reply.extend(encode_words(result));
                comm.send_tagged(dest, Tag::Collective, reply)?;
            }
            Ok(results.swap_remove(0))
        }
        Err(err) => {
            let mut reply = vec![REPLY_ERR, error_kind(&err)];
            reply.extend(err.to_string().into_bytes());
            for dest in 1..p {
                comm.send_tagged(dest, Tag::Collective, reply.clone())?;
            }
            Err(err)
        }
    }
}

fn error_kind(err: &Error) -> u8 {
    match err {
        Error::Overflow(_) => 1,
        _ => 0,
    }
}

fn rebuild_error(body: &[u8]) -> Error {
    let (kind, msg) = body.split_first().unwrap_or((&0, &[]));
    let msg = String::from_utf8_lossy(msg).into_owned();
    match kind {
        1 => Error::Overflow(msg),
        _ => Error::Protocol(msg),
    }
}

struct Envelope {
    tag: Tag,
    payload: Vec<u8>,
}

/// One rank's endpoint of the in-process transport.
pub struct LocalComm {
    rank: usize,
    size: usize,
    senders: Vec<Option<Sender<Envelope>>>,
    receivers: Vec<Option<Receiver<Envelope>>>,
    stats: CommStats,
    timeout: Duration,
}

impl LocalComm {
    /// A fully connected set of `p` endpoints.
    pub fn create(p: usize, timeout: Duration) -> Vec<LocalComm> {
        let mut senders: Vec<Vec<Option<Sender<Envelope>>>> =
            (0..p).map(|_| (0..p).map(|_| None).collect()).collect();
        let mut receivers: Vec<Vec<Option<Receiver<Envelope>>>> =
            (0..p).map(|_| (0..p).map(|_| None).collect()).collect();
        for src in 0..p {
            for dest in 0..p {
                if src != dest {
                    let (tx, rx) = mpsc::channel();
                    senders[src][dest] = Some(tx);
                    receivers[dest][src] = Some(rx);
                }
            }
        }
        senders
            .into_iter()
            .zip(receivers)
            .enumerate()
            .map(|(rank, (senders, receivers))| LocalComm {
                rank,
                size: p,
                senders,
                receivers,
                stats: CommStats::default(),
                timeout,
            })
            .collect()
    }

    fn check_peer(&self, peer: usize, what: &str) -> Result<()> {
        if peer >= self.size {
            return Err(Error::Usage(format!(
                "rank {} cannot {what} rank {peer}: only {} ranks",
                self.rank, self.size
            )));
        }
        if peer == self.rank {
            return Err(Error::Usage(format!(
                "rank {} cannot {what} itself",
                self.rank
            )));
        }
        Ok(())
    }

    /// Messages still queued for this rank, by source.
    fn pending(&self) -> Vec<usize> {
        self.receivers
            .iter()
            .enumerate()
            .filter_map(|(src, rx)| rx.as_ref().and_then(|rx| rx.try_recv().ok()).map(|_| src))
            .collect()
    }
}

impl Communicator for LocalComm {
    fn rank(&self) -> usize {
        self.rank
    }

    fn size(&self) -> usize {
        self.size
    }

    fn send_tagged(&mut self, dest: usize, tag: Tag, payload: Vec<u8>) -> Result<()> {
        self.check_peer(dest, "send to")?;
        let start = Instant::now();
        let len = payload.len() as u64;
        let sent = self.senders[dest]
            .as_ref()
            .expect("channel to every peer")
            .send(Envelope { tag, payload });
        self.stats.comm_time += start.elapsed();
        sent.map_err(|_| Error::PeerExited {
            rank: self.rank,
            peer: dest,
        })?;
        self.stats.messages_sent += 1;
        self.stats.bytes_sent += len;
        Ok(())
    }

    fn recv_tagged(&mut self, src: usize, tag: Tag) -> Result<Vec<u8>> {
        self.check_peer(src, "receive from")?;
        let start = Instant::now();
        let got = self.receivers[src]
            .as_ref()
            .expect("channel from every peer")
            .recv_timeout(self.timeout);
        self.stats.comm_time += start.elapsed();
        let envelope = match got {
            Ok(env) => env,
            Err(RecvTimeoutError::Disconnected) => {
                return Err(Error::PeerExited {
                    rank: self.rank,
                    peer: src,
                })
            }
            Err(RecvTimeoutError::Timeout) => {
                return Err(Error::Protocol(format!(
                    "rank {} timed out after {:?} waiting for rank {src}",
                    self.rank, self.timeout
                )))
            }
        };
        if envelope.tag != tag {
            return Err(Error::Protocol(format!(
                "rank {} expected a {tag:?} message from rank {src}, got {:?}",
                self.rank, envelope.tag
            )));
        }
        self.stats.bytes_received += envelope.payload.len() as u64;
        Ok(envelope.payload)
    }

    fn stats(&self) -> CommStats {
        self.stats
    }
}

/// Side length of the square grid for `p` ranks.
pub fn grid_side(p: usize) -> Result<u64> {
    let side = (p as f64).sqrt().round() as u64;
    if p == 0 || side * side != p as u64 {
        return Err(Error::Config(format!(
            "{p} ranks do not form a square grid"
        )));
    }
    Ok(side)
}

#[derive(Debug, Clone, Copy)]
pub struct SpmdConfig {
    pub ranks: usize,
    /// require `ranks` to be a perfect square
    pub grid: bool,
    /// how long a receive may block before it is reported as a hang
    pub timeout: Duration,
}

impl SpmdConfig {
    pub fn new(ranks: usize) -> Self {
        SpmdConfig {
            ranks,
            grid: false,
            timeout: Duration::from_secs(600),
        }
    }

    pub fn grid(ranks: usize) -> Self {
        SpmdConfig {
            grid: true,
            ..SpmdConfig::new(ranks)
        }
    }
}

/// Runs `program` on every rank concurrently and returns the per-rank
/// results in rank order.
///
/// If any rank fails, the first root-cause error is returned (failures that
/// merely report a vanished peer are secondary). Messages left undelivered
/// after every rank succeeded are a protocol error.
pub fn spmd_run<T, F>(config: SpmdConfig, program: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut LocalComm) -> Result<T> + Sync,
{
    if config.ranks == 0 {
        return Err(Error::Config("at least one rank is required".into()));
    }
    if config.grid {
        grid_side(config.ranks)?;
    }
    let comms = LocalComm::create(config.ranks, config.timeout);
    let program = &program;
    let outcomes: Vec<Result<(T, LocalComm)>> = thread::scope(|scope| {
        let handles: Vec<_> = comms
            .into_iter()
            .map(|mut comm| {
                thread::Builder::new()
                    .name(format!("rank-{}", comm.rank))
                    .spawn_scoped(scope, move || match program(&mut comm) {
                        Ok(value) => {
                            // peers still waiting on this rank fail fast
                            comm.senders.clear();
                            Ok((value, comm))
                        }
                        Err(err) => Err(err),
                    })
                    .expect("spawn rank thread")
            })
            .collect();
        handles
            .into_iter()
            .enumerate()
            .map(|(rank, h)| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::Internal(format!("rank {rank} panicked"))))
            })
            .collect()
    });

    let mut values = Vec::with_capacity(outcomes.len());
    let mut comms = Vec::with_capacity(outcomes.len());
    let mut secondary = None;
    let mut primary = None;
    for outcome in outcomes {
        match outcome {
            Ok((value, comm)) => {
                values.push(value);
                comms.push(comm);
            }
            Err(err @ Error::PeerExited { .. }) => {
                secondary.get_or_insert(err);
            }
            Err(err) => {
                primary.get_or_insert(err);
            }
        }
    }
    if let Some(err) = primary.or(secondary) {
        return Err(err);
    }
    for comm in &comms {
        if let Some(&src) = comm.pending().first() {
            return Err(Error::Protocol(format!(
                "unmatched message from rank {src} to rank {} at shutdown",
                comm.rank
            )));
        }
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_rank_returns_its_id() {
        let out = spmd_run(SpmdConfig::new(1), |c| Ok(c.rank())).unwrap();
        assert_eq!(out, vec![0]);
    }

    #[test]
    fn ring_shift() {
        let out = spmd_run(SpmdConfig::new(4), |c| {
            let (me, p) = (c.rank(), c.size());
            c.send_bytes((me + 1) % p, vec![me as u8])?;
            Ok(c.recv_bytes((me + p - 1) % p)?[0] as usize)
        })
        .unwrap();
        assert_eq!(out, vec![3, 0, 1, 2]);
    }

    #[test]
    fn fifo_and_empty_payloads() {
        let out = spmd_run(SpmdConfig::new(2), |c| {
            if c.rank() == 0 {
                c.send_bytes(1, vec![1])?;
                c.send_bytes(1, vec![2])?;
                c.send_bytes(1, vec![])?;
                Ok(vec![])
            } else {
                Ok(vec![c.recv_bytes(0)?, c.recv_bytes(0)?, c.recv_bytes(0)?])
            }
        })
        .unwrap();
        assert_eq!(out[1], vec![vec![1], vec![2], vec![]]);
    }

    #[test]
    fn self_send_is_usage_error() {
        let err = spmd_run(SpmdConfig::new(2), |c| {
            let me = c.rank();
            c.send_bytes(me, vec![1])
        })
        .unwrap_err();
        assert!(matches!(err, Error::Usage(_)), "{err}");
    }

    #[test]
    fn allreduce_sum_and_max() {
        let out = spmd_run(SpmdConfig::new(9), |c| {
            let r = c.rank() as u64;
            Ok((c.allreduce_sum_u64(r)?, c.allreduce_max_u64(r * 7 % 9)?))
        })
        .unwrap();
        assert!(out.iter().all(|&(s, m)| s == 36 && m == 8));

        let locals = [1u64, 2, 3, 4];
        let sums = spmd_run(SpmdConfig::new(4), |c| c.allreduce_sum_u64(locals[c.rank()])).unwrap();
        assert_eq!(sums, vec![10; 4]);
        let maxes = [5u64, 9, 2, 9];
        let out = spmd_run(SpmdConfig::new(4), |c| c.allreduce_max_u64(maxes[c.rank()])).unwrap();
        assert_eq!(out, vec![9; 4]);
        assert_eq!(spmd_run(SpmdConfig::new(1), |c| c.allreduce_sum_u64(17)).unwrap(), vec![17]);
    }

    #[test]
    fn allreduce_overflow_reaches_every_rank() {
        let err = spmd_run(SpmdConfig::new(3), |c| c.allreduce_sum_u64(u64::MAX / 2)).unwrap_err();
        assert!(matches!(err, Error::Overflow(_)), "{err}");
    }

    #[test]
    fn exscan_examples() {
        let out = spmd_run(SpmdConfig::new(3), |c| c.exscan_sum_vec(vec![c.rank() as u64 + 1])).unwrap();
        assert_eq!(out, vec![vec![0], vec![1], vec![3]]);
        let out = spmd_run(SpmdConfig::new(3), |c| c.exscan_sum_vec(vec![])).unwrap();
        assert!(out.iter().all(Vec::is_empty));
        let out = spmd_run(SpmdConfig::new(2), |c| {
            let v = c.rank() as u64 + 1;
            c.exscan_sum_vec(vec![v, v])
        })
        .unwrap();
        assert_eq!(out[1], vec![1, 1]);
    }

    #[test]
    fn exscan_length_mismatch() {
        let err = spmd_run(SpmdConfig::new(3), |c| c.exscan_sum_vec(vec![0; c.rank() + 1])).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)), "{err}");
    }

    #[test]
    fn alltoallv_examples() {
        let out = spmd_run(SpmdConfig::new(2), |c| {
            let r = c.rank() as u8;
            c.alltoallv_bytes(vec![vec![r], vec![r]])
        })
        .unwrap();
        assert_eq!(out, vec![vec![vec![0], vec![1]]; 2]);
        let out = spmd_run(SpmdConfig::new(3), |c| c.alltoallv_bytes(vec![vec![]; 3])).unwrap();
        assert!(out.iter().flatten().all(Vec::is_empty));
    }

    #[test]
    fn alltoallv_transposes() {
        use rand::{Rng, SeedableRng};
        let p = 4;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let payloads: Vec<Vec<Vec<u8>>> = (0..p)
            .map(|_| {
                (0..p)
                    .map(|_| {
                        let len = rng.gen_range(0..40);
                        (0..len).map(|_| rng.gen()).collect()
                    })
                    .collect()
            })
            .collect();
        let out = spmd_run(SpmdConfig::new(p), |c| c.alltoallv_bytes(payloads[c.rank()].clone())).unwrap();
        for i in 0..p {
            for j in 0..p {
                assert_eq!(out[i][j], payloads[j][i]);
            }
        }
    }

    #[test]
    fn byte_accounting_matches_payloads() {
        let stats = spmd_run(SpmdConfig::new(3), |c| {
            let me = c.rank();
            c.send_bytes((me + 1) % 3, vec![0; 10 * (me + 1)])?;
            c.recv_bytes((me + 2) % 3)?;
            Ok(c.stats())
        })
        .unwrap();
        let sent: u64 = stats.iter().map(|s| s.bytes_sent).sum();
        let received: u64 = stats.iter().map(|s| s.bytes_received).sum();
        assert_eq!(sent, 60);
        assert_eq!(received, 60);
    }

    #[test]
    fn grid_requires_square() {
        assert!(matches!(spmd_run(SpmdConfig::grid(3), |_| Ok(())), Err(Error::Config(_))));
        assert_eq!(grid_side(25).unwrap(), 5);
        assert!(grid_side(0).is_err());
    }

    #[test]
    fn unmatched_message_is_reported() {
        let err = spmd_run(SpmdConfig::new(2), |c| {
            if c.rank() == 0 {
                c.send_bytes(1, vec![1])?;
            }
            Ok(())
        })
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("rank 0") && msg.contains("rank 1"), "{msg}");
    }

    #[test]
    fn tag_mismatch_is_protocol_error() {
        let err = spmd_run(SpmdConfig::new(2), |c| {
            if c.rank() == 0 {
                c.send_bytes(1, vec![1])
            } else {
                c.recv_tagged(0, Tag::Collective).map(drop)
            }
        })
        .unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
    }

    #[test]
    fn failure_does_not_hang_peers() {
        let err = spmd_run(SpmdConfig::new(4), |c| {
            if c.rank() == 2 {
                return Err(Error::Internal("boom".into()));
            }
            c.barrier()
        })
        .unwrap_err();
        assert!(matches!(err, Error::Internal(_)), "{err}");
    }
}
