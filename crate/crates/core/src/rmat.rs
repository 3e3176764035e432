//! Graph500-style RMAT generation.
//!
//! Every raw edge draws from its own ChaCha8 stream: the generator is
//! seeded once from `seed` and edge `e` uses stream id `e`, so output does
//! not depend on the order edges are produced in.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{canonicalize, EdgeList};

/// Graph500 quadrant probabilities `(A, B, C, D)`.
pub const GRAPH500_PROBS: [f64; 4] = [0.57, 0.19, 0.19, 0.05];
pub const DEFAULT_EDGE_FACTOR: u64 = 16;
pub const DEFAULT_MAX_SCALE: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmatParams {
    pub scale: u32,
    pub edge_factor: u64,
    pub probs: [f64; 4],
    pub seed: u64,
    /// refuse anything larger than this
    pub max_scale: u32,
}

impl RmatParams {
    pub fn new(scale: u32, edge_factor: u64, seed: u64) -> Self {
        RmatParams {
            scale,
            edge_factor,
            probs: GRAPH500_PROBS,
            seed,
            max_scale: DEFAULT_MAX_SCALE,
        }
    }

    pub fn vertices(&self) -> u64 {
        1u64 << self.scale
    }

    pub fn raw_edges(&self) -> u64 {
        self.edge_factor << self.scale
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale < 1 {
            return Err(Error::Config("RMAT scale must be at least 1".into()));
        }
        if self.scale > self.max_scale {
            return Err(Error::Config(format!(
                "RMAT scale {} exceeds the limit of {}",
                self.scale, self.max_scale
            )));
        }
        if self.edge_factor < 1 {
            return Err(Error::Config("edge factor must be at least 1".into()));
        }
        if self.probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("quadrant probabilities must lie in [0, 1]".into()));
        }
        let total: f64 = self.probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "quadrant probabilities sum to {total}, not 1"
            )));
        }
        Ok(())
    }
}

/// Raw directed edges before canonicalization.
pub fn raw_edges(params: &RmatParams) -> Result<Vec<(u64, u64)>> {
    params.validate()?;
    let [a, b, c, _] = params.probs;
    let (ab, abc) = (a + b, a + b + c);
    let base = ChaCha8Rng::seed_from_u64(params.seed);
    let edges = (0..params.raw_edges())
        .map(|e| {
            let mut rng = base.clone();
            rng.set_stream(e);
            let (mut u, mut v) = (0u64, 0u64);
            for _ in 0..params.scale {
                let r: f64 = rng.gen();
                let (bu, bv) = if r < a {
                    (0, 0)
                } else if r < ab {
                    (0, 1)
                } else if r < abc {
                    (1, 0)
                } else {
                    (1, 1)
                };
                u = (u << 1) | bu;
                v = (v << 1) | bv;
            }
            (u, v)
        })
        .collect();
    Ok(edges)
}

/// `2^scale` vertices with canonicalized RMAT edges.
pub fn generate(params: &RmatParams) -> Result<EdgeList> {
    let edges = raw_edges(params)?;
    canonicalize(&EdgeList::new(params.vertices(), edges))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{to_csr, GraphStats};

    #[test]
    fn graph500_s26_dimensions() {
        let p = RmatParams::new(26, 16, 0);
        assert_eq!(p.vertices(), 67_108_864);
        assert_eq!(p.raw_edges(), 1_073_741_824);
    }

    #[test]
    fn scale_one_has_at_most_one_edge() {
        for seed in 0..20 {
            let g = generate(&RmatParams::new(1, 1, seed)).unwrap();
            assert_eq!(g.n, 2);
            assert!(g.len() <= 1);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let p = RmatParams::new(8, 8, 7);
        assert_eq!(generate(&p).unwrap(), generate(&p).unwrap());
        let q = RmatParams { seed: 8, ..p };
        assert_ne!(generate(&p).unwrap(), generate(&q).unwrap());
    }

    #[test]
    fn canonical_and_bounded() {
        let p = RmatParams::new(9, 4, 3);
        let g = generate(&p).unwrap();
        assert!(g.is_canonical());
        assert!(g.len() as u64 <= p.raw_edges());
    }

    #[test]
    fn degrees_are_skewed() {
        for seed in [1, 2, 42] {
            let g = generate(&RmatParams::new(10, 16, seed)).unwrap();
            let s = GraphStats::of(&to_csr(&g).unwrap());
            assert!(s.d_max as f64 >= 4.0 * s.d_avg, "{s:?}");
        }
    }

    #[test]
    fn rejects_bad_params() {
        assert!(generate(&RmatParams::new(33, 16, 0)).is_err());
        assert!(generate(&RmatParams::new(0, 16, 0)).is_err());
        assert!(generate(&RmatParams::new(4, 0, 0)).is_err());
        let mut p = RmatParams::new(4, 1, 0);
        p.probs = [0.5, 0.2, 0.2, 0.2];
        assert!(generate(&p).is_err());
        p.max_scale = 3;
        p.probs = GRAPH500_PROBS;
        assert!(generate(&p).is_err());
    }
}
