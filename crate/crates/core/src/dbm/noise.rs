//! Counter-based Gaussian noise and dyadic Brownian refinement.
//!
//! Every Gaussian vector is a pure function of `(seed, stream_id, counter, node)`, so
//! re-runs, parallel schedules and coupled systems see identical increments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Address of a Gaussian stream: one `counter` value per macro step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseStream {
    pub seed: u64,
    pub stream_id: u64,
    pub counter: u64,
}

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl NoiseStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id, counter: 0 }
    }

    /// Deterministic generator for one node of one macro step.
    pub fn rng(&self, node: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let mut h = splitmix(self.seed ^ 0x5bd1_e995);
        h = splitmix(h ^ self.counter);
        h = splitmix(h ^ node);
        for (k, chunk) in key.chunks_exact_mut(8).enumerate() {
            h = splitmix(h ^ k as u64);
            chunk.copy_from_slice(&h.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.stream_id);
        rng
    }

    /// `n` standard normals for `node` at the current counter.
    pub fn gaussians(&self, node: u64, out: &mut [f64]) {
        let mut rng = self.rng(node);
        for x in out.iter_mut() {
            *x = rng.sample(StandardNormal);
        }
    }

    /// Stream for an auxiliary purpose (reference sampling, jitter) that never collides
    /// with macro-step counters.
    pub fn derived(&self, tag: u64) -> Self {
        Self { seed: splitmix(self.seed ^ splitmix(tag)), stream_id: self.stream_id, counter: 0 }
    }
}

/// Brownian increments on the dyadic subintervals of one macro step `[0, dt]`.
///
/// Node `(depth, pos)` covers `[pos·dt/2^depth, (pos + 1)·dt/2^depth]`. Children are
/// obtained by Brownian-bridge refinement: with parent increment ΔW over length L,
/// the left child is ΔW/2 + (√L/2)·Z and the right child is ΔW minus the left one,
/// where Z is keyed by the parent node.
pub struct BrownianTree {
    stream: NoiseStream,
    dt: f64,
    n: usize,
    levels: Vec<Option<(u64, Vec<f64>)>>,
    z: Vec<f64>,
}

const ROOT_NODE: u64 = u64::MAX;

impl BrownianTree {
    pub fn new(stream: NoiseStream, dt: f64, n: usize) -> Self {
        Self { stream, dt, n, levels: Vec::new(), z: vec![0.0; n] }
    }

    fn node_id(depth: u32, pos: u64) -> u64 {
        ((depth as u64) << 40) | pos
    }

    /// Increment vector on node `(depth, pos)`.
    pub fn increment(&mut self, depth: u32, pos: u64) -> &[f64] {
        self.ensure(depth, pos);
        &self.levels[depth as usize].as_ref().unwrap().1
    }

    fn ensure(&mut self, depth: u32, pos: u64) {
        let d = depth as usize;
        if self.levels.len() <= d {
            self.levels.resize(d + 1, None);
        }
        if let Some((p, _)) = &self.levels[d] {
            if *p == pos {
                return;
            }
        }
        let mut buf = match self.levels[d].take() {
            Some((_, v)) => v,
            None => vec![0.0; self.n],
        };
        if depth == 0 {
            self.stream.gaussians(ROOT_NODE, &mut buf);
            let s = self.dt.sqrt();
            buf.iter_mut().for_each(|x| *x *= s);
        } else {
            let parent_pos = pos >> 1;
            self.ensure(depth - 1, parent_pos);
            let parent_len = self.dt / (1u64 << (depth - 1)) as f64;
            let mut z = std::mem::take(&mut self.z);
            self.stream.gaussians(Self::node_id(depth - 1, parent_pos), &mut z);
            let parent = &self.levels[d - 1].as_ref().unwrap().1;
            let half_sd = 0.5 * parent_len.sqrt();
            let right = pos & 1 == 1;
            for ((b, &p), &zz) in buf.iter_mut().zip(parent).zip(&z) {
                let left = 0.5 * p + half_sd * zz;
                *b = if right { p - left } else { left };
            }
            self.z = z;
        }
        self.levels[d] = Some((pos, buf));
        // deeper cached levels are no longer descendants
        for lvl in self.levels.iter_mut().skip(d + 1) {
            *lvl = None;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_address_same_numbers() {
        let s = NoiseStream { seed: 7, stream_id: 3, counter: 11 };
        let mut a = vec![0.0; 16];
        let mut b = vec![0.0; 16];
        s.gaussians(5, &mut a);
        s.gaussians(5, &mut b);
        assert_eq!(a, b);
        let mut c = vec![0.0; 16];
        NoiseStream { stream_id: 4, ..s }.gaussians(5, &mut c);
        assert_ne!(a, c);
    }

    #[test]
    fn children_sum_to_parent() {
        let mut tree = BrownianTree::new(NoiseStream::new(1, 2), 0.5, 4);
        let root = tree.increment(0, 0).to_vec();
        let l = tree.increment(3, 4).to_vec();
        let r = tree.increment(3, 5).to_vec();
        let parent = tree.increment(2, 2).to_vec();
        for k in 0..4 {
            assert!((l[k] + r[k] - parent[k]).abs() < 1e-14);
        }
        let mut total = [0.0; 4];
        for pos in 0..8 {
            let inc = tree.increment(3, pos).to_vec();
            for k in 0..4 {
                total[k] += inc[k];
            }
        }
        for k in 0..4 {
            assert!((total[k] - root[k]).abs() < 1e-13);
        }
    }

    #[test]
    fn refined_increments_have_the_right_variance() {
        let depth = 3;
        let dt = 2.0;
        let len = dt / 8.0;
        let mut sum2 = 0.0;
        let mut count = 0.0;
        for c in 0..400 {
            let mut tree = BrownianTree::new(NoiseStream { seed: 9, stream_id: 0, counter: c }, dt, 8);
            for pos in 0..8 {
                for x in tree.increment(depth, pos) {
                    sum2 += x * x;
                    count += 1.0;
                }
            }
        }
        let var = sum2 / count;
        assert!((var / len - 1.0).abs() < 0.05, "{}", var / len);
    }
}
