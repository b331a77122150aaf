//! Counter-based random streams.
//!
//! Every consumer of randomness asks for a stream keyed by
//! `(master_seed, tag, worker, round)`. The master seed keys a ChaCha12
//! generator and the remaining tuple is packed injectively into its 64-bit
//! stream id, so no two consumers ever share generator state and the draws
//! seen by one worker cannot depend on how many other workers ran first or
//! on which thread.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// What a stream is used for. Part of the stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamTag {
    Init = 0,
    Sampling = 1,
    Dropout = 2,
    Channel = 3,
    Noise = 4,
    Partition = 5,
    /// Synthetic dataset generation.
    Synthetic = 6,
    /// Randomized verification instances.
    Instance = 7,
}

const WORKER_BITS: u32 = 28;
const ROUND_BITS: u32 = 32;

/// Packs `(tag, worker, round)` into a stream id. `None` and `Some(i)` map to
/// distinct codes (0 and i + 1).
fn stream_id(tag: StreamTag, worker: Option<usize>, round: Option<usize>) -> u64 {
    let code = |v: Option<usize>, bits: u32| -> u64 {
        match v {
            None => 0,
            Some(i) => {
                let c = i as u64 + 1;
                assert!(c < (1u64 << bits), "stream index {i} does not fit in {bits} bits");
                c
            }
        }
    };
    ((tag as u64) << (WORKER_BITS + ROUND_BITS))
        | (code(worker, WORKER_BITS) << ROUND_BITS)
        | code(round, ROUND_BITS)
}

/// A deterministic random stream; a pure function of its key.
#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    tag: StreamTag,
    worker: Option<usize>,
    round: Option<usize>,
    rng: ChaCha12Rng,
}

impl RngStream {
    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn tag(&self) -> StreamTag {
        self.tag
    }

    pub fn worker(&self) -> Option<usize> {
        self.worker
    }

    pub fn round(&self) -> Option<usize> {
        self.round
    }
}

pub fn derive_stream(
    master_seed: u64,
    tag: StreamTag,
    worker: Option<usize>,
    round: Option<usize>,
) -> RngStream {
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
    rng.set_stream(stream_id(tag, worker, round));
    RngStream {
        master_seed,
        tag,
        worker,
        round,
        rng,
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn draws(s: &mut RngStream, n: usize) -> Vec<u64> {
        (0..n).map(|_| s.next_u64()).collect()
    }

    #[test]
    fn same_tuple_same_draws() {
        let mut a = derive_stream(7, StreamTag::Channel, None, Some(3));
        let mut b = derive_stream(7, StreamTag::Channel, None, Some(3));
        assert_eq!(draws(&mut a, 100), draws(&mut b, 100));
    }

    #[test]
    fn tag_changes_stream() {
        let mut a = derive_stream(7, StreamTag::Channel, None, Some(3));
        let mut b = derive_stream(7, StreamTag::Noise, None, Some(3));
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn seed_changes_stream() {
        let mut a = derive_stream(7, StreamTag::Dropout, Some(2), Some(0));
        let mut b = derive_stream(8, StreamTag::Dropout, Some(2), Some(0));
        assert_ne!(draws(&mut a, 16), draws(&mut b, 16));
    }

    #[test]
    fn none_differs_from_index_zero() {
        assert_ne!(
            stream_id(StreamTag::Sampling, None, Some(0)),
            stream_id(StreamTag::Sampling, Some(0), Some(0))
        );
        assert_ne!(
            stream_id(StreamTag::Sampling, Some(1), None),
            stream_id(StreamTag::Sampling, Some(1), Some(0))
        );
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn distinct_streams_are_uncorrelated() {
        let keys = [
            (StreamTag::Channel, None, Some(3)),
            (StreamTag::Noise, None, Some(3)),
            (StreamTag::Channel, None, Some(4)),
            (StreamTag::Sampling, Some(0), Some(3)),
            (StreamTag::Sampling, Some(1), Some(3)),
            (StreamTag::Dropout, Some(0), Some(3)),
        ];
        let series: Vec<Vec<f64>> = keys
            .iter()
            .map(|&(tag, w, t)| {
                let mut s = derive_stream(7, tag, w, t);
                (0..10_000).map(|_| s.random::<f64>()).collect()
            })
            .collect();
        for i in 0..series.len() {
            for j in i + 1..series.len() {
                let c = correlation(&series[i], &series[j]);
                assert!(c.abs() < 0.05, "streams {i},{j} correlate: {c}");
            }
        }
    }
}
