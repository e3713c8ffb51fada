//! Counter-based random streams.
//!
//! Every stream is a ChaCha8 keystream whose key is derived from the master
//! seed and whose 64-bit stream selector is the stream id. The state of any
//! stream is therefore a pure function of `(master_seed, stream_id)`: no
//! stream depends on how many values another stream has produced, which is
//! what makes replica batches schedule-invariant.

use rand::SeedableRng;
use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type StreamRng = ChaCha8Rng;

/// Independent, reproducible random stream for `(master_seed, stream_id)`.
pub fn seed_stream(master_seed: u64, stream_id: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream_id);
    rng
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hierarchical address of a random stream: a master seed plus a stream id
/// obtained by hashing a path of indices (experiment, epsilon, start, batch).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub master: u64,
    pub id: u64,
}

impl StreamKey {
    pub fn new(master: u64) -> Self {
        Self { master, id: 0 }
    }

    pub fn with_id(master: u64, id: u64) -> Self {
        Self { master, id }
    }

    pub fn child(&self, index: u64) -> Self {
        Self {
            master: self.master,
            id: splitmix64(self.id ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d))),
        }
    }

    pub fn rng(&self) -> StreamRng {
        seed_stream(self.master, self.id)
    }
}

/// Fills `out` with independent `Normal(0, std_dev^2)` draws.
#[inline]
pub fn fill_normal<R: rand::Rng + ?Sized>(rng: &mut R, std_dev: f64, out: &mut [f64]) {
    for x in out.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *x = std_dev * z;
    }
}

/// Replicas per batch; every batch owns one stream.
pub const BATCH_SIZE: u64 = 4096;

/// Splits `replicas` into fixed-size batches, runs batch `b` on stream
/// `key.child(b)` on the rayon pool, and returns the batch results in batch
/// order. Output does not depend on the number of worker threads.
pub fn par_batches<T, E, F>(replicas: u64, key: StreamKey, work: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(u64, &mut StreamRng) -> Result<T, E> + Sync + Send,
{
    let batches = replicas.div_ceil(BATCH_SIZE);
    (0..batches)
        .into_par_iter()
        .map(|b| {
            let count = BATCH_SIZE.min(replicas - b * BATCH_SIZE);
            let mut rng = key.child(b).rng();
            work(count, &mut rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_address_same_sequence() {
        let mut a = seed_stream(7, 3);
        let mut b = seed_stream(7, 3);
        for _ in 0..100 {
            assert_eq!(a.random::<u64>(), b.random::<u64>());
        }
    }

    #[test]
    fn distinct_ids_differ_immediately() {
        let mut a = seed_stream(7, 3);
        let mut b = seed_stream(7, 4);
        assert_ne!(a.random::<u64>(), b.random::<u64>());
        let k = StreamKey::new(7);
        assert_ne!(k.child(0).id, k.child(1).id);
        assert_ne!(k.child(0).child(1).id, k.child(1).child(0).id);
    }

    #[test]
    fn stream_state_ignores_sibling_consumption() {
        let key = StreamKey::new(11);
        let mut first = key.child(5).rng();
        let expected: Vec<u64> = (0..8).map(|_| first.random()).collect();
        let mut sibling = key.child(4).rng();
        for _ in 0..1000 {
            let _: u64 = sibling.random();
        }
        let mut again = key.child(5).rng();
        let got: Vec<u64> = (0..8).map(|_| again.random()).collect();
        assert_eq!(expected, got);
    }

    #[test]
    fn batches_are_thread_count_invariant() {
        let run = |threads| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                par_batches::<_, (), _>(10_000, StreamKey::new(5), |n, rng| {
                    Ok((0..n).map(|_| rng.random::<f64>()).sum::<f64>())
                })
                .unwrap()
            })
        };
        let one = run(1);
        assert_eq!(one.len(), 3);
        assert_eq!(one, run(3));
    }

    #[test]
    fn many_streams_have_standard_normal_moments() {
        // 10^4 streams x 10^3 draws: |mean| < 4 sigma / sqrt(n), variance near 1.
        let key = StreamKey::new(2024);
        let per_stream = 1000usize;
        let streams = 10_000u64;
        let mut buf = vec![0.0; per_stream];
        let (mut sum, mut sum_sq) = (0.0f64, 0.0f64);
        for s in 0..streams {
            let mut rng = key.child(s).rng();
            fill_normal(&mut rng, 1.0, &mut buf);
            for &x in &buf {
                sum += x;
                sum_sq += x * x;
            }
        }
        let n = (streams as usize * per_stream) as f64;
        let mean = sum / n;
        let var = sum_sq / n - mean * mean;
        assert!(mean.abs() < 4.0 / n.sqrt(), "mean {mean}");
        // var of the sample variance of N(0,1) is 2/n.
        assert!((var - 1.0).abs() < 4.0 * (2.0 / n).sqrt(), "var {var}");
    }
}
