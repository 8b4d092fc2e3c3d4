use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Batch;

/// Seeded, splittable random stream.
///
/// Backed by ChaCha8, which is counter based: `substream(id)` selects an
/// independent stream for the same seed, so work split across sub-streams
/// draws the same numbers no matter how it is scheduled.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, stream, inner }
    }

    /// Independent stream derived from this one's seed. Does not advance `self`.
    pub fn substream(&self, id: u64) -> Self {
        // Stream ids are mixed with the parent's so nested splits stay distinct.
        let stream = self
            .stream
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(id.wrapping_add(1));
        Self::with_stream(self.seed, stream)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Position within the stream, in 32-bit words consumed.
    pub fn counter(&self) -> u128 {
        self.inner.get_word_pos()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn normal_vec(&mut self, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| self.normal()).collect()
    }

    /// `rows × dim` batch of independent standard normals, filled row by row.
    pub fn normal_batch(&mut self, rows: usize, dim: usize) -> Batch {
        let data = (0..rows * dim).map(|_| self.normal()).collect();
        Batch::from_vec(rows, dim, data).expect("sized buffer")
    }

    pub fn uniform_batch(&mut self, rows: usize, dim: usize, lo: f64, hi: f64) -> Batch {
        let data = (0..rows * dim)
            .map(|_| lo + (hi - lo) * self.uniform())
            .collect();
        Batch::from_vec(rows, dim, data).expect("sized buffer")
    }

    /// Rows of `pool` drawn uniformly with replacement.
    pub fn choose_rows(&mut self, pool: &Batch, n: usize) -> Batch {
        let mut out = Vec::with_capacity(n * pool.dim());
        for _ in 0..n {
            let i = self.index(pool.rows());
            out.extend_from_slice(pool.row(i));
        }
        Batch::from_vec(n, pool.dim(), out).expect("sized buffer")
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
