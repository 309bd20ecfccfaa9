//! Exact k-nearest-neighbour tables under the Euclidean metric.
//!
//! [`knn_exact`] uses the Gram expansion `‖x−y‖² = ‖x‖² + ‖y‖² − 2⟨x,y⟩` over
//! tiles of `block_size × block_size` points, accumulating every inner product
//! in `f64` over fixed-width coordinate chunks. Each pair's distance is computed
//! by the same sequence of operations regardless of tiling or thread count, so
//! tables are bit-identical across parallelism settings. Exact duplicates come
//! out at distance `0.0` because norms go through the same kernel as the cross
//! products.
//!
//! [`knn_naive`] is the direct `√Σ(xᵢ−yᵢ)²` loop, kept as an oracle.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::cloud::{NeighborTable, PointCloud, MIN_POINTS};
use crate::error::{Error, Result};

/// Coordinates per accumulation chunk. Fixed so results do not depend on `block_size`.
const COORD_CHUNK: usize = 512;

pub const DEFAULT_BLOCK_SIZE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    /// Use the ambient rayon pool.
    #[default]
    Auto,
    Threads(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnnConfig {
    pub k: usize,
    pub block_size: usize,
    pub parallelism: Parallelism,
}

impl KnnConfig {
    pub fn new(k: usize) -> Self {
        KnnConfig {
            k,
            block_size: DEFAULT_BLOCK_SIZE,
            parallelism: Parallelism::Auto,
        }
    }

    pub fn with_block_size(mut self, block_size: usize) -> Self {
        self.block_size = block_size;
        self
    }

    pub fn with_parallelism(mut self, parallelism: Parallelism) -> Self {
        self.parallelism = parallelism;
        self
    }

    pub fn validate(&self, n_points: usize) -> Result<()> {
        check_k(self.k, n_points)?;
        if self.block_size == 0 {
            return Err(Error::config("block_size must be at least 1"));
        }
        if self.parallelism == Parallelism::Threads(0) {
            return Err(Error::config("thread count must be at least 1"));
        }
        Ok(())
    }
}

fn check_k(k: usize, n_points: usize) -> Result<()> {
    if n_points < MIN_POINTS {
        return Err(Error::input(format!(
            "need at least {MIN_POINTS} points, got {n_points}"
        )));
    }
    if k < 2 || k >= n_points {
        return Err(Error::config(format!(
            "k = {k} out of range: need 2 <= k <= N - 1 = {}",
            n_points - 1
        )));
    }
    Ok(())
}

/// Candidate ordered by (distance, index).
#[derive(Debug, Clone, Copy)]
struct Candidate {
    dist: f64,
    index: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.index.cmp(&other.index))
    }
}

/// Bounded max-heap holding the `k` smallest candidates seen so far.
struct TopK {
    k: usize,
    heap: BinaryHeap<Candidate>,
}

impl TopK {
    fn new(k: usize) -> Self {
        TopK {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    fn push(&mut self, c: Candidate) {
        if self.heap.len() < self.k {
            self.heap.push(c);
        } else if let Some(mut top) = self.heap.peek_mut() {
            if c < *top {
                *top = c;
            }
        }
    }

    fn write_sorted(self, indices: &mut [usize], distances: &mut [f64]) {
        let sorted = self.heap.into_sorted_vec();
        for (slot, c) in sorted.into_iter().enumerate() {
            indices[slot] = c.index;
            distances[slot] = c.dist;
        }
    }
}

/// Inner product over one chunk with four independent `f64` lanes.
#[inline]
fn dot_chunk(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        lanes[0] += x[0] as f64 * y[0] as f64;
        lanes[1] += x[1] as f64 * y[1] as f64;
        lanes[2] += x[2] as f64 * y[2] as f64;
        lanes[3] += x[3] as f64 * y[3] as f64;
    }
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        lanes[0] += *x as f64 * *y as f64;
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3])
}

/// Full inner product: chunk partial sums added in coordinate order.
fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.chunks(COORD_CHUNK)
        .zip(b.chunks(COORD_CHUNK))
        .fold(0.0, |acc, (x, y)| acc + dot_chunk(x, y))
}

/// `out[q * nc + c] = ⟨queries[q], candidates[c]⟩`, accumulated chunk by chunk
/// in the same order as [`dot`].
fn tile_dots(cloud: &PointCloud, queries: std::ops::Range<usize>, candidates: std::ops::Range<usize>, out: &mut [f64]) {
    let dim = cloud.dim();
    let nc = candidates.len();
    out.fill(0.0);
    let mut start = 0;
    while start < dim {
        let end = (start + COORD_CHUNK).min(dim);
        for (q, qi) in queries.clone().enumerate() {
            let x = &cloud.row(qi)[start..end];
            let row = &mut out[q * nc..(q + 1) * nc];
            for (acc, ci) in row.iter_mut().zip(candidates.clone()) {
                *acc += dot_chunk(x, &cloud.row(ci)[start..end]);
            }
        }
        start = end;
    }
}

fn run_with<T: Send>(parallelism: Parallelism, f: impl FnOnce() -> T + Send) -> Result<T> {
    match parallelism {
        Parallelism::Auto => Ok(f()),
        Parallelism::Threads(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::config(format!("cannot build thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Exact k-NN table via the blocked Gram kernel.
pub fn knn_exact(cloud: &PointCloud, cfg: &KnnConfig) -> Result<NeighborTable> {
    let n = cloud.len();
    cfg.validate(n)?;
    let k = cfg.k;
    let block = cfg.block_size;

    run_with(cfg.parallelism, || {
        let norms: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| dot(cloud.row(i), cloud.row(i)))
            .collect();

        let mut indices = vec![0usize; n * k];
        let mut distances = vec![0.0f64; n * k];
        indices
            .par_chunks_mut(block * k)
            .zip(distances.par_chunks_mut(block * k))
            .enumerate()
            .for_each(|(b, (idx_out, dist_out))| {
                let q0 = b * block;
                let q1 = (q0 + block).min(n);
                let mut heaps: Vec<TopK> = (q0..q1).map(|_| TopK::new(k)).collect();
                let mut tile = vec![0.0f64; block * block];
                let mut c0 = 0;
                while c0 < n {
                    let c1 = (c0 + block).min(n);
                    let nc = c1 - c0;
                    let tile = &mut tile[..(q1 - q0) * nc];
                    tile_dots(cloud, q0..q1, c0..c1, tile);
                    for (q, heap) in heaps.iter_mut().enumerate() {
                        let qi = q0 + q;
                        let row = &tile[q * nc..(q + 1) * nc];
                        for (c, &ip) in row.iter().enumerate() {
                            let ci = c0 + c;
                            if ci == qi {
                                continue;
                            }
                            let sq = (norms[qi] + norms[ci]) - 2.0 * ip;
                            heap.push(Candidate {
                                dist: sq.max(0.0).sqrt(),
                                index: ci,
                            });
                        }
                    }
                    c0 = c1;
                }
                for (q, heap) in heaps.into_iter().enumerate() {
                    heap.write_sorted(
                        &mut idx_out[q * k..(q + 1) * k],
                        &mut dist_out[q * k..(q + 1) * k],
                    );
                }
            });
        NeighborTable::from_parts_unchecked(k, indices, distances)
    })
}

/// Reference k-NN by direct coordinate differences. Quadratic; meant for tests.
pub fn knn_naive(cloud: &PointCloud, k: usize) -> Result<NeighborTable> {
    let n = cloud.len();
    check_k(k, n)?;
    let mut indices = Vec::with_capacity(n * k);
    let mut distances = Vec::with_capacity(n * k);
    let mut all = Vec::with_capacity(n - 1);
    for i in 0..n {
        let x = cloud.row(i);
        all.clear();
        for j in (0..n).filter(|&j| j != i) {
            let sq: f64 = x
                .iter()
                .zip(cloud.row(j))
                .map(|(&a, &b)| {
                    let d = a as f64 - b as f64;
                    d * d
                })
                .sum();
            all.push(Candidate {
                dist: sq.sqrt(),
                index: j,
            });
        }
        all.sort_unstable();
        for c in &all[..k] {
            indices.push(c.index);
            distances.push(c.dist);
        }
    }
    Ok(NeighborTable::from_parts_unchecked(k, indices, distances))
}
