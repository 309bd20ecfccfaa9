#![allow(dead_code)]

use mprobe::{NeighborTable, PointCloud};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rows(cloud: &PointCloud) -> Vec<Vec<f32>> {
    cloud.rows().map(<[f32]>::to_vec).collect()
}

pub fn random_cloud(n: usize, dim: usize, seed: u64) -> PointCloud {
    let mut rng = rng(seed);
    let data = (0..n * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    PointCloud::new(data, dim).unwrap()
}

pub fn scaled(cloud: &PointCloud, c: f64) -> PointCloud {
    let data = cloud.as_slice().iter().map(|&x| (x as f64 * c) as f32).collect();
    PointCloud::new(data, cloud.dim()).unwrap()
}

/// Rotation by a product of `reflections` random Householder reflections,
/// then translation by a random offset with entries in `[-offset, offset]`.
/// Computed in f64 independently of the library's own orthogonal embedding.
pub fn random_isometry(cloud: &PointCloud, reflections: usize, offset: f64, seed: u64) -> PointCloud {
    let mut rng = rng(seed);
    let dim = cloud.dim();
    let normals: Vec<Vec<f64>> = (0..reflections)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    let shift: Vec<f64> = (0..dim).map(|_| rng.random_range(-offset..=offset)).collect();
    let mut data = Vec::with_capacity(cloud.len() * dim);
    for row in cloud.rows() {
        let mut x: Vec<f64> = row.iter().map(|&v| v as f64).collect();
        for v in &normals {
            let proj: f64 = x.iter().zip(v).map(|(a, b)| a * b).sum();
            x.iter_mut().zip(v).for_each(|(a, b)| *a -= 2.0 * proj * b);
        }
        data.extend(x.iter().zip(&shift).map(|(a, s)| (a + s) as f32));
    }
    PointCloud::new(data, dim).unwrap()
}

pub fn permuted(cloud: &PointCloud, seed: u64) -> PointCloud {
    let mut order: Vec<usize> = (0..cloud.len()).collect();
    order.shuffle(&mut rng(seed));
    let rows: Vec<&[f32]> = order.iter().map(|&i| cloud.row(i)).collect();
    PointCloud::from_rows(&rows).unwrap()
}

/// Appends exact copies of `count` randomly chosen points.
pub fn with_duplicates(cloud: &PointCloud, count: usize, seed: u64) -> PointCloud {
    let mut rng = rng(seed);
    let mut out = rows(cloud);
    let mut picks: Vec<usize> = (0..cloud.len()).collect();
    picks.shuffle(&mut rng);
    for &i in &picks[..count] {
        out.push(cloud.row(i).to_vec());
    }
    PointCloud::from_rows(&out).unwrap()
}

/// Neighbour table drawn from the TwoNN generative model itself:
/// r₁ = 1 and r₂ = μ with μ = exp(E/d), E ~ Exp(1), so P(μ > m) = m^{-d}.
pub fn twonn_model_table(d: f64, n: usize, seed: u64) -> NeighborTable {
    let mut rng = rng(seed);
    let mut distances = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let u: f64 = rng.random_range(f64::EPSILON..1.0);
        let e = -u.ln();
        distances.extend([1.0, (e / d).exp()]);
    }
    let indices = (0..n).flat_map(|i| [(i + 1) % n, (i + 2) % n]).collect();
    NeighborTable::from_parts(2, indices, distances).unwrap()
}

/// Σdxdy / √(Σdx²·Σdy²) via raw sums, independent of the library's two-pass form.
pub fn pearson_textbook(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (sx, sy): (f64, f64) = (xs.iter().sum(), ys.iter().sum());
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let syy: f64 = ys.iter().map(|y| y * y).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt()
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
