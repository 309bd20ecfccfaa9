//! Point clouds of known intrinsic dimension.
//!
//! Samples are drawn in the manifold's native coordinates (`d` for cubes and
//! Gaussians, `d + 1` for spheres, 3 for the Swiss roll), then mapped into the
//! ambient space by the first columns of a random orthogonal matrix. This is
//! the same map as zero-padding followed by a full orthogonal rotation.
//!
//! Randomness comes from `ChaCha8Rng::seed_from_u64(seed)` with three
//! independent streams: 0 for the native samples, 1 for the orthogonal
//! embedding, 2 for ambient noise.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::cloud::{PointCloud, MIN_POINTS};
use crate::error::{Error, Result};

const STREAM_SAMPLES: u64 = 0;
const STREAM_EMBEDDING: u64 = 1;
const STREAM_NOISE: u64 = 2;

/// Swiss roll angle range `[1.5π, 4.5π]` and height range `[0, 21]`.
pub const SWISS_ROLL_T: (f64, f64) = (1.5 * PI, 4.5 * PI);
pub const SWISS_ROLL_HEIGHT: f64 = 21.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManifoldKind {
    /// Uniform in `[0, 1]^d`.
    Cube(usize),
    /// Uniform on the unit sphere `S^d ⊂ R^{d+1}`.
    Sphere(usize),
    SwissRoll,
    /// Standard normal in `R^d`.
    Gaussian(usize),
}

impl ManifoldKind {
    pub fn intrinsic_dim(&self) -> usize {
        match *self {
            ManifoldKind::Cube(d) | ManifoldKind::Sphere(d) | ManifoldKind::Gaussian(d) => d,
            ManifoldKind::SwissRoll => 2,
        }
    }

    /// Coordinates per sample before embedding.
    pub fn native_dim(&self) -> usize {
        match *self {
            ManifoldKind::Cube(d) | ManifoldKind::Gaussian(d) => d,
            ManifoldKind::Sphere(d) => d + 1,
            ManifoldKind::SwissRoll => 3,
        }
    }
}

impl fmt::Display for ManifoldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ManifoldKind::Cube(d) => write!(f, "cube({d})"),
            ManifoldKind::Sphere(d) => write!(f, "sphere({d})"),
            ManifoldKind::SwissRoll => f.write_str("swiss_roll"),
            ManifoldKind::Gaussian(d) => write!(f, "gaussian({d})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldSpec {
    pub kind: ManifoldKind,
    pub ambient: usize,
    pub n_points: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl ManifoldSpec {
    pub fn new(kind: ManifoldKind, ambient: usize, n_points: usize, seed: u64) -> Self {
        ManifoldSpec {
            kind,
            ambient,
            n_points,
            noise_sigma: 0.0,
            seed,
        }
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.intrinsic_dim() == 0 {
            return Err(Error::config("manifold dimension must be at least 1"));
        }
        let needed = self.kind.native_dim();
        if self.ambient < needed {
            return Err(Error::config(format!(
                "{} needs ambient dimension >= {needed}, got {}",
                self.kind, self.ambient
            )));
        }
        if self.n_points < MIN_POINTS {
            return Err(Error::config(format!(
                "need at least {MIN_POINTS} points, got {}",
                self.n_points
            )));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::config(format!(
                "noise sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Samples in native coordinates, row-major `n_points × native_dim`.
pub fn sample_native(spec: &ManifoldSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut rng = spec.rng(STREAM_SAMPLES);
    let dn = spec.kind.native_dim();
    let mut out = Vec::with_capacity(spec.n_points * dn);
    for _ in 0..spec.n_points {
        match spec.kind {
            ManifoldKind::Cube(d) => out.extend((0..d).map(|_| rng.random::<f64>())),
            ManifoldKind::Gaussian(d) => {
                out.extend((0..d).map(|_| -> f64 { StandardNormal.sample(&mut rng) }));
            }
            ManifoldKind::Sphere(_) => loop {
                let v: Vec<f64> = (0..dn).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    out.extend(v.iter().map(|x| x / norm));
                    break;
                }
            },
            ManifoldKind::SwissRoll => {
                let (t0, t1) = SWISS_ROLL_T;
                let t = t0 + (t1 - t0) * rng.random::<f64>();
                let h = SWISS_ROLL_HEIGHT * rng.random::<f64>();
                out.extend([t * t.cos(), h, t * t.sin()]);
            }
        }
    }
    Ok(out)
}

/// `ambient × cols` matrix with orthonormal columns: the leading columns of
/// the Q factor of a Gaussian matrix, signs fixed so that `diag(R) > 0`.
pub fn random_orthonormal_columns(ambient: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let gaussian = DMatrix::from_fn(ambient, cols, |_, _| StandardNormal.sample(rng));
    let qr = gaussian.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..cols {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Draws the cloud described by `spec` and returns it with its true dimension.
pub fn generate(spec: &ManifoldSpec) -> Result<(PointCloud, usize)> {
    let native = sample_native(spec)?;
    let dn = spec.kind.native_dim();
    let basis = random_orthonormal_columns(spec.ambient, dn, &mut spec.rng(STREAM_EMBEDDING));
    let noise = Normal::new(0.0, spec.noise_sigma)
        .map_err(|e| Error::config(format!("invalid noise sigma: {e}")))?;
    let mut noise_rng = spec.rng(STREAM_NOISE);

    let mut data = Vec::with_capacity(spec.n_points * spec.ambient);
    for x in native.chunks_exact(dn) {
        for a in 0..spec.ambient {
            let mut y: f64 = (0..dn).map(|c| basis[(a, c)] * x[c]).sum();
            if spec.noise_sigma > 0.0 {
                y += noise.sample(&mut noise_rng);
            }
            data.push(y as f32);
        }
    }
    Ok((PointCloud::new(data, spec.ambient)?, spec.kind.intrinsic_dim()))
}
