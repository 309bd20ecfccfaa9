//! Domain types shared by the estimators, the analysis code and the file formats.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::EstimatorParams;

/// Module path of the UNet layer recorded as the bottleneck representation.
pub const BOTTLENECK_LAYER_PATH: &str = "unet.down_blocks[3].resnets[1].nonlinearity";
/// Per-image bottleneck activation shape (classifier-free guidance doubling included).
pub const BOTTLENECK_SHAPE: [usize; 4] = [2, 1280, 8, 8];
/// Per-image latent shape, the UNet output fed to the VAE decoder.
pub const LATENT_SHAPE: [usize; 3] = [4, 64, 64];
/// Smallest cloud either estimator can handle: two neighbours per point.
pub const MIN_POINTS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Index of the first NaN or infinite element.
    pub fn first_non_finite(&self) -> Option<usize> {
        match self {
            TensorData::F32(v) => v.iter().position(|x| !x.is_finite()),
            TensorData::F64(v) => v.iter().position(|x| !x.is_finite()),
        }
    }
}

/// Dense row-major tensor: the last axis varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::input("tensor must have at least one axis"));
        }
        let expected = checked_product(&shape)
            .ok_or_else(|| Error::input(format!("tensor shape {shape:?} overflows usize")))?;
        if expected != data.len() {
            return Err(Error::input(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::new(shape, TensorData::F32(data))
    }

    pub fn from_f64(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::new(shape, TensorData::F64(data))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn into_parts(self) -> (Vec<usize>, TensorData) {
        (self.shape, self.data)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row-major offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> Option<usize> {
        if index.len() != self.shape.len() {
            return None;
        }
        let mut offset = 0usize;
        for (&i, &dim) in index.iter().zip(&self.shape) {
            if i >= dim {
                return None;
            }
            offset = offset * dim + i;
        }
        Some(offset)
    }

    /// Inverse of [`Tensor::offset`].
    pub fn unravel(&self, mut offset: usize) -> Option<Vec<usize>> {
        if offset >= self.len() {
            return None;
        }
        let mut index = vec![0; self.shape.len()];
        for (slot, &dim) in index.iter_mut().zip(&self.shape).rev() {
            *slot = offset % dim;
            offset /= dim;
        }
        Some(index)
    }
}

pub(crate) fn checked_product(dims: &[usize]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

/// Flattens one activation tensor into a point, row-major, at 32-bit precision.
pub fn flatten_activation(tensor: &Tensor) -> Result<Vec<f32>> {
    if tensor.is_empty() {
        return Err(Error::input("cannot flatten an empty tensor"));
    }
    if let Some(i) = tensor.data.first_non_finite() {
        return Err(Error::input(format!(
            "non-finite element at flat index {i} (multi-index {:?})",
            tensor.unravel(i).unwrap_or_default()
        )));
    }
    Ok(match &tensor.data {
        TensorData::F32(v) => v.clone(),
        TensorData::F64(v) => v.iter().map(|&x| x as f32).collect(),
    })
}

/// A finite sample of `len()` points in `dim()` ambient dimensions.
///
/// Coordinates are stored as `f32` in one row-major buffer; every
/// distance computation downstream accumulates in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    data: Vec<f32>,
    n_points: usize,
    dim: usize,
}

impl PointCloud {
    /// Builds a cloud from a flat row-major buffer of `len / dim` points.
    pub fn new(data: Vec<f32>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::input("ambient dimension must be at least 1"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::input(format!(
                "buffer of {} values is not a whole number of {dim}-dimensional rows",
                data.len()
            )));
        }
        let n_points = data.len() / dim;
        if n_points < MIN_POINTS {
            return Err(Error::input(format!(
                "point cloud needs at least {MIN_POINTS} points, got {n_points}"
            )));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::input(format!(
                "non-finite coordinate at point {}, axis {}",
                i / dim,
                i % dim
            )));
        }
        Ok(PointCloud {
            data,
            n_points,
            dim,
        })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::input(format!(
                    "row {i} has length {}, expected {dim}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::new(data, dim)
    }

    /// One point per tensor; all tensors must share a shape.
    pub fn from_tensors(tensors: &[Tensor]) -> Result<Self> {
        let Some(first) = tensors.first() else {
            return Err(Error::input("no tensors given"));
        };
        let dim = first.len();
        let mut data = Vec::with_capacity(tensors.len() * dim);
        for (i, t) in tensors.iter().enumerate() {
            if t.shape() != first.shape() {
                return Err(Error::input(format!(
                    "tensor {i} has shape {:?}, expected {:?}",
                    t.shape(),
                    first.shape()
                )));
            }
            data.extend(flatten_activation(t)?);
        }
        Self::new(data, dim)
    }

    /// Treats axis 0 as the sample axis and flattens the remaining axes.
    pub fn from_stacked(tensor: &Tensor) -> Result<Self> {
        let shape = tensor.shape();
        if shape.len() < 2 {
            return Err(Error::input(format!(
                "stacked tensor needs a sample axis plus at least one more, got shape {shape:?}"
            )));
        }
        let dim = shape[1..].iter().product();
        Self::new(flatten_activation(tensor)?, dim)
    }

    pub fn len(&self) -> usize {
        self.n_points
    }

    pub fn is_empty(&self) -> bool {
        self.n_points == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// The cloud as a `len() × dim()` tensor, ready for ATF output.
    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            shape: vec![self.n_points, self.dim],
            data: TensorData::F32(self.data.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Layer {
    Bottleneck,
    Latent,
    Other(String),
}

impl Layer {
    /// Flattened row length produced by the reference extractor, if known.
    pub fn expected_len(&self) -> Option<usize> {
        match self {
            Layer::Bottleneck => Some(BOTTLENECK_SHAPE.iter().product()),
            Layer::Latent => Some(LATENT_SHAPE.iter().product()),
            Layer::Other(_) => None,
        }
    }

    /// Parses a manifest layer name; the bottleneck module path maps to [`Layer::Bottleneck`].
    pub fn from_name(name: &str) -> Self {
        match name {
            "bottleneck" | BOTTLENECK_LAYER_PATH => Layer::Bottleneck,
            "latent" => Layer::Latent,
            other => Layer::Other(other.to_string()),
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Layer::Bottleneck => f.write_str("bottleneck"),
            Layer::Latent => f.write_str("latent"),
            Layer::Other(name) => f.write_str(name),
        }
    }
}

impl Serialize for Layer {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Layer {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        Ok(Layer::from_name(&name))
    }
}

/// Identifies which representation manifold a cloud samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CloudTag {
    pub layer: Layer,
    pub prompt: String,
    pub prompt_id: String,
    /// Denoising step, 1-based.
    pub step: u32,
}

/// Per-point nearest neighbours, ascending by distance with ties broken by index.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTable {
    k: usize,
    indices: Vec<usize>,
    distances: Vec<f64>,
}

impl NeighborTable {
    /// Validates and wraps raw `N × k` buffers.
    pub fn from_parts(k: usize, indices: Vec<usize>, distances: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(Error::input("neighbour table needs k >= 1"));
        }
        if indices.len() != distances.len() || !indices.len().is_multiple_of(k) {
            return Err(Error::input(format!(
                "index buffer ({}) and distance buffer ({}) must both be N × {k}",
                indices.len(),
                distances.len()
            )));
        }
        let n = indices.len() / k;
        for i in 0..n {
            let idx = &indices[i * k..(i + 1) * k];
            let dist = &distances[i * k..(i + 1) * k];
            if let Some(&j) = idx.iter().find(|&&j| j == i || j >= n) {
                return Err(Error::input(format!(
                    "row {i} lists invalid neighbour index {j}"
                )));
            }
            if dist.iter().any(|d| !d.is_finite() || *d < 0.0) {
                return Err(Error::input(format!(
                    "row {i} has a negative or non-finite distance"
                )));
            }
            if dist.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::input(format!("row {i} distances are not ascending")));
            }
        }
        Ok(NeighborTable {
            k,
            indices,
            distances,
        })
    }

    pub(crate) fn from_parts_unchecked(k: usize, indices: Vec<usize>, distances: Vec<f64>) -> Self {
        debug_assert_eq!(indices.len(), distances.len());
        NeighborTable {
            k,
            indices,
            distances,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.indices.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn distances(&self, i: usize) -> &[f64] {
        &self.distances[i * self.k..(i + 1) * self.k]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Mle,
    #[serde(rename = "twonn")]
    TwoNn,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Mle => "mle",
            Estimator::TwoNn => "twonn",
        })
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mle" => Ok(Estimator::Mle),
            "twonn" => Ok(Estimator::TwoNn),
            other => Err(Error::input(format!("unknown estimator {other:?}"))),
        }
    }
}

/// A single intrinsic-dimension estimate for one cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct IdEstimate {
    pub value: f64,
    pub estimator: Estimator,
    /// `None` when the estimate was reloaded from a report that does not record parameters.
    pub params: Option<EstimatorParams>,
    /// Points that contributed after duplicate exclusion.
    pub n_used: usize,
    pub warnings: Vec<String>,
}

impl IdEstimate {
    /// Rebuilds an estimate from a report row.
    pub fn from_report(value: f64, estimator: Estimator, n_used: usize) -> Result<Self> {
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::input(format!(
                "dimension estimate must be positive and finite, got {value}"
            )));
        }
        Ok(IdEstimate {
            value,
            estimator,
            params: None,
            n_used,
            warnings: Vec::new(),
        })
    }
}

/// ID estimates over denoising steps for one (layer, prompt, estimator).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    layer: Layer,
    prompt_id: String,
    estimator: Estimator,
    steps: Vec<(u32, IdEstimate)>,
}

impl Trajectory {
    pub fn new(
        layer: Layer,
        prompt_id: impl Into<String>,
        estimator: Estimator,
        steps: Vec<(u32, IdEstimate)>,
    ) -> Result<Self> {
        if let Some(w) = steps.windows(2).find(|w| w[1].0 <= w[0].0) {
            return Err(Error::input(format!(
                "trajectory steps must be strictly increasing, found {} then {}",
                w[0].0, w[1].0
            )));
        }
        Ok(Trajectory {
            layer,
            prompt_id: prompt_id.into(),
            estimator,
            steps,
        })
    }

    pub fn layer(&self) -> &Layer {
        &self.layer
    }

    pub fn prompt_id(&self) -> &str {
        &self.prompt_id
    }

    pub fn estimator(&self) -> Estimator {
        self.estimator
    }

    pub fn steps(&self) -> &[(u32, IdEstimate)] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.steps.iter().map(|(_, e)| e.value).collect()
    }
}
