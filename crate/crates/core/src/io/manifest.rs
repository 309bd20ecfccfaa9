//! Run manifests: JSON metadata binding per-step ATF files to a
//! (model, prompt, layer) extraction run.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::atf::{read_atf_header, read_atf_with, NonFinitePolicy};
use crate::cloud::{CloudTag, Layer, PointCloud};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_MODEL_ID: &str = "CompVis/stable-diffusion-v1-4";
pub const DEFAULT_TOTAL_STEPS: u32 = 50;
pub const DEFAULT_GUIDANCE_SCALE: f64 = 7.5;
pub const DEFAULT_NUM_IMAGES: usize = 5000;
/// Step after which the freeze ablation holds the UNet input fixed.
pub const FREEZE_ABLATION_STEP: u32 = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub step: u32,
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
    /// Full ATF shape: `[num_images, ...per-image shape]`.
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub model_id: String,
    pub prompt: String,
    pub prompt_id: String,
    pub layer: String,
    pub total_steps: u32,
    pub guidance_scale: f64,
    pub num_images: usize,
    pub base_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freeze_after_step: Option<u32>,
    pub files: Vec<ManifestFile>,
}

impl RunManifest {
    pub fn layer(&self) -> Layer {
        Layer::from_name(&self.layer)
    }

    pub fn tag(&self, step: u32) -> CloudTag {
        CloudTag {
            layer: self.layer(),
            prompt: self.prompt.clone(),
            prompt_id: self.prompt_id.clone(),
            step,
        }
    }

    /// Structural checks that need no file access.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::input(format!(
                "unsupported manifest schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.prompt_id.is_empty() {
            return Err(Error::input("manifest prompt_id is empty"));
        }
        if self.total_steps == 0 {
            return Err(Error::input("manifest total_steps must be at least 1"));
        }
        if let Some(s) = self.freeze_after_step {
            if s >= self.total_steps {
                return Err(Error::input(format!(
                    "freeze_after_step {s} must be below total_steps {}",
                    self.total_steps
                )));
            }
        }
        let mut by_step = BTreeMap::new();
        for f in &self.files {
            if f.step == 0 || f.step > self.total_steps {
                return Err(Error::input(format!(
                    "file {} has step {} outside 1..={}",
                    f.path.display(),
                    f.step,
                    self.total_steps
                )));
            }
            if by_step.insert(f.step, f).is_some() {
                return Err(Error::input(format!("step {} is listed twice", f.step)));
            }
            if f.shape.len() < 2 || f.shape.contains(&0) {
                return Err(Error::input(format!(
                    "step {} declares shape {:?}; need [num_images, ...] with no zero dims",
                    f.step, f.shape
                )));
            }
            if f.shape[0] != self.num_images {
                return Err(Error::input(format!(
                    "step {} declares {} images, manifest says num_images = {}",
                    f.step, f.shape[0], self.num_images
                )));
            }
        }
        if let Some(missing) = (1..=self.total_steps).find(|s| !by_step.contains_key(s)) {
            return Err(Error::input(format!("manifest has no file for step {missing}")));
        }
        Ok(())
    }

    /// Departures from the reference extraction setup. Informational only.
    pub fn expectation_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.total_steps != DEFAULT_TOTAL_STEPS {
            out.push(format!(
                "run has {} denoising steps; the reference setup uses {DEFAULT_TOTAL_STEPS}",
                self.total_steps
            ));
        }
        if self.num_images != DEFAULT_NUM_IMAGES {
            out.push(format!(
                "run has {} images per step; the reference setup uses {DEFAULT_NUM_IMAGES}",
                self.num_images
            ));
        }
        if let Some(expected) = self.layer().expected_len() {
            if let Some(f) = self.files.first() {
                let len: usize = f.shape[1..].iter().product();
                if len != expected {
                    out.push(format!(
                        "{} rows have length {len}; the reference extractor produces {expected}",
                        self.layer()
                    ));
                }
            }
        }
        out
    }

    /// Files sorted by step.
    pub fn steps(&self) -> Vec<&ManifestFile> {
        let mut files: Vec<_> = self.files.iter().collect();
        files.sort_by_key(|f| f.step);
        files
    }
}

/// A parsed manifest together with the directory its paths resolve against.
#[derive(Debug, Clone)]
pub struct Run {
    pub manifest: RunManifest,
    pub dir: PathBuf,
}

impl Run {
    /// Reads and structurally validates a manifest.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: RunManifest = serde_json::from_str(&text)
            .map_err(|e| Error::input(format!("{}: invalid manifest: {e}", path.display())))?;
        manifest.validate()?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Run { manifest, dir })
    }

    pub fn resolve(&self, file: &ManifestFile) -> PathBuf {
        if file.path.is_absolute() {
            file.path.clone()
        } else {
            self.dir.join(&file.path)
        }
    }

    /// Checks every listed file exists and has the declared shape, reading headers only.
    pub fn check_files(&self) -> Result<()> {
        for f in &self.manifest.files {
            let path = self.resolve(f);
            if !path.exists() {
                return Err(Error::input(format!(
                    "step {}: file {} does not exist",
                    f.step,
                    path.display()
                )));
            }
            let header = read_atf_header(&path)?;
            if header.dims != f.shape {
                return Err(Error::input(format!(
                    "step {}: {} has shape {:?}, manifest declares {:?}",
                    f.step,
                    path.display(),
                    header.dims,
                    f.shape
                )));
            }
        }
        Ok(())
    }

    pub fn load_step(&self, file: &ManifestFile, policy: NonFinitePolicy) -> Result<(CloudTag, PointCloud)> {
        let path = self.resolve(file);
        let contents = read_atf_with(&path, policy)?;
        let declared = &file.shape;
        let shape = contents.tensor.shape();
        if shape[1..] != declared[1..] || shape[0] + contents.dropped_rows.len() != declared[0] {
            return Err(Error::input(format!(
                "step {}: {} has shape {shape:?}, manifest declares {declared:?}",
                file.step,
                path.display()
            )));
        }
        if !contents.dropped_rows.is_empty() {
            log::warn!(
                "step {}: dropped {} row(s) with non-finite values",
                file.step,
                contents.dropped_rows.len()
            );
        }
        let cloud = PointCloud::from_stacked(&contents.tensor)?;
        Ok((self.manifest.tag(file.step), cloud))
    }

    pub fn load_all(&self, policy: NonFinitePolicy) -> Result<Vec<(CloudTag, PointCloud)>> {
        self.check_files()?;
        self.manifest
            .steps()
            .into_iter()
            .map(|f| self.load_step(f, policy))
            .collect()
    }
}

/// Loads every step of a run, one tagged cloud per step in step order.
pub fn load_run(manifest_path: impl AsRef<Path>) -> Result<Vec<(CloudTag, PointCloud)>> {
    Run::open(manifest_path)?.load_all(NonFinitePolicy::Reject)
}

/// Writes the manifest through a temporary file and a rename.
pub fn write_manifest(manifest: &RunManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("json.tmp");
    let text = serde_json::to_string_pretty(manifest)?;
    fs::write(&tmp, text + "\n").map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
