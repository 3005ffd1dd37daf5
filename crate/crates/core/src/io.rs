//! Array containers: raw little-endian `f32` data in C-order next to a JSON
//! sidecar with shape, units, geometry and the producing configuration.
//!
//! `write_array("out/gt", ..)` creates `out/gt.raw` and `out/gt.json`.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ConeBeamGeometry, ProjectionData, Volume};

pub const ARRAY_FORMAT: &str = "nnfdk-array/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayMeta {
    pub format: String,
    /// `volume`, `projections`, `labels`, ...
    pub kind: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub byte_order: String,
    pub units: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<ConeBeamGeometry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl ArrayMeta {
    pub fn new(kind: &str, shape: Vec<usize>, units: &str) -> Self {
        Self {
            format: ARRAY_FORMAT.into(),
            kind: kind.into(),
            shape,
            dtype: "float32".into(),
            byte_order: "little".into(),
            units: units.into(),
            geometry: None,
            config_hash: None,
            config: None,
        }
    }

    pub fn volume(n: usize) -> Self {
        Self::new("volume", vec![n, n, n], "cm^-1")
    }

    pub fn projections(n_angles: usize, n_det: usize) -> Self {
        Self::new("projections", vec![n_angles, n_det, n_det], "line integral")
    }

    pub fn with_geometry(mut self, geometry: &ConeBeamGeometry) -> Self {
        self.geometry = Some(geometry.clone());
        self
    }

    pub fn with_config(mut self, hash: String, config: serde_json::Value) -> Self {
        self.config_hash = Some(hash);
        self.config = Some(config);
        self
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn raw_path(base: &Path) -> PathBuf {
    base.with_extension("raw")
}

pub fn sidecar_path(base: &Path) -> PathBuf {
    base.with_extension("json")
}

pub fn write_array(base: &Path, data: &[f64], meta: &ArrayMeta) -> Result<()> {
    if data.len() != meta.len() {
        return Err(Error::shape(meta.len(), data.len()));
    }
    if let Some(dir) = base.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(raw_path(base))?);
    for &v in data {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    let mut text = serde_json::to_string_pretty(meta)?;
    text.push('\n');
    fs::write(sidecar_path(base), text)?;
    Ok(())
}

pub fn read_meta(base: &Path) -> Result<ArrayMeta> {
    let path = sidecar_path(base);
    let text =
        fs::read_to_string(&path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let meta: ArrayMeta = serde_json::from_str(&text)?;
    if meta.format != ARRAY_FORMAT || meta.dtype != "float32" || meta.byte_order != "little" {
        return Err(Error::Format(format!(
            "{}: unsupported array encoding {} / {} / {}",
            path.display(),
            meta.format,
            meta.dtype,
            meta.byte_order
        )));
    }
    Ok(meta)
}

pub fn read_array(base: &Path) -> Result<(Vec<f64>, ArrayMeta)> {
    let meta = read_meta(base)?;
    let path = raw_path(base);
    let mut bytes = Vec::new();
    File::open(&path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .read_to_end(&mut bytes)?;
    if bytes.len() != 4 * meta.len() {
        return Err(Error::Format(format!(
            "{}: {} bytes for shape {:?}",
            path.display(),
            bytes.len(),
            meta.shape
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok((data, meta))
}

pub fn read_volume(base: &Path) -> Result<(Volume, ArrayMeta)> {
    let (data, meta) = read_array(base)?;
    match meta.shape[..] {
        [a, b, c] if a == b && b == c => Ok((Volume::from_vec(a, data)?, meta)),
        _ => Err(Error::Format(format!(
            "shape {:?} is not a cubic volume",
            meta.shape
        ))),
    }
}

pub fn read_projections(base: &Path) -> Result<(ProjectionData, ArrayMeta)> {
    let (data, meta) = read_array(base)?;
    match meta.shape[..] {
        [a, r, c] if r == c => Ok((ProjectionData::from_vec(a, r, data)?, meta)),
        _ => Err(Error::Format(format!(
            "shape {:?} is not a projection stack",
            meta.shape
        ))),
    }
}

/// Stores a value in `f32` precision, as the array files do.
pub fn quantize(v: f64) -> f64 {
    v as f32 as f64
}
