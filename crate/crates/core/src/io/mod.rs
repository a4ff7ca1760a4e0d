//! Persistent formats and synthetic inputs.
//!
//! * `NSKW`: full-precision weight layers ([`nskw`]).
//! * `NSKT`: sketched layers with a deduplicated binary pool ([`nskt`]).
//! * `.npy`: read-only import of 4-D float arrays ([`npy`]).
//!
//! All multi-byte values are little-endian.

mod bytes;
pub mod npy;
pub mod nskt;
pub mod nskw;
pub mod synthetic;

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sketch::{Method, Sketch};
use crate::tensor::{RealTensor, Shape};

pub use nskt::{load_sketch, save_sketch, LayerStorage};
pub use nskw::{load_weights, save_weights};
pub use synthetic::{generate_synthetic, synthetic_feature_map, Distribution};

/// Describes one layer: `n` filters of a common shape, evaluated at
/// `spatial_s` output positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerSpec {
    pub name: String,
    pub n: usize,
    pub shape: Shape,
    pub spatial_s: usize,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, n: usize, shape: Shape, spatial_s: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument(
                "filter count must be at least 1".into(),
            ));
        }
        if spatial_s == 0 {
            return Err(Error::InvalidArgument(
                "spatial size must be at least 1".into(),
            ));
        }
        Ok(LayerSpec {
            name: name.into(),
            n,
            shape,
            spatial_s,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightLayer {
    pub spec: LayerSpec,
    pub filters: Vec<RealTensor>,
}

impl WeightLayer {
    pub fn new(spec: LayerSpec, filters: Vec<RealTensor>) -> Result<Self> {
        if filters.len() != spec.n {
            return Err(Error::LengthMismatch {
                expected: spec.n,
                actual: filters.len(),
            });
        }
        for f in &filters {
            spec.shape.ensure_same(&f.shape())?;
        }
        Ok(WeightLayer { spec, filters })
    }
}

/// A sketched layer; `m` is the requested term count, individual sketches
/// may hold fewer terms if they stopped early.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchLayer {
    pub spec: LayerSpec,
    pub m: usize,
    pub method: Method,
    pub sketches: Vec<Sketch>,
}

impl SketchLayer {
    pub fn new(spec: LayerSpec, m: usize, method: Method, sketches: Vec<Sketch>) -> Result<Self> {
        if sketches.len() != spec.n {
            return Err(Error::LengthMismatch {
                expected: spec.n,
                actual: sketches.len(),
            });
        }
        for s in &sketches {
            spec.shape.ensure_same(&s.shape())?;
            if s.m() > m {
                return Err(Error::InvalidArgument(format!(
                    "sketch holds {} terms but the layer declares m = {m}",
                    s.m()
                )));
            }
            if s.method() != method {
                return Err(Error::InvalidArgument(
                    "mixed sketch methods in one layer".into(),
                ));
            }
        }
        Ok(SketchLayer {
            spec,
            m,
            method,
            sketches,
        })
    }
}

/// Loads weight layers from an `NSKW` container or a `.npy` array,
/// recognised by magic bytes.
pub fn load_array_file(path: impl AsRef<Path>) -> Result<Vec<WeightLayer>> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    if bytes.starts_with(nskw::MAGIC) {
        nskw::decode(&bytes)
    } else if bytes.starts_with(npy::MAGIC) {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "array".into());
        Ok(vec![npy::decode_layer(&bytes, &name)?])
    } else {
        Err(Error::MalformedHeader(
            "neither an NSKW container nor a .npy array".into(),
        ))
    }
}
