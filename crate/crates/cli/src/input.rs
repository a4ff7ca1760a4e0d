use std::fs;
use std::path::Path;

use netsketch::io::{self, nskt, SketchLayer, WeightLayer};

use crate::failure::Failure;

/// What a path holds, recognised by magic bytes.
pub enum Loaded {
    Weights(Vec<WeightLayer>),
    Sketches(Vec<SketchLayer>),
}

pub fn weights(path: &Path) -> Result<Vec<WeightLayer>, Failure> {
    io::load_array_file(path).map_err(|e| Failure::file(path, e))
}

pub fn sketches(path: &Path) -> Result<Vec<SketchLayer>, Failure> {
    nskt::load_sketch(path).map_err(|e| Failure::file(path, e))
}

/// Reads either a weight file or a sketch file. Sketch decoding errors are
/// returned raw so the caller can report checksum failures as such.
pub fn any(path: &Path) -> Result<Result<Loaded, netsketch::Error>, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::file(path, e.into()))?;
    if bytes.starts_with(nskt::MAGIC) {
        Ok(nskt::decode(&bytes).map(Loaded::Sketches))
    } else {
        weights(path).map(|w| Ok(Loaded::Weights(w)))
    }
}
