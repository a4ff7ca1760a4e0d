//! `NSKW` weight container.
//!
//! ```text
//! "NSKW\0"  version:u16  layers:u32
//! per layer: name (u32 length + UTF-8)  n c w h spatial_s (u32 each)
//!            n·t f64 values, filter by filter
//! ```

use std::fs;
use std::path::Path;

use super::bytes::{to_u32, Reader, WriteLe};
use super::{LayerSpec, WeightLayer};
use crate::error::{Error, Result};
use crate::tensor::{RealTensor, Shape};

pub const MAGIC: &[u8; 5] = b"NSKW\0";
pub const VERSION: u16 = 1;

pub fn encode(layers: &[WeightLayer]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.put_u16(VERSION);
    out.put_u32(to_u32(layers.len(), "layer count")?);
    for layer in layers {
        let spec = &layer.spec;
        out.put_str(&spec.name);
        for v in [
            spec.n,
            spec.shape.c(),
            spec.shape.w(),
            spec.shape.h(),
            spec.spatial_s,
        ] {
            out.put_u32(to_u32(v, "layer dimension")?);
        }
        for f in &layer.filters {
            for &v in f.data() {
                out.put_f64(v);
            }
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Vec<WeightLayer>> {
    let mut r = Reader::new(bytes);
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::BadMagic { expected: "NSKW" });
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            supported: VERSION,
        });
    }
    let count = r.usize32("layer count")?;
    let mut layers = Vec::new();
    for _ in 0..count {
        let name = r.string("layer name")?;
        let n = r.usize32("filter count")?;
        let (c, w, h) = (r.usize32("c")?, r.usize32("w")?, r.usize32("h")?);
        let spatial_s = r.usize32("spatial size")?;
        let shape = Shape::new(c, w, h).map_err(|e| Error::MalformedHeader(e.to_string()))?;
        let spec = LayerSpec::new(name, n, shape, spatial_s)
            .map_err(|e| Error::MalformedHeader(e.to_string()))?;
        let t = shape.t();
        let needed = n.checked_mul(t).and_then(|v| v.checked_mul(8));
        if needed.is_none_or(|b| b > r.remaining()) {
            return Err(Error::Truncated("weight data"));
        }
        let mut filters = Vec::with_capacity(n);
        for i in 0..n {
            let data = r.f64s(t, "weight data")?;
            let tensor = RealTensor::new(shape, data).map_err(|e| match e {
                Error::NonFinite { index } => Error::NonFinite {
                    index: i * t + index,
                },
                other => other,
            })?;
            filters.push(tensor);
        }
        layers.push(WeightLayer::new(spec, filters)?);
    }
    if r.remaining() != 0 {
        return Err(Error::Corrupt(format!("{} trailing bytes", r.remaining())));
    }
    Ok(layers)
}

pub fn save_weights(path: impl AsRef<Path>, layers: &[WeightLayer]) -> Result<()> {
    fs::write(path, encode(layers)?)?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<Vec<WeightLayer>> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer() -> WeightLayer {
        let shape = Shape::new(1, 1, 2).unwrap();
        let spec = LayerSpec::new("conv", 2, shape, 9).unwrap();
        let filters = vec![
            RealTensor::new(shape, vec![1.5, -0.25]).unwrap(),
            RealTensor::new(shape, vec![f64::MIN_POSITIVE, -0.0]).unwrap(),
        ];
        WeightLayer::new(spec, filters).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_identical() {
        let bytes = encode(&[layer()]).unwrap();
        let back = decode(&bytes).unwrap();
        assert_eq!(encode(&back).unwrap(), bytes);
        assert_eq!(back[0].filters[1].data()[1].to_bits(), (-0.0f64).to_bits());
        assert_eq!(back[0].spec.spatial_s, 9);
    }

    #[test]
    fn layout_is_as_documented() {
        let bytes = encode(&[layer()]).unwrap();
        assert_eq!(&bytes[..5], b"NSKW\0");
        assert_eq!(&bytes[5..7], &[1, 0]);
        assert_eq!(&bytes[7..11], &[1, 0, 0, 0]);
        assert_eq!(&bytes[11..15], &[4, 0, 0, 0]);
        assert_eq!(&bytes[15..19], b"conv");
        assert_eq!(bytes.len(), 19 + 5 * 4 + 4 * 8);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut bytes = encode(&[layer()]).unwrap();
        assert!(matches!(
            decode(&bytes[..bytes.len() - 3]),
            Err(Error::Truncated(_))
        ));
        let mut wrong_version = bytes.clone();
        wrong_version[5] = 9;
        assert!(matches!(
            decode(&wrong_version),
            Err(Error::VersionMismatch { .. })
        ));
        let n = bytes.len();
        bytes[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::NonFinite { index: 3 })));
        assert!(matches!(
            decode(b"NSKX\0\x01\x00"),
            Err(Error::BadMagic { .. })
        ));
    }

    #[test]
    fn empty_file_roundtrips() {
        let bytes = encode(&[]).unwrap();
        assert!(decode(&bytes).unwrap().is_empty());
    }
}
