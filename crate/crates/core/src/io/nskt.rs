//! `NSKT` sketch container.
//!
//! Within a layer, identical binary tensors are stored once in a pool (first
//! occurrence order, filter by filter) and every filter refers to its terms
//! by pool index.
//!
//! ```text
//! "NSKT\0"  version:u16  layers:u32
//! per layer:
//!   name (u32 length + UTF-8)
//!   n c w h spatial_s m (u32 each)  method:u8  pool_size:u32  index_bits:u8
//!   terms[n]:u32  stop[n]:u8
//!   pool: pool_size tensors, ceil(t/8) bytes each, LSB-first
//!   indices: Σ terms values of index_bits each, LSB-first, padded to a byte
//!   scales: Σ terms f64
//!   residuals: Σ (terms + 1) f64
//! crc32:u32 over every preceding byte
//! ```
//!
//! `index_bits` is `ceil(log2(pool_size))` (zero when the pool has at most
//! one tensor).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::bytes::{to_u32, Reader, WriteLe};
use super::{LayerSpec, SketchLayer};
use crate::error::{Error, Result};
use crate::sketch::{Method, Sketch, StopReason};
use crate::tensor::{BinaryTensor, Shape};

pub const MAGIC: &[u8; 5] = b"NSKT\0";
pub const VERSION: u16 = 1;
const FILE_HEADER_BYTES: usize = 5 + 2 + 4;
const CRC_BYTES: usize = 4;

/// Bit-level breakdown of one stored layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerStorage {
    pub name: String,
    pub n: usize,
    pub t: usize,
    pub m: usize,
    pub total_terms: usize,
    pub pool_size: usize,
    pub index_bits_each: u32,
    /// Stored pool, including per-tensor byte padding.
    pub pool_bits: u64,
    /// Stored index stream, including final byte padding.
    pub index_bits: u64,
    /// 64 bits per stored scale.
    pub scale_bits: u64,
    /// Layer header, term counts, stop reasons and residual history.
    pub header_bits: u64,
    /// `total_terms / pool_size`; 1 when nothing was shared.
    pub dedup_ratio: f64,
    /// `(32m + tm)·n`, the 32-bit-scale count without any sharing.
    pub nominal_bits: u64,
    /// `32t / (32m + tm)`.
    pub compression_factor: f64,
}

impl LayerStorage {
    pub fn total_bits(&self) -> u64 {
        self.pool_bits + self.index_bits + self.scale_bits + self.header_bits
    }
}

/// Result of encoding: the file bytes plus their breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub bytes: Vec<u8>,
    pub layers: Vec<LayerStorage>,
    /// Magic, version, layer count and checksum.
    pub file_overhead_bits: u64,
}

fn index_width(pool_size: usize) -> u32 {
    if pool_size <= 1 {
        0
    } else {
        usize::BITS - (pool_size - 1).leading_zeros()
    }
}

#[derive(Default)]
struct BitWriter {
    bytes: Vec<u8>,
    used: usize,
}

impl BitWriter {
    fn push(&mut self, value: u64, width: u32) {
        for k in 0..width {
            if self.used.is_multiple_of(8) {
                self.bytes.push(0);
            }
            if (value >> k) & 1 == 1 {
                *self.bytes.last_mut().unwrap() |= 1 << (self.used % 8);
            }
            self.used += 1;
        }
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    used: usize,
}

impl BitReader<'_> {
    fn next(&mut self, width: u32) -> u64 {
        let mut v = 0;
        for k in 0..width {
            let bit = (self.bytes[self.used / 8] >> (self.used % 8)) & 1;
            v |= (bit as u64) << k;
            self.used += 1;
        }
        v
    }
}

fn encode_layer(layer: &SketchLayer, out: &mut Vec<u8>) -> Result<LayerStorage> {
    let start = out.len();
    let spec = &layer.spec;
    let t = spec.shape.t();

    let mut pool: Vec<&BinaryTensor> = Vec::new();
    let mut lookup: HashMap<&BinaryTensor, usize> = HashMap::new();
    let mut indices = Vec::new();
    for s in &layer.sketches {
        for b in s.basis() {
            let idx = *lookup.entry(b).or_insert_with(|| {
                pool.push(b);
                pool.len() - 1
            });
            indices.push(idx);
        }
    }
    let width = index_width(pool.len());

    out.put_str(&spec.name);
    for v in [
        spec.n,
        spec.shape.c(),
        spec.shape.w(),
        spec.shape.h(),
        spec.spatial_s,
        layer.m,
    ] {
        out.put_u32(to_u32(v, "layer field")?);
    }
    out.put_u8(layer.method.tag());
    out.put_u32(to_u32(pool.len(), "pool size")?);
    out.put_u8(width as u8);
    for s in &layer.sketches {
        out.put_u32(to_u32(s.m(), "term count")?);
    }
    for s in &layer.sketches {
        out.put_u8(s.stop_reason().tag());
    }

    let pool_start = out.len();
    for b in &pool {
        out.extend_from_slice(&b.to_bytes());
    }
    let pool_bytes = out.len() - pool_start;

    let mut bits = BitWriter::default();
    for &i in &indices {
        bits.push(i as u64, width);
    }
    let index_bytes = bits.bytes.len();
    out.extend_from_slice(&bits.bytes);

    let scale_start = out.len();
    for s in &layer.sketches {
        for &a in s.scales() {
            out.put_f64(a);
        }
    }
    let scale_bytes = out.len() - scale_start;
    for s in &layer.sketches {
        for &r in s.residual_norms_sq() {
            out.put_f64(r);
        }
    }

    let total_bytes = out.len() - start;
    let header_bytes = total_bytes - pool_bytes - index_bytes - scale_bytes;
    let m = layer.m as u64;
    let nominal_bits = (32 * m + t as u64 * m) * spec.n as u64;
    Ok(LayerStorage {
        name: spec.name.clone(),
        n: spec.n,
        t,
        m: layer.m,
        total_terms: indices.len(),
        pool_size: pool.len(),
        index_bits_each: width,
        pool_bits: 8 * pool_bytes as u64,
        index_bits: 8 * index_bytes as u64,
        scale_bits: 8 * scale_bytes as u64,
        header_bits: 8 * header_bytes as u64,
        dedup_ratio: if pool.is_empty() {
            1.0
        } else {
            indices.len() as f64 / pool.len() as f64
        },
        nominal_bits,
        compression_factor: if m == 0 {
            f64::INFINITY
        } else {
            (32 * t) as f64 / (32 * m + t as u64 * m) as f64
        },
    })
}

pub fn encode(layers: &[SketchLayer]) -> Result<Encoded> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.put_u16(VERSION);
    out.put_u32(to_u32(layers.len(), "layer count")?);
    let storage = layers
        .iter()
        .map(|l| encode_layer(l, &mut out))
        .collect::<Result<Vec<_>>>()?;
    let crc = crc32fast::hash(&out);
    out.put_u32(crc);
    Ok(Encoded {
        bytes: out,
        layers: storage,
        file_overhead_bits: 8 * (FILE_HEADER_BYTES + CRC_BYTES) as u64,
    })
}

fn malformed(e: Error) -> Error {
    match e {
        Error::Truncated(_) => e,
        other => Error::MalformedHeader(other.to_string()),
    }
}

fn decode_layer(r: &mut Reader<'_>) -> Result<SketchLayer> {
    let name = r.string("layer name")?;
    let n = r.usize32("n")?;
    let (c, w, h) = (r.usize32("c")?, r.usize32("w")?, r.usize32("h")?);
    let spatial_s = r.usize32("spatial size")?;
    let m = r.usize32("m")?;
    let method = Method::from_tag(r.u8("method")?)
        .ok_or_else(|| Error::MalformedHeader("unknown method tag".into()))?;
    let pool_size = r.usize32("pool size")?;
    let width = r.u8("index width")? as u32;
    let shape = Shape::new(c, w, h).map_err(malformed)?;
    let spec = LayerSpec::new(name, n, shape, spatial_s).map_err(malformed)?;
    if width != index_width(pool_size) {
        return Err(Error::MalformedHeader(format!(
            "index width {width} does not match pool size {pool_size}"
        )));
    }
    if n > r.remaining() {
        return Err(Error::Truncated("term counts"));
    }
    let terms = (0..n)
        .map(|_| r.usize32("term counts"))
        .collect::<Result<Vec<_>>>()?;
    if let Some(bad) = terms.iter().find(|&&k| k > m) {
        return Err(Error::Corrupt(format!(
            "filter with {bad} terms exceeds m = {m}"
        )));
    }
    let stops = (0..n)
        .map(|_| {
            StopReason::from_tag(r.u8("stop reasons")?)
                .ok_or_else(|| Error::Corrupt("unknown stop reason".into()))
        })
        .collect::<Result<Vec<_>>>()?;

    let t = shape.t();
    let tensor_bytes = t.div_ceil(8);
    if pool_size.saturating_mul(tensor_bytes) > r.remaining() {
        return Err(Error::Truncated("binary pool"));
    }
    let pool = (0..pool_size)
        .map(|_| BinaryTensor::from_bytes(shape, r.take(tensor_bytes, "binary pool")?))
        .collect::<Result<Vec<_>>>()?;
    for i in 1..pool.len() {
        if pool[..i].contains(&pool[i]) {
            return Err(Error::Corrupt("duplicate tensor in pool".into()));
        }
    }

    let total_terms: usize = terms.iter().sum();
    let index_bytes = (total_terms * width as usize).div_ceil(8);
    let mut bits = BitReader {
        bytes: r.take(index_bytes, "index stream")?,
        used: 0,
    };
    let indices = (0..total_terms)
        .map(|_| bits.next(width) as usize)
        .collect::<Vec<_>>();
    if total_terms > 0 && indices.iter().any(|&i| i >= pool_size) {
        return Err(Error::Corrupt("pool index out of range".into()));
    }

    let scales = r.f64s(total_terms, "scales")?;
    let residuals = r.f64s(total_terms + n, "residual history")?;

    let mut sketches = Vec::with_capacity(n);
    let (mut term_at, mut res_at) = (0, 0);
    for (k, stop) in terms.into_iter().zip(stops) {
        let basis = indices[term_at..term_at + k]
            .iter()
            .map(|&i| pool[i].clone())
            .collect();
        let sketch = Sketch::from_parts(
            shape,
            basis,
            scales[term_at..term_at + k].to_vec(),
            residuals[res_at..res_at + k + 1].to_vec(),
            method,
            stop,
        )
        .map_err(|e| Error::Corrupt(e.to_string()))?;
        sketches.push(sketch);
        term_at += k;
        res_at += k + 1;
    }
    SketchLayer::new(spec, m, method, sketches).map_err(|e| Error::Corrupt(e.to_string()))
}

/// Parses a complete `NSKT` file, verifying magic, checksum and version in
/// that order.
pub fn decode(bytes: &[u8]) -> Result<Vec<SketchLayer>> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic { expected: "NSKT" });
    }
    if bytes.len() < FILE_HEADER_BYTES + CRC_BYTES {
        return Err(Error::Truncated("file header"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - CRC_BYTES);
    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    let mut r = Reader::new(body);
    r.take(MAGIC.len(), "magic")?;
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
        layers.push(decode_layer(&mut r)?);
    }
    if r.remaining() != 0 {
        return Err(Error::Corrupt(format!(
            "{} unparsed bytes at offset {}",
            r.remaining(),
            r.position()
        )));
    }
    Ok(layers)
}

/// Writes the layers and returns their storage breakdown.
pub fn save_sketch(path: impl AsRef<Path>, layers: &[SketchLayer]) -> Result<Encoded> {
    let encoded = encode(layers)?;
    fs::write(path, &encoded.bytes)?;
    Ok(encoded)
}

pub fn load_sketch(path: impl AsRef<Path>) -> Result<Vec<SketchLayer>> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::{direct_sketch, refined_sketch};
    use crate::tensor::RealTensor;

    fn shared_layer() -> SketchLayer {
        let shape = Shape::new(1, 2, 2).unwrap();
        let b = BinaryTensor::from_signs(shape, &[1, -1, 1, 1]).unwrap();
        let sketches: Vec<Sketch> = [0.5, -1.25, 2.0]
            .iter()
            .map(|&a| direct_sketch(&b.to_real().scaled(a), 2).unwrap())
            .collect();
        let spec = LayerSpec::new("shared", 3, shape, 4).unwrap();
        SketchLayer::new(spec, 2, Method::Direct, sketches).unwrap()
    }

    #[test]
    fn index_width_values() {
        assert_eq!(index_width(0), 0);
        assert_eq!(index_width(1), 0);
        assert_eq!(index_width(2), 1);
        assert_eq!(index_width(3), 2);
        assert_eq!(index_width(4), 2);
        assert_eq!(index_width(5), 3);
        assert_eq!(index_width(256), 8);
        assert_eq!(index_width(257), 9);
    }

    #[test]
    fn shared_basis_is_stored_once() {
        let layer = shared_layer();
        let enc = encode(std::slice::from_ref(&layer)).unwrap();
        let st = &enc.layers[0];
        // -1.25·B has sign pattern ¬B, so the pool holds B and ¬B.
        assert_eq!(st.total_terms, 3);
        assert_eq!(st.pool_size, 2);
        assert_eq!(st.index_bits_each, 1);
        let back = decode(&enc.bytes).unwrap();
        assert_eq!(back, vec![layer]);
        assert_eq!(
            enc.bytes.len() as u64 * 8,
            st.total_bits() + enc.file_overhead_bits
        );
    }

    #[test]
    fn empty_file_is_header_only() {
        let enc = encode(&[]).unwrap();
        assert_eq!(enc.bytes.len(), FILE_HEADER_BYTES + CRC_BYTES);
        assert!(decode(&enc.bytes).unwrap().is_empty());
    }

    #[test]
    fn reconstruction_survives_roundtrip() {
        let shape = Shape::new(2, 3, 3).unwrap();
        let filters: Vec<RealTensor> = (0..4)
            .map(|k| {
                RealTensor::new(
                    shape,
                    (0..18).map(|l| ((l * 7 + k * 3) as f64).cos()).collect(),
                )
                .unwrap()
            })
            .collect();
        let sketches: Vec<Sketch> = filters
            .iter()
            .map(|w| refined_sketch(w, 3).unwrap())
            .collect();
        let spec = LayerSpec::new("l", 4, shape, 1).unwrap();
        let layer = SketchLayer::new(spec, 3, Method::Refined, sketches).unwrap();
        let enc = encode(std::slice::from_ref(&layer)).unwrap();
        let back = decode(&enc.bytes).unwrap();
        for (a, b) in layer.sketches.iter().zip(&back[0].sketches) {
            let ra = a.reconstruct();
            let rb = b.reconstruct();
            assert!(ra
                .data()
                .iter()
                .zip(rb.data())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(encode(&back).unwrap().bytes, enc.bytes);
    }

    #[test]
    fn detects_corruption() {
        let enc = encode(&[shared_layer()]).unwrap();
        let mut flipped = enc.bytes.clone();
        flipped[20] ^= 0x10;
        assert!(matches!(
            decode(&flipped),
            Err(Error::ChecksumMismatch { .. })
        ));
        assert!(decode(&enc.bytes[..enc.bytes.len() - 1]).is_err());
        assert!(matches!(decode(b"NSKW\0"), Err(Error::BadMagic { .. })));
        assert!(matches!(decode(b"NSKT\0"), Err(Error::Truncated(_))));
    }

    #[test]
    fn version_checked_after_checksum() {
        let mut bytes = encode(&[]).unwrap().bytes;
        bytes[5] = 2;
        let n = bytes.len();
        let crc = crc32fast::hash(&bytes[..n - 4]);
        bytes[n - 4..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            decode(&bytes),
            Err(Error::VersionMismatch { found: 2, .. })
        ));
    }
}
