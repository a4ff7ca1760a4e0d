//! Minimal `.npy` reader (and `f8` writer) for 4-D weight arrays.
//!
//! An array of shape `(n, c, w, h)` becomes one layer of `n` filters of
//! shape `c × w × h`. C order is required; `<f8`, `<f4` and their
//! big-endian forms are accepted.

use std::fs;
use std::path::Path;

use super::{LayerSpec, WeightLayer};
use crate::error::{Error, Result};
use crate::tensor::{RealTensor, Shape};

pub const MAGIC: &[u8; 6] = b"\x93NUMPY";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dtype {
    F64 { big_endian: bool },
    F32 { big_endian: bool },
}

impl Dtype {
    fn parse(descr: &str) -> Result<Dtype> {
        let (order, kind) = descr.split_at(descr.len().min(1));
        let big_endian = match order {
            "<" | "|" | "=" => false,
            ">" => true,
            _ => return Err(Error::DtypeMismatch(format!("unsupported dtype {descr:?}"))),
        };
        match kind {
            "f8" => Ok(Dtype::F64 { big_endian }),
            "f4" => Ok(Dtype::F32 { big_endian }),
            _ => Err(Error::DtypeMismatch(format!(
                "unsupported dtype {descr:?}; expected f4 or f8"
            ))),
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F64 { .. } => 8,
            Dtype::F32 { .. } => 4,
        }
    }

    fn read(self, chunk: &[u8]) -> f64 {
        match self {
            Dtype::F64 { big_endian } => {
                let b: [u8; 8] = chunk.try_into().unwrap();
                if big_endian {
                    f64::from_be_bytes(b)
                } else {
                    f64::from_le_bytes(b)
                }
            }
            Dtype::F32 { big_endian } => {
                let b: [u8; 4] = chunk.try_into().unwrap();
                f64::from(if big_endian {
                    f32::from_be_bytes(b)
                } else {
                    f32::from_le_bytes(b)
                })
            }
        }
    }
}

#[derive(Debug)]
struct Header {
    dtype: Dtype,
    fortran_order: bool,
    shape: Vec<usize>,
}

/// Finds the value text following `'key':` in the header dict.
fn dict_value<'a>(dict: &'a str, key: &str) -> Result<&'a str> {
    let needle = format!("'{key}'");
    let start = dict
        .find(&needle)
        .ok_or_else(|| Error::MalformedHeader(format!("missing key {key:?}")))?;
    let rest = dict[start + needle.len()..].trim_start();
    rest.strip_prefix(':')
        .map(str::trim_start)
        .ok_or_else(|| Error::MalformedHeader(format!("no ':' after {key:?}")))
}

fn parse_header(text: &str) -> Result<Header> {
    let dict = text.trim();
    if !dict.starts_with('{') || !dict.ends_with('}') {
        return Err(Error::MalformedHeader(
            "header is not a dict literal".into(),
        ));
    }

    let descr = dict_value(dict, "descr")?;
    let quote = descr
        .chars()
        .next()
        .filter(|c| *c == '\'' || *c == '"')
        .ok_or_else(|| Error::MalformedHeader("descr is not a string".into()))?;
    let descr = &descr[1..];
    let end = descr
        .find(quote)
        .ok_or_else(|| Error::MalformedHeader("unterminated descr".into()))?;
    let dtype = Dtype::parse(&descr[..end])?;

    let fortran = dict_value(dict, "fortran_order")?;
    let fortran_order = if fortran.starts_with("True") {
        true
    } else if fortran.starts_with("False") {
        false
    } else {
        return Err(Error::MalformedHeader("fortran_order is not a bool".into()));
    };

    let shape_text = dict_value(dict, "shape")?;
    let shape_text = shape_text
        .strip_prefix('(')
        .and_then(|s| s.split(')').next())
        .ok_or_else(|| Error::MalformedHeader("shape is not a tuple".into()))?;
    let shape = shape_text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.trim_end_matches('L')
                .parse::<usize>()
                .map_err(|_| Error::MalformedHeader(format!("bad dimension {s:?}")))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Header {
        dtype,
        fortran_order,
        shape,
    })
}

/// Parses a `.npy` payload into a single weight layer named `name`.
pub fn decode_layer(bytes: &[u8], name: &str) -> Result<WeightLayer> {
    if !bytes.starts_with(MAGIC) {
        return Err(Error::BadMagic {
            expected: "\\x93NUMPY",
        });
    }
    if bytes.len() < 10 {
        return Err(Error::Truncated("npy preamble"));
    }
    let major = bytes[6];
    let (header_len, header_start) = match major {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(Error::Truncated("npy preamble"));
            }
            (
                u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize,
                12,
            )
        }
        v => {
            return Err(Error::MalformedHeader(format!(
                "unsupported npy major version {v}"
            )))
        }
    };
    let header_end = header_start + header_len;
    if bytes.len() < header_end {
        return Err(Error::Truncated("npy header"));
    }
    let text = std::str::from_utf8(&bytes[header_start..header_end])
        .map_err(|_| Error::MalformedHeader("header is not UTF-8".into()))?;
    let header = parse_header(text)?;

    if header.fortran_order {
        return Err(Error::DtypeMismatch(
            "fortran_order arrays are not supported".into(),
        ));
    }
    let [n, c, w, h] = header.shape[..] else {
        return Err(Error::DtypeMismatch(format!(
            "expected a 4-D array, got shape {:?}",
            header.shape
        )));
    };
    let shape = Shape::new(c, w, h).map_err(|e| Error::DtypeMismatch(e.to_string()))?;
    let spec =
        LayerSpec::new(name, n, shape, 1).map_err(|e| Error::DtypeMismatch(e.to_string()))?;

    let t = shape.t();
    let payload = &bytes[header_end..];
    let expected = n * t * header.dtype.size();
    if payload.len() != expected {
        return Err(Error::DtypeMismatch(format!(
            "data holds {} bytes, shape and dtype need {expected}",
            payload.len()
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(header.dtype.size())
        .map(|c| header.dtype.read(c))
        .collect();
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let filters = values
        .chunks_exact(t)
        .map(|chunk| RealTensor::new(shape, chunk.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    WeightLayer::new(spec, filters)
}

/// Encodes filters as a version 1.0 `<f8` array of shape `(n, c, w, h)`.
pub fn encode_f64(filters: &[RealTensor]) -> Result<Vec<u8>> {
    let shape = filters
        .first()
        .ok_or_else(|| Error::InvalidArgument("no filters to write".into()))?
        .shape();
    for f in filters {
        shape.ensure_same(&f.shape())?;
    }
    let dict = format!(
        "{{'descr': '<f8', 'fortran_order': False, 'shape': ({}, {}, {}, {}), }}",
        filters.len(),
        shape.c(),
        shape.w(),
        shape.h()
    );
    // Pad with spaces so the data starts on a 64-byte boundary.
    let unpadded = MAGIC.len() + 4 + dict.len() + 1;
    let padding = (64 - unpadded % 64) % 64;
    let header = format!("{dict}{}\n", " ".repeat(padding));
    let mut out = Vec::with_capacity(10 + header.len() + filters.len() * shape.t() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for f in filters {
        for v in f.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_npy(path: impl AsRef<Path>, filters: &[RealTensor]) -> Result<()> {
    fs::write(path, encode_f64(filters)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn npy_with(header: &str, payload: &[u8]) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&[1, 0]);
        out.extend_from_slice(&(header.len() as u16).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(payload);
        out
    }

    #[test]
    fn minimal_two_filter_array() {
        let mut payload = Vec::new();
        payload.extend_from_slice(&1.5f64.to_le_bytes());
        payload.extend_from_slice(&(-2.0f64).to_le_bytes());
        let bytes = npy_with(
            "{'descr': '<f8', 'fortran_order': False, 'shape': (2, 1, 1, 1), }\n",
            &payload,
        );
        let layer = decode_layer(&bytes, "w").unwrap();
        assert_eq!(layer.spec.n, 2);
        assert_eq!(layer.filters[0].data(), &[1.5]);
        assert_eq!(layer.filters[1].data(), &[-2.0]);
    }

    #[test]
    fn float32_is_widened() {
        let payload: Vec<u8> = [0.5f32, -0.25]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        let bytes = npy_with(
            "{'descr': '<f4', 'fortran_order': False, 'shape': (1, 1, 2, 1), }\n",
            &payload,
        );
        let layer = decode_layer(&bytes, "w").unwrap();
        assert_eq!(layer.filters[0].data(), &[0.5, -0.25]);
    }

    #[test]
    fn distinct_errors() {
        let nan = f64::NAN.to_le_bytes();
        let ok = "{'descr': '<f8', 'fortran_order': False, 'shape': (1, 1, 1, 1), }\n";
        assert!(matches!(
            decode_layer(&npy_with(ok, &nan), "w"),
            Err(Error::NonFinite { .. })
        ));

        let fortran = "{'descr': '<f8', 'fortran_order': True, 'shape': (1, 1, 1, 1), }\n";
        assert!(matches!(
            decode_layer(&npy_with(fortran, &[0; 8]), "w"),
            Err(Error::DtypeMismatch(_))
        ));

        let int = "{'descr': '<i4', 'fortran_order': False, 'shape': (1, 1, 1, 1), }\n";
        assert!(matches!(
            decode_layer(&npy_with(int, &[0; 4]), "w"),
            Err(Error::DtypeMismatch(_))
        ));

        let three_d = "{'descr': '<f8', 'fortran_order': False, 'shape': (1, 1, 1), }\n";
        assert!(matches!(
            decode_layer(&npy_with(three_d, &[0; 8]), "w"),
            Err(Error::DtypeMismatch(_))
        ));

        assert!(matches!(
            decode_layer(&npy_with(ok, &[0; 4]), "w"),
            Err(Error::DtypeMismatch(_))
        ));

        let broken = "{'descr': '<f8', 'shape': (1, 1, 1, 1), }\n";
        assert!(matches!(
            decode_layer(&npy_with(broken, &[0; 8]), "w"),
            Err(Error::MalformedHeader(_))
        ));
        assert!(matches!(
            decode_layer(&npy_with("not a dict", &[]), "w"),
            Err(Error::MalformedHeader(_))
        ));
    }

    #[test]
    fn writer_roundtrip_and_alignment() {
        let shape = Shape::new(2, 1, 3).unwrap();
        let filters = vec![
            RealTensor::new(shape, vec![0.1, -0.2, 0.3, 1e-300, -5.5, 7.0]).unwrap(),
            RealTensor::new(shape, vec![-0.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(),
        ];
        let bytes = encode_f64(&filters).unwrap();
        let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        assert_eq!((10 + header_len) % 64, 0);
        let layer = decode_layer(&bytes, "x").unwrap();
        assert_eq!(layer.filters, filters);
        assert_eq!(encode_f64(&layer.filters).unwrap(), bytes);
    }
}
