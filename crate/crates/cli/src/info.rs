use std::fmt::Write;

use netsketch::io::nskt;
use netsketch::StopReason;

use crate::failure::Failure;
use crate::{input, InfoArgs};

pub fn run(args: &InfoArgs) -> Result<(), Failure> {
    let layers = input::sketches(&args.input)?;
    // Re-encoding reproduces the file byte for byte and yields the breakdown.
    let encoded = nskt::encode(&layers).map_err(Failure::compute)?;

    // Build the whole text first so a failure prints nothing.
    let mut out = String::new();
    let _ = writeln!(out, "file: {}", args.input.display());
    let _ = writeln!(out, "format: NSKT version {}", nskt::VERSION);
    let _ = writeln!(out, "size: {} bytes", encoded.bytes.len());
    let _ = writeln!(out, "layers: {}", layers.len());
    let _ = writeln!(out, "file overhead: {} bits", encoded.file_overhead_bits);
    for (layer, s) in layers.iter().zip(&encoded.layers) {
        let spec = &layer.spec;
        let count = |r: StopReason| {
            layer
                .sketches
                .iter()
                .filter(|k| k.stop_reason() == r)
                .count()
        };
        let _ = writeln!(out);
        let _ = writeln!(out, "layer {}", spec.name);
        let _ = writeln!(out, "  filters: {}", spec.n);
        let _ = writeln!(out, "  shape: {} (t = {})", spec.shape, s.t);
        let _ = writeln!(out, "  spatial positions: {}", spec.spatial_s);
        let _ = writeln!(out, "  m: {}", layer.m);
        let _ = writeln!(out, "  method: {}", layer.method.name());
        let _ = writeln!(
            out,
            "  terms: {} (completed {}, zero residual {}, degenerate basis {})",
            s.total_terms,
            count(StopReason::Completed),
            count(StopReason::ZeroResidual),
            count(StopReason::DegenerateBasis)
        );
        let _ = writeln!(
            out,
            "  pool: {} distinct tensors, dedup ratio {:.4}",
            s.pool_size, s.dedup_ratio
        );
        let _ = writeln!(out, "  index width: {} bits", s.index_bits_each);
        let _ = writeln!(
            out,
            "  stored bits: pool {} + indices {} + scales {} + header {} = {}",
            s.pool_bits,
            s.index_bits,
            s.scale_bits,
            s.header_bits,
            s.total_bits()
        );
        let _ = writeln!(
            out,
            "  nominal bits: full {} vs sketched {}",
            32 * s.t as u64 * s.n as u64,
            s.nominal_bits
        );
        let _ = writeln!(
            out,
            "  compression factor: {:.2}x (32t/(32m+tm))",
            s.compression_factor
        );
    }
    print!("{out}");
    Ok(())
}
