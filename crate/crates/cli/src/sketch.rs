use netsketch::io::{save_sketch, SketchLayer};
use netsketch::sketch::sketch_filters;
use netsketch::{Execution, Method};

use crate::failure::Failure;
use crate::{input, report, SketchArgs};

pub fn run(args: &SketchArgs) -> Result<(), Failure> {
    let layers = input::weights(&args.input)?;
    let method: Method = args.method.into();
    let m = args.bits;
    let mut sketched = Vec::with_capacity(layers.len());
    for layer in layers {
        let sketches = sketch_filters(&layer.filters, m, method, Execution::default())
            .map_err(Failure::compute)?;
        sketched.push(SketchLayer::new(layer.spec, m, method, sketches).map_err(Failure::compute)?);
    }
    let output = args
        .output
        .clone()
        .unwrap_or_else(|| args.input.with_extension("nskt"));
    let encoded = save_sketch(&output, &sketched).map_err(|e| Failure::file(&output, e))?;

    for (layer, storage) in sketched.iter().zip(&encoded.layers) {
        let energy = report::energy_curve(&layer.sketches, m);
        println!(
            "{}: n={} t={} m={} method={} energy={:.6} compression={:.3}x stored_bits={}",
            layer.spec.name,
            layer.spec.n,
            storage.t,
            m,
            method.name(),
            energy[m],
            storage.compression_factor,
            storage.total_bits()
        );
    }
    println!("wrote {} ({} bytes)", output.display(), encoded.bytes.len());
    Ok(())
}
