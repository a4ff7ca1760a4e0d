use netsketch::io::{generate_synthetic, save_weights, LayerSpec, WeightLayer};
use netsketch::Shape;

use crate::failure::Failure;
use crate::GenerateArgs;

pub fn run(args: &GenerateArgs) -> Result<(), Failure> {
    let (c, w, h) = args.shape;
    let shape = Shape::new(c, w, h).map_err(Failure::compute)?;
    let filters = generate_synthetic(shape, args.filters, args.dist.into(), args.seed)
        .map_err(Failure::compute)?;
    let spec = LayerSpec::new(args.name.clone(), args.filters, shape, args.spatial)
        .map_err(Failure::compute)?;
    let layer = WeightLayer::new(spec, filters).map_err(Failure::compute)?;
    save_weights(&args.output, &[layer]).map_err(|e| Failure::file(&args.output, e))?;
    println!(
        "wrote {} ({} filters of {shape}, seed {})",
        args.output.display(),
        args.filters,
        args.seed
    );
    Ok(())
}
