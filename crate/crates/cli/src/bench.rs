use std::fs;
use std::time::Instant;

use netsketch::io::{nskt, synthetic_feature_map, Distribution, SketchLayer, WeightLayer};
use netsketch::layer::{build_tree, flatten_basis, sketch_layer_convolve_itemized};
use netsketch::sketch::sketch_filters;
use netsketch::{storage_and_flops, Execution, FeatureMap, Method, TreeMode};

use crate::failure::Failure;
use crate::report::{self, LayerRecord, ModeRecord, Parameters, RunReport};
use crate::{input, BenchArgs, TreeArg};

fn modes(tree: TreeArg, seed: u64) -> Vec<TreeMode> {
    match tree {
        TreeArg::None => vec![TreeMode::None],
        TreeArg::Random => vec![TreeMode::Random(seed)],
        TreeArg::Mst => vec![TreeMode::Mst],
        TreeArg::All => vec![TreeMode::None, TreeMode::Random(seed), TreeMode::Mst],
    }
}

fn max_abs_diff(a: &[FeatureMap], b: &[FeatureMap]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.data().iter().zip(y.data()).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max)
}

fn bench_layer(
    index: usize,
    layer: &WeightLayer,
    args: &BenchArgs,
    method: Method,
) -> Result<LayerRecord, Failure> {
    let exec = Execution::default();
    let spec = &layer.spec;
    let shape = spec.shape;
    let m = args.bits;
    let sketches = sketch_filters(&layer.filters, m, method, exec).map_err(Failure::compute)?;

    let (mw, mh) = args.map.unwrap_or((shape.w() + 8, shape.h() + 8));
    let fm = synthetic_feature_map(
        shape.c(),
        mw,
        mh,
        Distribution::Gaussian,
        args.seed.wrapping_add(index as u64),
    )
    .map_err(Failure::compute)?;

    let (direct_maps, direct_cost) =
        sketch_layer_convolve_itemized(&fm, &sketches, TreeMode::None, args.stride, exec)
            .map_err(Failure::compute)?;
    let windows = direct_maps.first().map_or(0, |f| f.data().len());
    let (tensors, _) = flatten_basis(&sketches);

    let mut records = Vec::new();
    for mode in modes(args.tree, args.seed) {
        let start = Instant::now();
        let (maps, cost) = if mode == TreeMode::None && !args.wall_time {
            (direct_maps.clone(), direct_cost)
        } else {
            sketch_layer_convolve_itemized(&fm, &sketches, mode, args.stride, exec)
                .map_err(Failure::compute)?
        };
        let elapsed = start.elapsed();
        let tree_weight = match mode {
            TreeMode::None => None,
            _ => build_tree(&tensors, mode)
                .map_err(Failure::compute)?
                .map(|t| t.total_weight()),
        };
        records.push(ModeRecord {
            tree: mode.name(),
            tree_seed: match mode {
                TreeMode::Random(seed) => Some(seed),
                _ => None,
            },
            tree_weight,
            convolution: cost.convolution,
            combination: cost.combination,
            total: cost.total(),
            convolution_fadds_per_window: cost.convolution.fadds as f64 / windows.max(1) as f64,
            fadd_reduction: direct_cost.convolution.fadds as f64 / cost.convolution.fadds as f64,
            max_abs_diff_vs_direct: max_abs_diff(&maps, &direct_maps),
            wall_time_ms: args.wall_time.then_some(elapsed.as_secs_f64() * 1e3),
        });
    }

    let stored = SketchLayer::new(spec.clone(), m, method, sketches).map_err(Failure::compute)?;
    let storage = nskt::encode(std::slice::from_ref(&stored))
        .map_err(Failure::compute)?
        .layers
        .remove(0);
    let sketches = &stored.sketches;
    Ok(LayerRecord {
        name: spec.name.clone(),
        n: spec.n,
        shape: [shape.c(), shape.w(), shape.h()],
        t: shape.t(),
        feature_map: [shape.c(), mw, mh],
        windows,
        energy: report::energy_curve(sketches, m),
        residual_norms_sq: report::residual_curve(sketches, m),
        bound: report::bound_curve(sketches, m).map_err(Failure::compute)?,
        storage,
        accounting: storage_and_flops(shape, spec.n, m, spec.spatial_s)
            .map_err(Failure::compute)?,
        modes: records,
    })
}

pub fn run(args: &BenchArgs) -> Result<(), Failure> {
    let layers = input::weights(&args.input)?;
    let method: Method = args.method.into();
    let records = layers
        .iter()
        .enumerate()
        .map(|(i, layer)| bench_layer(i, layer, args, method))
        .collect::<Result<Vec<_>, _>>()?;
    let run = RunReport {
        command: "bench",
        version: env!("CARGO_PKG_VERSION"),
        conventions: report::CONVENTIONS.to_vec(),
        parameters: Parameters {
            input: args.input.display().to_string(),
            bits: args.bits,
            method: method.name(),
            trees: modes(args.tree, args.seed)
                .iter()
                .map(|m| m.name())
                .collect(),
            seed: args.seed,
            stride: args.stride,
        },
        layers: records,
    };
    let rendered = run.render(args.format);
    match &args.report {
        Some(path) => {
            fs::write(path, rendered).map_err(|e| Failure::file(path, e.into()))?;
            for layer in &run.layers {
                let modes: Vec<String> = layer
                    .modes
                    .iter()
                    .map(|r| {
                        format!(
                            "{} {} ({:.2}x)",
                            r.tree, r.convolution_fadds_per_window, r.fadd_reduction
                        )
                    })
                    .collect();
                println!("{}: FADDs per window: {}", layer.name, modes.join(", "));
            }
            println!("report written to {}", path.display());
        }
        None => print!("{rendered}"),
    }
    Ok(())
}
