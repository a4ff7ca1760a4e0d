use netsketch::io::{generate_synthetic, nskt, Distribution, SketchLayer, WeightLayer};
use netsketch::layer::flatten_basis;
use netsketch::sketch::{bound_report, sketch_filters, sketch_lambdas};
use netsketch::{
    associative_convolve_all, build_mst, build_random_tree, direct_convolve_all, frobenius_norm_sq,
    inner_product, reconstruct, refine_scales, BinaryTensor, Error, Execution, Method, OpCounter,
    RealTensor, Sketch,
};

use crate::failure::Failure;
use crate::input::{self, Loaded};
use crate::VerifyArgs;

const BOUND_SLACK: f64 = 1e-9;
const CONV_REL: f64 = 1e-9;
const ORTHO_REL: f64 = 1e-6;
/// Largest `t` for the exhaustive one-term search.
const BRUTE_FORCE_MAX_T: usize = 12;

#[derive(Default)]
struct Checks {
    passed: usize,
    failed: usize,
}

impl Checks {
    fn record(&mut self, check: &str, layer: &str, result: Result<String, String>) {
        match result {
            Ok(detail) => {
                self.passed += 1;
                println!("PASS {check} layer={layer}: {detail}");
            }
            Err(detail) => {
                self.failed += 1;
                println!("FAIL {check} layer={layer}: {detail}");
            }
        }
    }
}

/// Residual histories must strictly decrease while nonzero.
fn check_history(sketches: &[Sketch]) -> Result<String, String> {
    for (i, s) in sketches.iter().enumerate() {
        let h = s.residual_norms_sq();
        for j in 0..s.m() {
            if h[j + 1] >= h[j] && h[j] > 0.0 {
                return Err(format!(
                    "filter {i} step {j}: {} does not decrease {}",
                    h[j + 1],
                    h[j]
                ));
            }
        }
    }
    Ok(format!(
        "{} residual histories strictly decreasing",
        sketches.len()
    ))
}

fn check_direct_bound(sketches: &[Sketch]) -> Result<String, String> {
    let mut worst = 0.0f64;
    for (i, s) in sketches.iter().enumerate() {
        let report = bound_report(s).map_err(|e| format!("filter {i}: {e}"))?;
        if let Some(j) = report.first_violation(BOUND_SLACK) {
            return Err(format!(
                "filter {i} step {j}: e²={} exceeds bound {}",
                report.per_step_actual[j], report.per_step_bound[j]
            ));
        }
        for (a, b) in report.per_step_actual.iter().zip(&report.per_step_bound) {
            if *b > 0.0 {
                worst = worst.max(a / b);
            }
        }
    }
    Ok(format!("max e²/bound = {worst:.4}"))
}

fn check_refined_bound(sketches: &[Sketch]) -> Result<String, String> {
    let mut worst = 0.0f64;
    for (i, s) in sketches.iter().enumerate() {
        let t = s.shape().t() as f64;
        let lambdas = sketch_lambdas(s).map_err(|e| format!("filter {i}: {e}"))?;
        let h = s.residual_norms_sq();
        for (j, lambda) in lambdas.iter().enumerate() {
            let bound = h[j] * (1.0 - 1.0 / (t - lambda));
            if *lambda < 0.0 || h[j + 1] > bound + BOUND_SLACK * bound.abs() {
                return Err(format!(
                    "filter {i} step {j}: {} exceeds {bound} (lambda {lambda})",
                    h[j + 1]
                ));
            }
            if bound > 0.0 {
                worst = worst.max(h[j + 1] / bound);
            }
        }
    }
    Ok(format!(
        "per-step contraction, max ratio to bound = {worst:.4}"
    ))
}

fn residual(w: &RealTensor, basis: &[BinaryTensor], scales: &[f64]) -> Result<RealTensor, Error> {
    let mut r = w.clone();
    for (b, a) in basis.iter().zip(scales) {
        r = r.minus_scaled(*a, b)?;
    }
    Ok(r)
}

fn check_orthogonality(filters: &[RealTensor], refined: &[Sketch]) -> Result<String, String> {
    let mut worst = 0.0f64;
    for (i, (w, s)) in filters.iter().zip(refined).enumerate() {
        let r = residual(w, s.basis(), s.scales()).map_err(|e| e.to_string())?;
        let unit = (frobenius_norm_sq(w) * w.shape().t() as f64).sqrt();
        for (j, b) in s.basis().iter().enumerate() {
            let ip = inner_product(&r, b).map_err(|e| e.to_string())?.abs();
            if ip > ORTHO_REL * unit {
                return Err(format!("filter {i} basis {j}: |<residual, B>| = {ip:e}"));
            }
            if unit > 0.0 {
                worst = worst.max(ip / unit);
            }
        }
    }
    Ok(format!("max |<residual, B>|/(|W| sqrt t) = {worst:.1e}"))
}

/// Refitting the scales of a direct sketch never increases its error.
fn check_refit(filters: &[RealTensor], direct: &[Sketch]) -> Result<String, String> {
    for (i, (w, s)) in filters.iter().zip(direct).enumerate() {
        let a = refine_scales(s.basis(), w).map_err(|e| format!("filter {i}: {e}"))?;
        let r = residual(w, s.basis(), &a).map_err(|e| e.to_string())?;
        let refit = frobenius_norm_sq(&r);
        if refit > s.error_sq() * (1.0 + BOUND_SLACK) {
            return Err(format!(
                "filter {i}: refit e²={refit} above direct {}",
                s.error_sq()
            ));
        }
    }
    Ok("refit scales never worse than direct scales".into())
}

/// Exhaustive minimum of `‖W − aB‖²` over all sign patterns.
fn brute_force_one_term(w: &[f64]) -> f64 {
    let t = w.len();
    let norm_sq: f64 = w.iter().map(|v| v * v).sum();
    (0u32..1 << t)
        .map(|mask| {
            let ip: f64 = (0..t)
                .map(|l| if mask >> l & 1 == 1 { w[l] } else { -w[l] })
                .sum();
            norm_sq - ip * ip / t as f64
        })
        .fold(f64::INFINITY, f64::min)
}

fn check_one_term(filters: &[RealTensor], direct: &[Sketch]) -> Result<String, String> {
    for (i, (w, s)) in filters.iter().zip(direct).enumerate() {
        if s.m() == 0 {
            continue;
        }
        let best = brute_force_one_term(w.data());
        let first = s.residual_norms_sq()[1];
        if first - best > 1e-12 * frobenius_norm_sq(w).max(f64::MIN_POSITIVE) {
            return Err(format!(
                "filter {i}: greedy e²={first}, exhaustive minimum {best}"
            ));
        }
    }
    let t = filters.first().map_or(0, |w| w.shape().t());
    Ok(format!("first step optimal over all 2^{t} sign patterns"))
}

fn check_associative(
    sketches: &[Sketch],
    windows: &[RealTensor],
    seed: u64,
) -> Result<String, String> {
    let (tensors, _) = flatten_basis(sketches);
    if tensors.is_empty() {
        return Ok("no binary tensors".into());
    }
    let mst = build_mst(&tensors).map_err(|e| e.to_string())?;
    let random = build_random_tree(&tensors, seed).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut fadds = [0u64; 2];
    for (k, x) in windows.iter().enumerate() {
        let mut cd = OpCounter::default();
        let direct = direct_convolve_all(x, &tensors, &mut cd).map_err(|e| e.to_string())?;
        for (slot, (name, tree)) in [("mst", &mst), ("random", &random)].into_iter().enumerate() {
            let mut ca = OpCounter::default();
            let assoc =
                associative_convolve_all(x, &tensors, tree, &mut ca).map_err(|e| e.to_string())?;
            if ca.fadds != tree.fadd_cost() {
                return Err(format!(
                    "{name} tree: counted {} FADDs, expected {}",
                    ca.fadds,
                    tree.fadd_cost()
                ));
            }
            fadds[slot] += ca.fadds;
            for (i, (a, d)) in assoc.iter().zip(&direct).enumerate() {
                let scale = x.abs_sum().max(d.abs());
                if (a - d).abs() > CONV_REL * scale {
                    return Err(format!("{name} tree, window {k}, tensor {i}: {a} vs {d}"));
                }
                if scale > 0.0 {
                    worst = worst.max((a - d).abs() / scale);
                }
            }
        }
    }
    if fadds[0] > fadds[1] {
        return Err(format!(
            "MST used {} FADDs, random tree {}",
            fadds[0], fadds[1]
        ));
    }
    Ok(format!(
        "{} windows, MST and random trees, max rel diff {worst:.1e}",
        windows.len()
    ))
}

fn check_roundtrip(layer: &SketchLayer) -> Result<String, String> {
    let first = nskt::encode(std::slice::from_ref(layer)).map_err(|e| e.to_string())?;
    let decoded = nskt::decode(&first.bytes).map_err(|e| e.to_string())?;
    let second = nskt::encode(&decoded).map_err(|e| e.to_string())?;
    if first.bytes != second.bytes {
        return Err("re-encoding changed the bytes".into());
    }
    for (i, (a, b)) in layer.sketches.iter().zip(&decoded[0].sketches).enumerate() {
        let same = reconstruct(a)
            .data()
            .iter()
            .zip(reconstruct(b).data())
            .all(|(x, y)| x.to_bits() == y.to_bits());
        if !same {
            return Err(format!("filter {i}: reconstruction changed"));
        }
    }
    Ok(format!(
        "{} bytes, byte-identical re-encoding",
        first.bytes.len()
    ))
}

fn sample_windows(
    layer_shape: netsketch::Shape,
    count: usize,
    seed: u64,
) -> Result<Vec<RealTensor>, Failure> {
    generate_synthetic(layer_shape, count, Distribution::Gaussian, seed).map_err(Failure::compute)
}

fn verify_weights(
    layers: &[WeightLayer],
    args: &VerifyArgs,
    checks: &mut Checks,
) -> Result<(), Failure> {
    let exec = Execution::default();
    for (index, layer) in layers.iter().enumerate() {
        let name = layer.spec.name.as_str();
        let shape = layer.spec.shape;
        let direct = sketch_filters(&layer.filters, args.bits, Method::Direct, exec)
            .map_err(Failure::compute)?;
        let refined = sketch_filters(&layer.filters, args.bits, Method::Refined, exec)
            .map_err(Failure::compute)?;
        let seed = args.seed.wrapping_add(index as u64);
        let windows = sample_windows(shape, args.windows, seed)?;

        checks.record("direct-history", name, check_history(&direct));
        checks.record("direct-bound", name, check_direct_bound(&direct));
        checks.record("refined-history", name, check_history(&refined));
        checks.record("refined-bound", name, check_refined_bound(&refined));
        checks.record(
            "ls-orthogonality",
            name,
            check_orthogonality(&layer.filters, &refined),
        );
        checks.record("ls-refit", name, check_refit(&layer.filters, &direct));
        if shape.t() <= BRUTE_FORCE_MAX_T {
            checks.record(
                "one-term-optimal",
                name,
                check_one_term(&layer.filters, &direct),
            );
        }
        checks.record(
            "assoc-direct",
            name,
            check_associative(&direct, &windows, seed),
        );
        checks.record(
            "assoc-refined",
            name,
            check_associative(&refined, &windows, seed),
        );
        let stored = SketchLayer::new(layer.spec.clone(), args.bits, Method::Refined, refined)
            .map_err(Failure::compute)?;
        checks.record("nskt-roundtrip", name, check_roundtrip(&stored));
    }
    Ok(())
}

fn verify_sketches(
    layers: &[SketchLayer],
    args: &VerifyArgs,
    checks: &mut Checks,
) -> Result<(), Failure> {
    checks.record("checksum", "*", Ok("CRC32 matches".into()));
    for (index, layer) in layers.iter().enumerate() {
        let name = layer.spec.name.as_str();
        let seed = args.seed.wrapping_add(index as u64);
        let windows = sample_windows(layer.spec.shape, args.windows, seed)?;
        checks.record("history", name, check_history(&layer.sketches));
        match layer.method {
            Method::Direct => {
                checks.record("direct-bound", name, check_direct_bound(&layer.sketches))
            }
            Method::Refined => {
                checks.record("refined-bound", name, check_refined_bound(&layer.sketches))
            }
        }
        checks.record(
            "assoc",
            name,
            check_associative(&layer.sketches, &windows, seed),
        );
        checks.record("nskt-roundtrip", name, check_roundtrip(layer));
    }
    Ok(())
}

pub fn run(args: &VerifyArgs) -> Result<(), Failure> {
    let mut checks = Checks::default();
    match input::any(&args.input)? {
        Ok(Loaded::Weights(layers)) => verify_weights(&layers, args, &mut checks)?,
        Ok(Loaded::Sketches(layers)) => verify_sketches(&layers, args, &mut checks)?,
        Err(err @ Error::ChecksumMismatch { .. }) => {
            checks.record("checksum", "*", Err(err.to_string()));
        }
        Err(err) => return Err(Failure::file(&args.input, err)),
    }
    if checks.failed > 0 {
        return Err(Failure::Verify(format!(
            "{} of {} checks failed",
            checks.failed,
            checks.failed + checks.passed
        )));
    }
    println!("all {} checks passed", checks.passed);
    Ok(())
}
