use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use netsketch::io::{
    generate_synthetic, npy, nskt, save_weights, synthetic_feature_map, Distribution, LayerSpec,
    SketchLayer, WeightLayer,
};
use netsketch::layer::sketch_layer_convolve_itemized;
use netsketch::sketch::sketch_filters;
use netsketch::{
    frobenius_norm_sq, reconstruct, refined_sketch, Execution, Method, RealTensor, Shape, TreeMode,
};
use serde_json::Value;
use tempfile::TempDir;

/// Matches the CLI's documented default seed.
const DEFAULT_SEED: u64 = 20_170_716;

fn netsketch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_netsketch"))
        .args(args)
        .env_remove("NETSKETCH_THREADS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn weights(
    dir: &TempDir,
    name: &str,
    dims: (usize, usize, usize),
    n: usize,
    seed: u64,
) -> (PathBuf, Vec<RealTensor>) {
    let shape = Shape::new(dims.0, dims.1, dims.2).unwrap();
    let filters = generate_synthetic(shape, n, Distribution::Gaussian, seed).unwrap();
    let spec = LayerSpec::new(name, n, shape, 1).unwrap();
    let path = dir.path().join(format!("{name}.nskw"));
    save_weights(&path, &[WeightLayer::new(spec, filters.clone()).unwrap()]).unwrap();
    (path, filters)
}

#[test]
fn zero_bits_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let (w, _) = weights(&dir, "a", (3, 3, 3), 2, 1);
    for cmd in ["sketch", "verify", "bench"] {
        let out = netsketch(&[cmd, p(&w), "--bits", "0"]);
        assert_eq!(code(&out), 2, "{cmd}");
    }
    assert_eq!(code(&netsketch(&["bench", p(&w), "--tree", "bogus"])), 2);
    assert_eq!(code(&netsketch(&["frobnicate"])), 2);
}

#[test]
fn sketch_writes_file_and_reports_energy() {
    let dir = TempDir::new().unwrap();
    let (w, filters) = weights(&dir, "conv", (3, 3, 3), 6, 2);
    let out_path = dir.path().join("conv.nskt");
    let out = netsketch(&[
        "sketch",
        p(&w),
        "--bits",
        "3",
        "--method",
        "refined",
        "--output",
        p(&out_path),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    // Energy recomputed from the written file and the original weights.
    let layers = nskt::load_sketch(&out_path).unwrap();
    let (mut err, mut total) = (0.0, 0.0);
    for (w, s) in filters.iter().zip(&layers[0].sketches) {
        err += frobenius_norm_sq(&w.sub(&reconstruct(s)).unwrap());
        total += frobenius_norm_sq(w);
    }
    let expected = format!("energy={:.6}", 1.0 - err / total);
    assert!(
        stdout(&out).contains(&expected),
        "{} lacks {expected}",
        stdout(&out)
    );
}

#[test]
fn sketch_default_output_path_and_npy_input() {
    let dir = TempDir::new().unwrap();
    let shape = Shape::new(2, 3, 3).unwrap();
    let filters = generate_synthetic(shape, 3, Distribution::Uniform, 3).unwrap();
    let path = dir.path().join("fc.npy");
    npy::save_npy(&path, &filters).unwrap();
    let out = netsketch(&["sketch", p(&path), "-m", "2", "--method", "direct"]);
    assert_eq!(code(&out), 0);
    let layers = nskt::load_sketch(dir.path().join("fc.nskt")).unwrap();
    assert_eq!(layers[0].spec.name, "fc");
    assert_eq!(layers[0].method, Method::Direct);
}

#[test]
fn sketch_matches_library_byte_for_byte() {
    let dir = TempDir::new().unwrap();
    let (w, filters) = weights(&dir, "single", (4, 3, 3), 1, 4);
    let out_path = dir.path().join("single.nskt");
    assert_eq!(
        code(&netsketch(&[
            "sketch",
            p(&w),
            "-m",
            "4",
            "-o",
            p(&out_path)
        ])),
        0
    );

    let spec = LayerSpec::new("single", 1, filters[0].shape(), 1).unwrap();
    let sketch = refined_sketch(&filters[0], 4).unwrap();
    let layer = SketchLayer::new(spec, 4, Method::Refined, vec![sketch]).unwrap();
    let expected = nskt::encode(&[layer]).unwrap().bytes;
    assert_eq!(fs::read(&out_path).unwrap(), expected);
}

#[test]
fn verify_passes_on_valid_input() {
    let dir = TempDir::new().unwrap();
    let (w, _) = weights(&dir, "conv", (3, 3, 3), 8, 5);
    let out = netsketch(&["verify", p(&w), "--bits", "5"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let text = stdout(&out);
    assert!(!text.contains("FAIL"));
    for check in [
        "direct-bound",
        "refined-bound",
        "ls-orthogonality",
        "assoc-refined",
    ] {
        assert!(text.contains(&format!("PASS {check}")), "{check} missing");
    }
}

#[test]
fn verify_runs_exhaustive_check_on_small_layers() {
    let dir = TempDir::new().unwrap();
    let (small, _) = weights(&dir, "t8", (2, 2, 2), 5, 6);
    let out = netsketch(&["verify", p(&small)]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("PASS one-term-optimal layer=t8"));

    let (large, _) = weights(&dir, "t27", (3, 3, 3), 2, 7);
    assert!(!stdout(&netsketch(&["verify", p(&large)])).contains("one-term-optimal"));
}

#[test]
fn verify_accepts_sketch_files_and_flags_corruption() {
    let dir = TempDir::new().unwrap();
    let (w, _) = weights(&dir, "conv", (3, 3, 3), 8, 8);
    let sk = dir.path().join("conv.nskt");
    assert_eq!(code(&netsketch(&["sketch", p(&w), "-m", "3"])), 0);
    let out = netsketch(&["verify", p(&sk)]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).contains("PASS checksum"));

    let mut bytes = fs::read(&sk).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x10;
    let bad = dir.path().join("bad.nskt");
    fs::write(&bad, bytes).unwrap();
    let out = netsketch(&["verify", p(&bad)]);
    assert_eq!(code(&out), 1);
    assert!(stdout(&out).contains("FAIL checksum"));
}

#[test]
fn bench_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let (w, _) = weights(&dir, "conv", (3, 3, 3), 8, 9);
    for format in ["json", "csv"] {
        let a = netsketch(&["bench", p(&w), "--format", format, "--seed", "11"]);
        let b = netsketch(&["bench", p(&w), "--format", format, "--seed", "11"]);
        assert_eq!(code(&a), 0);
        assert_eq!(a.stdout, b.stdout, "{format}");
        let c = netsketch(&["bench", p(&w), "--format", format, "--seed", "12"]);
        assert_ne!(a.stdout, c.stdout, "{format}");
    }
    let text = stdout(&netsketch(&["bench", p(&w), "--format", "csv"]));
    assert!(text.starts_with("# fadd:"));
    assert!(text.contains("layer,quantity,mode,step,value"));
}

#[test]
fn bench_reports_mst_reduction_on_a_conv_sized_layer() {
    let dir = TempDir::new().unwrap();
    let (w, filters) = weights(&dir, "conv2", (48, 5, 5), 64, 10);
    let report = dir.path().join("report.json");
    let out = netsketch(&["bench", p(&w), "--bits", "3", "--report", p(&report)]);
    assert_eq!(code(&out), 0);
    let doc: Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    let layer = &doc["layers"][0];
    let mode = |name: &str| {
        layer["modes"]
            .as_array()
            .unwrap()
            .iter()
            .find(|m| m["tree"] == name)
            .unwrap()
            .clone()
    };
    let fadds = |m: &Value| m["convolution"]["fadds"].as_u64().unwrap();
    let (none, random, mst) = (mode("none"), mode("random"), mode("mst"));
    let windows = layer["windows"].as_u64().unwrap();
    assert_eq!(windows, 81);
    assert_eq!(fadds(&none), windows * 3 * 64 * 1200);
    assert_eq!(
        none["convolution_fadds_per_window"].as_f64().unwrap(),
        (3 * 64 * 1200) as f64
    );
    assert!(mst["fadd_reduction"].as_f64().unwrap() >= 1.5);
    assert!(fadds(&mst) <= fadds(&random));
    assert!(mst["max_abs_diff_vs_direct"].as_f64().unwrap() < 1e-9);
    assert!((layer["accounting"]["compression_factor"].as_f64().unwrap() - 10.39).abs() < 0.01);

    // Counts equal the library's own counters for the same inputs.
    let sketches = sketch_filters(&filters, 3, Method::Refined, Execution::Sequential).unwrap();
    let fm = synthetic_feature_map(48, 13, 13, Distribution::Gaussian, DEFAULT_SEED).unwrap();
    for (name, tree) in [
        ("none", TreeMode::None),
        ("random", TreeMode::Random(DEFAULT_SEED)),
        ("mst", TreeMode::Mst),
    ] {
        let (_, cost) =
            sketch_layer_convolve_itemized(&fm, &sketches, tree, 1, Execution::Sequential).unwrap();
        let m = mode(name);
        assert_eq!(fadds(&m), cost.convolution.fadds, "{name}");
        assert_eq!(
            m["total"]["fmuls"].as_u64().unwrap(),
            cost.total().fmuls,
            "{name}"
        );
        assert_eq!(
            m["convolution"]["doublings"].as_u64().unwrap(),
            cost.convolution.doublings,
            "{name}"
        );
    }
}

#[test]
fn bench_single_tree_mode() {
    let dir = TempDir::new().unwrap();
    let (w, _) = weights(&dir, "conv", (2, 3, 3), 4, 12);
    let out = netsketch(&["bench", p(&w), "--tree", "none", "--map", "5x6", "-m", "2"]);
    assert_eq!(code(&out), 0);
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    let layer = &doc["layers"][0];
    assert_eq!(layer["modes"].as_array().unwrap().len(), 1);
    assert_eq!(layer["windows"], 3 * 4);
    assert_eq!(
        layer["modes"][0]["convolution_fadds_per_window"]
            .as_f64()
            .unwrap(),
        (2 * 4 * 18) as f64
    );

    let out = netsketch(&["bench", p(&w), "--map", "2x2"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn info_describes_sketch_file() {
    let dir = TempDir::new().unwrap();
    let (w, _) = weights(&dir, "conv2", (48, 5, 5), 8, 13);
    assert_eq!(
        code(&netsketch(&[
            "sketch",
            p(&w),
            "-m",
            "3",
            "--method",
            "direct"
        ])),
        0
    );
    let sk = dir.path().join("conv2.nskt");
    let out = netsketch(&["info", p(&sk)]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    for needle in [
        "layer conv2",
        "filters: 8",
        "t = 1200",
        "m: 3",
        "method: direct",
        "dedup ratio",
        "compression factor: 10.39x",
    ] {
        assert!(text.contains(needle), "missing {needle:?} in\n{text}");
    }
}

#[test]
fn bad_files_fail_cleanly() {
    let dir = TempDir::new().unwrap();
    let (w, _) = weights(&dir, "conv", (3, 3, 3), 4, 14);
    assert_eq!(code(&netsketch(&["sketch", p(&w), "-m", "2"])), 0);
    let sk = dir.path().join("conv.nskt");
    let bytes = fs::read(&sk).unwrap();
    let truncated = dir.path().join("short.nskt");
    fs::write(&truncated, &bytes[..bytes.len() / 2]).unwrap();

    let out = netsketch(&["info", p(&truncated)]);
    assert_eq!(code(&out), 3);
    assert!(out.stdout.is_empty());
    assert!(!out.stderr.is_empty());

    let missing = dir.path().join("nope.nskw");
    for cmd in ["sketch", "verify", "bench", "info"] {
        let out = if cmd == "sketch" {
            netsketch(&[cmd, p(&missing), "-m", "1"])
        } else {
            netsketch(&[cmd, p(&missing)])
        };
        assert_eq!(code(&out), 3, "{cmd}");
    }
    let junk = dir.path().join("junk.bin");
    fs::write(&junk, b"not a weight file").unwrap();
    assert_eq!(code(&netsketch(&["sketch", p(&junk), "-m", "1"])), 3);
}

#[test]
fn thread_cap_is_honoured_and_validated() {
    let dir = TempDir::new().unwrap();
    let (w, _) = weights(&dir, "conv", (3, 3, 3), 4, 15);
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_netsketch"))
            .args(["bench", p(&w)])
            .env("NETSKETCH_THREADS", threads)
            .output()
            .unwrap()
    };
    let one = run("1");
    let two = run("2");
    assert_eq!(code(&one), 0);
    assert_eq!(one.stdout, two.stdout);
    assert_eq!(code(&run("0")), 2);
    assert_eq!(code(&run("many")), 2);
}
