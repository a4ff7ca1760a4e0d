//! Layer statistics and the structured bench report.

use netsketch::io::LayerStorage;
use netsketch::sketch::{bound_report, AccountingReport};
use netsketch::{OpCounter, Result, Sketch};
use serde::Serialize;

use crate::FormatArg;

/// Counting rules, emitted at the top of every report.
pub const CONVENTIONS: &[&str] = &[
    "fadd: one floating-point addition or subtraction",
    "fmul: one floating-point multiplication",
    "direct (tree=none): each binary tensor costs t FADDs per window, so m*n*t per window",
    "associative: the tree root costs t FADDs; an edge costs (t-|r|)/2 FADDs for the ternary \
     convolution plus 1 FADD to combine with the parent result",
    "doublings: the factor 2 on each edge, counted separately and not as an FMUL",
    "ternary_selects: t per ternary convolution, one sign/zero select per entry; not arithmetic",
    "convolution phase: binary responses only; the reduction factor compares this phase",
    "combination phase: m FMULs and m-1 FADDs per filter per window",
    "nominal storage: 32 bits per scale and t bits per binary tensor, (32m+tm)*n per layer",
    "stored storage: bits actually written, 64-bit scales, deduplicated pool, indices and header",
    "energy[j]: 1 - sum_i e_i^2 / sum_i ||W_i||^2 after j terms",
    "bound[j]: sum over filters of the theoretical bound on e_i^2 after j terms",
    "wall_time_ms: informational only, present only with --wall-time",
];

/// Residual history of `s` extended to `m + 1` entries by repeating the last
/// value (sketches may stop early).
fn padded(values: &[f64], m: usize) -> Vec<f64> {
    let last = *values.last().expect("history has at least one entry");
    (0..=m)
        .map(|j| values.get(j).copied().unwrap_or(last))
        .collect()
}

/// `Σ_i ‖Ŵ_{i,j}‖²` for `j = 0..=m`.
pub fn residual_curve(sketches: &[Sketch], m: usize) -> Vec<f64> {
    let mut total = vec![0.0; m + 1];
    for s in sketches {
        for (acc, v) in total.iter_mut().zip(padded(s.residual_norms_sq(), m)) {
            *acc += v;
        }
    }
    total
}

/// Layer energy `1 − Σe²/Σ‖W‖²` after `j = 0..=m` terms.
pub fn energy_curve(sketches: &[Sketch], m: usize) -> Vec<f64> {
    let residuals = residual_curve(sketches, m);
    let source = residuals[0];
    if source == 0.0 {
        return vec![1.0; m + 1];
    }
    residuals.iter().map(|r| 1.0 - r / source).collect()
}

/// Summed theoretical bound after `j = 0..=m` terms.
pub fn bound_curve(sketches: &[Sketch], m: usize) -> Result<Vec<f64>> {
    let mut total = vec![0.0; m + 1];
    for s in sketches {
        let report = bound_report(s)?;
        let mut curve = vec![s.residual_norms_sq()[0]];
        curve.extend(report.per_step_bound);
        for (acc, v) in total.iter_mut().zip(padded(&curve, m)) {
            *acc += v;
        }
    }
    Ok(total)
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub command: &'static str,
    pub version: &'static str,
    pub conventions: Vec<&'static str>,
    pub parameters: Parameters,
    pub layers: Vec<LayerRecord>,
}

#[derive(Debug, Serialize)]
pub struct Parameters {
    pub input: String,
    pub bits: usize,
    pub method: &'static str,
    pub trees: Vec<&'static str>,
    pub seed: u64,
    pub stride: usize,
}

#[derive(Debug, Serialize)]
pub struct LayerRecord {
    pub name: String,
    pub n: usize,
    pub shape: [usize; 3],
    pub t: usize,
    /// Feature map `[c, w, h]` the layer was evaluated on.
    pub feature_map: [usize; 3],
    pub windows: usize,
    pub energy: Vec<f64>,
    pub residual_norms_sq: Vec<f64>,
    pub bound: Vec<f64>,
    pub storage: LayerStorage,
    pub accounting: AccountingReport,
    pub modes: Vec<ModeRecord>,
}

#[derive(Debug, Serialize)]
pub struct ModeRecord {
    pub tree: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tree_seed: Option<u64>,
    /// Sum of edge distances, absent for `none`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tree_weight: Option<u64>,
    pub convolution: OpCounter,
    pub combination: OpCounter,
    pub total: OpCounter,
    pub convolution_fadds_per_window: f64,
    /// Direct convolution-phase FADDs over this mode's.
    pub fadd_reduction: f64,
    /// Largest `|y − y_direct|` over all outputs.
    pub max_abs_diff_vs_direct: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
}

impl RunReport {
    pub fn render(&self, format: FormatArg) -> String {
        match format {
            FormatArg::Json => {
                let mut s = serde_json::to_string_pretty(self).expect("report serializes");
                s.push('\n');
                s
            }
            FormatArg::Csv => self.to_csv(),
        }
    }

    /// Long-form CSV: one value per row, conventions as `#` comment lines.
    fn to_csv(&self) -> String {
        let mut out = String::new();
        for line in &self.conventions {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
        let p = &self.parameters;
        out.push_str(&format!(
            "# input={} bits={} method={} seed={} stride={}\n",
            p.input, p.bits, p.method, p.seed, p.stride
        ));
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["layer", "quantity", "mode", "step", "value"])
            .unwrap();
        for layer in &self.layers {
            let mut row = |quantity: &str, mode: &str, step: Option<usize>, value: String| {
                let step = step.map(|s| s.to_string()).unwrap_or_default();
                w.write_record([layer.name.as_str(), quantity, mode, &step, &value])
                    .unwrap();
            };
            for (name, curve) in [
                ("energy", &layer.energy),
                ("residual_norm_sq", &layer.residual_norms_sq),
                ("bound", &layer.bound),
            ] {
                for (j, v) in curve.iter().enumerate() {
                    row(name, "", Some(j), v.to_string());
                }
            }
            let s = &layer.storage;
            let a = &layer.accounting;
            for (name, value) in [
                ("n", layer.n.to_string()),
                ("t", layer.t.to_string()),
                ("windows", layer.windows.to_string()),
                ("pool_size", s.pool_size.to_string()),
                ("dedup_ratio", s.dedup_ratio.to_string()),
                ("pool_bits", s.pool_bits.to_string()),
                ("index_bits", s.index_bits.to_string()),
                ("scale_bits", s.scale_bits.to_string()),
                ("header_bits", s.header_bits.to_string()),
                ("stored_bits", s.total_bits().to_string()),
                ("nominal_bits", s.nominal_bits.to_string()),
                ("full_bits", a.full_bits.to_string()),
                ("compression_factor", a.compression_factor.to_string()),
                ("full_fmuls", a.full_fmuls.to_string()),
                ("sketched_fmuls", a.sketched_fmuls.to_string()),
                ("fmul_factor", a.fmul_factor.to_string()),
            ] {
                row(name, "", None, value);
            }
            for mode in &layer.modes {
                let counts = [
                    ("convolution", &mode.convolution),
                    ("combination", &mode.combination),
                    ("total", &mode.total),
                ];
                for (phase, c) in counts {
                    row(
                        &format!("{phase}_fadds"),
                        mode.tree,
                        None,
                        c.fadds.to_string(),
                    );
                    row(
                        &format!("{phase}_fmuls"),
                        mode.tree,
                        None,
                        c.fmuls.to_string(),
                    );
                    row(
                        &format!("{phase}_ternary_selects"),
                        mode.tree,
                        None,
                        c.ternary_selects.to_string(),
                    );
                    row(
                        &format!("{phase}_doublings"),
                        mode.tree,
                        None,
                        c.doublings.to_string(),
                    );
                }
                if let Some(weight) = mode.tree_weight {
                    row("tree_weight", mode.tree, None, weight.to_string());
                }
                row(
                    "convolution_fadds_per_window",
                    mode.tree,
                    None,
                    mode.convolution_fadds_per_window.to_string(),
                );
                row(
                    "fadd_reduction",
                    mode.tree,
                    None,
                    mode.fadd_reduction.to_string(),
                );
                row(
                    "max_abs_diff_vs_direct",
                    mode.tree,
                    None,
                    mode.max_abs_diff_vs_direct.to_string(),
                );
                if let Some(ms) = mode.wall_time_ms {
                    row("wall_time_ms", mode.tree, None, ms.to_string());
                }
            }
        }
        let body = w.into_inner().expect("in-memory writer");
        out.push_str(&String::from_utf8(body).expect("csv output is UTF-8"));
        out
    }
}
