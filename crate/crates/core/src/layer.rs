//! Sliding-window evaluation of a sketched layer.
//!
//! For every output position the input window `X` is convolved with all
//! binary tensors of the layer (directly, or associatively along one
//! dependency tree spanning every filter's basis), and each filter's output
//! is then `Σ_j a_j · (X ∗ B_j)`.

use serde::{Deserialize, Serialize};

use crate::assoc::{
    associative_convolve_all, build_mst, build_random_tree, direct_convolve_all, DependencyTree,
    OpCounter,
};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::sketch::Sketch;
use crate::tensor::{BinaryTensor, RealTensor, Shape};

/// Dense `c × w × h` volume, same flat order as [`RealTensor`].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    c: usize,
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(c: usize, w: usize, h: usize, data: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(c, w, h)?;
        let tensor = RealTensor::new(shape, data)?;
        Ok(FeatureMap {
            c,
            w,
            h,
            data: tensor.into_data(),
        })
    }

    pub fn from_tensor(t: RealTensor) -> Self {
        let s = t.shape();
        FeatureMap {
            c: s.c(),
            w: s.w(),
            h: s.h(),
            data: t.into_data(),
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.c, self.w, self.h)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, ci: usize, wi: usize, hi: usize) -> f64 {
        self.data[(ci * self.w + wi) * self.h + hi]
    }

    /// The `kernel`-shaped window whose corner is at `(wi, hi)`.
    pub fn window(&self, kernel: Shape, wi: usize, hi: usize) -> RealTensor {
        let mut data = Vec::with_capacity(kernel.t());
        for ci in 0..kernel.c() {
            for i in 0..kernel.w() {
                let row = (ci * self.w + wi + i) * self.h + hi;
                data.extend_from_slice(&self.data[row..row + kernel.h()]);
            }
        }
        RealTensor::new(kernel, data).expect("window of a finite map is finite")
    }
}

/// Output size of a valid (unpadded) convolution.
pub fn output_geometry(fm: &FeatureMap, kernel: Shape, stride: usize) -> Result<(usize, usize)> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    if kernel.c() != fm.c || kernel.w() > fm.w || kernel.h() > fm.h {
        return Err(Error::Geometry {
            kernel,
            map_c: fm.c,
            map_w: fm.w,
            map_h: fm.h,
        });
    }
    Ok((
        (fm.w - kernel.w()) / stride + 1,
        (fm.h - kernel.h()) / stride + 1,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "tree", content = "seed")]
pub enum TreeMode {
    Mst,
    Random(u64),
    /// Every binary convolution computed directly.
    None,
}

impl TreeMode {
    pub fn name(&self) -> &'static str {
        match self {
            TreeMode::Mst => "mst",
            TreeMode::Random(_) => "random",
            TreeMode::None => "none",
        }
    }
}

/// Layer operation counts split by phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    /// The `mn` binary convolutions per window.
    pub convolution: OpCounter,
    /// Scaling and summing the binary results into filter outputs.
    pub combination: OpCounter,
}

impl LayerCost {
    pub fn total(&self) -> OpCounter {
        self.convolution + self.combination
    }
}

/// All basis tensors of a layer in filter order, plus the filter each came
/// from.
pub fn flatten_basis(sketches: &[Sketch]) -> (Vec<BinaryTensor>, Vec<usize>) {
    let mut tensors = Vec::new();
    let mut owner = Vec::new();
    for (i, s) in sketches.iter().enumerate() {
        tensors.extend(s.basis().iter().cloned());
        owner.extend(std::iter::repeat_n(i, s.m()));
    }
    (tensors, owner)
}

pub fn build_tree(tensors: &[BinaryTensor], mode: TreeMode) -> Result<Option<DependencyTree>> {
    if tensors.is_empty() {
        return Ok(None);
    }
    match mode {
        TreeMode::Mst => build_mst(tensors).map(Some),
        TreeMode::Random(seed) => build_random_tree(tensors, seed).map(Some),
        TreeMode::None => Ok(None),
    }
}

fn common_shape(sketches: &[Sketch]) -> Result<Shape> {
    let first = sketches
        .first()
        .ok_or_else(|| Error::InvalidArgument("layer has no filters".into()))?
        .shape();
    for s in sketches {
        first.ensure_same(&s.shape())?;
    }
    Ok(first)
}

/// Evaluates a sketched layer on `fm`, returning one output map per filter
/// and the operation counts of both phases.
pub fn sketch_layer_convolve_itemized(
    fm: &FeatureMap,
    sketches: &[Sketch],
    mode: TreeMode,
    stride: usize,
    exec: Execution,
) -> Result<(Vec<FeatureMap>, LayerCost)> {
    let kernel = common_shape(sketches)?;
    let (out_w, out_h) = output_geometry(fm, kernel, stride)?;
    let (tensors, _) = flatten_basis(sketches);
    let tree = build_tree(&tensors, mode)?;

    let positions = out_w * out_h;
    let per_window = par::map_range(exec, positions, |p| -> Result<(Vec<f64>, LayerCost)> {
        let x = fm.window(kernel, (p / out_h) * stride, (p % out_h) * stride);
        let mut cost = LayerCost::default();
        let y = match &tree {
            Some(tree) => associative_convolve_all(&x, &tensors, tree, &mut cost.convolution)?,
            None => direct_convolve_all(&x, &tensors, &mut cost.convolution)?,
        };
        let mut outputs = Vec::with_capacity(sketches.len());
        let mut offset = 0;
        for s in sketches {
            let m = s.m();
            let mut acc = 0.0;
            for (j, a) in s.scales().iter().enumerate() {
                acc += a * y[offset + j];
            }
            cost.combination.fmuls += m as u64;
            cost.combination.fadds += m.saturating_sub(1) as u64;
            offset += m;
            outputs.push(acc);
        }
        Ok((outputs, cost))
    });

    let mut maps = vec![vec![0.0; positions]; sketches.len()];
    let mut total = LayerCost::default();
    for (p, window) in per_window.into_iter().enumerate() {
        let (outputs, cost) = window?;
        for (i, v) in outputs.into_iter().enumerate() {
            maps[i][p] = v;
        }
        total.convolution += cost.convolution;
        total.combination += cost.combination;
    }
    let maps = maps
        .into_iter()
        .map(|data| FeatureMap::new(1, out_w, out_h, data))
        .collect::<Result<Vec<_>>>()?;
    Ok((maps, total))
}

/// Same as [`sketch_layer_convolve_itemized`], accumulating the combined
/// counts into `counter`.
pub fn sketch_layer_convolve(
    fm: &FeatureMap,
    sketches: &[Sketch],
    mode: TreeMode,
    stride: usize,
    counter: &mut OpCounter,
) -> Result<Vec<FeatureMap>> {
    let (maps, cost) =
        sketch_layer_convolve_itemized(fm, sketches, mode, stride, Execution::default())?;
    *counter += cost.total();
    Ok(maps)
}

/// Full-precision valid convolution, the reference for sketched layers.
pub fn dense_convolve(
    fm: &FeatureMap,
    filters: &[RealTensor],
    stride: usize,
) -> Result<Vec<FeatureMap>> {
    let kernel = filters
        .first()
        .ok_or_else(|| Error::InvalidArgument("no filters".into()))?
        .shape();
    let (out_w, out_h) = output_geometry(fm, kernel, stride)?;
    filters
        .iter()
        .map(|f| {
            kernel.ensure_same(&f.shape())?;
            let mut data = Vec::with_capacity(out_w * out_h);
            for ow in 0..out_w {
                for oh in 0..out_h {
                    data.push(fm.window(kernel, ow * stride, oh * stride).dot(f)?);
                }
            }
            FeatureMap::new(1, out_w, out_h, data)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::{direct_sketch, refined_sketch};

    #[test]
    fn window_extraction() {
        let fm = FeatureMap::new(2, 3, 3, (0..18).map(f64::from).collect()).unwrap();
        let k = Shape::new(2, 2, 2).unwrap();
        let x = fm.window(k, 1, 1);
        assert_eq!(x.data(), &[4.0, 5.0, 7.0, 8.0, 13.0, 14.0, 16.0, 17.0]);
    }

    #[test]
    fn geometry_checks() {
        let fm = FeatureMap::new(1, 5, 4, vec![0.0; 20]).unwrap();
        let k = Shape::new(1, 3, 2).unwrap();
        assert_eq!(output_geometry(&fm, k, 1).unwrap(), (3, 3));
        assert_eq!(output_geometry(&fm, k, 2).unwrap(), (2, 2));
        assert!(output_geometry(&fm, Shape::new(2, 1, 1).unwrap(), 1).is_err());
        assert!(output_geometry(&fm, Shape::new(1, 6, 1).unwrap(), 1).is_err());
        assert!(output_geometry(&fm, k, 0).is_err());
    }

    #[test]
    fn unit_kernels_scale_input() {
        let fm = FeatureMap::new(1, 2, 2, vec![1.0, -2.0, 0.5, 4.0]).unwrap();
        let w = RealTensor::from_slice(&[-3.0]).unwrap();
        let s = direct_sketch(&w, 1).unwrap();
        let mut c = OpCounter::new();
        let out = sketch_layer_convolve(&fm, &[s], TreeMode::Mst, 1, &mut c).unwrap();
        assert_eq!(out[0].data(), &[-3.0, 6.0, -1.5, -12.0]);
        assert_eq!(c.fmuls, 4);
    }

    #[test]
    fn exact_sketch_matches_dense() {
        let shape = Shape::new(1, 2, 2).unwrap();
        let b = BinaryTensor::from_signs(shape, &[1, -1, -1, 1]).unwrap();
        let w = b.to_real().scaled(0.25);
        let s = direct_sketch(&w, 2).unwrap();
        let fm =
            FeatureMap::new(1, 3, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]).unwrap();
        let mut c = OpCounter::new();
        let sk = sketch_layer_convolve(&fm, &[s], TreeMode::None, 1, &mut c).unwrap();
        let dense = dense_convolve(&fm, &[w], 1).unwrap();
        assert_eq!(sk, dense);
    }

    #[test]
    fn fmuls_do_not_depend_on_tree() {
        let shape = Shape::new(1, 2, 2).unwrap();
        let filters = [
            RealTensor::new(shape, vec![0.3, -1.2, 0.8, 0.1]).unwrap(),
            RealTensor::new(shape, vec![-0.7, 0.4, 0.9, -0.2]).unwrap(),
        ];
        let sketches: Vec<Sketch> = filters
            .iter()
            .map(|w| refined_sketch(w, 2).unwrap())
            .collect();
        let fm = FeatureMap::new(1, 4, 4, (0..16).map(|v| (v as f64).sin()).collect()).unwrap();
        let mut fmuls = Vec::new();
        for mode in [TreeMode::Mst, TreeMode::Random(3), TreeMode::None] {
            let (_, cost) =
                sketch_layer_convolve_itemized(&fm, &sketches, mode, 1, Execution::Sequential)
                    .unwrap();
            assert_eq!(cost.convolution.fmuls, 0);
            fmuls.push(cost.total().fmuls);
        }
        assert!(fmuls.iter().all(|f| *f == fmuls[0]));
    }
}
