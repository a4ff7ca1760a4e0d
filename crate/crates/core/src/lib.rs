//! Binary-basis sketching of convolution filters.
//!
//! A real filter `W ∈ R^{c×w×h}` is approximated by `Σ_j a_j B_j` with
//! `B_j ∈ {±1}^{c×w×h}` ([`sketch`]). The `mn` binary convolutions of a
//! sketched layer are then evaluated associatively along a minimum spanning
//! tree ([`assoc`], [`layer`]), with exact FADD/FMUL accounting.
//!
//! Data-parallel loops (per filter, per output position) use rayon when the
//! `parallel` feature is enabled; see [`Execution`].

pub mod assoc;
pub mod error;
pub mod io;
pub mod layer;
mod linalg;
mod par;
pub mod sketch;
pub mod tensor;

pub use assoc::{
    assoc_conv_step, associative_convolve_all, build_mst, build_random_tree, direct_convolve_all,
    distance, tern_combine, ternary_conv, DependencyTree, OpCounter, TernaryTensor,
};
pub use error::{Error, Result};
pub use layer::{sketch_layer_convolve, FeatureMap, LayerCost, TreeMode};
pub use par::Execution;
pub use sketch::{
    compute_lambda, direct_bound, direct_sketch, energy_curve, reconstruct, refine_scales,
    refined_bound, refined_sketch, storage_and_flops, Method, Sketch, StopReason,
};
pub use tensor::{
    binary_inner_product, frobenius_norm_sq, inner_product, sign_tensor, BinaryTensor, RealTensor,
    Shape,
};
