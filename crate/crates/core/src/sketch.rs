//! Greedy binary expansions of a real tensor.
//!
//! A [`Sketch`] approximates `W` by `Σ_j a_j B_j` with `B_j ∈ {±1}^t`. Two
//! builders are provided:
//!
//! * [`direct_sketch`] picks `B_j = sgn(Ŵ_j)` and `a_j = ⟨B_j, Ŵ_j⟩ / t` on the
//!   running residual `Ŵ_j`, leaving earlier scales alone.
//! * [`refined_sketch`] picks `B_j` the same way but then refits every scale
//!   by least squares over the basis collected so far.
//!
//! The residual history lets callers check the contraction bounds
//! ([`direct_bound`], [`refined_bound`]) and compute energy curves.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{min_norm_solve, psd_pinv};
use crate::par::{self, Execution};
use crate::tensor::{
    binary_inner_product, frobenius_norm_sq, inner_product, sign_tensor, BinaryTensor, RealTensor,
    Shape,
};

/// A residual this small relative to `‖W‖²` counts as an exact fit.
pub const ZERO_RESIDUAL_REL: f64 = 1e-24;

/// `t − λ` below `DEGENERATE_REL · t` means the new tensor adds no direction.
pub const DEGENERATE_REL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Direct,
    Refined,
}

impl Method {
    pub fn tag(self) -> u8 {
        match self {
            Method::Direct => 0,
            Method::Refined => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Method> {
        match tag {
            0 => Some(Method::Direct),
            1 => Some(Method::Refined),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Direct => "direct",
            Method::Refined => "refined",
        }
    }
}

/// Why a sketch ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// All requested terms were produced.
    Completed,
    /// The residual vanished before the requested term count.
    ZeroResidual,
    /// The next sign tensor repeats or lies in the span of the basis, so the
    /// refit cannot lower the residual.
    DegenerateBasis,
}

impl StopReason {
    pub fn tag(self) -> u8 {
        match self {
            StopReason::Completed => 0,
            StopReason::ZeroResidual => 1,
            StopReason::DegenerateBasis => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<StopReason> {
        match tag {
            0 => Some(StopReason::Completed),
            1 => Some(StopReason::ZeroResidual),
            2 => Some(StopReason::DegenerateBasis),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sketch {
    shape: Shape,
    basis: Vec<BinaryTensor>,
    scales: Vec<f64>,
    residual_norms_sq: Vec<f64>,
    method: Method,
    stop: StopReason,
}

impl Sketch {
    /// Assembles a sketch from stored parts, checking the structural
    /// invariants.
    pub fn from_parts(
        shape: Shape,
        basis: Vec<BinaryTensor>,
        scales: Vec<f64>,
        residual_norms_sq: Vec<f64>,
        method: Method,
        stop: StopReason,
    ) -> Result<Sketch> {
        if basis.len() != scales.len() {
            return Err(Error::LengthMismatch {
                expected: basis.len(),
                actual: scales.len(),
            });
        }
        if residual_norms_sq.len() != basis.len() + 1 {
            return Err(Error::LengthMismatch {
                expected: basis.len() + 1,
                actual: residual_norms_sq.len(),
            });
        }
        for b in &basis {
            shape.ensure_same(&b.shape())?;
        }
        if let Some(index) = scales
            .iter()
            .chain(&residual_norms_sq)
            .position(|v| !v.is_finite())
        {
            return Err(Error::NonFinite { index });
        }
        if residual_norms_sq.windows(2).any(|p| p[1] > p[0]) {
            return Err(Error::InvalidArgument(
                "residual history must be non-increasing".into(),
            ));
        }
        Ok(Sketch {
            shape,
            basis,
            scales,
            residual_norms_sq,
            method,
            stop,
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    /// Number of terms actually present.
    pub fn m(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[BinaryTensor] {
        &self.basis
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    /// `‖Ŵ_0‖², …, ‖Ŵ_m‖²`.
    pub fn residual_norms_sq(&self) -> &[f64] {
        &self.residual_norms_sq
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn stop_reason(&self) -> StopReason {
        self.stop
    }

    /// Final reconstruction error `e²`.
    pub fn error_sq(&self) -> f64 {
        *self
            .residual_norms_sq
            .last()
            .expect("history is never empty")
    }

    pub fn reconstruct(&self) -> RealTensor {
        reconstruct(self)
    }
}

/// `Σ_j a_j B_j` as a dense tensor.
pub fn reconstruct(s: &Sketch) -> RealTensor {
    let t = s.shape.t();
    let mut data = vec![0.0; t];
    for (b, &a) in s.basis.iter().zip(&s.scales) {
        for (l, v) in data.iter_mut().enumerate() {
            *v += a * b.sign(l);
        }
    }
    RealTensor::new(s.shape, data).expect("finite scales give finite sums")
}

fn is_zero_residual(norm_sq: f64, source_norm_sq: f64) -> bool {
    norm_sq == 0.0 || norm_sq <= ZERO_RESIDUAL_REL * source_norm_sq
}

fn check_terms(m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::InvalidArgument(
            "term count m must be at least 1".into(),
        ));
    }
    Ok(())
}

/// Greedy expansion without refitting (each step solves the one-term problem
/// on the current residual in closed form).
pub fn direct_sketch(w: &RealTensor, m: usize) -> Result<Sketch> {
    check_terms(m)?;
    let t = w.shape().t() as f64;
    let source = frobenius_norm_sq(w);
    let mut residual = w.clone();
    let mut history = vec![source];
    let mut basis = Vec::with_capacity(m);
    let mut scales = Vec::with_capacity(m);
    let mut stop = StopReason::Completed;

    for _ in 0..m {
        if is_zero_residual(*history.last().unwrap(), source) {
            stop = StopReason::ZeroResidual;
            break;
        }
        let b = sign_tensor(&residual);
        let a = inner_product(&residual, &b)? / t;
        residual = residual.minus_scaled(a, &b)?;
        history.push(frobenius_norm_sq(&residual));
        basis.push(b);
        scales.push(a);
    }

    Ok(Sketch {
        shape: w.shape(),
        basis,
        scales,
        residual_norms_sq: history,
        method: Method::Direct,
        stop,
    })
}

/// Gram matrix of a binary basis together with the basis' projections of a
/// fixed target, grown one column at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementState {
    gram: DMatrix<f64>,
    basis_projections: DVector<f64>,
}

impl RefinementState {
    pub fn new() -> Self {
        RefinementState {
            gram: DMatrix::zeros(0, 0),
            basis_projections: DVector::zeros(0),
        }
    }

    pub fn from_basis(basis: &[BinaryTensor], w: &RealTensor) -> Result<Self> {
        let mut state = RefinementState::new();
        for (j, b) in basis.iter().enumerate() {
            state.push(&basis[..j], b, w)?;
        }
        Ok(state)
    }

    /// Appends `next`, given the basis already absorbed (`prefix`).
    pub fn push(
        &mut self,
        prefix: &[BinaryTensor],
        next: &BinaryTensor,
        w: &RealTensor,
    ) -> Result<()> {
        debug_assert_eq!(prefix.len(), self.len());
        let k = self.len();
        let mut gram = self.gram.clone().resize(k + 1, k + 1, 0.0);
        for (i, b) in prefix.iter().enumerate() {
            let r = binary_inner_product(b, next)? as f64;
            gram[(i, k)] = r;
            gram[(k, i)] = r;
        }
        gram[(k, k)] = next.t() as f64;
        let mut proj = self.basis_projections.clone().resize_vertically(k + 1, 0.0);
        proj[k] = inner_product(w, next)?;
        self.gram = gram;
        self.basis_projections = proj;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.gram.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn basis_projections(&self) -> &DVector<f64> {
        &self.basis_projections
    }

    /// Least-squares scales; minimum-norm when the Gram matrix is singular.
    pub fn solve(&self) -> Vec<f64> {
        min_norm_solve(&self.gram, &self.basis_projections)
            .iter()
            .copied()
            .collect()
    }
}

impl Default for RefinementState {
    fn default() -> Self {
        Self::new()
    }
}

/// Least-squares optimal scales for a fixed basis.
pub fn refine_scales(basis: &[BinaryTensor], w: &RealTensor) -> Result<Vec<f64>> {
    if basis.is_empty() {
        return Err(Error::InvalidArgument("basis must not be empty".into()));
    }
    Ok(RefinementState::from_basis(basis, w)?.solve())
}

fn residual_of(w: &RealTensor, basis: &[BinaryTensor], scales: &[f64]) -> Result<RealTensor> {
    let mut residual = w.clone();
    for (b, &a) in basis.iter().zip(scales) {
        residual = residual.minus_scaled(a, b)?;
    }
    Ok(residual)
}

/// Greedy expansion with a joint least-squares refit of all scales after each
/// new basis tensor.
pub fn refined_sketch(w: &RealTensor, m: usize) -> Result<Sketch> {
    check_terms(m)?;
    let t = w.shape().t() as f64;
    let source = frobenius_norm_sq(w);
    let mut residual = w.clone();
    let mut history = vec![source];
    let mut basis: Vec<BinaryTensor> = Vec::with_capacity(m);
    let mut scales = Vec::new();
    let mut state = RefinementState::new();
    let mut stop = StopReason::Completed;

    for _ in 0..m {
        if is_zero_residual(*history.last().unwrap(), source) {
            stop = StopReason::ZeroResidual;
            break;
        }
        let b = sign_tensor(&residual);
        if basis.contains(&b) {
            stop = StopReason::DegenerateBasis;
            break;
        }
        if !basis.is_empty() && t - compute_lambda(&basis, &b)? <= DEGENERATE_REL * t {
            stop = StopReason::DegenerateBasis;
            break;
        }
        state.push(&basis, &b, w)?;
        basis.push(b);
        scales = state.solve();
        residual = residual_of(w, &basis, &scales)?;
        let norm = frobenius_norm_sq(&residual);
        // A refit cannot raise the error; clamp roundoff so the history stays
        // monotone.
        history.push(norm.min(*history.last().unwrap()));
    }

    Ok(Sketch {
        shape: w.shape(),
        basis,
        scales,
        residual_norms_sq: history,
        method: Method::Refined,
        stop,
    })
}

pub fn sketch(w: &RealTensor, m: usize, method: Method) -> Result<Sketch> {
    match method {
        Method::Direct => direct_sketch(w, m),
        Method::Refined => refined_sketch(w, m),
    }
}

/// Sketches every filter of a layer independently.
pub fn sketch_filters(
    filters: &[RealTensor],
    m: usize,
    method: Method,
    exec: Execution,
) -> Result<Vec<Sketch>> {
    check_terms(m)?;
    par::map_slice(exec, filters, |w| sketch(w, m, method))
        .into_iter()
        .collect()
}

/// `‖W‖² (1 − 1/t)^m`.
pub fn direct_bound(norm_sq: f64, t: usize, m: usize) -> f64 {
    assert!(t >= 1, "t must be positive");
    if m == 0 {
        return norm_sq;
    }
    norm_sq * (1.0 - 1.0 / t as f64).powi(m as i32)
}

/// Squared norm of the orthogonal projection of `next` onto the span of
/// `prefix`, i.e. `ψᵀ (BᵀB)⁺ ψ` with `ψ = Bᵀ next`.
pub fn compute_lambda(prefix: &[BinaryTensor], next: &BinaryTensor) -> Result<f64> {
    if prefix.is_empty() {
        return Err(Error::InvalidArgument("prefix must not be empty".into()));
    }
    let k = prefix.len();
    let mut gram = DMatrix::zeros(k, k);
    let mut psi = DVector::zeros(k);
    for i in 0..k {
        gram[(i, i)] = prefix[i].t() as f64;
        for j in 0..i {
            let r = binary_inner_product(&prefix[i], &prefix[j])? as f64;
            gram[(i, j)] = r;
            gram[(j, i)] = r;
        }
        psi[i] = binary_inner_product(&prefix[i], next)? as f64;
    }
    let (pinv, _) = psd_pinv(&gram);
    let lambda = (psi.transpose() * pinv * &psi)[(0, 0)];
    Ok(lambda.clamp(0.0, next.t() as f64))
}

/// `‖W‖² Π_j (1 − 1/(t − λ_j))`. Fails when some `λ_j ≥ t`, where the factor
/// is undefined.
pub fn refined_bound(norm_sq: f64, t: usize, lambdas: &[f64]) -> Result<f64> {
    let t = t as f64;
    let mut bound = norm_sq;
    for (j, &lambda) in lambdas.iter().enumerate() {
        if !(0.0..t).contains(&lambda) {
            return Err(Error::InvalidArgument(format!(
                "lambda[{j}] = {lambda} outside [0, t)"
            )));
        }
        bound *= 1.0 - 1.0 / (t - lambda);
    }
    Ok(bound.max(0.0))
}

/// `1 − ‖Ŵ_j‖² / ‖W‖²` for `j = 0..=m`. A zero source tensor is exactly
/// represented from the start, so its curve is all ones.
pub fn energy_curve(w: &RealTensor, s: &Sketch) -> Vec<f64> {
    let source = frobenius_norm_sq(w);
    energy_from_history(source, &s.residual_norms_sq)
}

pub(crate) fn energy_from_history(source: f64, history: &[f64]) -> Vec<f64> {
    if source == 0.0 {
        return vec![1.0; history.len()];
    }
    history.iter().map(|r| 1.0 - r / source).collect()
}

/// Theoretical bounds next to measured errors, step by step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    /// Cumulative bound after each step `j` (error after `j + 1` terms).
    pub per_step_bound: Vec<f64>,
    /// Measured `‖Ŵ_{j+1}‖²`.
    pub per_step_actual: Vec<f64>,
    /// `λ_j` for each step of a refined sketch; `λ_0 = 0`. Empty for direct.
    pub lambdas: Vec<f64>,
}

impl BoundReport {
    /// Whether every measured error sits under its bound, with relative
    /// slack `rel` on the bound.
    pub fn holds(&self, rel: f64) -> bool {
        self.first_violation(rel).is_none()
    }

    pub fn first_violation(&self, rel: f64) -> Option<usize> {
        self.per_step_actual
            .iter()
            .zip(&self.per_step_bound)
            .position(|(a, b)| *a > b + rel * b.abs().max(f64::MIN_POSITIVE))
    }
}

/// Per-step `λ_j` for the sketch's basis (`λ_0 = 0`).
pub fn sketch_lambdas(s: &Sketch) -> Result<Vec<f64>> {
    let mut lambdas = Vec::with_capacity(s.m());
    for j in 0..s.m() {
        if j == 0 {
            lambdas.push(0.0);
        } else {
            lambdas.push(compute_lambda(&s.basis[..j], &s.basis[j])?);
        }
    }
    Ok(lambdas)
}

pub fn bound_report(s: &Sketch) -> Result<BoundReport> {
    let t = s.shape.t();
    let source = s.residual_norms_sq[0];
    let per_step_actual = s.residual_norms_sq[1..].to_vec();
    match s.method {
        Method::Direct => Ok(BoundReport {
            per_step_bound: (1..=s.m()).map(|j| direct_bound(source, t, j)).collect(),
            per_step_actual,
            lambdas: Vec::new(),
        }),
        Method::Refined => {
            let lambdas = sketch_lambdas(s)?;
            let per_step_bound = (1..=s.m())
                .map(|j| refined_bound(source, t, &lambdas[..j]))
                .collect::<Result<Vec<_>>>()?;
            Ok(BoundReport {
                per_step_bound,
                per_step_actual,
                lambdas,
            })
        }
    }
}

/// Storage and multiplication counts of a full-precision layer against its
/// `m`-term sketch, in the 32-bit float convention.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccountingReport {
    pub t: u64,
    pub n: u64,
    pub m: u64,
    pub spatial_s: u64,
    pub full_bits: u64,
    pub sketched_bits: u64,
    pub compression_factor: f64,
    pub full_fmuls: u64,
    pub sketched_fmuls: u64,
    pub fmul_factor: f64,
}

pub fn storage_and_flops(
    shape: Shape,
    n: usize,
    m: usize,
    spatial_s: usize,
) -> Result<AccountingReport> {
    if n == 0 || m == 0 || spatial_s == 0 {
        return Err(Error::InvalidArgument(
            "filter count, term count and spatial size must be positive".into(),
        ));
    }
    let (t, n, m, s) = (shape.t() as u64, n as u64, m as u64, spatial_s as u64);
    let per_filter = 32 * m + t * m;
    Ok(AccountingReport {
        t,
        n,
        m,
        spatial_s: s,
        full_bits: 32 * t * n,
        sketched_bits: per_filter * n,
        compression_factor: (32 * t) as f64 / per_filter as f64,
        full_fmuls: s * t * n,
        sketched_fmuls: s * m * n,
        fmul_factor: t as f64 / m as f64,
    })
}
