//! Independent reference computations used by the integration tests.
//!
//! Nothing here calls into the sketching or tree code it is used to check:
//! everything works on plain `Vec<f64>` / sign vectors.

#![allow(dead_code)]

use netsketch::io::{generate_synthetic, Distribution};
use netsketch::{BinaryTensor, RealTensor, Shape};

pub fn gaussian(shape: Shape, n: usize, seed: u64) -> Vec<RealTensor> {
    generate_synthetic(shape, n, Distribution::Gaussian, seed).unwrap()
}

pub fn dense_signs(b: &BinaryTensor) -> Vec<f64> {
    (0..b.t())
        .map(|l| if b.is_positive(l) { 1.0 } else { -1.0 })
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Best single term `a·B` over all `2^t` sign patterns, with `a` optimal for
/// each pattern. Returns `(min error², argmin pattern as bools)`.
pub fn brute_force_one_term(w: &[f64]) -> (f64, Vec<bool>) {
    let t = w.len();
    assert!(t <= 20);
    let norm_sq: f64 = w.iter().map(|v| v * v).sum();
    let mut best = (f64::INFINITY, vec![]);
    for mask in 0u32..(1 << t) {
        let ip: f64 = (0..t)
            .map(|l| if mask >> l & 1 == 1 { w[l] } else { -w[l] })
            .sum();
        let err = norm_sq - ip * ip / t as f64;
        if err < best.0 {
            best = (err, (0..t).map(|l| mask >> l & 1 == 1).collect());
        }
    }
    best
}

/// Orthonormal basis of the span of `vectors` by modified Gram–Schmidt.
pub fn orthonormal_basis(vectors: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let scale = dot(v, v).sqrt();
        let mut u = v.clone();
        for _ in 0..2 {
            for e in &q {
                let c = dot(&u, e);
                for (x, y) in u.iter_mut().zip(e) {
                    *x -= c * y;
                }
            }
        }
        let norm = dot(&u, &u).sqrt();
        if norm > 1e-9 * scale.max(1.0) {
            q.push(u.iter().map(|x| x / norm).collect());
        }
    }
    q
}

/// `‖P b‖²` for the orthogonal projection `P` onto `span(prefix)`.
pub fn projection_norm_sq(prefix: &[Vec<f64>], b: &[f64]) -> f64 {
    orthonormal_basis(prefix)
        .iter()
        .map(|e| dot(e, b).powi(2))
        .sum()
}

pub fn rank(vectors: &[Vec<f64>]) -> usize {
    orthonormal_basis(vectors).len()
}

/// Every labelled spanning tree of `K_n` via Prüfer sequences; returns the
/// minimum total weight.
pub fn brute_force_mst_weight(weights: &[Vec<usize>]) -> usize {
    let n = weights.len();
    if n <= 1 {
        return 0;
    }
    if n == 2 {
        return weights[0][1];
    }
    let len = n - 2;
    let total = n.pow(len as u32);
    let mut best = usize::MAX;
    for code in 0..total {
        let mut seq = Vec::with_capacity(len);
        let mut c = code;
        for _ in 0..len {
            seq.push(c % n);
            c /= n;
        }
        let mut degree = vec![1; n];
        for &v in &seq {
            degree[v] += 1;
        }
        let mut weight = 0;
        for &v in &seq {
            let leaf = (0..n).find(|&u| degree[u] == 1).unwrap();
            weight += weights[leaf][v];
            degree[leaf] -= 1;
            degree[v] -= 1;
        }
        let rest: Vec<usize> = (0..n).filter(|&u| degree[u] == 1).collect();
        weight += weights[rest[0]][rest[1]];
        best = best.min(weight);
    }
    best
}

/// `min(h, t − h)` from the sign vectors directly.
pub fn oracle_distance(a: &BinaryTensor, b: &BinaryTensor) -> usize {
    let t = a.t();
    let h = (0..t)
        .filter(|&l| a.is_positive(l) != b.is_positive(l))
        .count();
    h.min(t - h)
}

/// Plain dense valid convolution of a `c×W×H` map with one `c×w×h` kernel.
pub fn dense_conv2d(
    map: &[f64],
    (c, mw, mh): (usize, usize, usize),
    kernel: &[f64],
    (kw, kh): (usize, usize),
    stride: usize,
) -> Vec<f64> {
    let ow = (mw - kw) / stride + 1;
    let oh = (mh - kh) / stride + 1;
    let mut out = Vec::with_capacity(ow * oh);
    for x in 0..ow {
        for y in 0..oh {
            let mut acc = 0.0;
            for ci in 0..c {
                for i in 0..kw {
                    for j in 0..kh {
                        acc += map[(ci * mw + x * stride + i) * mh + y * stride + j]
                            * kernel[(ci * kw + i) * kh + j];
                    }
                }
            }
            out.push(acc);
        }
    }
    out
}

/// `|a − b| ≤ rel · scale`.
pub fn within(a: f64, b: f64, rel: f64, scale: f64) -> bool {
    (a - b).abs() <= rel * scale
}
