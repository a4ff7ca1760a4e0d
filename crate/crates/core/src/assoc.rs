//! Associative evaluation of many binary convolutions over one window.
//!
//! Given `y_p = X ∗ B_p` for a parent tensor, a child's result follows from
//! the positions where the two tensors disagree:
//!
//! ```text
//! r ≥ 0:  X ∗ B_c = y_p + 2 · (X ∗ (B_p ⊻ B_c))
//! r < 0:  X ∗ B_c = 2 · (X ∗ (¬B_p ⊻ B_c)) − y_p
//! ```
//!
//! where `x ⊻ y = (y − x) / 2` is the ternary combine and `r = ⟨B_p, B_c⟩`.
//! The second form is written here with the sign that makes it an identity;
//! both touch `(t − |r|)/2` entries of `X`. A [`DependencyTree`] fixes which
//! parent each result is derived from; the minimum spanning tree under
//! [`distance`] minimises the total FADD count.
//!
//! Counting conventions ([`OpCounter`]):
//! * a dense binary convolution costs `t` FADDs;
//! * a ternary convolution costs one FADD per nonzero and `t` selects;
//! * folding in the parent result costs one FADD and one doubling.

use std::collections::VecDeque;
use std::ops::{Add, AddAssign};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{binary_inner_product, BinaryTensor, RealTensor, Shape};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounter {
    pub fadds: u64,
    pub fmuls: u64,
    pub ternary_selects: u64,
    pub doublings: u64,
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn merge(&mut self, other: &OpCounter) {
        *self += *other;
    }
}

impl AddAssign for OpCounter {
    fn add_assign(&mut self, rhs: OpCounter) {
        self.fadds += rhs.fadds;
        self.fmuls += rhs.fmuls;
        self.ternary_selects += rhs.ternary_selects;
        self.doublings += rhs.doublings;
    }
}

impl Add for OpCounter {
    type Output = OpCounter;

    fn add(mut self, rhs: OpCounter) -> OpCounter {
        self += rhs;
        self
    }
}

impl std::iter::Sum for OpCounter {
    fn sum<I: Iterator<Item = OpCounter>>(iter: I) -> OpCounter {
        iter.fold(OpCounter::default(), Add::add)
    }
}

/// Sparse `{−1, 0, +1}` tensor; only nonzeros are stored, by ascending index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TernaryTensor {
    shape: Shape,
    entries: Vec<(usize, i8)>,
}

impl TernaryTensor {
    pub fn new(shape: Shape, entries: Vec<(usize, i8)>) -> Result<Self> {
        let t = shape.t();
        let ordered = entries.windows(2).all(|p| p[0].0 < p[1].0);
        let in_range = entries.iter().all(|&(i, s)| i < t && (s == 1 || s == -1));
        if !ordered || !in_range {
            return Err(Error::InvalidArgument(
                "ternary entries must be strictly increasing in [0, t) with sign ±1".into(),
            ));
        }
        Ok(TernaryTensor { shape, entries })
    }

    pub fn empty(shape: Shape) -> Self {
        TernaryTensor {
            shape,
            entries: Vec::new(),
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[(usize, i8)] {
        &self.entries
    }
}

/// `(b1 − b0) / 2` elementwise: `−1` where `(b0, b1) = (+1, −1)`, `+1` where
/// `(−1, +1)`, zero where they agree.
pub fn tern_combine(b0: &BinaryTensor, b1: &BinaryTensor) -> Result<TernaryTensor> {
    b0.shape().ensure_same(&b1.shape())?;
    let mut entries = Vec::with_capacity(b0.hamming(b1)?);
    for (wi, (x, y)) in b0.words().iter().zip(b1.words()).enumerate() {
        let mut diff = x ^ y;
        while diff != 0 {
            let bit = diff.trailing_zeros() as usize;
            let sign = if (y >> bit) & 1 == 1 { 1 } else { -1 };
            entries.push((wi * 64 + bit, sign));
            diff &= diff - 1;
        }
    }
    Ok(TernaryTensor {
        shape: b0.shape(),
        entries,
    })
}

/// `Σ sign · X[index]` over the nonzeros of `tern`.
pub fn ternary_conv(x: &RealTensor, tern: &TernaryTensor, counter: &mut OpCounter) -> f64 {
    debug_assert_eq!(x.shape(), tern.shape);
    let data = x.data();
    let mut acc = 0.0;
    for &(i, s) in &tern.entries {
        if s > 0 {
            acc += data[i];
        } else {
            acc -= data[i];
        }
    }
    counter.ternary_selects += x.shape().t() as u64;
    counter.fadds += tern.nnz() as u64;
    acc
}

/// Dense `X ∗ B`, costing `t` FADDs.
pub fn binary_conv(x: &RealTensor, b: &BinaryTensor, counter: &mut OpCounter) -> f64 {
    counter.fadds += x.shape().t() as u64;
    let data = x.data();
    let mut acc = 0.0;
    for (l, v) in data.iter().enumerate() {
        if b.is_positive(l) {
            acc += v;
        } else {
            acc -= v;
        }
    }
    acc
}

/// `min((t + r)/2, (t − r)/2)`, the number of entries either form of the
/// update has to touch.
pub fn distance(b0: &BinaryTensor, b1: &BinaryTensor) -> Result<usize> {
    let hamming = b0.hamming(b1)?;
    Ok(hamming.min(b0.t() - hamming))
}

/// Which update identity an edge uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Equation {
    /// `y_c = y_p + 2·(X ∗ (B_p ⊻ B_c))`, used when `r ≥ 0`.
    Agree,
    /// `y_c = 2·(X ∗ (¬B_p ⊻ B_c)) − y_p`, used when `r < 0`.
    Flip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeEdge {
    pub parent: usize,
    pub r: i64,
    pub equation: Equation,
    /// Combine of the (possibly negated) parent with this node's tensor.
    pub ternary: TernaryTensor,
}

impl TreeEdge {
    fn between(parent: usize, b_parent: &BinaryTensor, b_child: &BinaryTensor) -> Result<Self> {
        let r = binary_inner_product(b_parent, b_child)?;
        let (equation, ternary) = if r >= 0 {
            (Equation::Agree, tern_combine(b_parent, b_child)?)
        } else {
            (Equation::Flip, tern_combine(&b_parent.negated(), b_child)?)
        };
        Ok(TreeEdge {
            parent,
            r,
            equation,
            ternary,
        })
    }

    /// FADDs spent deriving the child: `(t − |r|)/2 + 1`.
    pub fn fadd_cost(&self) -> u64 {
        self.ternary.nnz() as u64 + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub key: usize,
    /// `None` only at the root.
    pub edge: Option<TreeEdge>,
}

/// Rooted spanning tree over tensor indices `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct DependencyTree {
    root: usize,
    t: usize,
    nodes: Vec<TreeNode>,
    children: Vec<Vec<usize>>,
}

impl DependencyTree {
    /// Builds a tree from a parent array, precomputing each edge's ternary
    /// tensor and equation. Exactly one entry must be `None`.
    pub fn from_parents(tensors: &[BinaryTensor], parents: &[Option<usize>]) -> Result<Self> {
        let n = tensors.len();
        if n == 0 {
            return Err(Error::InvalidArgument("need at least one tensor".into()));
        }
        if parents.len() != n {
            return Err(Error::TreeMismatch { expected: n });
        }
        let shape = tensors[0].shape();
        for b in tensors {
            shape.ensure_same(&b.shape())?;
        }
        let roots: Vec<usize> = (0..n).filter(|&i| parents[i].is_none()).collect();
        if roots.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "expected exactly one root, found {}",
                roots.len()
            )));
        }
        let root = roots[0];
        let mut children = vec![Vec::new(); n];
        for (child, parent) in parents.iter().enumerate() {
            if let Some(p) = *parent {
                if p >= n || p == child {
                    return Err(Error::InvalidArgument(format!(
                        "bad parent {p} for node {child}"
                    )));
                }
                children[p].push(child);
            }
        }
        // Connectivity from the root (n − 1 edges + connected ⇒ tree).
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([root]);
        seen[root] = true;
        let mut reached = 1;
        while let Some(v) = queue.pop_front() {
            for &c in &children[v] {
                if !seen[c] {
                    seen[c] = true;
                    reached += 1;
                    queue.push_back(c);
                }
            }
        }
        if reached != n {
            return Err(Error::InvalidArgument(
                "parent array contains a cycle".into(),
            ));
        }
        let nodes = (0..n)
            .map(|key| {
                let edge = parents[key]
                    .map(|p| TreeEdge::between(p, &tensors[p], &tensors[key]))
                    .transpose()?;
                Ok(TreeNode { key, edge })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DependencyTree {
            root,
            t: shape.t(),
            nodes,
            children,
        })
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, key: usize) -> &TreeNode {
        &self.nodes[key]
    }

    pub fn parent(&self, key: usize) -> Option<usize> {
        self.nodes[key].edge.as_ref().map(|e| e.parent)
    }

    /// Children of `key`, ascending.
    pub fn children(&self, key: usize) -> &[usize] {
        &self.children[key]
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, &TreeEdge)> {
        self.nodes
            .iter()
            .filter_map(|n| n.edge.as_ref().map(|e| (n.key, e)))
    }

    /// Sum of edge distances.
    pub fn total_weight(&self) -> u64 {
        self.edges().map(|(_, e)| e.ternary.nnz() as u64).sum()
    }

    /// FADDs for one window: `t` for the root plus `(t − |r|)/2 + 1` per edge.
    pub fn fadd_cost(&self) -> u64 {
        self.t as u64 + self.edges().map(|(_, e)| e.fadd_cost()).sum::<u64>()
    }

    /// Depth-first preorder from the root, children in ascending order.
    pub fn dfs_order(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.len());
        let mut stack = vec![self.root];
        while let Some(v) = stack.pop() {
            order.push(v);
            stack.extend(self.children[v].iter().rev());
        }
        order
    }
}

fn distance_matrix(tensors: &[BinaryTensor]) -> Result<Vec<Vec<usize>>> {
    let n = tensors.len();
    let mut d = vec![vec![0; n]; n];
    for i in 0..n {
        for j in 0..i {
            let v = distance(&tensors[i], &tensors[j])?;
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    Ok(d)
}

/// Minimum spanning tree under [`distance`], by Prim's algorithm on the
/// complete graph, rooted at tensor 0.
///
/// Among equal-weight frontier edges the lowest `(parent, child)` pair is
/// taken, so the result is reproducible.
pub fn build_mst(tensors: &[BinaryTensor]) -> Result<DependencyTree> {
    if tensors.is_empty() {
        return Err(Error::InvalidArgument("need at least one tensor".into()));
    }
    let d = distance_matrix(tensors)?;
    DependencyTree::from_parents(tensors, &prim_parents(&d))
}

/// Prim's algorithm on a dense symmetric weight matrix, rooted at vertex 0.
/// Returns the parent of every vertex (`None` for the root).
pub fn prim_parents(weights: &[Vec<usize>]) -> Vec<Option<usize>> {
    let n = weights.len();
    let mut parents: Vec<Option<usize>> = vec![None; n];
    if n == 0 {
        return parents;
    }
    let mut in_tree = vec![false; n];
    let mut key = vec![usize::MAX; n];
    in_tree[0] = true;
    for v in 1..n {
        key[v] = weights[0][v];
        parents[v] = Some(0);
    }
    for _ in 1..n {
        let next = (0..n)
            .filter(|&v| !in_tree[v])
            .min_by_key(|&v| (key[v], parents[v], v))
            .expect("frontier is nonempty until all nodes are added");
        in_tree[next] = true;
        for u in 0..n {
            if in_tree[u] {
                continue;
            }
            let w = weights[next][u];
            if w < key[u] || (w == key[u] && Some(next) < parents[u]) {
                key[u] = w;
                parents[u] = Some(next);
            }
        }
    }
    parents
}

/// Uniformly random labelled spanning tree (via a random Prüfer sequence),
/// rooted at tensor 0. Deterministic for a given seed.
pub fn build_random_tree(tensors: &[BinaryTensor], seed: u64) -> Result<DependencyTree> {
    let n = tensors.len();
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one tensor".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prufer: Vec<usize> = (0..n.saturating_sub(2))
        .map(|_| rng.random_range(0..n))
        .collect();
    let adjacency = prufer_to_adjacency(n, &prufer);
    DependencyTree::from_parents(tensors, &orient(&adjacency, 0))
}

fn prufer_to_adjacency(n: usize, prufer: &[usize]) -> Vec<Vec<usize>> {
    let mut adjacency = vec![Vec::new(); n];
    if n < 2 {
        return adjacency;
    }
    let mut degree = vec![1usize; n];
    for &v in prufer {
        degree[v] += 1;
    }
    let link = |a: usize, b: usize, adj: &mut Vec<Vec<usize>>| {
        adj[a].push(b);
        adj[b].push(a);
    };
    for &v in prufer {
        let leaf = (0..n)
            .find(|&u| degree[u] == 1)
            .expect("a leaf always exists");
        link(leaf, v, &mut adjacency);
        degree[leaf] -= 1;
        degree[v] -= 1;
    }
    let last: Vec<usize> = (0..n).filter(|&u| degree[u] == 1).collect();
    link(last[0], last[1], &mut adjacency);
    adjacency
}

fn orient(adjacency: &[Vec<usize>], root: usize) -> Vec<Option<usize>> {
    let mut parents = vec![None; adjacency.len()];
    let mut seen = vec![false; adjacency.len()];
    let mut queue = VecDeque::from([root]);
    seen[root] = true;
    while let Some(v) = queue.pop_front() {
        for &u in &adjacency[v] {
            if !seen[u] {
                seen[u] = true;
                parents[u] = Some(v);
                queue.push_back(u);
            }
        }
    }
    parents
}

/// Derives `X ∗ B_node` from the parent's result `s`.
pub fn assoc_conv_step(s: f64, x: &RealTensor, edge: &TreeEdge, counter: &mut OpCounter) -> f64 {
    let partial = ternary_conv(x, &edge.ternary, counter);
    counter.fadds += 1;
    counter.doublings += 1;
    match edge.equation {
        Equation::Agree => s + 2.0 * partial,
        Equation::Flip => 2.0 * partial - s,
    }
}

/// All `X ∗ B_j` via one direct convolution at the root and tree updates for
/// everything else, visited depth first.
pub fn associative_convolve_all(
    x: &RealTensor,
    tensors: &[BinaryTensor],
    tree: &DependencyTree,
    counter: &mut OpCounter,
) -> Result<Vec<f64>> {
    if tree.len() != tensors.len() {
        return Err(Error::TreeMismatch {
            expected: tensors.len(),
        });
    }
    if let Some(b) = tensors.first() {
        x.shape().ensure_same(&b.shape())?;
    }
    let mut results = vec![0.0; tensors.len()];
    for key in tree.dfs_order() {
        results[key] = match &tree.node(key).edge {
            None => binary_conv(x, &tensors[key], counter),
            Some(edge) => assoc_conv_step(results[edge.parent], x, edge, counter),
        };
    }
    Ok(results)
}

/// All `X ∗ B_j` by dense signed accumulation.
pub fn direct_convolve_all(
    x: &RealTensor,
    tensors: &[BinaryTensor],
    counter: &mut OpCounter,
) -> Result<Vec<f64>> {
    tensors
        .iter()
        .map(|b| {
            x.shape().ensure_same(&b.shape())?;
            Ok(binary_conv(x, b, counter))
        })
        .collect()
}
