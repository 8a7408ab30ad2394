//! Randomized kd-tree forest for approximate nearest-neighbor search.
//!
//! Each tree splits on a dimension drawn at random from the few
//! highest-variance dimensions of the node's points, at their mean. Queries
//! descend every tree, then keep expanding the most promising unexplored
//! branches across the forest until `checks` points have been examined.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use super::knn::{by_dist_then_index, sq_dist};
use crate::error::{Error, Result};
use crate::nn::Tensor2;
use crate::rng::{streams, RngStream};

/// Points sampled per node when estimating split statistics.
const SAMPLE_SIZE: usize = 100;
/// Number of top-variance dimensions the split dimension is drawn from.
const RAND_DIMS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KdTreeParams {
    pub trees: usize,
    pub leaf_size: usize,
    /// Points examined per query; 0 selects `max(32 k, n / 8)`.
    pub checks: usize,
}

impl Default for KdTreeParams {
    fn default() -> Self {
        Self {
            trees: 4,
            leaf_size: 8,
            checks: 0,
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
    order: Vec<usize>,
}

pub struct KdForest<'a> {
    points: &'a Tensor2,
    params: KdTreeParams,
    trees: Vec<Tree>,
}

struct Branch {
    bound: f64,
    tree: usize,
    node: usize,
}

impl PartialEq for Branch {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Branch {}
impl PartialOrd for Branch {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Branch {
    // Reversed so the std max-heap pops the smallest bound first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(other.tree.cmp(&self.tree))
            .then(other.node.cmp(&self.node))
    }
}

struct Candidate(usize, f64);

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        by_dist_then_index(&(self.0, self.1), &(other.0, other.1))
    }
}

struct Scratch {
    stamp: Vec<u32>,
    generation: u32,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Self {
            stamp: vec![0; n],
            generation: 0,
        }
    }

    fn next_query(&mut self) {
        self.generation = self.generation.wrapping_add(1);
        if self.generation == 0 {
            self.stamp.fill(0);
            self.generation = 1;
        }
    }

    /// Marks `i` visited; returns false if it already was.
    fn visit(&mut self, i: usize) -> bool {
        if self.stamp[i] == self.generation {
            false
        } else {
            self.stamp[i] = self.generation;
            true
        }
    }
}

impl<'a> KdForest<'a> {
    pub fn build(points: &'a Tensor2, params: KdTreeParams, seed: u64) -> Result<Self> {
        if params.trees == 0 || params.leaf_size == 0 {
            return Err(Error::Parameter(
                "kd-tree forest needs at least one tree and leaf size >= 1".into(),
            ));
        }
        let trees = (0..params.trees)
            .map(|t| {
                let mut rng = RngStream::new(seed, (streams::KDTREE << 32) | t as u64);
                build_tree(points, params.leaf_size, &mut rng)
            })
            .collect();
        Ok(Self {
            points,
            params,
            trees,
        })
    }

    fn budget(&self, k: usize) -> usize {
        if self.params.checks > 0 {
            self.params.checks
        } else {
            (32 * k).max(self.points.rows() / 8)
        }
    }

    /// Approximate `k` nearest rows of the point set to `q`, as
    /// `(index, squared distance)` ascending.
    pub fn search(&self, q: &[f64], k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
        let mut scratch = Scratch::new(self.points.rows());
        self.search_with(q, k, exclude, &mut scratch)
    }

    fn search_with(
        &self,
        q: &[f64],
        k: usize,
        exclude: Option<usize>,
        scratch: &mut Scratch,
    ) -> Vec<(usize, f64)> {
        scratch.next_query();
        if let Some(e) = exclude {
            scratch.visit(e);
        }
        let budget = self.budget(k);
        let mut checked = 0usize;
        let mut best: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        let mut branches = BinaryHeap::new();

        for t in 0..self.trees.len() {
            self.descend(t, 0, 0.0, q, k, scratch, &mut best, &mut branches, &mut checked);
        }
        while let Some(b) = branches.pop() {
            if checked >= budget && best.len() >= k {
                break;
            }
            self.descend(b.tree, b.node, b.bound, q, k, scratch, &mut best, &mut branches, &mut checked);
        }
        let mut out: Vec<(usize, f64)> = best.into_iter().map(|c| (c.0, c.1)).collect();
        out.sort_by(by_dist_then_index);
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn descend(
        &self,
        t: usize,
        mut node: usize,
        bound: f64,
        q: &[f64],
        k: usize,
        scratch: &mut Scratch,
        best: &mut BinaryHeap<Candidate>,
        branches: &mut BinaryHeap<Branch>,
        checked: &mut usize,
    ) {
        let tree = &self.trees[t];
        loop {
            match tree.nodes[node] {
                Node::Leaf { start, end } => {
                    for &i in &tree.order[start..end] {
                        if !scratch.visit(i) {
                            continue;
                        }
                        *checked += 1;
                        let d = sq_dist(q, self.points.row(i));
                        best.push(Candidate(i, d));
                        if best.len() > k {
                            best.pop();
                        }
                    }
                    return;
                }
                Node::Split { dim, value, left, right } => {
                    let diff = q[dim] - value;
                    let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                    branches.push(Branch {
                        bound: bound + diff * diff,
                        tree: t,
                        node: far,
                    });
                    node = near;
                }
            }
        }
    }

    /// Neighbor lists for every indexed point, excluding the point itself.
    pub fn search_all(&self, k: usize) -> Vec<Vec<(usize, f64)>> {
        let n = self.points.rows();
        (0..n)
            .into_par_iter()
            .map_init(
                || Scratch::new(n),
                |scratch, i| self.search_with(self.points.row(i), k, Some(i), scratch),
            )
            .collect()
    }
}

fn build_tree(points: &Tensor2, leaf_size: usize, rng: &mut RngStream) -> Tree {
    let mut order: Vec<usize> = (0..points.rows()).collect();
    let mut nodes = Vec::new();
    build_node(points, &mut order, 0, points.rows(), leaf_size, rng, &mut nodes);
    Tree { nodes, order }
}

fn build_node(
    points: &Tensor2,
    order: &mut [usize],
    start: usize,
    end: usize,
    leaf_size: usize,
    rng: &mut RngStream,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    if end - start <= leaf_size {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    nodes.push(Node::Leaf { start, end });

    let d = points.cols();
    let slice = &order[start..end];
    let sample = &slice[..slice.len().min(SAMPLE_SIZE)];
    let mut mean = vec![0.0; d];
    for &i in sample {
        for (m, v) in mean.iter_mut().zip(points.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= sample.len() as f64;
    }
    let mut var = vec![0.0; d];
    for &i in sample {
        for ((s, v), m) in var.iter_mut().zip(points.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let mut dims: Vec<usize> = (0..d).collect();
    dims.sort_by(|&a, &b| var[b].total_cmp(&var[a]).then(a.cmp(&b)));
    let dim = dims[rng.below(RAND_DIMS.min(d))];
    let mut value = mean[dim];

    let slice = &mut order[start..end];
    let mut split = partition(slice, |i| points.get(i, dim) < value);
    if split == 0 || split == slice.len() {
        let mid = slice.len() / 2;
        slice.select_nth_unstable_by(mid, |&a, &b| {
            points.get(a, dim).total_cmp(&points.get(b, dim)).then(a.cmp(&b))
        });
        value = points.get(slice[mid], dim);
        split = mid;
    }
    let left = build_node(points, order, start, start + split, leaf_size, rng, nodes);
    let right = build_node(points, order, start + split, end, leaf_size, rng, nodes);
    nodes[id] = Node::Split { dim, value, left, right };
    id
}

/// Stable-enough in-place partition; returns the number of items satisfying
/// `pred`, which end up at the front.
fn partition(items: &mut [usize], pred: impl Fn(usize) -> bool) -> usize {
    let mut next = 0;
    for i in 0..items.len() {
        if pred(items[i]) {
            items.swap(next, i);
            next += 1;
        }
    }
    next
}
