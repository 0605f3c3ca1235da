//! Static k-d tree answering radius and k-nearest queries.
//!
//! Query results are exact: a radius query returns precisely the indices with
//! `|p - c| < r`, and a k-nearest query returns the `k` smallest
//! `(|p - q|^2, index)` pairs in lexicographic order, so equal distances are
//! broken by ascending index.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::cloud::{PointCloud, Vec3};
use crate::error::{Error, Result};

const LEAF_SIZE: usize = 16;

/// Relative slack applied to box-distance pruning so rounding in the lower
/// bound can never discard a qualifying point.
const PRUNE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone)]
struct Node {
    lo: Vec3,
    hi: Vec3,
    kind: NodeKind,
}

#[derive(Debug, Clone)]
enum NodeKind {
    Leaf { start: usize, end: usize },
    Split { left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub struct NeighborIndex {
    points: Vec<Vec3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl NeighborIndex {
    pub fn build(points: &[Vec3]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("cannot index an empty point set".into()));
        }
        let mut index = Self {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1),
        };
        index.build_node(0, points.len());
        Ok(index)
    }

    pub fn from_cloud(cloud: &PointCloud) -> Result<Self> {
        Self::build(cloud.positions())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let (lo, hi) = self.order[start..end]
            .iter()
            .fold((self.points[self.order[start]], self.points[self.order[start]]), |(lo, hi), &i| {
                (lo.inf(&self.points[i]), hi.sup(&self.points[i]))
            });
        let id = self.nodes.len();
        self.nodes.push(Node {
            lo,
            hi,
            kind: NodeKind::Leaf { start, end },
        });
        if end - start <= LEAF_SIZE {
            return id;
        }

        let axis = (hi - lo).imax();
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis])
        });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id].kind = NodeKind::Split { left, right };
        id
    }

    fn box_dist2(node: &Node, q: &Vec3) -> f64 {
        (0..3)
            .map(|a| {
                let d = (node.lo[a] - q[a]).max(q[a] - node.hi[a]).max(0.0);
                d * d
            })
            .sum()
    }

    /// Indices `i` with `|p_i - center| < r`, ascending. `r = 0` yields an
    /// empty list; negative or non-finite radii are rejected.
    pub fn radius_neighbors(&self, center: &Vec3, r: f64) -> Result<Vec<usize>> {
        if !(r >= 0.0) || !r.is_finite() {
            return Err(Error::invalid(format!("radius must be non-negative, got {r}")));
        }
        let mut out = Vec::new();
        if r == 0.0 {
            return Ok(out);
        }
        let bound = r * r * (1.0 + PRUNE_SLACK);
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            if Self::box_dist2(node, center) > bound {
                continue;
            }
            match node.kind {
                NodeKind::Leaf { start, end } => out.extend(
                    self.order[start..end]
                        .iter()
                        .copied()
                        .filter(|&i| (self.points[i] - center).norm() < r),
                ),
                NodeKind::Split { left, right } => {
                    stack.push(left);
                    stack.push(right);
                }
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    /// The `k` nearest indices sorted by squared distance, then index.
    pub fn k_nearest(&self, query: &Vec3, k: usize) -> Result<Vec<usize>> {
        Ok(self
            .k_nearest_with_dist2(query, k)?
            .into_iter()
            .map(|(i, _)| i)
            .collect())
    }

    pub fn k_nearest_with_dist2(&self, query: &Vec3, k: usize) -> Result<Vec<(usize, f64)>> {
        if k == 0 || k > self.len() {
            return Err(Error::invalid(format!(
                "k = {k} outside 1..={}",
                self.len()
            )));
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            if heap.len() == k {
                let worst = heap.peek().map_or(f64::INFINITY, |c| c.dist2);
                if Self::box_dist2(node, query) > worst * (1.0 + PRUNE_SLACK) {
                    continue;
                }
            }
            match node.kind {
                NodeKind::Leaf { start, end } => {
                    for &i in &self.order[start..end] {
                        let cand = Candidate {
                            dist2: (self.points[i] - query).norm_squared(),
                            index: i,
                        };
                        if heap.len() < k {
                            heap.push(cand);
                        } else if cand < *heap.peek().expect("heap is full") {
                            heap.pop();
                            heap.push(cand);
                        }
                    }
                }
                NodeKind::Split { left, right } => {
                    // Visit the nearer child first.
                    let (near, far) = if Self::box_dist2(&self.nodes[left], query)
                        <= Self::box_dist2(&self.nodes[right], query)
                    {
                        (left, right)
                    } else {
                        (right, left)
                    };
                    stack.push(far);
                    stack.push(near);
                }
            }
        }
        let mut out = heap.into_vec();
        out.sort_unstable();
        Ok(out.into_iter().map(|c| (c.index, c.dist2)).collect())
    }

    /// Closest point index and its squared distance.
    pub fn nearest(&self, query: &Vec3) -> (usize, f64) {
        self.k_nearest_with_dist2(query, 1).expect("index is non-empty")[0]
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    dist2: f64,
    index: usize,
}

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
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

pub fn build_index(cloud: &PointCloud) -> Result<NeighborIndex> {
    NeighborIndex::from_cloud(cloud)
}
