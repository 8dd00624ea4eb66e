//! Exact k-nearest-neighbour index over latent coordinates.
//!
//! A balanced k-d tree (median splits, axes cycling with depth) over the
//! points present at build time, plus a small unindexed tail for points
//! inserted afterwards. Queries scan both, so results stay exact; the tail
//! is folded into the tree once it grows past a threshold.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const LEAF_SIZE: usize = 8;
const MIN_TAIL: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbour {
    pub id: usize,
    /// Euclidean distance in latent space.
    pub distance: f64,
}

#[derive(Clone, Debug)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug)]
pub struct KdTree {
    dim: usize,
    /// Row-major coordinates, indexed by point id.
    coords: Vec<f64>,
    /// Ids `0..indexed` live in the tree, the rest in the tail.
    indexed: usize,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

/// Candidate ordered by `(squared distance, id)`.
#[derive(Clone, Copy, Debug)]
struct Candidate {
    dist2: f64,
    id: usize,
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
            .then(self.id.cmp(&other.id))
    }
}

struct KBest {
    k: usize,
    heap: BinaryHeap<Candidate>,
}

impl KBest {
    fn offer(&mut self, c: Candidate) {
        if self.heap.len() < self.k {
            self.heap.push(c);
        } else if let Some(mut top) = self.heap.peek_mut() {
            if c < *top {
                *top = c;
            }
        }
    }

    fn worst(&self) -> f64 {
        if self.heap.len() < self.k {
            f64::INFINITY
        } else {
            self.heap.peek().map_or(f64::INFINITY, |c| c.dist2)
        }
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl KdTree {
    pub fn build(points: &[Vec<f64>]) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::Config("cannot index an empty point set".into()))?;
        let dim = first.len();
        if dim == 0 {
            return Err(Error::Config(
                "points must have at least one coordinate".into(),
            ));
        }
        let mut coords = Vec::with_capacity(points.len() * dim);
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::dimension(format!("node {i}"), dim, p.len()));
            }
            coords.extend_from_slice(p);
        }
        let mut tree = KdTree {
            dim,
            coords,
            indexed: 0,
            order: Vec::new(),
            nodes: Vec::new(),
        };
        tree.reindex();
        Ok(tree)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, id: usize) -> &[f64] {
        &self.coords[id * self.dim..(id + 1) * self.dim]
    }

    /// Appends a point with id `len()`.
    pub fn insert(&mut self, p: &[f64]) -> Result<usize> {
        if p.len() != self.dim {
            return Err(Error::dimension("inserted point", self.dim, p.len()));
        }
        let id = self.len();
        self.coords.extend_from_slice(p);
        if self.len() - self.indexed > MIN_TAIL.max(self.indexed / 4) {
            self.reindex();
        }
        Ok(id)
    }

    fn reindex(&mut self) {
        self.indexed = self.len();
        self.order = (0..self.indexed).collect();
        self.nodes.clear();
        let mut order = std::mem::take(&mut self.order);
        self.build_node(&mut order, 0, 0);
        self.order = order;
    }

    fn build_node(&mut self, order: &mut [usize], offset: usize, depth: usize) -> usize {
        let slot = self.nodes.len();
        if order.len() <= LEAF_SIZE {
            self.nodes.push(Node::Leaf {
                start: offset,
                end: offset + order.len(),
            });
            return slot;
        }
        let axis = depth % self.dim;
        let mid = order.len() / 2;
        let coords = &self.coords;
        let dim = self.dim;
        order.select_nth_unstable_by(mid, |&a, &b| {
            coords[a * dim + axis]
                .total_cmp(&coords[b * dim + axis])
                .then(a.cmp(&b))
        });
        let value = self.coords[order[mid] * dim + axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let (lo, hi) = order.split_at_mut(mid);
        let left = self.build_node(lo, offset, depth + 1);
        let right = self.build_node(hi, offset + mid, depth + 1);
        self.nodes[slot] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        slot
    }

    /// The `k` nearest points, ascending by distance with ties broken by lower id.
    pub fn knn(&self, query: &[f64], k: usize) -> Result<Vec<Neighbour>> {
        if query.len() != self.dim {
            return Err(Error::dimension("query", self.dim, query.len()));
        }
        if k == 0 || k > self.len() {
            return Err(Error::Config(format!(
                "k = {k} must be in 1..={} (number of indexed points)",
                self.len()
            )));
        }
        let mut best = KBest {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        };
        if self.indexed > 0 {
            self.search(0, query, &mut best);
        }
        for id in self.indexed..self.len() {
            best.offer(Candidate {
                dist2: squared_distance(query, self.point(id)),
                id,
            });
        }
        Ok(best
            .heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| Neighbour {
                id: c.id,
                distance: c.dist2.sqrt(),
            })
            .collect())
    }

    fn search(&self, node: usize, query: &[f64], best: &mut KBest) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &id in &self.order[start..end] {
                    best.offer(Candidate {
                        dist2: squared_distance(query, self.point(id)),
                        id,
                    });
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis] - value;
                let (near, far) = if diff <= 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, query, best);
                if diff * diff <= best.worst() {
                    self.search(far, query, best);
                }
            }
        }
    }
}
