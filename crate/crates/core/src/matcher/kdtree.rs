//! Exact k-nearest-neighbor search.
//!
//! Neighbors are ordered by `(squared distance, point index)`, so equidistant
//! candidates resolve to the lower index and results never depend on tree
//! shape. Squared distances are accumulated coordinate by coordinate in the
//! same order in both the tree and the brute-force path, which makes the two
//! bit-identical.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::scalar::Scalar;

const LEAF_SIZE: usize = 16;

/// A candidate neighbor: squared distance and point index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor<F> {
    pub dist2: F,
    pub index: usize,
}

impl<F: Scalar> Neighbor<F> {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .partial_cmp(&other.dist2)
            .unwrap_or(Ordering::Equal)
            .then(self.index.cmp(&other.index))
    }
}

struct HeapItem<F>(Neighbor<F>);

impl<F: Scalar> PartialEq for HeapItem<F> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<F: Scalar> Eq for HeapItem<F> {}
impl<F: Scalar> PartialOrd for HeapItem<F> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<F: Scalar> Ord for HeapItem<F> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.key_cmp(&other.0)
    }
}

/// Squared Euclidean distance, summed in coordinate order.
#[inline]
pub fn squared_distance<F: Scalar>(a: &[F], b: &[F]) -> F {
    let mut acc = F::zero();
    for (x, y) in a.iter().zip(b) {
        let d = *x - *y;
        acc = acc + d * d;
    }
    acc
}

/// Point set in row-major layout, indexed `0..len`.
#[derive(Debug, Clone)]
pub struct PointSet<F> {
    dim: usize,
    coords: Vec<F>,
    /// Caller-facing identifier of each point (e.g. the panel unit index).
    ids: Vec<usize>,
}

impl<F: Scalar> PointSet<F> {
    pub fn new(dim: usize, coords: Vec<F>, ids: Vec<usize>) -> Self {
        assert_eq!(coords.len(), dim * ids.len(), "coordinate buffer shape");
        Self { dim, coords, ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, k: usize) -> &[F] {
        &self.coords[k * self.dim..(k + 1) * self.dim]
    }

    pub fn id(&self, k: usize) -> usize {
        self.ids[k]
    }
}

/// k nearest neighbors by exhaustive scan. `accept` filters candidate ids.
pub fn brute_force_knn<F: Scalar>(
    points: &PointSet<F>,
    query: &[F],
    k: usize,
    accept: impl Fn(usize) -> bool,
) -> Vec<Neighbor<F>> {
    let mut all: Vec<Neighbor<F>> = (0..points.len())
        .filter(|&p| accept(points.id(p)))
        .map(|p| Neighbor {
            dist2: squared_distance(points.point(p), query),
            index: points.id(p),
        })
        .collect();
    all.sort_by(Neighbor::key_cmp);
    all.truncate(k);
    all
}

enum Node<F> {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: F,
        left: Box<Node<F>>,
        right: Box<Node<F>>,
    },
}

/// Static k-d tree over a [`PointSet`].
pub struct KdTree<F> {
    points: PointSet<F>,
    /// Permutation of point slots; leaves own contiguous ranges.
    order: Vec<usize>,
    root: Node<F>,
}

impl<F: Scalar> KdTree<F> {
    pub fn build(points: PointSet<F>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let root = Self::build_node(&points, &mut order, 0, points.len());
        Self { points, order, root }
    }

    fn build_node(points: &PointSet<F>, order: &mut [usize], start: usize, end: usize) -> Node<F> {
        if end - start <= LEAF_SIZE {
            return Node::Leaf { start, end };
        }
        // split on the axis with the widest spread
        let dim = points.dim();
        let mut axis = 0;
        let mut best = F::neg_infinity();
        for a in 0..dim {
            let (mut lo, mut hi) = (F::infinity(), F::neg_infinity());
            for &p in &order[start..end] {
                let v = points.point(p)[a];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > best {
                best = hi - lo;
                axis = a;
            }
        }
        if best <= F::zero() {
            return Node::Leaf { start, end };
        }
        let mid = start + (end - start) / 2;
        order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points.point(a)[axis]
                .partial_cmp(&points.point(b)[axis])
                .unwrap_or(Ordering::Equal)
        });
        let value = points.point(order[mid])[axis];
        let left = Self::build_node(points, order, start, mid);
        let right = Self::build_node(points, order, mid, end);
        Node::Split {
            axis,
            value,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn points(&self) -> &PointSet<F> {
        &self.points
    }

    /// k nearest accepted neighbors of `query`, sorted by distance then id.
    pub fn knn(&self, query: &[F], k: usize, accept: impl Fn(usize) -> bool) -> Vec<Neighbor<F>> {
        if k == 0 {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(&self.root, query, k, &accept, &mut heap);
        let mut out: Vec<Neighbor<F>> = heap.into_iter().map(|h| h.0).collect();
        out.sort_by(Neighbor::key_cmp);
        out
    }

    fn search(
        &self,
        node: &Node<F>,
        query: &[F],
        k: usize,
        accept: &impl Fn(usize) -> bool,
        heap: &mut BinaryHeap<HeapItem<F>>,
    ) {
        match node {
            Node::Leaf { start, end } => {
                for &p in &self.order[*start..*end] {
                    let id = self.points.id(p);
                    if !accept(id) {
                        continue;
                    }
                    let cand = Neighbor {
                        dist2: squared_distance(self.points.point(p), query),
                        index: id,
                    };
                    if heap.len() < k {
                        heap.push(HeapItem(cand));
                    } else if let Some(worst) = heap.peek() {
                        if cand.key_cmp(&worst.0) == Ordering::Less {
                            heap.pop();
                            heap.push(HeapItem(cand));
                        }
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[*axis] - *value;
                let (near, far) = if diff < F::zero() { (left, right) } else { (right, left) };
                self.search(near, query, k, accept, heap);
                // A far-side point can only win if it is no farther than the
                // current worst, so equality must still be explored.
                let plane = diff * diff;
                let explore = heap.len() < k || heap.peek().is_some_and(|w| plane <= w.0.dist2);
                if explore {
                    self.search(far, query, k, accept, heap);
                }
            }
        }
    }
}
