use std::cmp::Ordering;
use std::collections::BinaryHeap;

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Candidate ordered by `(distance, index)`; the heap top is the worst.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Candidate {
    pub d2: f64,
    pub index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Bounded max-heap keeping the `k` best candidates.
pub(crate) struct KBest {
    k: usize,
    heap: BinaryHeap<Candidate>,
}

impl KBest {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    pub fn offer(&mut self, c: Candidate) {
        if self.heap.len() < self.k {
            self.heap.push(c);
        } else if let Some(&worst) = self.heap.peek() {
            if c < worst {
                self.heap.pop();
                self.heap.push(c);
            }
        }
    }

    fn full(&self) -> bool {
        self.heap.len() >= self.k
    }

    fn worst_d2(&self) -> f64 {
        self.heap.peek().map_or(f64::INFINITY, |c| c.d2)
    }

    pub fn into_sorted(self) -> Vec<Candidate> {
        self.heap.into_sorted_vec()
    }
}

struct BallNode {
    centroid: Vec<f64>,
    radius: f64,
    start: usize,
    end: usize,
    children: Option<(usize, usize)>,
}

/// Ball tree over row-major points with Euclidean metric.
pub(crate) struct BallTree {
    nodes: Vec<BallNode>,
    /// Point ids in tree order; every node owns a contiguous range.
    order: Vec<usize>,
}

impl BallTree {
    pub fn build(points: &[f64], dim: usize, leaf_size: usize) -> Self {
        let n = points.len() / dim;
        let mut tree = BallTree {
            nodes: Vec::new(),
            order: (0..n).collect(),
        };
        tree.build_node(points, dim, leaf_size.max(1), 0, n);
        tree
    }

    fn build_node(&mut self, points: &[f64], dim: usize, leaf_size: usize, start: usize, end: usize) -> usize {
        let ids = &self.order[start..end];
        let mut centroid = vec![0.0; dim];
        for &i in ids {
            for (c, x) in centroid.iter_mut().zip(&points[i * dim..(i + 1) * dim]) {
                *c += x;
            }
        }
        let count = ids.len() as f64;
        centroid.iter_mut().for_each(|c| *c /= count);
        let radius = ids
            .iter()
            .map(|&i| sq_dist(&centroid, &points[i * dim..(i + 1) * dim]))
            .fold(0.0, f64::max)
            .sqrt();

        let node_id = self.nodes.len();
        self.nodes.push(BallNode {
            centroid,
            radius,
            start,
            end,
            children: None,
        });
        if end - start <= leaf_size {
            return node_id;
        }

        // Split on the axis of largest extent at the median.
        let ids = &mut self.order[start..end];
        let mut best_axis = 0;
        let mut best_spread = -1.0;
        for axis in 0..dim {
            let (lo, hi) = ids.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                let v = points[i * dim + axis];
                (lo.min(v), hi.max(v))
            });
            if hi - lo > best_spread {
                best_spread = hi - lo;
                best_axis = axis;
            }
        }
        ids.sort_by(|&a, &b| {
            points[a * dim + best_axis]
                .total_cmp(&points[b * dim + best_axis])
                .then(a.cmp(&b))
        });
        let mid = start + (end - start) / 2;
        let left = self.build_node(points, dim, leaf_size, start, mid);
        let right = self.build_node(points, dim, leaf_size, mid, end);
        self.nodes[node_id].children = Some((left, right));
        node_id
    }

    pub fn knn(&self, points: &[f64], dim: usize, query: &[f64], k: usize, exclude: Option<usize>) -> Vec<Candidate> {
        let mut best = KBest::new(k);
        if k > 0 {
            self.search(0, points, dim, query, exclude, &mut best);
        }
        best.into_sorted()
    }

    fn lower_bound_sq(&self, node: usize, query: &[f64]) -> f64 {
        let n = &self.nodes[node];
        let d = sq_dist(query, &n.centroid).sqrt() - n.radius;
        if d <= 0.0 {
            0.0
        } else {
            // Shrink slightly so rounding can never prune an exact tie.
            (d * (1.0 - 1e-9)).powi(2)
        }
    }

    fn search(&self, node: usize, points: &[f64], dim: usize, query: &[f64], exclude: Option<usize>, best: &mut KBest) {
        if best.full() && self.lower_bound_sq(node, query) > best.worst_d2() {
            return;
        }
        let n = &self.nodes[node];
        match n.children {
            None => {
                for &i in &self.order[n.start..n.end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    best.offer(Candidate {
                        d2: sq_dist(query, &points[i * dim..(i + 1) * dim]),
                        index: i,
                    });
                }
            }
            Some((l, r)) => {
                let dl = sq_dist(query, &self.nodes[l].centroid);
                let dr = sq_dist(query, &self.nodes[r].centroid);
                let (first, second) = if dl <= dr { (l, r) } else { (r, l) };
                self.search(first, points, dim, query, exclude, best);
                self.search(second, points, dim, query, exclude, best);
            }
        }
    }
}
