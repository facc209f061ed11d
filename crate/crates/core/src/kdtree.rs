//! Exact k-d tree over points of runtime dimension.

/// Points per leaf.
const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
pub(crate) struct Node {
    /// Range into `KdTree::order`.
    pub start: usize,
    pub end: usize,
    /// Child node indices; `None` for leaves.
    pub children: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct KdTree<'a> {
    data: &'a [f64],
    dim: usize,
    pub(crate) order: Vec<usize>,
    pub(crate) nodes: Vec<Node>,
    /// Per-node bounding boxes: `2 * dim` values (min then max).
    bounds: Vec<f64>,
}

impl<'a> KdTree<'a> {
    /// `data` holds `data.len() / dim` points stored row-wise.
    pub fn new(data: &'a [f64], dim: usize) -> Self {
        assert!(dim > 0 && data.len().is_multiple_of(dim));
        let n = data.len() / dim;
        let mut tree = KdTree {
            data,
            dim,
            order: (0..n).collect(),
            nodes: Vec::with_capacity(2 * n / LEAF_SIZE + 1),
            bounds: Vec::new(),
        };
        if n > 0 {
            tree.build(0, n);
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let dim = self.dim;
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for &i in &self.order[start..end] {
            let p = &self.data[i * dim..(i + 1) * dim];
            for k in 0..dim {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            start,
            end,
            children: None,
        });
        self.bounds.extend_from_slice(&lo);
        self.bounds.extend_from_slice(&hi);

        if end - start <= LEAF_SIZE {
            return id;
        }
        let axis = (0..dim)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap();
        if hi[axis] <= lo[axis] {
            // all points coincide
            return id;
        }
        let mid = start + (end - start) / 2;
        let data = self.data;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            data[a * dim + axis]
                .total_cmp(&data[b * dim + axis])
                .then(a.cmp(&b))
        });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id].children = Some((left, right));
        id
    }

    /// Squared distance from `q` to the bounding box of `node`.
    pub(crate) fn box_dist2(&self, node: usize, q: &[f64]) -> f64 {
        let b = &self.bounds[node * 2 * self.dim..(node + 1) * 2 * self.dim];
        let (lo, hi) = b.split_at(self.dim);
        let mut acc = 0.0;
        for k in 0..self.dim {
            let d = if q[k] < lo[k] {
                lo[k] - q[k]
            } else if q[k] > hi[k] {
                q[k] - hi[k]
            } else {
                0.0
            };
            acc += d * d;
        }
        acc
    }

    pub fn dist2(&self, i: usize, q: &[f64]) -> f64 {
        self.point(i)
            .iter()
            .zip(q)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// The `k` nearest points to `q` as `(squared distance, index)`, ascending.
    /// Includes `q` itself when it is a stored point.
    pub fn knn(&self, q: &[f64], k: usize) -> Vec<(f64, usize)> {
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        if k == 0 || self.is_empty() {
            return best;
        }
        self.knn_rec(0, q, k, &mut best);
        best
    }

    fn knn_rec(&self, node: usize, q: &[f64], k: usize, best: &mut Vec<(f64, usize)>) {
        let bound = if best.len() == k {
            best[k - 1].0
        } else {
            f64::INFINITY
        };
        if self.box_dist2(node, q) > bound {
            return;
        }
        match self.nodes[node].children {
            None => {
                let n = &self.nodes[node];
                for &i in &self.order[n.start..n.end] {
                    let d = self.dist2(i, q);
                    if best.len() < k || (d, i) < best[best.len() - 1] {
                        let pos = best.partition_point(|e| *e < (d, i));
                        best.insert(pos, (d, i));
                        best.truncate(k);
                    }
                }
            }
            Some((l, r)) => {
                let (first, second) = if self.box_dist2(l, q) <= self.box_dist2(r, q) {
                    (l, r)
                } else {
                    (r, l)
                };
                self.knn_rec(first, q, k, best);
                self.knn_rec(second, q, k, best);
            }
        }
    }

    /// Nearest stored point to `q`.
    pub fn nearest(&self, q: &[f64]) -> Option<(f64, usize)> {
        self.knn(q, 1).into_iter().next()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn brute_knn(data: &[f64], dim: usize, q: &[f64], k: usize) -> Vec<(f64, usize)> {
        let mut all: Vec<(f64, usize)> = (0..data.len() / dim)
            .map(|i| {
                let d = data[i * dim..(i + 1) * dim]
                    .iter()
                    .zip(q)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (d, i)
            })
            .collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        all.truncate(k);
        all
    }

    #[test]
    fn knn_matches_brute_force() {
        let mut rng = SeededRng::new(11);
        for dim in [1, 3, 4] {
            let data: Vec<f64> = (0..500 * dim).map(|_| rng.uniform(-5.0, 5.0)).collect();
            let tree = KdTree::new(&data, dim);
            for _ in 0..50 {
                let q: Vec<f64> = (0..dim).map(|_| rng.uniform(-6.0, 6.0)).collect();
                for k in [1, 5, 17] {
                    assert_eq!(tree.knn(&q, k), brute_knn(&data, dim, &q, k));
                }
            }
        }
    }

    #[test]
    fn duplicate_points_do_not_break_build() {
        let data = vec![1.0; 3 * 100];
        let tree = KdTree::new(&data, 3);
        assert_eq!(tree.knn(&[1.0, 1.0, 1.0], 3).len(), 3);
        assert_eq!(tree.nearest(&[0.0, 1.0, 1.0]).unwrap().0, 1.0);
    }

    #[test]
    fn empty_tree() {
        let tree = KdTree::new(&[], 2);
        assert!(tree.nearest(&[0.0, 0.0]).is_none());
    }
}
