//! HDBSCAN over Euclidean points of any dimension.
//!
//! Core distances come from exact k-nearest-neighbour queries; the minimum
//! spanning tree of the mutual-reachability graph is built with Borůvka's
//! algorithm on a k-d tree, then turned into a single-linkage hierarchy,
//! condensed by minimum cluster size, and flattened with excess-of-mass
//! selection.

use crate::kdtree::KdTree;

/// Label of points that belong to no cluster.
pub const NOISE: i32 = -1;

/// Merges whose distance is below this are treated as simultaneous.
const MIN_MERGE_DISTANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HdbscanParams {
    pub min_samples: usize,
    pub min_cluster_size: usize,
}

impl Default for HdbscanParams {
    fn default() -> Self {
        Self {
            min_samples: 1,
            min_cluster_size: 300,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MstEdge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

/// One merge of the single-linkage dendrogram. Children below `n` are
/// points; child `n + k` is the cluster created by merge `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CondensedEdge {
    pub parent: usize,
    pub child: usize,
    pub lambda: f64,
    pub size: usize,
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Squared distance to the `min_samples`-th nearest neighbour, the point
/// itself counting as the first. Zero for `min_samples <= 1`.
fn core_distances2(tree: &KdTree, min_samples: usize) -> Vec<f64> {
    let n = tree.len();
    if min_samples <= 1 {
        return vec![0.0; n];
    }
    let k = min_samples.min(n);
    (0..n)
        .map(|i| tree.knn(tree.point(i), k).last().map_or(0.0, |e| e.0))
        .collect()
}

const NO_COMPONENT: usize = usize::MAX;

struct Boruvka<'t, 'a> {
    tree: &'t KdTree<'a>,
    core2: Vec<f64>,
    node_min_core2: Vec<f64>,
    node_comp: Vec<usize>,
    comp: Vec<usize>,
}

impl Boruvka<'_, '_> {
    fn fill_node_min_core(&mut self, node: usize) -> f64 {
        let value = match self.tree.nodes[node].children {
            None => {
                let n = &self.tree.nodes[node];
                self.tree.order[n.start..n.end]
                    .iter()
                    .map(|&i| self.core2[i])
                    .fold(f64::INFINITY, f64::min)
            }
            Some((l, r)) => self.fill_node_min_core(l).min(self.fill_node_min_core(r)),
        };
        self.node_min_core2[node] = value;
        value
    }

    fn fill_node_comp(&mut self, node: usize) -> usize {
        let value = match self.tree.nodes[node].children {
            None => {
                let n = &self.tree.nodes[node];
                let ids = &self.tree.order[n.start..n.end];
                let first = self.comp[ids[0]];
                if ids.iter().all(|&i| self.comp[i] == first) {
                    first
                } else {
                    NO_COMPONENT
                }
            }
            Some((l, r)) => {
                let (a, b) = (self.fill_node_comp(l), self.fill_node_comp(r));
                if a == b {
                    a
                } else {
                    NO_COMPONENT
                }
            }
        };
        self.node_comp[node] = value;
        value
    }

    /// Nearest point outside `i`'s component under mutual reachability,
    /// improving `best = (squared weight, other point)`.
    fn search(&self, node: usize, i: usize, best: &mut (f64, usize)) {
        let c = self.comp[i];
        if self.node_comp[node] == c {
            return;
        }
        let q = self.tree.point(i);
        let bound = self
            .tree
            .box_dist2(node, q)
            .max(self.core2[i])
            .max(self.node_min_core2[node]);
        if bound >= best.0 {
            return;
        }
        match self.tree.nodes[node].children {
            None => {
                let n = &self.tree.nodes[node];
                for &j in &self.tree.order[n.start..n.end] {
                    if self.comp[j] == c {
                        continue;
                    }
                    let w = self.tree.dist2(j, q).max(self.core2[i]).max(self.core2[j]);
                    if w < best.0 {
                        *best = (w, j);
                    }
                }
            }
            Some((l, r)) => {
                let (first, second) = if self.tree.box_dist2(l, q) <= self.tree.box_dist2(r, q) {
                    (l, r)
                } else {
                    (r, l)
                };
                self.search(first, i, best);
                self.search(second, i, best);
            }
        }
    }
}

/// Minimum spanning tree of the mutual-reachability graph of `data`
/// (`dim`-dimensional rows). Edges are sorted by weight.
pub fn mutual_reachability_mst(data: &[f64], dim: usize, min_samples: usize) -> Vec<MstEdge> {
    let tree = KdTree::new(data, dim);
    let n = tree.len();
    if n < 2 {
        return Vec::new();
    }
    let mut state = Boruvka {
        core2: core_distances2(&tree, min_samples),
        node_min_core2: vec![0.0; tree.nodes.len()],
        node_comp: vec![NO_COMPONENT; tree.nodes.len()],
        comp: (0..n).collect(),
        tree: &tree,
    };
    state.fill_node_min_core(0);

    let mut uf = UnionFind::new(n);
    let mut edges: Vec<MstEdge> = Vec::with_capacity(n - 1);
    let mut comp_best: Vec<(f64, usize, usize)> = vec![(f64::INFINITY, 0, 0); n];
    while edges.len() < n - 1 {
        for i in 0..n {
            state.comp[i] = uf.find(i);
        }
        state.fill_node_comp(0);
        for e in comp_best.iter_mut() {
            *e = (f64::INFINITY, 0, 0);
        }
        for &i in &tree.order {
            let c = state.comp[i];
            let mut best = (comp_best[c].0, usize::MAX);
            state.search(0, i, &mut best);
            if best.1 != usize::MAX {
                comp_best[c] = (best.0, i, best.1);
            }
        }
        let mut roots: Vec<usize> = (0..n).filter(|&i| state.comp[i] == i).collect();
        roots.sort_by(|&x, &y| comp_best[x].0.total_cmp(&comp_best[y].0).then(x.cmp(&y)));
        for c in roots {
            let (w2, a, b) = comp_best[c];
            if w2.is_finite() && uf.union(a, b) {
                edges.push(MstEdge {
                    a: a.min(b),
                    b: a.max(b),
                    weight: w2.sqrt(),
                });
            }
        }
    }
    edges.sort_by(|x, y| {
        x.weight
            .total_cmp(&y.weight)
            .then(x.a.cmp(&y.a))
            .then(x.b.cmp(&y.b))
    });
    edges
}

/// Single-linkage dendrogram from MST edges sorted by weight.
pub fn linkage_from_mst(n: usize, mst: &[MstEdge]) -> Vec<Merge> {
    let mut uf = UnionFind::new(2 * n);
    // representative point -> current cluster label
    let mut label: Vec<usize> = (0..2 * n).collect();
    let mut size = vec![1usize; 2 * n];
    let mut merges = Vec::with_capacity(mst.len());
    for (k, e) in mst.iter().enumerate() {
        let (ra, rb) = (uf.find(e.a), uf.find(e.b));
        let (la, lb) = (label[ra], label[rb]);
        let new = n + k;
        let s = size[la] + size[lb];
        size[new] = s;
        merges.push(Merge {
            left: la.min(lb),
            right: la.max(lb),
            height: e.weight,
            size: s,
        });
        uf.union(ra, rb);
        let r = uf.find(ra);
        label[r] = new;
    }
    merges
}

/// Single-linkage hierarchy over mutual-reachability distances.
pub fn single_linkage(data: &[f64], dim: usize, min_samples: usize) -> Vec<Merge> {
    let n = data.len() / dim;
    linkage_from_mst(n, &mutual_reachability_mst(data, dim, min_samples))
}

fn lambda_of(height: f64) -> f64 {
    1.0 / height.max(MIN_MERGE_DISTANCE)
}

/// Condenses a dendrogram over `n` points. Clusters are labelled from `n`
/// upwards, `n` being the root; children below `n` are points.
pub fn condense_tree(merges: &[Merge], n: usize, min_cluster_size: usize) -> Vec<CondensedEdge> {
    let mut out = Vec::new();
    if merges.is_empty() {
        return out;
    }
    let size_of = |node: usize| if node < n { 1 } else { merges[node - n].size };
    let leaves_of = |node: usize| {
        let mut leaves = Vec::new();
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            if x < n {
                leaves.push(x);
            } else {
                let m = &merges[x - n];
                stack.push(m.right);
                stack.push(m.left);
            }
        }
        leaves
    };

    let root = n + merges.len() - 1;
    let mut next_label = n + 1;
    // (dendrogram node, condensed cluster label) pairs still to expand
    let mut queue = std::collections::VecDeque::from([(root, n)]);
    while let Some((node, cluster)) = queue.pop_front() {
        if node < n {
            continue;
        }
        let m = merges[node - n];
        let lambda = lambda_of(m.height);
        let (ls, rs) = (size_of(m.left), size_of(m.right));
        let big_left = ls >= min_cluster_size;
        let big_right = rs >= min_cluster_size;
        match (big_left, big_right) {
            (true, true) => {
                for (child, sz) in [(m.left, ls), (m.right, rs)] {
                    out.push(CondensedEdge {
                        parent: cluster,
                        child: next_label,
                        lambda,
                        size: sz,
                    });
                    queue.push_back((child, next_label));
                    next_label += 1;
                }
            }
            (false, false) => {
                for child in [m.left, m.right] {
                    for p in leaves_of(child) {
                        out.push(CondensedEdge {
                            parent: cluster,
                            child: p,
                            lambda,
                            size: 1,
                        });
                    }
                }
            }
            (true, false) | (false, true) => {
                let (keep, drop) = if big_left {
                    (m.left, m.right)
                } else {
                    (m.right, m.left)
                };
                for p in leaves_of(drop) {
                    out.push(CondensedEdge {
                        parent: cluster,
                        child: p,
                        lambda,
                        size: 1,
                    });
                }
                queue.push_back((keep, cluster));
            }
        }
    }
    out
}

/// Excess-of-mass selection. Returns the selected cluster labels, ascending.
/// The root is never selected.
pub fn select_clusters(condensed: &[CondensedEdge], n: usize) -> Vec<usize> {
    let Some(max_label) = condensed.iter().map(|e| e.parent.max(e.child)).max() else {
        return Vec::new();
    };
    if max_label < n {
        return Vec::new();
    }
    let count = max_label - n + 1;
    let mut birth = vec![0.0f64; count];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); count];
    for e in condensed.iter().filter(|e| e.child >= n) {
        birth[e.child - n] = e.lambda;
        children[e.parent - n].push(e.child);
    }
    let mut stability = vec![0.0f64; count];
    for e in condensed {
        stability[e.parent - n] += (e.lambda - birth[e.parent - n]) * e.size as f64;
    }

    let mut selected = vec![true; count];
    selected[0] = false;
    for c in (1..count).rev() {
        let child_sum: f64 = children[c].iter().map(|&ch| stability[ch - n]).sum();
        if child_sum > stability[c] {
            selected[c] = false;
            stability[c] = child_sum;
        } else {
            let mut stack: Vec<usize> = children[c].clone();
            while let Some(x) = stack.pop() {
                selected[x - n] = false;
                stack.extend_from_slice(&children[x - n]);
            }
        }
    }
    (0..count).filter(|&c| selected[c]).map(|c| c + n).collect()
}

/// Flat labels from a condensed tree and its selected clusters.
pub fn label_points(condensed: &[CondensedEdge], selected: &[usize], n: usize) -> Vec<i32> {
    let mut labels = vec![NOISE; n];
    let Some(max_label) = condensed.iter().map(|e| e.parent.max(e.child)).max() else {
        return labels;
    };
    let count = max_label - n + 1;
    let mut parent = vec![usize::MAX; count];
    for e in condensed.iter().filter(|e| e.child >= n) {
        parent[e.child - n] = e.parent;
    }
    let mut flat: Vec<i32> = vec![NOISE; count];
    for (k, &c) in selected.iter().enumerate() {
        flat[c - n] = k as i32;
    }
    // labels increase away from the root, so parents are resolved first
    let mut owner = vec![NOISE; count];
    for c in 0..count {
        owner[c] = if flat[c] != NOISE {
            flat[c]
        } else if parent[c] != usize::MAX {
            owner[parent[c] - n]
        } else {
            NOISE
        };
    }
    for e in condensed.iter().filter(|e| e.child < n) {
        labels[e.child] = owner[e.parent - n];
    }
    labels
}

/// Clusters `dim`-dimensional rows of `data`. Returns one label per point,
/// [`NOISE`] for unclustered points; clusters are numbered from 0.
pub fn hdbscan(data: &[f64], dim: usize, params: HdbscanParams) -> Vec<i32> {
    let n = data.len() / dim;
    if n == 0 {
        return Vec::new();
    }
    let merges = single_linkage(data, dim, params.min_samples);
    let condensed = condense_tree(&merges, n, params.min_cluster_size.max(2));
    let selected = select_clusters(&condensed, n);
    label_points(&condensed, &selected, n)
}

/// Convenience wrapper over a list of equal-length vectors.
pub fn hdbscan_vectors(points: &[Vec<f64>], params: HdbscanParams) -> Vec<i32> {
    let Some(dim) = points.first().map(Vec::len) else {
        return Vec::new();
    };
    let flat: Vec<f64> = points.iter().flatten().copied().collect();
    hdbscan(&flat, dim, params)
}
