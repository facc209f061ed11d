use nalgebra::DMatrix;

/// Optimal query/object assignment.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    /// `(object, query)` pairs sorted by object.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

impl MatchResult {
    pub fn query_of(&self, object: usize) -> Option<usize> {
        self.pairs
            .binary_search_by_key(&object, |p| p.0)
            .ok()
            .map(|k| self.pairs[k].1)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    fn from_pairs(mut pairs: Vec<(usize, usize)>, cost: &DMatrix<f64>) -> Self {
        pairs.sort_unstable();
        let total_cost = pairs.iter().map(|&(o, q)| cost[(q, o)]).sum();
        Self { pairs, total_cost }
    }
}

/// Minimum-cost assignment for a `rows <= cols` cost table, returning the
/// column of each row. Shortest augmenting paths with dual potentials.
fn solve_rows(rows: usize, cols: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    debug_assert!(rows <= cols);
    let inf = f64::INFINITY;
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    // p[j]: row matched to column j (1-based, 0 = free)
    let mut p = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0; rows];
    for j in 1..=cols {
        if p[j] != 0 {
            col_of[p[j] - 1] = j - 1;
        }
    }
    col_of
}

/// Kuhn–Munkres on an `N_q x N_o` cost matrix. Exactly `min(N_q, N_o)`
/// pairs are returned; the surplus side stays unmatched.
pub fn hungarian(cost: &DMatrix<f64>) -> MatchResult {
    let (n_q, n_o) = cost.shape();
    if n_q == 0 || n_o == 0 {
        return MatchResult::default();
    }
    let pairs = if n_o <= n_q {
        solve_rows(n_o, n_q, |o, q| cost[(q, o)])
            .into_iter()
            .enumerate()
            .collect()
    } else {
        solve_rows(n_q, n_o, |q, o| cost[(q, o)])
            .into_iter()
            .enumerate()
            .map(|(q, o)| (o, q))
            .collect()
    };
    MatchResult::from_pairs(pairs, cost)
}

/// Exhaustive search over all injective assignments. Exponential; only for
/// checking [`hungarian`] on small matrices.
pub fn brute_force_assignment(cost: &DMatrix<f64>) -> MatchResult {
    let (n_q, n_o) = cost.shape();
    if n_q == 0 || n_o == 0 {
        return MatchResult::default();
    }
    let k = n_q.min(n_o);
    let mut best: Option<(f64, Vec<(usize, usize)>)> = None;
    let mut chosen: Vec<(usize, usize)> = Vec::with_capacity(k);
    let mut used_q = vec![false; n_q];
    let mut used_o = vec![false; n_o];

    // pairs are enumerated in increasing object order
    fn rec(
        cost: &DMatrix<f64>,
        k: usize,
        next_o: usize,
        chosen: &mut Vec<(usize, usize)>,
        used_q: &mut [bool],
        used_o: &mut [bool],
        best: &mut Option<(f64, Vec<(usize, usize)>)>,
    ) {
        if chosen.len() == k {
            let total: f64 = chosen.iter().map(|&(o, q)| cost[(q, o)]).sum();
            if best.as_ref().is_none_or(|b| total < b.0) {
                *best = Some((total, chosen.clone()));
            }
            return;
        }
        let (n_q, n_o) = cost.shape();
        let remaining = k - chosen.len();
        for o in next_o..n_o {
            if n_o - o < remaining {
                break;
            }
            if used_o[o] {
                continue;
            }
            for q in 0..n_q {
                if used_q[q] {
                    continue;
                }
                used_q[q] = true;
                used_o[o] = true;
                chosen.push((o, q));
                rec(cost, k, o + 1, chosen, used_q, used_o, best);
                chosen.pop();
                used_q[q] = false;
                used_o[o] = false;
            }
        }
    }
    rec(cost, k, 0, &mut chosen, &mut used_q, &mut used_o, &mut best);
    let (total_cost, pairs) = best.unwrap();
    MatchResult { pairs, total_cost }
}
