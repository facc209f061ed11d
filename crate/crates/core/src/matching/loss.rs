//! Training losses for a query-based segmenter and their analytic gradients
//! with respect to the parameters of a small linear feature model.
//!
//! The Hungarian match is treated as a constant during differentiation.

use nalgebra::{DMatrix, DVector};

use super::{
    cost_matrices, hungarian, scores, sigmoid, AffinityMatrix, AssignmentMatrix, MatchResult,
    AFFINITY_EPS,
};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::types::{is_reserved, InstanceId, InstanceLabeling, Scan};

/// Raw per-point inputs of the toy model: x, y, z, range, intensity.
pub const RAW_ATTRIBUTES: usize = 5;

/// Numerically stable softmax.
pub fn softmax(z: &DVector<f64>) -> DVector<f64> {
    let m = z.max();
    let e = z.map(|v| (v - m).exp());
    let s = e.sum();
    e / s
}

/// Linear stand-in for a point backbone: `feature = W · attributes`, with a
/// fixed set of query embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyFeatureModel {
    /// `D x RAW_ATTRIBUTES`.
    pub weights: DMatrix<f64>,
    /// `N_q x D`.
    pub queries: DMatrix<f64>,
}

impl ToyFeatureModel {
    pub fn new(weights: DMatrix<f64>, queries: DMatrix<f64>) -> Result<Self> {
        if weights.ncols() != RAW_ATTRIBUTES || weights.nrows() < 2 {
            return Err(Error::Shape(format!(
                "weights must be D x {RAW_ATTRIBUTES} with D >= 2, got {:?}",
                weights.shape()
            )));
        }
        if queries.ncols() != weights.nrows() {
            return Err(Error::Shape("query dim must equal feature dim".into()));
        }
        if !weights.iter().chain(queries.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidParam(
                "model parameters must be finite".into(),
            ));
        }
        Ok(Self { weights, queries })
    }

    /// Gaussian parameters with standard deviation `scale`.
    pub fn seeded(dim: usize, num_queries: usize, seed: u64, scale: f64) -> Self {
        let mut rng = SeededRng::new(seed);
        let weights = DMatrix::from_fn(dim, RAW_ATTRIBUTES, |_, _| scale * rng.normal());
        let queries = DMatrix::from_fn(num_queries, dim, |_, _| scale * rng.normal());
        Self { weights, queries }
    }

    pub fn dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn num_queries(&self) -> usize {
        self.queries.nrows()
    }

    /// `N_p x D` features of `N_p x RAW_ATTRIBUTES` inputs.
    pub fn features(&self, attributes: &DMatrix<f64>) -> DMatrix<f64> {
        attributes * self.weights.transpose()
    }
}

/// One scan prepared for the loss: raw attributes plus pseudo-label objects.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingScan {
    pub attributes: DMatrix<f64>,
    pub object_of: Vec<Option<InstanceId>>,
}

impl TrainingScan {
    pub fn new(attributes: DMatrix<f64>, object_of: Vec<Option<InstanceId>>) -> Result<Self> {
        if attributes.ncols() != RAW_ATTRIBUTES || attributes.nrows() != object_of.len() {
            return Err(Error::Shape(format!(
                "attributes {:?} vs {} labels",
                attributes.shape(),
                object_of.len()
            )));
        }
        Ok(Self {
            attributes,
            object_of,
        })
    }

    /// Attributes from a scan; ground and unknown points belong to no object.
    pub fn from_scan(scan: &Scan, labels: &InstanceLabeling) -> Result<Self> {
        let attributes = raw_attributes(scan);
        let object_of = labels
            .ids
            .iter()
            .map(|&id| (!is_reserved(id)).then_some(id))
            .collect();
        Self::new(attributes, object_of)
    }

    /// Distinct object ids, ascending.
    pub fn objects(&self) -> Vec<InstanceId> {
        let mut ids: Vec<InstanceId> = self.object_of.iter().flatten().copied().collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    fn members(&self, id: InstanceId) -> Vec<usize> {
        self.object_of
            .iter()
            .enumerate()
            .filter(|(_, o)| **o == Some(id))
            .map(|(i, _)| i)
            .collect()
    }
}

pub fn raw_attributes(scan: &Scan) -> DMatrix<f64> {
    DMatrix::from_fn(scan.len(), RAW_ATTRIBUTES, |i, k| {
        let p = &scan.points[i];
        match k {
            0 => p.x,
            1 => p.y,
            2 => p.z,
            3 => p.range(),
            _ => p.intensity,
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub dice: f64,
    pub bce: f64,
    pub consistency: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            dice: 2.0,
            bce: 5.0,
            consistency: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum LossMode<'a> {
    ScanWise(&'a TrainingScan),
    /// Costs and matching on `second`; consistency between the two.
    Temporal {
        first: &'a TrainingScan,
        second: &'a TrainingScan,
    },
}

impl<'a> LossMode<'a> {
    fn target(&self) -> &'a TrainingScan {
        match *self {
            LossMode::ScanWise(s) => s,
            LossMode::Temporal { second, .. } => second,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    /// Same shape as [`ToyFeatureModel::weights`].
    pub grad_weights: DMatrix<f64>,
    /// Same shape as [`ToyFeatureModel::queries`].
    pub grad_queries: DMatrix<f64>,
    pub matching: MatchResult,
    /// Object ids of the target scan; column `o` of the costs is `objects[o]`.
    pub objects: Vec<InstanceId>,
}

/// Per-object query distributions at two timesteps.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyDistributions {
    pub h_t: DVector<f64>,
    pub h_t1: DVector<f64>,
}

/// Mean pre-sigmoid score of an object's points, per query.
fn mean_scores(scores: &DMatrix<f64>, weights: &[f64]) -> Option<DVector<f64>> {
    let count: f64 = weights.iter().sum();
    if count == 0.0 {
        return None;
    }
    let w = DVector::from_column_slice(weights);
    Some(scores.transpose() * w / count)
}

/// Softmax over queries of the mean scalar-product score of object column
/// `object` in each scan. `scores_*` are `N_p x N_q`, `g_*` are `N_p x N_o`.
pub fn consistency_distributions(
    scores_t: &DMatrix<f64>,
    scores_t1: &DMatrix<f64>,
    g_t: &AssignmentMatrix,
    g_t1: &AssignmentMatrix,
    object: usize,
) -> Result<ConsistencyDistributions> {
    if scores_t.nrows() != g_t.num_points() || scores_t1.nrows() != g_t1.num_points() {
        return Err(Error::Shape("scores and assignment disagree on N_p".into()));
    }
    if scores_t.ncols() != scores_t1.ncols() {
        return Err(Error::Shape("query count differs between scans".into()));
    }
    if object >= g_t.num_objects() || object >= g_t1.num_objects() {
        return Err(Error::AbsentObject(object));
    }
    let col = |g: &AssignmentMatrix| g.0.column(object).iter().copied().collect::<Vec<f64>>();
    let z_t = mean_scores(scores_t, &col(g_t)).ok_or(Error::AbsentObject(object))?;
    let z_t1 = mean_scores(scores_t1, &col(g_t1)).ok_or(Error::AbsentObject(object))?;
    Ok(ConsistencyDistributions {
        h_t: softmax(&z_t),
        h_t1: softmax(&z_t1),
    })
}

/// `KL(H_t || H_t1)`.
pub fn consistency_loss(h: &ConsistencyDistributions) -> f64 {
    h.h_t
        .iter()
        .zip(h.h_t1.iter())
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &q)| p * (p.ln() - q.ln()))
        .sum()
}

/// `-Σ H_t ln H_t1`; differs from [`consistency_loss`] by the entropy of `H_t`.
pub fn cross_entropy_loss(h: &ConsistencyDistributions) -> f64 {
    -h.h_t
        .iter()
        .zip(h.h_t1.iter())
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &q)| p * q.ln())
        .sum::<f64>()
}

/// Gradient of `KL(h_t || softmax(z_t1))` with respect to `z_t1`, `h_t` held
/// constant: `softmax(z_t1) - h_t`.
pub fn consistency_loss_grad_logits(h_t: &DVector<f64>, z_t1: &DVector<f64>) -> DVector<f64> {
    softmax(z_t1) - h_t
}

/// Same gradient, obtained by pushing `dKL/dH_t1 = -h_t / H_t1` through the
/// softmax Jacobian `diag(H) - H Hᵀ`.
pub fn kl_grad_logits_via_jacobian(h_t: &DVector<f64>, z_t1: &DVector<f64>) -> DVector<f64> {
    let h = softmax(z_t1);
    let d_h = DVector::from_fn(h.len(), |k, _| -h_t[k] / h[k]);
    let jacobian = DMatrix::from_diagonal(&h) - &h * h.transpose();
    jacobian.transpose() * d_h
}

/// Gradient of `-Σ h_t ln softmax(z_t1)` with respect to `z_t1`.
pub fn cross_entropy_grad_logits(h_t: &DVector<f64>, z_t1: &DVector<f64>) -> DVector<f64> {
    softmax(z_t1) * h_t.sum() - h_t
}

/// Matches queries to the target scan's objects, then evaluates the loss.
pub fn global_loss(
    model: &ToyFeatureModel,
    mode: LossMode<'_>,
    weights: &LossWeights,
) -> Result<LossOutput> {
    let target = mode.target();
    let objects = target.objects();
    if objects.is_empty() {
        return global_loss_with_match(model, mode, weights, &MatchResult::default());
    }
    let s = scores(&model.features(&target.attributes), &model.queries)?;
    let a = AffinityMatrix::from_scores(&s);
    let g = AssignmentMatrix::from_labels(&target.object_of, &objects);
    let costs = cost_matrices(&a, &g, weights.dice, weights.bce)?;
    let matching = hungarian(&costs.total);
    global_loss_with_match(model, mode, weights, &matching)
}

/// Loss and gradients for a fixed matching of target objects (ascending id
/// order) to queries.
pub fn global_loss_with_match(
    model: &ToyFeatureModel,
    mode: LossMode<'_>,
    weights: &LossWeights,
    matching: &MatchResult,
) -> Result<LossOutput> {
    let target = mode.target();
    let objects = target.objects();
    let features = model.features(&target.attributes);
    let s = scores(&features, &model.queries)?;
    let a = s.map(sigmoid);
    let n_p = target.attributes.nrows();
    let n_pairs = matching.len();
    let mut loss = 0.0;
    let mut d_s = DMatrix::zeros(n_p, model.num_queries());

    let first_scores = match mode {
        LossMode::Temporal { first, .. } => {
            Some(scores(&model.features(&first.attributes), &model.queries)?)
        }
        LossMode::ScanWise(_) => None,
    };

    if n_pairs > 0 {
        let norm = 1.0 / n_pairs as f64;
        for &(o, j) in &matching.pairs {
            let id = *objects.get(o).ok_or(Error::AbsentObject(o))?;
            let g: Vec<f64> = target
                .object_of
                .iter()
                .map(|l| if *l == Some(id) { 1.0 } else { 0.0 })
                .collect();
            let a_col = a.column(j);
            let num: f64 = 2.0 * a_col.iter().zip(&g).map(|(x, y)| x * y).sum::<f64>();
            let den: f64 = a_col.norm_squared() + g.iter().sum::<f64>();
            let dice_loss = 1.0 - num / den;
            let mut bce = 0.0;
            for i in 0..n_p {
                let ai = a_col[i];
                let ac = ai.clamp(AFFINITY_EPS, 1.0 - AFFINITY_EPS);
                bce -= g[i] * ac.ln() + (1.0 - g[i]) * (1.0 - ac).ln();
                let d_dice = -(2.0 * g[i] * den - num * 2.0 * ai) / (den * den);
                let d_bce = if ai > AFFINITY_EPS && ai < 1.0 - AFFINITY_EPS {
                    -(g[i] / ai - (1.0 - g[i]) / (1.0 - ai)) / n_p as f64
                } else {
                    0.0
                };
                let d_a = (weights.dice * d_dice + weights.bce * d_bce) * norm;
                d_s[(i, j)] += d_a * ai * (1.0 - ai);
            }
            bce /= n_p as f64;
            loss += weights.dice * dice_loss + weights.bce * bce;

            if let (Some(s_t), LossMode::Temporal { first, .. }) = (&first_scores, mode) {
                let before = first.members(id);
                if before.is_empty() {
                    continue;
                }
                let after = target.members(id);
                let z_t = mean_rows(s_t, &before);
                let z_t1 = mean_rows(&s, &after);
                let h = ConsistencyDistributions {
                    h_t: softmax(&z_t),
                    h_t1: softmax(&z_t1),
                };
                loss += weights.consistency * consistency_loss(&h);
                let d_z = consistency_loss_grad_logits(&h.h_t, &z_t1)
                    * (weights.consistency * norm / after.len() as f64);
                for &i in &after {
                    for q in 0..d_z.len() {
                        d_s[(i, q)] += d_z[q];
                    }
                }
            }
        }
        loss *= norm;
    }

    let grad_queries = d_s.transpose() * &features;
    let d_features = &d_s * &model.queries;
    let grad_weights = d_features.transpose() * &target.attributes;
    Ok(LossOutput {
        loss,
        grad_weights,
        grad_queries,
        matching: matching.clone(),
        objects,
    })
}

fn mean_rows(m: &DMatrix<f64>, rows: &[usize]) -> DVector<f64> {
    let mut acc = DVector::zeros(m.ncols());
    for &i in rows {
        acc += m.row(i).transpose();
    }
    acc / rows.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dist(h_t: &[f64], h_t1: &[f64]) -> ConsistencyDistributions {
        ConsistencyDistributions {
            h_t: DVector::from_column_slice(h_t),
            h_t1: DVector::from_column_slice(h_t1),
        }
    }

    #[test]
    fn softmax_closed_form() {
        let h = softmax(&DVector::from_column_slice(&[1.0, 0.0, 0.0]));
        assert_abs_diff_eq!(h[0], 0.5761, epsilon = 1e-4);
        assert_abs_diff_eq!(h[1], 0.2119, epsilon = 1e-4);
        assert_abs_diff_eq!(h[2], 0.2119, epsilon = 1e-4);
        let u = softmax(&DVector::from_element(4, 3.3));
        assert!(u.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn distributions_average_scores_first() {
        // two points of object 0: scores (1, 0) and (3, -2) average to (2, -1)
        let s = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 3.0, -2.0, 9.0, 9.0]);
        let g = AssignmentMatrix(DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 0.0]));
        let h = consistency_distributions(&s, &s, &g, &g, 0).unwrap();
        let e = (3.0f64).exp();
        assert_abs_diff_eq!(h.h_t[0], e / (e + 1.0), epsilon = 1e-15);
        assert_abs_diff_eq!(h.h_t1.sum(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn absent_object_is_an_error() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let present = AssignmentMatrix(DMatrix::from_row_slice(2, 1, &[1.0, 0.0]));
        let absent = AssignmentMatrix(DMatrix::zeros(2, 1));
        let err = consistency_distributions(&s, &s, &present, &absent, 0).unwrap_err();
        assert!(matches!(err, Error::AbsentObject(0)));
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(
            consistency_loss(&dist(&[0.2, 0.3, 0.5], &[0.2, 0.3, 0.5])),
            0.0
        );
        assert_abs_diff_eq!(
            consistency_loss(&dist(&[1.0, 0.0], &[0.5, 0.5])),
            std::f64::consts::LN_2,
            epsilon = 1e-15
        );
        let p: [f64; 3] = [0.1, 0.6, 0.3];
        let q = [0.3, 0.3, 0.4];
        let direct: f64 = (0..3).map(|k| p[k] * (p[k] / q[k]).ln()).sum();
        assert_abs_diff_eq!(consistency_loss(&dist(&p, &q)), direct, epsilon = 1e-15);
    }

    #[test]
    fn kl_and_cross_entropy_differ_by_entropy() {
        let h = dist(&[0.1, 0.6, 0.3], &[0.3, 0.3, 0.4]);
        let entropy: f64 = -h.h_t.iter().map(|p| p * p.ln()).sum::<f64>();
        assert_abs_diff_eq!(
            cross_entropy_loss(&h) - consistency_loss(&h),
            entropy,
            epsilon = 1e-14
        );
        let z = DVector::from_column_slice(&[0.3, -1.0, 2.0]);
        let a = kl_grad_logits_via_jacobian(&h.h_t, &z);
        let b = cross_entropy_grad_logits(&h.h_t, &z);
        assert!((a - b).amax() < 1e-12);
    }

    #[test]
    fn model_shape_checks() {
        assert!(ToyFeatureModel::new(DMatrix::zeros(1, 5), DMatrix::zeros(3, 1)).is_err());
        assert!(ToyFeatureModel::new(DMatrix::zeros(4, 5), DMatrix::zeros(3, 3)).is_err());
        assert!(ToyFeatureModel::new(DMatrix::zeros(4, 5), DMatrix::zeros(3, 4)).is_ok());
    }

    #[test]
    fn saturated_perfect_prediction_has_near_zero_loss() {
        // attributes one-hot per object, weights identity-like, queries scaled
        // so that A is ~1 on the object's points and ~0 elsewhere
        let attrs = DMatrix::from_row_slice(
            4,
            5,
            &[
                1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0,
                1.0, 0.0, 0.0, 0.0,
            ],
        );
        let scan = TrainingScan::new(attrs, vec![Some(1), Some(1), Some(2), Some(2)]).unwrap();
        let weights = DMatrix::from_fn(2, 5, |r, c| if r == c { 1.0 } else { 0.0 });
        let queries = DMatrix::from_row_slice(2, 2, &[40.0, -40.0, -40.0, 40.0]);
        let model = ToyFeatureModel::new(weights, queries).unwrap();
        let out = global_loss(&model, LossMode::ScanWise(&scan), &LossWeights::default()).unwrap();
        assert!(out.loss < 1e-6, "loss {}", out.loss);
        assert_eq!(out.matching.pairs, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn no_objects_means_zero_loss() {
        let scan = TrainingScan::new(DMatrix::from_element(3, 5, 0.5), vec![None; 3]).unwrap();
        let model = ToyFeatureModel::seeded(3, 4, 1, 0.5);
        let out = global_loss(&model, LossMode::ScanWise(&scan), &LossWeights::default()).unwrap();
        assert_eq!(out.loss, 0.0);
        assert_eq!(out.grad_weights, DMatrix::zeros(3, 5));
    }
}
