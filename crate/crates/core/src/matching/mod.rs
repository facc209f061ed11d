//! Query/object matching: affinities, Dice and BCE costs, optimal
//! assignment, and the training losses built on them.

mod hungarian;
mod loss;

pub use hungarian::{brute_force_assignment, hungarian, MatchResult};
pub use loss::{
    consistency_distributions, consistency_loss, consistency_loss_grad_logits,
    cross_entropy_grad_logits, cross_entropy_loss, global_loss, global_loss_with_match,
    kl_grad_logits_via_jacobian, raw_attributes, softmax, ConsistencyDistributions, LossMode,
    LossOutput, LossWeights, ToyFeatureModel, TrainingScan, RAW_ATTRIBUTES,
};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Affinities are clamped to `[AFFINITY_EPS, 1 - AFFINITY_EPS]` before logs.
pub const AFFINITY_EPS: f64 = 1e-7;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Scalar products between point features (rows of `features`) and query
/// embeddings (rows of `queries`): an `N_p x N_q` matrix.
pub fn scores(features: &DMatrix<f64>, queries: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if features.ncols() != queries.ncols() {
        return Err(Error::Shape(format!(
            "feature dim {} != query dim {}",
            features.ncols(),
            queries.ncols()
        )));
    }
    Ok(features * queries.transpose())
}

/// `A_ij = sigmoid(<feat_i, query_j>)`, shape `N_p x N_q`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix(pub DMatrix<f64>);

impl AffinityMatrix {
    pub fn from_scores(scores: &DMatrix<f64>) -> Self {
        Self(scores.map(sigmoid))
    }

    pub fn num_points(&self) -> usize {
        self.0.nrows()
    }

    pub fn num_queries(&self) -> usize {
        self.0.ncols()
    }
}

pub fn affinity(features: &DMatrix<f64>, queries: &DMatrix<f64>) -> Result<AffinityMatrix> {
    Ok(AffinityMatrix::from_scores(&scores(features, queries)?))
}

/// Binary point/object membership, shape `N_p x N_o`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrix(pub DMatrix<f64>);

impl AssignmentMatrix {
    /// One column per entry of `objects`; point `i` belongs to column `o`
    /// when `object_of[i] == Some(objects[o])`.
    pub fn from_labels<T: PartialEq>(object_of: &[Option<T>], objects: &[T]) -> Self {
        let mut g = DMatrix::zeros(object_of.len(), objects.len());
        for (i, label) in object_of.iter().enumerate() {
            if let Some(label) = label {
                if let Some(o) = objects.iter().position(|x| x == label) {
                    g[(i, o)] = 1.0;
                }
            }
        }
        Self(g)
    }

    pub fn num_points(&self) -> usize {
        self.0.nrows()
    }

    pub fn num_objects(&self) -> usize {
        self.0.ncols()
    }
}

fn check_rows(a: &AffinityMatrix, g: &AssignmentMatrix) -> Result<()> {
    if a.num_points() != g.num_points() {
        return Err(Error::Shape(format!(
            "affinity has {} points, assignment {}",
            a.num_points(),
            g.num_points()
        )));
    }
    Ok(())
}

/// Dice coefficient `2 Σ A_ij G_io / (Σ A_ij² + Σ G_io²)`, shape `N_q x N_o`.
pub fn dice_coefficient(a: &AffinityMatrix, g: &AssignmentMatrix) -> Result<DMatrix<f64>> {
    check_rows(a, g)?;
    let g_sq: Vec<f64> = g.0.column_iter().map(|c| c.norm_squared()).collect();
    if let Some(o) = g_sq.iter().position(|&s| s == 0.0) {
        return Err(Error::DegenerateObject(o));
    }
    let a_sq: Vec<f64> = a.0.column_iter().map(|c| c.norm_squared()).collect();
    let inter = a.0.transpose() * &g.0;
    Ok(DMatrix::from_fn(
        a.num_queries(),
        g.num_objects(),
        |j, o| 2.0 * inter[(j, o)] / (a_sq[j] + g_sq[o]),
    ))
}

/// Dice loss `1 - coefficient`, the form minimized by matching.
pub fn dice_cost(a: &AffinityMatrix, g: &AssignmentMatrix) -> Result<DMatrix<f64>> {
    Ok(dice_coefficient(a, g)?.map(|c| 1.0 - c))
}

/// Mean over points of `-(G log A + (1 - G) log(1 - A))`, shape `N_q x N_o`.
pub fn bce_cost(a: &AffinityMatrix, g: &AssignmentMatrix) -> Result<DMatrix<f64>> {
    check_rows(a, g)?;
    let n_p = a.num_points().max(1) as f64;
    let clamped = a.0.map(|v| v.clamp(AFFINITY_EPS, 1.0 - AFFINITY_EPS));
    let log_a = clamped.map(f64::ln);
    let log_1a = clamped.map(|v| (1.0 - v).ln());
    // Σ_i G log A + (1 - G) log(1 - A) = Σ_i log(1 - A) + G (log A - log(1 - A))
    let base: Vec<f64> = log_1a.column_iter().map(|c| c.sum()).collect();
    let cross = (&log_a - &log_1a).transpose() * &g.0;
    Ok(DMatrix::from_fn(
        a.num_queries(),
        g.num_objects(),
        |j, o| -(base[j] + cross[(j, o)]) / n_p,
    ))
}

/// The three cost matrices used for matching.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrices {
    pub dice: DMatrix<f64>,
    pub bce: DMatrix<f64>,
    pub total: DMatrix<f64>,
    pub lambda_dice: f64,
    pub lambda_bce: f64,
}

pub fn cost_matrices(
    a: &AffinityMatrix,
    g: &AssignmentMatrix,
    lambda_dice: f64,
    lambda_bce: f64,
) -> Result<CostMatrices> {
    let dice = dice_cost(a, g)?;
    let bce = bce_cost(a, g)?;
    let total = &dice * lambda_dice + &bce * lambda_bce;
    Ok(CostMatrices {
        dice,
        bce,
        total,
        lambda_dice,
        lambda_bce,
    })
}
