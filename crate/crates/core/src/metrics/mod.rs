//! Association metrics over 4D segments.
//!
//! For a ground-truth object `g` and a predicted segment `s`, `TPA(s, g)` is
//! the number of shared points. The temporal association score averages
//! `Σ_s TPA(s, g) · IoU(s, g) / |g|` over ground-truth objects, with all set
//! operations taken over `(scan, point)` pairs. The scan-wise score first
//! splits every segment by scan.

mod gt;
mod report;

use std::collections::HashMap;

pub use gt::{build_instance_gt, BoxAnnotation};
pub use report::MetricsReport;

use crate::error::{Error, Result};
use crate::types::{segments_from_labels, InstanceLabeling, PointRef, Segment4D};

/// Ground truth and predictions over the same scans.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalPair {
    pub ground_truth: Vec<Segment4D>,
    pub predictions: Vec<Segment4D>,
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

fn check_disjoint(segments: &[Segment4D], what: &str) -> Result<()> {
    let mut owner =
        std::collections::HashSet::with_capacity(segments.iter().map(Segment4D::len).sum());
    for s in segments {
        for &m in s.members() {
            if !owner.insert(m) {
                return Err(Error::Shape(format!(
                    "{what} segments overlap at scan {} point {}",
                    m.0, m.1
                )));
            }
        }
    }
    Ok(())
}

impl EvalPair {
    /// Rejects sets whose segments share points.
    pub fn new(ground_truth: Vec<Segment4D>, predictions: Vec<Segment4D>) -> Result<Self> {
        check_disjoint(&ground_truth, "ground-truth")?;
        check_disjoint(&predictions, "predicted")?;
        Ok(Self {
            ground_truth,
            predictions,
        })
    }

    /// Segments from per-scan labelings; reserved ids are not segments.
    pub fn from_labels(gt: &[InstanceLabeling], pred: &[InstanceLabeling]) -> Result<Self> {
        if gt.len() != pred.len() {
            return Err(Error::Shape(format!(
                "{} ground-truth scans but {} predicted scans",
                gt.len(),
                pred.len()
            )));
        }
        for (k, (g, p)) in gt.iter().zip(pred).enumerate() {
            if g.len() != p.len() {
                return Err(Error::Shape(format!(
                    "scan {k}: {} ground-truth labels but {} predicted",
                    g.len(),
                    p.len()
                )));
            }
        }
        Ok(Self {
            ground_truth: segments_from_labels(gt),
            predictions: segments_from_labels(pred),
        })
    }

    /// Keeps only points of the listed scans.
    pub fn restricted_to_scans(&self, scans: &[u32]) -> Self {
        let keep = |segs: &[Segment4D]| -> Vec<Segment4D> {
            segs.iter()
                .filter_map(|s| {
                    let members = s
                        .members()
                        .iter()
                        .copied()
                        .filter(|m| scans.contains(&m.0))
                        .collect();
                    Segment4D::new(s.id, members)
                })
                .collect()
        };
        Self {
            ground_truth: keep(&self.ground_truth),
            predictions: keep(&self.predictions),
        }
    }

    /// Every segment cut into one segment per scan.
    pub fn split_by_scan(&self) -> Self {
        let split = |segs: &[Segment4D]| -> Vec<Segment4D> {
            segs.iter()
                .flat_map(|s| {
                    s.members()
                        .chunk_by(|a, b| a.0 == b.0)
                        .filter_map(|chunk| Segment4D::new(s.id, chunk.to_vec()))
                        .collect::<Vec<_>>()
                })
                .collect()
        };
        Self {
            ground_truth: split(&self.ground_truth),
            predictions: split(&self.predictions),
        }
    }

    /// For every ground-truth object: `(|g|, [(s, |s|, TPA)])`, overlaps
    /// sorted by prediction index.
    fn overlaps(&self) -> Vec<(usize, Vec<Overlap>)> {
        let mut owner: HashMap<PointRef, usize> = HashMap::new();
        for (k, s) in self.predictions.iter().enumerate() {
            for &m in s.members() {
                owner.insert(m, k);
            }
        }
        self.ground_truth
            .iter()
            .map(|g| {
                let mut counts: HashMap<usize, usize> = HashMap::new();
                for m in g.members() {
                    if let Some(&k) = owner.get(m) {
                        *counts.entry(k).or_default() += 1;
                    }
                }
                let mut v: Vec<Overlap> = counts
                    .into_iter()
                    .map(|(k, tpa)| (k, self.predictions[k].len(), tpa))
                    .collect();
                v.sort_unstable();
                (g.len(), v)
            })
            .collect()
    }
}

/// `(prediction index, |s|, TPA)`.
type Overlap = (usize, usize, usize);

fn iou(g: usize, s: usize, tpa: usize) -> f64 {
    tpa as f64 / (g + s - tpa) as f64
}

/// Temporal association score.
pub fn s_assoc_temporal(pair: &EvalPair) -> Result<f64> {
    if pair.ground_truth.is_empty() {
        return Err(Error::UndefinedMetric("no ground-truth objects"));
    }
    let per_g = pair.overlaps().into_iter().map(|(g, ov)| {
        compensated_sum(ov.iter().map(|&(_, s, tpa)| tpa as f64 * iou(g, s, tpa))) / g as f64
    });
    Ok(compensated_sum(per_g) / pair.ground_truth.len() as f64)
}

/// Association score with objects and predictions of different scans treated
/// as different instances.
pub fn s_assoc_scanwise(pair: &EvalPair) -> Result<f64> {
    s_assoc_temporal(&pair.split_by_scan())
}

/// Mean over ground-truth objects of the best IoU of any prediction.
pub fn best_iou(pair: &EvalPair) -> Result<f64> {
    if pair.ground_truth.is_empty() {
        return Err(Error::UndefinedMetric("no ground-truth objects"));
    }
    let per_g = pair.overlaps().into_iter().map(|(g, ov)| {
        ov.iter()
            .map(|&(_, s, tpa)| iou(g, s, tpa))
            .fold(0.0, f64::max)
    });
    Ok(compensated_sum(per_g) / pair.ground_truth.len() as f64)
}

/// Drops, scan by scan, the points of ground-truth objects that have fewer
/// than `min_points` points in that scan. Predictions are unchanged.
pub fn filter_small(pair: &EvalPair, min_points: usize) -> EvalPair {
    let ground_truth = pair
        .ground_truth
        .iter()
        .filter_map(|g| {
            let members: Vec<PointRef> = g
                .members()
                .chunk_by(|a, b| a.0 == b.0)
                .filter(|chunk| chunk.len() >= min_points)
                .flatten()
                .copied()
                .collect();
            Segment4D::new(g.id, members)
        })
        .collect();
    EvalPair {
        ground_truth,
        predictions: pair.predictions.clone(),
    }
}
