//! Identity stitching across fixed-length clustering windows.
//!
//! The last scan of one window and the first scan of the next are brought
//! into a common frame. Each instance of the later scan takes the id of the
//! first earlier instance (ascending id) whose convex hull overlaps it with a
//! Monte-Carlo IoU above the threshold. Several later instances may inherit
//! the same id.

mod hull;

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;
use rayon::prelude::*;

pub use hull::{convex_hull, Hull3D};

use crate::error::{Error, Result};
use crate::rng::{mix_seed, SeededRng};
use crate::types::{is_reserved, InstanceId, InstanceLabeling, Scan};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StitchParams {
    pub iou_threshold: f64,
    pub mc_samples: usize,
    /// Instances are subsampled to at most this many points before hulling.
    pub decimation_limit: usize,
    /// Base seed of the Monte-Carlo estimates.
    pub seed: u64,
}

impl Default for StitchParams {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            mc_samples: 1000,
            decimation_limit: 200,
            seed: 0,
        }
    }
}

impl StitchParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::InvalidParam(
                "iou_threshold must be in (0, 1]".into(),
            ));
        }
        if self.mc_samples == 0 {
            return Err(Error::InvalidParam("mc_samples must be >= 1".into()));
        }
        if self.decimation_limit < 4 {
            return Err(Error::InvalidParam("decimation_limit must be >= 4".into()));
        }
        Ok(())
    }
}

/// Monte-Carlo IoU of two hulls, sampling their joint bounding box. Samples
/// outside both hulls are ignored; the estimate is 0 if none hit.
pub fn mc_iou(a: &Hull3D, b: &Hull3D, samples: usize, seed: u64) -> f64 {
    let (alo, ahi) = a.bounds();
    let (blo, bhi) = b.bounds();
    let (lo, hi) = (alo.inf(&blo), ahi.sup(&bhi));
    let mut rng = SeededRng::new(seed);
    let (mut both, mut either) = (0u64, 0u64);
    for _ in 0..samples {
        let p = Vector3::new(
            rng.uniform(lo.x, hi.x),
            rng.uniform(lo.y, hi.y),
            rng.uniform(lo.z, hi.z),
        );
        match (a.contains(&p), b.contains(&p)) {
            (true, true) => {
                both += 1;
                either += 1;
            }
            (true, false) | (false, true) => either += 1,
            _ => {}
        }
    }
    if either == 0 {
        0.0
    } else {
        both as f64 / either as f64
    }
}

/// Uniform-stride subsample to at most `limit` items.
pub fn decimate<T: Copy>(items: &[T], limit: usize) -> Vec<T> {
    if items.len() <= limit {
        return items.to_vec();
    }
    let stride = items.len().div_ceil(limit);
    items.iter().step_by(stride).copied().collect()
}

/// Hulls of the regular instances of a scan in world coordinates, by
/// ascending id. Degenerate instances map to `None`.
fn instance_hulls(
    scan: &Scan,
    labels: &InstanceLabeling,
    limit: usize,
) -> Result<BTreeMap<InstanceId, Option<Hull3D>>> {
    if labels.len() != scan.len() {
        return Err(Error::Shape(format!(
            "{} labels for {} points",
            labels.len(),
            scan.len()
        )));
    }
    let pose = scan
        .pose
        .ok_or(Error::MissingPose(scan.timestep as usize))?;
    let mut groups: BTreeMap<InstanceId, Vec<Vector3<f64>>> = BTreeMap::new();
    for (p, &id) in scan.points.iter().zip(&labels.ids) {
        if !is_reserved(id) {
            groups.entry(id).or_default().push(pose.apply(&p.xyz()));
        }
    }
    Ok(groups
        .into_iter()
        .map(|(id, pts)| (id, convex_hull(&decimate(&pts, limit)).ok()))
        .collect())
}

/// Matches instances of `first` (opening the next window) to instances of
/// `last` (closing the previous one). Returns `next id -> previous id` for
/// matched instances only. Both scans need poses.
pub fn stitch_windows(
    last: (&Scan, &InstanceLabeling),
    first: (&Scan, &InstanceLabeling),
    params: &StitchParams,
    window_index: u64,
) -> Result<BTreeMap<InstanceId, InstanceId>> {
    params.validate()?;
    let prev = instance_hulls(last.0, last.1, params.decimation_limit)?;
    let next = instance_hulls(first.0, first.1, params.decimation_limit)?;
    let mut mapping = BTreeMap::new();
    for (&id, hull) in &next {
        let Some(hull) = hull else { continue };
        for (&pid, phull) in &prev {
            let Some(phull) = phull else { continue };
            let seed = mix_seed(&[params.seed, window_index, pid as u64, id as u64]);
            if mc_iou(phull, hull, params.mc_samples, seed) > params.iou_threshold {
                mapping.insert(id, pid);
                break;
            }
        }
    }
    Ok(mapping)
}

/// Stitches a labeled sequence cut into consecutive windows of
/// `window_scans` scans. Unmatched instances keep their id unless an earlier
/// window already used it, in which case they get a fresh one.
pub fn stitch_sequence(
    scans: &[Scan],
    labels: &[InstanceLabeling],
    window_scans: usize,
    params: &StitchParams,
) -> Result<Vec<InstanceLabeling>> {
    params.validate()?;
    if window_scans == 0 {
        return Err(Error::InvalidParam("window_scans must be >= 1".into()));
    }
    if scans.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scans but {} label files",
            scans.len(),
            labels.len()
        )));
    }
    let starts: Vec<usize> = (window_scans..scans.len()).step_by(window_scans).collect();
    let links: Vec<BTreeMap<InstanceId, InstanceId>> = starts
        .par_iter()
        .enumerate()
        .map(|(w, &s)| {
            stitch_windows(
                (&scans[s - 1], &labels[s - 1]),
                (&scans[s], &labels[s]),
                params,
                w as u64 + 1,
            )
        })
        .collect::<Result<_>>()?;

    let mut out: Vec<InstanceLabeling> = labels.to_vec();
    let mut used: BTreeSet<InstanceId> = BTreeSet::new();
    let mut remap_prev: BTreeMap<InstanceId, InstanceId> = BTreeMap::new();
    let mut next_fresh = labels
        .iter()
        .flat_map(|l| l.ids.iter().copied().filter(|&id| !is_reserved(id)))
        .max()
        .unwrap_or(0)
        + 1;
    for w in 0..=starts.len() {
        let a = if w == 0 { 0 } else { starts[w - 1] };
        let b = starts.get(w).copied().unwrap_or(scans.len());
        let window_ids: BTreeSet<InstanceId> = labels[a..b]
            .iter()
            .flat_map(|l| l.ids.iter().copied().filter(|&id| !is_reserved(id)))
            .collect();
        let mut remap = BTreeMap::new();
        for &id in &window_ids {
            let target = match (w > 0).then(|| links[w - 1].get(&id)).flatten() {
                Some(pid) => remap_prev[pid],
                None if used.contains(&id) => {
                    if next_fresh >= crate::types::UNKNOWN {
                        return Err(Error::Capacity {
                            distinct: next_fresh as usize,
                            max: crate::types::UNKNOWN as usize - 1,
                        });
                    }
                    next_fresh += 1;
                    next_fresh - 1
                }
                None => id,
            };
            remap.insert(id, target);
        }
        for labeling in &mut out[a..b] {
            for id in &mut labeling.ids {
                if let Some(&t) = remap.get(id) {
                    *id = t;
                }
            }
        }
        used.extend(remap.values().copied());
        remap_prev = remap;
    }
    Ok(out)
}
