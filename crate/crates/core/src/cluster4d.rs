//! Offline spatio-temporal pseudo-labels.
//!
//! A window of registered scans is aggregated into one 4D cloud
//! `(x, y, z, t)`, thinned by a voxel-time grid, clustered with HDBSCAN, and
//! the cluster ids are spread back to every point of every scan.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::ground::GroundMask;
use crate::hdbscan::{hdbscan, HdbscanParams, NOISE};
use crate::types::{InstanceId, InstanceLabeling, PointRef, Scan, GROUND, UNKNOWN};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterParams {
    pub window_scans: usize,
    pub voxel_size: f64,
    /// Temporal voxel extent in timesteps.
    pub time_bucket: u32,
    pub time_scale: f64,
    pub z_scale: f64,
    pub min_samples: usize,
    pub min_cluster_size: usize,
    /// Points closer than this to the sensor (3D range) are discarded.
    pub ego_exclusion_radius: f64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            window_scans: 40,
            voxel_size: 0.05,
            time_bucket: 5,
            time_scale: 0.03,
            z_scale: 1.0,
            min_samples: 1,
            min_cluster_size: 300,
            ego_exclusion_radius: 2.5,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_scans < 1 {
            return Err(Error::InvalidParam("window_scans must be >= 1".into()));
        }
        if !(self.voxel_size > 0.0) {
            return Err(Error::InvalidParam("voxel_size must be > 0".into()));
        }
        if self.time_bucket < 1 {
            return Err(Error::InvalidParam("time_bucket must be >= 1".into()));
        }
        if !(self.time_scale > 0.0) || !(self.z_scale > 0.0) {
            return Err(Error::InvalidParam(
                "time_scale and z_scale must be > 0".into(),
            ));
        }
        if self.min_cluster_size < 2 {
            return Err(Error::InvalidParam("min_cluster_size must be >= 2".into()));
        }
        if self.min_samples < 1 {
            return Err(Error::InvalidParam("min_samples must be >= 1".into()));
        }
        if !(self.ego_exclusion_radius >= 0.0) {
            return Err(Error::InvalidParam(
                "ego_exclusion_radius must be >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn hdbscan(&self) -> HdbscanParams {
        HdbscanParams {
            min_samples: self.min_samples,
            min_cluster_size: self.min_cluster_size,
        }
    }
}

/// Registered points of a window. `t` is the timestep relative to the
/// first scan of the window.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AggregatedCloud {
    pub points: Vec<[f64; 4]>,
    /// `(scan index within the window, point index)` of every point.
    pub origin: Vec<PointRef>,
}

impl AggregatedCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Stacks non-ground points farther than the ego radius, expressed in the
/// frame of the window's first scan.
pub fn aggregate(
    window: &[Scan],
    masks: &[GroundMask],
    params: &ClusterParams,
) -> Result<AggregatedCloud> {
    if window.len() != masks.len() {
        return Err(Error::Shape(format!(
            "{} scans but {} ground masks",
            window.len(),
            masks.len()
        )));
    }
    let Some(first) = window.first() else {
        return Ok(AggregatedCloud::default());
    };
    let reference = first.pose.ok_or(Error::MissingPose(0))?.inverse();
    let t0 = first.timestep;
    let mut cloud = AggregatedCloud::default();
    for (s, (scan, mask)) in window.iter().zip(masks).enumerate() {
        let pose = scan.pose.ok_or(Error::MissingPose(s))?;
        if mask.len() != scan.len() {
            return Err(Error::Shape(format!(
                "scan {s}: {} points but mask of {}",
                scan.len(),
                mask.len()
            )));
        }
        let to_ref = reference.compose(&pose);
        let t = scan
            .timestep
            .checked_sub(t0)
            .ok_or_else(|| Error::InvalidParam("window timesteps must be increasing".into()))?
            as f64;
        for (i, p) in scan.points.iter().enumerate() {
            if mask.0[i] || p.range() < params.ego_exclusion_radius {
                continue;
            }
            let q = to_ref.apply(&p.xyz());
            cloud.points.push([q.x, q.y, q.z, t]);
            cloud.origin.push((s as u32, i as u32));
        }
    }
    Ok(cloud)
}

pub type VoxelKey = [i64; 4];

pub fn voxel_key(p: &[f64; 4], params: &ClusterParams) -> VoxelKey {
    let v = params.voxel_size;
    [
        (p[0] / v).floor() as i64,
        (p[1] / v).floor() as i64,
        (p[2] / v).floor() as i64,
        (p[3] / params.time_bucket as f64).floor() as i64,
    ]
}

/// Result of grid sampling: representatives plus, for every input point,
/// the index of the representative sharing its cell.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VoxelSample {
    pub sampled: AggregatedCloud,
    pub representative_of: Vec<usize>,
}

/// Keeps the first point (in cloud order) of every occupied voxel-time cell.
pub fn voxel_time_sample(cloud: &AggregatedCloud, params: &ClusterParams) -> VoxelSample {
    let mut cell_rep: HashMap<VoxelKey, usize> = HashMap::with_capacity(cloud.len() / 2);
    let mut out = VoxelSample {
        sampled: AggregatedCloud::default(),
        representative_of: Vec::with_capacity(cloud.len()),
    };
    for (p, &origin) in cloud.points.iter().zip(&cloud.origin) {
        let next = out.sampled.len();
        let rep = *cell_rep.entry(voxel_key(p, params)).or_insert_with(|| {
            out.sampled.points.push(*p);
            out.sampled.origin.push(origin);
            next
        });
        out.representative_of.push(rep);
    }
    out
}

/// Clustering coordinates of a sampled cloud.
pub fn scaled_coordinates(cloud: &AggregatedCloud, params: &ClusterParams) -> Vec<f64> {
    cloud
        .points
        .iter()
        .flat_map(|p| [p[0], p[1], p[2] * params.z_scale, p[3] * params.time_scale])
        .collect()
}

/// Labels every point of a window. Cluster `k` becomes instance
/// `first_id + k`; the number of clusters is returned alongside.
pub fn cluster_window(
    window: &[Scan],
    masks: &[GroundMask],
    params: &ClusterParams,
    first_id: InstanceId,
) -> Result<(Vec<InstanceLabeling>, usize)> {
    params.validate()?;
    let mut labels: Vec<InstanceLabeling> = window
        .iter()
        .zip(masks)
        .map(|(scan, mask)| {
            InstanceLabeling::new(
                (0..scan.len())
                    .map(|i| {
                        if mask.0.get(i).copied().unwrap_or(false) {
                            GROUND
                        } else {
                            UNKNOWN
                        }
                    })
                    .collect(),
            )
        })
        .collect();
    let cloud = aggregate(window, masks, params)?;
    if cloud.is_empty() {
        return Ok((labels, 0));
    }
    let sample = voxel_time_sample(&cloud, params);
    let coords = scaled_coordinates(&sample.sampled, params);
    let rep_labels = hdbscan(&coords, 4, params.hdbscan());
    let clusters = rep_labels
        .iter()
        .copied()
        .max()
        .map_or(0, |m| (m + 1).max(0) as usize);
    if first_id as u64 + clusters as u64 >= UNKNOWN as u64 {
        return Err(Error::Capacity {
            distinct: first_id as usize + clusters,
            max: UNKNOWN as usize - 1,
        });
    }
    for (&(s, i), &rep) in cloud.origin.iter().zip(&sample.representative_of) {
        let l = rep_labels[rep];
        if l != NOISE {
            labels[s as usize].ids[i as usize] = first_id + l as InstanceId;
        }
    }
    Ok((labels, clusters))
}

/// Clusters non-overlapping windows of `params.window_scans` scans (the
/// tail window may be shorter). Ids are unique across windows, starting at 1.
/// Windows run in parallel on the current rayon pool.
pub fn cluster_sequence(
    scans: &[Scan],
    masks: &[GroundMask],
    params: &ClusterParams,
) -> Result<Vec<InstanceLabeling>> {
    use rayon::prelude::*;
    params.validate()?;
    if scans.len() != masks.len() {
        return Err(Error::Shape(format!(
            "{} scans but {} ground masks",
            scans.len(),
            masks.len()
        )));
    }
    let windows: Vec<(usize, usize)> = (0..scans.len())
        .step_by(params.window_scans)
        .map(|s| (s, (s + params.window_scans).min(scans.len())))
        .collect();
    let results: Vec<(Vec<InstanceLabeling>, usize)> = windows
        .par_iter()
        .map(|&(a, b)| cluster_window(&scans[a..b], &masks[a..b], params, 0))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(scans.len());
    let mut next: InstanceId = 1;
    for (mut labels, count) in results {
        for labeling in &mut labels {
            for id in &mut labeling.ids {
                if *id != GROUND && *id != UNKNOWN {
                    *id += next;
                }
            }
        }
        next += count as InstanceId;
        out.extend(labels);
    }
    Ok(out)
}
