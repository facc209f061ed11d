//! Patch-wise ground segmentation.
//!
//! The horizontal plane around the sensor is split into concentric rings and
//! angular sectors. In every patch a plane is seeded from the lowest points,
//! refit by least squares a fixed number of times, and points close to the
//! final plane are labelled ground.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::error::{Error, Result};
use crate::types::Scan;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundParams {
    /// Height of the sensor above the ground, meters.
    pub sensor_height: f64,
    /// Seeds are points less than this above the lowest candidate.
    pub seed_threshold: f64,
    /// Points within this distance of the patch plane are ground.
    pub distance_threshold: f64,
    /// Points closer than this (horizontally) are never ground.
    pub min_range: f64,
    /// Outer radius of the ring model; farther points join the last ring.
    pub max_range: f64,
    /// Seed candidates must lie below `-sensor_height + seed_margin`.
    pub seed_margin: f64,
    pub num_rings: usize,
    pub num_sectors: usize,
    pub iterations: usize,
}

impl Default for GroundParams {
    fn default() -> Self {
        Self {
            sensor_height: 1.840,
            seed_threshold: 0.5,
            distance_threshold: 0.25,
            min_range: 2.0,
            max_range: 80.0,
            seed_margin: 1.0,
            num_rings: 4,
            num_sectors: 32,
            iterations: 3,
        }
    }
}

impl GroundParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sensor_height", self.sensor_height),
            ("seed_threshold", self.seed_threshold),
            ("distance_threshold", self.distance_threshold),
            ("seed_margin", self.seed_margin),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::InvalidParam(format!("{name} must be > 0")));
            }
        }
        if !(self.min_range >= 0.0) || !(self.max_range > self.min_range) {
            return Err(Error::InvalidParam(
                "need 0 <= min_range < max_range".into(),
            ));
        }
        if self.num_rings == 0 || self.num_sectors == 0 || self.iterations == 0 {
            return Err(Error::InvalidParam(
                "num_rings, num_sectors and iterations must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Outer edge of each ring. Ring widths double moving outwards.
    pub fn ring_edges(&self) -> Vec<f64> {
        let span = self.max_range - self.min_range;
        (1..=self.num_rings)
            .map(|k| self.min_range + span / f64::powi(2.0, (self.num_rings - k) as i32))
            .collect()
    }

    pub fn sector_angle(&self) -> f64 {
        std::f64::consts::TAU / self.num_sectors as f64
    }
}

/// Per-point ground flags.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GroundMask(pub Vec<bool>);

impl GroundMask {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&g| g).count()
    }
}

#[derive(Debug, Clone, Copy)]
struct Plane {
    normal: Vector3<f64>,
    centroid: Vector3<f64>,
}

impl Plane {
    fn distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(&(p - self.centroid)).abs()
    }
}

/// Least-squares plane through `points`, normal pointing up.
fn fit_plane(points: &[Vector3<f64>]) -> Option<Plane> {
    if points.len() < 3 {
        return None;
    }
    let n = points.len() as f64;
    let centroid = points.iter().fold(Vector3::zeros(), |acc, p| acc + p) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov / n);
    let k = eig.eigenvalues.imin();
    let mut normal: Vector3<f64> = eig.eigenvectors.column(k).into();
    if normal.z < 0.0 {
        normal = -normal;
    }
    Some(Plane { normal, centroid })
}

fn patch_of(params: &GroundParams, edges: &[f64], x: f64, y: f64) -> Option<(usize, usize)> {
    let r = x.hypot(y);
    if r < params.min_range {
        return None;
    }
    let ring = edges.partition_point(|&e| e <= r).min(params.num_rings - 1);
    let theta = y.atan2(x).rem_euclid(std::f64::consts::TAU);
    let sector = ((theta / params.sector_angle()) as usize).min(params.num_sectors - 1);
    Some((ring, sector))
}

fn estimate_plane(params: &GroundParams, pts: &[Vector3<f64>]) -> Option<Plane> {
    let ceiling = -params.sensor_height + params.seed_margin;
    let lowest = pts
        .iter()
        .map(|p| p.z)
        .filter(|&z| z < ceiling)
        .fold(f64::INFINITY, f64::min);
    if !lowest.is_finite() {
        return None;
    }
    let seeds: Vec<Vector3<f64>> = pts
        .iter()
        .filter(|p| p.z < ceiling && p.z < lowest + params.seed_threshold)
        .copied()
        .collect();
    let mut plane = fit_plane(&seeds)?;
    for _ in 1..params.iterations {
        let inliers: Vec<Vector3<f64>> = pts
            .iter()
            .filter(|p| plane.distance(p) < params.distance_threshold)
            .copied()
            .collect();
        match fit_plane(&inliers) {
            Some(refit) => plane = refit,
            None => break,
        }
    }
    Some(plane)
}

/// Flags ground points of one scan (sensor frame, z up).
pub fn segment_ground(scan: &Scan, params: &GroundParams) -> Result<GroundMask> {
    if scan.is_empty() {
        return Err(Error::EmptyInput("scan has no points"));
    }
    params.validate()?;
    let edges = params.ring_edges();
    let (rings, sectors) = (params.num_rings, params.num_sectors);
    let mut patches: Vec<Vec<usize>> = vec![Vec::new(); rings * sectors];
    for (i, p) in scan.points.iter().enumerate() {
        if let Some((r, s)) = patch_of(params, &edges, p.x, p.y) {
            patches[r * sectors + s].push(i);
        }
    }

    let mut mask = vec![false; scan.len()];
    let mut planes: Vec<Option<Plane>> = vec![None; rings * sectors];
    for ring in 0..rings {
        for sector in 0..sectors {
            let idx = ring * sectors + sector;
            let pts: Vec<Vector3<f64>> =
                patches[idx].iter().map(|&i| scan.points[i].xyz()).collect();
            let own = if pts.len() >= 3 {
                estimate_plane(params, &pts)
            } else {
                None
            };
            // sparse patches borrow the closest inner plane of their sector
            let plane = own.or_else(|| (ring > 0).then(|| planes[idx - sectors]).flatten());
            planes[idx] = plane;
            if let Some(plane) = plane {
                for (&i, p) in patches[idx].iter().zip(&pts) {
                    mask[i] = plane.distance(p) < params.distance_threshold;
                }
            }
        }
    }
    Ok(GroundMask(mask))
}
