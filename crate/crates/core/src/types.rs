//! Domain types shared by every stage: points, poses, scans, sequences,
//! per-point instance labelings and 4D segments.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// A Lidar return in the sensor frame. Coordinates in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        Self { x, y, z, intensity }
    }

    pub fn xyz(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    /// Euclidean distance to the sensor origin.
    pub fn range(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Distance to the sensor in the horizontal plane.
    pub fn planar_range(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// Rigid transform `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

/// Orthonormality tolerance for pose rotations.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Matrix3::identity(), Vector3::new(x, y, z))
    }

    /// Rotation by `yaw` radians about +z followed by a translation.
    pub fn from_yaw_translation(yaw: f64, translation: Vector3<f64>) -> Self {
        let (s, c) = yaw.sin_cos();
        let rotation = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        Self::new(rotation, translation)
    }

    /// Builds a pose from a row-major 3x4 `[R | t]` matrix.
    pub fn from_row_major_3x4(values: &[f64; 12]) -> Self {
        let rotation = Matrix3::new(
            values[0], values[1], values[2], values[4], values[5], values[6], values[8], values[9],
            values[10],
        );
        let translation = Vector3::new(values[3], values[7], values[11]);
        Self::new(rotation, translation)
    }

    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t[0],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t[1],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t[2],
        ]
    }

    /// Largest deviation of `R^T R` from identity, or of `det R` from 1.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.rotation.transpose() * self.rotation - Matrix3::identity();
        let det = (self.rotation.determinant() - 1.0).abs();
        gram.amax().max(det)
    }

    pub fn is_valid(&self) -> bool {
        self.rotation.iter().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite())
            && self.orthonormality_error() <= ROTATION_TOLERANCE
    }

    /// Projects the rotation onto SO(3) (closest rotation in Frobenius norm).
    pub fn orthonormalized(&self) -> Self {
        let svd = self.rotation.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut rotation = u * v_t;
        if rotation.determinant() < 0.0 {
            let mut fix = Matrix3::identity();
            fix[(2, 2)] = -1.0;
            rotation = u * fix * v_t;
        }
        Self::new(rotation, self.translation)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose::new(rt, -(rt * self.translation))
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn apply_point(&self, p: &Point) -> Point {
        let q = self.apply(&p.xyz());
        Point::new(q.x, q.y, q.z, p.intensity)
    }
}

/// One Lidar sweep.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scan {
    pub points: Vec<Point>,
    pub timestep: u32,
    /// Sensor-to-common-frame pose, when odometry is available.
    pub pose: Option<Pose>,
}

impl Scan {
    pub fn new(points: Vec<Point>, timestep: u32) -> Self {
        Self {
            points,
            timestep,
            pose: None,
        }
    }

    pub fn with_pose(mut self, pose: Pose) -> Self {
        self.pose = Some(pose);
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Applies `pose` to every point. Intensity is unchanged.
pub fn transform_scan(scan: &Scan, pose: &Pose) -> Scan {
    Scan {
        points: scan.points.iter().map(|p| pose.apply_point(p)).collect(),
        timestep: scan.timestep,
        pose: scan.pose,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    scans: Vec<Scan>,
    pub frequency_hz: f64,
}

impl Sequence {
    pub fn new(scans: Vec<Scan>, frequency_hz: f64) -> Result<Self> {
        if scans.windows(2).any(|w| w[0].timestep >= w[1].timestep) {
            return Err(Error::InvalidParam(
                "scan timesteps must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            scans,
            frequency_hz,
        })
    }

    pub fn scans(&self) -> &[Scan] {
        &self.scans
    }

    pub fn into_scans(self) -> Vec<Scan> {
        self.scans
    }

    pub fn len(&self) -> usize {
        self.scans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scans.is_empty()
    }
}

pub type InstanceId = u32;

/// Points removed as ground.
pub const GROUND: InstanceId = u32::MAX;
/// Points discarded before or during clustering (noise, ego radius).
pub const UNKNOWN: InstanceId = u32::MAX - 1;

pub fn is_reserved(id: InstanceId) -> bool {
    id == GROUND || id == UNKNOWN
}

/// One instance id per point of a scan.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct InstanceLabeling {
    pub ids: Vec<InstanceId>,
}

impl InstanceLabeling {
    pub fn new(ids: Vec<InstanceId>) -> Self {
        Self { ids }
    }

    pub fn filled(len: usize, id: InstanceId) -> Self {
        Self { ids: vec![id; len] }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Scan-local point address inside a sequence: `(scan index, point index)`.
pub type PointRef = (u32, u32);

/// One object identity across a sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment4D {
    pub id: InstanceId,
    members: Vec<PointRef>,
}

impl Segment4D {
    /// Sorts and deduplicates `members`. Returns `None` when empty.
    pub fn new(id: InstanceId, mut members: Vec<PointRef>) -> Option<Self> {
        members.sort_unstable();
        members.dedup();
        if members.is_empty() {
            None
        } else {
            Some(Self { id, members })
        }
    }

    /// Sorted, duplicate-free members.
    pub fn members(&self) -> &[PointRef] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Groups non-reserved ids of a labeled sequence into 4D segments, ordered by id.
pub fn segments_from_labels(labels: &[InstanceLabeling]) -> Vec<Segment4D> {
    let mut groups: BTreeMap<InstanceId, Vec<PointRef>> = BTreeMap::new();
    for (scan, labeling) in labels.iter().enumerate() {
        for (point, &id) in labeling.ids.iter().enumerate() {
            if !is_reserved(id) {
                groups
                    .entry(id)
                    .or_default()
                    .push((scan as u32, point as u32));
            }
        }
    }
    groups
        .into_iter()
        .filter_map(|(id, members)| Segment4D::new(id, members))
        .collect()
}
