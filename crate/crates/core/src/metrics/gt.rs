use std::collections::BTreeMap;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::kdtree::KdTree;
use crate::types::{InstanceId, InstanceLabeling, Scan, UNKNOWN};

/// Oriented 3D box of one annotated object in one scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxAnnotation {
    /// Identity of the object across scans.
    pub id: InstanceId,
    pub center: Vector3<f64>,
    /// Full extents along the box axes.
    pub size: Vector3<f64>,
    /// Rotation about z, radians.
    pub yaw: f64,
    pub class: u16,
}

impl BoxAnnotation {
    /// Box-frame coordinates of `p`.
    fn local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let d = p - self.center;
        let (s, c) = self.yaw.sin_cos();
        Vector3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z)
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        let l = self.local(p);
        (0..3).all(|k| l[k].abs() <= 0.5 * self.size[k])
    }
}

/// Instance labels from boxes and per-point semantic classes.
///
/// A point inside a box of its own class takes that box's id (the closest
/// center wins when boxes overlap). Remaining points of a boxed class join
/// the nearest instance of their class if it is closer than `relax_radius`.
/// Everything else is [`UNKNOWN`].
pub fn build_instance_gt(
    scans: &[Scan],
    semantics: &[Vec<u16>],
    boxes: &[Vec<BoxAnnotation>],
    relax_radius: f64,
) -> Result<Vec<InstanceLabeling>> {
    if scans.len() != semantics.len() || scans.len() != boxes.len() {
        return Err(Error::Shape(format!(
            "{} scans, {} semantic files, {} box lists",
            scans.len(),
            semantics.len(),
            boxes.len()
        )));
    }
    let mut out = Vec::with_capacity(scans.len());
    for (k, ((scan, sem), boxes)) in scans.iter().zip(semantics).zip(boxes).enumerate() {
        if sem.len() != scan.len() {
            return Err(Error::Shape(format!(
                "scan {k}: {} semantic labels for {} points",
                sem.len(),
                scan.len()
            )));
        }
        if let Some(b) = boxes.iter().find(|b| !(b.size.min() > 0.0)) {
            return Err(Error::InvalidParam(format!(
                "box {} in scan {k} has non-positive size",
                b.id
            )));
        }
        let mut ids = vec![UNKNOWN; scan.len()];
        for (i, p) in scan.points.iter().enumerate() {
            let xyz = p.xyz();
            ids[i] = boxes
                .iter()
                .filter(|b| b.class == sem[i] && b.contains(&xyz))
                .min_by(|a, b| {
                    (a.center - xyz)
                        .norm_squared()
                        .total_cmp(&(b.center - xyz).norm_squared())
                })
                .map_or(UNKNOWN, |b| b.id);
        }

        // relaxation, class by class against the boxed points
        let mut by_class: BTreeMap<u16, Vec<usize>> = BTreeMap::new();
        for (i, &id) in ids.iter().enumerate() {
            if id != UNKNOWN {
                by_class.entry(sem[i]).or_default().push(i);
            }
        }
        let r2 = relax_radius * relax_radius;
        let mut relaxed = ids.clone();
        for (class, members) in &by_class {
            let coords: Vec<f64> = members
                .iter()
                .flat_map(|&i| {
                    let p = &scan.points[i];
                    [p.x, p.y, p.z]
                })
                .collect();
            let tree = KdTree::new(&coords, 3);
            for (i, p) in scan.points.iter().enumerate() {
                if ids[i] != UNKNOWN || sem[i] != *class {
                    continue;
                }
                if let Some((d2, j)) = tree.nearest(&[p.x, p.y, p.z]) {
                    if d2 < r2 {
                        relaxed[i] = ids[members[j]];
                    }
                }
            }
        }
        out.push(InstanceLabeling::new(relaxed));
    }
    Ok(out)
}
