use std::collections::HashSet;

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Closed convex polytope with outward-oriented triangular faces.
#[derive(Debug, Clone, PartialEq)]
pub struct Hull3D {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
    planes: Vec<(Vector3<f64>, f64)>,
    lo: Vector3<f64>,
    hi: Vector3<f64>,
}

struct Face {
    v: [usize; 3],
    normal: Vector3<f64>,
    offset: f64,
    alive: bool,
}

fn make_face(pts: &[Vector3<f64>], v: [usize; 3], inside: &Vector3<f64>) -> Face {
    let (a, b, c) = (pts[v[0]], pts[v[1]], pts[v[2]]);
    let mut v = v;
    let mut normal = (b - a).cross(&(c - a));
    let norm = normal.norm();
    if norm > 0.0 {
        normal /= norm;
    }
    if normal.dot(&(inside - a)) > 0.0 {
        normal = -normal;
        v.swap(1, 2);
    }
    Face {
        v,
        normal,
        offset: normal.dot(&a),
        alive: true,
    }
}

/// Incremental convex hull. Fails when fewer than four points are given or
/// all points lie (nearly) on a plane.
pub fn convex_hull(points: &[Vector3<f64>]) -> Result<Hull3D> {
    if points.len() < 4 {
        return Err(Error::DegenerateGeometry("fewer than 4 points"));
    }
    let scale = points
        .iter()
        .map(|p| (p - points[0]).amax())
        .fold(0.0, f64::max);
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::DegenerateGeometry("coincident points"));
    }
    let eps = 1e-10 * scale;

    let far = |key: &dyn Fn(&Vector3<f64>) -> f64| {
        (0..points.len())
            .max_by(|&i, &j| key(&points[i]).total_cmp(&key(&points[j])))
            .unwrap()
    };
    let i0 = 0;
    let i1 = far(&|p| (p - points[i0]).norm());
    let axis = (points[i1] - points[i0]).normalize();
    let i2 = far(&|p| (p - points[i0]).cross(&axis).norm());
    let n = (points[i1] - points[i0]).cross(&(points[i2] - points[i0]));
    if n.norm() <= eps * scale {
        return Err(Error::DegenerateGeometry("collinear points"));
    }
    let n = n.normalize();
    let i3 = far(&|p| n.dot(&(p - points[i0])).abs());
    if n.dot(&(points[i3] - points[i0])).abs() <= eps {
        return Err(Error::DegenerateGeometry("coplanar points"));
    }

    let inside = (points[i0] + points[i1] + points[i2] + points[i3]) / 4.0;
    let mut faces: Vec<Face> = [[i0, i1, i2], [i0, i1, i3], [i0, i2, i3], [i1, i2, i3]]
        .into_iter()
        .map(|f| make_face(points, f, &inside))
        .collect();

    for (p, pt) in points.iter().enumerate() {
        if [i0, i1, i2, i3].contains(&p) {
            continue;
        }
        let visible: Vec<usize> = (0..faces.len())
            .filter(|&f| faces[f].alive && faces[f].normal.dot(pt) - faces[f].offset > eps)
            .collect();
        if visible.is_empty() {
            continue;
        }
        let mut edges = HashSet::new();
        for &f in &visible {
            let v = faces[f].v;
            for k in 0..3 {
                edges.insert((v[k], v[(k + 1) % 3]));
            }
            faces[f].alive = false;
        }
        let mut horizon: Vec<(usize, usize)> = edges
            .iter()
            .copied()
            .filter(|&(a, b)| !edges.contains(&(b, a)))
            .collect();
        horizon.sort_unstable();
        for (a, b) in horizon {
            faces.push(make_face(points, [a, b, p], &inside));
        }
    }

    // compact to the vertices actually used
    let mut remap = vec![usize::MAX; points.len()];
    let mut vertices = Vec::new();
    let mut out_faces = Vec::new();
    let mut planes = Vec::new();
    for f in faces.iter().filter(|f| f.alive) {
        let mut tri = [0; 3];
        for (k, &v) in f.v.iter().enumerate() {
            if remap[v] == usize::MAX {
                remap[v] = vertices.len();
                vertices.push(points[v]);
            }
            tri[k] = remap[v];
        }
        out_faces.push(tri);
        planes.push((f.normal, f.offset));
    }
    let lo = vertices.iter().fold(vertices[0], |m, v| m.inf(v));
    let hi = vertices.iter().fold(vertices[0], |m, v| m.sup(v));
    Ok(Hull3D {
        vertices,
        faces: out_faces,
        planes,
        lo,
        hi,
    })
}

impl Hull3D {
    pub fn volume(&self) -> f64 {
        let o = self.vertices[0];
        self.faces
            .iter()
            .map(|f| {
                let (a, b, c) = (
                    self.vertices[f[0]] - o,
                    self.vertices[f[1]] - o,
                    self.vertices[f[2]] - o,
                );
                a.dot(&b.cross(&c))
            })
            .sum::<f64>()
            / 6.0
    }

    /// Inclusive test with an absolute tolerance.
    pub fn contains_within(&self, p: &Vector3<f64>, tol: f64) -> bool {
        self.planes.iter().all(|(n, d)| n.dot(p) - d <= tol)
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        self.contains_within(p, 0.0)
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        (self.lo, self.hi)
    }
}
