//! Online auto-regressive instance tracking.
//!
//! Each scan is segmented by assigning every point to the query with the
//! largest scalar product. Queries persist across scans, and a query keeps
//! its object id while its barycenter stays within `recycle_distance` of
//! where it was last seen.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, Vector3};

use crate::error::{Error, Result};
use crate::io::scan_file_name;
use crate::matching::{raw_attributes, ToyFeatureModel};
use crate::rng::SeededRng;
use crate::types::{InstanceId, InstanceLabeling, Scan, UNKNOWN};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerParams {
    pub num_queries: usize,
    /// Meters, measured in the sensor frame.
    pub recycle_distance: f64,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            num_queries: 300,
            recycle_distance: 10.0,
        }
    }
}

impl TrackerParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_queries == 0 {
            return Err(Error::InvalidParam("num_queries must be >= 1".into()));
        }
        if !(self.recycle_distance > 0.0) {
            return Err(Error::InvalidParam("recycle_distance must be > 0".into()));
        }
        Ok(())
    }
}

/// Seeded Gaussian `num_queries x dim` matrix used as initial queries.
pub fn initial_queries(num_queries: usize, dim: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = SeededRng::new(seed);
    DMatrix::from_fn(num_queries, dim, |_, _| rng.normal())
}

/// Hands out object ids in increasing order, never twice.
#[derive(Debug, Clone)]
pub struct IdAllocator {
    next: InstanceId,
}

impl Default for IdAllocator {
    fn default() -> Self {
        Self { next: 1 }
    }
}

impl IdAllocator {
    pub fn starting_at(first: InstanceId) -> Self {
        Self { next: first }
    }

    pub fn allocate(&mut self) -> Result<InstanceId> {
        if self.next >= UNKNOWN {
            return Err(Error::Capacity {
                distinct: self.next as usize,
                max: UNKNOWN as usize - 1,
            });
        }
        let id = self.next;
        self.next += 1;
        Ok(id)
    }

    pub fn issued(&self) -> usize {
        self.next as usize - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryState {
    /// `N_q x D`.
    pub embeddings: DMatrix<f64>,
    pub object_id: Vec<Option<InstanceId>>,
    pub last_barycenter: Vec<Option<Vector3<f64>>>,
    pub last_active_timestep: Vec<Option<u32>>,
}

impl QueryState {
    pub fn new(embeddings: DMatrix<f64>) -> Self {
        let n = embeddings.nrows();
        Self {
            embeddings,
            object_id: vec![None; n],
            last_barycenter: vec![None; n],
            last_active_timestep: vec![None; n],
        }
    }

    pub fn num_queries(&self) -> usize {
        self.embeddings.nrows()
    }
}

/// Result of the per-scan argmax.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Assignment {
    pub query_of: Vec<usize>,
    /// Queries with at least one point, ascending.
    pub active: Vec<usize>,
}

/// Assigns each point to its highest-scoring query. Ties go to the lowest
/// query index.
pub fn assign_points(features: &DMatrix<f64>, queries: &DMatrix<f64>) -> Result<Assignment> {
    if features.ncols() != queries.ncols() {
        return Err(Error::Shape(format!(
            "features are {}-dimensional, queries {}-dimensional",
            features.ncols(),
            queries.ncols()
        )));
    }
    if features.nrows() == 0 {
        return Ok(Assignment::default());
    }
    if queries.nrows() == 0 {
        return Err(Error::Shape("no queries".into()));
    }
    let scores = features * queries.transpose();
    let mut hit = vec![false; queries.nrows()];
    let query_of: Vec<usize> = scores
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for q in 1..row.len() {
                if row[q] > row[best] {
                    best = q;
                }
            }
            hit[best] = true;
            best
        })
        .collect();
    let active = (0..hit.len()).filter(|&q| hit[q]).collect();
    Ok(Assignment { query_of, active })
}

/// Mean position of the points of each active query, in `active` order.
pub fn barycenters(scan: &Scan, assignment: &Assignment) -> Vec<Vector3<f64>> {
    let n_q = assignment.active.last().map_or(0, |&q| q + 1);
    let mut sum = vec![Vector3::zeros(); n_q];
    let mut count = vec![0usize; n_q];
    for (p, &q) in scan.points.iter().zip(&assignment.query_of) {
        sum[q] += p.xyz();
        count[q] += 1;
    }
    assignment
        .active
        .iter()
        .map(|&q| sum[q] / count[q] as f64)
        .collect()
}

/// Updates ids of the active queries. A query keeps its id only when its new
/// barycenter lies within `recycle_distance` of the one stored at its last
/// activation.
pub fn recycle(
    state: &mut QueryState,
    active: &[usize],
    barycenters: &[Vector3<f64>],
    t: u32,
    params: &TrackerParams,
    ids: &mut IdAllocator,
) -> Result<()> {
    if active.len() != barycenters.len() {
        return Err(Error::Shape(format!(
            "{} active queries but {} barycenters",
            active.len(),
            barycenters.len()
        )));
    }
    for (&q, b) in active.iter().zip(barycenters) {
        let keep = match (state.object_id[q], state.last_barycenter[q]) {
            (Some(_), Some(prev)) => (b - prev).norm() <= params.recycle_distance,
            _ => false,
        };
        if !keep {
            state.object_id[q] = Some(ids.allocate()?);
        }
        state.last_barycenter[q] = Some(*b);
        state.last_active_timestep[q] = Some(t);
    }
    Ok(())
}

/// Source of per-point features and refined queries for one scan.
pub trait FeatureProvider {
    /// Returns `(N_p x D features, N_q x D output queries)` for scan `index`
    /// given the queries carried over from the previous scan.
    fn step(
        &mut self,
        index: usize,
        scan: &Scan,
        queries: &DMatrix<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)>;
}

/// Linear features from raw point attributes; queries pass through unchanged.
#[derive(Debug, Clone)]
pub struct ToyProvider {
    pub model: ToyFeatureModel,
}

impl FeatureProvider for ToyProvider {
    fn step(
        &mut self,
        _index: usize,
        scan: &Scan,
        queries: &DMatrix<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        Ok((self.model.features(&raw_attributes(scan)), queries.clone()))
    }
}

/// Reads precomputed features from `<dir>/NNNNNN.feat`.
///
/// File layout: `u32` point count, `u32` D, `u32` N_q (little endian), then
/// the row-major `f32` feature matrix and the row-major `f32` query matrix.
#[derive(Debug, Clone)]
pub struct FileFeatureProvider {
    pub dir: PathBuf,
}

impl FileFeatureProvider {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
}

impl FeatureProvider for FileFeatureProvider {
    fn step(
        &mut self,
        index: usize,
        scan: &Scan,
        _queries: &DMatrix<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let path = self.dir.join(scan_file_name(index, "feat"));
        let (features, queries) = read_feature_file(&path)?;
        if features.nrows() != scan.len() {
            return Err(Error::Provider(format!(
                "{}: {} feature rows for {} points",
                path.display(),
                features.nrows(),
                scan.len()
            )));
        }
        Ok((features, queries))
    }
}

pub fn encode_feature_file(features: &DMatrix<f64>, queries: &DMatrix<f64>) -> Result<Vec<u8>> {
    if features.ncols() != queries.ncols() {
        return Err(Error::Shape("feature and query widths differ".into()));
    }
    let mut out = Vec::with_capacity(12 + 4 * (features.len() + queries.len()));
    for v in [features.nrows(), features.ncols(), queries.nrows()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for m in [features, queries] {
        for row in m.row_iter() {
            for &v in row.iter() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode_feature_file(bytes: &[u8]) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let word = |k: usize| -> Option<usize> {
        Some(u32::from_le_bytes(bytes.get(4 * k..4 * k + 4)?.try_into().ok()?) as usize)
    };
    let (n_p, dim, n_q) = (word(0)?, word(1)?, word(2)?);
    let expected = 12 + 4 * (n_p + n_q).checked_mul(dim)?;
    if bytes.len() != expected {
        return None;
    }
    let value = |k: usize| {
        let at = 12 + 4 * k;
        f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as f64
    };
    let features = DMatrix::from_fn(n_p, dim, |i, j| value(i * dim + j));
    let queries = DMatrix::from_fn(n_q, dim, |i, j| value((n_p + i) * dim + j));
    Some((features, queries))
}

pub fn write_feature_file(
    features: &DMatrix<f64>,
    queries: &DMatrix<f64>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_feature_file(features, queries)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature_file(&bytes)
        .ok_or_else(|| Error::malformed(path, "header does not match payload size"))
}

/// Runs the tracker over a sequence. The queries used (and carried to the
/// next scan) are the provider's output queries.
pub fn track_sequence(
    scans: &[Scan],
    provider: &mut dyn FeatureProvider,
    params: &TrackerParams,
    initial: DMatrix<f64>,
) -> Result<Vec<InstanceLabeling>> {
    params.validate()?;
    if initial.nrows() != params.num_queries {
        return Err(Error::Shape(format!(
            "{} initial queries, expected {}",
            initial.nrows(),
            params.num_queries
        )));
    }
    let mut state = QueryState::new(initial);
    let mut ids = IdAllocator::default();
    let mut out = Vec::with_capacity(scans.len());
    for (index, scan) in scans.iter().enumerate() {
        let (features, queries) = provider.step(index, scan, &state.embeddings)?;
        if queries.nrows() != params.num_queries {
            return Err(Error::Provider(format!(
                "scan {index}: provider returned {} queries, expected {}",
                queries.nrows(),
                params.num_queries
            )));
        }
        if features.nrows() != scan.len() {
            return Err(Error::Provider(format!(
                "scan {index}: {} feature rows for {} points",
                features.nrows(),
                scan.len()
            )));
        }
        let assignment = assign_points(&features, &queries)?;
        let centers = barycenters(scan, &assignment);
        state.embeddings = queries;
        recycle(
            &mut state,
            &assignment.active,
            &centers,
            scan.timestep,
            params,
            &mut ids,
        )?;
        out.push(InstanceLabeling::new(
            assignment
                .query_of
                .iter()
                .map(|&q| state.object_id[q].expect("active query has an id"))
                .collect(),
        ));
    }
    Ok(out)
}
