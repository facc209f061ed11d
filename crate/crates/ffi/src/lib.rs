//! C ABI over `seg4d`.
//!
//! Every fallible function returns a [`Seg4dStatus`]. On failure a message
//! is kept per thread and can be read with [`seg4d_last_error`]. Arrays are
//! row-major and owned by the caller; handles are owned by the library and
//! released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use nalgebra::{DMatrix, Vector3};
use seg4d::hdbscan::{hdbscan, HdbscanParams};
use seg4d::matching::hungarian;
use seg4d::metrics::{best_iou, filter_small, s_assoc_scanwise, s_assoc_temporal, EvalPair};
use seg4d::stitch::{convex_hull, mc_iou};
use seg4d::tracker::{assign_points, barycenters, recycle, IdAllocator, QueryState, TrackerParams};
use seg4d::{Error, InstanceLabeling, Point, Scan};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Seg4dStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Io = 4,
    UndefinedMetric = 5,
    DegenerateGeometry = 6,
    Capacity = 7,
    Internal = 99,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> Seg4dStatus {
    match err {
        Error::Io { .. } | Error::Malformed { .. } => Seg4dStatus::Io,
        Error::Shape(_) | Error::AbsentObject(_) | Error::DegenerateObject(_) => {
            Seg4dStatus::ShapeMismatch
        }
        Error::UndefinedMetric(_) => Seg4dStatus::UndefinedMetric,
        Error::DegenerateGeometry(_) => Seg4dStatus::DegenerateGeometry,
        Error::Capacity { .. } | Error::IdOutOfRange(_) => Seg4dStatus::Capacity,
        _ => Seg4dStatus::InvalidArgument,
    }
}

enum Failure {
    Null(&'static str),
    Invalid(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> Seg4dStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => Seg4dStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(&format!("{what} is null"));
            Seg4dStatus::NullPointer
        }
        Ok(Err(Failure::Invalid(msg))) => {
            set_error(&msg);
            Seg4dStatus::InvalidArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            Seg4dStatus::Internal
        }
    }
}

/// Borrows `len` items; a null pointer is only accepted when `len == 0`.
unsafe fn input<'a, T>(ptr: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        Ok(&[])
    } else if ptr.is_null() {
        Err(Failure::Null(what))
    } else {
        Ok(slice::from_raw_parts(ptr, len))
    }
}

unsafe fn output<'a, T>(
    ptr: *mut T,
    len: usize,
    what: &'static str,
) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        Ok(&mut [])
    } else if ptr.is_null() {
        Err(Failure::Null(what))
    } else {
        Ok(slice::from_raw_parts_mut(ptr, len))
    }
}

fn checked_len(a: usize, b: usize) -> Result<usize, Failure> {
    a.checked_mul(b)
        .ok_or_else(|| Failure::Invalid("array size overflows".into()))
}

/// Message of the last failed call on this thread. Valid until the next
/// failing call on the same thread; never null.
#[no_mangle]
pub extern "C" fn seg4d_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn seg4d_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Minimum-cost assignment on a `rows x cols` cost matrix (rows = queries,
/// columns = objects). `out_query_of_object[o]` receives the query matched
/// to object `o`, or -1. `out_total` may be null.
///
/// # Safety
/// `cost` holds `rows * cols` doubles; `out_query_of_object` holds `cols`.
#[no_mangle]
pub unsafe extern "C" fn seg4d_hungarian(
    cost: *const f64,
    rows: usize,
    cols: usize,
    out_query_of_object: *mut i64,
    out_total: *mut f64,
) -> Seg4dStatus {
    guard(|| {
        let c = input(cost, checked_len(rows, cols)?, "cost")?;
        let out = output(out_query_of_object, cols, "out_query_of_object")?;
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Failure::Invalid("cost entries must be finite".into()));
        }
        let m = hungarian(&DMatrix::from_row_slice(rows, cols, c));
        out.fill(-1);
        for &(o, q) in &m.pairs {
            out[o] = q as i64;
        }
        if !out_total.is_null() {
            *out_total = m.total_cost;
        }
        Ok(())
    })
}

/// HDBSCAN over `n` points of dimension `dim`. Writes one label per point,
/// -1 for noise.
///
/// # Safety
/// `data` holds `n * dim` doubles; `out_labels` holds `n` ints.
#[no_mangle]
pub unsafe extern "C" fn seg4d_hdbscan(
    data: *const f64,
    n: usize,
    dim: usize,
    min_samples: usize,
    min_cluster_size: usize,
    out_labels: *mut i32,
) -> Seg4dStatus {
    guard(|| {
        if dim == 0 || min_samples == 0 || min_cluster_size < 2 {
            return Err(Failure::Invalid(
                "need dim >= 1, min_samples >= 1, min_cluster_size >= 2".into(),
            ));
        }
        let d = input(data, checked_len(n, dim)?, "data")?;
        let out = output(out_labels, n, "out_labels")?;
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Failure::Invalid("coordinates must be finite".into()));
        }
        let params = HdbscanParams {
            min_samples,
            min_cluster_size,
        };
        out.copy_from_slice(&hdbscan(d, dim, params));
        Ok(())
    })
}

/// Monte-Carlo IoU between the convex hulls of two point sets (`xyz`
/// triples). Returns `SEG4D_STATUS_DEGENERATE_GEOMETRY` if either set is
/// flat or has fewer than four points.
///
/// # Safety
/// `a` holds `3 * a_len` doubles, `b` holds `3 * b_len`; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn seg4d_mc_iou(
    a: *const f64,
    a_len: usize,
    b: *const f64,
    b_len: usize,
    samples: usize,
    seed: u64,
    out: *mut f64,
) -> Seg4dStatus {
    guard(|| {
        let to_points = |s: &[f64]| -> Vec<Vector3<f64>> {
            s.chunks_exact(3)
                .map(|c| Vector3::new(c[0], c[1], c[2]))
                .collect()
        };
        let ha = convex_hull(&to_points(input(a, checked_len(a_len, 3)?, "a")?))?;
        let hb = convex_hull(&to_points(input(b, checked_len(b_len, 3)?, "b")?))?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        if samples == 0 {
            return Err(Failure::Invalid("samples must be >= 1".into()));
        }
        *out = mc_iou(&ha, &hb, samples, seed);
        Ok(())
    })
}

/// Accumulates labeled scans and computes association scores.
pub struct Seg4dEvaluator {
    gt: Vec<InstanceLabeling>,
    pred: Vec<InstanceLabeling>,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Seg4dScores {
    pub s_assoc_temporal: f64,
    pub s_assoc_scanwise: f64,
    pub best_iou: f64,
    pub num_gt: usize,
    pub num_pred: usize,
}

#[no_mangle]
pub extern "C" fn seg4d_evaluator_new() -> *mut Seg4dEvaluator {
    Box::into_raw(Box::new(Seg4dEvaluator {
        gt: Vec::new(),
        pred: Vec::new(),
    }))
}

/// Releases an evaluator. Null is ignored.
///
/// # Safety
/// `ev` comes from [`seg4d_evaluator_new`] and is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn seg4d_evaluator_free(ev: *mut Seg4dEvaluator) {
    if !ev.is_null() {
        drop(Box::from_raw(ev));
    }
}

/// Appends one scan. Ids use the `.label` convention: 0 unknown, 0xFFFF
/// ground, anything else an instance.
///
/// # Safety
/// `gt` and `pred` hold `n` ids each; `ev` is a live evaluator.
#[no_mangle]
pub unsafe extern "C" fn seg4d_evaluator_add_scan(
    ev: *mut Seg4dEvaluator,
    gt: *const u32,
    pred: *const u32,
    n: usize,
) -> Seg4dStatus {
    guard(|| {
        let ev = ev.as_mut().ok_or(Failure::Null("ev"))?;
        let convert = |ids: &[u32]| {
            InstanceLabeling::new(
                ids.iter()
                    .map(|&id| match id {
                        0 => seg4d::UNKNOWN,
                        0xFFFF => seg4d::GROUND,
                        other => other,
                    })
                    .collect(),
            )
        };
        ev.gt.push(convert(input(gt, n, "gt")?));
        ev.pred.push(convert(input(pred, n, "pred")?));
        Ok(())
    })
}

/// Scores of all scans added so far. `min_points > 0` applies the per-scan
/// small ground-truth filter.
///
/// # Safety
/// `ev` is a live evaluator; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn seg4d_evaluator_compute(
    ev: *const Seg4dEvaluator,
    min_points: usize,
    out: *mut Seg4dScores,
) -> Seg4dStatus {
    guard(|| {
        let ev = ev.as_ref().ok_or(Failure::Null("ev"))?;
        let out = out.as_mut().ok_or(Failure::Null("out"))?;
        let mut pair = EvalPair::from_labels(&ev.gt, &ev.pred)?;
        if min_points > 0 {
            pair = filter_small(&pair, min_points);
        }
        *out = Seg4dScores {
            s_assoc_temporal: s_assoc_temporal(&pair)?,
            s_assoc_scanwise: s_assoc_scanwise(&pair)?,
            best_iou: best_iou(&pair)?,
            num_gt: pair.ground_truth.len(),
            num_pred: pair.predictions.len(),
        };
        Ok(())
    })
}

/// Online tracker state.
pub struct Seg4dTracker {
    state: QueryState,
    params: TrackerParams,
    ids: IdAllocator,
}

/// Creates a tracker from `num_queries x dim` initial queries. Writes null
/// to `out` on failure.
///
/// # Safety
/// `queries` holds `num_queries * dim` doubles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn seg4d_tracker_new(
    queries: *const f64,
    num_queries: usize,
    dim: usize,
    recycle_distance: f64,
    out: *mut *mut Seg4dTracker,
) -> Seg4dStatus {
    if !out.is_null() {
        *out = ptr::null_mut();
    }
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        if dim == 0 {
            return Err(Failure::Invalid("dim must be >= 1".into()));
        }
        let params = TrackerParams {
            num_queries,
            recycle_distance,
        };
        params.validate()?;
        let q = input(queries, checked_len(num_queries, dim)?, "queries")?;
        let tracker = Seg4dTracker {
            state: QueryState::new(DMatrix::from_row_slice(num_queries, dim, q)),
            params,
            ids: IdAllocator::default(),
        };
        *out = Box::into_raw(Box::new(tracker));
        Ok(())
    })
}

/// Releases a tracker. Null is ignored.
///
/// # Safety
/// `tr` comes from [`seg4d_tracker_new`] and is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn seg4d_tracker_free(tr: *mut Seg4dTracker) {
    if !tr.is_null() {
        drop(Box::from_raw(tr));
    }
}

/// Processes one scan of `n` points. `xyz` are sensor-frame coordinates,
/// `features` the `n x dim` point features. `next_queries` (nullable)
/// replaces the query embeddings before assignment, as a network's output
/// queries would. Object ids are written to `out_ids`.
///
/// # Safety
/// Array lengths as described; `tr` is a live tracker.
#[no_mangle]
pub unsafe extern "C" fn seg4d_tracker_step(
    tr: *mut Seg4dTracker,
    xyz: *const f64,
    features: *const f64,
    n: usize,
    next_queries: *const f64,
    timestep: u32,
    out_ids: *mut u32,
) -> Seg4dStatus {
    guard(|| {
        let tr = tr.as_mut().ok_or(Failure::Null("tr"))?;
        let (nq, dim) = tr.state.embeddings.shape();
        let xyz = input(xyz, checked_len(n, 3)?, "xyz")?;
        let f = input(features, checked_len(n, dim)?, "features")?;
        let out = output(out_ids, n, "out_ids")?;
        if !next_queries.is_null() {
            let q = slice::from_raw_parts(next_queries, nq * dim);
            tr.state.embeddings = DMatrix::from_row_slice(nq, dim, q);
        }
        let scan = Scan::new(
            xyz.chunks_exact(3)
                .map(|c| Point::new(c[0], c[1], c[2], 0.0))
                .collect(),
            timestep,
        );
        let assignment = assign_points(&DMatrix::from_row_slice(n, dim, f), &tr.state.embeddings)?;
        let centers = barycenters(&scan, &assignment);
        recycle(
            &mut tr.state,
            &assignment.active,
            &centers,
            timestep,
            &tr.params,
            &mut tr.ids,
        )?;
        for (o, &q) in out.iter_mut().zip(&assignment.query_of) {
            *o = tr.state.object_id[q].expect("active query has an id");
        }
        Ok(())
    })
}
