//! KITTI-style file formats.
//!
//! * velodyne `.bin`: packed little-endian `f32` records `(x, y, z, intensity)`.
//! * `poses.txt`: one row-major 3x4 `[R | t]` matrix per line.
//! * `.label`: one little-endian `u32` per point, instance id in the upper
//!   16 bits and semantic class in the lower 16 bits.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::types::{
    is_reserved, InstanceId, InstanceLabeling, Point, Pose, Scan, Sequence, GROUND, UNKNOWN,
};

const BIN_RECORD: usize = 16;

/// Instance field value written for [`UNKNOWN`] points.
pub const LABEL_UNKNOWN_CODE: u16 = 0;
/// Instance field value written for [`GROUND`] points.
pub const LABEL_GROUND_CODE: u16 = 0xFFFF;
/// Largest regular instance id representable in a label file.
pub const MAX_FILE_INSTANCE: u32 = 0xFFFE;

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn decode_kitti_bin(bytes: &[u8]) -> Option<Vec<Point>> {
    if !bytes.len().is_multiple_of(BIN_RECORD) {
        return None;
    }
    let field =
        |rec: &[u8], k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap()) as f64;
    Some(
        bytes
            .chunks_exact(BIN_RECORD)
            .map(|rec| Point::new(field(rec, 0), field(rec, 1), field(rec, 2), field(rec, 3)))
            .collect(),
    )
}

pub fn encode_kitti_bin(points: &[Point]) -> Vec<u8> {
    let mut out = Vec::with_capacity(points.len() * BIN_RECORD);
    for p in points {
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Reads a velodyne scan. The timestep is left at 0 and no pose is attached.
pub fn read_kitti_bin(path: impl AsRef<Path>) -> Result<Scan> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let points = decode_kitti_bin(&bytes).ok_or_else(|| {
        Error::malformed(
            path,
            format!("size {} is not a multiple of {BIN_RECORD}", bytes.len()),
        )
    })?;
    Ok(Scan::new(points, 0))
}

pub fn write_kitti_bin(points: &[Point], path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_kitti_bin(points))
}

pub fn parse_poses(text: &str, path: &Path) -> Result<Vec<Pose>> {
    let mut poses = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map_err(|_| {
                    Error::malformed(path, format!("line {}: bad number {tok:?}", lineno + 1))
                })
            })
            .collect::<Result<_>>()?;
        let values: [f64; 12] = values.as_slice().try_into().map_err(|_| {
            Error::malformed(
                path,
                format!(
                    "line {}: expected 12 values, got {}",
                    lineno + 1,
                    values.len()
                ),
            )
        })?;
        let pose = Pose::from_row_major_3x4(&values);
        if !pose
            .rotation
            .iter()
            .chain(pose.translation.iter())
            .all(|v| v.is_finite())
        {
            return Err(Error::malformed(
                path,
                format!("line {}: non-finite value", lineno + 1),
            ));
        }
        poses.push(
            if pose.orthonormality_error() > crate::types::ROTATION_TOLERANCE {
                pose.orthonormalized()
            } else {
                pose
            },
        );
    }
    Ok(poses)
}

pub fn read_poses(path: impl AsRef<Path>) -> Result<Vec<Pose>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_poses(&text, path)
}

pub fn write_poses(poses: &[Pose], path: impl AsRef<Path>) -> Result<()> {
    let mut text = String::new();
    for pose in poses {
        let row: Vec<String> = pose
            .to_row_major_3x4()
            .iter()
            .map(|v| format!("{v:e}"))
            .collect();
        text.push_str(&row.join(" "));
        text.push('\n');
    }
    write_bytes(path.as_ref(), text.as_bytes())
}

fn encode_instance(id: InstanceId) -> Result<u16> {
    match id {
        GROUND => Ok(LABEL_GROUND_CODE),
        UNKNOWN => Ok(LABEL_UNKNOWN_CODE),
        1..=MAX_FILE_INSTANCE => Ok(id as u16),
        _ => Err(Error::IdOutOfRange(id)),
    }
}

fn decode_instance(code: u16) -> InstanceId {
    match code {
        LABEL_GROUND_CODE => GROUND,
        LABEL_UNKNOWN_CODE => UNKNOWN,
        c => c as InstanceId,
    }
}

fn check_capacity<'a>(labels: impl IntoIterator<Item = &'a InstanceLabeling>) -> Result<()> {
    let mut distinct = std::collections::HashSet::new();
    for labeling in labels {
        distinct.extend(labeling.ids.iter().copied().filter(|&id| !is_reserved(id)));
    }
    if distinct.len() > MAX_FILE_INSTANCE as usize {
        return Err(Error::Capacity {
            distinct: distinct.len(),
            max: MAX_FILE_INSTANCE as usize,
        });
    }
    Ok(())
}

/// Encodes with semantic bits set to 0. Regular ids must lie in `1..=65534`.
pub fn encode_labels(labeling: &InstanceLabeling) -> Result<Vec<u8>> {
    check_capacity([labeling])?;
    let mut out = Vec::with_capacity(labeling.len() * 4);
    for &id in &labeling.ids {
        let record = (encode_instance(id)? as u32) << 16;
        out.extend_from_slice(&record.to_le_bytes());
    }
    Ok(out)
}

/// Decodes raw `(instance, semantic)` records.
pub fn decode_label_records(bytes: &[u8]) -> Option<Vec<(InstanceId, u16)>> {
    if !bytes.len().is_multiple_of(4) {
        return None;
    }
    Some(
        bytes
            .chunks_exact(4)
            .map(|c| {
                let raw = u32::from_le_bytes(c.try_into().unwrap());
                (decode_instance((raw >> 16) as u16), (raw & 0xFFFF) as u16)
            })
            .collect(),
    )
}

pub fn write_labels(labeling: &InstanceLabeling, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_labels(labeling)?)
}

/// Reads `(instance, semantic)` pairs, keeping the semantic class.
pub fn read_label_records(path: impl AsRef<Path>) -> Result<Vec<(InstanceId, u16)>> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    decode_label_records(&bytes).ok_or_else(|| {
        Error::malformed(path, format!("size {} is not a multiple of 4", bytes.len()))
    })
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<InstanceLabeling> {
    Ok(InstanceLabeling::new(
        read_label_records(path)?
            .into_iter()
            .map(|(id, _)| id)
            .collect(),
    ))
}

/// Maps regular ids of a whole sequence onto `1..` in order of first appearance.
pub fn renumber_sequence(labels: &[InstanceLabeling]) -> Result<Vec<InstanceLabeling>> {
    check_capacity(labels)?;
    let mut mapping: BTreeMap<InstanceId, InstanceId> = BTreeMap::new();
    let mut next = 1;
    Ok(labels
        .iter()
        .map(|labeling| {
            InstanceLabeling::new(
                labeling
                    .ids
                    .iter()
                    .map(|&id| {
                        if is_reserved(id) {
                            id
                        } else {
                            *mapping.entry(id).or_insert_with(|| {
                                next += 1;
                                next - 1
                            })
                        }
                    })
                    .collect(),
            )
        })
        .collect())
}

/// Writes a ground mask as one byte per point (1 = ground).
pub fn write_ground_mask(mask: &[bool], path: impl AsRef<Path>) -> Result<()> {
    let bytes: Vec<u8> = mask.iter().map(|&g| g as u8).collect();
    write_bytes(path.as_ref(), &bytes)
}

pub fn read_ground_mask(path: impl AsRef<Path>) -> Result<Vec<bool>> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    bytes
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::malformed(
                path,
                format!("mask byte {other} is not 0 or 1"),
            )),
        })
        .collect()
}

/// Files in `dir` with extension `ext`, sorted by name.
pub fn list_files(dir: impl AsRef<Path>, ext: &str) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == ext) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Standard six-digit scan file name, e.g. `000042.bin`.
pub fn scan_file_name(index: usize, ext: &str) -> String {
    format!("{index:06}.{ext}")
}

/// Reads `<dir>/velodyne/*.bin` in name order, with `<dir>/poses.txt` when
/// present. Scan `k` gets timestep `k`.
pub fn read_sequence_dir(dir: impl AsRef<Path>, frequency_hz: f64) -> Result<Sequence> {
    let dir = dir.as_ref();
    let files = list_files(dir.join("velodyne"), "bin")?;
    let poses_path = dir.join("poses.txt");
    let poses = if poses_path.exists() {
        let poses = read_poses(&poses_path)?;
        if poses.len() != files.len() {
            return Err(Error::malformed(
                &poses_path,
                format!("{} poses for {} scans", poses.len(), files.len()),
            ));
        }
        Some(poses)
    } else {
        None
    };
    let mut scans = Vec::with_capacity(files.len());
    for (k, file) in files.iter().enumerate() {
        let mut scan = read_kitti_bin(file)?;
        scan.timestep = k as u32;
        scan.pose = poses.as_ref().map(|p| p[k]);
        scans.push(scan);
    }
    Sequence::new(scans, frequency_hz)
}

/// Writes scans to `<dir>/velodyne/` and, if every scan has a pose,
/// `<dir>/poses.txt`.
pub fn write_sequence_dir(scans: &[Scan], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    for (k, scan) in scans.iter().enumerate() {
        write_kitti_bin(
            &scan.points,
            dir.join("velodyne").join(scan_file_name(k, "bin")),
        )?;
    }
    let poses: Option<Vec<Pose>> = scans.iter().map(|s| s.pose).collect();
    if let Some(poses) = poses {
        write_poses(&poses, dir.join("poses.txt"))?;
    }
    Ok(())
}

/// Reads every `.label` file of `dir` in name order.
pub fn read_label_dir(dir: impl AsRef<Path>) -> Result<Vec<InstanceLabeling>> {
    list_files(dir, "label")?.iter().map(read_labels).collect()
}

/// Writes `NNNNNN.label` files. Ids must already fit the label format.
pub fn write_label_dir(labels: &[InstanceLabeling], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    check_capacity(labels)?;
    for (k, labeling) in labels.iter().enumerate() {
        write_labels(labeling, dir.join(scan_file_name(k, "label")))?;
    }
    Ok(())
}
