//! Filesystem formats for every pipeline artifact: frame files,
//! reconstructed clouds with their metadata sidecars, classification
//! records, ground-truth labels, and the run manifest.
//!
//! Numeric text uses the f64 `Display` form, which round-trips exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};

use crate::geometry::{Frame, Point3, RigidTransform};
use crate::labels::ClassLabel;
use crate::registration::{PairResidual, ReconstructedCloud};
use crate::vlm::ClassificationResult;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("no frame files in {0}")]
    EmptyDirectory(String),
    #[error("{file}:{line}: malformed line {text:?}")]
    MalformedLine {
        file: String,
        line: usize,
        text: String,
    },
    #[error("{file}: {source}")]
    MalformedJson {
        file: String,
        source: serde_json::Error,
    },
    #[error("{file}: ground truth: {reason}")]
    MalformedGroundTruth { file: String, reason: String },
}

fn io_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

/// Reads per-frame ASCII files ("x y z" per line, #-comments allowed)
/// from a directory, ordered by filename. Timestamps are assigned by
/// position. Every malformed line is reported with its file and line
/// number.
pub fn ingest_frames(dir: &Path) -> Result<Vec<Frame>, IoError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|entry| entry.ok())
        .map(|entry| entry.path())
        .filter(|p| {
            p.is_file()
                && !p
                    .file_name()
                    .and_then(|n| n.to_str())
                    .map(|n| n.starts_with('.'))
                    .unwrap_or(true)
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(IoError::EmptyDirectory(dir.display().to_string()));
    }
    let mut frames = Vec::with_capacity(paths.len());
    for (index, path) in paths.iter().enumerate() {
        let text = read_text(path)?;
        let mut points = Vec::new();
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let parsed: Option<Vec<f64>> =
                fields.iter().map(|f| f.parse::<f64>().ok()).collect();
            match parsed {
                Some(v) if fields.len() == 3 => {
                    points.push(Point3::new(v[0], v[1], v[2]));
                }
                _ => {
                    return Err(IoError::MalformedLine {
                        file: path.display().to_string(),
                        line: line_no + 1,
                        text: line.to_string(),
                    })
                }
            }
        }
        frames.push(Frame::new(index as f64, points));
    }
    Ok(frames)
}

/// Writes frames as zero-padded "frame_NNNNNN.txt" files that
/// `ingest_frames` reads back exactly.
pub fn write_frames(dir: &Path, frames: &[Frame]) -> Result<Vec<PathBuf>, IoError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut paths = Vec::with_capacity(frames.len());
    for (index, frame) in frames.iter().enumerate() {
        let path = dir.join(format!("frame_{index:06}.txt"));
        let mut text = String::with_capacity(frame.points.len() * 24);
        for p in &frame.points {
            let _ = writeln!(text, "{} {} {}", p.x, p.y, p.z);
        }
        write_text(&path, &text)?;
        paths.push(path);
    }
    Ok(paths)
}

#[derive(serde::Serialize, serde::Deserialize)]
struct ResidualRecord {
    frame: usize,
    anchor: usize,
    point_rms: f64,
    plane_rms: Option<f64>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct CloudMeta {
    reference: usize,
    skipped: Vec<usize>,
    /// Row-major rotation then translation, 12 numbers, or null for a
    /// skipped frame.
    transforms: Vec<Option<[f64; 12]>>,
    pair_residuals: Vec<ResidualRecord>,
}

pub(crate) fn transform_to_array(t: &RigidTransform) -> [f64; 12] {
    let r = &t.rotation;
    [
        r[(0, 0)],
        r[(0, 1)],
        r[(0, 2)],
        r[(1, 0)],
        r[(1, 1)],
        r[(1, 2)],
        r[(2, 0)],
        r[(2, 1)],
        r[(2, 2)],
        t.translation.x,
        t.translation.y,
        t.translation.z,
    ]
}

fn transform_from_array(a: &[f64; 12]) -> RigidTransform {
    RigidTransform {
        rotation: Matrix3::new(a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8]),
        translation: Vector3::new(a[9], a[10], a[11]),
    }
}

/// Writes a reconstructed cloud as "x y z source_frame" lines plus a
/// JSON metadata sidecar (reference frame, skipped frames, per-frame
/// transforms, pair residuals).
pub fn write_reconstructed(
    points_path: &Path,
    meta_path: &Path,
    cloud: &ReconstructedCloud,
) -> Result<(), IoError> {
    let mut text = String::with_capacity(cloud.points.len() * 28);
    text.push_str("# x y z source_frame\n");
    for (p, f) in cloud.points.iter().zip(cloud.source_frame.iter()) {
        let _ = writeln!(text, "{} {} {} {}", p.x, p.y, p.z, f);
    }
    write_text(points_path, &text)?;

    let meta = CloudMeta {
        reference: cloud.reference,
        skipped: cloud.skipped.clone(),
        transforms: cloud
            .transforms
            .iter()
            .map(|t| t.as_ref().map(transform_to_array))
            .collect(),
        pair_residuals: cloud
            .pair_residuals
            .iter()
            .map(|r| ResidualRecord {
                frame: r.frame,
                anchor: r.anchor,
                point_rms: r.point_rms,
                plane_rms: r.plane_rms,
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    write_text(meta_path, &json)
}

pub fn read_reconstructed(
    points_path: &Path,
    meta_path: &Path,
) -> Result<ReconstructedCloud, IoError> {
    let text = read_text(points_path)?;
    let mut points = Vec::new();
    let mut source_frame = Vec::new();
    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = || IoError::MalformedLine {
            file: points_path.display().to_string(),
            line: line_no + 1,
            text: line.to_string(),
        };
        if fields.len() != 4 {
            return Err(bad());
        }
        let x: f64 = fields[0].parse().map_err(|_| bad())?;
        let y: f64 = fields[1].parse().map_err(|_| bad())?;
        let z: f64 = fields[2].parse().map_err(|_| bad())?;
        let f: usize = fields[3].parse().map_err(|_| bad())?;
        points.push(Point3::new(x, y, z));
        source_frame.push(f);
    }
    let meta: CloudMeta =
        serde_json::from_str(&read_text(meta_path)?).map_err(|source| IoError::MalformedJson {
            file: meta_path.display().to_string(),
            source,
        })?;
    Ok(ReconstructedCloud {
        points,
        source_frame,
        reference: meta.reference,
        transforms: meta
            .transforms
            .iter()
            .map(|t| t.as_ref().map(transform_from_array))
            .collect(),
        pair_residuals: meta
            .pair_residuals
            .into_iter()
            .map(|r| PairResidual {
                frame: r.frame,
                anchor: r.anchor,
                point_rms: r.point_rms,
                plane_rms: r.plane_rms,
            })
            .collect(),
        skipped: meta.skipped,
    })
}

/// One JSON object per line, in input order.
pub fn write_results(path: &Path, results: &[ClassificationResult]) -> Result<(), IoError> {
    let mut text = String::new();
    for r in results {
        text.push_str(&serde_json::to_string(r).expect("result serializes"));
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn read_results(path: &Path) -> Result<Vec<ClassificationResult>, IoError> {
    let text = read_text(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            serde_json::from_str(line).map_err(|source| IoError::MalformedJson {
                file: path.display().to_string(),
                source,
            })
        })
        .collect()
}

/// "track_id,label" lines, canonical spellings.
pub fn write_ground_truth(path: &Path, truth: &[(String, ClassLabel)]) -> Result<(), IoError> {
    let mut text = String::new();
    for (id, label) in truth {
        let _ = writeln!(text, "{id},{label}");
    }
    write_text(path, &text)
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<(String, ClassLabel)>, IoError> {
    let text = read_text(path)?;
    crate::evaluation::parse_ground_truth(&text).map_err(|e| IoError::MalformedGroundTruth {
        file: path.display().to_string(),
        reason: e.to_string(),
    })
}

/// Run-directory manifest: every artifact path (relative to the run
/// directory) and the stage that produced it, in production order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Manifest::default()
    }

    pub fn record(&mut self, path: impl Into<String>, stage: impl Into<String>) {
        self.entries.push((path.into(), stage.into()));
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# path\tstage\n");
        for (path, stage) in &self.entries {
            let _ = writeln!(out, "{path}\t{stage}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, IoError> {
        let mut entries = Vec::new();
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (path, stage) = line.split_once('\t').ok_or_else(|| IoError::MalformedLine {
                file: "<manifest>".to_string(),
                line: line_no + 1,
                text: line.to_string(),
            })?;
            entries.push((path.to_string(), stage.to_string()));
        }
        Ok(Manifest { entries })
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        write_text(path, &self.to_text())
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        Self::from_text(&read_text(path)?)
    }
}
