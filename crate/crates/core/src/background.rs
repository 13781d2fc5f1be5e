//! Static-scene modeling over the sensor's conical field of view.
//!
//! The field of view is divided into annular sector cells (azimuth bins x
//! elevation bins). Learning collects the range distribution per cell over
//! vehicle-free frames; a low percentile of that distribution becomes the
//! cell's background range. Extraction keeps the points that return from
//! meaningfully closer than the learned background.

use crate::geometry::{Frame, Point3};
use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BackgroundError {
    #[error("undefined direction: point at the sensor origin")]
    OriginPoint,
    #[error("no frames supplied for background learning")]
    NoFrames,
    #[error("malformed background model file: {0}")]
    MalformedModel(String),
    #[error("io error: {0}")]
    Io(String),
}

/// Discretization of the sensor's conical surface.
///
/// Azimuth covers the full turn; elevation covers the beam fan, one bin
/// per laser channel by default (32 channels spanning -25 to +15 degrees).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectorGrid {
    pub azimuth_bins: usize,
    pub elevation_bins: usize,
    /// Lower edge of the elevation fan, radians.
    pub elevation_min: f64,
    /// Upper edge of the elevation fan, radians.
    pub elevation_max: f64,
}

impl Default for SectorGrid {
    fn default() -> Self {
        Self {
            azimuth_bins: 1800,
            elevation_bins: 32,
            elevation_min: (-25f64).to_radians(),
            elevation_max: 15f64.to_radians(),
        }
    }
}

impl SectorGrid {
    pub fn new(azimuth_bins: usize, elevation_bins: usize) -> Self {
        Self {
            azimuth_bins,
            elevation_bins,
            ..Self::default()
        }
    }

    pub fn cell_count(&self) -> usize {
        self.azimuth_bins * self.elevation_bins
    }

    fn flat_index(&self, az_bin: usize, elev_bin: usize) -> usize {
        elev_bin * self.azimuth_bins + az_bin
    }
}

/// Cell coordinates: (azimuth bin, elevation bin).
pub type CellId = (usize, usize);

/// Maps a point to its sector cell.
///
/// Azimuth comes from atan2(y, x) normalized to [0, 2*pi); elevation is
/// the polar angle above the horizontal, clamped into the fan.
pub fn cell_index(p: &Point3, grid: &SectorGrid) -> Result<CellId, BackgroundError> {
    let horiz = (p.x * p.x + p.y * p.y).sqrt();
    if horiz == 0.0 && p.z == 0.0 {
        return Err(BackgroundError::OriginPoint);
    }
    let mut azimuth = p.y.atan2(p.x);
    if azimuth < 0.0 {
        azimuth += TAU;
    }
    let mut az_bin = (azimuth / TAU * grid.azimuth_bins as f64).floor() as usize;
    if az_bin >= grid.azimuth_bins {
        az_bin = grid.azimuth_bins - 1;
    }

    let elevation = p.z.atan2(horiz);
    let span = grid.elevation_max - grid.elevation_min;
    let frac = ((elevation - grid.elevation_min) / span).clamp(0.0, 1.0);
    let mut elev_bin = (frac * grid.elevation_bins as f64).floor() as usize;
    if elev_bin >= grid.elevation_bins {
        elev_bin = grid.elevation_bins - 1;
    }
    Ok((az_bin, elev_bin))
}

/// Learned static-scene occupancy: one background range per cell, or none
/// where the scene never returned enough points.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundModel {
    pub grid: SectorGrid,
    /// Percentile of each cell's range distribution used as background.
    pub percentile: f64,
    /// Cells seen fewer times than this stay "never occupied".
    pub min_observations: usize,
    pub learned_frames: usize,
    ranges: Vec<Option<f64>>,
}

impl BackgroundModel {
    /// Background range for a cell, or None when the cell never collected
    /// enough static returns.
    pub fn background_range(&self, cell: CellId) -> Option<f64> {
        self.ranges[self.grid.flat_index(cell.0, cell.1)]
    }

    pub fn defined_cells(&self) -> usize {
        self.ranges.iter().filter(|r| r.is_some()).count()
    }
}

/// Parameters for background learning.
#[derive(Debug, Clone, Copy)]
pub struct LearnParams {
    pub percentile: f64,
    pub min_observations: usize,
}

impl Default for LearnParams {
    fn default() -> Self {
        Self {
            percentile: 5.0,
            min_observations: 3,
        }
    }
}

/// Builds the background model from vehicle-free (or long) frame sets.
///
/// Each cell's background range is the p-th percentile of its observed
/// ranges, taken as the sorted value at index floor(p/100 * n): with 5%
/// transient short returns and p = 5 the statistic lands on the static
/// structure behind them.
pub fn learn_background(
    frames: &[Frame],
    grid: &SectorGrid,
    params: &LearnParams,
) -> Result<BackgroundModel, BackgroundError> {
    if frames.is_empty() {
        return Err(BackgroundError::NoFrames);
    }
    let mut per_cell: Vec<Vec<f64>> = vec![Vec::new(); grid.cell_count()];
    for frame in frames {
        for p in &frame.points {
            let range = p.range();
            if !range.is_finite() || range == 0.0 {
                continue;
            }
            let (az, el) = cell_index(p, grid)?;
            per_cell[grid.flat_index(az, el)].push(range);
        }
    }
    let ranges = per_cell
        .into_iter()
        .map(|mut samples| {
            if samples.len() < params.min_observations {
                return None;
            }
            samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let idx = ((params.percentile / 100.0) * samples.len() as f64).floor() as usize;
            Some(samples[idx.min(samples.len() - 1)])
        })
        .collect();
    Ok(BackgroundModel {
        grid: *grid,
        percentile: params.percentile,
        min_observations: params.min_observations,
        learned_frames: frames.len(),
        ranges,
    })
}

/// Keeps the points that are foreground against the model: closer than
/// the cell background by more than `margin`, or falling in a cell the
/// static scene never occupied. Input order is preserved.
pub fn extract_foreground(frame: &Frame, model: &BackgroundModel, margin: f64) -> Vec<Point3> {
    frame
        .points
        .iter()
        .filter(|p| {
            let range = p.range();
            if !range.is_finite() || range == 0.0 {
                return false;
            }
            match cell_index(p, &model.grid) {
                Ok(cell) => match model.background_range(cell) {
                    Some(bg) => range < bg - margin,
                    None => true,
                },
                Err(_) => false,
            }
        })
        .copied()
        .collect()
}

impl BackgroundModel {
    /// Serializes the model as a flat text artifact: a header followed by
    /// one "azBin elevBin range_m" line per defined cell.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# background model: azimuth_bins elevation_bins elevation_min_rad elevation_max_rad percentile min_observations frames"
        );
        let _ = writeln!(
            out,
            // Bare {} on the elevation bounds: f64 Display round-trips
            // exactly, a fixed precision would not.
            "{} {} {} {} {} {} {}",
            self.grid.azimuth_bins,
            self.grid.elevation_bins,
            self.grid.elevation_min,
            self.grid.elevation_max,
            self.percentile,
            self.min_observations,
            self.learned_frames
        );
        for elev in 0..self.grid.elevation_bins {
            for az in 0..self.grid.azimuth_bins {
                if let Some(r) = self.ranges[self.grid.flat_index(az, elev)] {
                    let _ = writeln!(out, "{} {} {:.6}", az, elev, r);
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, BackgroundError> {
        let mut lines = text.lines().filter(|l| !l.trim_start().starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| BackgroundError::MalformedModel("missing header".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(BackgroundError::MalformedModel(format!(
                "header has {} fields, expected 7",
                fields.len()
            )));
        }
        let parse_usize = |s: &str, what: &str| {
            s.parse::<usize>()
                .map_err(|_| BackgroundError::MalformedModel(format!("bad {what}: {s}")))
        };
        let parse_f64 = |s: &str, what: &str| {
            s.parse::<f64>()
                .map_err(|_| BackgroundError::MalformedModel(format!("bad {what}: {s}")))
        };
        let grid = SectorGrid {
            azimuth_bins: parse_usize(fields[0], "azimuth bins")?,
            elevation_bins: parse_usize(fields[1], "elevation bins")?,
            elevation_min: parse_f64(fields[2], "elevation min")?,
            elevation_max: parse_f64(fields[3], "elevation max")?,
        };
        let percentile = parse_f64(fields[4], "percentile")?;
        let min_observations = parse_usize(fields[5], "min observations")?;
        let learned_frames = parse_usize(fields[6], "frame count")?;
        let mut ranges = vec![None; grid.cell_count()];
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 3 {
                return Err(BackgroundError::MalformedModel(format!(
                    "cell line has {} fields: {line:?}",
                    cols.len()
                )));
            }
            let az = parse_usize(cols[0], "azimuth bin")?;
            let el = parse_usize(cols[1], "elevation bin")?;
            if az >= grid.azimuth_bins || el >= grid.elevation_bins {
                return Err(BackgroundError::MalformedModel(format!(
                    "cell ({az}, {el}) outside grid"
                )));
            }
            ranges[grid.flat_index(az, el)] = Some(parse_f64(cols[2], "range")?);
        }
        Ok(Self {
            grid,
            percentile,
            min_observations,
            learned_frames,
            ranges,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), BackgroundError> {
        std::fs::write(path, self.to_text()).map_err(|e| BackgroundError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, BackgroundError> {
        let text = std::fs::read_to_string(path).map_err(|e| BackgroundError::Io(e.to_string()))?;
        Self::from_text(&text)
    }
}
