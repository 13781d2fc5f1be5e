//! From reconstructed clouds to cleaned binary rasters.
//!
//! Statistical outlier removal drops sparse stragglers from the cloud;
//! orthographic projection rasterizes the survivors into a binary
//! occupancy image; morphological opening scrubs isolated lit pixels from
//! the raster. The caller is expected to rotate the cloud so the travel
//! direction lies along +x before projecting.

use crate::geometry::Point3;
use crate::knn::SpatialGrid;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ImagingError {
    #[error("cloud is empty")]
    EmptyCloud,
    #[error("cloud of {got} points cannot support k={k} neighbors")]
    CloudTooSmall { got: usize, k: usize },
    #[error("std_ratio must be positive, got {0}")]
    BadStdRatio(f64),
    #[error("scale must be positive, got {0}")]
    BadScale(f64),
    #[error("structuring element side must be odd and >= 1, got {0}")]
    BadElementSide(usize),
    #[error("structuring element has no active cells")]
    EmptyElement,
    #[error("malformed PGM: {0}")]
    MalformedPgm(String),
    #[error("png encoding failed: {0}")]
    PngEncode(String),
}

/// Removes points whose mean distance to their k nearest neighbors
/// exceeds the global mean by more than `std_ratio` standard deviations.
/// Output order matches input order.
pub fn statistical_outlier_removal(
    cloud: &[Point3],
    k: usize,
    std_ratio: f64,
) -> Result<Vec<Point3>, ImagingError> {
    if k < 1 || cloud.len() <= k {
        return Err(ImagingError::CloudTooSmall {
            got: cloud.len(),
            k,
        });
    }
    if std_ratio <= 0.0 {
        return Err(ImagingError::BadStdRatio(std_ratio));
    }
    let grid = SpatialGrid::new(cloud);
    let mean_dists: Vec<f64> = cloud
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let neighbors = grid.k_nearest(p, k, i);
            let sum: f64 = neighbors.iter().map(|(_, d2)| d2.sqrt()).sum();
            sum / neighbors.len() as f64
        })
        .collect();
    let n = mean_dists.len() as f64;
    let global_mean = mean_dists.iter().sum::<f64>() / n;
    let variance = mean_dists
        .iter()
        .map(|d| (d - global_mean) * (d - global_mean))
        .sum::<f64>()
        / n;
    let threshold = global_mean + std_ratio * variance.sqrt();
    Ok(cloud
        .iter()
        .zip(&mean_dists)
        .filter(|(_, d)| **d <= threshold)
        .map(|(p, _)| *p)
        .collect())
}

/// Projection plane for rasterization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    /// (x, z): the vehicle profile, assuming travel along +x.
    Side,
    /// (x, y): the ground-plane footprint.
    Top,
}

impl View {
    pub fn as_str(&self) -> &'static str {
        match self {
            View::Side => "side",
            View::Top => "top",
        }
    }
}

/// 8-bit grayscale raster with its world georeference.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    /// Row-major, `width * height` bytes.
    pub pixels: Vec<u8>,
    /// Meters per pixel.
    pub scale: f64,
    /// World (horizontal, vertical) coordinates mapped to pixel (0, 0).
    pub origin: (f64, f64),
}

impl RasterImage {
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        self.pixels[row * self.width + col] = value;
    }

    pub fn lit_count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p != 0).count()
    }

    /// Binary PGM (P5). The scale and origin ride along in a comment so
    /// the file round-trips.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.pixels.len() + 64);
        out.extend_from_slice(b"P5\n");
        out.extend_from_slice(
            format!(
                "# scale {:.12} origin {:.12} {:.12}\n",
                self.scale, self.origin.0, self.origin.1
            )
            .as_bytes(),
        );
        out.extend_from_slice(format!("{} {}\n255\n", self.width, self.height).as_bytes());
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self, ImagingError> {
        let bad = |m: &str| ImagingError::MalformedPgm(m.to_string());
        let mut pos = 0usize;
        let mut tokens: Vec<String> = Vec::new();
        let mut comment: Option<String> = None;
        // Header: magic, width, height, maxval, with '#' comments allowed
        // between tokens. One whitespace byte separates maxval from data.
        while tokens.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos >= bytes.len() {
                return Err(bad("truncated header"));
            }
            if bytes[pos] == b'#' {
                let end = bytes[pos..]
                    .iter()
                    .position(|&b| b == b'\n')
                    .map(|e| pos + e)
                    .ok_or_else(|| bad("unterminated comment"))?;
                let text = String::from_utf8_lossy(&bytes[pos + 1..end]).trim().to_string();
                comment.get_or_insert(text);
                pos = end + 1;
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if tokens[0] != "P5" {
            return Err(bad("not a P5 file"));
        }
        let width: usize = tokens[1].parse().map_err(|_| bad("bad width"))?;
        let height: usize = tokens[2].parse().map_err(|_| bad("bad height"))?;
        if tokens[3] != "255" {
            return Err(bad("maxval must be 255"));
        }
        if width == 0 || height == 0 {
            return Err(bad("zero dimension"));
        }
        pos += 1;
        let expected = width * height;
        if bytes.len() < pos + expected {
            return Err(bad("truncated pixel data"));
        }
        let pixels = bytes[pos..pos + expected].to_vec();

        let (mut scale, mut origin) = (1.0, (0.0, 0.0));
        if let Some(c) = comment {
            let fields: Vec<&str> = c.split_whitespace().collect();
            if fields.len() == 5 && fields[0] == "scale" && fields[2] == "origin" {
                if let (Ok(s), Ok(ox), Ok(oy)) = (
                    fields[1].parse::<f64>(),
                    fields[3].parse::<f64>(),
                    fields[4].parse::<f64>(),
                ) {
                    scale = s;
                    origin = (ox, oy);
                }
            }
        }
        Ok(Self {
            width,
            height,
            pixels,
            scale,
            origin,
        })
    }

    /// Grayscale PNG bytes.
    pub fn to_png(&self) -> Result<Vec<u8>, ImagingError> {
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .expect("pixel buffer matches dimensions");
        let mut out = std::io::Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png)
            .map_err(|e| ImagingError::PngEncode(e.to_string()))?;
        Ok(out.into_inner())
    }
}

/// Default rendering parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionParams {
    pub scale: f64,
    pub padding: usize,
}

impl Default for ProjectionParams {
    fn default() -> Self {
        Self {
            scale: 0.05,
            padding: 10,
        }
    }
}

/// Orthographic binary rasterization. Any pixel receiving at least one
/// point is lit (255); the image extends to the point bounds plus padding.
pub fn project_to_image(
    cloud: &[Point3],
    view: View,
    params: &ProjectionParams,
) -> Result<RasterImage, ImagingError> {
    if cloud.is_empty() {
        return Err(ImagingError::EmptyCloud);
    }
    if params.scale <= 0.0 {
        return Err(ImagingError::BadScale(params.scale));
    }
    // Horizontal axis u, vertical axis v; the side view hangs the image
    // by max z so row 0 is the top of the vehicle.
    let uv = |p: &Point3| -> (f64, f64) {
        match view {
            View::Side => (p.x, p.z),
            View::Top => (p.x, p.y),
        }
    };
    let (mut u_min, mut u_max) = (f64::MAX, f64::MIN);
    let (mut v_min, mut v_max) = (f64::MAX, f64::MIN);
    for p in cloud {
        let (u, v) = uv(p);
        u_min = u_min.min(u);
        u_max = u_max.max(u);
        v_min = v_min.min(v);
        v_max = v_max.max(v);
    }
    let pad = params.padding;
    let width = ((u_max - u_min) / params.scale).floor() as usize + 1 + 2 * pad;
    let height = ((v_max - v_min) / params.scale).floor() as usize + 1 + 2 * pad;
    let mut img = RasterImage {
        width,
        height,
        pixels: vec![0; width * height],
        scale: params.scale,
        origin: (
            u_min - pad as f64 * params.scale,
            v_max + pad as f64 * params.scale,
        ),
    };
    for p in cloud {
        let (u, v) = uv(p);
        let col = (((u - u_min) / params.scale).floor() as usize + pad).min(width - 1);
        let row = (((v_max - v) / params.scale).floor() as usize + pad).min(height - 1);
        img.set(row, col, 255);
    }
    Ok(img)
}

/// Square binary mask with its anchor at the center.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuringElement {
    pub side: usize,
    /// Row-major `side * side` mask.
    pub mask: Vec<bool>,
}

impl StructuringElement {
    pub fn new(side: usize, mask: Vec<bool>) -> Result<Self, ImagingError> {
        if side % 2 == 0 || side == 0 {
            return Err(ImagingError::BadElementSide(side));
        }
        assert_eq!(mask.len(), side * side, "mask length must be side squared");
        if !mask.iter().any(|&m| m) {
            return Err(ImagingError::EmptyElement);
        }
        Ok(Self { side, mask })
    }

    /// The default 3x3 all-ones element.
    pub fn square3() -> Self {
        Self {
            side: 3,
            mask: vec![true; 9],
        }
    }

    pub fn all_ones(side: usize) -> Result<Self, ImagingError> {
        Self::new(side, vec![true; side * side])
    }

    /// Active offsets relative to the anchor, row-major.
    fn offsets(&self) -> Vec<(isize, isize)> {
        let half = (self.side / 2) as isize;
        let mut out = Vec::new();
        for r in 0..self.side {
            for c in 0..self.side {
                if self.mask[r * self.side + c] {
                    out.push((r as isize - half, c as isize - half));
                }
            }
        }
        out
    }
}

fn lit(img: &RasterImage, row: isize, col: isize) -> bool {
    // Out-of-bounds reads as background.
    if row < 0 || col < 0 || row as usize >= img.height || col as usize >= img.width {
        return false;
    }
    img.get(row as usize, col as usize) != 0
}

/// Erosion: a pixel survives only if every active element cell over it
/// is lit; anything out of bounds counts as unlit.
pub fn erode(img: &RasterImage, se: &StructuringElement) -> RasterImage {
    let offsets = se.offsets();
    let mut out = img.clone();
    for row in 0..img.height {
        for col in 0..img.width {
            let all = offsets
                .iter()
                .all(|&(dr, dc)| lit(img, row as isize + dr, col as isize + dc));
            out.set(row, col, if all { 255 } else { 0 });
        }
    }
    out
}

/// Dilation: a pixel lights up if any active element cell (reflected
/// through the anchor) covers a lit pixel.
pub fn dilate(img: &RasterImage, se: &StructuringElement) -> RasterImage {
    let offsets = se.offsets();
    let mut out = img.clone();
    for row in 0..img.height {
        for col in 0..img.width {
            let any = offsets
                .iter()
                .any(|&(dr, dc)| lit(img, row as isize - dr, col as isize - dc));
            out.set(row, col, if any { 255 } else { 0 });
        }
    }
    out
}

/// Opening: erosion then dilation. Removes structures smaller than the
/// element while preserving larger shapes.
pub fn opening(img: &RasterImage, se: &StructuringElement) -> RasterImage {
    dilate(&erode(img, se), se)
}
