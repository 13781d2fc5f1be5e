//! Run configuration: one TOML document holding every pipeline tunable,
//! with strict unknown-key rejection and range validation. CLI flags
//! override individual fields after parsing.

use std::path::Path;

use crate::background::{LearnParams, SectorGrid};
use crate::dbscan::DbscanParams;
use crate::imaging::ProjectionParams;
use crate::kalman::KalmanParams;
use crate::registration::IcpParams;
use crate::tracking::SortParams;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config field {field} = {value} outside allowed range ({allowed})")]
    OutOfRange {
        field: &'static str,
        value: f64,
        allowed: &'static str,
    },
}

fn out_of_range(field: &'static str, value: f64, allowed: &'static str) -> ConfigError {
    ConfigError::OutOfRange {
        field,
        value,
        allowed,
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackgroundConfig {
    pub azimuth_bins: usize,
    pub elevation_bins: usize,
    pub elevation_min_rad: f64,
    pub elevation_max_rad: f64,
    pub percentile: f64,
    pub min_observations: usize,
    /// Foreground margin below the learned background range, meters.
    pub margin_m: f64,
}

impl Default for BackgroundConfig {
    fn default() -> Self {
        let grid = SectorGrid::default();
        BackgroundConfig {
            azimuth_bins: grid.azimuth_bins,
            elevation_bins: grid.elevation_bins,
            elevation_min_rad: grid.elevation_min,
            elevation_max_rad: grid.elevation_max,
            percentile: 5.0,
            min_observations: 3,
            margin_m: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusteringConfig {
    pub eps_m: f64,
    pub min_points: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        let p = DbscanParams::default();
        ClusteringConfig {
            eps_m: p.eps,
            min_points: p.min_points,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackingConfig {
    pub gating_distance_m: f64,
    pub max_age: usize,
    pub min_hits: usize,
    pub process_position_var: f64,
    pub process_velocity_var: f64,
    pub measurement_var: f64,
    pub initial_velocity_var: f64,
    /// Inter-frame interval, seconds.
    pub frame_dt_s: f64,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        let p = SortParams::default();
        TrackingConfig {
            gating_distance_m: p.gating_distance,
            max_age: p.max_age,
            min_hits: p.min_hits,
            process_position_var: p.kalman.process_position_var,
            process_velocity_var: p.kalman.process_velocity_var,
            measurement_var: p.kalman.measurement_var,
            initial_velocity_var: p.kalman.initial_velocity_var,
            frame_dt_s: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegistrationConfig {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub rejection_distance_m: f64,
    pub trim_fraction: f64,
    pub normal_neighbors: usize,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        let p = IcpParams::default();
        RegistrationConfig {
            max_iterations: p.max_iterations,
            tolerance: p.tolerance,
            rejection_distance_m: p.rejection_distance,
            trim_fraction: p.trim_fraction,
            normal_neighbors: p.normal_neighbors,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImagingConfig {
    pub scale_m_per_px: f64,
    pub padding_px: usize,
    /// k for statistical outlier removal.
    pub outlier_neighbors: usize,
    pub outlier_std_ratio: f64,
    /// Structuring element side for the opening, pixels (odd).
    pub opening_size: usize,
}

impl Default for ImagingConfig {
    fn default() -> Self {
        let p = ProjectionParams::default();
        ImagingConfig {
            scale_m_per_px: p.scale,
            padding_px: p.padding,
            outlier_neighbors: 16,
            outlier_std_ratio: 1.0,
            opening_size: 3,
        }
    }
}

/// Which backend `classify` talks to. The truth-table mock is built at
/// run time from the scene's ground truth (each rendered query image
/// maps one-hot to its true label).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    MockUniform,
    MockAspect,
    MockTruth,
    Remote,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifyConfig {
    pub backend: BackendKind,
    pub batch_count: usize,
    /// Demonstrations per prompt.
    pub shots: usize,
    /// Classify from opened images (true) or the plain projections.
    pub use_processed: bool,
    /// Remote only: base URL up to the model path segment.
    pub endpoint: String,
    /// Remote only: model name.
    pub model: String,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig {
            backend: BackendKind::MockUniform,
            batch_count: 5,
            shots: 3,
            use_processed: true,
            endpoint: String::new(),
            model: String::new(),
        }
    }
}

/// The whole run configuration. Every stage reads its parameters from
/// here; unknown keys anywhere in the document are rejected.
#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker cap for per-track parallel stages; 0 means one per CPU.
    pub jobs: usize,
    pub background: BackgroundConfig,
    pub clustering: ClusteringConfig,
    pub tracking: TrackingConfig,
    pub registration: RegistrationConfig,
    pub imaging: ImagingConfig,
    pub classify: ClassifyConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: PipelineConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Documented-range checks; every constructor path runs this.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let b = &self.background;
        if b.azimuth_bins == 0 {
            return Err(out_of_range("background.azimuth_bins", 0.0, ">= 1"));
        }
        if b.elevation_bins == 0 {
            return Err(out_of_range("background.elevation_bins", 0.0, ">= 1"));
        }
        if !(b.elevation_min_rad < b.elevation_max_rad) {
            return Err(out_of_range(
                "background.elevation_min_rad",
                b.elevation_min_rad,
                "< elevation_max_rad",
            ));
        }
        if !(0.0..=100.0).contains(&b.percentile) {
            return Err(out_of_range(
                "background.percentile",
                b.percentile,
                "0..=100",
            ));
        }
        if b.margin_m < 0.0 {
            return Err(out_of_range("background.margin_m", b.margin_m, ">= 0"));
        }
        let c = &self.clustering;
        if !(c.eps_m > 0.0) {
            return Err(out_of_range("clustering.eps_m", c.eps_m, "> 0"));
        }
        if c.min_points == 0 {
            return Err(out_of_range("clustering.min_points", 0.0, ">= 1"));
        }
        let t = &self.tracking;
        if !(t.gating_distance_m > 0.0) {
            return Err(out_of_range(
                "tracking.gating_distance_m",
                t.gating_distance_m,
                "> 0",
            ));
        }
        if !(t.frame_dt_s > 0.0) {
            return Err(out_of_range("tracking.frame_dt_s", t.frame_dt_s, "> 0"));
        }
        for (field, value) in [
            ("tracking.process_position_var", t.process_position_var),
            ("tracking.process_velocity_var", t.process_velocity_var),
            ("tracking.measurement_var", t.measurement_var),
            ("tracking.initial_velocity_var", t.initial_velocity_var),
        ] {
            if !(value > 0.0) {
                return Err(out_of_range(field, value, "> 0"));
            }
        }
        let r = &self.registration;
        if r.max_iterations == 0 {
            return Err(out_of_range("registration.max_iterations", 0.0, ">= 1"));
        }
        if !(r.tolerance > 0.0) {
            return Err(out_of_range("registration.tolerance", r.tolerance, "> 0"));
        }
        if !(r.rejection_distance_m > 0.0) {
            return Err(out_of_range(
                "registration.rejection_distance_m",
                r.rejection_distance_m,
                "> 0",
            ));
        }
        if !(r.trim_fraction > 0.0 && r.trim_fraction <= 1.0) {
            return Err(out_of_range(
                "registration.trim_fraction",
                r.trim_fraction,
                "(0, 1]",
            ));
        }
        if r.normal_neighbors < 3 {
            return Err(out_of_range(
                "registration.normal_neighbors",
                r.normal_neighbors as f64,
                ">= 3",
            ));
        }
        let i = &self.imaging;
        if !(i.scale_m_per_px > 0.0) {
            return Err(out_of_range(
                "imaging.scale_m_per_px",
                i.scale_m_per_px,
                "> 0",
            ));
        }
        if i.outlier_neighbors == 0 {
            return Err(out_of_range("imaging.outlier_neighbors", 0.0, ">= 1"));
        }
        if !(i.outlier_std_ratio >= 0.0) {
            return Err(out_of_range(
                "imaging.outlier_std_ratio",
                i.outlier_std_ratio,
                ">= 0",
            ));
        }
        if i.opening_size == 0 || i.opening_size % 2 == 0 {
            return Err(out_of_range(
                "imaging.opening_size",
                i.opening_size as f64,
                "odd, >= 1",
            ));
        }
        let cl = &self.classify;
        if cl.batch_count == 0 {
            return Err(out_of_range("classify.batch_count", 0.0, ">= 1"));
        }
        if cl.backend == BackendKind::Remote && (cl.endpoint.is_empty() || cl.model.is_empty()) {
            return Err(out_of_range(
                "classify.endpoint/model",
                0.0,
                "non-empty for the remote backend",
            ));
        }
        Ok(())
    }

    pub fn sector_grid(&self) -> SectorGrid {
        SectorGrid {
            azimuth_bins: self.background.azimuth_bins,
            elevation_bins: self.background.elevation_bins,
            elevation_min: self.background.elevation_min_rad,
            elevation_max: self.background.elevation_max_rad,
        }
    }

    pub fn learn_params(&self) -> LearnParams {
        LearnParams {
            percentile: self.background.percentile,
            min_observations: self.background.min_observations,
        }
    }

    pub fn dbscan_params(&self) -> DbscanParams {
        DbscanParams {
            eps: self.clustering.eps_m,
            min_points: self.clustering.min_points,
        }
    }

    pub fn sort_params(&self) -> SortParams {
        SortParams {
            gating_distance: self.tracking.gating_distance_m,
            max_age: self.tracking.max_age,
            min_hits: self.tracking.min_hits,
            kalman: KalmanParams {
                process_position_var: self.tracking.process_position_var,
                process_velocity_var: self.tracking.process_velocity_var,
                measurement_var: self.tracking.measurement_var,
                initial_velocity_var: self.tracking.initial_velocity_var,
            },
        }
    }

    pub fn icp_params(&self) -> IcpParams {
        IcpParams {
            max_iterations: self.registration.max_iterations,
            tolerance: self.registration.tolerance,
            rejection_distance: self.registration.rejection_distance_m,
            trim_fraction: self.registration.trim_fraction,
            normal_neighbors: self.registration.normal_neighbors,
        }
    }

    pub fn projection_params(&self) -> ProjectionParams {
        ProjectionParams {
            scale: self.imaging.scale_m_per_px,
            padding: self.imaging.padding_px,
        }
    }
}
