//! Roadside LiDAR vehicle classification toolkit.
//!
//! Turns raw LiDAR frame sequences into per-vehicle class predictions:
//! background subtraction over an annular sector grid, DBSCAN clustering,
//! SORT tracking, two-stage rigid registration into dense per-vehicle
//! clouds, 2D rendering with morphological cleanup, and few-shot
//! in-context classification against a pluggable vision-language backend.

pub mod background;
pub mod config;
pub mod dbscan;
pub mod evaluation;
pub mod geometry;
pub mod hungarian;
pub mod imaging;
pub mod io;
pub mod kalman;
pub mod knn;
pub mod labels;
pub mod pipeline;
pub mod prompting;
pub mod registration;
pub mod synth;
pub mod tracking;
pub mod vlm;

pub use geometry::{Frame, OrientedBox2D, Point3, RigidTransform};
pub use labels::ClassLabel;
