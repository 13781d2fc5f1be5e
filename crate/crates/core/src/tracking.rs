//! Multi-object tracking across frames.
//!
//! Clusters from each frame are associated to live tracks by Hungarian
//! assignment over centroid distance, with a hard gate; each track carries
//! a constant-velocity Kalman state. Tracks are tentative until they
//! accumulate enough hits, and die after going unmatched too long.

use crate::geometry::{min_oriented_bbox2d, OrientedBox2D, Point3};
use crate::hungarian::hungarian;
use crate::kalman::{kalman_predict, kalman_update, KalmanParams, KalmanState};
use nalgebra::Vector2;
use std::collections::HashSet;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TrackingError {
    #[error("cluster has no points")]
    EmptyCluster,
    #[error("cluster has duplicate point index {0}")]
    DuplicateIndex(usize),
    #[error("frame index {got} does not advance past {last}")]
    NonMonotonicFrame { got: usize, last: usize },
    #[error("dt must be positive, got {0}")]
    NonPositiveDt(f64),
}

/// One vehicle object in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// Indices into the frame's foreground point list, ascending.
    pub indices: Vec<usize>,
    /// Mean of the member points.
    pub centroid: Point3,
    /// Minimum-area oriented box around the members' ground-plane footprint.
    pub bbox: OrientedBox2D,
}

impl Cluster {
    pub fn from_indices(indices: Vec<usize>, points: &[Point3]) -> Result<Self, TrackingError> {
        if indices.is_empty() {
            return Err(TrackingError::EmptyCluster);
        }
        let mut seen = HashSet::new();
        for &i in &indices {
            if !seen.insert(i) {
                return Err(TrackingError::DuplicateIndex(i));
            }
        }
        let members: Vec<Point3> = indices.iter().map(|&i| points[i]).collect();
        let centroid = crate::geometry::centroid(&members).expect("non-empty");
        let bbox = min_oriented_bbox2d(&members).expect("non-empty");
        Ok(Self {
            indices,
            centroid,
            bbox,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Member points, materialized from the frame's foreground list.
    pub fn points(&self, frame_points: &[Point3]) -> Vec<Point3> {
        self.indices.iter().map(|&i| frame_points[i]).collect()
    }
}

/// Builds one Cluster per DBSCAN cluster, in cluster order.
pub fn clusters_from_clustering(
    points: &[Point3],
    clustering: &crate::dbscan::Clustering,
) -> Result<Vec<Cluster>, TrackingError> {
    clustering
        .clusters
        .iter()
        .map(|members| Cluster::from_indices(members.clone(), points))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Dead,
}

impl TrackStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrackStatus::Tentative => "tentative",
            TrackStatus::Confirmed => "confirmed",
            TrackStatus::Dead => "dead",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Track {
    pub id: u64,
    /// (frame index, cluster) per matched frame, frame indices strictly
    /// increasing.
    pub observations: Vec<(usize, Cluster)>,
    pub state: KalmanState,
    pub hits: usize,
    pub age_since_update: usize,
    pub status: TrackStatus,
}

impl Track {
    pub fn is_live(&self) -> bool {
        self.status != TrackStatus::Dead
    }

    pub fn predicted_centroid(&self) -> Vector2<f64> {
        self.state.position()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SortParams {
    /// Association gate: predicted-to-measured centroid distance, meters.
    pub gating_distance: f64,
    /// Frames a track may go unmatched before it dies.
    pub max_age: usize,
    /// Hits needed to confirm a tentative track.
    pub min_hits: usize,
    pub kalman: KalmanParams,
}

impl Default for SortParams {
    fn default() -> Self {
        Self {
            gating_distance: 4.0,
            max_age: 3,
            min_hits: 3,
            kalman: KalmanParams::default(),
        }
    }
}

/// Sequential tracker state for one frame sequence.
#[derive(Debug, Clone)]
pub struct Tracker {
    pub params: SortParams,
    pub tracks: Vec<Track>,
    next_id: u64,
    last_frame: Option<usize>,
}

/// Finite stand-in for forbidden assignment entries; far above any real
/// gate so the optimum never prefers it when a feasible pair exists.
const FORBIDDEN_COST: f64 = 1e9;

impl Tracker {
    pub fn new(params: SortParams) -> Self {
        Self {
            params,
            tracks: Vec::new(),
            next_id: 0,
            last_frame: None,
        }
    }

    pub fn confirmed_tracks(&self) -> impl Iterator<Item = &Track> {
        self.tracks
            .iter()
            .filter(|t| t.status == TrackStatus::Confirmed)
    }

    /// Advances one frame: predict, associate, update, spawn, retire.
    pub fn step(
        &mut self,
        frame_index: usize,
        clusters: &[Cluster],
        dt: f64,
    ) -> Result<(), TrackingError> {
        if let Some(last) = self.last_frame {
            if frame_index <= last {
                return Err(TrackingError::NonMonotonicFrame {
                    got: frame_index,
                    last,
                });
            }
        }
        if dt <= 0.0 {
            return Err(TrackingError::NonPositiveDt(dt));
        }
        self.last_frame = Some(frame_index);

        let live: Vec<usize> = (0..self.tracks.len())
            .filter(|&i| self.tracks[i].is_live())
            .collect();
        for &i in &live {
            self.tracks[i].state = kalman_predict(&self.tracks[i].state, dt, &self.params.kalman);
        }

        let mut matched_track: Vec<Option<usize>> = vec![None; live.len()];
        let mut matched_cluster = vec![false; clusters.len()];
        if !live.is_empty() && !clusters.is_empty() {
            let cost: Vec<Vec<f64>> = live
                .iter()
                .map(|&ti| {
                    let predicted = self.tracks[ti].predicted_centroid();
                    clusters
                        .iter()
                        .map(|c| {
                            let d = (predicted - c.bbox.center).norm();
                            if d > self.params.gating_distance {
                                FORBIDDEN_COST
                            } else {
                                d
                            }
                        })
                        .collect()
                })
                .collect();
            let assignment = hungarian(&cost).expect("finite costs by construction");
            for (row, col) in assignment.pairs {
                // The solver must pair min(m, n) rows; drop pairs that only
                // exist to satisfy cardinality.
                if cost[row][col] >= FORBIDDEN_COST {
                    continue;
                }
                matched_track[row] = Some(col);
                matched_cluster[col] = true;
            }
        }

        for (slot, &ti) in live.iter().enumerate() {
            let track = &mut self.tracks[ti];
            match matched_track[slot] {
                Some(ci) => {
                    let cluster = &clusters[ci];
                    track.state =
                        kalman_update(&track.state, cluster.bbox.center, &self.params.kalman);
                    track.hits += 1;
                    track.age_since_update = 0;
                    track.observations.push((frame_index, cluster.clone()));
                    if track.status == TrackStatus::Tentative && track.hits >= self.params.min_hits
                    {
                        track.status = TrackStatus::Confirmed;
                    }
                }
                None => {
                    track.age_since_update += 1;
                    if track.age_since_update > self.params.max_age {
                        track.status = TrackStatus::Dead;
                    }
                }
            }
        }

        for (ci, cluster) in clusters.iter().enumerate() {
            if matched_cluster[ci] {
                continue;
            }
            let id = self.next_id;
            self.next_id += 1;
            let status = if 1 >= self.params.min_hits {
                TrackStatus::Confirmed
            } else {
                TrackStatus::Tentative
            };
            self.tracks.push(Track {
                id,
                observations: vec![(frame_index, cluster.clone())],
                state: KalmanState::new_track(cluster.bbox.center, &self.params.kalman),
                hits: 1,
                age_since_update: 0,
                status,
            });
        }
        Ok(())
    }
}

/// Line-oriented dump: one record per (track, frame) for downstream
/// reconstruction and inspection.
pub fn dump_tracks(tracks: &[Track]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# track_id frame_index centroid_x centroid_y centroid_z box_cx box_cy box_hx box_hy box_heading points status"
    );
    for track in tracks {
        for (frame, cluster) in &track.observations {
            let _ = writeln!(
                out,
                "{} {} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {} {}",
                track.id,
                frame,
                cluster.centroid.x,
                cluster.centroid.y,
                cluster.centroid.z,
                cluster.bbox.center.x,
                cluster.bbox.center.y,
                cluster.bbox.half_extents.x,
                cluster.bbox.half_extents.y,
                cluster.bbox.heading,
                cluster.len(),
                track.status.as_str()
            );
        }
    }
    out
}
