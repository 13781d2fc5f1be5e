//! Rigid alignment of per-frame vehicle clouds and track reconstruction.
//!
//! Pairwise alignment runs in two stages: point-to-point ICP for the
//! coarse transform, then point-to-plane ICP against estimated target
//! normals for refinement. reconstruct_track chains pairwise transforms
//! outward from a reference frame and merges everything into one cloud.

use crate::geometry::{centroid, Point3, RigidTransform};
use crate::knn::SpatialGrid;
use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector3, Vector6, SVD};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RegistrationError {
    #[error("degenerate correspondence set")]
    DegenerateCorrespondences,
    #[error("no valid correspondences")]
    NoValidCorrespondences,
    #[error("unconstrained degrees of freedom")]
    UnconstrainedDegreesOfFreedom,
    #[error("cloud has {got} points, need at least {need}")]
    TooFewPoints { got: usize, need: usize },
    #[error("neighbor count k={k} invalid for cloud of {cloud} points")]
    BadNeighborCount { k: usize, cloud: usize },
}

/// Matched point pairs: (source index, target index, squared distance).
#[derive(Debug, Clone, Default)]
pub struct Correspondences {
    pub pairs: Vec<(usize, usize, f64)>,
}

impl Correspondences {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Root-mean-square of the pair distances.
    pub fn rms(&self) -> f64 {
        if self.pairs.is_empty() {
            return 0.0;
        }
        let sum: f64 = self.pairs.iter().map(|&(_, _, d2)| d2).sum();
        (sum / self.pairs.len() as f64).sqrt()
    }
}

/// A cloud with one unit normal per point.
#[derive(Debug, Clone)]
pub struct NormalCloud {
    pub points: Vec<Point3>,
    pub normals: Vec<Vector3<f64>>,
}

/// Tuning for both ICP variants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpParams {
    pub max_iterations: usize,
    /// Stop when the accepted RMS improves by less than this, meters.
    pub tolerance: f64,
    /// Pairs farther apart than this are dropped each iteration, meters.
    pub rejection_distance: f64,
    /// After rejection, keep this fraction of the closest pairs.
    pub trim_fraction: f64,
    /// Neighborhood size for target normal estimation.
    pub normal_neighbors: usize,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: 1e-5,
            rejection_distance: 1.0,
            trim_fraction: 0.9,
            normal_neighbors: 12,
        }
    }
}

/// Outcome of one ICP run. `residual_history` holds the RMS after the
/// initial transform and after every accepted step, so it is non-increasing.
#[derive(Debug, Clone)]
pub struct IcpResult {
    pub transform: RigidTransform,
    pub rms: f64,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    /// Count of unconstrained motion components in the final linearized
    /// system (point-to-plane only; 0 for point-to-point).
    pub unconstrained_dofs: usize,
}

/// Closed-form least-squares rigid transform from paired points, via
/// orthogonal Procrustes on the centered pairs. The determinant sign is
/// corrected so the result is a proper rotation.
pub fn best_rigid_fit(
    source: &[Point3],
    target: &[Point3],
    pairs: &Correspondences,
) -> Result<RigidTransform, RegistrationError> {
    if pairs.len() < 3 {
        return Err(RegistrationError::DegenerateCorrespondences);
    }
    let n = pairs.len() as f64;
    let mut sc = Vector3::zeros();
    let mut tc = Vector3::zeros();
    for &(si, ti, _) in &pairs.pairs {
        sc += source[si].to_vector();
        tc += target[ti].to_vector();
    }
    sc /= n;
    tc /= n;

    let mut h = Matrix3::zeros();
    for &(si, ti, _) in &pairs.pairs {
        let s = source[si].to_vector() - sc;
        let t = target[ti].to_vector() - tc;
        h += s * t.transpose();
    }
    let svd = SVD::new(h, true, true);
    let u = svd.u.expect("svd with u");
    let v_t = svd.v_t.expect("svd with v_t");
    // Rotation is only determined when the pair configuration spans a
    // plane: the two largest singular values must be meaningfully nonzero.
    let s0 = svd.singular_values[0];
    let s1 = svd.singular_values[1];
    if s0 <= 1e-12 || s1 <= 1e-9 * s0 {
        return Err(RegistrationError::DegenerateCorrespondences);
    }
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d.signum()));
    let rotation = v * correction * u.transpose();
    let translation = tc - rotation * sc;
    Ok(RigidTransform {
        rotation,
        translation,
    })
}

/// Nearest-neighbor correspondences from transformed source to target,
/// with distance rejection and trimming to the closest fraction.
fn match_points(
    source: &[Point3],
    target_grid: &SpatialGrid,
    transform: &RigidTransform,
    params: &IcpParams,
) -> Correspondences {
    let reject2 = params.rejection_distance * params.rejection_distance;
    let mut pairs: Vec<(usize, usize, f64)> = Vec::with_capacity(source.len());
    for (si, p) in source.iter().enumerate() {
        let moved = transform.apply(*p);
        if let Some((ti, d2)) = target_grid.nearest(&moved) {
            if d2 <= reject2 {
                pairs.push((si, ti, d2));
            }
        }
    }
    pairs.sort_by(|a, b| a.2.partial_cmp(&b.2).unwrap());
    let keep = ((pairs.len() as f64 * params.trim_fraction).ceil() as usize).max(1);
    pairs.truncate(keep.min(pairs.len()));
    Correspondences { pairs }
}

/// Iterative point-to-point alignment of `source` onto `target`.
pub fn icp_point_to_point(
    source: &[Point3],
    target: &[Point3],
    init: &RigidTransform,
    params: &IcpParams,
) -> Result<IcpResult, RegistrationError> {
    if source.len() < 3 {
        return Err(RegistrationError::TooFewPoints {
            got: source.len(),
            need: 3,
        });
    }
    if target.len() < 3 {
        return Err(RegistrationError::TooFewPoints {
            got: target.len(),
            need: 3,
        });
    }
    let grid = SpatialGrid::new(target);
    let mut current = *init;
    let corr = match_points(source, &grid, &current, params);
    if corr.len() < 3 {
        return Err(RegistrationError::NoValidCorrespondences);
    }
    let mut current_rms = corr.rms();
    let mut history = vec![current_rms];
    let mut iterations = 0;

    for _ in 0..params.max_iterations {
        let corr = match_points(source, &grid, &current, params);
        if corr.len() < 3 {
            break;
        }
        // Absolute re-fit against the original source coordinates; the
        // least-squares optimum over these pairs cannot do worse than the
        // transform that produced them.
        let candidate = match best_rigid_fit(source, target, &corr) {
            Ok(t) => t,
            Err(_) => break,
        };
        let candidate_rms = match_points(source, &grid, &candidate, params).rms();
        if candidate_rms > current_rms + 1e-12 {
            // A worse step means the correspondence set shifted against
            // us; keep the best-so-far answer.
            break;
        }
        let improvement = current_rms - candidate_rms;
        current = candidate;
        current_rms = candidate_rms;
        history.push(current_rms);
        iterations += 1;
        if improvement < params.tolerance {
            break;
        }
    }

    Ok(IcpResult {
        transform: current,
        rms: current_rms,
        iterations,
        residual_history: history,
        unconstrained_dofs: 0,
    })
}

/// Per-point normals from the smallest-eigenvalue eigenvector of the
/// k-neighborhood covariance, oriented toward the sensor origin.
pub fn estimate_normals(cloud: &[Point3], k: usize) -> Result<NormalCloud, RegistrationError> {
    if k < 3 || k > cloud.len() {
        return Err(RegistrationError::BadNeighborCount {
            k,
            cloud: cloud.len(),
        });
    }
    let grid = SpatialGrid::new(cloud);
    let mut normals = Vec::with_capacity(cloud.len());
    for p in cloud {
        // The query point itself is distance 0, so it is always part of
        // its own k-neighborhood.
        let neighbors = grid.k_nearest(p, k, usize::MAX);
        let mut mean = Vector3::zeros();
        for &(i, _) in &neighbors {
            mean += cloud[i].to_vector();
        }
        mean /= neighbors.len() as f64;
        let mut cov = Matrix3::zeros();
        for &(i, _) in &neighbors {
            let d = cloud[i].to_vector() - mean;
            cov += d * d.transpose();
        }
        cov /= neighbors.len() as f64;
        let eigen = SymmetricEigen::new(cov);
        let mut min_idx = 0;
        for i in 1..3 {
            if eigen.eigenvalues[i] < eigen.eigenvalues[min_idx] {
                min_idx = i;
            }
        }
        let mut normal = eigen.eigenvectors.column(min_idx).into_owned();
        let norm = normal.norm();
        if norm > 0.0 {
            normal /= norm;
        } else {
            normal = Vector3::z();
        }
        // Orientation: the sensor sits at the origin, so normals must
        // face it (dot(n, -p) >= 0).
        if normal.dot(&p.to_vector()) > 0.0 {
            normal = -normal;
        }
        normals.push(normal);
    }
    Ok(NormalCloud {
        points: cloud.to_vec(),
        normals,
    })
}

/// Eigenvalues below this fraction of the largest count as unconstrained
/// directions of the linearized system.
const DOF_EIGEN_RATIO: f64 = 1e-8;

/// Iterative point-to-plane alignment of `source` onto a target with
/// normals. Each step solves the small-angle linearization and is kept
/// only if the plane-distance RMS does not increase.
pub fn icp_point_to_plane(
    source: &[Point3],
    target: &NormalCloud,
    init: &RigidTransform,
    params: &IcpParams,
) -> Result<IcpResult, RegistrationError> {
    if source.len() < 6 {
        return Err(RegistrationError::TooFewPoints {
            got: source.len(),
            need: 6,
        });
    }
    if target.points.len() < 6 {
        return Err(RegistrationError::TooFewPoints {
            got: target.points.len(),
            need: 6,
        });
    }
    let grid = SpatialGrid::new(&target.points);

    let plane_rms = |t: &RigidTransform| -> Result<(f64, Correspondences), RegistrationError> {
        let corr = match_points(source, &grid, t, params);
        if corr.len() < 6 {
            return Err(RegistrationError::NoValidCorrespondences);
        }
        let mut sum = 0.0;
        for &(si, ti, _) in &corr.pairs {
            let moved = t.apply(source[si]).to_vector();
            let r = target.normals[ti].dot(&(moved - target.points[ti].to_vector()));
            sum += r * r;
        }
        Ok(((sum / corr.len() as f64).sqrt(), corr))
    };

    let mut current = *init;
    let (mut current_rms, _) = plane_rms(&current)?;
    let mut history = vec![current_rms];
    let mut iterations = 0;
    let mut unconstrained = 0;

    for _ in 0..params.max_iterations {
        let (_, corr) = plane_rms(&current)?;
        // Normal equations of the small-angle objective: rows are
        // [s' x n ; n] with right-hand side -n . (s' - t).
        let mut a = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for &(si, ti, _) in &corr.pairs {
            let s = current.apply(source[si]).to_vector();
            let n = target.normals[ti];
            let b = -n.dot(&(s - target.points[ti].to_vector()));
            let c = s.cross(&n);
            let row = Vector6::new(c.x, c.y, c.z, n.x, n.y, n.z);
            a += row * row.transpose();
            g += row * b;
        }
        let eigen = SymmetricEigen::new(a);
        let max_eig = eigen.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
        if max_eig <= 1e-12 {
            return Err(RegistrationError::UnconstrainedDegreesOfFreedom);
        }
        // Minimum-norm solve: project out eigendirections the data does
        // not constrain and count them.
        let mut x = Vector6::zeros();
        let mut free = 0;
        for i in 0..6 {
            let lambda = eigen.eigenvalues[i];
            if lambda > DOF_EIGEN_RATIO * max_eig {
                let v = eigen.eigenvectors.column(i);
                x += v * (v.dot(&g) / lambda);
            } else {
                free += 1;
            }
        }
        unconstrained = free;

        let omega = Vector3::new(x[0], x[1], x[2]);
        let t_delta = Vector3::new(x[3], x[4], x[5]);
        let skew = Matrix3::new(
            0.0, -omega.z, omega.y, //
            omega.z, 0.0, -omega.x, //
            -omega.y, omega.x, 0.0,
        );
        let approx = Matrix3::identity() + skew;
        // Re-orthonormalize the small-angle update to the nearest rotation.
        let svd = SVD::new(approx, true, true);
        let u = svd.u.expect("svd with u");
        let v_t = svd.v_t.expect("svd with v_t");
        let d = (u * v_t).determinant();
        let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d.signum()));
        let r_delta = u * correction * v_t;
        let delta = RigidTransform {
            rotation: r_delta,
            translation: t_delta,
        };
        let candidate = delta.compose(&current);

        let (candidate_rms, _) = match plane_rms(&candidate) {
            Ok(v) => v,
            Err(_) => break,
        };
        if candidate_rms > current_rms + 1e-12 {
            break;
        }
        let improvement = current_rms - candidate_rms;
        current = candidate;
        current_rms = candidate_rms;
        history.push(current_rms);
        iterations += 1;
        if improvement < params.tolerance {
            break;
        }
    }

    Ok(IcpResult {
        transform: current,
        rms: current_rms,
        iterations,
        residual_history: history,
        unconstrained_dofs: unconstrained,
    })
}

/// Aligns `source` to `target` with both stages: point-to-point for the
/// coarse estimate, point-to-plane for refinement. Falls back to the
/// point-to-point result when the clouds are too small to support the
/// plane stage.
pub fn register_pair(
    source: &[Point3],
    target: &[Point3],
    init: &RigidTransform,
    params: &IcpParams,
) -> Result<(IcpResult, Option<IcpResult>), RegistrationError> {
    let coarse = icp_point_to_point(source, target, init, params)?;
    if source.len() < 6 || target.len() < 6 {
        return Ok((coarse, None));
    }
    let k = params.normal_neighbors.min(target.len()).max(3);
    let normals = estimate_normals(target, k)?;
    match icp_point_to_plane(source, &normals, &coarse.transform, params) {
        Ok(fine) => Ok((coarse, Some(fine))),
        // Refinement is best-effort; the coarse transform stands alone.
        Err(_) => Ok((coarse, None)),
    }
}

/// Residual record for one registered frame pair.
#[derive(Debug, Clone)]
pub struct PairResidual {
    /// The frame that was registered (source side).
    pub frame: usize,
    /// The anchor frame it was registered against.
    pub anchor: usize,
    pub point_rms: f64,
    pub plane_rms: Option<f64>,
}

/// A track's frames merged into the reference frame's coordinates.
#[derive(Debug, Clone)]
pub struct ReconstructedCloud {
    pub points: Vec<Point3>,
    /// Source frame index per merged point, parallel to `points`.
    pub source_frame: Vec<usize>,
    pub reference: usize,
    /// Frame-to-reference transform per contributing frame; None where
    /// registration failed and the frame was skipped.
    pub transforms: Vec<Option<RigidTransform>>,
    pub pair_residuals: Vec<PairResidual>,
    pub skipped: Vec<usize>,
}

/// Index of the densest cloud: the natural reference frame.
pub fn choose_reference(clouds: &[Vec<Point3>]) -> Option<usize> {
    (0..clouds.len()).max_by_key(|&i| clouds[i].len())
}

/// Registers every frame cloud into the reference frame and merges them.
///
/// The walk proceeds outward from the reference in both directions. Each
/// frame is registered against the nearest previously registered frame
/// (the anchor); a failed registration skips the frame and leaves the
/// anchor in place, so later frames can still bridge the gap.
pub fn reconstruct_track(
    clouds: &[Vec<Point3>],
    reference: usize,
    params: &IcpParams,
) -> Result<ReconstructedCloud, RegistrationError> {
    if clouds.is_empty() {
        return Err(RegistrationError::TooFewPoints { got: 0, need: 1 });
    }
    assert!(reference < clouds.len(), "reference index out of range");

    let n = clouds.len();
    let mut transforms: Vec<Option<RigidTransform>> = vec![None; n];
    transforms[reference] = Some(RigidTransform::identity());
    let mut pair_residuals = Vec::new();
    let mut skipped = Vec::new();

    let walk = |range: Vec<usize>,
                    transforms: &mut Vec<Option<RigidTransform>>,
                    pair_residuals: &mut Vec<PairResidual>,
                    skipped: &mut Vec<usize>| {
        let mut anchor = reference;
        for j in range {
            let source = &clouds[j];
            let target = &clouds[anchor];
            let init = match (centroid(source), centroid(target)) {
                (Ok(sc), Ok(tc)) => RigidTransform::from_translation(
                    tc.to_vector() - sc.to_vector(),
                ),
                _ => {
                    skipped.push(j);
                    continue;
                }
            };
            match register_pair(source, target, &init, params) {
                Ok((coarse, fine)) => {
                    let (pair_transform, plane_rms) = match &fine {
                        Some(f) => (f.transform, Some(f.rms)),
                        None => (coarse.transform, None),
                    };
                    let anchor_to_ref = transforms[anchor].expect("anchor is registered");
                    transforms[j] = Some(anchor_to_ref.compose(&pair_transform));
                    pair_residuals.push(PairResidual {
                        frame: j,
                        anchor,
                        point_rms: coarse.rms,
                        plane_rms,
                    });
                    anchor = j;
                }
                Err(_) => skipped.push(j),
            }
        }
    };

    walk(
        ((reference + 1)..n).collect(),
        &mut transforms,
        &mut pair_residuals,
        &mut skipped,
    );
    walk(
        (0..reference).rev().collect(),
        &mut transforms,
        &mut pair_residuals,
        &mut skipped,
    );
    skipped.sort_unstable();

    let mut points = Vec::new();
    let mut source_frame = Vec::new();
    for (idx, cloud) in clouds.iter().enumerate() {
        if let Some(t) = &transforms[idx] {
            for p in cloud {
                points.push(t.apply(*p));
                source_frame.push(idx);
            }
        }
    }

    Ok(ReconstructedCloud {
        points,
        source_frame,
        reference,
        transforms,
        pair_residuals,
        skipped,
    })
}
