//! Synthetic scene generation: box-shaped vehicles on constant-velocity
//! ground-plane trajectories, sampled as surface point clouds with
//! Gaussian range noise, plus the ground-truth bookkeeping (labels,
//! per-point memberships, per-frame poses) that desk-scale tests score
//! against.
//!
//! Coordinates are sensor-centric: the sensor sits at the origin,
//! `sensor_height` above a ground plane at z = -sensor_height.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::{Frame, Point3, RigidTransform};
use crate::io::IoError;
use crate::labels::ClassLabel;
use nalgebra::Vector3;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("vehicle {vehicle} leaves sensor range at frame {frame} (distance {distance:.1} m)")]
    OutOfRange {
        vehicle: usize,
        frame: usize,
        distance: f64,
    },
    #[error("noise sigma must be >= 0, got {0}")]
    NegativeSigma(f64),
    #[error("scene needs at least one frame")]
    NoFrames,
    #[error("vehicle {0} needs at least one point per frame")]
    EmptyVehicle(usize),
}

/// One scripted vehicle: a box of the class archetype's dimensions
/// moving at constant ground-plane velocity, its length axis along the
/// travel direction.
#[derive(Debug, Clone)]
pub struct VehicleSpec {
    pub label: ClassLabel,
    /// (length, width, height), meters.
    pub dimensions: (f64, f64, f64),
    /// Ground-plane center at frame 0, meters.
    pub start: (f64, f64),
    /// Ground-plane displacement per frame, meters.
    pub velocity: (f64, f64),
    /// Surface samples per frame.
    pub points_per_frame: usize,
}

/// Plausible (length, width, height) for each class, meters. These are
/// generator defaults, not measurements.
pub fn archetype_dimensions(label: ClassLabel) -> (f64, f64, f64) {
    match label {
        ClassLabel::AutoTransporter => (20.0, 2.6, 4.0),
        ClassLabel::Bobtail => (7.0, 2.5, 3.8),
        ClassLabel::PlatformSu => (8.0, 2.5, 3.0),
        ClassLabel::TankTank => (19.0, 2.5, 3.6),
        ClassLabel::Container => (18.0, 2.6, 4.1),
        ClassLabel::DumpTankSemi => (16.0, 2.6, 3.4),
        ClassLabel::EnclosedVanSemi => (21.0, 2.6, 4.1),
        ClassLabel::EnclosedVanSu => (9.0, 2.5, 3.5),
        ClassLabel::LowBoyPlatform => (17.0, 2.6, 2.4),
        ClassLabel::PassengerVehicle => (4.8, 1.9, 1.5),
        ClassLabel::PickupUtilityService => (6.0, 2.0, 2.0),
        ClassLabel::PlatformSemi => (18.0, 2.6, 3.0),
    }
}

impl VehicleSpec {
    pub fn archetype(label: ClassLabel, start: (f64, f64), velocity: (f64, f64)) -> Self {
        VehicleSpec {
            label,
            dimensions: archetype_dimensions(label),
            start,
            velocity,
            points_per_frame: 400,
        }
    }

    /// Travel heading; a parked vehicle faces +x.
    pub fn heading(&self) -> f64 {
        if self.velocity.0 == 0.0 && self.velocity.1 == 0.0 {
            0.0
        } else {
            self.velocity.1.atan2(self.velocity.0)
        }
    }

    fn center_at(&self, frame: usize) -> (f64, f64) {
        (
            self.start.0 + self.velocity.0 * frame as f64,
            self.start.1 + self.velocity.1 * frame as f64,
        )
    }
}

/// Scene script: static ground plus the vehicles.
#[derive(Debug, Clone)]
pub struct SceneSpec {
    /// Vehicle-bearing frames.
    pub frames: usize,
    /// Vehicle-free frames emitted for background learning.
    pub background_frames: usize,
    /// Gaussian range noise along each return's ray, meters.
    pub noise_sigma: f64,
    /// Maximum sensor range, meters.
    pub sensor_range: f64,
    /// Sensor height above the ground plane, meters.
    pub sensor_height: f64,
    /// Maximum horizontal distance of ground returns, meters.
    pub ground_extent: f64,
    pub vehicles: Vec<VehicleSpec>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            frames: 30,
            background_frames: 10,
            noise_sigma: 0.02,
            sensor_range: 100.0,
            sensor_height: 2.0,
            ground_extent: 40.0,
            vehicles: Vec::new(),
        }
    }
}

/// Generated scene: frames plus every piece of ground truth the
/// generator knows.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    /// Vehicle-free frames, timestamps 0, dt, ...
    pub background_frames: Vec<Frame>,
    /// Frames with vehicles, timestamps continuing after the background.
    pub vehicle_frames: Vec<Frame>,
    /// Per vehicle frame, per point: Some(vehicle index) or None for
    /// background returns. Aligned with `vehicle_frames[f].points`.
    pub memberships: Vec<Vec<Option<usize>>>,
    /// Per vehicle: its class.
    pub labels: Vec<ClassLabel>,
    /// Per vehicle, per frame: the local-to-sensor pose of the box.
    pub poses: Vec<Vec<RigidTransform>>,
}

impl SyntheticScene {
    /// The points of one vehicle in one frame, in sensor coordinates.
    pub fn vehicle_cloud(&self, vehicle: usize, frame: usize) -> Vec<Point3> {
        self.vehicle_frames[frame]
            .points
            .iter()
            .zip(self.memberships[frame].iter())
            .filter(|(_, m)| **m == Some(vehicle))
            .map(|(p, _)| *p)
            .collect()
    }

    /// Ground-truth transform taking vehicle points observed in frame
    /// `from` onto their positions in frame `to`.
    pub fn true_step(&self, vehicle: usize, from: usize, to: usize) -> RigidTransform {
        let a = &self.poses[vehicle][from];
        let b = &self.poses[vehicle][to];
        b.compose(&a.inverse())
    }

    /// Ground-plane center of a vehicle at a frame.
    pub fn true_center(&self, vehicle: usize, frame: usize) -> (f64, f64) {
        let t = &self.poses[vehicle][frame].translation;
        (t.x, t.y)
    }
}

/// Fixed per-vehicle surface template in box-local coordinates (origin
/// at the box's ground-plane center, length along +x, z up from the
/// ground). Area-weighted uniform sampling over all six faces.
fn sample_box_template(rng: &mut ChaCha8Rng, dims: (f64, f64, f64), n: usize) -> Vec<Point3> {
    let (l, w, h) = dims;
    let areas = [
        l * w, // bottom
        l * w, // top
        l * h, // near side
        l * h, // far side
        w * h, // tail
        w * h, // nose
    ];
    let total: f64 = areas.iter().sum();
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let mut pick = rng.gen_range(0.0..total);
        let mut face = 0;
        for (i, a) in areas.iter().enumerate() {
            if pick < *a {
                face = i;
                break;
            }
            pick -= a;
        }
        let u: f64 = rng.gen_range(-0.5..0.5);
        let v: f64 = rng.gen_range(-0.5..0.5);
        let p = match face {
            0 => Point3::new(u * l, v * w, 0.0),
            1 => Point3::new(u * l, v * w, h),
            2 => Point3::new(u * l, -w / 2.0, (v + 0.5) * h),
            3 => Point3::new(u * l, w / 2.0, (v + 0.5) * h),
            4 => Point3::new(-l / 2.0, u * w, (v + 0.5) * h),
            _ => Point3::new(l / 2.0, u * w, (v + 0.5) * h),
        };
        points.push(p);
    }
    points
}

/// Static ground returns, cast the way the sensor scans: one ray per
/// azimuth bin center and per below-horizon elevation bin center of the
/// default sector grid. Every cell the ground plane can occupy is then
/// observed in every frame, so background learning covers the whole
/// ground and nothing static leaks into the foreground.
fn ground_template(spec: &SceneSpec) -> Vec<Point3> {
    let grid = crate::background::SectorGrid::default();
    let elev_step = (grid.elevation_max - grid.elevation_min) / grid.elevation_bins as f64;
    let az_step = std::f64::consts::TAU / grid.azimuth_bins as f64;
    let mut points = Vec::new();
    for e in 0..grid.elevation_bins {
        let theta = grid.elevation_min + (e as f64 + 0.5) * elev_step;
        if theta >= 0.0 {
            continue;
        }
        let range = spec.sensor_height / (-theta.sin());
        let horizontal = range * theta.cos();
        if horizontal > spec.ground_extent || range > spec.sensor_range || range <= 2.0 {
            continue;
        }
        for a in 0..grid.azimuth_bins {
            let phi = (a as f64 + 0.5) * az_step;
            points.push(Point3::new(
                horizontal * phi.cos(),
                horizontal * phi.sin(),
                -spec.sensor_height,
            ));
        }
    }
    points
}

fn pose_at(vehicle: &VehicleSpec, frame: usize, sensor_height: f64) -> RigidTransform {
    let (cx, cy) = vehicle.center_at(frame);
    RigidTransform::from_z_rotation(
        vehicle.heading(),
        Vector3::new(cx, cy, -sensor_height),
    )
}

/// Applies Gaussian range noise along the return's ray.
fn jitter(rng: &mut ChaCha8Rng, noise: &Option<Normal<f64>>, p: Point3) -> Point3 {
    match noise {
        None => p,
        Some(dist) => {
            let r = (p.x * p.x + p.y * p.y + p.z * p.z).sqrt();
            if r == 0.0 {
                return p;
            }
            let eps = dist.sample(rng);
            let scale = (r + eps) / r;
            Point3::new(p.x * scale, p.y * scale, p.z * scale)
        }
    }
}

/// Generates the full scene deterministically for a seed.
pub fn synth_scene(spec: &SceneSpec, seed: u64) -> Result<SyntheticScene, SynthError> {
    if spec.frames == 0 {
        return Err(SynthError::NoFrames);
    }
    if spec.noise_sigma < 0.0 {
        return Err(SynthError::NegativeSigma(spec.noise_sigma));
    }
    for (v, vehicle) in spec.vehicles.iter().enumerate() {
        if vehicle.points_per_frame == 0 {
            return Err(SynthError::EmptyVehicle(v));
        }
        let (l, w, h) = vehicle.dimensions;
        let half_diag = 0.5 * (l * l + w * w + h * h).sqrt();
        for frame in 0..spec.frames {
            let (cx, cy) = vehicle.center_at(frame);
            let distance = (cx * cx + cy * cy).sqrt();
            if distance + half_diag > spec.sensor_range {
                return Err(SynthError::OutOfRange {
                    vehicle: v,
                    frame,
                    distance,
                });
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = if spec.noise_sigma > 0.0 {
        Some(Normal::new(0.0, spec.noise_sigma).expect("sigma validated"))
    } else {
        None
    };

    // Fixed templates: the ground grid and one surface sample per
    // vehicle. Per-frame variation is the rigid motion plus range noise.
    let ground = ground_template(spec);
    let templates: Vec<Vec<Point3>> = spec
        .vehicles
        .iter()
        .map(|v| sample_box_template(&mut rng, v.dimensions, v.points_per_frame))
        .collect();

    let mut background_frames = Vec::with_capacity(spec.background_frames);
    for f in 0..spec.background_frames {
        let points: Vec<Point3> = ground
            .iter()
            .map(|&p| jitter(&mut rng, &noise, p))
            .collect();
        background_frames.push(Frame::new(f as f64, points));
    }

    let mut vehicle_frames = Vec::with_capacity(spec.frames);
    let mut memberships = Vec::with_capacity(spec.frames);
    let mut poses: Vec<Vec<RigidTransform>> = vec![Vec::with_capacity(spec.frames); spec.vehicles.len()];
    for f in 0..spec.frames {
        let mut points: Vec<Point3> = Vec::with_capacity(
            ground.len()
                + spec
                    .vehicles
                    .iter()
                    .map(|v| v.points_per_frame)
                    .sum::<usize>(),
        );
        let mut membership = Vec::with_capacity(points.capacity());
        for &p in &ground {
            points.push(jitter(&mut rng, &noise, p));
            membership.push(None);
        }
        for (v, vehicle) in spec.vehicles.iter().enumerate() {
            let pose = pose_at(vehicle, f, spec.sensor_height);
            for &local in &templates[v] {
                let world = pose.apply(local);
                points.push(jitter(&mut rng, &noise, world));
                membership.push(Some(v));
            }
            poses[v].push(pose);
        }
        vehicle_frames.push(Frame::new((spec.background_frames + f) as f64, points));
        memberships.push(membership);
    }

    Ok(SyntheticScene {
        background_frames,
        vehicle_frames,
        memberships,
        labels: spec.vehicles.iter().map(|v| v.label).collect(),
        poses,
    })
}

/// Persists a scene in the directory layout the pipeline ingests:
/// `background/` and `frames/` point files plus the ground-truth
/// sidecars (`gt_labels.csv`, `gt_centers.txt`, `gt_memberships.txt`,
/// `gt_transforms.txt`). Vehicles are identified by their index.
pub fn write_scene(dir: &Path, scene: &SyntheticScene) -> Result<(), IoError> {
    crate::io::write_frames(&dir.join("background"), &scene.background_frames)?;
    crate::io::write_frames(&dir.join("frames"), &scene.vehicle_frames)?;

    let truth: Vec<(String, ClassLabel)> = scene
        .labels
        .iter()
        .enumerate()
        .map(|(v, label)| (v.to_string(), *label))
        .collect();
    crate::io::write_ground_truth(&dir.join("gt_labels.csv"), &truth)?;

    let mut centers = String::from("# vehicle frame cx cy\n");
    for (v, poses) in scene.poses.iter().enumerate() {
        for (f, pose) in poses.iter().enumerate() {
            let _ = writeln!(
                centers,
                "{v} {f} {} {}",
                pose.translation.x, pose.translation.y
            );
        }
    }
    crate::io::write_text(&dir.join("gt_centers.txt"), &centers)?;

    let mut members = String::from("# frame point_index vehicle\n");
    for (f, frame) in scene.memberships.iter().enumerate() {
        for (i, m) in frame.iter().enumerate() {
            if let Some(v) = m {
                let _ = writeln!(members, "{f} {i} {v}");
            }
        }
    }
    crate::io::write_text(&dir.join("gt_memberships.txt"), &members)?;

    let mut transforms = String::from("# vehicle frame r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz\n");
    for (v, poses) in scene.poses.iter().enumerate() {
        for (f, pose) in poses.iter().enumerate() {
            let nums = crate::io::transform_to_array(pose);
            let _ = write!(transforms, "{v} {f}");
            for n in nums {
                let _ = write!(transforms, " {n}");
            }
            transforms.push('\n');
        }
    }
    crate::io::write_text(&dir.join("gt_transforms.txt"), &transforms)?;
    Ok(())
}

/// Parses `gt_centers.txt` written by [`write_scene`] into
/// `(vehicle, frame, cx, cy)` rows.
pub fn parse_centers(text: &str) -> Result<Vec<(usize, usize, f64, f64)>, IoError> {
    let mut rows = Vec::new();
    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parsed = if fields.len() == 4 {
            match (
                fields[0].parse::<usize>(),
                fields[1].parse::<usize>(),
                fields[2].parse::<f64>(),
                fields[3].parse::<f64>(),
            ) {
                (Ok(v), Ok(f), Ok(x), Ok(y)) => Some((v, f, x, y)),
                _ => None,
            }
        } else {
            None
        };
        match parsed {
            Some(row) => rows.push(row),
            None => {
                return Err(IoError::MalformedLine {
                    file: "gt_centers.txt".to_string(),
                    line: line_no + 1,
                    text: line.to_string(),
                })
            }
        }
    }
    Ok(rows)
}
