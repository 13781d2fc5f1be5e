//! Acceptance gate: one test per criterion, each printing a single
//! PASS line with its measured numbers (run with `--nocapture` to see
//! them). Every tolerance is pinned in the assertions, and the whole
//! suite runs offline against mock backends only.

use std::collections::HashSet;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use roadcloud::config::{BackendKind, PipelineConfig};
use roadcloud::dbscan::{dbscan, DbscanParams, PointLabel};
use roadcloud::evaluation::macro_f1;
use roadcloud::geometry::{min_oriented_bbox2d, Point3, RigidTransform};
use roadcloud::hungarian::hungarian;
use roadcloud::imaging::{
    dilate, erode, opening, statistical_outlier_removal, RasterImage, StructuringElement,
};
use roadcloud::labels::ClassLabel;
use roadcloud::pipeline::{run_pipeline, PipelineInput};
use roadcloud::prompting::{build_prompt, default_instruction_template, select_demonstrations, Demonstration};
use roadcloud::registration::{choose_reference, reconstruct_track, register_pair, IcpParams};
use roadcloud::synth::{synth_scene, write_scene, SceneSpec, VehicleSpec};
use roadcloud::vlm::{make_batches, Query};

// Criterion 1: the published per-class F1 columns for 3-shot prompting,
// in canonical class order. Their macro averages and the
// processed-minus-original delta must reproduce the reported summary
// numbers within half a rounding unit.

const PROCESSED_3SHOT: [f64; 12] = [
    0.45, 0.94, 0.19, 0.81, 0.43, 0.54, 0.46, 0.80, 0.29, 0.68, 0.41, 0.36,
];
const ORIGINAL_3SHOT: [f64; 12] = [
    0.42, 0.89, 0.12, 0.73, 0.12, 0.35, 0.26, 0.52, 0.43, 0.94, 0.39, 0.35,
];

#[test]
fn criterion_1_table_arithmetic() {
    let start = Instant::now();
    let processed = macro_f1(&PROCESSED_3SHOT);
    let original = macro_f1(&ORIGINAL_3SHOT);
    let delta = processed - original;
    assert!(
        (processed - 0.53).abs() <= 0.005,
        "processed 3-shot macro F1 {processed}"
    );
    assert!(
        (original - 0.46).abs() <= 0.005,
        "original 3-shot macro F1 {original}"
    );
    assert!((delta - 0.07).abs() <= 0.005, "delta {delta}");
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!(
        "criterion 1 (table arithmetic): PASS - processed {processed:.4}, original {original:.4}, delta {delta:+.4}, {elapsed:?}"
    );
}

// Criterion 2: two-stage registration recovers randomized rigid
// transforms (up to 10 degrees and 1 m, sigma = 0.02 m noise) within
// 0.01 rad / 0.02 m in at least 95 of 100 seeded trials, with every
// residual sequence non-increasing.

fn random_rotation(rng: &mut ChaCha8Rng, max_angle: f64) -> nalgebra::Matrix3<f64> {
    let axis = loop {
        let v = nalgebra::Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        if v.norm() > 1e-3 {
            break nalgebra::Unit::new_normalize(v);
        }
    };
    let angle = rng.gen_range(-max_angle..max_angle);
    nalgebra::Rotation3::from_axis_angle(&axis, angle).into_inner()
}

#[test]
fn criterion_2_registration_recovery() {
    let start = Instant::now();
    let params = IcpParams::default();
    let noise = Normal::new(0.0, 0.02).unwrap();
    let mut recovered = 0usize;
    let mut monotone = 0usize;
    const TRIALS: usize = 100;
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + trial as u64);
        // Points on the shell of a 4 x 2 x 1 box: a rigid surface, the
        // regime nearest-neighbor correspondence is defined for.
        let source: Vec<Point3> = (0..500)
            .map(|_| {
                let face: u8 = rng.gen_range(0..6);
                let u: f64 = rng.gen_range(-1.0..1.0);
                let v: f64 = rng.gen_range(-1.0..1.0);
                match face {
                    0 => Point3::new(u * 2.0, v, 0.0),
                    1 => Point3::new(u * 2.0, v, 1.0),
                    2 => Point3::new(u * 2.0, -1.0, (v + 1.0) / 2.0),
                    3 => Point3::new(u * 2.0, 1.0, (v + 1.0) / 2.0),
                    4 => Point3::new(-2.0, v, (u + 1.0) / 2.0),
                    _ => Point3::new(2.0, v, (u + 1.0) / 2.0),
                }
            })
            .collect();
        let rotation = random_rotation(&mut rng, 10f64.to_radians());
        let translation = loop {
            let t = nalgebra::Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if t.norm() <= 1.0 {
                break t;
            }
        };
        let truth = RigidTransform {
            rotation,
            translation,
        };
        let target: Vec<Point3> = source
            .iter()
            .map(|p| {
                let q = truth.apply(*p);
                Point3::new(
                    q.x + noise.sample(&mut rng),
                    q.y + noise.sample(&mut rng),
                    q.z + noise.sample(&mut rng),
                )
            })
            .collect();

        let (coarse, fine) =
            register_pair(&source, &target, &RigidTransform::identity(), &params).unwrap();
        let non_increasing = |history: &[f64]| history.windows(2).all(|w| w[1] <= w[0] + 1e-12);
        let mut all_monotone = non_increasing(&coarse.residual_history);
        let estimate = match &fine {
            Some(result) => {
                all_monotone &= non_increasing(&result.residual_history);
                result.transform.clone()
            }
            None => coarse.transform.clone(),
        };
        if all_monotone {
            monotone += 1;
        }

        let relative_rotation = estimate.rotation * truth.rotation.transpose();
        let angle_error = ((relative_rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
        let translation_error = (estimate.translation - truth.translation).norm();
        if angle_error <= 0.01 && translation_error <= 0.02 {
            recovered += 1;
        }
    }
    let elapsed = start.elapsed();
    assert!(recovered >= 95, "recovered {recovered}/{TRIALS}");
    assert_eq!(monotone, TRIALS, "non-monotone residuals in {} trials", TRIALS - monotone);
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    println!(
        "criterion 2 (registration recovery): PASS - {recovered}/{TRIALS} within 0.01 rad / 0.02 m, residuals non-increasing {monotone}/{TRIALS}, {elapsed:?}"
    );
}

// Criterion 3: merging 10 registered frames of a moving truck must give
// at least 8x the single-frame point count while the oriented bounding
// box stays within 2% per dimension (no smearing).

#[test]
fn criterion_3_reconstruction_densification() {
    let spec = SceneSpec {
        frames: 10,
        background_frames: 3,
        noise_sigma: 0.01,
        vehicles: vec![VehicleSpec::archetype(
            ClassLabel::Container,
            (12.0, 5.0),
            (0.8, 0.0),
        )],
        ..SceneSpec::default()
    };
    let scene = synth_scene(&spec, 42).unwrap();
    let clouds: Vec<Vec<Point3>> = (0..10).map(|f| scene.vehicle_cloud(0, f)).collect();
    let reference = choose_reference(&clouds).unwrap();
    let merged = reconstruct_track(&clouds, reference, &IcpParams::default()).unwrap();
    assert!(merged.skipped.is_empty(), "skipped frames {:?}", merged.skipped);

    let single = &clouds[reference];
    let factor = merged.points.len() as f64 / single.len() as f64;
    assert!(factor >= 8.0, "densification factor {factor:.2}");

    let bbox_single = min_oriented_bbox2d(single).unwrap();
    let bbox_merged = min_oriented_bbox2d(&merged.points).unwrap();
    let mut dims_single = [
        2.0 * bbox_single.half_extents.x,
        2.0 * bbox_single.half_extents.y,
    ];
    let mut dims_merged = [
        2.0 * bbox_merged.half_extents.x,
        2.0 * bbox_merged.half_extents.y,
    ];
    dims_single.sort_by(f64::total_cmp);
    dims_merged.sort_by(f64::total_cmp);
    let mut worst = 0f64;
    for (s, m) in dims_single.iter().zip(&dims_merged) {
        worst = worst.max((m - s).abs() / s);
    }
    let z_extent = |points: &[Point3]| {
        let lo = points.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(|p| p.z).fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    };
    let zs = z_extent(single);
    let zm = z_extent(&merged.points);
    worst = worst.max((zm - zs).abs() / zs);
    assert!(worst <= 0.02, "bbox dimension drift {:.3}%", worst * 100.0);
    println!(
        "criterion 3 (reconstruction densification): PASS - {factor:.1}x points, worst bbox drift {:.2}%",
        worst * 100.0
    );
}

// Criterion 4: library implementations match brute-force oracles
// exactly (assignment cost, cluster partition, outlier set).

fn brute_force_assignment(cost: &[Vec<f64>]) -> f64 {
    let rows = cost.len();
    let cols = cost[0].len();
    // Enumerate injections from the smaller side into the larger.
    fn recurse(
        cost: &[Vec<f64>],
        transposed: bool,
        depth: usize,
        k: usize,
        wide: usize,
        used: &mut Vec<bool>,
        acc: f64,
        best: &mut f64,
    ) {
        if depth == k {
            if acc < *best {
                *best = acc;
            }
            return;
        }
        for j in 0..wide {
            if used[j] {
                continue;
            }
            used[j] = true;
            let c = if transposed { cost[j][depth] } else { cost[depth][j] };
            recurse(cost, transposed, depth + 1, k, wide, used, acc + c, best);
            used[j] = false;
        }
    }
    let transposed = rows > cols;
    let k = rows.min(cols);
    let wide = rows.max(cols);
    let mut best = f64::INFINITY;
    recurse(cost, transposed, 0, k, wide, &mut vec![false; wide], 0.0, &mut best);
    best
}

fn oracle_dbscan(points: &[Point3], params: &DbscanParams) -> (Vec<bool>, Vec<Option<usize>>) {
    let n = points.len();
    let within = |i: usize, j: usize| points[i].distance(&points[j]) <= params.eps;
    let core: Vec<bool> = (0..n)
        .map(|i| (0..n).filter(|&j| within(i, j)).count() >= params.min_points)
        .collect();
    // Union-find over core points connected within eps.
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let root = find(parent, parent[i]);
            parent[i] = root;
        }
        parent[i]
    }
    for i in 0..n {
        if !core[i] {
            continue;
        }
        for j in (i + 1)..n {
            if core[j] && within(i, j) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    let component: Vec<Option<usize>> = (0..n)
        .map(|i| core[i].then(|| find(&mut parent, i)))
        .collect();
    (core, component)
}

fn oracle_sor(cloud: &[Point3], k: usize, std_ratio: f64) -> Vec<Point3> {
    let mean_dists: Vec<f64> = (0..cloud.len())
        .map(|i| {
            let mut dists: Vec<f64> = (0..cloud.len())
                .filter(|&j| j != i)
                .map(|j| cloud[i].distance(&cloud[j]))
                .collect();
            dists.sort_by(f64::total_cmp);
            dists[..k].iter().sum::<f64>() / k as f64
        })
        .collect();
    let n = mean_dists.len() as f64;
    let mean = mean_dists.iter().sum::<f64>() / n;
    let variance = mean_dists.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    let threshold = mean + std_ratio * variance.sqrt();
    cloud
        .iter()
        .zip(&mean_dists)
        .filter(|(_, d)| **d <= threshold)
        .map(|(p, _)| *p)
        .collect()
}

#[test]
fn criterion_4_oracle_equivalence() {
    // Hungarian vs exhaustive assignment on 500 random matrices.
    let mut rng = ChaCha8Rng::seed_from_u64(4001);
    for _ in 0..500 {
        let rows = rng.gen_range(1..=7);
        let cols = rng.gen_range(1..=7);
        let cost: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..cols).map(|_| rng.gen_range(0.0..10.0)).collect())
            .collect();
        let assignment = hungarian(&cost).unwrap();
        assert_eq!(assignment.pairs.len(), rows.min(cols));
        let distinct: HashSet<usize> = assignment.pairs.iter().map(|(_, c)| *c).collect();
        assert_eq!(distinct.len(), assignment.pairs.len(), "repeated column");
        let total: f64 = assignment.pairs.iter().map(|(r, c)| cost[*r][*c]).sum();
        let best = brute_force_assignment(&cost);
        assert!(
            (total - best).abs() < 1e-9,
            "hungarian {total} vs brute force {best} on {cost:?}"
        );
    }

    // DBSCAN vs brute-force density reachability on 100 instances.
    for trial in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(4100 + trial);
        let n = rng.gen_range(1..=200);
        let points: Vec<Point3> = (0..n)
            .map(|_| {
                Point3::new(
                    rng.gen_range(0.0..10.0),
                    rng.gen_range(0.0..10.0),
                    rng.gen_range(0.0..2.0),
                )
            })
            .collect();
        let params = DbscanParams {
            eps: rng.gen_range(0.3..1.5),
            min_points: rng.gen_range(2..=8),
        };
        let clustering = dbscan(&points, &params);
        let (core, component) = oracle_dbscan(&points, &params);
        let within = |i: usize, j: usize| points[i].distance(&points[j]) <= params.eps;
        for i in 0..n {
            match clustering.labels[i] {
                PointLabel::Noise => {
                    assert!(!core[i], "core point {i} labeled noise");
                    assert!(
                        (0..n).all(|j| !core[j] || !within(i, j)),
                        "noise point {i} reaches a core"
                    );
                }
                PointLabel::Cluster(c) => {
                    // The claimed cluster must contain a core point within
                    // eps (for cores: themselves).
                    assert!(
                        clustering.clusters[c]
                            .iter()
                            .any(|&j| core[j] && within(i, j)),
                        "point {i} in cluster {c} without a reaching core"
                    );
                }
            }
        }
        // Core points cluster together exactly when density-connected.
        for i in 0..n {
            if !core[i] {
                continue;
            }
            for j in (i + 1)..n {
                if !core[j] {
                    continue;
                }
                let same_cluster = clustering.labels[i] == clustering.labels[j];
                let same_component = component[i] == component[j];
                assert_eq!(
                    same_cluster, same_component,
                    "cores {i},{j}: cluster {same_cluster} vs oracle {same_component}"
                );
            }
        }
    }

    // Statistical outlier removal vs brute-force kNN recomputation.
    for trial in 0..60 {
        let mut rng = ChaCha8Rng::seed_from_u64(4200 + trial);
        let k = rng.gen_range(3..=15);
        let n = rng.gen_range((k + 5).max(30)..=250);
        let blob = Normal::new(0.0, 1.0).unwrap();
        let points: Vec<Point3> = (0..n)
            .map(|i| {
                if i % 10 == 0 {
                    // Scattered far points: actual outliers to remove.
                    Point3::new(
                        rng.gen_range(-20.0..20.0),
                        rng.gen_range(-20.0..20.0),
                        rng.gen_range(-20.0..20.0),
                    )
                } else {
                    Point3::new(
                        blob.sample(&mut rng),
                        blob.sample(&mut rng),
                        blob.sample(&mut rng),
                    )
                }
            })
            .collect();
        let std_ratio = rng.gen_range(0.5..2.0);
        let kept = statistical_outlier_removal(&points, k, std_ratio).unwrap();
        let expected = oracle_sor(&points, k, std_ratio);
        assert_eq!(kept, expected, "k={k} ratio={std_ratio}");
    }

    println!("criterion 4 (oracle equivalence): PASS - hungarian 500/500, dbscan 100/100, outlier removal 60/60 exact");
}

// Criterion 5: morphological laws hold bitwise on 1000 random images.

fn random_image(rng: &mut ChaCha8Rng) -> RasterImage {
    let width = rng.gen_range(6..40);
    let height = rng.gen_range(6..40);
    let density = rng.gen_range(0.15..0.75);
    let pixels = (0..width * height)
        .map(|_| if rng.gen_bool(density) { 255u8 } else { 0 })
        .collect();
    RasterImage {
        width,
        height,
        pixels,
        scale: 1.0,
        origin: (0.0, 0.0),
    }
}

fn subset(a: &RasterImage, b: &RasterImage) -> bool {
    a.pixels.iter().zip(&b.pixels).all(|(x, y)| *x == 0 || *y > 0)
}

#[test]
fn criterion_5_morphology_laws() {
    let se = StructuringElement::square3();
    let mut rng = ChaCha8Rng::seed_from_u64(555);
    for _ in 0..1000 {
        let image = random_image(&mut rng);
        let opened = opening(&image, &se);

        // Anti-extensive and idempotent.
        assert!(subset(&opened, &image), "opening added pixels");
        let twice = opening(&opened, &se);
        assert_eq!(twice.pixels, opened.pixels, "opening not idempotent");

        // Monotone: add lit pixels, opening can only grow.
        let mut larger = image.clone();
        for _ in 0..(larger.width * larger.height / 8) {
            let r = rng.gen_range(0..larger.height);
            let c = rng.gen_range(0..larger.width);
            larger.set(r, c, 255);
        }
        let opened_larger = opening(&larger, &se);
        assert!(subset(&opened, &opened_larger), "opening not monotone");

        // Duality on the interior: complement of erosion equals dilation
        // of the complement away from the border, where the implicit
        // out-of-bounds background differs between the two.
        let complement = RasterImage {
            pixels: image.pixels.iter().map(|p| if *p > 0 { 0 } else { 255 }).collect(),
            ..image.clone()
        };
        let eroded = erode(&image, &se);
        let dilated_complement = dilate(&complement, &se);
        for r in 1..image.height - 1 {
            for c in 1..image.width - 1 {
                let lhs = eroded.get(r, c) == 0;
                let rhs = dilated_complement.get(r, c) > 0;
                assert_eq!(lhs, rhs, "duality broken at ({r},{c})");
            }
        }
    }
    println!("criterion 5 (morphology laws): PASS - idempotent, anti-extensive, monotone, dual on 1000 images");
}

// Criterion 6: the two-vehicle crossing scene yields exactly 2
// confirmed tracks with consistent identities in at least 19 of 20
// noise realizations.

#[test]
fn criterion_6_tracking_identity() {
    use roadcloud::background::{extract_foreground, learn_background};
    use roadcloud::tracking::{clusters_from_clustering, Tracker};

    // Paths cross at (-2, 4): the first vehicle passes around frame 12,
    // the second arrives there near frame 29, so the crossing point is
    // shared but never at the same time.
    let spec = SceneSpec {
        frames: 30,
        background_frames: 4,
        noise_sigma: 0.02,
        vehicles: vec![
            VehicleSpec::archetype(ClassLabel::PassengerVehicle, (-12.0, 4.0), (0.8, 0.0)),
            VehicleSpec::archetype(ClassLabel::Bobtail, (-2.0, 28.0), (0.0, -0.8)),
        ],
        ..SceneSpec::default()
    };
    let config = PipelineConfig::default();

    let mut successes = 0usize;
    const SEEDS: u64 = 20;
    for seed in 0..SEEDS {
        let scene = synth_scene(&spec, 9000 + seed).unwrap();
        let grid = config.sector_grid();
        let model = learn_background(&scene.background_frames, &grid, &config.learn_params()).unwrap();
        let mut tracker = Tracker::new(config.sort_params());
        for (index, frame) in scene.vehicle_frames.iter().enumerate() {
            let foreground = extract_foreground(frame, &model, config.background.margin_m);
            let clustering = dbscan(&foreground, &config.dbscan_params());
            let clusters = clusters_from_clustering(&foreground, &clustering).unwrap();
            tracker.step(index, &clusters, config.tracking.frame_dt_s).unwrap();
        }

        let confirmed: Vec<_> = tracker
            .tracks
            .iter()
            .filter(|t| t.hits >= config.tracking.min_hits)
            .collect();
        if confirmed.len() != 2 {
            continue;
        }
        // Each track must follow one scripted vehicle for its entire
        // life, and the two tracks must cover both vehicles.
        let mut identities = Vec::new();
        let mut consistent = true;
        for track in &confirmed {
            let mut owner: Option<usize> = None;
            for (frame, cluster) in &track.observations {
                let c = cluster.centroid;
                let nearest = (0..2)
                    .min_by(|&a, &b| {
                        let da = scene.true_center(a, *frame);
                        let db = scene.true_center(b, *frame);
                        let d2a = (c.x - da.0).powi(2) + (c.y - da.1).powi(2);
                        let d2b = (c.x - db.0).powi(2) + (c.y - db.1).powi(2);
                        d2a.partial_cmp(&d2b).unwrap()
                    })
                    .unwrap();
                match owner {
                    None => owner = Some(nearest),
                    Some(v) if v == nearest => {}
                    Some(_) => {
                        consistent = false;
                        break;
                    }
                }
            }
            identities.push(owner);
        }
        if consistent && identities[0] != identities[1] {
            successes += 1;
        }
    }
    assert!(
        successes >= 19,
        "identity preserved in only {successes}/{SEEDS} realizations"
    );
    println!(
        "criterion 6 (tracking identity): PASS - {successes}/{SEEDS} realizations with 2 consistent confirmed tracks"
    );
}

// Criterion 7: the full pipeline on a seeded 3-class scene with the
// truth-table mock reaches macro F1 = 1.0 and reproduces every artifact
// byte for byte across two runs (latencies excluded).

#[test]
fn criterion_7_end_to_end_determinism() {
    let start = Instant::now();
    let mut container = VehicleSpec::archetype(ClassLabel::Container, (12.0, 6.0), (0.8, 0.0));
    container.points_per_frame = 700;
    let mut bobtail = VehicleSpec::archetype(ClassLabel::Bobtail, (-14.0, 10.0), (0.0, -0.7));
    bobtail.points_per_frame = 500;
    let spec = SceneSpec {
        frames: 14,
        background_frames: 4,
        noise_sigma: 0.01,
        vehicles: vec![
            container,
            VehicleSpec::archetype(ClassLabel::PassengerVehicle, (10.0, -6.0), (-0.6, 0.0)),
            bobtail,
        ],
        ..SceneSpec::default()
    };

    let tmp = tempfile::tempdir().unwrap();
    let input_dir = tmp.path().join("input");
    write_scene(&input_dir, &synth_scene(&spec, 21).unwrap()).unwrap();

    let mut config = PipelineConfig::default();
    config.seed = 21;
    config.classify.backend = BackendKind::MockTruth;
    config.classify.shots = 3;
    config.classify.batch_count = 2;
    let input = PipelineInput::from_dir(&input_dir);

    let run_a = tmp.path().join("run_a");
    let run_b = tmp.path().join("run_b");
    let report_a = run_pipeline(&config, &input, &run_a).unwrap();
    let report_b = run_pipeline(&config, &input, &run_b).unwrap();
    assert_eq!(report_a.macro_f1, 1.0, "macro F1 {}", report_a.macro_f1);
    assert_eq!(report_a, report_b);

    // Byte-identical artifacts, with classification latencies (the only
    // wall-clock values in any artifact) normalized before comparison.
    let manifest_a = std::fs::read(run_a.join("manifest.tsv")).unwrap();
    let manifest_b = std::fs::read(run_b.join("manifest.tsv")).unwrap();
    assert_eq!(manifest_a, manifest_b, "manifests differ");
    let mut compared = 0usize;
    for line in String::from_utf8(manifest_a.clone()).unwrap().lines() {
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        let path = line.split('\t').next().unwrap();
        let a = std::fs::read(run_a.join(path)).unwrap();
        let b = std::fs::read(run_b.join(path)).unwrap();
        if path == "results.jsonl" {
            let strip = |bytes: &[u8]| -> Vec<serde_json::Value> {
                String::from_utf8(bytes.to_vec())
                    .unwrap()
                    .lines()
                    .map(|l| {
                        let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                        v["latency_seconds"] = 0.0.into();
                        v
                    })
                    .collect()
            };
            assert_eq!(strip(&a), strip(&b), "results differ beyond latency");
        } else {
            assert_eq!(a, b, "artifact {path} differs");
        }
        compared += 1;
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 120.0, "took {elapsed:?}");
    println!(
        "criterion 7 (end-to-end determinism): PASS - macro F1 1.0, {compared} artifacts byte-identical, {elapsed:?}"
    );
}

// Criterion 8: prompts carry exactly k+1 images for every shot count,
// and batching is contiguous, balanced, and order-preserving.

fn tiny_image(tag: u8) -> RasterImage {
    RasterImage {
        width: 3,
        height: 2,
        pixels: vec![tag, 0, 255, 0, tag ^ 0xff, 0],
        scale: 1.0,
        origin: (0.0, 0.0),
    }
}

#[test]
fn criterion_8_prompt_batch_structure() {
    let pool: Vec<Demonstration> = ClassLabel::ALL
        .iter()
        .enumerate()
        .map(|(i, label)| Demonstration {
            image: tiny_image(i as u8),
            label: *label,
        })
        .collect();
    let query = tiny_image(200);
    for k in [0usize, 1, 3, 5, 7, 9] {
        let demos = select_demonstrations(&pool, k, 77, default_instruction_template()).unwrap();
        let prompt = build_prompt(&demos, &query, &ClassLabel::ALL);
        assert_eq!(prompt.image_count(), k + 1, "k={k}");
    }

    for n in 1..100usize {
        let queries: Vec<Query> = (0..n)
            .map(|i| Query {
                id: format!("q{i}"),
                prompt: build_prompt(
                    &select_demonstrations(&pool, 0, 1, default_instruction_template()).unwrap(),
                    &query,
                    &ClassLabel::ALL,
                ),
            })
            .collect();
        let batches = make_batches(queries, 5);
        assert_eq!(batches.len(), n.min(5), "n={n}");
        let sizes: Vec<usize> = batches.iter().map(|b| b.queries.len()).collect();
        let max = sizes.iter().max().unwrap();
        let min = sizes.iter().min().unwrap();
        assert!(max - min <= 1, "n={n} sizes {sizes:?}");
        let flattened: Vec<String> = batches
            .iter()
            .flat_map(|b| b.queries.iter().map(|q| q.id.clone()))
            .collect();
        let expected: Vec<String> = (0..n).map(|i| format!("q{i}")).collect();
        assert_eq!(flattened, expected, "n={n} not in input order");
    }
    println!("criterion 8 (prompt/batch structure): PASS - k+1 images for k in {{0,1,3,5,7,9}}, balanced contiguous batches for n in 1..100");
}
