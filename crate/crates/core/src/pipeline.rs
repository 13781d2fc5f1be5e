//! End-to-end orchestration. Every stage consumes the previous stage's
//! persisted artifacts under one run directory and writes its own, so
//! each stage can be re-run independently; [`run_pipeline`] chains them
//! all and returns the evaluation report.
//!
//! Run-directory layout (all paths relative to the run directory,
//! recorded with their producing stage in `manifest.tsv`):
//!
//! ```text
//! config.toml                   configuration snapshot
//! background/model.txt          learned background model
//! foreground/frame_NNNNNN.txt   foreground points per input frame
//! tracks/dump.txt               observation ledger for every track
//! tracks/index.tsv              tracks selected for classification
//! tracks/track_NNNN/            that track's per-observation clusters
//! clouds/track_NNNN.txt         reconstructed cloud (+ .meta.json)
//! clouds/skipped.tsv            tracks reconstruction had to drop
//! images/track_NNNN_side_raw.pgm  projections (side/top, raw/proc)
//! gt_tracks.csv                 ground truth joined onto track ids
//! results.jsonl                 one classification result per track
//! report.json, report.txt       evaluation output
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::background::{extract_foreground, learn_background, BackgroundModel};
use crate::config::{BackendKind, PipelineConfig};
use crate::dbscan::dbscan;
use crate::evaluation::{f1_report, format_text_table, join_predictions, Report, RunMetadata};
use crate::geometry::{Frame, Point3};
use crate::imaging::{
    opening, project_to_image, statistical_outlier_removal, RasterImage, StructuringElement, View,
};
use crate::io::{self, Manifest};
use crate::labels::ClassLabel;
use crate::prompting::{
    build_prompt, default_instruction_template, select_demonstrations, Demonstration,
};
use crate::registration::{choose_reference, reconstruct_track};
use crate::tracking::{clusters_from_clustering, dump_tracks, Tracker};
use crate::vlm::{
    classify_batch, fingerprint, make_batches, one_hot, Backend, ClassificationResult,
    MockBackend, MockRule, Query, RemoteBackend, RetryPolicy, ThreadSleeper,
};

/// Any stage failure, tagged with the stage that raised it so a halted
/// run names the subcommand to re-run.
#[derive(Debug, thiserror::Error)]
#[error("{stage}: {message}")]
pub struct PipelineError {
    pub stage: &'static str,
    pub message: String,
}

fn stage_err<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError {
        stage,
        message: e.to_string(),
    }
}

/// Where a run's inputs live. Ground-truth files are optional: without
/// them the pipeline still classifies but cannot evaluate.
#[derive(Debug, Clone)]
pub struct PipelineInput {
    pub background_dir: PathBuf,
    pub frames_dir: PathBuf,
    pub labels_path: Option<PathBuf>,
    pub centers_path: Option<PathBuf>,
}

impl PipelineInput {
    /// The conventional layout written by scene generation:
    /// `background/`, `frames/`, and the `gt_*` sidecars when present.
    pub fn from_dir(dir: &Path) -> Self {
        let labels = dir.join("gt_labels.csv");
        let centers = dir.join("gt_centers.txt");
        PipelineInput {
            background_dir: dir.join("background"),
            frames_dir: dir.join("frames"),
            labels_path: labels.is_file().then_some(labels),
            centers_path: centers.is_file().then_some(centers),
        }
    }
}

/// One selected track's persisted observations: the artifact handed from
/// the track stage to reconstruction, rendering, and association.
#[derive(Debug, Clone)]
pub struct TrackArtifact {
    pub id: u64,
    pub hits: usize,
    pub status: String,
    /// Input frame index of each observation, ascending.
    pub frames: Vec<usize>,
    /// Cluster points of each observation, in sensor coordinates.
    pub clouds: Vec<Vec<Point3>>,
}

fn track_dir_name(id: u64) -> String {
    format!("track_{id:04}")
}

/// Replaces `stage`'s entries in the run manifest, keeping every other
/// stage's rows in place so stages stay independently re-runnable.
fn update_manifest(
    run_dir: &Path,
    stage: &'static str,
    artifacts: &[String],
) -> Result<(), PipelineError> {
    let path = run_dir.join("manifest.tsv");
    let mut manifest = if path.is_file() {
        Manifest::load(&path).map_err(stage_err(stage))?
    } else {
        Manifest::new()
    };
    manifest.entries.retain(|(_, s)| s != stage);
    for artifact in artifacts {
        manifest.record(artifact.clone(), stage);
    }
    manifest.save(&path).map_err(stage_err(stage))
}

/// Clears a stage's output directory so re-runs never leave stale
/// artifacts from a previous, larger run.
fn reset_dir(dir: &Path, stage: &'static str) -> Result<(), PipelineError> {
    match std::fs::remove_dir_all(dir) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(PipelineError {
            stage,
            message: format!("{}: {e}", dir.display()),
        }),
    }
}

fn worker_pool(jobs: usize, stage: &'static str) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(stage_err(stage))
}

/// Learns the background model from the input's background frames and
/// writes `background/model.txt`.
pub fn learn_stage(
    config: &PipelineConfig,
    input: &PipelineInput,
    run_dir: &Path,
) -> Result<(), PipelineError> {
    const STAGE: &str = "learn-bg";
    let frames = io::ingest_frames(&input.background_dir).map_err(stage_err(STAGE))?;
    let grid = config.sector_grid();
    let model = learn_background(&frames, &grid, &config.learn_params()).map_err(stage_err(STAGE))?;
    io::write_text(&run_dir.join("background/model.txt"), &model.to_text())
        .map_err(stage_err(STAGE))?;
    update_manifest(run_dir, STAGE, &["background/model.txt".to_string()])
}

/// Subtracts the persisted background from every input frame and writes
/// the foreground points under `foreground/`.
pub fn extract_stage(
    config: &PipelineConfig,
    input: &PipelineInput,
    run_dir: &Path,
) -> Result<(), PipelineError> {
    const STAGE: &str = "extract";
    let model =
        BackgroundModel::load(&run_dir.join("background/model.txt")).map_err(stage_err(STAGE))?;
    let frames = io::ingest_frames(&input.frames_dir).map_err(stage_err(STAGE))?;
    let margin = config.background.margin_m;
    let foreground: Vec<Frame> = frames
        .iter()
        .map(|f| Frame::new(f.timestamp, extract_foreground(f, &model, margin)))
        .collect();
    let dir = run_dir.join("foreground");
    reset_dir(&dir, STAGE)?;
    io::write_frames(&dir, &foreground).map_err(stage_err(STAGE))?;
    let artifacts: Vec<String> = (0..foreground.len())
        .map(|i| format!("foreground/frame_{i:06}.txt"))
        .collect();
    update_manifest(run_dir, STAGE, &artifacts)
}

/// Clusters each foreground frame, runs the tracker over the sequence,
/// and persists the full dump plus per-track observation clouds for
/// every track with enough hits to classify. With ground truth in the
/// input, also joins truth labels onto track ids as `gt_tracks.csv`.
pub fn track_stage(
    config: &PipelineConfig,
    input: &PipelineInput,
    run_dir: &Path,
) -> Result<(), PipelineError> {
    const STAGE: &str = "track";
    let foreground = io::ingest_frames(&run_dir.join("foreground")).map_err(stage_err(STAGE))?;
    let params = config.dbscan_params();
    let mut tracker = Tracker::new(config.sort_params());
    let dt = config.tracking.frame_dt_s;
    for (index, frame) in foreground.iter().enumerate() {
        let clustering = dbscan(&frame.points, &params);
        let clusters =
            clusters_from_clustering(&frame.points, &clustering).map_err(stage_err(STAGE))?;
        tracker.step(index, &clusters, dt).map_err(stage_err(STAGE))?;
    }

    // Classification wants every track that accumulated min_hits, not
    // just those still confirmed: a vehicle that left the scene is Dead
    // by now but its observations are complete.
    let records: Vec<TrackArtifact> = tracker
        .tracks
        .iter()
        .filter(|t| t.hits >= config.tracking.min_hits)
        .map(|t| TrackArtifact {
            id: t.id,
            hits: t.hits,
            status: t.status.as_str().to_string(),
            frames: t.observations.iter().map(|(f, _)| *f).collect(),
            clouds: t
                .observations
                .iter()
                .map(|(f, c)| c.points(&foreground[*f].points))
                .collect(),
        })
        .collect();

    let tracks_dir = run_dir.join("tracks");
    reset_dir(&tracks_dir, STAGE)?;
    io::write_text(&tracks_dir.join("dump.txt"), &dump_tracks(&tracker.tracks))
        .map_err(stage_err(STAGE))?;
    let mut artifacts = vec!["tracks/dump.txt".to_string(), "tracks/index.tsv".to_string()];

    let mut index = String::from("# id\thits\tstatus\tframes\n");
    for r in &records {
        let frames: Vec<String> = r.frames.iter().map(|f| f.to_string()).collect();
        let _ = writeln!(index, "{}\t{}\t{}\t{}", r.id, r.hits, r.status, frames.join(","));
        let dir = tracks_dir.join(track_dir_name(r.id));
        let obs: Vec<Frame> = r
            .clouds
            .iter()
            .zip(&r.frames)
            .map(|(cloud, f)| Frame::new(*f as f64, cloud.clone()))
            .collect();
        io::write_frames(&dir, &obs).map_err(stage_err(STAGE))?;
        for i in 0..obs.len() {
            artifacts.push(format!("tracks/{}/frame_{i:06}.txt", track_dir_name(r.id)));
        }
    }
    io::write_text(&tracks_dir.join("index.tsv"), &index).map_err(stage_err(STAGE))?;

    if let (Some(labels_path), Some(centers_path)) = (&input.labels_path, &input.centers_path) {
        let labels = io::read_ground_truth(labels_path).map_err(stage_err(STAGE))?;
        let centers_text = io::read_text(centers_path).map_err(stage_err(STAGE))?;
        let centers = crate::synth::parse_centers(&centers_text).map_err(stage_err(STAGE))?;
        let joined = associate_tracks(&records, &centers, &labels)?;
        io::write_ground_truth(&run_dir.join("gt_tracks.csv"), &joined)
            .map_err(stage_err(STAGE))?;
        artifacts.push("gt_tracks.csv".to_string());
    }

    update_manifest(run_dir, STAGE, &artifacts)
}

/// Maps ground-truth vehicle labels onto tracker ids by matching each
/// track's per-observation centroids against the vehicles' scripted
/// centers on the frames they share, closest mean distance first. A
/// vehicle claims at most one track and vice versa.
pub fn associate_tracks(
    tracks: &[TrackArtifact],
    centers: &[(usize, usize, f64, f64)],
    labels: &[(String, ClassLabel)],
) -> Result<Vec<(String, ClassLabel)>, PipelineError> {
    const STAGE: &str = "track";
    let mut by_vehicle: BTreeMap<usize, BTreeMap<usize, (f64, f64)>> = BTreeMap::new();
    for &(vehicle, frame, cx, cy) in centers {
        by_vehicle.entry(vehicle).or_default().insert(frame, (cx, cy));
    }
    let label_of: BTreeMap<usize, ClassLabel> = labels
        .iter()
        .map(|(id, label)| {
            id.parse::<usize>().map(|v| (v, *label)).map_err(|_| PipelineError {
                stage: STAGE,
                message: format!("ground-truth id {id:?} is not a vehicle index"),
            })
        })
        .collect::<Result<_, _>>()?;

    // Mean centroid-to-center distance over shared frames, for every
    // (track, vehicle) pair that shares any frame at all.
    let mut costs: Vec<(f64, usize, usize)> = Vec::new();
    for (ti, track) in tracks.iter().enumerate() {
        for (&vehicle, frames) in &by_vehicle {
            let mut sum = 0.0;
            let mut n = 0usize;
            for (frame, cloud) in track.frames.iter().zip(&track.clouds) {
                let Some(&(cx, cy)) = frames.get(frame) else {
                    continue;
                };
                let len = cloud.len().max(1) as f64;
                let mx = cloud.iter().map(|p| p.x).sum::<f64>() / len;
                let my = cloud.iter().map(|p| p.y).sum::<f64>() / len;
                sum += ((mx - cx).powi(2) + (my - cy).powi(2)).sqrt();
                n += 1;
            }
            if n > 0 {
                costs.push((sum / n as f64, ti, vehicle));
            }
        }
    }
    costs.sort_by(|a, b| a.partial_cmp(b).expect("finite costs"));

    let mut track_taken = vec![false; tracks.len()];
    let mut vehicle_taken: BTreeMap<usize, bool> = BTreeMap::new();
    let mut joined = Vec::new();
    for (_, ti, vehicle) in costs {
        if track_taken[ti] || *vehicle_taken.get(&vehicle).unwrap_or(&false) {
            continue;
        }
        let Some(label) = label_of.get(&vehicle) else {
            continue;
        };
        track_taken[ti] = true;
        vehicle_taken.insert(vehicle, true);
        joined.push((tracks[ti].id, *label));
    }
    joined.sort_by_key(|(id, _)| *id);
    Ok(joined
        .into_iter()
        .map(|(id, label)| (id.to_string(), label))
        .collect())
}

/// Reads back what the track stage persisted.
pub fn load_track_artifacts(run_dir: &Path) -> Result<Vec<TrackArtifact>, PipelineError> {
    const STAGE: &str = "reconstruct";
    let index_path = run_dir.join("tracks/index.tsv");
    let text = io::read_text(&index_path).map_err(stage_err(STAGE))?;
    let mut records = Vec::new();
    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || PipelineError {
            stage: STAGE,
            message: format!("{}:{}: malformed index line", index_path.display(), line_no + 1),
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(bad());
        }
        let id: u64 = fields[0].parse().map_err(|_| bad())?;
        let hits: usize = fields[1].parse().map_err(|_| bad())?;
        let frames: Vec<usize> = fields[3]
            .split(',')
            .map(|f| f.parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        let obs = io::ingest_frames(&run_dir.join("tracks").join(track_dir_name(id)))
            .map_err(stage_err(STAGE))?;
        if obs.len() != frames.len() {
            return Err(PipelineError {
                stage: STAGE,
                message: format!(
                    "track {id}: index lists {} frames but {} observation files exist",
                    frames.len(),
                    obs.len()
                ),
            });
        }
        records.push(TrackArtifact {
            id,
            hits,
            status: fields[2].to_string(),
            frames,
            clouds: obs.into_iter().map(|f| f.points).collect(),
        });
    }
    Ok(records)
}

/// Registers every selected track's observations into one dense cloud
/// per track under `clouds/`. A track whose observations cannot be
/// registered at all is dropped and recorded in `clouds/skipped.tsv`
/// rather than failing the stage.
pub fn reconstruct_stage(config: &PipelineConfig, run_dir: &Path) -> Result<(), PipelineError> {
    const STAGE: &str = "reconstruct";
    let records = load_track_artifacts(run_dir)?;
    let params = config.icp_params();
    let pool = worker_pool(config.jobs, STAGE)?;
    let outcomes: Vec<Result<crate::registration::ReconstructedCloud, String>> = pool.install(|| {
        use rayon::prelude::*;
        records
            .par_iter()
            .map(|r| {
                let reference =
                    choose_reference(&r.clouds).ok_or_else(|| "no observations".to_string())?;
                reconstruct_track(&r.clouds, reference, &params).map_err(|e| e.to_string())
            })
            .collect()
    });

    let clouds_dir = run_dir.join("clouds");
    reset_dir(&clouds_dir, STAGE)?;
    let mut artifacts = Vec::new();
    let mut skipped = String::new();
    for (record, outcome) in records.iter().zip(outcomes) {
        match outcome {
            Ok(cloud) => {
                let name = track_dir_name(record.id);
                io::write_reconstructed(
                    &clouds_dir.join(format!("{name}.txt")),
                    &clouds_dir.join(format!("{name}.meta.json")),
                    &cloud,
                )
                .map_err(stage_err(STAGE))?;
                artifacts.push(format!("clouds/{name}.txt"));
                artifacts.push(format!("clouds/{name}.meta.json"));
            }
            Err(reason) => {
                let _ = writeln!(skipped, "{}\t{}", record.id, reason);
            }
        }
    }
    if !skipped.is_empty() {
        io::write_text(&clouds_dir.join("skipped.tsv"), &skipped).map_err(stage_err(STAGE))?;
        artifacts.push("clouds/skipped.tsv".to_string());
    }
    update_manifest(run_dir, STAGE, &artifacts)
}

/// Rotates a cloud around z so a vehicle travelling along `heading`
/// comes out travelling along +x.
fn rotate_xy(points: &[Point3], angle: f64) -> Vec<Point3> {
    let (s, c) = angle.sin_cos();
    points
        .iter()
        .map(|p| Point3::new(c * p.x - s * p.y, s * p.x + c * p.y, p.z))
        .collect()
}

/// Travel direction from the first to the last observation centroid.
/// Displacements under 0.1 m are treated as stationary: the quotient of
/// two noise-sized numbers is not a heading.
fn travel_heading(clouds: &[Vec<Point3>]) -> f64 {
    let mean_xy = |cloud: &[Point3]| {
        let n = cloud.len().max(1) as f64;
        (
            cloud.iter().map(|p| p.x).sum::<f64>() / n,
            cloud.iter().map(|p| p.y).sum::<f64>() / n,
        )
    };
    let occupied: Vec<&Vec<Point3>> = clouds.iter().filter(|c| !c.is_empty()).collect();
    let (Some(first), Some(last)) = (occupied.first(), occupied.last()) else {
        return 0.0;
    };
    let (x0, y0) = mean_xy(first);
    let (x1, y1) = mean_xy(last);
    let (dx, dy) = (x1 - x0, y1 - y0);
    if (dx * dx + dy * dy).sqrt() < 0.1 {
        0.0
    } else {
        dy.atan2(dx)
    }
}

/// Renders each reconstructed cloud into side and top projections, raw
/// and opened, after outlier removal and travel-axis alignment. Tracks
/// whose clouds cannot be rendered (dropped by reconstruction, or too
/// small for the outlier filter) are skipped.
pub fn render_stage(config: &PipelineConfig, run_dir: &Path) -> Result<(), PipelineError> {
    const STAGE: &str = "render";
    let records = load_track_artifacts(run_dir)?;
    let proj = config.projection_params();
    let se = StructuringElement::all_ones(config.imaging.opening_size).map_err(stage_err(STAGE))?;
    let k = config.imaging.outlier_neighbors;
    let std_ratio = config.imaging.outlier_std_ratio;

    let pool = worker_pool(config.jobs, STAGE)?;
    let outcomes: Vec<Option<[RasterImage; 4]>> = pool.install(|| {
        use rayon::prelude::*;
        records
            .par_iter()
            .map(|r| {
                let name = track_dir_name(r.id);
                let points_path = run_dir.join("clouds").join(format!("{name}.txt"));
                let meta_path = run_dir.join("clouds").join(format!("{name}.meta.json"));
                if !points_path.is_file() {
                    return None;
                }
                let cloud = io::read_reconstructed(&points_path, &meta_path).ok()?;
                let kept = statistical_outlier_removal(&cloud.points, k, std_ratio).ok()?;
                let aligned = rotate_xy(&kept, -travel_heading(&r.clouds));
                let side_raw = project_to_image(&aligned, View::Side, &proj).ok()?;
                let top_raw = project_to_image(&aligned, View::Top, &proj).ok()?;
                let side_proc = opening(&side_raw, &se);
                let top_proc = opening(&top_raw, &se);
                Some([side_raw, side_proc, top_raw, top_proc])
            })
            .collect()
    });

    let images_dir = run_dir.join("images");
    reset_dir(&images_dir, STAGE)?;
    let mut artifacts = Vec::new();
    for (record, outcome) in records.iter().zip(outcomes) {
        let Some([side_raw, side_proc, top_raw, top_proc]) = outcome else {
            continue;
        };
        let name = track_dir_name(record.id);
        for (suffix, image) in [
            ("side_raw", &side_raw),
            ("side_proc", &side_proc),
            ("top_raw", &top_raw),
            ("top_proc", &top_proc),
        ] {
            let file = format!("{name}_{suffix}.pgm");
            io::write_bytes(&images_dir.join(&file), &image.to_pgm()).map_err(stage_err(STAGE))?;
            artifacts.push(format!("images/{file}"));
        }
    }
    update_manifest(run_dir, STAGE, &artifacts)
}

/// Builds one few-shot prompt per rendered track and classifies them
/// against the configured backend, writing `results.jsonl`. The
/// demonstration pool is every track with a ground-truth label; without
/// ground truth the prompts carry zero demonstrations.
pub fn classify_stage(
    config: &PipelineConfig,
    run_dir: &Path,
) -> Result<Vec<ClassificationResult>, PipelineError> {
    const STAGE: &str = "classify";
    let index = load_track_artifacts(run_dir).map_err(|e| PipelineError {
        stage: STAGE,
        message: e.message,
    })?;
    let variant = if config.classify.use_processed {
        "side_proc"
    } else {
        "side_raw"
    };

    let mut ids: Vec<u64> = Vec::new();
    let mut images: Vec<RasterImage> = Vec::new();
    for record in &index {
        let path = run_dir
            .join("images")
            .join(format!("{}_{variant}.pgm", track_dir_name(record.id)));
        if !path.is_file() {
            continue;
        }
        let bytes = std::fs::read(&path).map_err(|e| PipelineError {
            stage: STAGE,
            message: format!("{}: {e}", path.display()),
        })?;
        images.push(RasterImage::from_pgm(&bytes).map_err(stage_err(STAGE))?);
        ids.push(record.id);
    }
    if ids.is_empty() {
        return Err(PipelineError {
            stage: STAGE,
            message: "no rendered track images to classify".to_string(),
        });
    }

    let truth_path = run_dir.join("gt_tracks.csv");
    let truth: Option<BTreeMap<String, ClassLabel>> = if truth_path.is_file() {
        let rows = io::read_ground_truth(&truth_path).map_err(stage_err(STAGE))?;
        Some(rows.into_iter().collect())
    } else {
        None
    };

    let pool: Vec<Demonstration> = match &truth {
        Some(map) => ids
            .iter()
            .zip(&images)
            .filter_map(|(id, image)| {
                map.get(&id.to_string()).map(|label| Demonstration {
                    image: image.clone(),
                    label: *label,
                })
            })
            .collect(),
        None => Vec::new(),
    };
    let shots = if truth.is_some() { config.classify.shots } else { 0 };
    let demos = select_demonstrations(&pool, shots, config.seed, default_instruction_template())
        .map_err(stage_err(STAGE))?;

    let queries: Vec<Query> = ids
        .iter()
        .zip(&images)
        .map(|(id, image)| Query {
            id: id.to_string(),
            prompt: build_prompt(&demos, image, &ClassLabel::ALL),
        })
        .collect();

    let backend = match config.classify.backend {
        BackendKind::MockUniform => Backend::Mock(MockBackend::new(MockRule::Uniform)),
        BackendKind::MockAspect => Backend::Mock(MockBackend::new(MockRule::AspectRatio)),
        BackendKind::MockTruth => {
            let map = truth.as_ref().ok_or_else(|| PipelineError {
                stage: STAGE,
                message: "mock-truth backend needs gt_tracks.csv (run track with ground truth)"
                    .to_string(),
            })?;
            let mut table = HashMap::new();
            for (id, image) in ids.iter().zip(&images) {
                if let Some(label) = map.get(&id.to_string()) {
                    table.insert(fingerprint(image), one_hot(*label));
                }
            }
            Backend::Mock(MockBackend::with_table(table))
        }
        BackendKind::Remote => Backend::Remote(
            RemoteBackend::from_env(&config.classify.endpoint, &config.classify.model)
                .map_err(stage_err(STAGE))?,
        ),
    };

    let policy = RetryPolicy::default();
    let mut results = Vec::new();
    for batch in make_batches(queries, config.classify.batch_count) {
        results.extend(classify_batch(&batch, &backend, &policy, &ThreadSleeper));
    }
    io::write_results(&run_dir.join("results.jsonl"), &results).map_err(stage_err(STAGE))?;
    // Evaluation may run in a later process with a different config on
    // the command line; persist what actually produced these results.
    let meta = ClassifyMeta {
        backend: config.classify.backend,
        shots,
        processed: config.classify.use_processed,
        seed: config.seed,
    };
    let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    io::write_text(&run_dir.join("classify.json"), &json).map_err(stage_err(STAGE))?;
    update_manifest(
        run_dir,
        STAGE,
        &["results.jsonl".to_string(), "classify.json".to_string()],
    )?;
    Ok(results)
}

/// How `results.jsonl` was produced; the evaluation report's metadata.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
struct ClassifyMeta {
    backend: BackendKind,
    shots: usize,
    processed: bool,
    seed: u64,
}

/// Scores `results.jsonl` against `gt_tracks.csv` and writes the report
/// in both machine (json) and aligned-table (txt) form.
pub fn evaluate_stage(config: &PipelineConfig, run_dir: &Path) -> Result<Report, PipelineError> {
    const STAGE: &str = "evaluate";
    let results = io::read_results(&run_dir.join("results.jsonl")).map_err(stage_err(STAGE))?;
    let truth = io::read_ground_truth(&run_dir.join("gt_tracks.csv")).map_err(stage_err(STAGE))?;
    let predictions = join_predictions(&results, &truth).map_err(stage_err(STAGE))?;
    // The classify sidecar says how the results were really produced;
    // the live config is only a fallback for hand-assembled run dirs.
    let meta_path = run_dir.join("classify.json");
    let metadata = if meta_path.is_file() {
        let text = io::read_text(&meta_path).map_err(stage_err(STAGE))?;
        let meta: ClassifyMeta = serde_json::from_str(&text).map_err(stage_err(STAGE))?;
        RunMetadata {
            shots: meta.shots,
            processed: meta.processed,
            seed: meta.seed,
        }
    } else {
        RunMetadata {
            shots: config.classify.shots,
            processed: config.classify.use_processed,
            seed: config.seed,
        }
    };
    let report = f1_report(&predictions, metadata).map_err(stage_err(STAGE))?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    io::write_text(&run_dir.join("report.json"), &json).map_err(stage_err(STAGE))?;
    let column = format!("{} shot", report.metadata.shots);
    let table = format_text_table(&[(column.as_str(), &report)]);
    io::write_text(&run_dir.join("report.txt"), &table).map_err(stage_err(STAGE))?;
    update_manifest(
        run_dir,
        STAGE,
        &["report.json".to_string(), "report.txt".to_string()],
    )?;
    Ok(report)
}

/// The whole pipeline: background learning through evaluation. The
/// input needs ground truth (evaluation is part of the run); for
/// truth-free inputs run the stages individually and stop at classify.
pub fn run_pipeline(
    config: &PipelineConfig,
    input: &PipelineInput,
    run_dir: &Path,
) -> Result<Report, PipelineError> {
    config.validate().map_err(stage_err("config"))?;
    io::write_text(&run_dir.join("config.toml"), &config.to_toml())
        .map_err(stage_err("config"))?;
    update_manifest(run_dir, "config", &["config.toml".to_string()])?;
    learn_stage(config, input, run_dir)?;
    extract_stage(config, input, run_dir)?;
    track_stage(config, input, run_dir)?;
    reconstruct_stage(config, run_dir)?;
    render_stage(config, run_dir)?;
    classify_stage(config, run_dir)?;
    evaluate_stage(config, run_dir)
}
