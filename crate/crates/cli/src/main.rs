//! Command-line driver. Each subcommand re-runs one pipeline stage from
//! the run directory's persisted artifacts; `run` chains them all.
//! Config comes from a TOML file plus per-flag overrides; all randomness
//! flows from the single seed recorded in the report.

use std::error::Error;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use roadcloud::config::{BackendKind, PipelineConfig};
use roadcloud::evaluation::format_text_table;
use roadcloud::labels::normalize_label;
use roadcloud::pipeline::{
    classify_stage, evaluate_stage, extract_stage, learn_stage, reconstruct_stage, render_stage,
    run_pipeline, track_stage, PipelineInput,
};
use roadcloud::synth::{synth_scene, write_scene, SceneSpec, VehicleSpec};

#[derive(Parser)]
#[command(
    name = "roadcloud",
    version,
    about = "Roadside LiDAR vehicle classification pipeline"
)]
struct Cli {
    /// Configuration file (TOML). Defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cap parallel workers for per-track stages (0 = one per CPU).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn the background model from the input's background frames.
    LearnBg {
        /// Input directory (background/, frames/, optional gt_* files).
        #[arg(long)]
        input: PathBuf,
        /// Run directory receiving all artifacts.
        #[arg(long)]
        run: PathBuf,
    },
    /// Subtract the learned background from every input frame.
    Extract {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        run: PathBuf,
    },
    /// Cluster foreground frames and track vehicles across them.
    Track {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        run: PathBuf,
    },
    /// Register each track's observations into one dense cloud.
    Reconstruct {
        #[arg(long)]
        run: PathBuf,
    },
    /// Render side/top projections of each cloud, raw and opened.
    Render {
        #[arg(long)]
        run: PathBuf,
    },
    /// Build few-shot prompts and classify every rendered track.
    Classify {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        backend: Option<BackendArg>,
        /// Demonstrations per prompt.
        #[arg(long)]
        shots: Option<usize>,
        /// Number of query batches.
        #[arg(long)]
        batches: Option<usize>,
        /// Classify from the plain projections instead of the opened ones.
        #[arg(long)]
        raw: bool,
    },
    /// Score results against ground truth and write the report.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
    },
    /// Generate a synthetic scene in the input-directory layout.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Scene description (TOML). A built-in three-class demo scene
        /// is generated when absent.
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Run every stage end to end and print the report.
    Run {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        backend: Option<BackendArg>,
        #[arg(long)]
        shots: Option<usize>,
        #[arg(long)]
        batches: Option<usize>,
        #[arg(long)]
        raw: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    MockUniform,
    MockAspect,
    MockTruth,
    Remote,
}

impl From<BackendArg> for BackendKind {
    fn from(arg: BackendArg) -> Self {
        match arg {
            BackendArg::MockUniform => BackendKind::MockUniform,
            BackendArg::MockAspect => BackendKind::MockAspect,
            BackendArg::MockTruth => BackendKind::MockTruth,
            BackendArg::Remote => BackendKind::Remote,
        }
    }
}

/// On-disk scene description. Vehicle dimensions and sampling density
/// default to the class archetype, so a minimal vehicle entry is just
/// class, start, and velocity.
#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SceneFile {
    frames: usize,
    background_frames: usize,
    noise_sigma: f64,
    sensor_range: f64,
    sensor_height: f64,
    ground_extent: f64,
    vehicles: Vec<VehicleEntry>,
}

impl Default for SceneFile {
    fn default() -> Self {
        let spec = SceneSpec::default();
        SceneFile {
            frames: spec.frames,
            background_frames: spec.background_frames,
            noise_sigma: spec.noise_sigma,
            sensor_range: spec.sensor_range,
            sensor_height: spec.sensor_height,
            ground_extent: spec.ground_extent,
            vehicles: Vec::new(),
        }
    }
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct VehicleEntry {
    class: String,
    start: [f64; 2],
    velocity: [f64; 2],
    points_per_frame: Option<usize>,
    dimensions: Option<[f64; 3]>,
}

impl SceneFile {
    fn into_spec(self) -> Result<SceneSpec, Box<dyn Error>> {
        let mut vehicles = Vec::with_capacity(self.vehicles.len());
        for entry in self.vehicles {
            let label = normalize_label(&entry.class)
                .ok_or_else(|| format!("unknown vehicle class {:?}", entry.class))?;
            let mut vehicle = VehicleSpec::archetype(
                label,
                (entry.start[0], entry.start[1]),
                (entry.velocity[0], entry.velocity[1]),
            );
            if let Some(n) = entry.points_per_frame {
                vehicle.points_per_frame = n;
            }
            if let Some([l, w, h]) = entry.dimensions {
                vehicle.dimensions = (l, w, h);
            }
            vehicles.push(vehicle);
        }
        Ok(SceneSpec {
            frames: self.frames,
            background_frames: self.background_frames,
            noise_sigma: self.noise_sigma,
            sensor_range: self.sensor_range,
            sensor_height: self.sensor_height,
            ground_extent: self.ground_extent,
            vehicles,
        })
    }
}

/// Three classes crossing the field of view; enough for a full
/// demonstration run with 3-shot prompts.
fn demo_scene() -> SceneSpec {
    let mut container =
        VehicleSpec::archetype(roadcloud::ClassLabel::Container, (12.0, 6.0), (0.8, 0.0));
    container.points_per_frame = 700;
    let mut bobtail =
        VehicleSpec::archetype(roadcloud::ClassLabel::Bobtail, (-14.0, 10.0), (0.0, -0.7));
    bobtail.points_per_frame = 500;
    SceneSpec {
        frames: 14,
        background_frames: 4,
        noise_sigma: 0.01,
        vehicles: vec![
            container,
            VehicleSpec::archetype(
                roadcloud::ClassLabel::PassengerVehicle,
                (10.0, -6.0),
                (-0.6, 0.0),
            ),
            bobtail,
        ],
        ..SceneSpec::default()
    }
}

fn apply_classify_overrides(
    config: &mut PipelineConfig,
    backend: Option<BackendArg>,
    shots: Option<usize>,
    batches: Option<usize>,
    raw: bool,
) {
    if let Some(backend) = backend {
        config.classify.backend = backend.into();
    }
    if let Some(shots) = shots {
        config.classify.shots = shots;
    }
    if let Some(batches) = batches {
        config.classify.batch_count = batches;
    }
    if raw {
        config.classify.use_processed = false;
    }
}

fn execute(cli: Cli) -> Result<(), Box<dyn Error>> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        config.jobs = jobs;
    }
    config.validate()?;

    match cli.command {
        Command::LearnBg { input, run } => {
            learn_stage(&config, &PipelineInput::from_dir(&input), &run)?;
            println!("learned background -> {}", run.join("background/model.txt").display());
        }
        Command::Extract { input, run } => {
            extract_stage(&config, &PipelineInput::from_dir(&input), &run)?;
            println!("extracted foreground -> {}", run.join("foreground").display());
        }
        Command::Track { input, run } => {
            track_stage(&config, &PipelineInput::from_dir(&input), &run)?;
            println!("tracked -> {}", run.join("tracks").display());
        }
        Command::Reconstruct { run } => {
            reconstruct_stage(&config, &run)?;
            println!("reconstructed -> {}", run.join("clouds").display());
        }
        Command::Render { run } => {
            render_stage(&config, &run)?;
            println!("rendered -> {}", run.join("images").display());
        }
        Command::Classify {
            run,
            backend,
            shots,
            batches,
            raw,
        } => {
            apply_classify_overrides(&mut config, backend, shots, batches, raw);
            config.validate()?;
            let results = classify_stage(&config, &run)?;
            println!(
                "classified {} tracks -> {}",
                results.len(),
                run.join("results.jsonl").display()
            );
        }
        Command::Evaluate { run } => {
            let report = evaluate_stage(&config, &run)?;
            let column = format!("{} shot", report.metadata.shots);
            print!("{}", format_text_table(&[(column.as_str(), &report)]));
            println!("macro F1: {:.4}", report.macro_f1);
        }
        Command::Synth { out, scene } => {
            let spec = match scene {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| format!("{}: {e}", path.display()))?;
                    toml::from_str::<SceneFile>(&text)
                        .map_err(|e| format!("{}: {e}", path.display()))?
                        .into_spec()?
                }
                None => demo_scene(),
            };
            let scene = synth_scene(&spec, config.seed)?;
            write_scene(&out, &scene)?;
            println!(
                "wrote {} background and {} vehicle frames -> {}",
                scene.background_frames.len(),
                scene.vehicle_frames.len(),
                out.display()
            );
        }
        Command::Run {
            input,
            run,
            backend,
            shots,
            batches,
            raw,
        } => {
            apply_classify_overrides(&mut config, backend, shots, batches, raw);
            config.validate()?;
            let report = run_pipeline(&config, &PipelineInput::from_dir(&input), &run)?;
            let column = format!("{} shot", report.metadata.shots);
            print!("{}", format_text_table(&[(column.as_str(), &report)]));
            println!("macro F1: {:.4}", report.macro_f1);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
