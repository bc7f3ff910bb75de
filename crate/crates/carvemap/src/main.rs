use std::path::{Path, PathBuf};
use std::process::ExitCode;

use carvemap::pipeline::{evaluate, EvalReport};
use carvemap::{io, synth, ConfigError, Overrides, Pipeline, PipelineConfig, PipelineError, Stage};
use clap::{Args, Parser, Subcommand};

const EXIT_STAGE: u8 = 2;
const EXIT_CONFIG: u8 = 3;

#[derive(Parser)]
#[command(name = "carvemap", version, about = "Textured mesh reconstruction from lidar scans and camera images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage, reusing cached outputs.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Run a single stage from the cached outputs of the stages before it.
    Stage {
        name: String,
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Mesh-to-cloud error of a mesh (PLY or OBJ) against a reference cloud.
    Eval {
        mesh: PathBuf,
        cloud: PathBuf,
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Simulate a scene description into a dataset directory.
    Synth { scene: PathBuf, out: PathBuf },
    /// Print the annotated default configuration.
    Config,
}

#[derive(Args, Default)]
struct OverrideArgs {
    /// Discard returns farther than this (m).
    #[arg(long)]
    max_range: Option<f64>,
    #[arg(long)]
    downsample_fraction: Option<f64>,
    /// Use poses.txt instead of scan matching.
    #[arg(long)]
    use_gt_poses: bool,
    #[arg(long)]
    ground_cell: Option<f64>,
    /// Largest height step between ground cells (m).
    #[arg(long)]
    ground_dh: Option<f64>,
    /// Ground band height (m).
    #[arg(long)]
    ground_delta: Option<f64>,
    #[arg(long)]
    no_car_detection: bool,
    #[arg(long)]
    no_refine: bool,
    #[arg(long)]
    refine_iters: Option<usize>,
    /// ZNCC window half-width (pixels).
    #[arg(long)]
    patch: Option<usize>,
    /// Refinement step (m).
    #[arg(long)]
    step: Option<f64>,
    /// Umbrella smoothing weight.
    #[arg(long)]
    smooth: Option<f64>,
    /// Neighbor images per image.
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    export_vertex_colors: bool,
    /// Worker threads (0 uses every core).
    #[arg(long)]
    threads: Option<usize>,
}

impl OverrideArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            max_range: self.max_range,
            downsample_fraction: self.downsample_fraction,
            use_gt_poses: self.use_gt_poses,
            ground_cell: self.ground_cell,
            ground_dh: self.ground_dh,
            ground_delta: self.ground_delta,
            no_car_detection: self.no_car_detection,
            no_refine: self.no_refine,
            refine_iters: self.refine_iters,
            patch: self.patch,
            step: self.step,
            smooth: self.smooth,
            pairs: self.pairs,
            export_vertex_colors: self.export_vertex_colors,
            threads: self.threads,
        }
    }
}

fn pipeline(path: &Path, overrides: &OverrideArgs) -> Result<Pipeline, PipelineError> {
    let mut config = PipelineConfig::load(path)?;
    config.apply(&overrides.overrides());
    Pipeline::new(config)
}

fn fail(e: PipelineError) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        PipelineError::Config(_) => ExitCode::from(EXIT_CONFIG),
        _ => ExitCode::from(EXIT_STAGE),
    }
}

/// Echo the evaluation report, when one was produced, on stdout.
fn print_report(config: &PipelineConfig) {
    if config.eval.reference.is_some() {
        if let Ok(text) = std::fs::read_to_string(config.output.join("report.json")) {
            println!("{text}");
        }
    }
}

fn eval_files(mesh: &Path, cloud: &Path, threads: usize) -> Result<EvalReport, String> {
    let m = match mesh.extension().and_then(|e| e.to_str()) {
        Some("obj") => io::read_obj(mesh),
        _ => io::read_mesh_ply(mesh),
    }
    .map_err(|e| e.to_string())?;
    let c = io::read_cloud(cloud).map_err(|e| e.to_string())?;
    let report = evaluate(&m, &c, threads).map_err(|e| e.to_string())?;
    Ok(EvalReport::from(&report))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // Malformed arguments count as configuration errors, not stage failures.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    match cli.command {
        Command::Run { config, overrides } => {
            let mut p = match pipeline(&config, &overrides) {
                Ok(p) => p,
                Err(e) => return fail(e),
            };
            match p.run() {
                Ok(runs) => {
                    let total: f64 = runs.iter().map(|r| r.seconds).sum();
                    let hits = runs.iter().filter(|r| r.cache_hit).count();
                    log::info!("pipeline finished in {total:.2} s ({hits} cache hits)");
                    print_report(p.config());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Stage { name, config, overrides } => {
            let Some(stage) = Stage::parse(&name) else {
                let names: Vec<&str> = Stage::ALL.iter().map(|s| s.name()).collect();
                return fail(PipelineError::Config(ConfigError::Invalid(format!(
                    "unknown stage {name:?}; expected one of {}",
                    names.join(", ")
                ))));
            };
            match pipeline(&config, &overrides).and_then(|mut p| p.run_stage_cached(stage).map(|_| p)) {
                Ok(p) => {
                    if stage == Stage::Eval {
                        print_report(p.config());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Eval { mesh, cloud, threads } => match eval_files(&mesh, &cloud, threads) {
            Ok(r) => {
                println!("{}", serde_json::to_string_pretty(&r).expect("report serializes"));
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: eval: {e}");
                ExitCode::from(EXIT_STAGE)
            }
        },
        Command::Synth { scene, out } => {
            let s = match synth::load_scene(&scene) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            match synth::simulate(&s).and_then(|d| synth::write_synthetic(&out, &s, &d).map(|_| d)) {
                Ok(d) => {
                    let points: usize = d.dataset.scans.iter().map(Vec::len).sum();
                    log::info!("wrote {} scans ({points} points) to {}", d.dataset.scans.len(), out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: synth: {e}");
                    ExitCode::from(EXIT_STAGE)
                }
            }
        }
        Command::Config => {
            print!("{}", carvemap::config::TEMPLATE);
            ExitCode::SUCCESS
        }
    }
}
