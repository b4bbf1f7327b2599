use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fpt_core::cloud::{load_cloud, save_cloud, CloudFormat, PointCloud};
use fpt_core::eval::{cscore, emit_report, run_knn_bench, run_memory_bench, Report, ReportFormat};
use fpt_core::neighbor::{Algorithm, Phase};
use fpt_core::network::{load_checkpoint, predict, save_checkpoint, ToyTask};
use fpt_core::scene::{generate_scene, SceneSpec};
use fpt_core::transform::make_transform_suite;
use fpt_core::voxel::VoxelGrid;

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_CHECK: u8 = 3;

/// Hash inference must stay flat in N; brute force must grow linearly.
const HASH_INFERENCE_SLOPE_MAX: f64 = 0.15;
const BRUTEFORCE_INFERENCE_SLOPE: (f64, f64) = (0.8, 1.2);

#[derive(Parser)]
#[command(name = "fpt", version, about = "Point transformer toolkit: voxelization, neighbor search benchmarks, toy segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Quantize a cloud and write one point per occupied voxel (centroid, mean features)
    Voxelize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        voxel_size: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time neighbor search per algorithm, phase and cloud size
    BenchKnn(BenchKnnArgs),
    /// Count positional-encoding storage with and without decomposition
    BenchMemory {
        #[arg(long, default_value = "1e5", value_parser = parse_count)]
        voxels: usize,
        #[arg(long, value_delimiter = ',', default_value = "3,5,7")]
        windows: Vec<usize>,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        /// Fraction of each window that is occupied
        #[arg(long, default_value_t = 1.0)]
        occupancy: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Prediction consistency of a trained model under rigid transforms
    Cscore {
        #[arg(long)]
        model: PathBuf,
        /// Directory of clouds (.csv or binary)
        #[arg(long)]
        scenes: PathBuf,
        /// Step of the translation suite; defaults to the model's voxel size
        #[arg(long)]
        voxel_size: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        per_point: bool,
    },
    /// Train the toy segmentation network on synthetic scenes
    TrainToy {
        /// JSON task description; every field is optional
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Loss per epoch, report CSV (or JSON with a .json extension)
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Label every point of a cloud with a trained model
    Segment {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write labeled synthetic scenes
    GenScenes {
        #[arg(long, default_value_t = 5)]
        count: usize,
        #[arg(long, default_value_t = 2000)]
        points: usize,
        #[arg(long, default_value_t = 3)]
        classes: u32,
        #[arg(long, value_delimiter = ',', default_value = "4,4,2")]
        extent: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory; files are scene_<i>.csv
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct BenchKnnArgs {
    #[arg(long, value_delimiter = ',', default_value = "1e3,1e4,1e5,1e6", value_parser = parse_count)]
    sizes: Vec<usize>,
    #[arg(long, default_value = "1000", value_parser = parse_count)]
    m: usize,
    #[arg(long, default_value_t = 16)]
    k: usize,
    #[arg(long, value_delimiter = ',', default_value = "hash,kdtree,bruteforce,heap")]
    algos: Vec<Algorithm>,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Exit with status 3 unless the hash and brute-force inference slopes are in range
    #[arg(long)]
    check: bool,
}

/// Accepts plain integers and exact scientific notation such as `1e5`.
fn parse_count(s: &str) -> Result<usize, String> {
    if let Ok(n) = s.parse::<usize>() {
        return Ok(n);
    }
    let v: f64 = s.parse().map_err(|_| format!("not a count: {s:?}"))?;
    if v >= 0.0 && v.fract() == 0.0 && v <= usize::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(format!("not a non-negative integer: {s:?}"))
    }
}

enum Failure {
    Runtime(String),
    Check(String),
}

impl From<fpt_core::Error> for Failure {
    fn from(e: fpt_core::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(EXIT_CHECK)
        }
    }
}

fn load(path: &Path) -> Result<PointCloud, Failure> {
    load_cloud(path, CloudFormat::from_path(path)).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Voxelize { input, voxel_size, out } => {
            let cloud = load(&input)?;
            let voxels = voxel_cloud(&cloud, voxel_size)?;
            save_cloud(&voxels, &out, CloudFormat::from_path(&out))?;
            eprintln!("{} points -> {} voxels", cloud.len(), voxels.len());
        }
        Command::BenchKnn(args) => bench_knn(args)?,
        Command::BenchMemory { voxels, windows, dim, occupancy, out } => {
            let report = run_memory_bench(voxels, &windows, dim, occupancy)?;
            for c in &report.cells {
                println!(
                    "k={} decomposed={} full={} ratio={:.3}",
                    c.window,
                    c.decomposed.total(),
                    c.full.total(),
                    c.ratio
                );
            }
            emit_report(&Report::from_memory(&report), &out, ReportFormat::from_path(&out))?;
        }
        Command::Cscore { model, scenes, voxel_size, out, per_point } => {
            let params = load_checkpoint(&model)?;
            let clouds = load_dir(&scenes)?;
            let suite = make_transform_suite(voxel_size.unwrap_or(params.config.voxel_size))?;
            let report = cscore(|c| predict(&params, c), &clouds, &suite, per_point)?;
            println!("cscore {:.4} over {} clouds, {} transforms", report.overall, clouds.len(), report.n_transforms);
            let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::Runtime(e.to_string()))?;
            fs::write(&out, json).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
        }
        Command::TrainToy { config, out, curve } => {
            let task: ToyTask = match config {
                Some(path) => {
                    let text = fs::read_to_string(&path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
                    serde_json::from_str(&text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?
                }
                None => ToyTask::default(),
            };
            let outcome = task.run_with(|e, loss| {
                if e % 10 == 0 {
                    eprintln!("epoch {e:4} loss {loss:.5}");
                }
            })?;
            save_checkpoint(&outcome.train.params, &out)?;
            if let Some(path) = curve {
                let report = Report::from_losses(&outcome.train.losses, task.network.seed);
                emit_report(&report, &path, ReportFormat::from_path(&path))?;
            }
            println!("test accuracy {:.4}", outcome.test_accuracy);
        }
        Command::Segment { model, input, out } => {
            let params = load_checkpoint(&model)?;
            let mut cloud = load(&input)?;
            cloud.labels = Some(predict(&params, &cloud)?);
            save_cloud(&cloud, &out, CloudFormat::from_path(&out))?;
        }
        Command::GenScenes { count, points, classes, extent, seed, out } => {
            let extent: [f64; 3] = extent
                .try_into()
                .map_err(|_| Failure::Runtime("extent needs three values".into()))?;
            fs::create_dir_all(&out).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
            for i in 0..count {
                let spec = SceneSpec::random_layout(points, classes, extent, seed + i as u64);
                let cloud = generate_scene(&spec)?;
                save_cloud(&cloud, &out.join(format!("scene_{i}.csv")), CloudFormat::Csv)?;
            }
        }
    }
    Ok(())
}

fn bench_knn(args: BenchKnnArgs) -> Result<(), Failure> {
    let table = run_knn_bench(&args.sizes, args.m, args.k, &args.algos, args.reps, args.seed)?;
    for a in &args.algos {
        for p in [Phase::Preparation, Phase::Inference] {
            match table.slope(*a, p) {
                Some(s) => println!("{a} {p} slope {s:.3}"),
                None => println!("{a} {p} slope n/a"),
            }
        }
    }
    emit_report(&Report::from_latency(&table), &args.out, ReportFormat::from_path(&args.out))?;
    if !args.check {
        return Ok(());
    }
    let mut problems = Vec::new();
    match table.slope(Algorithm::Hash, Phase::Inference) {
        Some(s) if s < HASH_INFERENCE_SLOPE_MAX => {}
        s => problems.push(format!("hash inference slope {s:?} not below {HASH_INFERENCE_SLOPE_MAX}")),
    }
    let (lo, hi) = BRUTEFORCE_INFERENCE_SLOPE;
    match table.slope(Algorithm::BruteForce, Phase::Inference) {
        Some(s) if (lo..=hi).contains(&s) => {}
        s => problems.push(format!("bruteforce inference slope {s:?} outside [{lo}, {hi}]")),
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(problems.join("; ")))
    }
}

/// Every regular file in `dir`, in name order.
fn load_dir(dir: &Path) -> Result<Vec<PointCloud>, Failure> {
    let entries = fs::read_dir(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_file()).collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Failure::Runtime(format!("{}: no clouds found", dir.display())));
    }
    paths.iter().map(|p| load(p)).collect()
}

fn voxel_cloud(cloud: &PointCloud, voxel_size: f64) -> Result<PointCloud, Failure> {
    let grid = VoxelGrid::from_cloud(cloud, voxel_size)?;
    let d = cloud.feature_dim;
    let mut features = vec![0.0; grid.len() * d];
    for (i, members) in grid.reduce_order.iter().enumerate() {
        let row = &mut features[i * d..(i + 1) * d];
        for &n in members {
            for (r, x) in row.iter_mut().zip(cloud.feature(n)) {
                *r += x;
            }
        }
        let count = members.len() as f64;
        row.iter_mut().for_each(|r| *r /= count);
    }
    Ok(PointCloud::new(grid.centroids.clone(), features, d, None)?)
}
