//! `gtloc` — ground-texture mapping and localization CLI.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error,
//! 3 localization failure.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gtloc::bench::{run_experiment, ExperimentConfig};
use gtloc::{
    localize_traced, make_triplet_layout, DetectorConfig, Image, LocalizeError, Pose2D, Prior,
    PriorSchedule, RansacConfig, SuccessCriteria, TextureMap, TextureProfile,
};

#[derive(Parser)]
#[command(
    name = "gtloc",
    about = "Ground-texture visual localization: build feature maps from floor images and localize queries against them",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Map construction and maintenance.
    #[command(subcommand)]
    Map(MapCommand),
    /// Localize one query image against a map.
    Localize(LocalizeArgs),
    /// Benchmarks on synthetic textures.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Localize and dump the voting map as a PGM image.
    Votemap(VotemapArgs),
}

#[derive(Subcommand)]
enum MapCommand {
    /// Build a new map from a poses CSV (`filename,x,y,theta`) and its
    /// sibling PGM images.
    Build(MapBuildArgs),
    /// Add one reference image to an existing map.
    Add(MapAddArgs),
    /// Remove a reference image by id.
    Rm(MapRmArgs),
    /// Print map statistics.
    Info(MapInfoArgs),
}

#[derive(Args)]
struct DetectorArgs {
    /// Maximum keypoints kept per image.
    #[arg(long = "max-kp", default_value_t = 850)]
    max_kp: usize,
    /// Detector base sigma.
    #[arg(long, default_value_t = 8.5)]
    detector_sigma: f64,
    /// Pyramid layers per octave.
    #[arg(long, default_value_t = 11)]
    layers: usize,
    /// DoG contrast threshold.
    #[arg(long, default_value_t = 0.005)]
    contrast: f64,
    /// Hessian edge-ratio threshold.
    #[arg(long, default_value_t = 13.0)]
    edge_threshold: f64,
}

impl DetectorArgs {
    fn config(&self) -> DetectorConfig<f64> {
        DetectorConfig {
            layers_per_octave: self.layers,
            contrast_threshold: self.contrast,
            edge_threshold: self.edge_threshold,
            base_sigma: self.detector_sigma,
            max_keypoints: self.max_kp,
        }
    }
}

#[derive(Args)]
struct MapBuildArgs {
    /// Poses CSV; image paths are resolved relative to it.
    #[arg(long)]
    poses: PathBuf,
    /// Output map file.
    #[arg(long)]
    map: PathBuf,
    /// Descriptor width in bits.
    #[arg(long, default_value_t = 15)]
    bits: u8,
    /// Triplet-layout seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    detector: DetectorArgs,
}

#[derive(Args)]
struct MapAddArgs {
    #[arg(long)]
    map: PathBuf,
    /// Reference image (PGM, 8-bit binary).
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    pose_x: f64,
    #[arg(long)]
    pose_y: f64,
    /// Radians.
    #[arg(long, default_value_t = 0.0)]
    pose_theta: f64,
}

#[derive(Args)]
struct MapRmArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    id: u64,
}

#[derive(Args)]
struct MapInfoArgs {
    #[arg(long)]
    map: PathBuf,
}

#[derive(Args)]
struct PriorArgs {
    /// Prior position x (pixels).
    #[arg(long)]
    prior_x: Option<f64>,
    /// Prior position y (pixels).
    #[arg(long)]
    prior_y: Option<f64>,
    /// Expected prior error (millimeters).
    #[arg(long, default_value_t = 0.0)]
    prior_err: f64,
}

impl PriorArgs {
    fn prior(&self) -> Result<Option<Prior<f64>>, String> {
        match (self.prior_x, self.prior_y) {
            (Some(x), Some(y)) => Ok(Some(Prior {
                position: (x, y),
                expected_error_mm: self.prior_err,
            })),
            (None, None) => Ok(None),
            _ => Err("--prior-x and --prior-y must be given together".into()),
        }
    }
}

#[derive(Args)]
struct LocalizeArgs {
    #[arg(long)]
    map: PathBuf,
    /// Query image (PGM, 8-bit binary).
    #[arg(long)]
    image: PathBuf,
    #[command(flatten)]
    prior: PriorArgs,
    /// RANSAC seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Voting cell size (pixels).
    #[arg(long, default_value_t = 75.0)]
    cells: f64,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Run a success-rate and timing sweep on a synthetic texture world.
    Run(BenchRunArgs),
}

#[derive(Args)]
struct BenchRunArgs {
    /// Report output path.
    #[arg(long)]
    out: PathBuf,
    /// Texture regime.
    #[arg(long, value_parser = ["rich", "smooth"], default_value = "rich")]
    texture: String,
    /// Reference grid, e.g. 10x10.
    #[arg(long, default_value = "4x4")]
    grid: String,
    /// Overlap fraction between neighboring references.
    #[arg(long, default_value_t = 0.5)]
    overlap: f64,
    /// Number of query images.
    #[arg(long, default_value_t = 20)]
    queries: usize,
    /// Sweep the full prior-error table instead of global-only.
    #[arg(long)]
    sweep_priors: bool,
    /// Master seed (texture, queries, priors).
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Write the canonical report with timing fields zeroed.
    #[arg(long)]
    omit_timings: bool,
    /// Voting cell size (pixels).
    #[arg(long, default_value_t = 75.0)]
    cells: f64,
    /// Descriptor width in bits.
    #[arg(long, default_value_t = 15)]
    bits: u8,
    /// Maximum keypoints kept per image.
    #[arg(long = "max-kp", default_value_t = 400)]
    max_kp: usize,
}

#[derive(Args)]
struct VotemapArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Output PGM path.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    prior: PriorArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Voting cell size (pixels).
    #[arg(long, default_value_t = 75.0)]
    cells: f64,
}

enum CliError {
    Usage(String),
    Data(String),
    Localization(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Localization(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Localization(m) => m,
        }
    }
}

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn load_map(path: &PathBuf) -> Result<TextureMap<f64>, CliError> {
    TextureMap::load_from_path(path).map_err(data_err)
}

fn save_map(map: &TextureMap<f64>, path: &PathBuf) -> Result<(), CliError> {
    map.save_to_path(path).map_err(data_err)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Map(MapCommand::Build(args)) => {
            if args.bits == 0 || args.bits > 16 {
                return Err(CliError::Usage("--bits must be in 1..=16".into()));
            }
            let layout = make_triplet_layout(args.bits as usize, args.seed, 8, 2.2);
            let map = gtloc::build_map_from_csv(&args.poses, args.detector.config(), layout)
                .map_err(data_err)?;
            save_map(&map, &args.map)?;
            println!(
                "built map: {} references, {} descriptor bits",
                map.len(),
                map.descriptor_bits()
            );
            Ok(())
        }
        Command::Map(MapCommand::Add(args)) => {
            let mut map = load_map(&args.map)?;
            let img = Image::load_pgm(&args.image).map_err(data_err)?;
            let id = map.add_reference(&img, Pose2D::new(args.pose_x, args.pose_y, args.pose_theta));
            save_map(&map, &args.map)?;
            println!("added reference {id}");
            Ok(())
        }
        Command::Map(MapCommand::Rm(args)) => {
            let mut map = load_map(&args.map)?;
            map.remove_reference(args.id).map_err(data_err)?;
            save_map(&map, &args.map)?;
            println!("removed reference {}", args.id);
            Ok(())
        }
        Command::Map(MapCommand::Info(args)) => {
            let map = load_map(&args.map)?;
            println!("references:      {}", map.len());
            println!("descriptor bits: {}", map.descriptor_bits());
            println!(
                "feature payload: {} bits ({} features)",
                map.feature_payload_bits(),
                map.records().map(|r| r.features().len()).sum::<usize>()
            );
            match map.extent() {
                Some(e) => println!(
                    "extent:          [{:.1}, {:.1}] x [{:.1}, {:.1}] px",
                    e.min_x, e.max_x, e.min_y, e.max_y
                ),
                None => println!("extent:          empty"),
            }
            Ok(())
        }
        Command::Localize(args) => {
            let map = load_map(&args.map)?;
            if map.is_empty() {
                return Err(CliError::Data("map holds no references".into()));
            }
            let img = Image::load_pgm(&args.image).map_err(data_err)?;
            let prior = args.prior.prior().map_err(CliError::Usage)?;
            let ransac = RansacConfig {
                seed: args.seed,
                ..RansacConfig::default()
            };
            let outcome = localize_traced(
                &map,
                &img,
                prior.as_ref(),
                &PriorSchedule::default(),
                &ransac,
                args.cells,
            )
            .map_err(|e| CliError::Localization(e.to_string()))?;
            let r = &outcome.result;
            println!(
                "pose: x={:.3} y={:.3} theta={:.6} rad",
                r.pose.x, r.pose.y, r.pose.theta
            );
            println!(
                "inliers={} votes={} considered_images={}",
                r.inlier_count, r.votes_in_winning_cell, r.considered_images
            );
            println!(
                "t_match={}us t_vote={}us t_ransac={}us",
                r.timings.matching.as_micros(),
                r.timings.voting.as_micros(),
                r.timings.ransac.as_micros()
            );
            Ok(())
        }
        Command::Bench(BenchCommand::Run(args)) => {
            let grid = parse_grid(&args.grid).map_err(CliError::Usage)?;
            if args.bits == 0 || args.bits > 16 {
                return Err(CliError::Usage("--bits must be in 1..=16".into()));
            }
            let (profile, octaves, persistence) = match args.texture.as_str() {
                "smooth" => (TextureProfile::Smooth, 4, 0.42),
                _ => (TextureProfile::Rich, 6, 0.55),
            };
            let cfg = ExperimentConfig {
                texture_seed: args.seed,
                profile,
                octaves,
                persistence,
                grid,
                overlap: args.overlap,
                query_count: args.queries,
                prior_levels_mm: if args.sweep_priors {
                    ExperimentConfig::table_levels()
                } else {
                    vec![None]
                },
                criteria: SuccessCriteria::default(),
                descriptor_bits: args.bits,
                query_seed: args.seed.wrapping_add(1),
                cell_size: args.cells,
                workers: args.workers,
                detector: DetectorConfig {
                    base_sigma: 2.5,
                    max_keypoints: args.max_kp,
                    ..DetectorConfig::default()
                },
                ..ExperimentConfig::default()
            };
            let report = run_experiment(&cfg);
            let report = if args.omit_timings {
                report.without_timings()
            } else {
                report
            };
            let mut w = BufWriter::new(File::create(&args.out).map_err(data_err)?);
            report.write(&mut w).map_err(data_err)?;
            for s in &report.summary {
                let label = s
                    .prior_mm
                    .map(|mm| format!("{mm:.0} mm"))
                    .unwrap_or_else(|| "no prior".into());
                println!(
                    "{label:>10}: {}/{} ({:.1}%)",
                    s.successes,
                    s.queries,
                    s.success_rate * 100.0
                );
            }
            Ok(())
        }
        Command::Votemap(args) => {
            let map = load_map(&args.map)?;
            if map.is_empty() {
                return Err(CliError::Data("map holds no references".into()));
            }
            let img = Image::load_pgm(&args.image).map_err(data_err)?;
            let prior = args.prior.prior().map_err(CliError::Usage)?;
            let ransac = RansacConfig {
                seed: args.seed,
                ..RansacConfig::default()
            };
            let outcome = localize_traced(
                &map,
                &img,
                prior.as_ref(),
                &PriorSchedule::default(),
                &ransac,
                args.cells,
            )
            .map_err(|e| match e {
                LocalizeError::NoFeatures | LocalizeError::NoVotes => {
                    CliError::Localization(e.to_string())
                }
                // Even without consensus the voting map would exist, but a
                // failed localization is reported uniformly.
                LocalizeError::NoConsensus => CliError::Localization(e.to_string()),
            })?;
            outcome
                .voting_map
                .dump_votes()
                .save_pgm(&args.out)
                .map_err(data_err)?;
            let r = &outcome.result;
            println!(
                "pose: x={:.3} y={:.3} theta={:.6} rad ({} x {} cells)",
                r.pose.x,
                r.pose.y,
                r.pose.theta,
                outcome.voting_map.cols(),
                outcome.voting_map.rows()
            );
            Ok(())
        }
    }
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("grid must look like 10x10, got {s:?}"))?;
    let cols = a.parse().map_err(|_| format!("bad grid columns {a:?}"))?;
    let rows = b.parse().map_err(|_| format!("bad grid rows {b:?}"))?;
    if cols == 0 || rows == 0 {
        return Err("grid dimensions must be positive".into());
    }
    Ok((cols, rows))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's help/version output is not an error.
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
