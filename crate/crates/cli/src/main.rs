mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use pointfilter::inference::{filter_cloud, FilterConfig};
use pointfilter::loss::LossKind;
use pointfilter::metrics::{evaluate, save_per_point_errors, DEFAULT_MSE_NEIGHBORS};
use pointfilter::nn::{load_params, save_params, train_models, Architecture, Precision, TrainConfig, TrainingModel};
use pointfilter::synth::{build_manifest, DatasetConfig, DatasetManifest, NoiseKind, ShapeKind, ShapeSpec};
use pointfilter::{load_cloud, load_off, save_cloud};

/// Point cloud denoising: data generation, training, filtering and evaluation.
#[derive(Debug, Parser)]
#[command(name = "pointfilter", version, args_override_self = true)]
struct Cli {
    /// Master seed for sampling, noise, initialization and patch selection.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Fixed-order reductions (always on; accepted for explicitness).
    #[arg(long, global = true)]
    deterministic: bool,

    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    threads: Option<u32>,

    /// Flat key=value file with flag defaults; flags given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample procedural shapes, add noise and write a training manifest.
    ///
    /// Example: pointfilter gen --shapes cube,sphere --points 5000 --levels 0.005,0.01 --out data/
    Gen(GenArgs),
    /// Train the network on a manifest.
    ///
    /// Example: pointfilter train --manifest data/manifest.txt --epochs 2 --patch-size 64 --out model.pf
    Train(TrainArgs),
    /// Filter a noisy cloud with a trained model.
    ///
    /// Example: pointfilter filter --model model.pf --input noisy.xyz --out filtered.xyz --iters 2
    Filter(FilterArgs),
    /// Compare a filtered cloud against its clean reference.
    ///
    /// Example: pointfilter eval --clean clean.xyz --filtered filtered.xyz --p2f clean.off
    Eval(EvalArgs),
}

fn non_negative(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("`{s}` is not a non-negative number")),
    }
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("`{s}` is not a positive number")),
    }
}

fn unit_interval(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if (0.0..=1.0).contains(&v) => Ok(v),
        _ => Err(format!("`{s}` is not in [0, 1]")),
    }
}

fn angle(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v < 90.0 => Ok(v),
        _ => Err(format!("`{s}` is not an angle in (0, 90) degrees")),
    }
}

fn parse_with<T: std::str::FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>().map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct GenArgs {
    /// Comma-separated shapes: plane, cube, sphere, cylinder, wedge, torus.
    #[arg(long, action = clap::ArgAction::Set, value_delimiter = ',', value_parser = parse_with::<ShapeKind>,
          default_value = "plane,cube,sphere,cylinder,wedge,torus")]
    shapes: Vec<ShapeKind>,
    /// Points per clean shape.
    #[arg(long, default_value_t = 100_000, value_parser = clap::value_parser!(u64).range(1..))]
    points: u64,
    /// Comma-separated noise levels as fractions of the bounding-box diagonal.
    #[arg(long, action = clap::ArgAction::Set, value_delimiter = ',', value_parser = non_negative,
          default_value = "0,0.0025,0.005,0.01,0.015,0.025", allow_hyphen_values = true)]
    levels: Vec<f64>,
    /// Noise model: gaussian, impulsive or uniform.
    #[arg(long, default_value = "gaussian", value_parser = parse_with::<NoiseKind>)]
    noise: NoiseKind,
    /// Training patches drawn per model and epoch (recorded in the manifest).
    #[arg(long, default_value_t = 8000)]
    patches_per_model: usize,
    /// Patch size recorded in the manifest.
    #[arg(long, default_value_t = 500)]
    patch_size: usize,
    /// Patch radius as a fraction of the bounding-box diagonal (recorded in the manifest).
    #[arg(long, default_value_t = 0.05, value_parser = positive)]
    radius: f64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct TrainArgs {
    /// Dataset manifest written by `gen`.
    #[arg(long)]
    manifest: PathBuf,
    /// Output parameter file.
    #[arg(long)]
    out: PathBuf,
    /// Training log path (default: <out>.log).
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    epochs: u64,
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(2..))]
    batch_size: u64,
    #[arg(long, default_value_t = 1e-4, value_parser = positive)]
    lr_start: f64,
    #[arg(long, default_value_t = 1e-8, value_parser = positive)]
    lr_end: f64,
    /// Weight of the projection term against the repulsion term.
    #[arg(long, default_value_t = 0.97, value_parser = unit_interval)]
    eta: f64,
    /// Normal support angle in degrees.
    #[arg(long, default_value_t = 15.0, value_parser = angle)]
    sigma_n: f64,
    /// Points per patch (default: the manifest's value).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    patch_size: Option<u64>,
    /// Patch radius fraction (default: the manifest's value).
    #[arg(long, value_parser = positive)]
    radius: Option<f64>,
    /// Patches per model and epoch (default: the manifest's value).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    patches_per_model: Option<u64>,
    /// Loss: l2, proj_a or proj_b.
    #[arg(long, default_value = "proj_b", value_parser = parse_with::<LossKind>)]
    loss: LossKind,
    /// Arithmetic precision: f32 or f64.
    #[arg(long, default_value = "f32", value_parser = parse_with::<Precision>)]
    precision: Precision,
    /// Encoder widths.
    #[arg(long, action = clap::ArgAction::Set, value_delimiter = ',', default_value = "64,128,256,512,1024")]
    encoder: Vec<usize>,
    /// Decoder widths (the last must be 3).
    #[arg(long, action = clap::ArgAction::Set, value_delimiter = ',', default_value = "512,256,3")]
    decoder: Vec<usize>,
    /// Start from a zeroed output layer.
    #[arg(long)]
    zero_init_output: bool,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct FilterArgs {
    /// Parameter file written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Noisy input cloud.
    #[arg(long)]
    input: PathBuf,
    /// Output cloud.
    #[arg(long)]
    out: PathBuf,
    /// Filtering passes.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
    iters: u64,
    /// Points per patch; should match training.
    #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
    patch_size: u64,
    /// Patch radius as a fraction of the input's bounding-box diagonal.
    #[arg(long, default_value_t = 0.05, value_parser = positive)]
    radius: f64,
    /// Arithmetic precision: f32 or f64.
    #[arg(long, default_value = "f32", value_parser = parse_with::<Precision>)]
    precision: Precision,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct EvalArgs {
    /// Clean reference cloud.
    #[arg(long)]
    clean: PathBuf,
    /// Filtered cloud.
    #[arg(long)]
    filtered: PathBuf,
    /// Reference mesh (OFF) for the point-to-surface distance.
    #[arg(long, value_name = "MESH")]
    p2f: Option<PathBuf>,
    /// Nearest filtered points per clean point in the MSE.
    #[arg(long, default_value_t = DEFAULT_MSE_NEIGHBORS)]
    neighbors: usize,
    /// Write `x y z error` per clean point to this file.
    #[arg(long)]
    errors: Option<PathBuf>,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let argv = match config::apply_config_file(argv) {
        Ok(argv) => argv,
        Err(e) => return report(&e),
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("error[usage]: {}", e.render().to_string().trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}

fn report(e: &anyhow::Error) -> ExitCode {
    let (class, msg) = if let Some(e) = e.downcast_ref::<pointfilter::Error>() {
        (e.class(), e.to_string())
    } else if let Some(e) = e.downcast_ref::<config::ConfigError>() {
        (e.class(), e.to_string())
    } else {
        ("internal", format!("{e:#}"))
    };
    eprintln!("error[{class}]: {msg}");
    if class == "usage" {
        ExitCode::from(2)
    } else {
        ExitCode::FAILURE
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build_global()
            .context("cannot configure the worker pool")?;
    }
    match cli.command {
        Command::Gen(args) => cmd_gen(args, cli.seed),
        Command::Train(args) => cmd_train(args, cli.seed, cli.deterministic),
        Command::Filter(args) => cmd_filter(args, cli.seed, cli.deterministic),
        Command::Eval(args) => cmd_eval(args),
    }
}

fn cmd_gen(args: GenArgs, seed: u64) -> Result<()> {
    let shapes: Vec<ShapeSpec> = args
        .shapes
        .iter()
        .enumerate()
        .map(|(k, &kind)| ShapeSpec {
            kind,
            point_count: args.points as usize,
            seed: seed.wrapping_add(k as u64),
        })
        .collect();
    let config = DatasetConfig {
        noise_kind: args.noise,
        patches_per_model: args.patches_per_model,
        patch_size: args.patch_size,
        radius_fraction: args.radius,
        seed,
    };
    let manifest = build_manifest(&shapes, &args.levels, &args.out, &config)?;
    let levels: Vec<String> = args.levels.iter().map(f64::to_string).collect();
    println!(
        "models={} points={} levels={} entries={} manifest={}",
        shapes.len(),
        args.points,
        levels.join(","),
        manifest.entries.len(),
        args.out.join("manifest.txt").display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs, seed: u64, deterministic: bool) -> Result<()> {
    let manifest = DatasetManifest::load(&args.manifest)?;
    let config = TrainConfig {
        epochs: args.epochs as usize,
        batch_size: args.batch_size as usize,
        lr_start: args.lr_start,
        lr_end: args.lr_end,
        eta: args.eta,
        sigma_n_degrees: args.sigma_n,
        patch_size: args.patch_size.map_or(manifest.patch_size, |v| v as usize),
        radius_fraction: args.radius.unwrap_or(manifest.radius_fraction),
        loss_kind: args.loss,
        seed,
        deterministic,
        architecture: Architecture::new(args.encoder, args.decoder)?,
        precision: args.precision,
        zero_init_output: args.zero_init_output,
    };
    config.validate()?;
    let patches = args.patches_per_model.map_or(manifest.patches_per_model, |v| v as usize);
    let models = TrainingModel::load_manifest(&manifest)?;
    println!("epoch, lr, mean_loss, skipped_patches");
    let (params, log) = train_models(&models, patches, &config, |r| println!("{r}"))?;
    save_params(&params, &args.out)?;
    let log_path = args.log.unwrap_or_else(|| with_suffix(&args.out, ".log"));
    std::fs::write(&log_path, log.to_string()).map_err(|source| pointfilter::Error::Write {
        path: log_path.clone(),
        source,
    })?;
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_filter(args: FilterArgs, seed: u64, deterministic: bool) -> Result<()> {
    let params = load_params(&args.model)?;
    let noisy = load_cloud(&args.input)?;
    let config = FilterConfig {
        iterations: args.iters as usize,
        patch_size: args.patch_size as usize,
        radius_fraction: args.radius,
        deterministic,
        seed,
        precision: args.precision,
    };
    let (filtered, summary) = filter_cloud(&params, &noisy, &config)?;
    save_cloud(&filtered, &args.out)?;
    println!("{summary}");
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let clean = load_cloud(&args.clean)?;
    let filtered = load_cloud(&args.filtered)?;
    let mesh = args.p2f.as_ref().map(load_off).transpose()?;
    let report = evaluate(&clean, &filtered, mesh.as_ref(), args.neighbors)?;
    if let (Some(path), Some(errors)) = (&args.errors, &report.per_point_mse) {
        save_per_point_errors(&clean, errors, path)?;
    }
    println!("{report}");
    Ok(())
}
