//! Command-line front end: encode, decode, eval and sweep.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use nf3d::compress::CompressedField;
use nf3d::error::{Error, Result};
use nf3d::geometry::{normalize, PointCloud, Shape};
use nf3d::io;
use nf3d::metrics::{attribute_psnr, chamfer, rd_csv, rd_svg, rd_sweep, SweepAxis};
use nf3d::pipeline::{decode_cloud, decode_mesh, encode_shape};
use nf3d::train::loss_history_csv;

#[derive(Parser)]
#[command(
    name = "nf3d",
    version,
    about = "Neural-field codec for 3D geometry and color attributes"
)]
struct Cli {
    /// Worker threads (default: machine parallelism; env NF3D_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compress a shape into a .nf3d bitstream.
    Encode(EncodeArgs),
    /// Reconstruct a mesh or point cloud from a bitstream.
    Decode(DecodeArgs),
    /// Print distortion metrics between two shapes.
    Eval(EvalArgs),
    /// Trace the rate-distortion curve over MLP widths (or a bitwidth
    /// ablation) and write it as CSV.
    Sweep(SweepArgs),
}

/// Encoder tunables shared by `encode` and `sweep`; every flag overrides
/// the config file, which overrides the built-in defaults.
#[derive(Args, Clone)]
struct CommonOpts {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Field kind: udf or sdf.
    #[arg(long)]
    kind: Option<String>,
    /// Hidden width of the MLP.
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lambda_l1: Option<f64>,
    #[arg(long)]
    lambda_attr: Option<f64>,
    /// Training noise std dev (default: 0.01 for SDF, 0.025 for UDF).
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    d_star: Option<f64>,
    #[arg(long)]
    bitwidth: Option<u8>,
    #[arg(long)]
    omega0: Option<f64>,
    /// Positional-encoding frequency levels.
    #[arg(long)]
    enc_levels: Option<usize>,
    #[arg(long)]
    sigma_p: Option<f64>,
    #[arg(long)]
    num_hidden: Option<usize>,
    /// Total training samples (20/40/40 mixture).
    #[arg(long)]
    m_total: Option<usize>,
    #[arg(long)]
    qat_epochs: Option<usize>,
    #[arg(long)]
    qat_lr: Option<f64>,
    /// Marching-cubes grid resolution used on decode paths.
    #[arg(long)]
    r_mc: Option<usize>,
    #[arg(long)]
    eval_points: Option<usize>,
    #[arg(long)]
    seed_params: Option<u64>,
    #[arg(long)]
    seed_data: Option<u64>,
    /// Fit one joint geometry+attribute field (ablation).
    #[arg(long)]
    joint: bool,
    /// Fit the sequential attribute stream (input must carry colors).
    #[arg(long)]
    attributes: bool,
    #[arg(long)]
    attr_width: Option<usize>,
    /// Head activation ablation: default, abs, relu, identity.
    #[arg(long)]
    activation: Option<String>,
    /// Regress raw distances without the truncation mask (ablation).
    #[arg(long)]
    no_truncation: bool,
}

impl CommonOpts {
    fn build(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.load_file(path)?;
        }
        if let Some(v) = &self.kind {
            cfg.kind = v.clone();
        }
        if let Some(v) = &self.activation {
            cfg.activation = v.clone();
        }
        if let Some(v) = self.width {
            cfg.width = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.lambda_l1 {
            cfg.lambda_l1 = v;
        }
        if let Some(v) = self.lambda_attr {
            cfg.lambda_attr = v;
        }
        if let Some(v) = self.sigma {
            cfg.sigma = Some(v);
        }
        if let Some(v) = self.d_star {
            cfg.d_star = v;
        }
        if let Some(v) = self.bitwidth {
            cfg.bitwidth = v;
        }
        if let Some(v) = self.omega0 {
            cfg.omega0 = v;
        }
        if let Some(v) = self.enc_levels {
            cfg.enc_levels = v;
        }
        if let Some(v) = self.sigma_p {
            cfg.sigma_p = v;
        }
        if let Some(v) = self.num_hidden {
            cfg.num_hidden = v;
        }
        if let Some(v) = self.m_total {
            cfg.m_total = v;
        }
        if let Some(v) = self.qat_epochs {
            cfg.qat_epochs = v;
        }
        if let Some(v) = self.qat_lr {
            cfg.qat_lr = v;
        }
        if let Some(v) = self.r_mc {
            cfg.r_mc = v;
        }
        if let Some(v) = self.eval_points {
            cfg.eval_points = v;
        }
        if let Some(v) = self.seed_params {
            cfg.seed_params = Some(v);
        }
        if let Some(v) = self.seed_data {
            cfg.seed_data = Some(v);
        }
        if self.joint {
            cfg.joint = true;
        }
        if self.attributes {
            cfg.attributes = true;
        }
        if let Some(v) = self.attr_width {
            cfg.attr_width = Some(v);
        }
        if self.no_truncation {
            cfg.truncated = false;
        }
        // Omitted seeds are drawn from entropy and echoed so a run can be
        // reproduced.
        if cfg.seed_params.is_none() {
            let s: u64 = rand_seed();
            println!("seed_params = {s}");
            cfg.seed_params = Some(s);
        }
        if cfg.seed_data.is_none() {
            let s: u64 = rand_seed();
            println!("seed_data = {s}");
            cfg.seed_data = Some(s);
        }
        Ok(cfg)
    }
}

fn rand_seed() -> u64 {
    use std::time::{SystemTime, UNIX_EPOCH};
    let nanos = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0);
    nf3d::seeds::splitmix64(nanos ^ std::process::id() as u64)
}

#[derive(Args)]
struct EncodeArgs {
    /// Input shape: .obj, .ply or .xyz.
    input: PathBuf,
    /// Output bitstream path (.nf3d).
    output: PathBuf,
    #[command(flatten)]
    common: CommonOpts,
    /// Write the per-epoch loss history as CSV.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    /// Echo the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct DecodeArgs {
    /// Input bitstream (.nf3d).
    input: PathBuf,
    /// Output path; .obj/.ply write a mesh, with --points a cloud
    /// (.ply/.xyz).
    output: PathBuf,
    #[arg(long)]
    r_mc: Option<usize>,
    /// Resample the surface into this many points instead of a mesh.
    #[arg(long)]
    points: Option<usize>,
    /// Sibling attribute stream (default: <input>.attr.nf3d when present).
    #[arg(long)]
    attributes: Option<PathBuf>,
    /// Sampling seed for --points (drawn and echoed when omitted).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Ground-truth shape.
    gt: PathBuf,
    /// Reconstructed shape.
    rec: PathBuf,
    /// Points sampled from mesh inputs for the comparison.
    #[arg(long, default_value_t = 100_000)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SweepArgs {
    /// Input shape.
    input: PathBuf,
    /// CSV output path (defaults to stdout).
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Optional SVG scatter of the rate-distortion points.
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Comma-separated widths (default 16,24,32,48,64,96).
    #[arg(long)]
    widths: Option<String>,
    /// Sweep quantization bitwidths at fixed width instead, e.g. 6,8,10,12.
    #[arg(long)]
    ablate_bitwidth: Option<String>,
    /// Run sweep points concurrently (identical metrics, mixed timing).
    #[arg(long)]
    parallel: bool,
    #[command(flatten)]
    common: CommonOpts,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Parse { .. } | Error::Io(_) => 1,
        Error::Config(_)
        | Error::DegenerateShape(_)
        | Error::Unsupported(_)
        | Error::MissingColors(_) => 2,
        Error::Training(_) => 3,
        Error::Bitstream { .. } | Error::CrcMismatch { .. } => 4,
        Error::EmptySurface => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli
        .threads
        .or_else(|| std::env::var("NF3D_THREADS").ok().and_then(|v| v.parse().ok()));
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let outcome = match cli.cmd {
        Cmd::Encode(args) => cmd_encode(args),
        Cmd::Decode(args) => cmd_decode(args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::Sweep(args) => cmd_sweep(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

/// Sibling path for the attribute stream: `model.nf3d -> model.attr.nf3d`.
fn attribute_sibling(path: &Path) -> PathBuf {
    match path.file_stem().and_then(|s| s.to_str()) {
        Some(stem) => path.with_file_name(format!("{stem}.attr.nf3d")),
        None => path.with_extension("attr.nf3d"),
    }
}

fn cmd_encode(args: EncodeArgs) -> Result<ExitCode> {
    let run = args.common.build()?;
    if args.print_config {
        print!("{}", run.to_kv());
        return Ok(ExitCode::SUCCESS);
    }
    let cfg = run.codec_config()?;
    let shape: Shape<f64> = io::load_shape(&args.input)?;
    let t0 = Instant::now();
    let out = encode_shape(&shape, &cfg)?;
    let elapsed = t0.elapsed().as_secs_f64();
    out.geometry.write_to(&args.output)?;
    if let Some(attr) = &out.attributes {
        let sibling = attribute_sibling(&args.output);
        attr.write_to(&sibling)?;
        println!("attributes = {} ({} bytes)", sibling.display(), attr.total_size_bytes());
    }
    if let Some(path) = &args.loss_csv {
        std::fs::write(path, loss_history_csv(&out.loss_history))?;
    }
    println!("bytes = {}", out.geometry.total_size_bytes());
    println!("encode_seconds = {elapsed:.3}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_decode(args: DecodeArgs) -> Result<ExitCode> {
    let field = CompressedField::read_from(&args.input)?;
    let r_mc = args.r_mc.unwrap_or(nf3d::pipeline::defaults::MC_RESOLUTION);
    let ext = args
        .output
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    let t0 = Instant::now();

    if let Some(n) = args.points {
        let attr_path = args.attributes.clone().or_else(|| {
            let sibling = attribute_sibling(&args.input);
            sibling.exists().then_some(sibling)
        });
        let attr = attr_path.map(|p| CompressedField::read_from(&p)).transpose()?;
        let seed = args.seed.unwrap_or_else(|| {
            let s = rand_seed();
            println!("seed = {s}");
            s
        });
        let (cloud, _): (PointCloud<f64>, _) = decode_cloud(&field, attr.as_ref(), r_mc, n, seed)?;
        match ext.as_str() {
            "ply" => io::save_cloud_ply(&cloud, &args.output)?,
            "xyz" => io::save_cloud_xyz(&cloud, &args.output)?,
            other => {
                return Err(Error::Config(format!(
                    "point output must be .ply or .xyz, got '.{other}'"
                )))
            }
        }
        println!("points = {}", cloud.len());
    } else {
        let (mesh, _, norm) = decode_mesh::<f64>(&field, r_mc)?;
        if mesh.is_empty() {
            return Err(Error::EmptySurface);
        }
        let restored = nf3d::geometry::TriMesh {
            vertices: mesh.vertices.iter().map(|&v| norm.invert(v)).collect(),
            triangles: mesh.triangles.clone(),
        };
        match ext.as_str() {
            "obj" => io::save_mesh_obj(&restored, &args.output)?,
            "ply" => io::save_mesh_ply(&restored, &args.output)?,
            other => {
                return Err(Error::Config(format!(
                    "mesh output must be .obj or .ply, got '.{other}'"
                )))
            }
        }
        println!("vertices = {}", restored.vertices.len());
        println!("triangles = {}", restored.triangles.len());
    }
    println!("decode_seconds = {:.3}", t0.elapsed().as_secs_f64());
    Ok(ExitCode::SUCCESS)
}

/// Load a shape as a point cloud for metric evaluation; meshes are sampled
/// area-uniformly.
fn eval_cloud(path: &Path, n: usize, seed: u64) -> Result<PointCloud<f64>> {
    match io::load_shape::<f64>(path)? {
        Shape::Cloud(pc) => Ok(pc),
        Shape::Mesh(m) => nf3d::geometry::sample_surface(&m, n, seed),
    }
}

fn cmd_eval(args: EvalArgs) -> Result<ExitCode> {
    let gt = eval_cloud(&args.gt, args.points, args.seed)?;
    let rec = eval_cloud(&args.rec, args.points, args.seed.wrapping_add(1))?;
    // Distortion is measured in the ground truth's normalized frame.
    let (gt_norm_shape, norm) = normalize(&Shape::Cloud(gt))?;
    let Shape::Cloud(gt) = gt_norm_shape else { unreachable!() };
    let rec = PointCloud {
        points: rec.points.iter().map(|&p| norm.apply(p)).collect(),
        colors: rec.colors,
    };
    let cd: f64 = chamfer(&gt, &rec)?;
    let psnr = if gt.colors.is_some() && rec.colors.is_some() {
        Some(attribute_psnr(&gt, &rec)?)
    } else {
        None
    };
    println!("cd,psnr");
    match psnr {
        Some(p) => println!("{cd},{p}"),
        None => println!("{cd},"),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(args: SweepArgs) -> Result<ExitCode> {
    let run = args.common.build()?;
    let cfg = run.codec_config()?;
    let shape: Shape<f64> = io::load_shape(&args.input)?;
    let axis = if let Some(bits) = &args.ablate_bitwidth {
        let values: Vec<u8> = bits
            .split(',')
            .map(|t| t.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("bad bitwidth list '{bits}'")))?;
        SweepAxis::Bitwidth(values)
    } else if let Some(widths) = &args.widths {
        let values: Vec<usize> = widths
            .split(',')
            .map(|t| t.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("bad width list '{widths}'")))?;
        SweepAxis::Width(values)
    } else {
        SweepAxis::Width(run.widths.clone())
    };

    let points = rd_sweep(&shape, &cfg, &axis, args.parallel)?;
    for p in &points {
        if let Some(err) = &p.error {
            eprintln!("width {} b {}: {err}", p.width, p.bitwidth);
        }
    }
    let csv = rd_csv(&points);
    match &args.csv {
        Some(path) => std::fs::write(path, &csv)?,
        None => print!("{csv}"),
    }
    if let Some(path) = &args.svg {
        std::fs::write(path, rd_svg(&points))?;
    }
    if points.iter().all(|p| p.error.is_some()) {
        eprintln!("error: every sweep point failed");
        return Ok(ExitCode::from(6));
    }
    Ok(ExitCode::SUCCESS)
}
