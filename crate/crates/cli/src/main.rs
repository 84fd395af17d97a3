use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use voxelconv::bench::{run_bench, BenchConfig, BenchOperator};
use voxelconv::format::{self, EngineConfig};
use voxelconv::oracle::{run_suite, SuiteConfig, SuiteMode};
use voxelconv::{
    build_inverse_map, with_workers, ComputePath, ConvLayerSpec, Error, ExecOptions, GridShape,
    LayerMode, LctBackend, LctConfig, Reducer, SparseTensor, StrideSpec, Voxelizer,
};

#[derive(Parser)]
#[command(name = "voxelconv", version, about = "Sparse 3D convolution on voxel grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Quantize a text point list into a .spt tensor.
    Voxelize(VoxelizeArgs),
    /// Run one convolution layer on a .spt tensor.
    Conv(ConvArgs),
    /// Check every operator against the dense oracle on seeded random tensors.
    Verify(VerifyArgs),
    /// Time table build, rule generation and compute for one operator.
    Bench(BenchArgs),
    /// Print the header of a .spt file.
    Info(InfoArgs),
}

#[derive(Args, Clone)]
struct EngineArgs {
    /// Worker threads; 0 picks one per core.
    #[arg(long, env = "VOXELCONV_WORKERS", default_value_t = 0)]
    workers: usize,
    #[arg(long, value_enum, default_value_t = PathArg::Optimized)]
    path: PathArg,
    #[arg(long, value_enum)]
    lct: Option<LctArg>,
    /// TOML config file (`[lct] dense_threshold = N`).
    #[arg(long)]
    config: Option<PathBuf>,
}

impl EngineArgs {
    fn options(&self) -> Result<ExecOptions> {
        let mut lct = LctConfig::default();
        if let Some(path) = &self.config {
            let cfg = EngineConfig::load(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            lct = cfg.apply(lct);
        }
        if let Some(b) = self.lct {
            lct.backend = b.into();
        }
        Ok(ExecOptions {
            path: self.path.into(),
            lct,
        })
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PathArg {
    Reference,
    Optimized,
}

impl From<PathArg> for ComputePath {
    fn from(p: PathArg) -> Self {
        match p {
            PathArg::Reference => ComputePath::Reference,
            PathArg::Optimized => ComputePath::Optimized,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LctArg {
    Dense,
    Hash,
    Auto,
}

impl From<LctArg> for LctBackend {
    fn from(b: LctArg) -> Self {
        match b {
            LctArg::Dense => LctBackend::Dense,
            LctArg::Hash => LctBackend::Hash,
            LctArg::Auto => LctBackend::Auto,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ReduceArg {
    Mean,
    Sum,
    First,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Subm,
    Down,
    Inv,
}

fn parse_triple<T: std::str::FromStr>(s: &str) -> Result<[T; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated values, got `{s}`"));
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(p.parse::<T>().map_err(|_| format!("invalid value `{p}`"))?);
    }
    out.try_into().map_err(|_| unreachable!())
}

fn parse_extent(s: &str) -> Result<[u32; 3], String> {
    parse_triple::<u32>(s)
}

fn parse_origin(s: &str) -> Result<[f64; 3], String> {
    parse_triple::<f64>(s)
}

fn grid(extent: [u32; 3], batches: u32) -> Result<GridShape> {
    Ok(GridShape::new(extent[0], extent[1], extent[2], batches)?)
}

#[derive(Args)]
struct VoxelizeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    voxel_size: f64,
    #[arg(long, value_parser = parse_origin, default_value = "0,0,0")]
    origin: [f64; 3],
    #[arg(long, value_parser = parse_extent)]
    shape: [u32; 3],
    #[arg(long, default_value_t = 1)]
    batches: u32,
    #[arg(long, value_enum, default_value_t = ReduceArg::Mean)]
    reduce: ReduceArg,
}

#[derive(Args)]
struct ConvArgs {
    #[arg(long)]
    input: PathBuf,
    /// JSON weight file with layout `oc_koff_ic`.
    #[arg(long)]
    weights: PathBuf,
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// Submanifold kernel size.
    #[arg(long, default_value_t = 3)]
    kernel: usize,
    /// Stride for down/inv.
    #[arg(long, default_value_t = 2)]
    stride: u32,
    /// Fine index set (a .spt file) that inverse convolution writes onto.
    #[arg(long)]
    fine: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, value_parser = parse_extent, default_value = "16,16,16")]
    shape: [u32; 3],
    #[arg(long, default_value_t = 1)]
    batches: u32,
    #[arg(long, default_value_t = 0.05)]
    density: f64,
    #[arg(long, default_value_t = 4)]
    channels: usize,
    /// Defaults to --channels.
    #[arg(long)]
    out_channels: Option<usize>,
    #[arg(long, default_value_t = 3)]
    kernel: usize,
    #[arg(long, default_value_t = 2)]
    stride: u32,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "subm,down,inv")]
    modes: Vec<ModeArg>,
    #[arg(long, default_value_t = 10)]
    cases: usize,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Subm)]
    mode: ModeArg,
    #[arg(long, value_parser = parse_extent, default_value = "64,64,64")]
    shape: [u32; 3],
    #[arg(long, default_value_t = 1)]
    batches: u32,
    #[arg(long, default_value_t = 0.05)]
    density: f64,
    #[arg(long, default_value_t = 16)]
    channels: usize,
    #[arg(long)]
    out_channels: Option<usize>,
    #[arg(long, default_value_t = 3)]
    kernel: usize,
    #[arg(long, default_value_t = 2)]
    stride: u32,
    #[arg(long, default_value_t = 20)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Args)]
struct InfoArgs {
    input: PathBuf,
}

fn voxelize(args: &VoxelizeArgs) -> Result<()> {
    let text = fs::read_to_string(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let (points, channels) = format::parse_points(&text)?;
    let voxelizer = Voxelizer {
        voxel_size: args.voxel_size,
        origin: args.origin,
        shape: grid(args.shape, args.batches)?,
        reducer: match args.reduce {
            ReduceArg::Mean => Reducer::Mean,
            ReduceArg::Sum => Reducer::Sum,
            ReduceArg::First => Reducer::First,
        },
    };
    let t = voxelizer.voxelize(&points, channels)?;
    format::save_tensor(&args.output, &t)?;
    eprintln!("{} points -> {} voxels", points.len(), t.len());
    Ok(())
}

fn load(path: &Path) -> Result<SparseTensor> {
    format::load_tensor(path).with_context(|| format!("loading {}", path.display()))
}

fn conv(args: &ConvArgs) -> Result<()> {
    let opts = args.engine.options()?;
    let t = load(&args.input)?;
    let wf = format::load_weights(&args.weights)
        .with_context(|| format!("loading {}", args.weights.display()))?;
    let w = wf.into_tensor()?;
    if w.in_channels() != t.channels() {
        return Err(Error::ChannelMismatch {
            layer: 0,
            expected: w.in_channels(),
            found: t.channels(),
        }
        .into());
    }
    let out = with_workers(args.engine.workers, || -> Result<SparseTensor> {
        Ok(match args.mode {
            ModeArg::Subm => {
                let layer = ConvLayerSpec::new(LayerMode::Submanifold { kernel: args.kernel }, w)?;
                voxelconv::run_pipeline(&[layer], &t, &opts)?
            }
            ModeArg::Down => {
                let stride = StrideSpec::new(args.stride)?;
                let layer = ConvLayerSpec::new(LayerMode::Downsample { stride }, w)?;
                voxelconv::run_pipeline(&[layer], &t, &opts)?
            }
            ModeArg::Inv => {
                let Some(fine_path) = &args.fine else {
                    bail!("--fine is required for inverse convolution");
                };
                let fine = load(fine_path)?;
                let stride = StrideSpec::new(args.stride)?;
                ConvLayerSpec::new(LayerMode::Inverse { stride }, w.clone())?;
                let imap = build_inverse_map(fine.sites(), t.sites(), stride, &opts.lct)?;
                voxelconv::inverse_conv(&t, &imap, fine.sites(), &w, opts.path)?
            }
        })
    })??;
    format::save_tensor(&args.output, &out)?;
    Ok(())
}

fn verify(args: &VerifyArgs) -> Result<bool> {
    let cfg = SuiteConfig {
        seed: args.seed,
        shape: grid(args.shape, args.batches)?,
        density: args.density,
        in_channels: args.channels,
        out_channels: args.out_channels.unwrap_or(args.channels),
        kernel: args.kernel,
        stride: args.stride,
        modes: args
            .modes
            .iter()
            .map(|m| match m {
                ModeArg::Subm => SuiteMode::Subm,
                ModeArg::Down => SuiteMode::Down,
                ModeArg::Inv => SuiteMode::Inv,
            })
            .collect(),
        cases: args.cases,
        tol: args.tol,
        opts: args.engine.options()?,
    };
    let report = with_workers(args.engine.workers, || run_suite(&cfg))??;
    for (mode, r) in &report.modes {
        let status = if r.all_passed() { "PASS" } else { "FAIL" };
        println!(
            "{status} {:<5} {}/{} cases, max abs err {:.3e}",
            format!("{mode:?}").to_lowercase(),
            r.cases_passed,
            r.cases_run,
            r.max_abs_err
        );
        if let Some(f) = &r.first_failure {
            println!("  first failure: {f:?}");
        }
    }
    Ok(report.all_passed())
}

fn bench(args: &BenchArgs) -> Result<()> {
    let operator = match args.mode {
        ModeArg::Subm => BenchOperator::Submanifold { kernel: args.kernel },
        ModeArg::Down => BenchOperator::Downsample { stride: args.stride },
        ModeArg::Inv => BenchOperator::Inverse { stride: args.stride },
    };
    let opts = args.engine.options()?;
    let cfg = BenchConfig {
        operator,
        path: opts.path,
        shape: grid(args.shape, args.batches)?,
        density: args.density,
        channels: args.channels,
        out_channels: args.out_channels.unwrap_or(args.channels),
        repeats: args.repeats,
        seed: args.seed,
        lct: opts.lct,
    };
    let report = with_workers(args.engine.workers, || run_bench(&cfg))??;
    let json = report.to_json();
    match &args.output {
        Some(p) => fs::write(p, json + "\n")?,
        None => println!("{json}"),
    }
    Ok(())
}

fn info(args: &InfoArgs) -> Result<()> {
    let bytes = fs::read(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let h = format::decode_header(&bytes)?;
    let t = format::decode_tensor(&bytes)?;
    println!("version  {}", h.version);
    println!("grid     {}x{}x{}", h.max_x, h.max_y, h.max_z);
    println!("batches  {}", h.batches);
    println!("n={}", h.n);
    println!("channels {}", h.channels);
    println!("bytes    {}", bytes.len());
    println!("canonical {}", t.sites().is_canonical());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Voxelize(a) => voxelize(a).map(|_| true),
        Command::Conv(a) => conv(a).map(|_| true),
        Command::Verify(a) => verify(a),
        Command::Bench(a) => bench(a).map(|_| true),
        Command::Info(a) => info(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
