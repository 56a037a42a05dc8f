use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand};
use delad_core::background::{estimate_background, BACKGROUND_ITERATIONS};
use delad_core::bench::{
    run_benchmark, synth_blur, validate_report, write_synthetic_dataset, BenchConfig, CaseStatus,
    DatasetManifest, Method, SyntheticDataset, DEFAULT_NOISE, WORKERS_ENV,
};
use delad_core::fft_conv::{load_kernel, Psf};
use delad_core::image::{
    convert_color, load_image, psnr, save_color_image, save_image, ssim, ColorImage, ColorSpace,
    Image, LoadedImage,
};
use delad_core::model::{
    gradient_suite, parameter_count, train_with_observer, EpochRecord, TrainConfig, TrainHistory,
};
use delad_core::solvers::{landweber, richardson_lucy};
use log::info;
use serde::Serialize;

mod config;

/// Self-supervised non-blind deconvolution with an unrolled Landweber
/// network, plus classic baselines and a benchmark harness.
#[derive(Parser, Debug)]
#[command(name = "delad", version, about)]
struct Cli {
    /// Log more (-v info, -vv debug)
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the network to one blurred image and write the estimate
    Deconv(DeconvArgs),
    /// Classic Landweber iteration
    Landweber(LandweberArgs),
    /// Richardson-Lucy iteration
    Rl(RlArgs),
    /// Run one method over a dataset manifest
    Bench(BenchArgs),
    /// Estimate and subtract a smooth wavelet background
    BgRemove(BgArgs),
    /// Blur an image with noise, or generate a synthetic dataset
    Synth(SynthArgs),
    /// Finite-difference check of every differentiable primitive
    Gradcheck(GradcheckArgs),
    /// Show defaults, or describe an image and kernel
    Info(InfoArgs),
}

#[derive(Args, Debug)]
struct IoArgs {
    /// Blurred input image (PNG, PGM/PPM)
    #[arg(short, long)]
    input: PathBuf,
    /// Blur kernel (image, or whitespace-separated text)
    #[arg(short, long)]
    kernel: PathBuf,
    /// Where to write the restored image
    #[arg(short, long)]
    output: PathBuf,
    /// Sharp reference, only used to report PSNR/SSIM
    #[arg(long)]
    ground_truth: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DeconvArgs {
    #[command(flatten)]
    io: IoArgs,
    /// TOML config; flags override it
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Start from the microscopy preset (sparsity prior on)
    #[arg(long)]
    edof: bool,
    #[arg(long)]
    epochs: Option<usize>,
    /// Initial learning rate
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Landweber step size
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    hessian_weight: Option<f64>,
    /// Enables the sparsity prior with this weight
    #[arg(long)]
    sparsity_weight: Option<f64>,
    /// Per-epoch JSON-lines log
    #[arg(long)]
    log: Option<PathBuf>,
    /// Treat a color input as grayscale
    #[arg(long)]
    gray: bool,
}

#[derive(Args, Debug)]
struct LandweberArgs {
    #[command(flatten)]
    io: IoArgs,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    #[arg(long, default_value_t = 0.8)]
    step_size: f64,
    /// Clamp negative values after each step
    #[arg(long)]
    nonneg: bool,
}

#[derive(Args, Debug)]
struct RlArgs {
    #[command(flatten)]
    io: IoArgs,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Dataset manifest (JSON)
    #[arg(short, long)]
    manifest: PathBuf,
    /// landweber, rl or delad
    #[arg(long)]
    method: Method,
    /// Output directory for images, records and reports
    #[arg(short, long, default_value = "bench_out")]
    output_dir: PathBuf,
    /// TOML config; flags override it
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Training epochs for delad
    #[arg(long)]
    epochs: Option<usize>,
    /// Iterations for landweber and rl
    #[arg(long)]
    iterations: Option<usize>,
    /// Parallel cases (default: $DELAD_WORKERS, else all cores)
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args, Debug)]
struct BgArgs {
    #[arg(short, long)]
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// Also save the estimated background
    #[arg(long)]
    background: Option<PathBuf>,
    #[arg(long, default_value_t = BACKGROUND_ITERATIONS)]
    iterations: usize,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Sharp image to blur
    #[arg(short, long, conflicts_with = "dataset", requires_all = ["kernel", "output"])]
    input: Option<PathBuf>,
    #[arg(short, long)]
    kernel: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Noise standard deviation as a fraction of the range
    #[arg(long, default_value_t = DEFAULT_NOISE)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write a procedural dataset and manifest into this directory
    #[arg(long, required_unless_present = "input")]
    dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    images: usize,
    /// Odd kernel sizes, one kernel each
    #[arg(long, value_delimiter = ',', default_values_t = [13, 15, 17, 19, 21, 23, 25, 27])]
    kernel_sizes: Vec<usize>,
    #[arg(long, default_value_t = 255)]
    size: usize,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Side of the square test inputs
    #[arg(long, default_value_t = 8)]
    size: usize,
}

#[derive(Args, Debug)]
struct InfoArgs {
    #[arg(short, long)]
    input: Option<PathBuf>,
    #[arg(short, long)]
    kernel: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Deconv(a) => deconv(a),
        Command::Landweber(a) => {
            let cfg = delad_core::solvers::SolverConfig {
                step_size: a.step_size,
                iterations: a.iterations,
                nonneg_projection: a.nonneg,
            };
            classic(&a.io, "landweber", |y, k| Ok(landweber(y, k, &cfg)?))
        }
        Command::Rl(a) => classic(&a.io, "rl", |y, k| Ok(richardson_lucy(y, k, a.iterations)?)),
        Command::Bench(a) => bench(a),
        Command::BgRemove(a) => bg_remove(a),
        Command::Synth(a) => synth(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Info(a) => show_info(a),
    }
}

fn load_gray(path: &Path) -> Result<Image> {
    Ok(load_image(path)
        .with_context(|| format!("loading {}", path.display()))?
        .to_gray())
}

fn kernel(path: &Path) -> Result<Psf> {
    load_kernel(path).with_context(|| format!("loading kernel {}", path.display()))
}

fn metrics(estimate: &Image, gt: Option<&Path>) -> Result<Option<(f64, f64)>> {
    let Some(path) = gt else {
        return Ok(None);
    };
    let gt = load_gray(path)?;
    Ok(Some((psnr(estimate, &gt)?, ssim(estimate, &gt)?)))
}

fn print_metrics(m: Option<(f64, f64)>) {
    if let Some((p, s)) = m {
        println!("  PSNR {p:.2} dB, SSIM {s:.4}");
    }
}

fn classic(
    io: &IoArgs,
    name: &str,
    solve: impl Fn(&Image, &Psf) -> Result<Image>,
) -> Result<ExitCode> {
    let y = load_gray(&io.input)?;
    let k = kernel(&io.kernel)?;
    let t = Instant::now();
    let x = solve(&y, &k)?;
    save_image(&x, &io.output).with_context(|| format!("writing {}", io.output.display()))?;
    println!(
        "{name}: {}x{} in {:.2}s -> {}",
        y.height(),
        y.width(),
        t.elapsed().as_secs_f64(),
        io.output.display()
    );
    print_metrics(metrics(&x, io.ground_truth.as_deref())?);
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct DeconvLog<'a> {
    input: &'a Path,
    kernel: &'a Path,
    output: &'a Path,
    shape: (usize, usize),
    color: bool,
    parameters: usize,
    config: &'a TrainConfig,
    psnr: Option<f64>,
    ssim: Option<f64>,
    wall_time_s: f64,
    history: &'a TrainHistory,
}

fn deconv(a: DeconvArgs) -> Result<ExitCode> {
    let mut cfg = config::load(a.config.as_deref(), config::base(a.edof))?.delad;
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.initial_lr = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.gamma {
        cfg.step_size = v;
    }
    if let Some(v) = a.hessian_weight {
        cfg.hessian_weight = v;
    }
    if let Some(v) = a.sparsity_weight {
        cfg.sparsity_weight = v;
        cfg.sparsity_enabled = true;
    }
    cfg.validate()?;

    let loaded =
        load_image(&a.io.input).with_context(|| format!("loading {}", a.io.input.display()))?;
    let k = kernel(&a.io.kernel)?;
    let color = match (&loaded, a.gray) {
        (LoadedImage::Color(c), false) => Some(convert_color(c, ColorSpace::YCbCr)),
        _ => None,
    };
    let luma = match &color {
        Some(c) => c.plane(0).clone(),
        None => loaded.to_gray(),
    };

    let mut log = a
        .log
        .as_ref()
        .map(|p| {
            File::create(p)
                .map(BufWriter::new)
                .with_context(|| format!("creating {}", p.display()))
        })
        .transpose()?;
    let mut log_error = None;
    let epochs = cfg.epochs;
    let t = Instant::now();
    let outcome = train_with_observer(&luma, &k, &cfg, None, |r: &EpochRecord| {
        if let Some(w) = log.as_mut() {
            if let Err(e) = serde_json::to_writer(&mut *w, r)
                .map_err(anyhow::Error::from)
                .and_then(|_| Ok(writeln!(w)?))
            {
                log_error.get_or_insert(e);
            }
        }
        if r.epoch.is_multiple_of(100) || r.epoch + 1 == epochs {
            info!("epoch {} lr {:.2e} loss {:.6}", r.epoch, r.lr, r.loss);
        }
    })?;
    if let Some(e) = log_error {
        return Err(e.context("writing training log"));
    }
    if let Some(mut w) = log {
        w.flush()?;
    }
    let wall = t.elapsed().as_secs_f64();

    match color {
        Some(c) => {
            let [_, cb, cr] = c.into_planes();
            let ycc = ColorImage::new([outcome.estimate.clone(), cb, cr], ColorSpace::YCbCr)?;
            save_color_image(&ycc, &a.io.output)
        }
        None => save_image(&outcome.estimate, &a.io.output),
    }
    .with_context(|| format!("writing {}", a.io.output.display()))?;

    let m = metrics(&outcome.estimate, a.io.ground_truth.as_deref())?;
    let json_path = a.io.output.with_extension("json");
    let record = DeconvLog {
        input: &a.io.input,
        kernel: &a.io.kernel,
        output: &a.io.output,
        shape: luma.shape(),
        color: !a.gray && matches!(loaded, LoadedImage::Color(_)),
        parameters: parameter_count(luma.shape()),
        config: &cfg,
        psnr: m.map(|v| v.0),
        ssim: m.map(|v| v.1),
        wall_time_s: wall,
        history: &outcome.history,
    };
    std::fs::write(&json_path, serde_json::to_string_pretty(&record)? + "\n")
        .with_context(|| format!("writing {}", json_path.display()))?;

    let last = outcome.history.last().expect("at least one epoch");
    println!(
        "deconv: {}x{}, {} epochs in {wall:.1}s, final loss {:.6} -> {}",
        luma.height(),
        luma.width(),
        cfg.epochs,
        last.loss,
        a.io.output.display()
    );
    print_metrics(m);
    Ok(ExitCode::SUCCESS)
}

fn bench(a: BenchArgs) -> Result<ExitCode> {
    let manifest = DatasetManifest::load(&a.manifest)
        .with_context(|| format!("loading manifest {}", a.manifest.display()))?;
    let mut cfg: BenchConfig = config::load(a.config.as_deref(), config::base(false))?;
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.epochs {
        cfg.delad.epochs = v;
    }
    if let Some(v) = a.iterations {
        cfg.landweber.iterations = v;
        cfg.rl_iterations = v;
    }
    cfg.workers = a.workers;

    let report = run_benchmark(&manifest, a.method, &cfg, &a.output_dir)?;
    let check = serde_json::to_value(&report)?;
    validate_report(&check)?;

    println!("{} on {} cases:", a.method, report.cases.len());
    for c in &report.cases {
        match c.status {
            CaseStatus::Ok => match (c.psnr, c.ssim) {
                (Some(p), Some(s)) => println!(
                    "  {:<16} PSNR {p:6.2}  SSIM {s:.4}  ({:.1}s)",
                    c.name, c.wall_time_s
                ),
                _ => println!(
                    "  {:<16} done, no ground truth  ({:.1}s)",
                    c.name, c.wall_time_s
                ),
            },
            CaseStatus::Failed => println!(
                "  {:<16} FAILED: {}",
                c.name,
                c.error.as_deref().unwrap_or("")
            ),
        }
    }
    let agg = &report.aggregate;
    if let (Some(p), Some(s)) = (agg.mean_psnr, agg.mean_ssim) {
        println!("  mean             PSNR {p:6.2}  SSIM {s:.4}");
    }
    println!("report: {}", a.output_dir.join("report.json").display());
    if report.failed() > 0 {
        eprintln!("{} of {} cases failed", report.failed(), report.cases.len());
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn bg_remove(a: BgArgs) -> Result<ExitCode> {
    let y = load_gray(&a.input)?;
    let bg = estimate_background(&y, a.iterations)?;
    let out = y.zip_map(&bg, |v, b| (v - b).clamp(0.0, 1.0))?;
    save_image(&out, &a.output).with_context(|| format!("writing {}", a.output.display()))?;
    if let Some(path) = &a.background {
        save_image(&bg, path).with_context(|| format!("writing {}", path.display()))?;
    }
    println!(
        "bg-remove: mean {:.4} -> {:.4}, written to {}",
        y.mean(),
        out.mean(),
        a.output.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn synth(a: SynthArgs) -> Result<ExitCode> {
    if let Some(dir) = &a.dataset {
        let spec = SyntheticDataset {
            images: a.images,
            kernel_sizes: a.kernel_sizes.clone(),
            image_size: a.size,
            noise: a.noise,
            seed: a.seed,
        };
        let m = write_synthetic_dataset(dir, &spec)?;
        println!(
            "synth: {} cases ({} images x {} kernels) -> {}",
            m.cases.len(),
            a.images,
            a.kernel_sizes.len(),
            dir.join("manifest.json").display()
        );
        return Ok(ExitCode::SUCCESS);
    }
    let (Some(input), Some(kpath), Some(output)) = (&a.input, &a.kernel, &a.output) else {
        bail!("synth needs --input, --kernel and --output, or --dataset");
    };
    let gt = load_gray(input)?;
    let k = kernel(kpath)?;
    let y = synth_blur(&gt, &k, a.noise, a.seed)?;
    save_image(&y, output).with_context(|| format!("writing {}", output.display()))?;
    println!(
        "synth: PSNR of blurred vs sharp {:.2} dB -> {}",
        psnr(&y, &gt)?,
        output.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let results = gradient_suite(a.size, a.seed)?;
    println!(
        "{:<14} {:>12} {:>10}  result",
        "primitive", "max rel err", "tolerance"
    );
    for r in &results {
        println!(
            "{:<14} {:>12.3e} {:>10.0e}  {}",
            r.name,
            r.max_rel_error,
            r.tolerance,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    let failed = results.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        println!("{failed} of {} checks failed", results.len());
        return Ok(ExitCode::FAILURE);
    }
    println!("all {} checks passed", results.len());
    Ok(ExitCode::SUCCESS)
}

fn show_info(a: InfoArgs) -> Result<ExitCode> {
    println!("delad {}", env!("CARGO_PKG_VERSION"));
    if a.input.is_none() && a.kernel.is_none() {
        println!(
            "workers: {}",
            std::env::var(WORKERS_ENV).unwrap_or_else(|_| "all cores".into())
        );
        println!("default config (TOML):\n");
        print!("{}", toml::to_string(&config::base(false))?);
        return Ok(ExitCode::SUCCESS);
    }
    if let Some(path) = &a.input {
        let loaded = load_image(path).with_context(|| format!("loading {}", path.display()))?;
        let gray = loaded.to_gray();
        let (h, w) = gray.shape();
        println!(
            "image {}: {h}x{w} {}, range [{:.4}, {:.4}], mean {:.4}",
            path.display(),
            if matches!(loaded, LoadedImage::Color(_)) {
                "color"
            } else {
                "gray"
            },
            gray.min(),
            gray.max(),
            gray.mean()
        );
        println!("  network parameters: {}", parameter_count((h, w)));
    }
    if let Some(path) = &a.kernel {
        let k = kernel(path)?;
        let support = k.data().iter().filter(|&&v| v > 0.0).count();
        println!(
            "kernel {}: {}x{}, center {:?}, {} nonzero taps",
            path.display(),
            k.height(),
            k.width(),
            k.center(),
            support
        );
    }
    Ok(ExitCode::SUCCESS)
}
