use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use blurfield::conv::PadSpec;
use blurfield::io::{read_blurfield, read_image, read_labels, render_kernel_grid, write_blurfield, write_image};
use blurfield::metrics::{kernel_loss, psnr, reblur_loss, segment_weights, uniform_weights, KernelNorm};
use blurfield::response::{forward_capture, ResponseMode};
use blurfield::rl::{deblur, StopReason};
use blurfield::synth::{generate_dataset, DatasetConfig, DatasetItem, TrajectoryParams};
use blurfield::types::{BlurField, Image, Kernel, KernelBasis, MixingField, RLConfig, ResponseParams};
use blurfield::{densify, SegmentLabels};

#[derive(Parser)]
#[command(name = "blurfield", version, about = "Low-rank spatially varying blur: synthesis, deblurring, evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl Switch {
    fn on(self) -> bool {
        matches!(self, Switch::On)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Smooth,
    Clip,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Psnr,
    Reblur,
    KernelL1,
    KernelL2,
}

#[derive(Subcommand)]
enum Command {
    /// Blur a sharp image with a blur field.
    Blur {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        noise_sigma: f64,
        #[arg(long, default_value_t = 2.2)]
        gamma: f64,
        #[arg(long, value_enum, default_value_t = Mode::Clip)]
        mode: Mode,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Deblur an image with a known blur field.
    Deblur {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 30)]
        iters: usize,
        #[arg(long, default_value_t = 0.002)]
        lambda_tv: f64,
        #[arg(long, default_value_t = 1e-3)]
        tv_eps: f64,
        #[arg(long, value_enum, default_value_t = Switch::On)]
        sat: Switch,
        #[arg(long, default_value_t = 0.99)]
        sat_threshold: f64,
        #[arg(long, default_value_t = 2.0)]
        mask_sigma: f64,
        #[arg(long, default_value_t = 2.2)]
        gamma: f64,
        #[arg(long, value_enum, default_value_t = Switch::On)]
        linear: Switch,
        /// Write the per-iteration reblur loss as CSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Generate a synthetic dataset from labelled images.
    Synth {
        #[arg(long)]
        input_dir: PathBuf,
        #[arg(long)]
        labels_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 33)]
        kernel_size: usize,
        /// Exposure time in seconds, at most 1.
        #[arg(long, default_value_t = 1.0)]
        exposure: f64,
        #[arg(long)]
        seed: Option<u64>,
        /// Number of samples; input images are reused in sorted order.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Compute a metric and print it.
    Eval {
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        #[arg(long)]
        field: Option<PathBuf>,
        #[arg(long)]
        gt_field: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, value_enum)]
        metric: Metric,
    },
    /// Render the per-pixel kernels of a field on a grid.
    Kernels {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        stride: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Build a blur field from kernel and mask images.
    GenField {
        #[arg(long = "kernel", required = true)]
        kernels: Vec<PathBuf>,
        #[arg(long = "mask", required = true)]
        masks: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
}

fn seed_or_random(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random();
        eprintln!("seed: {s}");
        s
    })
}

fn read_gray(path: &Path) -> Result<Image> {
    let img = read_image(path)?;
    if img.channels() != 1 {
        bail!("{}: expected a single-channel image", path.display());
    }
    Ok(img)
}

fn format_value(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str, metric: &str) -> Result<&'a PathBuf> {
    value
        .as_ref()
        .with_context(|| format!("--{flag} is required for --metric {metric}"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Blur {
            field,
            input,
            output,
            noise_sigma,
            gamma,
            mode,
            seed,
        } => {
            let field = read_blurfield(&field)?;
            let u = read_image(&input)?;
            let params = ResponseParams {
                gamma,
                ..ResponseParams::default()
            };
            params.validate()?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed_or_random(seed));
            let mode = match mode {
                Mode::Smooth => ResponseMode::Smooth,
                Mode::Clip => ResponseMode::HardClip,
            };
            let v = forward_capture(&field, &u, noise_sigma, &params, mode, &mut rng)?;
            write_image(&v.clamp(0.0, 1.0), &output)?;
        }
        Command::Deblur {
            field,
            input,
            output,
            iters,
            lambda_tv,
            tv_eps,
            sat,
            sat_threshold,
            mask_sigma,
            gamma,
            linear,
            log,
        } => {
            let config = RLConfig {
                max_iters: iters,
                lambda_tv,
                tv_epsilon: tv_eps,
                sat_mask_sigma: mask_sigma,
                use_saturation_model: sat.on(),
                work_in_linear: linear.on(),
                ..RLConfig::default()
            };
            config.validate()?;
            let params = ResponseParams {
                gamma,
                sat_threshold,
                ..ResponseParams::default()
            };
            params.validate()?;
            let field = read_blurfield(&field)?;
            let v = read_image(&input)?;
            let out = deblur(&v, &field, &config, &params)?;
            write_image(&out.image.clamp(0.0, 1.0), &output)?;
            if let Some(path) = log {
                let mut csv = String::from("iter,reblur_loss\n");
                for r in &out.log {
                    csv.push_str(&format!("{},{:e}\n", r.iteration, r.reblur_loss));
                }
                fs::write(&path, csv).with_context(|| format!("{}", path.display()))?;
            }
            let reason = match out.stop {
                StopReason::MaxIterations => "iteration limit",
                StopReason::NoImprovement => "no further improvement",
            };
            eprintln!("{} iterations ({reason})", out.iterations());
        }
        Command::Synth {
            input_dir,
            labels_dir,
            out_dir,
            kernel_size,
            exposure,
            seed,
            count,
        } => {
            if kernel_size % 2 == 0 || kernel_size < 3 {
                bail!("--kernel-size must be odd and at least 3, got {kernel_size}");
            }
            let trajectory = TrajectoryParams::with_exposure(exposure, 0)?;
            let sources = load_labelled_images(&input_dir, &labels_dir)?;
            let total = count.unwrap_or(sources.len());
            if total > 0 && sources.is_empty() {
                bail!("{}: no input images", input_dir.display());
            }
            let items: Vec<DatasetItem> = (0..total)
                .map(|i| {
                    let (stem, image, labels) = &sources[i % sources.len()];
                    DatasetItem {
                        name: format!("{i:05}_{stem}"),
                        image: image.clone(),
                        labels: labels.clone(),
                    }
                })
                .collect();
            let config = DatasetConfig {
                kernel_size,
                trajectory,
                seed: seed_or_random(seed),
                augment: true,
                border: PadSpec::for_kernel(kernel_size).margin,
            };
            let report = generate_dataset(&items, &config, &out_dir)?;
            for (name, err) in &report.failures {
                eprintln!("error: {name}: {err}");
            }
            if !report.failures.is_empty() {
                bail!("{} of {} samples failed", report.failures.len(), items.len());
            }
        }
        Command::Eval {
            pred,
            reference,
            field,
            gt_field,
            labels,
            metric,
        } => {
            let value = match metric {
                Metric::Psnr => {
                    let a = read_image(required(&pred, "pred", "psnr")?)?;
                    let b = read_image(required(&reference, "ref", "psnr")?)?;
                    psnr(&a, &b, 1.0)?
                }
                Metric::Reblur => {
                    let a = read_image(required(&pred, "pred", "reblur")?)?;
                    let b = read_image(required(&reference, "ref", "reblur")?)?;
                    let weights = match &labels {
                        Some(path) => segment_weights(&read_labels(path)?),
                        None => uniform_weights(a.width(), a.height()),
                    };
                    reblur_loss(&a, &b, &weights)?
                }
                Metric::KernelL1 | Metric::KernelL2 => {
                    let name = if matches!(metric, Metric::KernelL1) { "kernel-l1" } else { "kernel-l2" };
                    let f = read_blurfield(required(&field, "field", name)?)?;
                    let gt = densify(&read_blurfield(required(&gt_field, "gt-field", name)?)?)?;
                    let weights = match &labels {
                        Some(path) => segment_weights(&read_labels(path)?),
                        None => uniform_weights(f.width(), f.height()),
                    };
                    let norm = if matches!(metric, Metric::KernelL1) { KernelNorm::L1 } else { KernelNorm::L2 };
                    kernel_loss(&f, &gt, &weights, norm)?
                }
            };
            println!("{}", format_value(value));
        }
        Command::Kernels { field, stride, output } => {
            let field = read_blurfield(&field)?;
            write_image(&render_kernel_grid(&field, stride)?, &output)?;
        }
        Command::GenField { kernels, masks, output } => {
            if kernels.len() != masks.len() {
                bail!("{} kernels but {} masks", kernels.len(), masks.len());
            }
            let mut basis = Vec::with_capacity(kernels.len());
            for path in &kernels {
                let img = read_gray(path)?;
                if img.width() != img.height() {
                    bail!("{}: kernel must be square, got {}x{}", path.display(), img.width(), img.height());
                }
                let k = Kernel::new(img.width(), img.into_data()).with_context(|| path.display().to_string())?;
                if (k.sum() - 1.0).abs() > 1e-6 {
                    eprintln!("warning: {}: kernel mass {} rescaled to 1", path.display(), k.sum());
                }
                basis.push(k);
            }
            let mut maps = Vec::with_capacity(masks.len());
            let mut shape = None;
            for path in &masks {
                let img = read_gray(path)?;
                let dims = (img.width(), img.height());
                if *shape.get_or_insert(dims) != dims {
                    let (w, h) = shape.unwrap();
                    bail!("{}: mask is {}x{}, expected {w}x{h}", path.display(), dims.0, dims.1);
                }
                maps.push(img.into_data());
            }
            let (w, h) = shape.expect("at least one mask");
            let off = (0..w * h)
                .filter(|&i| (maps.iter().map(|m| m[i]).sum::<f64>() - 1.0).abs() > 1e-6)
                .count();
            if off > 0 {
                eprintln!("warning: mixing weights renormalized at {off} pixels");
            }
            let field = BlurField::new(KernelBasis::renormalized(basis)?, MixingField::renormalized(w, h, maps)?)?;
            write_blurfield(&field, &output)?;
        }
    }
    Ok(())
}

const IMAGE_EXTENSIONS: [&str; 2] = ["png", "pfm"];

fn has_image_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Images in `input_dir` sorted by name, each paired with the label map of
/// the same stem in `labels_dir`.
fn load_labelled_images(
    input_dir: &Path,
    labels_dir: &Path,
) -> Result<Vec<(String, Image, SegmentLabels)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(input_dir)
        .with_context(|| input_dir.display().to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && has_image_extension(p))
        .collect();
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    for path in paths {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .with_context(|| format!("{}: non-UTF-8 file name", path.display()))?
            .to_string();
        let label_path = IMAGE_EXTENSIONS
            .iter()
            .map(|ext| labels_dir.join(format!("{stem}.{ext}")))
            .find(|p| p.is_file())
            .with_context(|| format!("no labels for {} in {}", path.display(), labels_dir.display()))?;
        let image = read_image(&path)?;
        let labels = read_labels(&label_path)?;
        out.push((stem, image, labels));
    }
    Ok(out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
