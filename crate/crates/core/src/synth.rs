//! Synthetic training data: camera-shake kernels from simulated hand
//! trajectories, multi-region scene blurring and exposure augmentation.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::conv::{convolve_circular, crop, pad_edge};
use crate::error::{Error, Result};
use crate::io::{write_blurfield, write_pfm};
use crate::operator::{densify, DenseKernelField};
use crate::types::{BlurField, Image, Kernel, KernelBasis, MixingField, SegmentLabels};

pub const MAX_OBJECTS: usize = 3;
pub const MIN_OBJECT_PIXELS: usize = 400;
pub const MAX_EXPOSURE: f64 = 1.0;
pub const EXPOSURE_SCALE_RANGE: (f64, f64) = (0.5, 1.5);
const MAX_TRAJECTORY_ATTEMPTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryParams {
    pub steps: usize,
    /// Seconds per step; `steps · dt` is the exposure.
    pub dt: f64,
    pub exposure: f64,
    /// Per-step velocity retention, in `[0, 1)`.
    pub damping: f64,
    /// Random acceleration scale in px/s².
    pub accel_sigma: f64,
    pub seed: u64,
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        Self::with_exposure(MAX_EXPOSURE, 0).expect("valid default exposure")
    }
}

impl TrajectoryParams {
    pub const DEFAULT_STEPS: usize = 1000;
    pub const DEFAULT_DAMPING: f64 = 0.995;
    pub const DEFAULT_ACCEL_SIGMA: f64 = 60.0;

    /// Default dynamics with `dt = exposure / steps`.
    pub fn with_exposure(exposure: f64, seed: u64) -> Result<Self> {
        let p = TrajectoryParams {
            steps: Self::DEFAULT_STEPS,
            dt: exposure / Self::DEFAULT_STEPS as f64,
            exposure,
            damping: Self::DEFAULT_DAMPING,
            accel_sigma: Self::DEFAULT_ACCEL_SIGMA,
            seed,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.steps == 0 {
            return bad("trajectory needs at least one step".into());
        }
        if !(self.exposure > 0.0 && self.exposure <= MAX_EXPOSURE) {
            return bad(format!("exposure must be in (0, 1] s, got {}", self.exposure));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return bad(format!("damping must be in [0, 1), got {}", self.damping));
        }
        if !(self.accel_sigma >= 0.0 && self.accel_sigma.is_finite()) {
            return bad(format!("accel_sigma must be >= 0, got {}", self.accel_sigma));
        }
        Ok(())
    }
}

/// Damped random walk on velocity, integrated to positions and shifted so the
/// centroid is at the origin. Returns `steps + 1` points including the start.
pub fn sample_trajectory(params: &TrajectoryParams) -> Result<Vec<(f64, f64)>> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let kick = params.accel_sigma * params.dt.sqrt();
    let (mut vx, mut vy) = (0.0, 0.0);
    let (mut x, mut y) = (0.0, 0.0);
    let mut points = Vec::with_capacity(params.steps + 1);
    points.push((x, y));
    for _ in 0..params.steps {
        let nx: f64 = rng.sample(StandardNormal);
        let ny: f64 = rng.sample(StandardNormal);
        vx = params.damping * vx + kick * nx;
        vy = params.damping * vy + kick * ny;
        x += vx * params.dt;
        y += vy * params.dt;
        points.push((x, y));
    }
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let cy = points.iter().map(|p| p.1).sum::<f64>() / n;
    for p in &mut points {
        p.0 -= cx;
        p.1 -= cy;
    }
    Ok(points)
}

/// Splats trajectory samples `(x, y)` (x along columns, y along rows) onto a
/// `side × side` grid centred at `(side − 1) / 2` with bilinear weights.
///
/// Fails with [`Error::SupportExceeded`] unless every sample stays within
/// `(side − 1)/2 − 1` of the centre, which keeps the outer ring empty.
pub fn rasterize_kernel(trajectory: &[(f64, f64)], side: usize) -> Result<Kernel> {
    if side < 3 || side.is_multiple_of(2) {
        return Err(Error::InvalidKernel(format!(
            "rasterized kernels need an odd side >= 3, got {side}"
        )));
    }
    if trajectory.is_empty() {
        return Err(Error::InvalidConfig("empty trajectory".into()));
    }
    let c = ((side - 1) / 2) as f64;
    let limit = c - 1.0;
    let mut data = vec![0.0; side * side];
    for &(x, y) in trajectory {
        if !(x.abs() <= limit && y.abs() <= limit) {
            return Err(Error::SupportExceeded { side });
        }
        let (gx, gy) = (c + x, c + y);
        let (c0, r0) = (gx.floor(), gy.floor());
        let (fx, fy) = (gx - c0, gy - r0);
        let (c0, r0) = (c0 as usize, r0 as usize);
        for (dr, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (dc, wx) in [(0, 1.0 - fx), (1, fx)] {
                let w = wx * wy;
                if w > 0.0 {
                    data[(r0 + dr) * side + c0 + dc] += w;
                }
            }
        }
    }
    Kernel::new(side, data)?.normalized()
}

/// Draws trajectories from consecutive seeds until one fits the support.
/// Returns the kernel and the seed that produced it.
pub fn sample_kernel(params: &TrajectoryParams, side: usize) -> Result<(Kernel, u64)> {
    let mut p = *params;
    for _ in 0..MAX_TRAJECTORY_ATTEMPTS {
        match rasterize_kernel(&sample_trajectory(&p)?, side) {
            Ok(k) => return Ok((k, p.seed)),
            Err(Error::SupportExceeded { .. }) => p.seed = p.seed.wrapping_add(1),
            Err(e) => return Err(e),
        }
    }
    Err(Error::SupportExceeded { side })
}

/// A sharp image, its object segmentation and one kernel per region.
///
/// Label 0 is background and uses `kernels[0]`; objects are labelled `1..=n`
/// and use `kernels[1..=n]`.
#[derive(Debug, Clone)]
pub struct SceneSpec {
    sharp: Image,
    labels: SegmentLabels,
    kernels: Vec<Kernel>,
}

impl SceneSpec {
    pub fn new(sharp: Image, labels: SegmentLabels, kernels: Vec<Kernel>) -> Result<Self> {
        if (labels.width(), labels.height()) != (sharp.width(), sharp.height()) {
            return Err(Error::dims(
                format!("{}x{} labels", sharp.width(), sharp.height()),
                format!("{}x{}", labels.width(), labels.height()),
            ));
        }
        let counts = labels.counts();
        let objects: Vec<(u32, usize)> = counts.into_iter().filter(|&(l, _)| l != 0).collect();
        if objects.len() > MAX_OBJECTS {
            return Err(Error::InvalidConfig(format!(
                "at most {MAX_OBJECTS} object regions allowed, got {}",
                objects.len()
            )));
        }
        for (i, &(label, n)) in objects.iter().enumerate() {
            if label as usize != i + 1 {
                return Err(Error::InvalidConfig(format!(
                    "object labels must be 1..={}, found {label}",
                    objects.len()
                )));
            }
            if n < MIN_OBJECT_PIXELS {
                return Err(Error::InvalidConfig(format!(
                    "object {label} has {n} pixels, minimum is {MIN_OBJECT_PIXELS}"
                )));
            }
        }
        if kernels.len() != objects.len() + 1 {
            return Err(Error::InvalidConfig(format!(
                "{} regions need {} kernels, got {}",
                objects.len() + 1,
                objects.len() + 1,
                kernels.len()
            )));
        }
        // Validates kernel mass and a common side.
        KernelBasis::new(kernels.clone())?;
        Ok(SceneSpec {
            sharp,
            labels,
            kernels,
        })
    }

    pub fn sharp(&self) -> &Image {
        &self.sharp
    }

    pub fn labels(&self) -> &SegmentLabels {
        &self.labels
    }

    pub fn kernels(&self) -> &[Kernel] {
        &self.kernels
    }

    pub fn region_count(&self) -> usize {
        self.kernels.len()
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    /// Blurred image clipped to `[0, 1]`.
    pub blurry: Image,
    /// Blurred image before clipping.
    pub blurry_unclipped: Image,
    pub field: BlurField,
}

impl SynthOutput {
    /// Per-pixel kernels of the ground-truth field.
    pub fn dense(&self) -> Result<DenseKernelField> {
        densify(&self.field)
    }
}

/// Blends per-region blurs with masks smoothed by each region's own kernel.
///
/// The smoothed masks are rescaled per pixel to sum to 1; pixels where they
/// all vanish keep the hard indicator. With that normalization the result
/// equals `apply(field, sharp)` for the returned field.
pub fn synth_blur(spec: &SceneSpec) -> Result<SynthOutput> {
    let (w, h) = (spec.sharp.width(), spec.sharp.height());
    let n = w * h;
    let labels = spec.labels.labels();

    let mut smoothed = Vec::with_capacity(spec.region_count());
    for (j, kernel) in spec.kernels.iter().enumerate() {
        let indicator: Vec<f64> = labels
            .iter()
            .map(|&l| if l as usize == j { 1.0 } else { 0.0 })
            .collect();
        let mut m = convolve_circular(&indicator, w, h, kernel)?;
        for v in &mut m {
            *v = v.max(0.0);
        }
        smoothed.push(m);
    }
    for i in 0..n {
        let total: f64 = smoothed.iter().map(|m| m[i]).sum();
        if total > 1e-12 {
            for m in &mut smoothed {
                m[i] /= total;
            }
        } else {
            for (j, m) in smoothed.iter_mut().enumerate() {
                m[i] = if labels[i] as usize == j { 1.0 } else { 0.0 };
            }
        }
    }

    let mut planes = vec![vec![0.0; n]; spec.sharp.channels()];
    for (kernel, mask) in spec.kernels.iter().zip(&smoothed) {
        for (c, plane) in planes.iter_mut().enumerate() {
            let blurred = convolve_circular(spec.sharp.plane(c), w, h, kernel)?;
            for i in 0..n {
                plane[i] += mask[i] * blurred[i];
            }
        }
    }
    let blurry_unclipped = Image::from_planes(w, h, planes);
    let blurry = blurry_unclipped.clamp(0.0, 1.0);
    let field = BlurField::new(
        KernelBasis::new(spec.kernels.clone())?,
        MixingField::new(w, h, smoothed)?,
    )?;
    Ok(SynthOutput {
        blurry,
        blurry_unclipped,
        field,
    })
}

/// Runs [`synth_blur`] on the scene extended by `margin` pixels of edge
/// replication and crops the result back, so the blur near the borders sees
/// replicated content instead of the opposite edge.
///
/// Only pixels at least `⌊K/2⌋` inside the border stay exactly consistent
/// with `apply(field, sharp)`; the operator itself remains periodic.
pub fn synth_blur_padded(spec: &SceneSpec, margin: usize) -> Result<SynthOutput> {
    if margin == 0 {
        return synth_blur(spec);
    }
    let (w, h) = (spec.sharp.width(), spec.sharp.height());
    let labels = spec.labels.labels();
    let (pw, ph) = (w + 2 * margin, h + 2 * margin);
    let padded_labels = (0..ph)
        .flat_map(|r| (0..pw).map(move |c| (r, c)))
        .map(|(r, c)| {
            let r = r.saturating_sub(margin).min(h - 1);
            let c = c.saturating_sub(margin).min(w - 1);
            labels[r * w + c]
        })
        .collect();
    let padded = SceneSpec {
        sharp: pad_edge(&spec.sharp, margin),
        labels: SegmentLabels::new(pw, ph, padded_labels)?,
        kernels: spec.kernels.clone(),
    };
    let out = synth_blur(&padded)?;
    Ok(SynthOutput {
        blurry: crop(&out.blurry, margin)?,
        blurry_unclipped: crop(&out.blurry_unclipped, margin)?,
        field: out.field.cropped(margin)?,
    })
}

/// Keeps the (at most three) largest objects of at least 400 pixels and
/// relabels them `1..=n` by decreasing size. Everything else becomes
/// background.
pub fn select_regions(labels: &SegmentLabels) -> SegmentLabels {
    let mut objects: Vec<(u32, usize)> = labels
        .counts()
        .into_iter()
        .filter(|&(l, n)| l != 0 && n >= MIN_OBJECT_PIXELS)
        .collect();
    objects.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    objects.truncate(MAX_OBJECTS);
    let remap: BTreeMap<u32, u32> = objects
        .iter()
        .enumerate()
        .map(|(i, &(l, _))| (l, i as u32 + 1))
        .collect();
    let relabeled = labels
        .labels()
        .iter()
        .map(|l| remap.get(l).copied().unwrap_or(0))
        .collect();
    SegmentLabels::new(labels.width(), labels.height(), relabeled).expect("same shape")
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let hue = if delta <= 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    let sat = if max > 0.0 { delta / max } else { 0.0 };
    (hue, sat, max)
}

/// Hue in sextants `[0, 6)`.
fn hsv_to_rgb(hue: f64, sat: f64, val: f64) -> (f64, f64, f64) {
    let chroma = val * sat;
    let x = chroma * (1.0 - ((hue % 2.0) - 1.0).abs());
    let m = val - chroma;
    let (r, g, b) = match hue as u32 {
        0 => (chroma, x, 0.0),
        1 => (x, chroma, 0.0),
        2 => (0.0, chroma, x),
        3 => (0.0, x, chroma),
        4 => (x, 0.0, chroma),
        _ => (chroma, 0.0, x),
    };
    (r + m, g + m, b + m)
}

/// Scales the HSV value channel by `scale`, clips it to `[0, 1]` and converts
/// back to RGB.
pub fn augment_exposure(u: &Image, scale: f64) -> Result<Image> {
    if u.channels() != 3 {
        return Err(Error::InvalidImage(format!(
            "exposure augmentation needs RGB, got {} channel(s)",
            u.channels()
        )));
    }
    let (lo, hi) = EXPOSURE_SCALE_RANGE;
    if !(lo..=hi).contains(&scale) {
        return Err(Error::InvalidConfig(format!(
            "exposure scale must be in [{lo}, {hi}], got {scale}"
        )));
    }
    let n = u.pixels();
    let mut planes = vec![vec![0.0; n]; 3];
    let (pr, pg, pb) = (u.plane(0), u.plane(1), u.plane(2));
    for i in 0..n {
        let (hue, sat, val) = rgb_to_hsv(pr[i], pg[i], pb[i]);
        let (r, g, b) = hsv_to_rgb(hue, sat, (val * scale).clamp(0.0, 1.0));
        planes[0][i] = r.clamp(0.0, 1.0);
        planes[1][i] = g.clamp(0.0, 1.0);
        planes[2][i] = b.clamp(0.0, 1.0);
    }
    Ok(Image::from_planes(u.width(), u.height(), planes))
}

pub fn sample_exposure_scale(rng: &mut impl Rng) -> f64 {
    let (lo, hi) = EXPOSURE_SCALE_RANGE;
    rng.random_range(lo..=hi)
}

/// Decorrelated per-item seed (SplitMix64 finalizer over `seed` and `index`).
pub fn item_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct DatasetItem {
    /// Stem used for the output file names.
    pub name: String,
    pub image: Image,
    pub labels: SegmentLabels,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetConfig {
    pub kernel_size: usize,
    /// Template for trajectory sampling; its seed is replaced per kernel.
    pub trajectory: TrajectoryParams,
    pub seed: u64,
    /// Apply the random exposure augmentation (RGB items only).
    pub augment: bool,
    /// Edge-replicated border added before blurring and cropped after; see
    /// [`synth_blur_padded`]. Zero keeps the purely periodic model.
    pub border: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub sharp: PathBuf,
    pub blurry: PathBuf,
    pub field: PathBuf,
    pub seed: u64,
    pub regions: usize,
}

impl ManifestRow {
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.sharp.display(),
            self.blurry.display(),
            self.field.display(),
            self.seed,
            self.regions
        )
    }
}

#[derive(Debug)]
pub struct DatasetReport {
    pub rows: Vec<ManifestRow>,
    /// Items that failed, by name; the rest of the dataset is still written.
    pub failures: Vec<(String, Error)>,
}

pub const MANIFEST_NAME: &str = "manifest.tsv";

/// Builds one sample: the (possibly augmented) sharp image and its blur.
pub fn synthesize_item(
    item: &DatasetItem,
    config: &DatasetConfig,
    seed: u64,
) -> Result<(Image, SynthOutput)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sharp = if config.augment && item.image.channels() == 3 {
        let scale = sample_exposure_scale(&mut rng);
        augment_exposure(&item.image, scale)?
    } else {
        item.image.clone()
    };
    let labels = select_regions(&item.labels);
    let regions = labels.counts().keys().filter(|&&l| l != 0).count() + 1;
    let mut kernels = Vec::with_capacity(regions);
    for _ in 0..regions {
        let params = TrajectoryParams {
            seed: rng.random(),
            ..config.trajectory
        };
        kernels.push(sample_kernel(&params, config.kernel_size)?.0);
    }
    let spec = SceneSpec::new(sharp.clone(), labels, kernels)?;
    Ok((sharp, synth_blur_padded(&spec, config.border)?))
}

fn write_item(out_dir: &Path, name: &str, sharp: &Image, out: &SynthOutput) -> Result<[PathBuf; 3]> {
    let files = [
        PathBuf::from(format!("{name}_sharp.pfm")),
        PathBuf::from(format!("{name}_blurry.pfm")),
        PathBuf::from(format!("{name}_field.nubf")),
    ];
    write_pfm(sharp, out_dir.join(&files[0]))?;
    write_pfm(&out.blurry, out_dir.join(&files[1]))?;
    write_blurfield(&out.field, out_dir.join(&files[2]))?;
    Ok(files)
}

/// Generates every item in parallel and writes `manifest.tsv` in `out_dir`.
/// Item `i` draws all randomness from `item_seed(config.seed, i)`, so the
/// output does not depend on scheduling.
pub fn generate_dataset(
    items: &[DatasetItem],
    config: &DatasetConfig,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetReport> {
    config.trajectory.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let results: Vec<Result<ManifestRow>> = items
        .par_iter()
        .enumerate()
        .map(|(i, item)| {
            let seed = item_seed(config.seed, i as u64);
            let (sharp, out) = synthesize_item(item, config, seed)?;
            let [sharp_path, blurry, field] = write_item(out_dir, &item.name, &sharp, &out)?;
            Ok(ManifestRow {
                sharp: sharp_path,
                blurry,
                field,
                seed,
                regions: out.field.count(),
            })
        })
        .collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (item, result) in items.iter().zip(results) {
        match result {
            Ok(row) => rows.push(row),
            Err(e) => failures.push((item.name.clone(), e)),
        }
    }
    let mut manifest = String::new();
    for row in &rows {
        manifest.push_str(&row.to_line());
        manifest.push('\n');
    }
    let path = out_dir.join(MANIFEST_NAME);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(DatasetReport { rows, failures })
}
