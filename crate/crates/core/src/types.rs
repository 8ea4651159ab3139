//! Shared domain types: rasters, kernels, the low-rank blur field and the
//! parameter bundles consumed by the solver.
//!
//! Every constructor validates the invariants of its type. The `unvalidated`
//! constructors only check structure (lengths, odd sides) so that data read
//! from lossy sources can be inspected with [`validate`] before use.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

/// Tolerance on unit mass and per-pixel normalization for in-memory data.
pub const NORMALIZATION_TOL: f64 = 1e-6;

/// Planar floating-point raster with 1 or 3 channels.
///
/// Samples are stored plane by plane, each plane row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "empty image {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!(
                "{channels} channels; only 1 or 3 are supported"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::InvalidImage(format!(
                "{} samples for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidImage(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_plane(width: usize, height: usize, plane: Vec<f64>) -> Result<Self> {
        Self::new(width, height, 1, plane)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        assert!(value.is_finite());
        Self::new(width, height, channels, vec![value; width * height * channels])
            .expect("valid image dimensions")
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    /// Builds an image by evaluating `f(channel, row, col)`.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for c in 0..channels {
            for r in 0..height {
                for col in 0..width {
                    data.push(f(c, r, col));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    /// Internal constructor for results of operations on valid images.
    pub(crate) fn from_parts(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height * channels);
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub(crate) fn from_planes(width: usize, height: usize, planes: Vec<Vec<f64>>) -> Self {
        let channels = planes.len();
        let data = planes.into_iter().flatten().collect();
        Self::from_parts(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Pixels per plane.
    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, channel: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn plane_mut(&mut self, channel: usize) -> &mut [f64] {
        let n = self.pixels();
        &mut self.data[channel * n..(channel + 1) * n]
    }

    pub fn planes(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.pixels())
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[(channel * self.height + row) * self.width + col]
    }

    pub fn set(&mut self, channel: usize, row: usize, col: usize, value: f64) {
        let w = self.width;
        let h = self.height;
        self.data[(channel * h + row) * w + col] = value;
    }

    /// Elementwise map; the caller guarantees `f` keeps samples finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image::from_parts(
            self.width,
            self.height,
            self.channels,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Elementwise combination of two images of identical shape.
    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Result<Image> {
        self.check_same_shape(other)?;
        Ok(Image::from_parts(
            self.width,
            self.height,
            self.channels,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn check_same_shape(&self, other: &Image) -> Result<()> {
        if self.width != other.width
            || self.height != other.height
            || self.channels != other.channels
        {
            return Err(Error::dims(self.shape_str(), other.shape_str()));
        }
        Ok(())
    }

    pub(crate) fn shape_str(&self) -> String {
        format!("{}x{}x{}", self.width, self.height, self.channels)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Image {
        self.map(|v| v.clamp(lo, hi))
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn dot(&self, other: &Image) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Square, center-anchored weight array with odd side length.
///
/// No sign or mass constraint; [`KernelBasis`] adds those.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    side: usize,
    data: Vec<f64>,
}

impl Kernel {
    pub fn new(side: usize, data: Vec<f64>) -> Result<Self> {
        if side.is_multiple_of(2) {
            return Err(Error::Invalid(Violation::EvenKernelSide { side }));
        }
        if data.len() != side * side {
            return Err(Error::InvalidKernel(format!(
                "{} entries for a {side}x{side} kernel",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidKernel(format!("non-finite entry at index {index}")));
        }
        Ok(Self { side, data })
    }

    /// Unit impulse at the center.
    pub fn delta(side: usize) -> Result<Self> {
        let mut data = vec![0.0; side * side];
        if side % 2 == 1 {
            data[side * side / 2] = 1.0;
        }
        Self::new(side, data)
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Index of the center row and column.
    pub fn center(&self) -> usize {
        self.side / 2
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.side + col]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Copy scaled to unit mass. Fails when the mass is not positive.
    pub fn normalized(&self) -> Result<Kernel> {
        let sum = self.sum();
        if sum <= 0.0 {
            return Err(Error::InvalidKernel(format!(
                "cannot normalize kernel with mass {sum}"
            )));
        }
        Ok(Kernel {
            side: self.side,
            data: self.data.iter().map(|v| v / sum).collect(),
        })
    }

    /// Copy with every entry mirrored through the center.
    pub fn flipped(&self) -> Kernel {
        Kernel {
            side: self.side,
            data: self.data.iter().rev().copied().collect(),
        }
    }
}

/// A first violated invariant, with the offending index.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyBasis,
    EvenKernelSide { side: usize },
    NonFiniteKernelEntry { kernel: usize, index: usize },
    NegativeKernelEntry { kernel: usize, index: usize, value: f64 },
    KernelNotUnitMass { kernel: usize, sum: f64 },
    NonFiniteMixing { basis: usize, pixel: usize },
    NegativeMixing { basis: usize, pixel: usize, value: f64 },
    MixingNotNormalized { pixel: usize, sum: f64 },
    CountMismatch { kernels: usize, maps: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyBasis => write!(f, "empty kernel basis"),
            Violation::EvenKernelSide { side } => {
                write!(f, "kernel side must be odd, got {side}")
            }
            Violation::NonFiniteKernelEntry { kernel, index } => {
                write!(f, "non-finite kernel entry: kernel {kernel}, index {index}")
            }
            Violation::NegativeKernelEntry {
                kernel,
                index,
                value,
            } => write!(
                f,
                "negative kernel entry: kernel {kernel}, index {index} ({value})"
            ),
            Violation::KernelNotUnitMass { kernel, sum } => {
                write!(f, "kernel not unit-mass: kernel {kernel} sums to {sum}")
            }
            Violation::NonFiniteMixing { basis, pixel } => {
                write!(f, "non-finite mixing coefficient: map {basis}, pixel {pixel}")
            }
            Violation::NegativeMixing {
                basis,
                pixel,
                value,
            } => write!(
                f,
                "negative mixing coefficient: map {basis}, pixel {pixel} ({value})"
            ),
            Violation::MixingNotNormalized { pixel, sum } => {
                write!(f, "mixing not normalized: pixel {pixel} sums to {sum}")
            }
            Violation::CountMismatch { kernels, maps } => {
                write!(f, "basis count mismatch: {kernels} kernels, {maps} mixing maps")
            }
        }
    }
}

/// Outcome of [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum ValidationReport {
    Pass,
    Fail(Violation),
}

impl ValidationReport {
    pub fn is_pass(&self) -> bool {
        matches!(self, ValidationReport::Pass)
    }

    fn from_option(v: Option<Violation>) -> Self {
        match v {
            None => ValidationReport::Pass,
            Some(v) => ValidationReport::Fail(v),
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationReport::Pass => write!(f, "pass"),
            ValidationReport::Fail(v) => write!(f, "fail: {v}"),
        }
    }
}

fn check_kernels(kernels: &[Kernel], tol: f64) -> Option<Violation> {
    if kernels.is_empty() {
        return Some(Violation::EmptyBasis);
    }
    for (k, kernel) in kernels.iter().enumerate() {
        if let Some(index) = kernel.data.iter().position(|v| !v.is_finite()) {
            return Some(Violation::NonFiniteKernelEntry { kernel: k, index });
        }
        if let Some(index) = kernel.data.iter().position(|&v| v < 0.0) {
            return Some(Violation::NegativeKernelEntry {
                kernel: k,
                index,
                value: kernel.data[index],
            });
        }
        let sum = kernel.sum();
        if (sum - 1.0).abs() > tol {
            return Some(Violation::KernelNotUnitMass { kernel: k, sum });
        }
    }
    None
}

fn check_mixing(count: usize, pixels: usize, data: &[f64], tol: f64) -> Option<Violation> {
    for b in 0..count {
        let map = &data[b * pixels..(b + 1) * pixels];
        if let Some(pixel) = map.iter().position(|v| !v.is_finite()) {
            return Some(Violation::NonFiniteMixing { basis: b, pixel });
        }
        if let Some(pixel) = map.iter().position(|&v| v < 0.0) {
            return Some(Violation::NegativeMixing {
                basis: b,
                pixel,
                value: map[pixel],
            });
        }
    }
    for pixel in 0..pixels {
        let sum: f64 = (0..count).map(|b| data[b * pixels + pixel]).sum();
        if (sum - 1.0).abs() > tol {
            return Some(Violation::MixingNotNormalized { pixel, sum });
        }
    }
    None
}

/// `B` non-negative, unit-mass kernels sharing one odd side length.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBasis {
    side: usize,
    kernels: Vec<Kernel>,
}

impl KernelBasis {
    pub fn new(kernels: Vec<Kernel>) -> Result<Self> {
        Self::with_tolerance(kernels, NORMALIZATION_TOL)
    }

    pub fn with_tolerance(kernels: Vec<Kernel>, tol: f64) -> Result<Self> {
        let basis = Self::unvalidated(kernels)?;
        match check_kernels(&basis.kernels, tol) {
            None => Ok(basis),
            Some(v) => Err(Error::Invalid(v)),
        }
    }

    /// Scales every kernel to unit mass, then validates.
    pub fn renormalized(kernels: Vec<Kernel>) -> Result<Self> {
        let basis = Self::unvalidated(kernels)?;
        if let Some(v @ Violation::NegativeKernelEntry { .. }) = check_kernels(&basis.kernels, f64::INFINITY) {
            return Err(Error::Invalid(v));
        }
        let kernels = basis
            .kernels
            .iter()
            .map(Kernel::normalized)
            .collect::<Result<Vec<_>>>()?;
        Self::new(kernels)
    }

    /// Structural checks only: non-empty, shared side.
    pub fn unvalidated(kernels: Vec<Kernel>) -> Result<Self> {
        let side = match kernels.first() {
            Some(k) => k.side(),
            None => return Err(Error::Invalid(Violation::EmptyBasis)),
        };
        if let Some(k) = kernels.iter().find(|k| k.side() != side) {
            return Err(Error::InvalidKernel(format!(
                "mixed kernel sides {side} and {}",
                k.side()
            )));
        }
        Ok(Self { side, kernels })
    }

    pub fn count(&self) -> usize {
        self.kernels.len()
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn kernels(&self) -> &[Kernel] {
        &self.kernels
    }

    pub fn kernel(&self, b: usize) -> &Kernel {
        &self.kernels[b]
    }
}

/// `B` per-pixel coefficient maps forming a convex combination at each pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingField {
    width: usize,
    height: usize,
    count: usize,
    data: Vec<f64>,
}

impl MixingField {
    pub fn new(width: usize, height: usize, maps: Vec<Vec<f64>>) -> Result<Self> {
        Self::with_tolerance(width, height, maps, NORMALIZATION_TOL)
    }

    pub fn with_tolerance(
        width: usize,
        height: usize,
        maps: Vec<Vec<f64>>,
        tol: f64,
    ) -> Result<Self> {
        let field = Self::unvalidated(width, height, maps)?;
        match field.violation(tol) {
            None => Ok(field),
            Some(v) => Err(Error::Invalid(v)),
        }
    }

    /// Divides by the per-pixel sum before validating.
    pub fn renormalized(width: usize, height: usize, maps: Vec<Vec<f64>>) -> Result<Self> {
        let mut field = Self::unvalidated(width, height, maps)?;
        if let Some(v @ (Violation::NegativeMixing { .. } | Violation::NonFiniteMixing { .. })) =
            field.violation(f64::INFINITY)
        {
            return Err(Error::Invalid(v));
        }
        let n = width * height;
        for pixel in 0..n {
            let sum: f64 = (0..field.count).map(|b| field.data[b * n + pixel]).sum();
            if sum <= 0.0 {
                return Err(Error::Invalid(Violation::MixingNotNormalized { pixel, sum }));
            }
            for b in 0..field.count {
                field.data[b * n + pixel] /= sum;
            }
        }
        Self::new(width, height, field.into_maps())
    }

    pub fn unvalidated(width: usize, height: usize, maps: Vec<Vec<f64>>) -> Result<Self> {
        if maps.is_empty() {
            return Err(Error::Invalid(Violation::EmptyBasis));
        }
        let n = width * height;
        if n == 0 {
            return Err(Error::InvalidImage("empty mixing field".into()));
        }
        if let Some(m) = maps.iter().find(|m| m.len() != n) {
            return Err(Error::dims(
                format!("{n} coefficients per map"),
                format!("{}", m.len()),
            ));
        }
        let count = maps.len();
        Ok(Self {
            width,
            height,
            count,
            data: maps.into_iter().flatten().collect(),
        })
    }

    /// A single map of ones.
    pub fn uniform(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![vec![1.0; width * height]]).expect("uniform mixing")
    }

    fn violation(&self, tol: f64) -> Option<Violation> {
        check_mixing(self.count, self.width * self.height, &self.data, tol)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn map(&self, b: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[b * n..(b + 1) * n]
    }

    pub fn maps(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.width * self.height)
    }

    pub fn coefficient(&self, b: usize, pixel: usize) -> f64 {
        self.data[b * self.width * self.height + pixel]
    }

    pub fn into_maps(self) -> Vec<Vec<f64>> {
        self.data
            .chunks_exact(self.width * self.height)
            .map(<[f64]>::to_vec)
            .collect()
    }
}

/// Low-rank blur operator: basis kernels plus per-pixel mixing.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurField {
    basis: KernelBasis,
    mixing: MixingField,
}

impl BlurField {
    pub fn new(basis: KernelBasis, mixing: MixingField) -> Result<Self> {
        Self::with_tolerance(basis, mixing, NORMALIZATION_TOL)
    }

    pub fn with_tolerance(basis: KernelBasis, mixing: MixingField, tol: f64) -> Result<Self> {
        let field = Self::unvalidated(basis, mixing);
        match validate_with_tolerance(&field, tol) {
            ValidationReport::Pass => Ok(field),
            ValidationReport::Fail(v) => Err(Error::Invalid(v)),
        }
    }

    pub fn unvalidated(basis: KernelBasis, mixing: MixingField) -> Self {
        Self { basis, mixing }
    }

    /// A single delta kernel applied everywhere.
    pub fn identity(width: usize, height: usize) -> Self {
        Self::uniform(Kernel::delta(1).expect("1x1 delta"), width, height)
            .expect("identity field")
    }

    /// One kernel applied everywhere.
    pub fn uniform(kernel: Kernel, width: usize, height: usize) -> Result<Self> {
        Self::new(
            KernelBasis::new(vec![kernel])?,
            MixingField::uniform(width, height),
        )
    }

    pub fn basis(&self) -> &KernelBasis {
        &self.basis
    }

    pub fn mixing(&self) -> &MixingField {
        &self.mixing
    }

    pub fn count(&self) -> usize {
        self.basis.count()
    }

    pub fn side(&self) -> usize {
        self.basis.side()
    }

    pub fn width(&self) -> usize {
        self.mixing.width()
    }

    pub fn height(&self) -> usize {
        self.mixing.height()
    }

    /// Scalars stored by the low-rank form, `B(K² + HW)`.
    pub fn storage_len(&self) -> usize {
        low_rank_storage(self.count(), self.side(), self.width() * self.height())
    }

    /// Scalars a dense per-pixel kernel field would need, `K²·HW`.
    pub fn dense_storage_len(&self) -> usize {
        dense_storage(self.side(), self.width() * self.height())
    }

    /// Field over an image padded by `margin` on each side; mixing maps are
    /// extended by edge replication, so normalization is preserved.
    pub fn padded(&self, margin: usize) -> BlurField {
        let maps = self
            .mixing
            .maps()
            .map(|m| crate::conv::pad_plane(m, self.width(), self.height(), margin))
            .collect();
        let mixing = MixingField::unvalidated(
            self.width() + 2 * margin,
            self.height() + 2 * margin,
            maps,
        )
        .expect("padded mixing dims");
        BlurField::unvalidated(self.basis.clone(), mixing)
    }

    /// Field restricted to the interior after removing `margin` pixels from
    /// each side.
    pub fn cropped(&self, margin: usize) -> Result<BlurField> {
        let (w, h) = (self.width(), self.height());
        if 2 * margin >= w || 2 * margin >= h {
            return Err(Error::CropTooLarge {
                margin,
                height: h,
                width: w,
            });
        }
        let maps = self
            .mixing
            .maps()
            .map(|m| crate::conv::crop_plane(m, w, h, margin))
            .collect();
        let mixing = MixingField::unvalidated(w - 2 * margin, h - 2 * margin, maps)?;
        Ok(BlurField::unvalidated(self.basis.clone(), mixing))
    }
}

pub fn low_rank_storage(count: usize, side: usize, pixels: usize) -> usize {
    count * (side * side + pixels)
}

pub fn dense_storage(side: usize, pixels: usize) -> usize {
    side * side * pixels
}

/// Checks every [`BlurField`] invariant at the default tolerance.
pub fn validate(field: &BlurField) -> ValidationReport {
    validate_with_tolerance(field, NORMALIZATION_TOL)
}

pub fn validate_with_tolerance(field: &BlurField, tol: f64) -> ValidationReport {
    if let Some(v) = check_kernels(&field.basis.kernels, tol) {
        return ValidationReport::Fail(v);
    }
    if let Some(v) = field.mixing.violation(tol) {
        return ValidationReport::Fail(v);
    }
    if field.basis.count() != field.mixing.count() {
        return ValidationReport::Fail(Violation::CountMismatch {
            kernels: field.basis.count(),
            maps: field.mixing.count(),
        });
    }
    ValidationReport::from_option(None)
}

/// Per-pixel object identifiers; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentLabels {
    width: usize,
    height: usize,
    labels: Vec<u32>,
}

impl SegmentLabels {
    pub fn new(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage("empty label map".into()));
        }
        if labels.len() != width * height {
            return Err(Error::dims(
                format!("{} labels", width * height),
                format!("{}", labels.len()),
            ));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    /// One segment covering the whole image.
    pub fn uniform(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![0; width * height]).expect("uniform labels")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Pixel count per label, ordered by label.
    pub fn counts(&self) -> BTreeMap<u32, usize> {
        let mut counts = BTreeMap::new();
        for &l in &self.labels {
            *counts.entry(l).or_insert(0) += 1;
        }
        counts
    }

    pub fn segment_count(&self) -> usize {
        self.counts().len()
    }
}

/// Camera response parameters: softplus saturation sharpness, gamma and the
/// saturation threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponseParams {
    pub a: f64,
    pub gamma: f64,
    pub sat_threshold: f64,
}

impl Default for ResponseParams {
    fn default() -> Self {
        Self {
            a: 50.0,
            gamma: 2.2,
            sat_threshold: 0.99,
        }
    }
}

impl ResponseParams {
    pub fn new(a: f64, gamma: f64, sat_threshold: f64) -> Result<Self> {
        let params = Self {
            a,
            gamma,
            sat_threshold,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(Error::InvalidConfig(format!("a must be > 0, got {}", self.a)));
        }
        if !(self.gamma >= 1.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "gamma must be >= 1, got {}",
                self.gamma
            )));
        }
        if !(self.sat_threshold > 0.0 && self.sat_threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "saturation threshold must lie in (0, 1], got {}",
                self.sat_threshold
            )));
        }
        Ok(())
    }
}

/// Richardson-Lucy solver settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RLConfig {
    pub max_iters: usize,
    pub lambda_tv: f64,
    pub tv_epsilon: f64,
    /// Gaussian width in pixels used to smooth the saturated-region mask.
    pub sat_mask_sigma: f64,
    /// Lower clamp for the denominator of the TV combination.
    pub denom_floor: f64,
    pub use_saturation_model: bool,
    /// Gamma-decode the observation before solving, re-encode after.
    pub work_in_linear: bool,
    /// Also zero `z` wherever the kernel footprint touches a clipped pixel.
    pub dilate_z: bool,
}

impl Default for RLConfig {
    fn default() -> Self {
        Self {
            max_iters: 30,
            lambda_tv: 0.002,
            tv_epsilon: 1e-3,
            sat_mask_sigma: 2.0,
            denom_floor: 1e-3,
            use_saturation_model: true,
            work_in_linear: true,
            dilate_z: false,
        }
    }
}

impl RLConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::InvalidConfig("max_iters must be >= 1".into()));
        }
        if !(self.lambda_tv >= 0.0 && self.lambda_tv.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda_tv must be >= 0, got {}",
                self.lambda_tv
            )));
        }
        for (name, v) in [
            ("tv_epsilon", self.tv_epsilon),
            ("sat_mask_sigma", self.sat_mask_sigma),
            ("denom_floor", self.denom_floor),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}
