//! The degradation operator `H = Σ_b M_b K_b` and its adjoint
//! `Hᵀ = Σ_b K_bᵀ M_b`, plus the dense per-pixel representation used as a
//! brute-force reference.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use std::sync::{Arc, OnceLock};

use crate::conv::{multiply_spectra, Fft2d};
use crate::error::{Error, Result};
use crate::types::{BlurField, Image, Violation, NORMALIZATION_TOL};

/// A [`BlurField`] with its basis spectra precomputed for the field's grid.
#[derive(Debug)]
pub struct BlurOperator<'a> {
    field: &'a BlurField,
    fft: Arc<Fft2d>,
    spectra: Vec<Vec<Complex64>>,
    column_sums: OnceLock<Vec<f64>>,
}

impl<'a> BlurOperator<'a> {
    pub fn new(field: &'a BlurField) -> Result<Self> {
        let fft = Fft2d::get(field.width(), field.height());
        let spectra = field
            .basis()
            .kernels()
            .par_iter()
            .map(|k| fft.kernel_spectrum(k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            field,
            fft,
            spectra,
            column_sums: OnceLock::new(),
        })
    }

    pub fn field(&self) -> &BlurField {
        self.field
    }

    /// `Hᵀ1` as one plane: the total weight each latent pixel contributes to
    /// the observation. Identically 1 only when every column of `H` sums to 1,
    /// e.g. for a spatially uniform blur.
    pub fn column_sums(&self) -> &[f64] {
        self.column_sums.get_or_init(|| {
            let ones = Image::filled(self.field.width(), self.field.height(), 1, 1.0);
            self.apply_adjoint(&ones)
                .expect("grid matches the field")
                .into_data()
        })
    }

    fn check(&self, image: &Image) -> Result<()> {
        if image.width() != self.field.width() || image.height() != self.field.height() {
            return Err(Error::dims(
                format!("{}x{} image", self.field.width(), self.field.height()),
                format!("{}x{}", image.width(), image.height()),
            ));
        }
        Ok(())
    }

    /// `Hu`, channel by channel.
    pub fn apply(&self, u: &Image) -> Result<Image> {
        self.check(u)?;
        let mixing = self.field.mixing();
        let planes = u
            .planes()
            .map(|plane| {
                let spectrum = self.fft.forward(plane);
                let blurred: Vec<Vec<f64>> = self
                    .spectra
                    .par_iter()
                    .map(|k| self.fft.inverse_real(multiply_spectra(&spectrum, k, false)))
                    .collect();
                let mut out = vec![0.0; plane.len()];
                for (b, conv) in blurred.iter().enumerate() {
                    for ((o, m), c) in out.iter_mut().zip(mixing.map(b)).zip(conv) {
                        *o += m * c;
                    }
                }
                out
            })
            .collect();
        Ok(Image::from_planes(u.width(), u.height(), planes))
    }

    /// `Hᵀx`, channel by channel.
    pub fn apply_adjoint(&self, x: &Image) -> Result<Image> {
        self.check(x)?;
        let mixing = self.field.mixing();
        let planes = x
            .planes()
            .map(|plane| {
                let weighted: Vec<Vec<Complex64>> = (0..self.spectra.len())
                    .into_par_iter()
                    .map(|b| {
                        let masked: Vec<f64> =
                            plane.iter().zip(mixing.map(b)).map(|(v, m)| v * m).collect();
                        multiply_spectra(&self.fft.forward(&masked), &self.spectra[b], true)
                    })
                    .collect();
                let mut acc = vec![Complex64::new(0.0, 0.0); plane.len()];
                for spec in &weighted {
                    for (a, s) in acc.iter_mut().zip(spec) {
                        *a += s;
                    }
                }
                self.fft.inverse_real(acc)
            })
            .collect();
        Ok(Image::from_planes(x.width(), x.height(), planes))
    }
}

/// `Σ_b m^b ∘ (k^b * u)` with periodic boundaries.
pub fn apply(field: &BlurField, u: &Image) -> Result<Image> {
    BlurOperator::new(field)?.apply(u)
}

/// `Σ_b k^b ⋆ (m^b ∘ x)`, the exact adjoint of [`apply`].
pub fn apply_adjoint(field: &BlurField, x: &Image) -> Result<Image> {
    BlurOperator::new(field)?.apply_adjoint(x)
}

/// Per-pixel kernel `Σ_b m^b_i k^b`, row-major `K×K`.
pub fn assemble_kernel_at(field: &BlurField, row: usize, col: usize) -> Result<Vec<f64>> {
    let (w, h) = (field.width(), field.height());
    if row >= h || col >= w {
        return Err(Error::OutOfBounds {
            row,
            col,
            height: h,
            width: w,
        });
    }
    let pixel = row * w + col;
    let side = field.side();
    let mut out = vec![0.0; side * side];
    for (b, k) in field.basis().kernels().iter().enumerate() {
        let m = field.mixing().coefficient(b, pixel);
        if m == 0.0 {
            continue;
        }
        for (o, v) in out.iter_mut().zip(k.data()) {
            *o += m * v;
        }
    }
    Ok(out)
}

/// One explicit `K×K` kernel per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseKernelField {
    width: usize,
    height: usize,
    side: usize,
    data: Vec<f64>,
}

impl DenseKernelField {
    /// `kernels` holds `H·W` row-major `K×K` kernels, pixels in row-major order.
    pub fn new(width: usize, height: usize, side: usize, kernels: Vec<f64>) -> Result<Self> {
        if side.is_multiple_of(2) {
            return Err(Error::Invalid(Violation::EvenKernelSide { side }));
        }
        let k2 = side * side;
        if kernels.len() != width * height * k2 {
            return Err(Error::dims(
                format!("{} entries", width * height * k2),
                format!("{}", kernels.len()),
            ));
        }
        for (pixel, k) in kernels.chunks_exact(k2).enumerate() {
            if let Some(index) = k.iter().position(|&v| !(v >= 0.0)) {
                return Err(Error::Invalid(Violation::NegativeKernelEntry {
                    kernel: pixel,
                    index,
                    value: k[index],
                }));
            }
            let sum: f64 = k.iter().sum();
            if (sum - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::Invalid(Violation::KernelNotUnitMass { kernel: pixel, sum }));
            }
        }
        Ok(Self {
            width,
            height,
            side,
            data: kernels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn kernel_at(&self, row: usize, col: usize) -> &[f64] {
        self.kernel(row * self.width + col)
    }

    pub fn kernel(&self, pixel: usize) -> &[f64] {
        let k2 = self.side * self.side;
        &self.data[pixel * k2..(pixel + 1) * k2]
    }
}

/// Materializes every per-pixel kernel of `field`.
pub fn densify(field: &BlurField) -> Result<DenseKernelField> {
    let (w, h, side) = (field.width(), field.height(), field.side());
    let total = (w as u128) * (h as u128) * (side as u128) * (side as u128);
    let len = usize::try_from(total).map_err(|_| Error::TooLarge(total))?;
    let mut data = Vec::new();
    data.try_reserve_exact(len).map_err(|_| Error::TooLarge(total))?;
    for row in 0..h {
        for col in 0..w {
            data.extend(assemble_kernel_at(field, row, col)?);
        }
    }
    Ok(DenseKernelField {
        width: w,
        height: h,
        side,
        data,
    })
}

/// Direct `O(HWK²)` evaluation of `v_i = Σ_d k_i(d) u(i − d)` with periodic
/// indexing, where `d` is the offset from the kernel center.
pub fn dense_apply(dense: &DenseKernelField, u: &Image) -> Result<Image> {
    let (w, h) = (dense.width, dense.height);
    if u.width() != w || u.height() != h {
        return Err(Error::dims(
            format!("{w}x{h} image"),
            format!("{}x{}", u.width(), u.height()),
        ));
    }
    let side = dense.side as isize;
    let c = side / 2;
    let planes = u
        .planes()
        .map(|plane| {
            let mut out = vec![0.0; w * h];
            for r in 0..h {
                for col in 0..w {
                    let k = dense.kernel_at(r, col);
                    let mut acc = 0.0;
                    for kr in 0..side {
                        let sr = (r as isize - (kr - c)).rem_euclid(h as isize) as usize;
                        for kc in 0..side {
                            let sc = (col as isize - (kc - c)).rem_euclid(w as isize) as usize;
                            acc += k[(kr * side + kc) as usize] * plane[sr * w + sc];
                        }
                    }
                    out[r * w + col] = acc;
                }
            }
            out
        })
        .collect();
    Ok(Image::from_planes(w, h, planes))
}
