//! Circular convolution and correlation through the 2-D DFT, plus
//! edge-replicating pad/crop.
//!
//! Kernels are zero-embedded into the `H×W` grid with their center moved to
//! index `(0, 0)`, so offsets wrap around periodically. Under that boundary
//! model [`correlate_circular`] is the exact adjoint of [`convolve_circular`].

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::types::{Image, Kernel};

/// Forward and inverse plans for one `H×W` grid.
pub struct Fft2d {
    width: usize,
    height: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2d")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish()
    }
}

fn plan_cache() -> &'static Mutex<HashMap<(usize, usize), Arc<Fft2d>>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<Fft2d>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

impl Fft2d {
    /// Cached plans for a `width × height` grid.
    pub fn get(width: usize, height: usize) -> Arc<Fft2d> {
        let mut cache = plan_cache().lock().unwrap_or_else(|e| e.into_inner());
        cache
            .entry((width, height))
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                Arc::new(Fft2d {
                    width,
                    height,
                    row_fwd: planner.plan_fft_forward(width),
                    row_inv: planner.plan_fft_inverse(width),
                    col_fwd: planner.plan_fft_forward(height),
                    col_inv: planner.plan_fft_inverse(height),
                })
            })
            .clone()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    fn transform(&self, buf: &mut [Complex64], rows: &Arc<dyn Fft<f64>>, cols: &Arc<dyn Fft<f64>>) {
        let (w, h) = (self.width, self.height);
        rows.process(buf);
        let mut t = vec![Complex64::new(0.0, 0.0); w * h];
        transpose::transpose(buf, &mut t, w, h);
        cols.process(&mut t);
        transpose::transpose(&t, buf, h, w);
    }

    pub fn forward(&self, plane: &[f64]) -> Vec<Complex64> {
        debug_assert_eq!(plane.len(), self.width * self.height);
        let mut buf: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, &self.row_fwd, &self.col_fwd);
        buf
    }

    /// Inverse transform keeping the real part, scaled by `1/(HW)`.
    pub fn inverse_real(&self, mut spectrum: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut spectrum, &self.row_inv, &self.col_inv);
        let scale = 1.0 / (self.width * self.height) as f64;
        spectrum.into_iter().map(|c| c.re * scale).collect()
    }

    /// Spectrum of `kernel` embedded center-first in this grid.
    pub fn kernel_spectrum(&self, kernel: &Kernel) -> Result<Vec<Complex64>> {
        let (w, h) = (self.width, self.height);
        check_kernel_fits(kernel, w, h)?;
        let side = kernel.side();
        let c = kernel.center() as isize;
        let mut grid = vec![0.0; w * h];
        for r in 0..side {
            let dy = (r as isize - c).rem_euclid(h as isize) as usize;
            for col in 0..side {
                let dx = (col as isize - c).rem_euclid(w as isize) as usize;
                grid[dy * w + dx] += kernel.get(r, col);
            }
        }
        Ok(self.forward(&grid))
    }
}

fn check_kernel_fits(kernel: &Kernel, width: usize, height: usize) -> Result<()> {
    if kernel.side() > width.min(height) {
        return Err(Error::KernelTooLarge {
            kernel: kernel.side(),
            height,
            width,
        });
    }
    Ok(())
}

fn check_plane(plane: &[f64], width: usize, height: usize) -> Result<()> {
    if plane.len() != width * height || plane.is_empty() {
        return Err(Error::dims(
            format!("{width}x{height} plane"),
            format!("{} samples", plane.len()),
        ));
    }
    Ok(())
}

/// Pointwise spectral product; `conjugate` selects correlation.
pub(crate) fn multiply_spectra(x: &[Complex64], k: &[Complex64], conjugate: bool) -> Vec<Complex64> {
    x.iter()
        .zip(k)
        .map(|(a, b)| if conjugate { a * b.conj() } else { a * b })
        .collect()
}

/// `out(i) = Σ_j kernel(j) · plane(i − j)` with periodic wraparound.
pub fn convolve_circular(
    plane: &[f64],
    width: usize,
    height: usize,
    kernel: &Kernel,
) -> Result<Vec<f64>> {
    filter_circular(plane, width, height, kernel, false)
}

/// `out(i) = Σ_j kernel(j) · plane(i + j)`; the adjoint of [`convolve_circular`].
pub fn correlate_circular(
    plane: &[f64],
    width: usize,
    height: usize,
    kernel: &Kernel,
) -> Result<Vec<f64>> {
    filter_circular(plane, width, height, kernel, true)
}

fn filter_circular(
    plane: &[f64],
    width: usize,
    height: usize,
    kernel: &Kernel,
    conjugate: bool,
) -> Result<Vec<f64>> {
    check_plane(plane, width, height)?;
    let fft = Fft2d::get(width, height);
    let k = fft.kernel_spectrum(kernel)?;
    let x = fft.forward(plane);
    Ok(fft.inverse_real(multiply_spectra(&x, &k, conjugate)))
}

/// Applies [`convolve_circular`] to every channel.
pub fn convolve_image(image: &Image, kernel: &Kernel) -> Result<Image> {
    let (w, h) = (image.width(), image.height());
    let planes = image
        .planes()
        .map(|p| convolve_circular(p, w, h, kernel))
        .collect::<Result<Vec<_>>>()?;
    Ok(Image::from_planes(w, h, planes))
}

/// Edge-replicating padding margin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PadSpec {
    pub margin: usize,
}

impl PadSpec {
    /// `⌈K/2⌉`, enough to hide wraparound of a `K×K` kernel.
    pub fn for_kernel(side: usize) -> Self {
        Self {
            margin: side.div_ceil(2),
        }
    }
}

pub(crate) fn pad_plane(plane: &[f64], width: usize, height: usize, margin: usize) -> Vec<f64> {
    let pw = width + 2 * margin;
    let ph = height + 2 * margin;
    let mut out = Vec::with_capacity(pw * ph);
    for r in 0..ph {
        let sr = r.saturating_sub(margin).min(height - 1);
        let row = &plane[sr * width..(sr + 1) * width];
        for c in 0..pw {
            out.push(row[c.saturating_sub(margin).min(width - 1)]);
        }
    }
    out
}

pub(crate) fn crop_plane(plane: &[f64], width: usize, height: usize, margin: usize) -> Vec<f64> {
    let cw = width - 2 * margin;
    let mut out = Vec::with_capacity(cw * (height - 2 * margin));
    for r in margin..height - margin {
        out.extend_from_slice(&plane[r * width + margin..r * width + margin + cw]);
    }
    out
}

/// Pads every channel by replicating its border rows and columns.
pub fn pad_edge(image: &Image, margin: usize) -> Image {
    if margin == 0 {
        return image.clone();
    }
    let (w, h) = (image.width(), image.height());
    let planes = image.planes().map(|p| pad_plane(p, w, h, margin)).collect();
    Image::from_planes(w + 2 * margin, h + 2 * margin, planes)
}

/// Removes `margin` pixels from each side.
pub fn crop(image: &Image, margin: usize) -> Result<Image> {
    let (w, h) = (image.width(), image.height());
    if 2 * margin >= w || 2 * margin >= h {
        return Err(Error::CropTooLarge {
            margin,
            height: h,
            width: w,
        });
    }
    let planes = image.planes().map(|p| crop_plane(p, w, h, margin)).collect();
    Ok(Image::from_planes(w - 2 * margin, h - 2 * margin, planes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_plane(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random::<f64>()).collect()
    }

    fn random_kernel(rng: &mut ChaCha8Rng, side: usize, unit: bool) -> Kernel {
        let data = random_plane(rng, side * side);
        let k = Kernel::new(side, data).unwrap();
        if unit {
            k.normalized().unwrap()
        } else {
            k
        }
    }

    /// Direct O(HWK²) periodic convolution.
    fn brute_convolve(plane: &[f64], w: usize, h: usize, k: &Kernel) -> Vec<f64> {
        let c = k.center() as isize;
        let mut out = vec![0.0; w * h];
        for r in 0..h {
            for col in 0..w {
                let mut acc = 0.0;
                for kr in 0..k.side() {
                    for kc in 0..k.side() {
                        let sr = (r as isize - (kr as isize - c)).rem_euclid(h as isize) as usize;
                        let sc = (col as isize - (kc as isize - c)).rem_euclid(w as isize) as usize;
                        acc += k.get(kr, kc) * plane[sr * w + sc];
                    }
                }
                out[r * w + col] = acc;
            }
        }
        out
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_plane(&mut rng, 6 * 5);
        let out = convolve_circular(&p, 6, 5, &Kernel::delta(3).unwrap()).unwrap();
        let corr = correlate_circular(&p, 6, 5, &Kernel::delta(5).unwrap()).unwrap();
        for ((a, b), c) in p.iter().zip(&out).zip(&corr) {
            assert!((a - b).abs() < 1e-14);
            assert!((a - c).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_plane_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k = random_kernel(&mut rng, 5, true);
        let out = convolve_circular(&vec![0.37; 81], 9, 9, &k).unwrap();
        assert!(out.iter().all(|v| (v - 0.37).abs() < 1e-14));
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_plane(&mut rng, 64);
        let k = random_kernel(&mut rng, 3, true);
        let fast = convolve_circular(&p, 8, 8, &k).unwrap();
        let slow = brute_convolve(&p, 8, 8, &k);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn rectangular_plane_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_plane(&mut rng, 12 * 7);
        let k = random_kernel(&mut rng, 7, false);
        let fast = convolve_circular(&p, 12, 7, &k).unwrap();
        let slow = brute_convolve(&p, 12, 7, &k);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn correlate_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_plane(&mut rng, 256);
        let y = random_plane(&mut rng, 256);
        let k = random_kernel(&mut rng, 5, false);
        let cx = convolve_circular(&x, 16, 16, &k).unwrap();
        let cty = correlate_circular(&y, 16, 16, &k).unwrap();
        let lhs: f64 = cx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&cty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() / lhs.abs() < 1e-10);
    }

    #[test]
    fn correlate_equals_convolve_with_flipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_plane(&mut rng, 100);
        let k = random_kernel(&mut rng, 3, false);
        let a = correlate_circular(&x, 10, 10, &k).unwrap();
        let b = brute_convolve(&x, 10, 10, &k.flipped());
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_kernel_self_adjoint() {
        let k = Kernel::new(3, vec![0.05, 0.1, 0.05, 0.1, 0.4, 0.1, 0.05, 0.1, 0.05]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_plane(&mut rng, 49);
        let a = convolve_circular(&x, 7, 7, &k).unwrap();
        let b = correlate_circular(&x, 7, 7, &k).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-14);
        }
    }

    #[test]
    fn oversized_kernel_rejected() {
        let k = Kernel::delta(7).unwrap();
        assert!(matches!(
            convolve_circular(&[0.0; 30], 6, 5, &k),
            Err(Error::KernelTooLarge { kernel: 7, .. })
        ));
        assert!(convolve_circular(&[0.0; 29], 6, 5, &Kernel::delta(3).unwrap()).is_err());
    }

    #[test]
    fn linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_plane(&mut rng, 144);
        let y = random_plane(&mut rng, 144);
        let k = random_kernel(&mut rng, 5, true);
        let (a, b) = (0.7, -1.3);
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let lhs = convolve_circular(&mix, 12, 12, &k).unwrap();
        let cx = convolve_circular(&x, 12, 12, &k).unwrap();
        let cy = convolve_circular(&y, 12, 12, &k).unwrap();
        for i in 0..144 {
            assert!((lhs[i] - (a * cx[i] + b * cy[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn pad_two_by_two() {
        let img = Image::from_plane(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = pad_edge(&img, 1);
        assert_eq!((p.width(), p.height()), (4, 4));
        #[rustfmt::skip]
        let expected = [
            1.0, 1.0, 2.0, 2.0,
            1.0, 1.0, 2.0, 2.0,
            3.0, 3.0, 4.0, 4.0,
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(p.data(), &expected);
        assert_eq!(pad_edge(&img, 0), img);
        assert_eq!(crop(&img, 0).unwrap(), img);
    }

    #[test]
    fn crop_too_large() {
        let img = Image::zeros(4, 6, 1);
        assert!(matches!(crop(&img, 2), Err(Error::CropTooLarge { .. })));
    }

    #[test]
    fn pad_for_kernel_margin() {
        assert_eq!(PadSpec::for_kernel(33).margin, 17);
        assert_eq!(PadSpec::for_kernel(1).margin, 1);
    }
}
