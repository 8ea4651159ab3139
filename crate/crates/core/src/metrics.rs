//! Segment-weighted reblur and kernel losses, and PSNR.

use crate::error::{Error, Result};
use crate::operator::{assemble_kernel_at, DenseKernelField};
use crate::types::{BlurField, Image, SegmentLabels};

/// `w_i = 1 / |{j : label_j = label_i}|`.
pub fn segment_weights(labels: &SegmentLabels) -> Vec<f64> {
    let counts = labels.counts();
    labels
        .labels()
        .iter()
        .map(|l| 1.0 / counts[l] as f64)
        .collect()
}

/// Uniform `1/(HW)`, the weights of a single global segment.
pub fn uniform_weights(width: usize, height: usize) -> Vec<f64> {
    vec![1.0 / (width * height) as f64; width * height]
}

fn check_weights(weights: &[f64], pixels: usize) -> Result<()> {
    if weights.len() != pixels {
        return Err(Error::dims(
            format!("{pixels} weights"),
            format!("{}", weights.len()),
        ));
    }
    Ok(())
}

/// `Σ_i w_i (v_i − v^GT_i)²`, summed over channels.
pub fn reblur_loss(v: &Image, v_gt: &Image, weights: &[f64]) -> Result<f64> {
    v.check_same_shape(v_gt)?;
    check_weights(weights, v.pixels())?;
    Ok(v.planes()
        .zip(v_gt.planes())
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .zip(weights)
                .map(|((x, y), w)| w * (x - y) * (x - y))
                .sum::<f64>()
        })
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelNorm {
    L1,
    L2,
}

/// `Σ_i w_i ‖Σ_b m^b_i k^b − k^GT_i‖_p`, norms taken entrywise on the
/// flattened `K×K` difference.
pub fn kernel_loss(
    field: &BlurField,
    gt: &DenseKernelField,
    weights: &[f64],
    norm: KernelNorm,
) -> Result<f64> {
    if field.side() != gt.side() {
        return Err(Error::dims(
            format!("kernel side {}", gt.side()),
            format!("{}", field.side()),
        ));
    }
    if field.width() != gt.width() || field.height() != gt.height() {
        return Err(Error::dims(
            format!("{}x{} kernel field", gt.width(), gt.height()),
            format!("{}x{}", field.width(), field.height()),
        ));
    }
    check_weights(weights, field.width() * field.height())?;
    let mut total = 0.0;
    for row in 0..field.height() {
        for col in 0..field.width() {
            let pixel = row * field.width() + col;
            let pred = assemble_kernel_at(field, row, col)?;
            let diff = pred.iter().zip(gt.kernel(pixel)).map(|(a, b)| a - b);
            let term = match norm {
                KernelNorm::L1 => diff.map(f64::abs).sum::<f64>(),
                KernelNorm::L2 => diff.map(|d| d * d).sum::<f64>().sqrt(),
            };
            total += weights[pixel] * term;
        }
    }
    Ok(total)
}

/// `10·log10(peak² / MSE)`; `+∞` for identical images.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    a.check_same_shape(b)?;
    let n = a.data().len() as f64;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::densify;
    use crate::testing::{random_field, random_image};
    use crate::types::{Kernel, KernelBasis, MixingField};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn weights_examples() {
        let w = segment_weights(&SegmentLabels::uniform(10, 10));
        assert!(w.iter().all(|&x| (x - 0.01).abs() < 1e-15));
        let halves = SegmentLabels::new(10, 10, (0..100).map(|i| (i % 10 >= 5) as u32).collect())
            .unwrap();
        assert!(segment_weights(&halves).iter().all(|&x| (x - 0.02).abs() < 1e-15));
        let mut l = vec![0u32; 100];
        l[42] = 7;
        let w = segment_weights(&SegmentLabels::new(10, 10, l).unwrap());
        assert_eq!(w[42], 1.0);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn reblur_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let v = random_image(&mut rng, 10, 10, 3);
        let w = uniform_weights(10, 10);
        assert_eq!(reblur_loss(&v, &v, &w).unwrap(), 0.0);
        let a = Image::zeros(10, 10, 1);
        let mut b = a.clone();
        b.set(0, 3, 4, 0.5);
        assert!((reblur_loss(&a, &b, &w).unwrap() - 0.0025).abs() < 1e-15);
        let g = random_image(&mut rng, 10, 10, 3);
        let mut oracle = 0.0;
        for c in 0..3 {
            for r in 0..10 {
                for col in 0..10 {
                    let d = v.get(c, r, col) - g.get(c, r, col);
                    oracle += w[r * 10 + col] * d * d;
                }
            }
        }
        assert!((reblur_loss(&v, &g, &w).unwrap() - oracle).abs() < 1e-12);
        assert!(reblur_loss(&v, &Image::zeros(10, 9, 3), &w).is_err());
    }

    #[test]
    fn kernel_loss_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let f = random_field(&mut rng, 6, 5, 3, 5);
        let d = densify(&f).unwrap();
        let w = uniform_weights(6, 5);
        assert_eq!(kernel_loss(&f, &d, &w, KernelNorm::L1).unwrap(), 0.0);
        assert_eq!(kernel_loss(&f, &d, &w, KernelNorm::L2).unwrap(), 0.0);

        let mut a = vec![0.0; 9];
        a[0] = 1.0;
        let pred = BlurField::new(
            KernelBasis::new(vec![Kernel::new(3, a).unwrap()]).unwrap(),
            MixingField::uniform(1, 1),
        )
        .unwrap();
        let gt = densify(&BlurField::uniform(Kernel::delta(3).unwrap(), 1, 1).unwrap()).unwrap();
        assert_eq!(kernel_loss(&pred, &gt, &[0.25], KernelNorm::L1).unwrap(), 0.5);
        assert!((kernel_loss(&pred, &gt, &[1.0], KernelNorm::L2).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(kernel_loss(&f, &gt, &w, KernelNorm::L1).is_err());
    }

    #[test]
    fn psnr_examples() {
        let a = Image::filled(4, 4, 1, 0.5);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        let b = Image::filled(4, 4, 1, 0.6);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
        let c = Image::filled(4, 4, 1, 1.5);
        assert!(psnr(&a, &c, 1.0).unwrap().abs() < 1e-12);
    }
}
