//! Richardson-Lucy deconvolution under a low-rank blur operator.
//!
//! Three update flavours are provided: the classical multiplicative step,
//! the saturation-aware step that splits the latent image into a saturated
//! region `S` and its complement `U`, and a total-variation correction applied
//! to the combined update. [`deblur`] chains them with padding, optional
//! gamma linearization and the reblur-loss stopping rule.

use crate::conv::{crop, pad_edge, PadSpec};
use crate::error::{Error, Result};
use crate::operator::BlurOperator;
use crate::response::{
    gamma_decode, gamma_encode, saturate_deriv_complement, saturate_deriv_value, saturate_value,
};
use crate::types::{BlurField, Image, RLConfig, ResponseParams};

/// Floor applied to `Hû` and `R(Hû)` before dividing.
pub const RATIO_FLOOR: f64 = 1e-12;

/// Solver state between iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct RLState {
    /// Current latent estimate `û^t`, non-negative.
    pub estimate: Image,
    pub iteration: usize,
    pub last_reblur_loss: f64,
    /// Smoothed indicator of the saturated region, in `[0, 1]`.
    pub sat_mask: Image,
    /// 0 where the observation lost information, 1 elsewhere.
    pub z_mask: Image,
}

impl RLState {
    /// Starts from `estimate` with an empty saturated region and `z ≡ 1`.
    pub fn new(estimate: Image) -> Result<Self> {
        if estimate.min_value() < 0.0 {
            return Err(Error::InvalidImage("negative initial estimate".into()));
        }
        let (w, h, c) = (estimate.width(), estimate.height(), estimate.channels());
        Ok(Self {
            estimate,
            iteration: 0,
            last_reblur_loss: f64::INFINITY,
            sat_mask: Image::zeros(w, h, c),
            z_mask: Image::filled(w, h, c, 1.0),
        })
    }

    fn advance(&self, estimate: Image) -> RLState {
        RLState {
            estimate,
            iteration: self.iteration + 1,
            last_reblur_loss: self.last_reblur_loss,
            sat_mask: self.sat_mask.clone(),
            z_mask: self.z_mask.clone(),
        }
    }
}

/// Divides every plane of `mult` by `Hᵀ1`.
fn per_column(mult: Image, op: &BlurOperator) -> Image {
    let sums = op.column_sums();
    let (w, h, c) = (mult.width(), mult.height(), mult.channels());
    let data = mult
        .into_data()
        .chunks_exact(w * h)
        .flat_map(|plane| plane.iter().zip(sums).map(|(m, s)| m / s.max(RATIO_FLOOR)))
        .collect();
    Image::from_parts(w, h, c, data)
}

/// `û^{t+1} = û^t ∘ Hᵀ(v / Hû^t) / Hᵀ1`.
///
/// The division by `Hᵀ1` is a no-op for spatially uniform blur. For a mixed
/// field the columns of `H` do not sum to one and the undivided update drifts
/// away from the fixed point `Hû = v`.
pub fn rl_step_basic(state: &RLState, op: &BlurOperator, v: &Image) -> Result<RLState> {
    state.estimate.check_same_shape(v)?;
    let hu = op.apply(&state.estimate)?;
    let ratio = v.zip_map(&hu, |obs, pred| obs / pred.max(RATIO_FLOOR))?;
    let mult = per_column(op.apply_adjoint(&ratio)?, op);
    let next = state.estimate.zip_map(&mult, |u, m| (u * m).max(0.0))?;
    Ok(state.advance(next))
}

/// Binary mask `estimate ≥ sat_threshold`, Gaussian-smoothed (truncated at
/// 3σ, edge-clamped) and clamped to `[0, 1]`.
pub fn split_saturated(estimate: &Image, params: &ResponseParams, sigma: f64) -> Result<Image> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!("mask sigma must be > 0, got {sigma}")));
    }
    let thr = params.sat_threshold;
    let binary = estimate.map(|v| if v >= thr { 1.0 } else { 0.0 });
    let taps = gaussian_taps(sigma);
    let (w, h) = (estimate.width(), estimate.height());
    let planes = binary
        .planes()
        .map(|p| {
            if p.iter().all(|&v| v == 0.0) {
                return p.to_vec();
            }
            smooth_separable(p, w, h, &taps)
                .into_iter()
                .map(|v| v.clamp(0.0, 1.0))
                .collect()
        })
        .collect();
    Ok(Image::from_planes(w, h, planes))
}

/// Normalized 1-D Gaussian taps over `[−⌈3σ⌉, ⌈3σ⌉]`.
pub(crate) fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

fn smooth_separable(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for row in 0..h {
        for col in 0..w {
            tmp[row * w + col] = taps
                .iter()
                .enumerate()
                .map(|(t, g)| g * plane[row * w + clamp(col as isize + t as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for row in 0..h {
        for col in 0..w {
            out[row * w + col] = taps
                .iter()
                .enumerate()
                .map(|(t, g)| g * tmp[clamp(row as isize + t as isize - r, h) * w + col])
                .sum();
        }
    }
    out
}

/// `z_i = 0` where `v_i ≥ sat_threshold`, 1 elsewhere.
pub fn compute_z_mask(v: &Image, params: &ResponseParams) -> Image {
    let thr = params.sat_threshold;
    v.map(|x| if x >= thr { 0.0 } else { 1.0 })
}

/// Zeros `z` at every pixel whose `side×side` window contains a zero.
pub fn dilate_z_mask(z: &Image, side: usize) -> Image {
    let r = (side / 2) as isize;
    let (w, h) = (z.width(), z.height());
    let planes = z
        .planes()
        .map(|p| {
            let mut out = vec![1.0; w * h];
            for row in 0..h as isize {
                for col in 0..w as isize {
                    let touched = (-r..=r).any(|dy| {
                        (-r..=r).any(|dx| {
                            let (y, x) = (row + dy, col + dx);
                            y >= 0
                                && x >= 0
                                && (y as usize) < h
                                && (x as usize) < w
                                && p[y as usize * w + x as usize] == 0.0
                        })
                    });
                    if touched {
                        out[row as usize * w + col as usize] = 0.0;
                    }
                }
            }
            out
        })
        .collect();
    Image::from_planes(w, h, planes)
}

/// The two multiplicative factors of the saturation-aware update:
/// `Hᵀ(v∘R′∘z / R + 1 − R′∘z)` for `U` and `Hᵀ(v∘R′ / R + 1 − R′)` for `S`,
/// all evaluated at `Hû`.
pub fn saturated_multipliers(
    op: &BlurOperator,
    estimate: &Image,
    v: &Image,
    z: &Image,
    params: &ResponseParams,
) -> Result<(Image, Image)> {
    estimate.check_same_shape(v)?;
    v.check_same_shape(z)?;
    let a = params.a;
    let hu = op.apply(estimate)?;
    let n = hu.data().len();
    let mut ratio_u = Vec::with_capacity(n);
    let mut ratio_s = Vec::with_capacity(n);
    for ((&x, &obs), &zi) in hu.data().iter().zip(v.data()).zip(z.data()) {
        let r = saturate_value(x, a).max(RATIO_FLOOR);
        let rp = saturate_deriv_value(x, a);
        let comp = saturate_deriv_complement(x, a);
        let data = obs * rp / r;
        ratio_u.push(data * zi + (1.0 - zi) + zi * comp);
        ratio_s.push(data + comp);
    }
    let (w, h, c) = (hu.width(), hu.height(), hu.channels());
    let mult_u = op.apply_adjoint(&Image::from_parts(w, h, c, ratio_u))?;
    let mult_s = op.apply_adjoint(&Image::from_parts(w, h, c, ratio_s))?;
    Ok((mult_u, mult_s))
}

/// Saturation-aware step: `û_U` and `û_S` updated separately, then summed.
/// Both multipliers are divided by `Hᵀ1` as in [`rl_step_basic`].
///
/// Uses `state.sat_mask` and `state.z_mask` as they are; refresh the
/// saturated mask from the current estimate before calling.
pub fn rl_step_saturated(
    state: &RLState,
    op: &BlurOperator,
    v: &Image,
    params: &ResponseParams,
) -> Result<RLState> {
    let (mult_u, mult_s) = saturated_multipliers(op, &state.estimate, v, &state.z_mask, params)?;
    let (mult_u, mult_s) = (per_column(mult_u, op), per_column(mult_s, op));
    state.estimate.check_same_shape(&state.sat_mask)?;
    let next: Vec<f64> = state
        .estimate
        .data()
        .iter()
        .zip(state.sat_mask.data())
        .zip(mult_u.data().iter().zip(mult_s.data()))
        .map(|((&u, &s), (&mu, &ms))| {
            let u_sat = s * u;
            let u_unsat = u - u_sat;
            (u_unsat * mu + u_sat * ms).max(0.0)
        })
        .collect();
    let e = &state.estimate;
    Ok(state.advance(Image::from_parts(e.width(), e.height(), e.channels(), next)))
}

/// Gradient of the smoothed total variation,
/// `−div(∇u / max(|∇u|, ε))`, with forward differences (zero past the last
/// row/column) and the matching backward-difference divergence.
pub fn tv_gradient(u: &Image, epsilon: f64) -> Image {
    let (w, h) = (u.width(), u.height());
    let planes = u
        .planes()
        .map(|p| {
            let mut px = vec![0.0; w * h];
            let mut py = vec![0.0; w * h];
            for r in 0..h {
                for c in 0..w {
                    let i = r * w + c;
                    let gx = if c + 1 < w { p[i + 1] - p[i] } else { 0.0 };
                    let gy = if r + 1 < h { p[i + w] - p[i] } else { 0.0 };
                    let norm = (gx * gx + gy * gy).sqrt().max(epsilon);
                    px[i] = gx / norm;
                    py[i] = gy / norm;
                }
            }
            let mut out = vec![0.0; w * h];
            for r in 0..h {
                for c in 0..w {
                    let i = r * w + c;
                    let mut div = 0.0;
                    if c + 1 < w {
                        div += px[i];
                    }
                    if c > 0 {
                        div -= px[i - 1];
                    }
                    if r + 1 < h {
                        div += py[i];
                    }
                    if r > 0 {
                        div -= py[i - w];
                    }
                    out[i] = -div;
                }
            }
            out
        })
        .collect();
    Image::from_planes(w, h, planes)
}

/// `û^{t+1} = û_unreg / max(1 + λ_TV·∇TV(û^t), denom_floor)`.
pub fn rl_regularized_combine(
    u_unreg: &Image,
    u_prev: &Image,
    lambda_tv: f64,
    epsilon: f64,
    denom_floor: f64,
) -> Result<Image> {
    u_unreg.check_same_shape(u_prev)?;
    if !(lambda_tv >= 0.0) {
        return Err(Error::InvalidConfig(format!("lambda_tv must be >= 0, got {lambda_tv}")));
    }
    if lambda_tv == 0.0 {
        return Ok(u_unreg.clone());
    }
    let grad = tv_gradient(u_prev, epsilon);
    u_unreg.zip_map(&grad, |u, g| u / (1.0 + lambda_tv * g).max(denom_floor))
}

/// `Σ_i v̂_i − v_i ln v̂_i`, with `v̂` floored inside the logarithm.
pub fn poisson_nll(v: &Image, v_hat: &Image) -> Result<f64> {
    v.check_same_shape(v_hat)?;
    Ok(v
        .data()
        .iter()
        .zip(v_hat.data())
        .map(|(&obs, &pred)| pred - obs * pred.max(RATIO_FLOOR).ln())
        .sum())
}

/// `‖R(Hû) − v‖²` (or `‖Hû − v‖²` without the saturation model), summed over
/// the observed pixels only: a ring of width `margin` is excluded.
fn reblur_residual(
    op: &BlurOperator,
    estimate: &Image,
    v: &Image,
    params: &ResponseParams,
    saturation: bool,
    margin: usize,
) -> Result<f64> {
    let hu = op.apply(estimate)?;
    let (w, h) = (hu.width(), hu.height());
    let mut total = 0.0;
    for (pred, obs) in hu.planes().zip(v.planes()) {
        for r in margin..h - margin {
            for c in margin..w - margin {
                let x = pred[r * w + c];
                let x = if saturation { saturate_value(x, params.a) } else { x };
                total += (x - obs[r * w + c]).powi(2);
            }
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIterations,
    NoImprovement,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub reblur_loss: f64,
}

#[derive(Debug, Clone)]
pub struct DeblurOutput {
    pub image: Image,
    /// Reblur loss of the initial estimate (iteration 0) and of every
    /// accepted iteration.
    pub log: Vec<IterationRecord>,
    pub stop: StopReason,
}

impl DeblurOutput {
    pub fn iterations(&self) -> usize {
        self.log.last().map_or(0, |r| r.iteration)
    }
}

/// Non-blind Richardson-Lucy deblurring of `v` under `field`.
///
/// The observation is optionally gamma-decoded, padded by `⌈K/2⌉` with edge
/// replication and used as the initial estimate. Iterations stop once the
/// reblur residual fails to decrease (the non-improving iterate is dropped)
/// or after `max_iters`.
pub fn deblur(
    v: &Image,
    field: &BlurField,
    config: &RLConfig,
    params: &ResponseParams,
) -> Result<DeblurOutput> {
    config.validate()?;
    params.validate()?;
    if v.width() != field.width() || v.height() != field.height() {
        return Err(Error::dims(
            format!("{}x{} image", field.width(), field.height()),
            format!("{}x{}", v.width(), v.height()),
        ));
    }
    if v.min_value() < 0.0 || v.max_value() > 1.0 {
        return Err(Error::InvalidImage(format!(
            "observation outside [0, 1]: [{}, {}]",
            v.min_value(),
            v.max_value()
        )));
    }

    let margin = PadSpec::for_kernel(field.side()).margin;
    let padded_display = pad_edge(v, margin);
    let observed = if config.work_in_linear {
        gamma_decode(&padded_display, params.gamma)
    } else {
        padded_display.clone()
    };
    let padded_field = field.padded(margin);
    let op = BlurOperator::new(&padded_field)?;
    let saturation = config.use_saturation_model;

    let mut state = RLState::new(observed.clone())?;
    if saturation {
        let z = compute_z_mask(&padded_display, params);
        state.z_mask = if config.dilate_z {
            dilate_z_mask(&z, field.side())
        } else {
            z
        };
    }
    state.last_reblur_loss = reblur_residual(&op, &state.estimate, &observed, params, saturation, margin)?;
    let mut log = vec![IterationRecord {
        iteration: 0,
        reblur_loss: state.last_reblur_loss,
    }];

    let mut stop = StopReason::MaxIterations;
    for _ in 0..config.max_iters {
        let unreg = if saturation {
            state.sat_mask = split_saturated(&state.estimate, params, config.sat_mask_sigma)?;
            rl_step_saturated(&state, &op, &observed, params)?
        } else {
            rl_step_basic(&state, &op, &observed)?
        };
        let estimate = rl_regularized_combine(
            &unreg.estimate,
            &state.estimate,
            config.lambda_tv,
            config.tv_epsilon,
            config.denom_floor,
        )?
        .map(|x| x.max(0.0));
        let loss = reblur_residual(&op, &estimate, &observed, params, saturation, margin)?;
        if !(loss < state.last_reblur_loss) {
            stop = StopReason::NoImprovement;
            break;
        }
        state = RLState {
            estimate,
            last_reblur_loss: loss,
            ..unreg
        };
        log.push(IterationRecord {
            iteration: state.iteration,
            reblur_loss: loss,
        });
    }

    let cropped = crop(&state.estimate, margin)?;
    let image = if config.work_in_linear {
        gamma_encode(&cropped, params.gamma)
    } else {
        cropped
    };
    Ok(DeblurOutput {
        image: image.map(|x| x.max(0.0)),
        log,
        stop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::apply;
    use crate::testing::{random_field, random_image};
    use crate::types::Kernel;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn box_kernel(side: usize) -> Kernel {
        Kernel::new(side, vec![1.0 / (side * side) as f64; side * side]).unwrap()
    }

    #[test]
    fn identity_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let u = random_image(&mut rng, 8, 8, 1);
        let f = BlurField::identity(8, 8);
        let op = BlurOperator::new(&f).unwrap();
        let next = rl_step_basic(&RLState::new(u.clone()).unwrap(), &op, &u).unwrap();
        for (a, b) in next.estimate.data().iter().zip(u.data()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(next.iteration, 1);
    }

    #[test]
    fn mixed_field_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(39);
        let f = random_field(&mut rng, 20, 16, 3, 5);
        let op = BlurOperator::new(&f).unwrap();
        let u = random_image(&mut rng, 20, 16, 3).map(|x| x + 0.1);
        let v = op.apply(&u).unwrap();
        let sums = op.column_sums();
        assert!(sums.iter().any(|s| (s - 1.0).abs() > 1e-3));
        let next = rl_step_basic(&RLState::new(u.clone()).unwrap(), &op, &v).unwrap();
        for (a, b) in next.estimate.data().iter().zip(u.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_estimate_absorbing() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let f = random_field(&mut rng, 10, 10, 2, 3);
        let op = BlurOperator::new(&f).unwrap();
        let v = random_image(&mut rng, 10, 10, 1);
        let zero = RLState::new(Image::zeros(10, 10, 1)).unwrap();
        let b = rl_step_basic(&zero, &op, &v).unwrap();
        assert!(b.estimate.data().iter().all(|&x| x == 0.0));
        let s = rl_step_saturated(&zero, &op, &v, &ResponseParams::default()).unwrap();
        assert!(s.estimate.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn uniform_blur_nll_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let u = random_image(&mut rng, 16, 16, 1);
        let f = BlurField::uniform(box_kernel(5), 16, 16).unwrap();
        let op = BlurOperator::new(&f).unwrap();
        let v = op.apply(&u).unwrap();
        let mut state = RLState::new(v.clone()).unwrap();
        let err0 = state.estimate.zip_map(&u, |a, b| a - b).unwrap().norm();
        let mut prev = poisson_nll(&v, &op.apply(&state.estimate).unwrap()).unwrap();
        for _ in 0..30 {
            state = rl_step_basic(&state, &op, &v).unwrap();
            let nll = poisson_nll(&v, &op.apply(&state.estimate).unwrap()).unwrap();
            assert!(nll <= prev + 1e-9, "{nll} > {prev}");
            prev = nll;
        }
        let err = state.estimate.zip_map(&u, |a, b| a - b).unwrap().norm();
        assert!(err < err0);
    }

    #[test]
    fn split_dark_and_bright() {
        let p = ResponseParams::default();
        let dark = Image::filled(6, 6, 1, 0.5);
        assert!(split_saturated(&dark, &p, 2.0).unwrap().data().iter().all(|&m| m == 0.0));
        let bright = Image::filled(6, 6, 1, 1.2);
        let m = split_saturated(&bright, &p, 2.0).unwrap();
        assert!(m.data().iter().all(|&m| (m - 1.0).abs() < 1e-12));
        assert!(split_saturated(&dark, &p, 0.0).is_err());
    }

    #[test]
    fn split_single_pixel_gaussian_bump() {
        let p = ResponseParams::default();
        let mut img = Image::zeros(15, 15, 1);
        img.set(0, 7, 7, 1.0);
        let m = split_saturated(&img, &p, 1.0).unwrap();
        // Independent 2-D truncated Gaussian, normalized over its support.
        let mut g = vec![0.0; 49];
        for dy in -3i32..=3 {
            for dx in -3i32..=3 {
                g[((dy + 3) * 7 + dx + 3) as usize] = (-((dx * dx + dy * dy) as f64) / 2.0).exp();
            }
        }
        let s: f64 = g.iter().sum();
        for dy in -3i32..=3 {
            for dx in -3i32..=3 {
                let expected = g[((dy + 3) * 7 + dx + 3) as usize] / s;
                let got = m.get(0, (7 + dy) as usize, (7 + dx) as usize);
                assert!((expected - got).abs() < 1e-14);
            }
        }
        assert!(m.get(0, 7, 7) <= 1.0);
        assert!((m.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn z_mask_threshold() {
        let p = ResponseParams::default();
        assert!(compute_z_mask(&Image::filled(4, 4, 1, 0.98), &p)
            .data()
            .iter()
            .all(|&z| z == 1.0));
        assert!(compute_z_mask(&Image::filled(4, 4, 1, 1.0), &p)
            .data()
            .iter()
            .all(|&z| z == 0.0));
        let checker = Image::from_fn(4, 4, 1, |_, r, c| if (r + c) % 2 == 0 { 0.5 } else { 1.0 })
            .unwrap();
        let z = compute_z_mask(&checker, &p);
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(z.get(0, r, c), if (r + c) % 2 == 0 { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn z_dilation() {
        let mut z = Image::filled(7, 7, 1, 1.0);
        z.set(0, 3, 3, 0.0);
        let d = dilate_z_mask(&z, 3);
        let zeros = d.data().iter().filter(|&&v| v == 0.0).count();
        assert_eq!(zeros, 9);
        assert_eq!(d.get(0, 2, 2), 0.0);
        assert_eq!(d.get(0, 1, 1), 1.0);
    }

    #[test]
    fn fully_saturated_unsaturated_multiplier_is_adjoint_of_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let f = random_field(&mut rng, 12, 12, 3, 5);
        let op = BlurOperator::new(&f).unwrap();
        let u = random_image(&mut rng, 12, 12, 1).map(|x| x + 0.5);
        let v = Image::filled(12, 12, 1, 1.0);
        let params = ResponseParams::default();
        let z = compute_z_mask(&v, &params);
        let (mult_u, _) = saturated_multipliers(&op, &u, &v, &z, &params).unwrap();
        let ones = op.apply_adjoint(&Image::filled(12, 12, 1, 1.0)).unwrap();
        assert_eq!(mult_u, ones);
    }

    #[test]
    fn saturated_step_reduces_to_basic_in_dark_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let f = random_field(&mut rng, 16, 16, 2, 5);
        let op = BlurOperator::new(&f).unwrap();
        let u = random_image(&mut rng, 16, 16, 1).map(|x| 0.05 + 0.4 * x);
        let v = apply(&f, &random_image(&mut rng, 16, 16, 1).map(|x| 0.05 + 0.4 * x)).unwrap();
        let state = RLState::new(u).unwrap();
        let basic = rl_step_basic(&state, &op, &v).unwrap();
        let sat = rl_step_saturated(&state, &op, &v, &ResponseParams::default()).unwrap();
        for (a, b) in basic.estimate.data().iter().zip(sat.estimate.data()) {
            assert!(((a - b) / a).abs() < 1e-6);
        }
    }

    #[test]
    fn tv_gradient_zero_on_constant() {
        let g = tv_gradient(&Image::filled(8, 8, 3, 0.3), 1e-3);
        assert!(g.data().iter().all(|&x| x.abs() < 1e-14));
    }

    #[test]
    fn tv_gradient_ramp_interior_zero() {
        let ramp = Image::from_fn(10, 6, 1, |_, _, c| 0.1 * c as f64).unwrap();
        let g = tv_gradient(&ramp, 1e-3);
        for r in 0..6 {
            for c in 1..9 {
                assert!(g.get(0, r, c).abs() < 1e-12);
            }
        }
    }

    /// Huber-smoothed TV energy whose gradient is `tv_gradient`.
    fn tv_energy(p: &[f64], w: usize, h: usize, eps: f64) -> f64 {
        let mut e = 0.0;
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                let gx = if c + 1 < w { p[i + 1] - p[i] } else { 0.0 };
                let gy = if r + 1 < h { p[i + w] - p[i] } else { 0.0 };
                let n = (gx * gx + gy * gy).sqrt();
                e += if n >= eps { n } else { n * n / (2.0 * eps) + eps / 2.0 };
            }
        }
        e
    }

    #[test]
    fn tv_gradient_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let u = random_image(&mut rng, 8, 8, 1);
        let eps = 1e-3;
        let g = tv_gradient(&u, eps);
        let h = 1e-6;
        for j in 0..64 {
            let mut p = u.data().to_vec();
            p[j] += h;
            let ep = tv_energy(&p, 8, 8, eps);
            p[j] -= 2.0 * h;
            let em = tv_energy(&p, 8, 8, eps);
            let fd = (ep - em) / (2.0 * h);
            let an = g.data()[j];
            assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-3), "{j}: {fd} vs {an}");
        }
    }

    #[test]
    fn combine_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let a = random_image(&mut rng, 8, 8, 1);
        let b = random_image(&mut rng, 8, 8, 1);
        assert_eq!(rl_regularized_combine(&a, &b, 0.0, 1e-3, 1e-3).unwrap(), a);
        let flat = Image::filled(8, 8, 1, 0.4);
        let c = rl_regularized_combine(&a, &flat, 0.5, 1e-3, 1e-3).unwrap();
        for (x, y) in c.data().iter().zip(a.data()) {
            assert!((x - y).abs() < 1e-15);
        }
        let lambda = 0.05;
        let out = rl_regularized_combine(&a, &b, lambda, 1e-3, 1e-3).unwrap();
        let g = tv_gradient(&b, 1e-3);
        for i in 0..64 {
            let expected = a.data()[i] / (1.0 + lambda * g.data()[i]).max(1e-3);
            assert_eq!(out.data()[i], expected);
        }
        assert!(rl_regularized_combine(&a, &b, -1.0, 1e-3, 1e-3).is_err());
    }

    #[test]
    fn combine_floor_applies() {
        let prev = Image::from_plane(2, 1, vec![0.0, 1.0]).unwrap();
        let unreg = Image::from_plane(2, 1, vec![1.0, 1.0]).unwrap();
        let out = rl_regularized_combine(&unreg, &prev, 100.0, 1e-3, 1e-3).unwrap();
        // ∇TV at pixel 0 is −1, so 1 + 100·(−1) is clamped to the floor.
        assert!((out.data()[0] - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn poisson_nll_values() {
        let ones = Image::filled(5, 4, 1, 1.0);
        assert!((poisson_nll(&ones, &ones).unwrap() - 20.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let v = random_image(&mut rng, 6, 6, 1).map(|x| x + 0.1);
        let base = poisson_nll(&v, &v).unwrap();
        for scale in [0.9, 0.99, 1.01, 1.1] {
            assert!(poisson_nll(&v, &v.map(|x| x * scale)).unwrap() > base);
        }
        let vh = random_image(&mut rng, 6, 6, 1);
        let mut oracle = 0.0;
        for i in 0..36 {
            let (a, b) = (v.data()[i], vh.data()[i].max(1e-12));
            oracle += b - a * b.ln();
        }
        assert!((poisson_nll(&v, &vh).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn deblur_identity_returns_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(38);
        let v = random_image(&mut rng, 12, 12, 3).map(|x| 0.05 + 0.8 * x);
        let f = BlurField::identity(12, 12);
        for saturation in [false, true] {
            let config = RLConfig {
                lambda_tv: 0.0,
                use_saturation_model: saturation,
                ..RLConfig::default()
            };
            let out = deblur(&v, &f, &config, &ResponseParams::default()).unwrap();
            for (a, b) in out.image.data().iter().zip(v.data()) {
                assert!((a - b).abs() < 1e-6);
            }
            if !saturation {
                assert_eq!(out.iterations(), 0);
                assert_eq!(out.stop, StopReason::NoImprovement);
            }
        }
    }

    #[test]
    fn deblur_rejects_bad_input() {
        let f = BlurField::identity(4, 4);
        let p = ResponseParams::default();
        let bad = RLConfig {
            max_iters: 0,
            ..RLConfig::default()
        };
        assert!(matches!(
            deblur(&Image::zeros(4, 4, 1), &f, &bad, &p),
            Err(Error::InvalidConfig(_))
        ));
        assert!(deblur(&Image::zeros(5, 4, 1), &f, &RLConfig::default(), &p).is_err());
        assert!(deblur(&Image::filled(4, 4, 1, 1.5), &f, &RLConfig::default(), &p).is_err());
    }

    #[test]
    fn deblur_deterministic_and_log_decreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(39);
        let f = random_field(&mut rng, 24, 24, 3, 5);
        let u = random_image(&mut rng, 24, 24, 1).map(|x| 0.1 + 0.7 * x);
        let v = apply(&f, &u).unwrap();
        let cfg = RLConfig::default();
        let p = ResponseParams::default();
        let a = deblur(&v, &f, &cfg, &p).unwrap();
        let b = deblur(&v, &f, &cfg, &p).unwrap();
        assert_eq!(a.image, b.image);
        for pair in a.log.windows(2) {
            assert!(pair[1].reblur_loss < pair[0].reblur_loss);
        }
    }
}
