//! Camera response: smooth sensor saturation `R(v) = v − log(1 + e^{a(v−1)})/a`,
//! its derivative, gamma encoding, and the full capture model
//! `v = R((Hu + n)^{1/γ})`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::operator::apply;
use crate::types::{BlurField, Image, ResponseParams};

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic `1 / (1 + e^{−x})` without overflow.
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn saturate_value(v: f64, a: f64) -> f64 {
    let x = a * (v - 1.0);
    if x > 0.0 {
        // v − x/a is exactly 1; keep the cancellation out of the arithmetic.
        1.0 - (-x).exp().ln_1p() / a
    } else {
        v - softplus(x) / a
    }
}

/// `R′(v) = 1 / (1 + e^{a(v−1)})`.
pub fn saturate_deriv_value(v: f64, a: f64) -> f64 {
    sigmoid(-a * (v - 1.0))
}

/// `1 − R′(v)`, evaluated directly so it stays accurate where `R′ → 1`.
pub fn saturate_deriv_complement(v: f64, a: f64) -> f64 {
    sigmoid(a * (v - 1.0))
}

pub fn saturate(v: &Image, params: &ResponseParams) -> Image {
    v.map(|x| saturate_value(x, params.a))
}

pub fn saturate_deriv(v: &Image, params: &ResponseParams) -> Image {
    v.map(|x| saturate_deriv_value(x, params.a))
}

/// `x^{1/γ}`, negatives clamped to zero.
pub fn gamma_encode(u: &Image, gamma: f64) -> Image {
    let inv = 1.0 / gamma;
    u.map(|x| x.max(0.0).powf(inv))
}

/// `x^γ`, negatives clamped to zero.
pub fn gamma_decode(v: &Image, gamma: f64) -> Image {
    v.map(|x| x.max(0.0).powf(gamma))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseMode {
    /// Smooth saturation `R`.
    Smooth,
    /// Hard clip to `[0, 1]`.
    HardClip,
}

/// Simulates a capture: blur, additive Gaussian noise in linear space,
/// gamma encoding and saturation.
pub fn forward_capture(
    field: &BlurField,
    u: &Image,
    noise_sigma: f64,
    params: &ResponseParams,
    mode: ResponseMode,
    rng: &mut impl Rng,
) -> Result<Image> {
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "noise sigma must be >= 0, got {noise_sigma}"
        )));
    }
    let mut blurred = apply(field, u)?;
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).expect("finite sigma");
        let noisy: Vec<f64> = blurred
            .data()
            .iter()
            .map(|&v| v + normal.sample(rng))
            .collect();
        blurred = Image::from_parts(blurred.width(), blurred.height(), blurred.channels(), noisy);
    }
    let encoded = gamma_encode(&blurred, params.gamma);
    Ok(match mode {
        ResponseMode::Smooth => saturate(&encoded, params),
        ResponseMode::HardClip => encoded.clamp(0.0, 1.0),
    })
}
